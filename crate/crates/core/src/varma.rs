//! VARMA(p, q) simulation and the four synthetic benchmark panels.
//!
//! `Z_t = Σ_i Φ_i Z_{t−i} + Γ_t − Σ_j Θ_j Γ_{t−j}`, `Γ_t ~ N(0, Σ)`, started
//! from zero pre-sample values with a discarded burn-in.

use chrono::NaiveDate;
use nalgebra::linalg::Schur;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::panel::{Series, TimeSeriesPanel};

pub const DEFAULT_BURN_IN: usize = 200;
/// Spectral radius bound enforced on sampled AR coefficients.
pub const STATIONARITY_BOUND: f64 = 0.95;
/// Rejection-sampling budget for one coefficient draw. A 6-dim VAR(3) with
/// U(−0.5, 0.5) entries lands inside the bound roughly once per thousand
/// draws, so the budget is far above that.
pub const MAX_STATIONARITY_ATTEMPTS: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct VarmaSpec {
    pub dim: usize,
    pub phi: Vec<Matrix>,
    pub theta: Vec<Matrix>,
    pub sigma: Matrix,
    pub burn_in: usize,
}

impl VarmaSpec {
    pub fn p(&self) -> usize {
        self.phi.len()
    }

    pub fn q(&self) -> usize {
        self.theta.len()
    }

    /// `Φ=Θ=0`, `Σ=I`.
    pub fn white_noise(dim: usize) -> Self {
        Self {
            dim,
            phi: Vec::new(),
            theta: Vec::new(),
            sigma: Matrix::identity(dim),
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn spectral_radius(&self) -> f64 {
        companion_spectral_radius(&self.phi)
    }
}

const SCHUR_MAX_ITERATIONS: usize = 10_000;

/// Largest eigenvalue modulus of the stacked-lag companion matrix, or
/// infinity when the eigenvalue iteration fails to converge.
pub fn companion_spectral_radius(phi: &[Matrix]) -> f64 {
    let Some(first) = phi.first() else {
        return 0.0;
    };
    let d = first.rows();
    let n = d * phi.len();
    let mut c = DMatrix::<f64>::zeros(n, n);
    for (l, m) in phi.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                c[(i, l * d + j)] = m.get(i, j);
            }
        }
    }
    for i in d..n {
        c[(i, i - d)] = 1.0;
    }
    // The unbounded Schur iteration can cycle forever on rare inputs, so it
    // is capped; the transpose has the same spectrum and usually converges
    // when the original does not. If neither does, report it as explosive.
    let radius = |m: DMatrix<f64>| {
        Schur::try_new(m, f64::EPSILON, SCHUR_MAX_ITERATIONS)
            .map(|s| s.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
    };
    radius(c.clone())
        .or_else(|| radius(c.transpose()))
        .unwrap_or(f64::INFINITY)
}

/// Equicorrelated noise covariance: 2 on the diagonal, 0.7 elsewhere.
pub fn default_sigma(dim: usize) -> Matrix {
    let mut s = Matrix::filled(dim, dim, 0.7);
    for i in 0..dim {
        s.set(i, i, 2.0);
    }
    s
}

pub fn sample_coefficients<R: Rng + ?Sized>(dim: usize, p: usize, q: usize, rng: &mut R) -> Result<VarmaSpec> {
    sample_coefficients_with(dim, p, q, MAX_STATIONARITY_ATTEMPTS, rng)
}

/// Φ entries and Θ diagonals from U(−0.5, 0.5); Φ is redrawn until the
/// companion spectral radius is below [`STATIONARITY_BOUND`].
pub fn sample_coefficients_with<R: Rng + ?Sized>(
    dim: usize,
    p: usize,
    q: usize,
    max_attempts: usize,
    rng: &mut R,
) -> Result<VarmaSpec> {
    if dim == 0 || p == 0 || q == 0 {
        return Err(Error::contract("dim, p and q must all be >= 1"));
    }
    let uniform = |rng: &mut R| rng.random_range(-0.5..0.5);
    let mut phi = None;
    for _ in 0..max_attempts {
        let cand: Vec<Matrix> = (0..p)
            .map(|_| Matrix::new(dim, dim, (0..dim * dim).map(|_| uniform(rng)).collect()).unwrap())
            .collect();
        if companion_spectral_radius(&cand) < STATIONARITY_BOUND {
            phi = Some(cand);
            break;
        }
    }
    let phi = phi.ok_or_else(|| {
        Error::Generation(format!(
            "no stationary VAR({p}) coefficients for dim {dim} in {max_attempts} attempts"
        ))
    })?;
    let theta = (0..q)
        .map(|_| {
            let mut m = Matrix::zeros(dim, dim);
            for i in 0..dim {
                m.set(i, i, uniform(rng));
            }
            m
        })
        .collect();
    Ok(VarmaSpec {
        dim,
        phi,
        theta,
        sigma: default_sigma(dim),
        burn_in: DEFAULT_BURN_IN,
    })
}

/// `t_len x dim` sample path after discarding `spec.burn_in` steps.
pub fn simulate_varma<R: Rng + ?Sized>(spec: &VarmaSpec, t_len: usize, rng: &mut R) -> Result<Matrix> {
    if t_len == 0 {
        return Err(Error::contract("simulation length must be >= 1"));
    }
    let d = spec.dim;
    if spec.sigma.shape() != (d, d) || spec.phi.iter().chain(&spec.theta).any(|m| m.shape() != (d, d)) {
        return Err(Error::contract("coefficient shapes do not match the process dimension"));
    }
    let chol = spec.sigma.cholesky()?;
    let total = spec.burn_in + t_len;
    let mut z = vec![vec![0.0; d]; total];
    let mut gamma = vec![vec![0.0; d]; total];
    for t in 0..total {
        let e: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..d {
            gamma[t][i] = (0..=i).map(|k| chol.get(i, k) * e[k]).sum();
        }
        let mut next = gamma[t].clone();
        for (l, phi) in spec.phi.iter().enumerate() {
            if t > l {
                let past = &z[t - l - 1];
                for (i, v) in next.iter_mut().enumerate() {
                    *v += (0..d).map(|k| phi.get(i, k) * past[k]).sum::<f64>();
                }
            }
        }
        for (l, theta) in spec.theta.iter().enumerate() {
            if t > l {
                let past = &gamma[t - l - 1];
                for (i, v) in next.iter_mut().enumerate() {
                    *v -= (0..d).map(|k| theta.get(i, k) * past[k]).sum::<f64>();
                }
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("simulated path diverged at step {t}")));
        }
        z[t] = next;
    }
    let data = z[spec.burn_in..].iter().flatten().copied().collect();
    Matrix::new(t_len, d, data)
}

/// One row of the benchmark design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimCase {
    pub case_id: u8,
    pub n_obs: usize,
    pub n_mts: usize,
    pub n_exog: usize,
    pub n_noise_exog: usize,
    pub targets_correlated: bool,
}

impl SimCase {
    pub fn new(case_id: u8) -> Result<Self> {
        let (n_obs, n_noise_exog, targets_correlated) = match case_id {
            1 => (100, 0, true),
            2 => (1000, 0, true),
            3 => (100, 5, true),
            4 => (100, 5, false),
            _ => return Err(Error::Config(format!("unknown simulation case {case_id}; expected 1-4"))),
        };
        Ok(Self {
            case_id,
            n_obs,
            n_mts: 4,
            n_exog: 5,
            n_noise_exog,
            targets_correlated,
        })
    }

    /// Same design with a different number of observations.
    pub fn with_obs(self, n_obs: usize) -> Self {
        Self { n_obs, ..self }
    }
}

const ORDER: usize = 3;

/// Builds the panel of one simulation case from `rng`.
pub fn compose_case<R: Rng + ?Sized>(case: &SimCase, rng: &mut R) -> Result<TimeSeriesPanel> {
    if case.n_obs == 0 || case.n_mts == 0 {
        return Err(Error::contract("simulation case needs observations and series"));
    }
    let dim = 1 + case.n_exog;
    let mut series = Vec::with_capacity(case.n_mts);
    for s in 0..case.n_mts {
        let spec = sample_coefficients(dim, ORDER, ORDER, rng)?;
        let path = simulate_varma(&spec, case.n_obs, rng)?;
        let target = (0..case.n_obs).map(|t| path.get(t, 0)).collect();
        let exog = (1..dim)
            .map(|c| (0..case.n_obs).map(|t| path.get(t, c)).collect())
            .collect();
        series.push(Series {
            id: format!("region{}", s + 1),
            target,
            exog,
        });
    }
    if case.targets_correlated {
        let spec = sample_coefficients(case.n_mts, ORDER, ORDER, rng)?;
        let spatial = simulate_varma(&spec, case.n_obs, rng)?;
        for (s, ser) in series.iter_mut().enumerate() {
            for (t, y) in ser.target.iter_mut().enumerate() {
                *y += spatial.get(t, s);
            }
        }
    }
    for ser in series.iter_mut() {
        for _ in 0..case.n_noise_exog {
            ser.exog.push((0..case.n_obs).map(|_| rng.sample(StandardNormal)).collect());
        }
    }
    let mut names: Vec<String> = (1..=case.n_exog).map(|c| format!("x{c}")).collect();
    names.extend((1..=case.n_noise_exog).map(|c| format!("noise{c}")));
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let dates = (0..case.n_obs)
        .map(|i| start + chrono::Months::new(i as u32))
        .collect();
    TimeSeriesPanel::new(dates, names, series)
}

/// The panel for `case` as a pure function of `seed`.
pub fn simulate_case(case: &SimCase, seed: u64) -> Result<TimeSeriesPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    compose_case(case, &mut rng)
}
