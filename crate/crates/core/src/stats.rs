//! Forecast scoring, repeated experiments and rank-based model comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

fn check_pair(pred: &[f64], actual: &[f64]) -> Result<()> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(Error::contract(format!(
            "prediction and actual lengths must match and be non-zero ({} vs {})",
            pred.len(),
            actual.len()
        )));
    }
    Ok(())
}

pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn mse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    Ok(mse(pred, actual)?.sqrt())
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`.
fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (1.0 - sum * log_prefix.exp()).clamp(0.0, 1.0)
    } else {
        // modified Lentz continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (h * log_prefix.exp()).clamp(0.0, 1.0)
    }
}

/// Upper tail `P(X > x)` of a chi-squared variable with `df` degrees of freedom.
pub fn chi_squared_sf(x: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::contract("chi-squared needs df >= 1"));
    }
    if !(x >= 0.0) {
        return Err(Error::contract(format!("chi-squared argument {x} must be >= 0")));
    }
    Ok(gamma_q(df as f64 / 2.0, x / 2.0))
}

/// Upper tail of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    // erfc(t) = Q(1/2, t²) for t ≥ 0
    let t = z / std::f64::consts::SQRT_2;
    if t >= 0.0 {
        0.5 * gamma_q(0.5, t * t)
    } else {
        1.0 - 0.5 * gamma_q(0.5, t * t)
    }
}

/// Ranks starting at 1 with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Rows are datasets (series), columns methods; lower values are better.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<String>,
    pub methods: Vec<String>,
    /// `values[row][method]`; `None` marks a missing cell.
    pub values: Vec<Vec<Option<f64>>>,
}

impl ScoreTable {
    pub fn new(rows: Vec<String>, methods: Vec<String>, values: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if values.len() != rows.len() || values.iter().any(|r| r.len() != methods.len()) {
            return Err(Error::contract("score table shape does not match its labels"));
        }
        Ok(Self { rows, methods, values })
    }

    pub fn filled(rows: Vec<String>, methods: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let values = values.into_iter().map(|r| r.into_iter().map(Some).collect()).collect();
        Self::new(rows, methods, values)
    }

    pub fn get(&self, row: usize, method: usize) -> Option<f64> {
        self.values[row][method]
    }

    pub fn method_index(&self, name: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == name)
    }

    /// Column of a method; `None` if it is unknown or has a missing cell.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let m = self.method_index(name)?;
        self.values.iter().map(|r| r[m]).collect()
    }

    /// All values, or a contract error if any cell is missing.
    pub fn complete(&self) -> Result<Vec<Vec<f64>>> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        v.ok_or_else(|| {
                            Error::contract(format!("missing score for {} / {}", self.rows[i], self.methods[j]))
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// CSV with a `series` label column; missing cells are empty.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![String::from("series")];
        header.extend(self.methods.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.rows.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Ingest {
                row: 1,
                message: "score table needs a label column and at least one method".into(),
            });
        }
        let methods: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() != header.len() {
                return Err(Error::Ingest {
                    row: line,
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            rows.push(rec[0].trim().to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|cell| {
                    let cell = cell.trim();
                    if cell.is_empty() {
                        return Ok(None);
                    }
                    cell.parse::<f64>().map(Some).map_err(|_| Error::Ingest {
                        row: line,
                        message: format!("unparseable score `{cell}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        Self::new(rows, methods, values)
    }

    /// Cell-wise aggregate over same-shaped tables, ignoring missing cells.
    /// A cell missing in every table stays missing.
    pub fn aggregate(tables: &[ScoreTable], how: Aggregate) -> Result<ScoreTable> {
        let first = tables.first().ok_or_else(|| Error::contract("nothing to aggregate"))?;
        if tables.iter().any(|t| t.rows != first.rows || t.methods != first.methods) {
            return Err(Error::contract("tables to aggregate have different layouts"));
        }
        let mut values = vec![vec![None; first.methods.len()]; first.rows.len()];
        for (i, row) in values.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let mut xs: Vec<f64> = tables.iter().filter_map(|t| t.values[i][j]).collect();
                if xs.is_empty() {
                    log::warn!("no successful repetition for {} / {}", first.rows[i], first.methods[j]);
                    continue;
                }
                *cell = Some(match how {
                    Aggregate::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
                    Aggregate::Median => median(&mut xs),
                });
            }
        }
        Self::new(first.rows.clone(), first.methods.clone(), values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Mean,
    Median,
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Friedman,
    Wilcoxon,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// H1: `a` scores lower (better) than `b`.
    #[default]
    ABetter,
    TwoSided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    /// Plain statement of the alternative hypothesis.
    pub hypothesis: String,
    /// Friedman: average rank per method (in column order).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub average_ranks: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<bool>,
}

/// Friedman rank test over the rows of a complete score table.
pub fn friedman(table: &ScoreTable) -> Result<TestResult> {
    let values = table.complete()?;
    let d = values.len();
    let k = table.methods.len();
    if d < 2 || k < 2 {
        return Err(Error::contract(format!("friedman needs at least 2 rows and 2 methods, got {d} x {k}")));
    }
    let mut ar = vec![0.0; k];
    for row in &values {
        for (j, r) in average_ranks(row).into_iter().enumerate() {
            ar[j] += r;
        }
    }
    for a in ar.iter_mut() {
        *a /= d as f64;
    }
    let kf = k as f64;
    let sum_sq: f64 = ar.iter().map(|a| a * a).sum();
    let stat = (12.0 * d as f64 / (kf * (kf + 1.0))) * (sum_sq - kf * (kf + 1.0) * (kf + 1.0) / 4.0);
    // rounding can leave a tiny negative value when all ranks are equal
    let stat = if stat.abs() < 1e-12 { 0.0 } else { stat };
    Ok(TestResult {
        method: TestKind::Friedman,
        statistic: stat,
        p_value: chi_squared_sf(stat.max(0.0), k - 1)?,
        n: d,
        hypothesis: "H1: at least one method has a different average rank (rows are series)".into(),
        average_ranks: Some(ar),
        exact: None,
    })
}

/// Largest `n` handled by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 20;

/// Signed ranks of the nonzero differences `a − b`.
fn signed_ranks(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
    if a.len() != b.len() {
        return Err(Error::contract("paired samples must have equal lengths"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::Degenerate("every paired difference is zero".into()));
    }
    if diffs.len() < 5 {
        return Err(Error::contract(format!(
            "wilcoxon needs at least 5 nonzero differences, got {}",
            diffs.len()
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    Ok((average_ranks(&abs), diffs.iter().map(|d| *d > 0.0).collect()))
}

/// `P(W+ <= w_plus)` under the null by dynamic programming over the
/// (doubled, hence integral) ranks: every sign pattern is equally likely.
pub fn wilcoxon_exact_lower(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w_plus).round() as usize;
    let hits: f64 = counts.iter().take(limit + 1).sum();
    hits / 2f64.powi(ranks.len() as i32)
}

/// `P(W+ <= w_plus)` from the normal approximation with continuity and
/// tie corrections.
pub fn wilcoxon_normal_lower(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        var -= (t * t * t - t) / 48.0;
        i = j + 1;
    }
    let z = (w_plus + 0.5 - mean) / var.sqrt();
    1.0 - normal_sf(z)
}

/// Paired signed-rank test on `a` and `b` (lower is better).
///
/// The reported statistic is `min(W+, W−)`; the p-value comes from exact
/// enumeration up to [`WILCOXON_EXACT_MAX`] nonzero pairs and from the
/// normal approximation beyond.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult> {
    let (ranks, positive) = signed_ranks(a, b)?;
    let n = ranks.len();
    let w_plus: f64 = ranks.iter().zip(&positive).filter(|(_, p)| **p).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let exact = n <= WILCOXON_EXACT_MAX;
    let lower = |w: f64| {
        if exact {
            wilcoxon_exact_lower(&ranks, w)
        } else {
            wilcoxon_normal_lower(&ranks, w)
        }
    };
    let (p, hypothesis) = match alternative {
        // a better means a − b tends to be negative, i.e. small W+
        Alternative::ABetter => (lower(w_plus), "H1: a better than b (a scores lower)"),
        Alternative::TwoSided => ((2.0 * lower(w_plus.min(w_minus))).min(1.0), "H1: a and b differ"),
    };
    Ok(TestResult {
        method: TestKind::Wilcoxon,
        statistic: w_plus.min(w_minus),
        p_value: p.clamp(0.0, 1.0),
        n,
        hypothesis: hypothesis.into(),
        average_ranks: None,
        exact: Some(exact),
    })
}

/// Scores of one repetition: per method either `[metric][row]` values or
/// the reason the method failed.
pub type RepScores = Vec<std::result::Result<Vec<Vec<f64>>, String>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub rep: usize,
    pub method: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub metrics: Vec<String>,
    /// `per_rep[rep][metric]`.
    pub per_rep: Vec<Vec<ScoreTable>>,
    pub failures: Vec<Failure>,
}

impl ExperimentResult {
    /// One aggregated table per metric.
    pub fn summary(&self, how: Aggregate) -> Result<Vec<ScoreTable>> {
        (0..self.metrics.len())
            .map(|m| {
                let tables: Vec<ScoreTable> = self.per_rep.iter().map(|r| r[m].clone()).collect();
                ScoreTable::aggregate(&tables, how)
            })
            .collect()
    }
}

/// Runs `run(rep, seed)` for every repetition, in parallel, with
/// `seed = derive_seed(master_seed, [rep])`, and merges results in
/// repetition order. A failing method only blanks its own cells.
pub fn repeated_experiment<F>(
    master_seed: u64,
    reps: usize,
    rows: &[String],
    methods: &[String],
    metrics: &[String],
    run: F,
) -> Result<ExperimentResult>
where
    F: Fn(usize, u64) -> Result<RepScores> + Sync,
{
    if reps == 0 {
        return Err(Error::contract("at least one repetition is required"));
    }
    let outcomes: Vec<Result<RepScores>> = (0..reps)
        .into_par_iter()
        .map(|rep| run(rep, derive_seed(master_seed, &[rep as u64])))
        .collect();
    let mut per_rep = Vec::with_capacity(reps);
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        let scores = match outcome {
            Ok(s) if s.len() == methods.len() => s,
            Ok(_) => return Err(Error::contract("repetition returned the wrong number of methods")),
            Err(e) => methods.iter().map(|_| Err(e.to_string())).collect(),
        };
        let mut tables: Vec<Vec<Vec<Option<f64>>>> = vec![vec![vec![None; methods.len()]; rows.len()]; metrics.len()];
        for (j, s) in scores.into_iter().enumerate() {
            match s {
                Ok(values) => {
                    if values.len() != metrics.len() || values.iter().any(|v| v.len() != rows.len()) {
                        return Err(Error::contract("repetition scores have the wrong shape"));
                    }
                    for (m, v) in values.into_iter().enumerate() {
                        for (i, x) in v.into_iter().enumerate() {
                            tables[m][i][j] = Some(x);
                        }
                    }
                }
                Err(message) => {
                    log::warn!("repetition {rep}: method {} failed: {message}", methods[j]);
                    failures.push(Failure {
                        rep,
                        method: methods[j].clone(),
                        message,
                    });
                }
            }
        }
        per_rep.push(
            tables
                .into_iter()
                .map(|v| ScoreTable::new(rows.to_vec(), methods.to_vec(), v))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(ExperimentResult {
        metrics: metrics.to_vec(),
        per_rep,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `P(W+ <= w)` by listing all 2ⁿ sign patterns.
    fn enumerate_lower(ranks: &[f64], w: f64) -> f64 {
        let n = ranks.len();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if s <= w + 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn metric_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mae(&[1.5, 2.5, 2.5], &[1.0, 2.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn rmse_identities() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let n = r.random_range(1..30);
            let p: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
            let a: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
            let e = rmse(&p, &a).unwrap();
            assert!(e >= mae(&p, &a).unwrap() - 1e-12);
            let sse: f64 = p.iter().zip(&a).map(|(x, y)| (x - y) * (x - y)).sum();
            assert!((e * e * n as f64 - sse).abs() < 1e-10);
        }
    }

    #[test]
    fn chi_squared_closed_forms() {
        for df in 1..6 {
            assert_eq!(chi_squared_sf(0.0, df).unwrap(), 1.0);
        }
        assert!((chi_squared_sf(2.0 * 2f64.ln(), 2).unwrap() - 0.5).abs() < 1e-12);
        for i in 0..200 {
            let x = i as f64 * 0.37;
            assert!((chi_squared_sf(x, 2).unwrap() - (-x / 2.0).exp()).abs() < 1e-10);
        }
        let mut prev = 1.0;
        for i in 1..300 {
            let s = chi_squared_sf(i as f64 * 0.2, 5).unwrap();
            assert!(s <= prev);
            prev = s;
        }
        assert!(chi_squared_sf(1.0, 0).is_err());
        assert!(chi_squared_sf(-1.0, 2).is_err());
    }

    #[test]
    fn chi_squared_matches_reference_library() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        for df in [1usize, 2, 3, 7, 15, 40] {
            let d = ChiSquared::new(df as f64).unwrap();
            for i in 0..60 {
                let x = i as f64 * 1.3;
                let a = chi_squared_sf(x, df).unwrap();
                let b = d.sf(x);
                assert!((a - b).abs() < 1e-10, "df {df} x {x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn normal_tail_matches_reference_library() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let d = Normal::new(0.0, 1.0).unwrap();
        for i in -80..80 {
            let z = i as f64 * 0.1;
            assert!((normal_sf(z) - d.sf(z)).abs() < 1e-10, "{z}: {} vs {}", normal_sf(z), d.sf(z));
        }
        assert!((normal_sf(-2.0) - 0.977_249_868_051_820_8).abs() < 1e-15);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(average_ranks(&[1.0, 1.0, 2.0, 0.5]), vec![2.5, 2.5, 4.0, 1.0]);
    }

    fn table(values: Vec<Vec<f64>>) -> ScoreTable {
        let rows = (0..values.len()).map(|i| format!("r{i}")).collect();
        let methods = (0..values[0].len()).map(|j| format!("m{j}")).collect();
        ScoreTable::filled(rows, methods, values).unwrap()
    }

    #[test]
    fn friedman_examples() {
        let t = table(vec![vec![0.1, 0.5, 0.9], vec![1.0, 2.0, 3.0], vec![0.0, 0.2, 0.3]]);
        let r = friedman(&t).unwrap();
        assert_eq!(r.statistic, 6.0);
        assert_eq!(r.average_ranks.clone().unwrap(), vec![1.0, 2.0, 3.0]);
        assert!((r.p_value - (-3.0f64).exp()).abs() < 1e-12);

        let same = table(vec![vec![0.4; 4]; 5]);
        let r = friedman(&same).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        assert!(friedman(&table(vec![vec![1.0, 2.0]])).is_err());
        let mut missing = t.clone();
        missing.values[0][1] = None;
        assert!(friedman(&missing).is_err());
    }

    #[test]
    fn friedman_ignores_row_order() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<Vec<f64>> = (0..7).map(|_| (0..4).map(|_| r.random_range(0.0..1.0)).collect()).collect();
        let mut rev = vals.clone();
        rev.reverse();
        assert_eq!(friedman(&table(vals)).unwrap().statistic, friedman(&table(rev)).unwrap().statistic);
    }

    #[test]
    fn friedman_with_two_methods_follows_the_sign_pattern() {
        let mut r = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let d = r.random_range(2..15);
            let vals: Vec<Vec<f64>> = (0..d)
                .map(|_| vec![r.random_range(0.0..1.0), r.random_range(0.0..1.0)])
                .collect();
            let wins = vals.iter().filter(|v| v[0] < v[1]).count() as f64;
            let losses = d as f64 - wins;
            let stat = friedman(&table(vals)).unwrap().statistic;
            // k = 2: χ² = (wins − losses)² / D
            assert!((stat - (wins - losses).powi(2) / d as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn wilcoxon_hand_example() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [1.5, 2.7, 3.1, 4.9, 5.2];
        let r = wilcoxon_signed_rank(&a, &b, Alternative::ABetter).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0 / 32.0);
        let r = wilcoxon_signed_rank(&b, &a, Alternative::ABetter).unwrap();
        assert_eq!(r.p_value, 1.0);
        let r = wilcoxon_signed_rank(&a, &b, Alternative::TwoSided).unwrap();
        assert_eq!(r.p_value, 1.0 / 16.0);
    }

    #[test]
    fn wilcoxon_input_errors() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(matches!(wilcoxon_signed_rank(&a, &a, Alternative::ABetter), Err(Error::Degenerate(_))));
        assert!(matches!(
            wilcoxon_signed_rank(&a[..4], &[0.0; 4], Alternative::ABetter),
            Err(Error::Contract(_))
        ));
        assert!(wilcoxon_signed_rank(&a, &[0.0; 4], Alternative::ABetter).is_err());
    }

    #[test]
    fn exact_distribution_matches_enumeration() {
        let mut r = ChaCha8Rng::seed_from_u64(77);
        for n in 5..=12 {
            for _ in 0..20 {
                // integer differences produce ties in |d|
                let d: Vec<f64> = (0..n)
                    .map(|_| {
                        let v = r.random_range(1..6) as f64;
                        if r.random_bool(0.5) { v } else { -v }
                    })
                    .collect();
                let zeros = vec![0.0; n];
                let res = wilcoxon_signed_rank(&d, &zeros, Alternative::ABetter).unwrap();
                let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
                let ranks = average_ranks(&abs);
                let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, x)| **x > 0.0).map(|(r, _)| r).sum();
                assert_eq!(res.p_value, enumerate_lower(&ranks, w_plus), "n {n}");
            }
        }
    }

    #[test]
    fn normal_approximation_is_close_at_twenty() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let shift = r.random_range(-0.5..0.5);
            let d: Vec<f64> = (0..20).map(|_| r.random_range(-1.0..1.0) + shift).collect();
            let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
            let ranks = average_ranks(&abs);
            let w: f64 = ranks.iter().zip(&d).filter(|(_, x)| **x > 0.0).map(|(r, _)| r).sum();
            let exact = wilcoxon_exact_lower(&ranks, w);
            let approx = wilcoxon_normal_lower(&ranks, w);
            assert!((exact - approx).abs() < 0.02, "{exact} vs {approx}");
        }
    }

    #[test]
    fn large_samples_use_the_approximation() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64 + 0.5 + (i % 3) as f64).collect();
        let r = wilcoxon_signed_rank(&a, &b, Alternative::ABetter).unwrap();
        assert_eq!(r.exact, Some(false));
        assert!(r.p_value < 1e-5);
    }

    #[test]
    fn score_table_csv_round_trip() {
        let mut t = table(vec![vec![0.25, 1.0 / 3.0], vec![2.0, 1e-17]]);
        t.values[1][0] = None;
        let text = t.to_csv_string().unwrap();
        assert!(text.starts_with("series,m0,m1\n"));
        assert_eq!(ScoreTable::from_csv(text.as_bytes()).unwrap(), t);
        assert!(ScoreTable::from_csv("series,a\nx,oops\n".as_bytes()).is_err());
    }

    #[test]
    fn aggregation() {
        let a = table(vec![vec![1.0, 2.0]]);
        let b = table(vec![vec![3.0, 2.0]]);
        let mut c = table(vec![vec![8.0, 2.0]]);
        c.values[0][1] = None;
        let mean = ScoreTable::aggregate(&[a.clone(), b.clone(), c.clone()], Aggregate::Mean).unwrap();
        assert_eq!(mean.values, vec![vec![Some(4.0), Some(2.0)]]);
        let med = ScoreTable::aggregate(&[a, b, c], Aggregate::Median).unwrap();
        assert_eq!(med.values, vec![vec![Some(3.0), Some(2.0)]]);
    }

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn repeated_experiment_behaviour() {
        let rows = names("s", 2);
        let methods = names("m", 2);
        let metrics = vec!["rmse".to_string()];
        // method 0 is constant, method 1 depends on the seed and fails on rep 1
        let run = |rep: usize, seed: u64| -> Result<RepScores> {
            let noisy = (seed % 1000) as f64 / 1000.0;
            Ok(vec![
                Ok(vec![vec![0.5, 0.75]]),
                if rep == 1 { Err("diverged".into()) } else { Ok(vec![vec![noisy, noisy]]) },
            ])
        };
        let one = repeated_experiment(9, 1, &rows, &methods, &metrics, run).unwrap();
        assert_eq!(one.summary(Aggregate::Mean).unwrap()[0].values[0][0], Some(0.5));

        let a = repeated_experiment(9, 4, &rows, &methods, &metrics, run).unwrap();
        let b = repeated_experiment(9, 4, &rows, &methods, &metrics, run).unwrap();
        assert_eq!(a, b);
        let mean = a.summary(Aggregate::Mean).unwrap();
        assert_eq!(mean[0].values[1][0], Some(0.75));
        assert_eq!(a.failures.len(), 1);
        assert_eq!(a.failures[0].rep, 1);

        // cell means do not depend on repetition order
        let mut shuffled = a.per_rep.clone();
        shuffled.reverse();
        let tables: Vec<ScoreTable> = shuffled.iter().map(|r| r[0].clone()).collect();
        let again = ScoreTable::aggregate(&tables, Aggregate::Mean).unwrap();
        for (x, y) in again.values.iter().flatten().zip(mean[0].values.iter().flatten()) {
            assert!((x.unwrap() - y.unwrap()).abs() < 1e-15);
        }

        let all_fail = |_: usize, _: u64| -> Result<RepScores> { Err(Error::Numeric("boom".into())) };
        let f = repeated_experiment(1, 2, &rows, &methods, &metrics, all_fail).unwrap();
        assert_eq!(f.summary(Aggregate::Mean).unwrap()[0].values[0][0], None);
        assert_eq!(f.failures.len(), 4);
    }
}
