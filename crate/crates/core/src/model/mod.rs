//! The grouped forecasting network and its single-series baseline.
//!
//! A [`Model`] holds one member network per series: an encoder, a mixer
//! and a linear output head. For the grouped (TSEN) model the mixer is an
//! attention head whose keys are the encodings of every group member; for
//! the single-series baseline it is a tanh projection of the lone encoding.
//! At one member the two coincide: attention over one key returns that key
//! as the context, so `tanh(W_a·[h; h])` equals the projection with
//! `W_p = W_a[:, :H] + W_a[:, H:]`.

mod adam;
mod paramfile;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use paramfile::{parse_params, read_params, render_params, write_params, PARAM_FILE_VERSION};
pub use train::{
    batch_targets, batch_windows, evaluate_loss, fit, train_baseline, train_tsen, FeatureSeries,
    TrainConfig,
    TrainOutcome,
};

use crate::attention::{attend, AttentionParams, ScoreFn};
use crate::encoders::{encode_sequence, EncoderKind, EncoderStack};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Parallel encoders, per-series attention and linear heads.
    Tsen,
    /// One encoder, a tanh projection and a linear head.
    Baseline,
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub kind: ModelKind,
    pub encoder: EncoderKind,
    pub input_width: usize,
    pub hidden_width: usize,
    pub depth: usize,
    pub attention_width: usize,
    pub score: ScoreFn,
    pub members: Vec<String>,
}

impl Architecture {
    /// Closed-form number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        let enc = EncoderStack::scalar_count(self.encoder, self.input_width, self.hidden_width, self.depth);
        let head = self.attention_width + 1;
        match self.kind {
            ModelKind::Tsen => {
                let att = AttentionParams::scalar_count(self.score, self.hidden_width, self.attention_width);
                self.members.len() * (enc + att + head)
            }
            ModelKind::Baseline => enc + self.attention_width * self.hidden_width + head,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::contract("model needs at least one member series"));
        }
        if self.kind == ModelKind::Baseline && self.members.len() != 1 {
            return Err(Error::contract("a baseline model has exactly one member"));
        }
        if self.attention_width == 0 {
            return Err(Error::contract("attention width must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mixer {
    Attention(AttentionParams),
    /// `tanh(W_p · h)`, `W_p` is `out_width x hidden`.
    Projection { w: ParamId, out_width: usize },
}

/// Linear head `ŷ = W_o · a + b_o` with a scalar output.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputHead {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemberNet {
    pub encoder: EncoderStack,
    pub mixer: Mixer,
    pub head: OutputHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Architecture,
    store: ParamStore,
    members: Vec<MemberNet>,
}

/// Nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// One `1 x batch` prediction per member.
    pub predictions: Vec<Var>,
    /// Attention weights (`m x batch`) per member; `None` for baselines.
    pub weights: Vec<Option<Var>>,
}

impl Model {
    /// Builds a freshly initialized model; fully determined by `seed`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut members = Vec::with_capacity(arch.members.len());
        for j in 0..arch.members.len() {
            let prefix = format!("m{j}");
            let encoder = EncoderStack::new(
                &mut store,
                &format!("{prefix}.enc"),
                arch.encoder,
                arch.input_width,
                arch.hidden_width,
                arch.depth,
                &mut rng,
            )?;
            let mixer = match arch.kind {
                ModelKind::Tsen => Mixer::Attention(AttentionParams::new(
                    &mut store,
                    &format!("{prefix}.att"),
                    arch.score,
                    arch.hidden_width,
                    arch.attention_width,
                    &mut rng,
                )),
                ModelKind::Baseline => Mixer::Projection {
                    w: store.add_glorot(
                        format!("{prefix}.proj"),
                        arch.attention_width,
                        arch.hidden_width,
                        &mut rng,
                    ),
                    out_width: arch.attention_width,
                },
            };
            let head = OutputHead {
                w: store.add_glorot(format!("{prefix}.head.w"), 1, arch.attention_width, &mut rng),
                b: store.add_zeros(format!("{prefix}.head.b"), 1, 1),
            };
            members.push(MemberNet {
                encoder,
                mixer,
                head,
            });
        }
        Ok(Self {
            arch,
            store,
            members,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn members(&self) -> &[MemberNet] {
        &self.members
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    /// The same network with member order rearranged: member `i` of the
    /// result carries the parameters of member `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.members.len();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::contract("permutation does not match member count"));
        }
        let mut arch = self.arch.clone();
        arch.members = order.iter().map(|&i| self.arch.members[i].clone()).collect();
        let mut out = Model::new(arch, 0)?;
        for id in out.store.ids().collect::<Vec<_>>() {
            let name = out.store.name(id);
            let (member, rest) = name[1..]
                .split_once('.')
                .expect("parameter names start with the member prefix");
            let src_member = order[member.parse::<usize>().expect("numeric member prefix")];
            let src = self
                .store
                .find(&format!("m{src_member}.{rest}"))
                .expect("identical per-member layout");
            *out.store.get_mut(id) = self.store.get(src).clone();
        }
        Ok(out)
    }

    /// Records the network on `tape` (which must be bound to this model's
    /// store). `windows[j]` is member `j`'s lookback window.
    pub fn forward(&self, tape: &mut Tape, windows: &[Vec<Var>]) -> Result<ForwardPass> {
        if windows.len() != self.members.len() {
            return Err(Error::contract(format!(
                "model has {} members but {} windows were given",
                self.members.len(),
                windows.len()
            )));
        }
        let reps = self
            .members
            .iter()
            .zip(windows)
            .map(|(m, w)| encode_sequence(tape, w, &m.encoder))
            .collect::<Result<Vec<_>>>()?;

        let mut predictions = Vec::with_capacity(reps.len());
        let mut weights = Vec::with_capacity(reps.len());
        for (j, member) in self.members.iter().enumerate() {
            let mixed = match &member.mixer {
                Mixer::Attention(p) => {
                    let a = attend(tape, reps[j], &reps, p)?;
                    weights.push(Some(a.weights));
                    a.output
                }
                Mixer::Projection { w, .. } => {
                    weights.push(None);
                    let z = tape.matmul(tape.param(*w), reps[j])?;
                    tape.tanh(z)
                }
            };
            let y = tape.matmul(tape.param(member.head.w), mixed)?;
            predictions.push(tape.add_bias(y, tape.param(member.head.b))?);
        }
        Ok(ForwardPass {
            predictions,
            weights,
        })
    }

    /// Predictions for a batch: `result[j][b]` is member `j`, column `b`.
    pub fn predict(&self, windows: &[Vec<Matrix>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.predict_with_weights(windows)?.0)
    }

    /// Predictions plus attention weights (`weights[j][b][s]`, empty for
    /// baselines).
    #[allow(clippy::type_complexity)]
    pub fn predict_with_weights(
        &self,
        windows: &[Vec<Matrix>],
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)> {
        let mut tape = Tape::new();
        tape.bind(&self.store);
        let vars: Vec<Vec<Var>> = windows
            .iter()
            .map(|w| w.iter().map(|m| tape.input(m.clone())).collect())
            .collect();
        let pass = self.forward(&mut tape, &vars)?;
        let preds = pass
            .predictions
            .iter()
            .map(|&p| tape.value(p).as_slice().to_vec())
            .collect::<Vec<_>>();
        if preds.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite prediction".into()));
        }
        let weights = pass
            .weights
            .iter()
            .map(|w| match w {
                Some(w) => {
                    let m = tape.value(*w);
                    (0..m.cols())
                        .map(|b| (0..m.rows()).map(|s| m.get(s, b)).collect())
                        .collect()
                }
                None => Vec::new(),
            })
            .collect();
        Ok((preds, weights))
    }

    pub(crate) fn from_parts(arch: Architecture, store: ParamStore) -> Result<Self> {
        let mut model = Model::new(arch, 0)?;
        if model.store.len() != store.len() {
            return Err(Error::contract("parameter count does not match the architecture"));
        }
        for id in model.store.ids().collect::<Vec<_>>() {
            let src = store.get(id);
            if store.name(id) != model.store.name(id) || src.shape() != model.store.get(id).shape() {
                return Err(Error::contract(format!(
                    "parameter `{}` does not match the architecture",
                    store.name(id)
                )));
            }
        }
        model.store = store;
        Ok(model)
    }
}

/// Multi-output mean squared error, `(1/(J·N)) Σ_j Σ_n (y - ŷ)²`.
pub fn mse_loss(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::contract("mse_loss: member count mismatch"));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != t.len() || p.is_empty() {
            return Err(Error::contract("mse_loss: length mismatch"));
        }
        total += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        n += p.len();
    }
    Ok(total / n as f64)
}

/// The same loss recorded on a tape; each input is `1 x batch`.
pub fn mse_on_tape(tape: &mut Tape, preds: &[Var], targets: &[Var]) -> Result<Var> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::contract("mse_on_tape: member count mismatch"));
    }
    let p = tape.vstack(preds)?;
    let t = tape.vstack(targets)?;
    let d = tape.sub(p, t)?;
    let sq = tape.square(d);
    Ok(tape.mean_all(sq))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numcore::{grad_check, DEFAULT_EPS};
    use rand::Rng;

    pub(crate) fn arch(kind: ModelKind, encoder: EncoderKind, members: usize, hidden: usize) -> Architecture {
        Architecture {
            kind,
            encoder,
            input_width: 3,
            hidden_width: hidden,
            depth: 2,
            attention_width: hidden,
            score: ScoreFn::Dot,
            members: (0..members).map(|j| format!("s{j}")).collect(),
        }
    }

    fn windows(seed: u64, members: usize, len: usize, batch: usize) -> Vec<Vec<Matrix>> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..members)
            .map(|_| {
                (0..len)
                    .map(|_| {
                        Matrix::new(3, batch, (0..3 * batch).map(|_| r.random_range(-1.0..1.0)).collect())
                            .unwrap()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[vec![1.0, -1.0]], &[vec![0.0, 0.0]]).unwrap(), 1.0);
        assert!(mse_loss(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn zero_weights_predict_the_bias() {
        for enc in EncoderKind::ALL {
            let mut m = Model::new(arch(ModelKind::Tsen, enc, 3, 4), 1).unwrap();
            m.store_mut().zero_all();
            let biases = [0.5, -1.25, 3.0];
            for (j, b) in biases.iter().enumerate() {
                let id = m.members()[j].head.b;
                *m.store_mut().get_mut(id) = Matrix::scalar(*b);
            }
            let preds = m.predict(&windows(2, 3, 4, 2)).unwrap();
            for (j, b) in biases.iter().enumerate() {
                assert_eq!(preds[j], vec![*b, *b], "{enc}");
            }
        }
    }

    #[test]
    fn member_count_mismatch_is_rejected() {
        let m = Model::new(arch(ModelKind::Tsen, EncoderKind::Gru, 2, 4), 1).unwrap();
        assert!(matches!(m.predict(&windows(0, 3, 4, 1)), Err(Error::Contract(_))));
    }

    #[test]
    fn permuting_members_permutes_outputs() {
        for enc in EncoderKind::ALL {
            let m = Model::new(arch(ModelKind::Tsen, enc, 3, 4), 5).unwrap();
            let w = windows(6, 3, 5, 2);
            let base = m.predict(&w).unwrap();
            let order = [2, 0, 1];
            let pm = m.permuted(&order).unwrap();
            let pw: Vec<_> = order.iter().map(|&i| w[i].clone()).collect();
            let permuted = pm.predict(&pw).unwrap();
            for (i, &src) in order.iter().enumerate() {
                for (a, b) in permuted[i].iter().zip(&base[src]) {
                    assert!((a - b).abs() < 1e-14, "{enc}");
                }
            }
        }
    }

    #[test]
    fn single_member_tsen_matches_baseline() {
        for enc in EncoderKind::ALL {
            let tsen = Model::new(arch(ModelKind::Tsen, enc, 1, 4), 9).unwrap();
            let mut base = Model::new(arch(ModelKind::Baseline, enc, 1, 4), 123).unwrap();
            let (t_m, b_m) = (&tsen.members()[0], base.members()[0].clone());
            // encoder tensors share names and layout
            for id in base.store().ids().collect::<Vec<_>>() {
                let name = base.store().name(id).to_string();
                if let Some(src) = tsen.store().find(&name) {
                    *base.store_mut().get_mut(id) = tsen.store().get(src).clone();
                }
            }
            let Mixer::Attention(att) = &t_m.mixer else { unreachable!() };
            let w_a = tsen.store().get(att.w_a);
            let h = w_a.cols() / 2;
            let mut proj = Matrix::zeros(w_a.rows(), h);
            for i in 0..w_a.rows() {
                for k in 0..h {
                    proj.set(i, k, w_a.get(i, k) + w_a.get(i, k + h));
                }
            }
            let Mixer::Projection { w, .. } = b_m.mixer else { unreachable!() };
            *base.store_mut().get_mut(w) = proj;

            let win = windows(10, 1, 5, 3);
            let a = tsen.predict(&win).unwrap();
            let b = base.predict(&win).unwrap();
            for (x, y) in a[0].iter().zip(&b[0]) {
                assert!((x - y).abs() < 1e-12, "{enc}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn closed_form_parameter_count() {
        for enc in EncoderKind::ALL {
            for members in 1..4 {
                for score in [ScoreFn::Dot, ScoreFn::General] {
                    let mut a = arch(ModelKind::Tsen, enc, members, 5);
                    a.score = score;
                    let m = Model::new(a.clone(), 0).unwrap();
                    assert_eq!(m.store().scalar_count(), a.scalar_count());
                }
            }
            let a = arch(ModelKind::Baseline, enc, 1, 5);
            assert_eq!(Model::new(a.clone(), 0).unwrap().store().scalar_count(), a.scalar_count());
        }
        // two-layer LSTM, width 16, 6 inputs, 4 members
        let mut a = arch(ModelKind::Tsen, EncoderKind::Lstm, 4, 16);
        a.input_width = 6;
        let enc = 4 * (16 * 22 + 16) + 4 * (16 * 32 + 16);
        assert_eq!(a.scalar_count(), 4 * (enc + 16 * 32 + 17));
    }

    #[test]
    fn full_forward_and_loss_gradient_check() {
        for enc in EncoderKind::ALL {
            for seed in 0..5 {
                let mut model = Model::new(arch(ModelKind::Tsen, enc, 2, 4), seed).unwrap();
                // non-trivial biases so that every parameter carries gradient
                let mut r = ChaCha8Rng::seed_from_u64(seed + 50);
                for id in model.store().ids().collect::<Vec<_>>() {
                    for x in model.store_mut().get_mut(id).as_mut_slice() {
                        *x += r.random_range(-0.3..0.3);
                    }
                }
                let win = windows(seed, 2, 3, 2);
                let targets = [Matrix::row(&[0.4, -0.2]), Matrix::row(&[1.1, 0.3])];
                let err = grad_check(model.store(), DEFAULT_EPS, |s| {
                    let mut t = Tape::new();
                    t.bind(s);
                    let vars: Vec<Vec<Var>> = win
                        .iter()
                        .map(|w| w.iter().map(|m| t.input(m.clone())).collect())
                        .collect();
                    let pass = model.forward(&mut t, &vars)?;
                    let tv: Vec<Var> = targets.iter().map(|m| t.input(m.clone())).collect();
                    let l = mse_on_tape(&mut t, &pass.predictions, &tv)?;
                    Ok((t, l))
                })
                .unwrap();
                assert!(err <= 1e-4, "{enc} seed {seed}: {err}");
            }
        }
    }
}
