use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, mse_on_tape, AdamConfig, AdamState, Architecture, Model, ModelKind};
use crate::attention::ScoreFn;
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::numcore::{Matrix, Tape, Var};
use crate::seed::derive_seed;

/// One series as the network sees it: a feature vector per time step
/// (target first, then exogenous columns) and the target sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSeries {
    features: Vec<Vec<f64>>,
    target: Vec<f64>,
}

impl FeatureSeries {
    pub fn new(features: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self> {
        if features.len() != target.len() {
            return Err(Error::contract("feature and target lengths differ"));
        }
        let width = features.first().map_or(0, Vec::len);
        if width == 0 || features.iter().any(|f| f.len() != width) {
            return Err(Error::contract("feature rows must share one non-zero width"));
        }
        Ok(Self { features, target })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }
}

/// Resolved training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub depth: usize,
    pub encoder: EncoderKind,
    pub score: ScoreFn,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lookback: 12,
            horizon: 3,
            learning_rate: 0.005,
            epochs: 50,
            batch_size: 1,
            hidden_width: 16,
            depth: 2,
            encoder: EncoderKind::Lstm,
            score: ScoreFn::Dot,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.lookback == 0 {
            return bad("lookback must be >= 1");
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.hidden_width == 0 || self.depth == 0 {
            return bad("hidden_width and depth must be >= 1");
        }
        if self.encoder == EncoderKind::Cnn && self.lookback < crate::encoders::CONV_KERNEL {
            return bad("the cnn encoder needs lookback >= 3");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn architecture(&self, kind: ModelKind, input_width: usize, members: Vec<String>) -> Architecture {
        Architecture {
            kind,
            encoder: self.encoder,
            input_width,
            hidden_width: self.hidden_width,
            depth: self.depth,
            attention_width: self.hidden_width,
            score: self.score,
            members,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean training loss of each epoch, as accumulated over its batches.
    pub loss_trace: Vec<f64>,
    /// Full-set training loss before the first update.
    pub initial_loss: f64,
    /// Full-set training loss after the last update.
    pub final_loss: f64,
}

/// Lookback windows for a batch: `result[j][τ]` is `width x batch` and
/// column `b` holds member `j` at time `ends[b] + 1 - k + τ`.
pub fn batch_windows(members: &[FeatureSeries], ends: &[usize], lookback: usize) -> Vec<Vec<Matrix>> {
    members
        .iter()
        .map(|s| {
            let w = s.width();
            (0..lookback)
                .map(|tau| {
                    let mut m = Matrix::zeros(w, ends.len());
                    for (b, &end) in ends.iter().enumerate() {
                        let row = &s.features[end + 1 - lookback + tau];
                        for (i, &v) in row.iter().enumerate() {
                            m.set(i, b, v);
                        }
                    }
                    m
                })
                .collect()
        })
        .collect()
}

/// Labels `target[end + horizon]` per member.
pub fn batch_targets(members: &[FeatureSeries], ends: &[usize], horizon: usize) -> Vec<Vec<f64>> {
    members
        .iter()
        .map(|s| ends.iter().map(|&e| s.target[e + horizon]).collect())
        .collect()
}

fn check_data(model: &Model, data: &[FeatureSeries], ends: &[usize], cfg: &TrainConfig) -> Result<()> {
    if data.len() != model.member_count() {
        return Err(Error::contract(format!(
            "{} series supplied for a {}-member model",
            data.len(),
            model.member_count()
        )));
    }
    let need = cfg.lookback + cfg.horizon;
    for s in data {
        if s.len() < need {
            return Err(Error::Data(format!(
                "series of length {} is shorter than lookback + horizon = {need}",
                s.len()
            )));
        }
        if s.width() != model.architecture().input_width {
            return Err(Error::contract("feature width does not match the model"));
        }
    }
    if ends.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    let len = data[0].len();
    if data.iter().any(|s| s.len() != len) {
        return Err(Error::contract("group members must share one time index"));
    }
    if let Some(&e) = ends.iter().find(|&&e| e + 1 < cfg.lookback || e + cfg.horizon >= len) {
        return Err(Error::Data(format!("sample ending at {e} falls outside the series")));
    }
    Ok(())
}

/// Mean loss over `ends` without updating anything.
pub fn evaluate_loss(model: &Model, data: &[FeatureSeries], ends: &[usize], lookback: usize, horizon: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in ends.chunks(256) {
        let preds = model.predict(&batch_windows(data, chunk, lookback))?;
        let targets = batch_targets(data, chunk, horizon);
        total += super::mse_loss(&preds, &targets)? * chunk.len() as f64;
    }
    Ok(total / ends.len() as f64)
}

/// Trains `model` in place on the samples ending at `ends`.
///
/// Mini-batches are reshuffled each epoch from a stream seeded by
/// `cfg.seed`, so equal seeds and data give bit-identical parameters.
pub fn fit(model: &mut Model, data: &[FeatureSeries], ends: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(model, data, ends, cfg)?;
    let adam = cfg.adam();
    let mut state = AdamState::new(model.store());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x5bu64]));
    let initial_loss = evaluate_loss(model, data, ends, cfg.lookback, cfg.horizon)?;

    let mut order = ends.to_vec();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let windows = batch_windows(data, batch, cfg.lookback);
            let targets = batch_targets(data, batch, cfg.horizon);
            let mut tape = Tape::new();
            tape.bind(model.store());
            let wv: Vec<Vec<Var>> = windows
                .into_iter()
                .map(|w| w.into_iter().map(|m| tape.input(m)).collect())
                .collect();
            let pass = model.forward(&mut tape, &wv)?;
            let tv: Vec<Var> = targets.iter().map(|t| tape.input(Matrix::row(t))).collect();
            let loss = mse_on_tape(&mut tape, &pass.predictions, &tv)?;
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss in epoch {epoch}")));
            }
            let grads = tape.backward(loss)?;
            adam_step(model.store_mut(), grads.as_slice(), &mut state, &adam)?;
            total += value * batch.len() as f64;
        }
        loss_trace.push(total / ends.len() as f64);
    }
    let final_loss = evaluate_loss(model, data, ends, cfg.lookback, cfg.horizon)?;
    Ok(TrainOutcome {
        loss_trace,
        initial_loss,
        final_loss,
    })
}

/// Builds and trains a grouped model over all `members`.
pub fn train_tsen(
    members: &[FeatureSeries],
    ids: Vec<String>,
    ends: &[usize],
    cfg: &TrainConfig,
) -> Result<(Model, TrainOutcome)> {
    cfg.validate()?;
    let width = members
        .first()
        .ok_or_else(|| Error::contract("empty group"))?
        .width();
    if ids.len() != members.len() {
        return Err(Error::contract("one id per member is required"));
    }
    let mut model = Model::new(cfg.architecture(ModelKind::Tsen, width, ids), cfg.seed)?;
    let outcome = fit(&mut model, members, ends, cfg)?;
    Ok((model, outcome))
}

/// Builds and trains a single-series model with the configured encoder.
pub fn train_baseline(
    series: &FeatureSeries,
    id: String,
    ends: &[usize],
    cfg: &TrainConfig,
) -> Result<(Model, TrainOutcome)> {
    cfg.validate()?;
    let arch = cfg.architecture(ModelKind::Baseline, series.width(), vec![id]);
    let mut model = Model::new(arch, cfg.seed)?;
    let data = std::slice::from_ref(series);
    let outcome = fit(&mut model, data, ends, cfg)?;
    Ok((model, outcome))
}
