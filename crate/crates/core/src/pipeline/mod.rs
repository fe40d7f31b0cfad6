//! End-to-end flow: load, normalize on the training split, group series,
//! train grouped and single-series models, forecast and score.
//!
//! The split is a time boundary `b = floor(fraction · T)`. Normalizer
//! statistics and clustering distances use rows `< b` only; training
//! samples are those whose label index is `< b`, test samples those whose
//! label index is `>= b`.

mod bench;
mod config;
mod workflow;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bench::{run_bench, write_bench, BenchConfig, BenchReport, MetricTables};
pub use config::{ClusterSection, DataSection, EvalSection, ModelSection, PipelineConfig, TrainSection};
pub use workflow::{
    load_manifest, run_cluster, run_evaluate, run_forecast, run_train, ClusterReport, EvaluateReport,
    ForecastReport, Manifest, ManifestEntry,
};

use crate::cluster::{agglomerate_with, pairwise_distance, DistanceMatrix, GroupPartition, Linkage};
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::model::{batch_windows, train_baseline, train_tsen, FeatureSeries, Model, ModelKind, TrainConfig, TrainOutcome};
use crate::panel::{sample_ends, TimeSeriesPanel};
use crate::seed::derive_seed;

/// Tool name and version embedded in every report.
pub const VERSION: &str = concat!("tsen ", env!("CARGO_PKG_VERSION"));

/// A forecasting method: grouped or single-series, with an encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MethodSpec {
    pub kind: ModelKind,
    pub encoder: EncoderKind,
}

impl MethodSpec {
    pub fn tsen(encoder: EncoderKind) -> Self {
        Self {
            kind: ModelKind::Tsen,
            encoder,
        }
    }

    pub fn baseline(encoder: EncoderKind) -> Self {
        Self {
            kind: ModelKind::Baseline,
            encoder,
        }
    }

    /// The eight methods of the simulation benchmark.
    pub fn benchmark_set() -> Vec<MethodSpec> {
        let order = [EncoderKind::Gru, EncoderKind::Lstm, EncoderKind::Rnn, EncoderKind::Cnn];
        order
            .iter()
            .map(|&e| Self::tsen(e))
            .chain(order.iter().map(|&e| Self::baseline(e)))
            .collect()
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let enc = self.encoder.as_str().to_ascii_uppercase();
        match self.kind {
            ModelKind::Tsen => write!(f, "TSEN-{enc}"),
            ModelKind::Baseline => f.write_str(&enc),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        match upper.strip_prefix("TSEN-") {
            Some(enc) => Ok(Self::tsen(enc.parse()?)),
            None => Ok(Self::baseline(upper.parse()?)),
        }
    }
}

impl TryFrom<String> for MethodSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MethodSpec> for String {
    fn from(m: MethodSpec) -> String {
        m.to_string()
    }
}

/// Window ends whose label falls before the boundary.
pub fn training_ends(len: usize, boundary: usize, lookback: usize, horizon: usize) -> Result<Vec<usize>> {
    let all = sample_ends(len, lookback, horizon)?;
    let ends: Vec<usize> = all.filter(|e| e + horizon < boundary).collect();
    if ends.is_empty() {
        return Err(Error::Data(format!(
            "training split of {boundary} steps holds no window of lookback {lookback} and horizon {horizon}"
        )));
    }
    Ok(ends)
}

/// Window ends whose label falls at or after the boundary.
pub fn test_ends(len: usize, boundary: usize, lookback: usize, horizon: usize) -> Result<Vec<usize>> {
    let all = sample_ends(len, lookback, horizon)?;
    let ends: Vec<usize> = all.filter(|e| e + horizon >= boundary).collect();
    if ends.is_empty() {
        return Err(Error::Data("test split holds no window".into()));
    }
    Ok(ends)
}

/// Distances and groups from the training part of the (normalized) targets.
pub fn group_series(
    normalized: &TimeSeriesPanel,
    boundary: usize,
    k: usize,
    linkage: Linkage,
) -> Result<(DistanceMatrix, GroupPartition)> {
    let heads: Vec<&[f64]> = normalized.series().iter().map(|s| &s.target[..boundary]).collect();
    let d = pairwise_distance(&heads)?;
    let p = agglomerate_with(&d, k, linkage).map_err(|e| Error::Config(e.to_string()))?;
    Ok((d, p))
}

/// One trained network and the panel positions of its members.
#[derive(Clone, Debug)]
pub struct TrainedUnit {
    pub method: MethodSpec,
    /// Group index for grouped models, series index for baselines.
    pub unit: usize,
    pub members: Vec<usize>,
    pub model: Model,
    pub outcome: TrainOutcome,
}

const TAG_TSEN: u64 = 0x7453;
const TAG_BASELINE: u64 = 0xba5e;

fn encoder_tag(e: EncoderKind) -> u64 {
    EncoderKind::ALL.iter().position(|&x| x == e).expect("listed") as u64
}

/// Trains one method on every group (grouped) or every series (baseline).
/// Each unit gets its own seed derived from `seed`; units train in parallel.
pub fn train_method(
    features: &[FeatureSeries],
    ids: &[String],
    groups: &[Vec<usize>],
    method: MethodSpec,
    base: &TrainConfig,
    ends: &[usize],
    seed: u64,
) -> Result<Vec<TrainedUnit>> {
    let cfg = TrainConfig {
        encoder: method.encoder,
        ..base.clone()
    };
    let units: Vec<(usize, Vec<usize>)> = match method.kind {
        ModelKind::Tsen => groups.iter().cloned().enumerate().collect(),
        ModelKind::Baseline => (0..features.len()).map(|j| (j, vec![j])).collect(),
    };
    units
        .into_par_iter()
        .map(|(unit, members)| {
            let tag = match method.kind {
                ModelKind::Tsen => TAG_TSEN,
                ModelKind::Baseline => TAG_BASELINE,
            };
            let cfg = TrainConfig {
                seed: derive_seed(seed, &[tag, encoder_tag(method.encoder), unit as u64]),
                ..cfg.clone()
            };
            let (model, outcome) = match method.kind {
                ModelKind::Tsen => {
                    let data: Vec<FeatureSeries> = members.iter().map(|&j| features[j].clone()).collect();
                    let names = members.iter().map(|&j| ids[j].clone()).collect();
                    train_tsen(&data, names, ends, &cfg)?
                }
                ModelKind::Baseline => train_baseline(&features[unit], ids[unit].clone(), ends, &cfg)?,
            };
            log::debug!(
                "{method} unit {unit}: loss {:.6} -> {:.6}",
                outcome.initial_loss,
                outcome.final_loss
            );
            Ok(TrainedUnit {
                method,
                unit,
                members,
                model,
                outcome,
            })
        })
        .collect()
}

/// Predictions at `ends` for every series covered by `units`, on the scale
/// of `features`: `result[j][i]` targets `ends[i] + horizon` of series `j`.
pub fn predict_units(
    units: &[TrainedUnit],
    features: &[FeatureSeries],
    ends: &[usize],
    lookback: usize,
) -> Result<Vec<Option<Vec<f64>>>> {
    let mut out = vec![None; features.len()];
    for u in units {
        let data: Vec<FeatureSeries> = u.members.iter().map(|&j| features[j].clone()).collect();
        let preds = u.model.predict(&batch_windows(&data, ends, lookback))?;
        for (&j, p) in u.members.iter().zip(preds) {
            out[j] = Some(p);
        }
    }
    Ok(out)
}
