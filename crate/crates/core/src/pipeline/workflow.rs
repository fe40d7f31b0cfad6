use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    group_series, predict_units, test_ends, train_method, training_ends, MethodSpec, PipelineConfig, TrainedUnit,
    VERSION,
};
use crate::cluster::{DistanceMatrix, GroupPartition};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{batch_windows, read_params, write_params, ModelKind, TrainOutcome};
use crate::panel::{load_panel, train_boundary, LoadOptions, NormalizationState, TimeSeriesPanel};
use crate::stats::{mae, mse, rmse, ScoreTable};

const MANIFEST: &str = "train_report.json";
const NORMALIZER: &str = "normalizer.json";

struct Prepared {
    raw: TimeSeriesPanel,
    normalized: TimeSeriesPanel,
    normalizer: NormalizationState,
    boundary: usize,
}

fn load(cfg: &PipelineConfig) -> Result<TimeSeriesPanel> {
    let opts = LoadOptions {
        forward_fill: cfg.data.forward_fill,
        exclude: cfg.data.exclude.clone(),
    };
    load_panel(cfg.panel_path()?, &opts)
}

fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let raw = load(cfg)?;
    let boundary = train_boundary(raw.len(), cfg.data.train_fraction)?;
    let normalizer = NormalizationState::fit(&raw, boundary)?;
    let normalized = normalizer.normalize(&raw)?;
    Ok(Prepared {
        raw,
        normalized,
        normalizer,
        boundary,
    })
}

fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterReport {
    pub ids: Vec<String>,
    pub distances: DistanceMatrix,
    pub partition: GroupPartition,
}

fn write_cluster_files(out: &Path, ids: &[String], d: &DistanceMatrix, p: &GroupPartition) -> Result<()> {
    write_atomic(&out.join("distances.csv"), d.to_csv_string(ids)?.as_bytes())?;
    write_atomic(&out.join("partition.csv"), p.to_csv_string(ids)?.as_bytes())
}

/// Groups the panel's series and writes `distances.csv` and `partition.csv`.
pub fn run_cluster(cfg: &PipelineConfig) -> Result<ClusterReport> {
    let k = cfg.require_k()?;
    let prep = prepare(cfg)?;
    let (distances, partition) = group_series(&prep.normalized, prep.boundary, k, cfg.cluster.linkage)?;
    let ids = prep.raw.ids();
    write_cluster_files(&cfg.eval.out_dir, &ids, &distances, &partition)?;
    Ok(ClusterReport {
        ids,
        distances,
        partition,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub method: MethodSpec,
    pub unit: usize,
    pub file: String,
    pub members: Vec<String>,
    pub outcome: TrainOutcome,
}

/// Everything `train` produced, enough to reload the models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: PipelineConfig,
    pub seed: u64,
    pub train_len: usize,
    pub groups: Vec<Vec<String>>,
    pub entries: Vec<ManifestEntry>,
}

pub fn load_manifest(out_dir: &Path) -> Result<Manifest> {
    let path = out_dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn model_file(method: MethodSpec, unit: usize) -> String {
    match method.kind {
        ModelKind::Tsen => format!("models/{}-group{unit}.params", method.to_string().to_ascii_lowercase()),
        ModelKind::Baseline => format!("models/{}-series{unit}.params", method.to_string().to_ascii_lowercase()),
    }
}

/// Trains the grouped model of every group (and, if configured, one
/// baseline per series) and writes the models plus `train_report.json`.
pub fn run_train(cfg: &PipelineConfig) -> Result<Manifest> {
    let k = cfg.require_k()?;
    let prep = prepare(cfg)?;
    let ids = prep.raw.ids();
    let out = &cfg.eval.out_dir;
    let (distances, partition) = group_series(&prep.normalized, prep.boundary, k, cfg.cluster.linkage)?;
    write_cluster_files(out, &ids, &distances, &partition)?;
    write_atomic(&out.join(NORMALIZER), &to_json_bytes(&prep.normalizer)?)?;

    let tc = cfg.train_config();
    let ends = training_ends(prep.raw.len(), prep.boundary, tc.lookback, tc.horizon)?;
    let features = prep.normalized.feature_series();
    let groups = partition.groups();
    let mut methods = vec![MethodSpec::tsen(cfg.model.encoder)];
    if cfg.model.baselines {
        methods.push(MethodSpec::baseline(cfg.model.encoder));
    }
    let mut entries = Vec::new();
    for method in methods {
        let units = train_method(&features, &ids, &groups, method, &tc, &ends, cfg.train.seed)?;
        for u in units {
            let file = model_file(method, u.unit);
            write_params(&u.model, &out.join(&file))?;
            log::info!(
                "trained {method} unit {} ({} members): final training loss {:.6}",
                u.unit,
                u.members.len(),
                u.outcome.final_loss
            );
            entries.push(ManifestEntry {
                method,
                unit: u.unit,
                file,
                members: u.members.iter().map(|&j| ids[j].clone()).collect(),
                outcome: u.outcome,
            });
        }
    }
    let manifest = Manifest {
        version: VERSION.to_string(),
        config: cfg.clone(),
        seed: cfg.train.seed,
        train_len: prep.boundary,
        groups: groups
            .iter()
            .map(|g| g.iter().map(|&j| ids[j].clone()).collect())
            .collect(),
        entries,
    };
    write_atomic(&out.join(MANIFEST), &to_json_bytes(&manifest)?)?;
    Ok(manifest)
}

struct Loaded {
    prep: Prepared,
    manifest: Manifest,
    units: Vec<TrainedUnit>,
}

fn load_trained(cfg: &PipelineConfig) -> Result<Loaded> {
    let manifest = load_manifest(&cfg.eval.out_dir)?;
    let trained = &manifest.config;
    if trained.train.lookback != cfg.train.lookback
        || trained.train.horizon != cfg.train.horizon
        || trained.data.train_fraction != cfg.data.train_fraction
    {
        return Err(Error::Config(
            "lookback, horizon and train_fraction must match the configuration the models were trained with".into(),
        ));
    }
    let prep = prepare(cfg)?;
    let path: PathBuf = cfg.eval.out_dir.join(NORMALIZER);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let stored: NormalizationState = serde_json::from_str(&text)?;
    if stored != prep.normalizer {
        return Err(Error::Data("panel differs from the one the models were trained on".into()));
    }
    let mut units = Vec::new();
    for e in &manifest.entries {
        let model = read_params(&cfg.eval.out_dir.join(&e.file))?;
        let members = e
            .members
            .iter()
            .map(|id| {
                prep.raw
                    .position(id)
                    .ok_or_else(|| Error::Data(format!("trained series `{id}` is missing from the panel")))
            })
            .collect::<Result<Vec<_>>>()?;
        units.push(TrainedUnit {
            method: e.method,
            unit: e.unit,
            members,
            model,
            outcome: e.outcome.clone(),
        });
    }
    Ok(Loaded {
        prep,
        manifest,
        units,
    })
}

fn methods_of(units: &[TrainedUnit]) -> Vec<MethodSpec> {
    let mut out: Vec<MethodSpec> = Vec::new();
    for u in units {
        if !out.contains(&u.method) {
            out.push(u.method);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForecastRow {
    pub series_id: String,
    pub method: String,
    pub origin: String,
    pub horizon: usize,
    pub forecast: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionRow {
    pub series_id: String,
    pub key_series_id: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastReport {
    pub rows: Vec<ForecastRow>,
    pub attention: Vec<AttentionRow>,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Forecasts `horizon` steps past the last date from the most recent
/// window, on the original scale. Writes `forecast.csv` and `attention.csv`.
pub fn run_forecast(cfg: &PipelineConfig) -> Result<ForecastReport> {
    let Loaded { prep, manifest, units } = load_trained(cfg)?;
    let (k, h) = (manifest.config.train.lookback, manifest.config.train.horizon);
    let len = prep.raw.len();
    if len < k {
        return Err(Error::Data(format!("panel of length {len} is shorter than the lookback {k}")));
    }
    let end = len - 1;
    let features = prep.normalized.feature_series();
    let ids = prep.raw.ids();
    let origin = prep.raw.dates()[end].format("%Y-%m-%d").to_string();
    let mut rows = Vec::new();
    let mut attention = Vec::new();
    for u in &units {
        let data: Vec<_> = u.members.iter().map(|&j| features[j].clone()).collect();
        let (preds, weights) = u.model.predict_with_weights(&batch_windows(&data, &[end], k))?;
        for (i, &j) in u.members.iter().enumerate() {
            let value = prep.normalizer.denormalize_target(&ids[j], &preds[i])?[0];
            rows.push(ForecastRow {
                series_id: ids[j].clone(),
                method: u.method.to_string(),
                origin: origin.clone(),
                horizon: h,
                forecast: value,
            });
            if let Some(w) = weights[i].first() {
                for (s, &alpha) in w.iter().enumerate() {
                    attention.push(AttentionRow {
                        series_id: ids[j].clone(),
                        key_series_id: ids[u.members[s]].clone(),
                        weight: alpha,
                    });
                }
            }
        }
    }
    rows.sort_by(|a, b| (&a.series_id, &a.method).cmp(&(&b.series_id, &b.method)));
    let out = &cfg.eval.out_dir;
    write_rows(&out.join("forecast.csv"), &rows, &["series_id", "method", "origin", "horizon", "forecast"])?;
    write_rows(&out.join("attention.csv"), &attention, &["series_id", "key_series_id", "weight"])?;
    Ok(ForecastReport { rows, attention })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionRow {
    pub series_id: String,
    pub date: String,
    pub method: String,
    pub actual: f64,
    pub forecast: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluateReport {
    pub rmse: ScoreTable,
    pub mae: ScoreTable,
    pub mse: ScoreTable,
    pub n_test: usize,
}

/// Scores every trained method on the test split (original scale) and
/// writes `metrics_{rmse,mae,mse}.csv` and `predictions.csv`.
pub fn run_evaluate(cfg: &PipelineConfig) -> Result<EvaluateReport> {
    let Loaded { prep, manifest, units } = load_trained(cfg)?;
    let (k, h) = (manifest.config.train.lookback, manifest.config.train.horizon);
    let ends = test_ends(prep.raw.len(), prep.boundary, k, h)?;
    let features = prep.normalized.feature_series();
    let ids = prep.raw.ids();
    let methods = methods_of(&units);
    let n = ids.len();
    let mut tables = vec![vec![vec![None; methods.len()]; n]; 3];
    let mut predictions = Vec::new();
    for (mi, method) in methods.iter().enumerate() {
        let chosen: Vec<TrainedUnit> = units.iter().filter(|u| u.method == *method).cloned().collect();
        let preds = predict_units(&chosen, &features, &ends, k)?;
        for (j, p) in preds.into_iter().enumerate() {
            let Some(p) = p else { continue };
            let forecast = prep.normalizer.denormalize_target(&ids[j], &p)?;
            let actual: Vec<f64> = ends.iter().map(|&e| prep.raw.series()[j].target[e + h]).collect();
            tables[0][j][mi] = Some(rmse(&forecast, &actual)?);
            tables[1][j][mi] = Some(mae(&forecast, &actual)?);
            tables[2][j][mi] = Some(mse(&forecast, &actual)?);
            for (i, &e) in ends.iter().enumerate() {
                predictions.push(PredictionRow {
                    series_id: ids[j].clone(),
                    date: prep.raw.dates()[e + h].format("%Y-%m-%d").to_string(),
                    method: method.to_string(),
                    actual: actual[i],
                    forecast: forecast[i],
                });
            }
        }
    }
    let names: Vec<String> = methods.iter().map(|m| m.to_string()).collect();
    let mut tables = tables
        .into_iter()
        .map(|v| ScoreTable::new(ids.clone(), names.clone(), v))
        .collect::<Result<Vec<_>>>()?;
    let out = &cfg.eval.out_dir;
    for (name, t) in ["rmse", "mae", "mse"].iter().zip(&tables) {
        write_atomic(&out.join(format!("metrics_{name}.csv")), t.to_csv_string()?.as_bytes())?;
    }
    write_rows(
        &out.join("predictions.csv"),
        &predictions,
        &["series_id", "date", "method", "actual", "forecast"],
    )?;
    let mse_t = tables.pop().unwrap();
    let mae_t = tables.pop().unwrap();
    let rmse_t = tables.pop().unwrap();
    Ok(EvaluateReport {
        rmse: rmse_t,
        mae: mae_t,
        mse: mse_t,
        n_test: ends.len(),
    })
}
