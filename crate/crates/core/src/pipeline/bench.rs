use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{group_series, predict_units, test_ends, train_method, training_ends, MethodSpec, VERSION};
use crate::cluster::Linkage;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::TrainConfig;
use crate::panel::{train_boundary, NormalizationState};
use crate::seed::derive_seed;
use crate::stats::{
    friedman, mae, repeated_experiment, rmse, wilcoxon_signed_rank, Aggregate, Alternative, Failure, RepScores,
    ScoreTable, TestResult,
};
use crate::varma::{simulate_case, SimCase};

/// Simulation benchmark settings. Unset fields take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub case: u8,
    pub reps: usize,
    pub seed: u64,
    /// Overrides the case's number of observations.
    pub n_obs: Option<usize>,
    /// Number of groups; 1 puts every series in one grouped model.
    pub k: usize,
    pub linkage: Linkage,
    pub train_fraction: f64,
    /// Shared training settings; the encoder is set per method.
    pub train: TrainConfig,
    pub methods: Vec<MethodSpec>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            case: 2,
            reps: 5,
            seed: 1,
            n_obs: None,
            k: 1,
            linkage: Linkage::Average,
            train_fraction: 0.7,
            train: TrainConfig {
                epochs: 50,
                batch_size: 64,
                ..TrainConfig::default()
            },
            methods: MethodSpec::benchmark_set(),
        }
    }
}

impl BenchConfig {
    pub fn sim_case(&self) -> Result<SimCase> {
        let case = SimCase::new(self.case)?;
        Ok(match self.n_obs {
            Some(n) => case.with_obs(n),
            None => case,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_case()?;
        self.train.validate()?;
        if self.reps == 0 {
            return Err(Error::Config("reps must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie strictly between 0 and 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTables {
    pub rmse: ScoreTable,
    pub mae: ScoreTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub a: String,
    pub b: String,
    pub result: TestResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub version: String,
    pub config: BenchConfig,
    pub case: SimCase,
    /// Scores are computed on z-scored targets (training-split statistics).
    pub scale: String,
    pub methods: Vec<String>,
    pub series: Vec<String>,
    pub median: MetricTables,
    pub mean: MetricTables,
    pub per_rep: Vec<MetricTables>,
    pub failures: Vec<Failure>,
    /// Friedman test on RMSE with one row per (repetition, series).
    pub friedman: Option<TestResult>,
    /// One-sided signed-rank tests on the same rows.
    pub wilcoxon: Vec<PairTest>,
    pub notes: Vec<String>,
}

impl BenchReport {
    /// RMSE with one row per (repetition, series), labelled `r<rep>:<series>`.
    pub fn long_rmse(&self) -> Result<ScoreTable> {
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for (r, t) in self.per_rep.iter().enumerate() {
            for (i, s) in t.rmse.rows.iter().enumerate() {
                rows.push(format!("r{r}:{s}"));
                values.push(t.rmse.values[i].clone());
            }
        }
        ScoreTable::new(rows, self.methods.clone(), values)
    }
}

fn run_rep(cfg: &BenchConfig, case: &SimCase, seed: u64) -> Result<RepScores> {
    let panel = simulate_case(case, derive_seed(seed, &[1]))?;
    let len = panel.len();
    let boundary = train_boundary(len, cfg.train_fraction)?;
    let normalizer = NormalizationState::fit(&panel, boundary)?;
    let normalized = normalizer.normalize(&panel)?;
    let (_, partition) = group_series(&normalized, boundary, cfg.k, cfg.linkage)?;
    let groups = partition.groups();
    let (k, h) = (cfg.train.lookback, cfg.train.horizon);
    let train = training_ends(len, boundary, k, h)?;
    let test = test_ends(len, boundary, k, h)?;
    let features = normalized.feature_series();
    let ids = normalized.ids();
    let train_seed = derive_seed(seed, &[2]);

    use rayon::prelude::*;
    Ok(cfg
        .methods
        .par_iter()
        .map(|&method| {
            let scored = (|| -> Result<Vec<Vec<f64>>> {
                let units = train_method(&features, &ids, &groups, method, &cfg.train, &train, train_seed)?;
                let preds = predict_units(&units, &features, &test, k)?;
                let mut r = Vec::with_capacity(ids.len());
                let mut a = Vec::with_capacity(ids.len());
                for (j, p) in preds.into_iter().enumerate() {
                    let p = p.ok_or_else(|| Error::contract("series left without a model"))?;
                    let actual: Vec<f64> = test.iter().map(|&e| features[j].target()[e + h]).collect();
                    r.push(rmse(&p, &actual)?);
                    a.push(mae(&p, &actual)?);
                }
                Ok(vec![r, a])
            })();
            scored.map_err(|e| e.to_string())
        })
        .collect())
}

fn tables_of(tables: &[ScoreTable]) -> MetricTables {
    MetricTables {
        rmse: tables[0].clone(),
        mae: tables[1].clone(),
    }
}

/// Runs every method on `reps` independently simulated panels.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let case = cfg.sim_case()?;
    let series: Vec<String> = (1..=case.n_mts).map(|s| format!("region{s}")).collect();
    let methods: Vec<String> = cfg.methods.iter().map(|m| m.to_string()).collect();
    let metrics = vec!["rmse".to_string(), "mae".to_string()];
    let result = repeated_experiment(cfg.seed, cfg.reps, &series, &methods, &metrics, |_, seed| {
        run_rep(cfg, &case, seed)
    })?;
    let median = tables_of(&result.summary(Aggregate::Median)?);
    let mean = tables_of(&result.summary(Aggregate::Mean)?);
    let per_rep: Vec<MetricTables> = result.per_rep.iter().map(|t| tables_of(t)).collect();

    let mut report = BenchReport {
        version: VERSION.to_string(),
        config: cfg.clone(),
        case,
        scale: "normalized".into(),
        methods,
        series,
        median,
        mean,
        per_rep,
        failures: result.failures,
        friedman: None,
        wilcoxon: Vec::new(),
        notes: Vec::new(),
    };
    let long = report.long_rmse()?;
    if report.methods.len() >= 2 {
        match friedman(&long) {
            Ok(t) => report.friedman = Some(t),
            Err(e) => report.notes.push(format!("friedman test skipped: {e}")),
        }
    }
    for &m in &cfg.methods {
        if m.kind != crate::model::ModelKind::Tsen {
            continue;
        }
        let base = super::MethodSpec::baseline(m.encoder).to_string();
        let (a, b) = (m.to_string(), base);
        let (Some(xa), Some(xb)) = (long.column(&a), long.column(&b)) else {
            continue;
        };
        match wilcoxon_signed_rank(&xa, &xb, Alternative::ABetter) {
            Ok(result) => report.wilcoxon.push(PairTest { a, b, result }),
            Err(e) => report.notes.push(format!("wilcoxon {a} vs {b} skipped: {e}")),
        }
    }
    Ok(report)
}

/// Writes `report.json` and the RMSE/MAE tables as CSV.
pub fn write_bench(report: &BenchReport, out_dir: &Path) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    write_atomic(&out_dir.join("report.json"), &json)?;
    let files = [
        ("rmse_median.csv", &report.median.rmse),
        ("mae_median.csv", &report.median.mae),
        ("rmse_mean.csv", &report.mean.rmse),
        ("mae_mean.csv", &report.mean.mae),
    ];
    for (name, t) in files {
        write_atomic(&out_dir.join(name), t.to_csv_string()?.as_bytes())?;
    }
    write_atomic(&out_dir.join("rmse_all.csv"), report.long_rmse()?.to_csv_string()?.as_bytes())
}
