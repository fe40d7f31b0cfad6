//! Multi-series panels: J series sharing one time index, each with a target
//! column and the same set of named exogenous columns.
//!
//! CSV layout: `series_id,date,target,exog_<name>...`, ISO dates, one row
//! per (series, date), written sorted by series id then date.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::model::FeatureSeries;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub id: String,
    pub target: Vec<f64>,
    /// `exog[c][t]`, one vector per exogenous column.
    pub exog: Vec<Vec<f64>>,
}

impl Series {
    /// Feature row at time `t`: target first, then the exogenous values.
    pub fn features_at(&self, t: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(1 + self.exog.len());
        row.push(self.target[t]);
        row.extend(self.exog.iter().map(|c| c[t]));
        row
    }

    pub fn feature_series(&self) -> FeatureSeries {
        let features = (0..self.target.len()).map(|t| self.features_at(t)).collect();
        FeatureSeries::new(features, self.target.clone()).expect("panel invariants hold")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesPanel {
    dates: Vec<NaiveDate>,
    exog_names: Vec<String>,
    series: Vec<Series>,
}

impl TimeSeriesPanel {
    pub fn new(dates: Vec<NaiveDate>, exog_names: Vec<String>, series: Vec<Series>) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::contract("a panel needs at least one series"));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("panel dates must be strictly increasing"));
        }
        let mut seen = HashSet::new();
        for s in &series {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::contract(format!("duplicate series id `{}`", s.id)));
            }
            if s.target.len() != dates.len() {
                return Err(Error::contract(format!("series `{}` is not aligned to the time index", s.id)));
            }
            if s.exog.len() != exog_names.len() || s.exog.iter().any(|c| c.len() != dates.len()) {
                return Err(Error::contract(format!("series `{}` has malformed exogenous columns", s.id)));
            }
        }
        Ok(Self {
            dates,
            exog_names,
            series,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn exog_names(&self) -> &[String] {
        &self.exog_names
    }

    /// Features per time step: the target plus every exogenous column.
    pub fn width(&self) -> usize {
        1 + self.exog_names.len()
    }

    pub fn series(&self) -> &[Series] {
        &self.series
    }

    pub fn ids(&self) -> Vec<String> {
        self.series.iter().map(|s| s.id.clone()).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.series.iter().position(|s| s.id == id)
    }

    /// Sub-panel with the listed series, in the listed order.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let series = ids
            .iter()
            .map(|id| {
                self.position(id)
                    .map(|i| self.series[i].clone())
                    .ok_or_else(|| Error::contract(format!("unknown series id `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.dates.clone(), self.exog_names.clone(), series)
    }

    /// Drops the listed series; unknown ids are an error.
    pub fn exclude(&self, ids: &[String]) -> Result<Self> {
        for id in ids {
            if self.position(id).is_none() {
                return Err(Error::Config(format!("cannot exclude unknown series `{id}`")));
            }
        }
        let keep: Vec<String> = self.ids().into_iter().filter(|id| !ids.contains(id)).collect();
        self.select(&keep)
    }

    /// Maps every value through `f(series_index, column, value)`, where
    /// column 0 is the target and column `c + 1` is exogenous column `c`.
    pub fn map_values(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let series = self
            .series
            .iter()
            .enumerate()
            .map(|(j, s)| Series {
                id: s.id.clone(),
                target: s.target.iter().map(|&v| f(j, 0, v)).collect(),
                exog: s
                    .exog
                    .iter()
                    .enumerate()
                    .map(|(c, col)| col.iter().map(|&v| f(j, c + 1, v)).collect())
                    .collect(),
            })
            .collect();
        Self {
            dates: self.dates.clone(),
            exog_names: self.exog_names.clone(),
            series,
        }
    }

    pub fn feature_series(&self) -> Vec<FeatureSeries> {
        self.series.iter().map(Series::feature_series).collect()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["series_id".to_string(), "date".into(), "target".into()];
        header.extend(self.exog_names.iter().map(|n| format!("exog_{n}")));
        w.write_record(&header)?;
        let mut order: Vec<&Series> = self.series.iter().collect();
        order.sort_by(|a, b| a.id.cmp(&b.id));
        for s in order {
            for (t, d) in self.dates.iter().enumerate() {
                let mut rec = vec![s.id.clone(), d.format("%Y-%m-%d").to_string(), s.target[t].to_string()];
                rec.extend(s.exog.iter().map(|c| c[t].to_string()));
                w.write_record(&rec)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv_string()?.as_bytes())
    }
}

/// Ingestion switches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadOptions {
    /// Fill an empty cell from the previous date of the same series.
    /// Not part of the default method; a leading empty cell is still an error.
    pub forward_fill: bool,
    /// Series dropped after parsing.
    pub exclude: Vec<String>,
}

pub fn load_panel(path: &Path, opts: &LoadOptions) -> Result<TimeSeriesPanel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_panel(file, opts)
}

struct RawRow {
    line: usize,
    date: NaiveDate,
    values: Vec<Option<f64>>,
}

pub fn parse_panel<R: std::io::Read>(reader: R, opts: &LoadOptions) -> Result<TimeSeriesPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let fixed = ["series_id", "date", "target"];
    for (i, name) in fixed.iter().enumerate() {
        if header.get(i).map(str::trim) != Some(*name) {
            return Err(Error::Ingest {
                row: 1,
                message: format!("column {} must be `{name}`", i + 1),
            });
        }
    }
    let mut exog_names = Vec::new();
    for h in header.iter().skip(3) {
        let name = h.trim().strip_prefix("exog_").ok_or_else(|| Error::Ingest {
            row: 1,
            message: format!("exogenous column `{h}` must be named exog_<name>"),
        })?;
        if name.is_empty() || exog_names.iter().any(|n| n == name) {
            return Err(Error::Ingest {
                row: 1,
                message: format!("bad or repeated exogenous column `{h}`"),
            });
        }
        exog_names.push(name.to_string());
    }
    let n_values = 1 + exog_names.len();

    let mut by_series: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    let mut first_seen: Vec<String> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Ingest { row: line, message };
        if rec.len() != header.len() {
            return Err(bad(format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(bad("empty series_id".into()));
        }
        let date = NaiveDate::parse_from_str(rec[1].trim(), "%Y-%m-%d")
            .map_err(|_| bad(format!("unparseable date `{}`", &rec[1])))?;
        let mut values = Vec::with_capacity(n_values);
        for (c, cell) in rec.iter().skip(2).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                values.push(None);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| bad(format!("unparseable value `{cell}` in column {}", c + 3)))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite value in column {}", c + 3)));
            }
            values.push(Some(v));
        }
        if !by_series.contains_key(&id) {
            first_seen.push(id.clone());
        }
        by_series.entry(id).or_default().push(RawRow { line, date, values });
    }
    if by_series.is_empty() {
        return Err(Error::Ingest {
            row: 1,
            message: "no data rows".into(),
        });
    }

    let mut dates: Option<Vec<NaiveDate>> = None;
    let mut series = Vec::with_capacity(by_series.len());
    for (id, mut rows) in by_series {
        rows.sort_by_key(|r| r.date);
        for w in rows.windows(2) {
            if w[0].date == w[1].date {
                return Err(Error::Ingest {
                    row: w[0].line.max(w[1].line),
                    message: format!("duplicate row for series `{id}` on {}", w[1].date),
                });
            }
        }
        let these: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
        match &dates {
            None => dates = Some(these),
            Some(reference) => {
                if *reference != these {
                    let row = rows
                        .iter()
                        .enumerate()
                        .find(|(i, r)| reference.get(*i) != Some(&r.date))
                        .map_or(rows.last().map_or(0, |r| r.line), |(_, r)| r.line);
                    return Err(Error::Ingest {
                        row,
                        message: format!("series `{id}` is not aligned with the other series' dates"),
                    });
                }
            }
        }
        let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); n_values];
        for r in &rows {
            for (c, v) in r.values.iter().enumerate() {
                let v = match v {
                    Some(v) => *v,
                    None if opts.forward_fill && !cols[c].is_empty() => *cols[c].last().unwrap(),
                    None => {
                        return Err(Error::Ingest {
                            row: r.line,
                            message: format!("missing value in column {}", c + 3),
                        })
                    }
                };
                cols[c].push(v);
            }
        }
        let target = cols.remove(0);
        series.push(Series { id, target, exog: cols });
    }
    let panel = TimeSeriesPanel::new(dates.unwrap_or_default(), exog_names, series)
        .map_err(|e| Error::Ingest { row: 1, message: e.to_string() })?;
    if opts.exclude.is_empty() {
        Ok(panel)
    } else {
        panel.exclude(&opts.exclude)
    }
}

/// Number of leading time steps in the training split.
pub fn train_boundary(len: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::contract(format!("split fraction {fraction} must lie strictly between 0 and 1")));
    }
    // the small offset keeps 0.7 * 10 from landing on 6.999...
    let b = (fraction * len as f64 + 1e-9).floor() as usize;
    if b == 0 || b >= len {
        return Err(Error::contract(format!("split of {len} items at {fraction} leaves one side empty")));
    }
    Ok(b)
}

/// Per-series, per-column z-score statistics.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalizationState {
    pub series: Vec<String>,
    /// `location[j][c]`, column 0 is the target.
    pub location: Vec<Vec<f64>>,
    pub scale: Vec<Vec<f64>>,
}

impl NormalizationState {
    /// Fits on the first `train_len` time steps only.
    pub fn fit(panel: &TimeSeriesPanel, train_len: usize) -> Result<Self> {
        if train_len == 0 || train_len > panel.len() {
            return Err(Error::contract("normalizer needs a non-empty training split inside the panel"));
        }
        let mut location = Vec::new();
        let mut scale = Vec::new();
        for s in panel.series() {
            let cols = std::iter::once(&s.target).chain(s.exog.iter());
            let (mut loc, mut sc) = (Vec::new(), Vec::new());
            for (c, col) in cols.enumerate() {
                let head = &col[..train_len];
                let n = head.len() as f64;
                let mean = head.iter().sum::<f64>() / n;
                let var = head.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let mut sd = var.sqrt();
                if !(sd > 1e-12) {
                    log::warn!("series `{}` column {c} is constant on the training split; using scale 1", s.id);
                    sd = 1.0;
                }
                loc.push(mean);
                sc.push(sd);
            }
            location.push(loc);
            scale.push(sc);
        }
        Ok(Self {
            series: panel.ids(),
            location,
            scale,
        })
    }

    pub fn fit_fraction(panel: &TimeSeriesPanel, train_fraction: f64) -> Result<Self> {
        Self::fit(panel, train_boundary(panel.len(), train_fraction)?)
    }

    fn check(&self, panel: &TimeSeriesPanel) -> Result<()> {
        if panel.ids() != self.series || self.location.iter().any(|l| l.len() != panel.width()) {
            return Err(Error::contract("normalizer was fitted on a different panel layout"));
        }
        Ok(())
    }

    pub fn normalize(&self, panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
        self.check(panel)?;
        Ok(panel.map_values(|j, c, v| (v - self.location[j][c]) / self.scale[j][c]))
    }

    pub fn denormalize(&self, panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
        self.check(panel)?;
        Ok(panel.map_values(|j, c, v| v * self.scale[j][c] + self.location[j][c]))
    }

    /// Maps normalized target values of series `id` back to the original scale.
    pub fn denormalize_target(&self, id: &str, values: &[f64]) -> Result<Vec<f64>> {
        let j = self
            .series
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::contract(format!("normalizer has no series `{id}`")))?;
        Ok(values.iter().map(|v| v * self.scale[j][0] + self.location[j][0]).collect())
    }
}

/// One supervised example: `window[τ]` is the feature row at
/// `end + 1 - k + τ`, `label` the target at `end + h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub end: usize,
    pub label_index: usize,
    pub window: Vec<Vec<f64>>,
    pub label: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedSet {
    pub lookback: usize,
    pub horizon: usize,
    /// Per series, time-ordered.
    pub samples: Vec<(String, Vec<Sample>)>,
}

/// Window end indices whose label lands inside the panel.
pub fn sample_ends(len: usize, lookback: usize, horizon: usize) -> Result<std::ops::Range<usize>> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::contract("lookback and horizon must be >= 1"));
    }
    if len < lookback + horizon {
        return Err(Error::Data(format!(
            "panel of length {len} is shorter than lookback + horizon = {}",
            lookback + horizon
        )));
    }
    Ok(lookback - 1..len - horizon)
}

pub fn make_windows(panel: &TimeSeriesPanel, lookback: usize, horizon: usize) -> Result<SupervisedSet> {
    let ends = sample_ends(panel.len(), lookback, horizon)?;
    let samples = panel
        .series()
        .iter()
        .map(|s| {
            let list = ends
                .clone()
                .map(|end| Sample {
                    end,
                    label_index: end + horizon,
                    window: (end + 1 - lookback..=end).map(|t| s.features_at(t)).collect(),
                    label: s.target[end + horizon],
                })
                .collect();
            (s.id.clone(), list)
        })
        .collect();
    Ok(SupervisedSet {
        lookback,
        horizon,
        samples,
    })
}

/// Splits each series' samples by time: the first `fraction` go to training.
pub fn chronological_split(set: &SupervisedSet, fraction: f64) -> Result<(SupervisedSet, SupervisedSet)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (id, samples) in &set.samples {
        let b = train_boundary(samples.len(), fraction)?;
        train.push((id.clone(), samples[..b].to_vec()));
        test.push((id.clone(), samples[b..].to_vec()));
    }
    let wrap = |samples| SupervisedSet {
        lookback: set.lookback,
        horizon: set.horizon,
        samples,
    };
    Ok((wrap(train), wrap(test)))
}
