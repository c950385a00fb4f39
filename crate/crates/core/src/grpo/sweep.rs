use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::train::{train, TrainOptions, TrainOutcome};
use super::{TrainConfig, TrainError};
use crate::dataset::Dataset;
use crate::policy::TinyLm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    ValMeanReward,
    ValTop1,
}

impl SelectionMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMetric::ValMeanReward => "val_mean_reward",
            SelectionMetric::ValTop1 => "val_top1",
        }
    }

    fn of(self, mean_reward: f64, top1: f64) -> f64 {
        match self {
            SelectionMetric::ValMeanReward => mean_reward,
            SelectionMetric::ValTop1 => top1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: TrainConfig,
    /// A train config field, dotted for nested ones (`sampling.top_p`).
    pub dimension: String,
    pub values: Vec<Value>,
    #[serde(default = "default_metric")]
    pub selection_metric: SelectionMetric,
}

fn default_metric() -> SelectionMetric {
    SelectionMetric::ValMeanReward
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.values.is_empty() {
            return Err(TrainError::InvalidConfig("sweep needs at least one value".into()));
        }
        // checks the dimension name; bad values are reported per row
        apply_override(&self.base, &self.dimension, self.values[0].clone()).map(|_| ()).or_else(|e| match e {
            TrainError::InvalidConfig(m) if m.starts_with("unknown") => Err(TrainError::InvalidConfig(m)),
            _ => Ok(()),
        })
    }
}

/// Copy of `cfg` with the field at dotted `path` replaced by `value`. The
/// field must already exist.
pub fn apply_override(cfg: &TrainConfig, path: &str, value: Value) -> Result<TrainConfig, TrainError> {
    let mut doc = serde_json::to_value(cfg).expect("train config serializes");
    let mut slot = &mut doc;
    for key in path.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(key))
            .ok_or_else(|| TrainError::InvalidConfig(format!("unknown train config field {path:?}")))?;
    }
    *slot = value;
    let mut out: TrainConfig =
        serde_json::from_value(doc).map_err(|e| TrainError::InvalidConfig(format!("{path}: {e}")))?;
    out.reward_cfg = cfg.reward_cfg.clone();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: Value,
    /// Best validation score over the run.
    pub selection: Option<f64>,
    /// Validation score after the last step.
    pub final_metric: Option<f64>,
    pub error: Option<String>,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dimension: String,
    pub selection_metric: SelectionMetric,
    pub base: TrainConfig,
    pub rows: Vec<SweepRow>,
}

fn value_order(a: &Value, b: &Value) -> Ordering {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        _ => a.to_string().cmp(&b.to_string()),
    }
}

fn fmt_metric(m: Option<f64>) -> String {
    m.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

impl SweepReport {
    pub fn winner(&self) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.best)
    }

    /// Tab-separated, header first; the winning row is marked `*`.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\t{}\tfinal\tbest\terror\n", self.dimension, self.selection_metric.as_str());
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.value,
                fmt_metric(r.selection),
                fmt_metric(r.final_metric),
                if r.best { "*" } else { "" },
                r.error.as_deref().unwrap_or("")
            );
        }
        s
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| {
                let mut v = serde_json::to_value(r).expect("rows serialize");
                v["dimension"] = Value::String(self.dimension.clone());
                v["selection_metric"] = Value::String(self.selection_metric.as_str().into());
                v.to_string() + "\n"
            })
            .collect()
    }
}

fn scores(outcome: &TrainOutcome<TinyLm>, metric: SelectionMetric) -> (f64, f64) {
    let evals: Vec<f64> = outcome.evals().map(|(_, r, t)| metric.of(r, t)).collect();
    let best = evals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (best, *evals.last().expect("every run ends with an evaluation"))
}

/// One training run per value with everything else fixed at `spec.base`.
/// A failing row is recorded and the remaining rows still run.
pub fn sweep(
    spec: &SweepSpec,
    train_set: &Dataset,
    val_set: &Dataset,
    make_policy: &dyn Fn(&TrainConfig) -> TinyLm,
    on_row: &mut dyn FnMut(&SweepRow),
) -> Result<SweepReport, TrainError> {
    spec.validate()?;
    let mut values = spec.values.clone();
    values.sort_by(value_order);
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let run = apply_override(&spec.base, &spec.dimension, value.clone()).and_then(|cfg| {
            train(make_policy(&cfg), train_set, val_set, &cfg, &TrainOptions::default(), &mut |_| {})
        });
        let row = match run {
            Ok(outcome) => {
                let (sel, fin) = scores(&outcome, spec.selection_metric);
                SweepRow { value, selection: Some(sel), final_metric: Some(fin), error: None, best: false }
            }
            Err(e) => SweepRow { value, selection: None, final_metric: None, error: Some(e.to_string()), best: false },
        };
        on_row(&row);
        rows.push(row);
    }
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if let Some(s) = r.selection.filter(|s| !s.is_nan()) {
            if best.is_none_or(|b| s > rows[b].selection.unwrap()) {
                best = Some(i);
            }
        }
    }
    if let Some(b) = best {
        rows[b].best = true;
    }
    Ok(SweepReport { dimension: spec.dimension.clone(), selection_metric: spec.selection_metric, base: spec.base.clone(), rows })
}

/// Sweeps each `(dimension, values)` stage in order; every stage's base adopts
/// the winners of the stages before it.
pub fn sequential_sweep(
    base: &TrainConfig,
    stages: &[(String, Vec<Value>)],
    metric: SelectionMetric,
    train_set: &Dataset,
    val_set: &Dataset,
    make_policy: &dyn Fn(&TrainConfig) -> TinyLm,
) -> Result<Vec<SweepReport>, TrainError> {
    let mut current = base.clone();
    let mut reports = Vec::with_capacity(stages.len());
    for (dimension, values) in stages {
        let spec = SweepSpec { base: current.clone(), dimension: dimension.clone(), values: values.clone(), selection_metric: metric };
        let report = sweep(&spec, train_set, val_set, make_policy, &mut |_| {})?;
        if let Some(w) = report.winner() {
            current = apply_override(&current, dimension, w.value.clone())?;
        }
        reports.push(report);
    }
    Ok(reports)
}
