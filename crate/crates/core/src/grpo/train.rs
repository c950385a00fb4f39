use std::fs;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError, TrainStepReport, Trainer};
use crate::dataset::Dataset;
use crate::eval::eval_open_ended;
use crate::hashing::mix_seed;
use crate::policy::TinyLm;

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogRecord {
    Step(TrainStepReport),
    Eval { step: usize, split: String, mean_reward: f64, top1: f64 },
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("log records serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Default)]
pub struct TrainOptions {
    /// Written as JSONL, one record per line.
    pub metrics_path: Option<PathBuf>,
    /// Receives `step-NNNN.tlm` at each evaluation and `best.tlm` at the end.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<P> {
    pub final_policy: P,
    pub best_policy: P,
    /// Step count after which the best policy was evaluated.
    pub best_step: usize,
    pub best_score: f64,
    pub log: Vec<LogRecord>,
}

impl<P> TrainOutcome<P> {
    pub fn steps(&self) -> impl Iterator<Item = &TrainStepReport> {
        self.log.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            LogRecord::Eval { .. } => None,
        })
    }

    /// Mean of the last `n` step rewards.
    pub fn trailing_mean_reward(&self, n: usize) -> f64 {
        let rewards: Vec<f64> = self.steps().map(|s| s.mean_reward).collect();
        let tail = &rewards[rewards.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }

    pub fn evals(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.log.iter().filter_map(|r| match r {
            LogRecord::Eval { step, mean_reward, top1, .. } => Some((*step, *mean_reward, *top1)),
            LogRecord::Step(_) => None,
        })
    }
}

fn io(e: impl std::fmt::Display) -> TrainError {
    TrainError::Io(e.to_string())
}

/// Runs `cfg.max_steps` steps over seeded reshuffles of `train_set`,
/// evaluating on `val_set` every `cfg.eval_every` steps and after the last one.
/// The best policy is the one with the highest validation mean reward; ties
/// keep the earlier one. `on_record` sees every log record as it is produced.
pub fn train(
    initial: TinyLm,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    opts: &TrainOptions,
    on_record: &mut dyn FnMut(&LogRecord),
) -> Result<TrainOutcome<TinyLm>, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptyDataset("val"));
    }
    let mut trainer = Trainer::new(initial, cfg.clone())?;
    let mut metrics = match &opts.metrics_path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io)?;
            }
            Some(std::io::BufWriter::new(fs::File::create(p).map_err(io)?))
        }
        None => None,
    };
    if let Some(dir) = &opts.checkpoint_dir {
        fs::create_dir_all(dir).map_err(io)?;
    }

    let mut log = Vec::new();
    let mut emit = |rec: LogRecord, log: &mut Vec<LogRecord>| -> Result<(), TrainError> {
        if let Some(w) = metrics.as_mut() {
            w.write_all(rec.to_json_line().as_bytes()).map_err(io)?;
        }
        on_record(&rec);
        log.push(rec);
        Ok(())
    };

    let n = train_set.len();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut best: Option<(f64, usize, TinyLm)> = None;
    let mut since_best = 0;

    for step in 0..cfg.max_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..n).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x5eed, epoch])));
                epoch += 1;
                cursor = 0;
            }
            batch.push(train_set.examples[order[cursor]].clone());
            cursor += 1;
        }
        let report = trainer.grpo_step(&batch)?;
        emit(LogRecord::Step(report), &mut log)?;

        let done = step + 1;
        let due = (cfg.eval_every > 0 && done % cfg.eval_every == 0) || done == cfg.max_steps;
        if !due {
            continue;
        }
        let r = eval_open_ended(&trainer.policy, val_set, &cfg.reward_cfg, cfg.eval_threshold, cfg.sampling.max_tokens)
            .map_err(|e| TrainError::Io(e.to_string()))?;
        let score = r.mean_reward.unwrap_or(0.0);
        emit(LogRecord::Eval { step: done, split: "val".into(), mean_reward: score, top1: r.top1_accuracy }, &mut log)?;
        if let Some(dir) = &opts.checkpoint_dir {
            trainer.policy.save(&dir.join(format!("step-{done:04}.tlm")))?;
        }
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, done, trainer.policy.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    drop(emit);
    if let Some(mut w) = metrics {
        w.flush().map_err(io)?;
    }
    let (best_score, best_step, best_policy) = best.expect("the last step is always evaluated");
    if let Some(dir) = &opts.checkpoint_dir {
        best_policy.save(&dir.join("best.tlm"))?;
    }
    Ok(TrainOutcome { final_policy: trainer.policy, best_policy, best_step, best_score, log })
}
