//! Command-line interface. The binary is a thin wrapper around [`run`].
//!
//! Any `--section.key value` (or `--section.key=value`) argument overrides the
//! matching key of the run config before the subcommand runs.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::curriculum;
use crate::dataset::{dataset_stats, split_dataset, Dataset};
use crate::eval::{eval_mcq, eval_open_ended, make_mcq, write_mcq_jsonl, McqMode};
use crate::extract::build_dataset;
use crate::grpo::{sweep, train, LogRecord, SweepSpec, TrainOptions};
use crate::policy::{Policy, TinyLm, Vocab};
use crate::reward::combined_reward;
use crate::transcript::{parse_transcript, CueList, FormatHint};

#[derive(Debug, Parser)]
#[command(name = "qpa-grpo", about = "Mine question-pause-answer data from subtitles and train a tiny policy with GRPO")]
struct Cli {
    /// Run config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Score,
    Match,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a QA dataset from a directory of .srt / .vtt files.
    Extract {
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip log; defaults to the dataset path with a `.skips.jsonl` suffix.
        #[arg(long)]
        skips: Option<PathBuf>,
    },
    /// Print category, modality and reasoning distributions.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Split by episode into train / val / test JSONL files.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a policy; writes checkpoints and a metrics log.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Validation set; the training set is reused when omitted.
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Evaluate a checkpoint open-ended and / or as multiple choice.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        open_ended: bool,
        #[arg(long)]
        mcq: bool,
        #[arg(long, value_enum, default_value = "score")]
        mcq_mode: ModeArg,
        #[arg(long, default_value_t = 4)]
        n_options: usize,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also write the generated MCQ items.
        #[arg(long)]
        mcq_out: Option<PathBuf>,
    },
    /// Train once per value of one config field and tabulate the results.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one prediction against a gold answer.
    Reward {
        #[arg(long)]
        pred: String,
        #[arg(long)]
        gold: String,
    },
    /// Write the synthetic curriculum and a config tuned for it.
    Curriculum {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

enum Failure {
    Error(anyhow::Error),
    NoExamples,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Error(e.into())
    }
}

/// Pulls dotted `--a.b value` pairs out of `args`.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| anyhow!("--{key} needs a value"))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

/// Entry point; returns the process exit status (0 ok, 1 error, 2 when
/// extraction finds no examples).
pub fn run(args: Vec<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let (args, overrides) = match split_overrides(args) {
        Ok(x) => x,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if code == 0 {
                let _ = write!(out, "{e}");
            } else {
                let _ = write!(err, "{e}");
            }
            return code;
        }
    };
    match dispatch(cli, &overrides, out, err) {
        Ok(()) => 0,
        Err(Failure::NoExamples) => 2,
        Err(Failure::Error(e)) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let base = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.with_overrides(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli, overrides: &[(String, String)], out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let mut cfg = load_config(cli.config.as_deref(), overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Extract { transcripts, out: dataset_out, skips } => {
            let dir = transcripts.unwrap_or_else(|| cfg.paths.transcripts_dir.clone());
            let dataset_out = dataset_out.unwrap_or_else(|| cfg.paths.dataset_out.clone());
            cmd_extract(&cfg, &dir, &dataset_out, skips, out, err)
        }
        Command::Stats { dataset, json } => {
            let d = Dataset::load(&dataset)?;
            let s = dataset_stats(&d);
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&s)?)?;
            } else {
                write!(out, "{s}")?;
            }
            Ok(())
        }
        Command::Split { dataset, out_dir } => {
            let d = Dataset::load(&dataset)?;
            let s = split_dataset(&d, cfg.split_ratios, cfg.seed)?;
            fs::create_dir_all(&out_dir)?;
            for (name, part) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
                part.save(&out_dir.join(format!("{name}.jsonl")))?;
                writeln!(out, "{name}: episodes={} examples={}", part.episode_ids().len(), part.len())?;
            }
            Ok(())
        }
        Command::Train { dataset, val } => cmd_train(&cfg, &dataset, val.as_deref(), out),
        Command::Eval { dataset, checkpoint, open_ended, mcq, mcq_mode, n_options, report, mcq_out } => {
            let mode = match mcq_mode {
                ModeArg::Score => McqMode::ScoreOptions,
                ModeArg::Match => McqMode::GenerateThenMatch,
            };
            let report = report.unwrap_or_else(|| cfg.paths.logs_dir.join("eval_report.json"));
            let opts = EvalArgs { open_ended: open_ended || !mcq, mcq, mode, n_options, report, mcq_out };
            cmd_eval(&cfg, &dataset, &checkpoint, &opts, out)
        }
        Command::Sweep { spec, dataset, val, out: table_out } => cmd_sweep(&cfg, &spec, &dataset, val.as_deref(), table_out, out, err),
        Command::Reward { pred, gold } => {
            let b = combined_reward(&pred, &gold, &cfg.reward)?;
            writeln!(out, "{}", serde_json::to_string(&b)?)?;
            Ok(())
        }
        Command::Curriculum { out_dir } => {
            fs::create_dir_all(&out_dir)?;
            curriculum::train_set().save(&out_dir.join("train.jsonl"))?;
            curriculum::held_out().save(&out_dir.join("heldout.jsonl"))?;
            let mut c = RunConfig { train: curriculum::train_config(), ..RunConfig::default() };
            c.policy.feature_dim = curriculum::FEATURE_DIM;
            c.paths.checkpoints_dir = out_dir.join("checkpoints");
            c.paths.logs_dir = out_dir.join("logs");
            fs::write(out_dir.join("config.json"), serde_json::to_string_pretty(&c)? + "\n")?;
            writeln!(out, "wrote {}", out_dir.display())?;
            Ok(())
        }
    }
}

fn transcript_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e?.path();
        let ext = p.extension().and_then(|x| x.to_str()).map(str::to_ascii_lowercase);
        if p.is_file() && matches!(ext.as_deref(), Some("srt" | "vtt")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn cmd_extract(
    cfg: &RunConfig,
    dir: &Path,
    dataset_out: &Path,
    skips: Option<PathBuf>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Failure> {
    let files = transcript_files(dir)?;
    if files.is_empty() {
        return Err(anyhow!("no transcripts found in {}", dir.display()).into());
    }
    let mut episodes: Vec<CueList> = Vec::new();
    let mut seen = BTreeSet::new();
    for path in &files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if !seen.insert(stem.clone()) {
            writeln!(err, "warning: {}: episode {stem:?} already loaded, skipping", path.display())?;
            continue;
        }
        let raw = fs::read(path)?;
        match parse_transcript(&raw, FormatHint::Auto, &stem) {
            Ok(parsed) => {
                for w in &parsed.warnings {
                    writeln!(err, "warning: {w}")?;
                }
                episodes.push(parsed.cues);
            }
            Err(e) => writeln!(err, "warning: {}: {}: {e}", path.display(), e.category())?,
        }
    }
    if episodes.is_empty() {
        return Err(anyhow!("none of the {} transcript files could be parsed", files.len()).into());
    }
    let extraction = build_dataset(&episodes, &cfg.qpa);
    for ep in &episodes {
        let n = extraction.dataset.examples.iter().filter(|e| e.episode_id == ep.episode_id).count();
        writeln!(out, "{}\t{n}", ep.episode_id)?;
    }
    if let Some(parent) = dataset_out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    extraction.dataset.save(dataset_out)?;
    let skips = skips.unwrap_or_else(|| dataset_out.with_extension("skips.jsonl"));
    fs::write(&skips, extraction.skips_jsonl())?;
    writeln!(out, "episodes={} examples={}", episodes.len(), extraction.dataset.len())?;
    if extraction.dataset.is_empty() {
        writeln!(err, "no examples extracted")?;
        return Err(Failure::NoExamples);
    }
    Ok(())
}

fn initial_policy(cfg: &RunConfig, vocab: Vocab) -> Result<TinyLm> {
    let p = &cfg.policy;
    Ok(if p.init_scale > 0.0 {
        TinyLm::random(vocab, p.feature_dim, p.hash_seed, p.init_scale, cfg.seed)?
    } else {
        TinyLm::zeros(vocab, p.feature_dim, p.hash_seed)?
    })
}

fn train_val(dataset: &Path, val: Option<&Path>) -> Result<(Dataset, Dataset, Vocab)> {
    let train_set = Dataset::load(dataset)?;
    let val_set = match val {
        Some(v) => Dataset::load(v)?,
        None => train_set.clone(),
    };
    let mut both = train_set.examples.clone();
    both.extend(val_set.examples.iter().cloned());
    let vocab = Vocab::from_dataset(&Dataset { examples: both, config_fingerprint: String::new() })?;
    Ok((train_set, val_set, vocab))
}

fn cmd_train(cfg: &RunConfig, dataset: &Path, val: Option<&Path>, out: &mut dyn Write) -> Result<(), Failure> {
    writeln!(out, "seed={}", cfg.seed)?;
    let (train_set, val_set, vocab) = train_val(dataset, val)?;
    let tc = cfg.train_config();
    let opts = TrainOptions {
        metrics_path: Some(cfg.paths.logs_dir.join("metrics.jsonl")),
        checkpoint_dir: Some(cfg.paths.checkpoints_dir.clone()),
    };
    let mut lines = Vec::new();
    let result = train(initial_policy(cfg, vocab)?, &train_set, &val_set, &tc, &opts, &mut |rec| {
        if let LogRecord::Eval { step, mean_reward, top1, .. } = rec {
            lines.push(format!("step={step} val_mean_reward={mean_reward:.4} top1={top1:.2}"));
        }
    });
    for l in &lines {
        writeln!(out, "{l}")?;
    }
    let outcome = result?;
    let steps = outcome.steps().count();
    writeln!(
        out,
        "done steps={steps} mean_reward_last100={:.4} best_step={} best_val_mean_reward={:.4}",
        outcome.trailing_mean_reward(100),
        outcome.best_step,
        outcome.best_score
    )?;
    writeln!(out, "wrote {}", cfg.paths.checkpoints_dir.join("best.tlm").display())?;
    Ok(())
}

struct EvalArgs {
    open_ended: bool,
    mcq: bool,
    mode: McqMode,
    n_options: usize,
    report: PathBuf,
    mcq_out: Option<PathBuf>,
}

fn cmd_eval(cfg: &RunConfig, dataset: &Path, checkpoint: &Path, a: &EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let d = Dataset::load(dataset)?;
    let lm = TinyLm::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let missing: Vec<&str> =
        d.examples.iter().filter(|e| lm.vocab().encode_answer(&e.answer).is_none()).map(|e| e.question_id.as_str()).collect();
    if !missing.is_empty() {
        return Err(anyhow!(
            "vocab mismatch: {} gold answers use words outside the checkpoint vocabulary (first: {})",
            missing.len(),
            missing[0]
        )
        .into());
    }
    let max_tokens = cfg.train.sampling.max_tokens;
    let mut doc = serde_json::Map::new();
    if a.open_ended {
        let r = eval_open_ended(&lm, &d, &cfg.reward, cfg.train.eval_threshold, max_tokens)?;
        write!(out, "{r}")?;
        doc.insert("open_ended".into(), serde_json::to_value(&r)?);
    }
    if a.mcq {
        let items = make_mcq(&d, a.n_options, cfg.seed)?;
        if let Some(p) = &a.mcq_out {
            write_mcq_jsonl(&items, std::io::BufWriter::new(fs::File::create(p)?))?;
        }
        let r = eval_mcq(&lm, &items, a.mode, &cfg.reward, max_tokens)?;
        write!(out, "{r}")?;
        doc.insert("mcq".into(), serde_json::to_value(&r)?);
    }
    if let Some(parent) = a.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.report, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

fn cmd_sweep(
    cfg: &RunConfig,
    spec_path: &Path,
    dataset: &Path,
    val: Option<&Path>,
    table_out: Option<PathBuf>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Failure> {
    let text = fs::read_to_string(spec_path).with_context(|| format!("cannot read {}", spec_path.display()))?;
    let mut doc: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", spec_path.display()))?;
    // the spec's base only needs the fields that differ from the run config
    let mut base = serde_json::to_value(&cfg.train).map_err(anyhow::Error::from)?;
    if let Some(obj) = doc.as_object_mut() {
        merge_json(&mut base, obj.remove("base").unwrap_or(serde_json::Value::Null));
        obj.insert("base".into(), base);
    }
    let mut spec: SweepSpec = serde_json::from_value(doc).with_context(|| format!("parsing {}", spec_path.display()))?;
    spec.base.reward_cfg = cfg.reward.clone();
    spec.validate()?;
    let (train_set, val_set, vocab) = train_val(dataset, val)?;
    let make = |_: &crate::grpo::TrainConfig| initial_policy(cfg, vocab.clone()).expect("policy config was validated");
    let report = sweep(&spec, &train_set, &val_set, &make, &mut |row| {
        if let Some(e) = &row.error {
            let _ = writeln!(err, "row {} failed: {e}", row.value);
        }
    })?;
    write!(out, "{}", report.to_tsv())?;
    let table_out = table_out.unwrap_or_else(|| cfg.paths.logs_dir.join("sweep.jsonl"));
    if let Some(parent) = table_out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&table_out, report.to_jsonl())?;
    if report.rows.iter().all(|r| r.error.is_some()) {
        return Err(anyhow!("every sweep row failed").into());
    }
    Ok(())
}

fn merge_json(into: &mut serde_json::Value, from: serde_json::Value) {
    match (into, from) {
        (serde_json::Value::Object(a), serde_json::Value::Object(b)) => {
            for (k, v) in b {
                match a.get_mut(&k) {
                    // a tagged enum such as the optimizer is replaced whole
                    Some(slot) if slot.is_object() && v.get("kind").is_none() => merge_json(slot, v),
                    _ => {
                        a.insert(k, v);
                    }
                }
            }
        }
        (_, serde_json::Value::Null) => {}
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn sweep_base_merges_over_config() {
        let mut base = serde_json::json!({"lr": 1, "sampling": {"top_p": 0.9, "max_tokens": 4}, "optimizer": {"kind": "adam", "eps": 1e-8}});
        merge_json(&mut base, serde_json::json!({"sampling": {"top_p": 1.0}, "optimizer": {"kind": "sgd"}}));
        assert_eq!(base, serde_json::json!({"lr": 1, "sampling": {"top_p": 1.0, "max_tokens": 4}, "optimizer": {"kind": "sgd"}}));
    }

    #[test]
    fn overrides_are_extracted() {
        let (rest, ov) = split_overrides(s(&["bin", "train", "--train.group_size", "4", "--dataset", "d.jsonl", "--seed=3", "--policy.feature_dim=32"])).unwrap();
        assert_eq!(rest, s(&["bin", "train", "--dataset", "d.jsonl", "--seed=3"]));
        assert_eq!(ov, vec![("train.group_size".into(), "4".into()), ("policy.feature_dim".into(), "32".into())]);
        assert!(split_overrides(s(&["bin", "--train.seed"])).is_err());
    }

    #[test]
    fn reward_command() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(s(&["bin", "reward", "--pred", "north", "--gold", "south"]), &mut out, &mut err);
        assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert!((v["reward"].as_f64().unwrap() - 0.42).abs() < 1e-12);
    }

    #[test]
    fn bad_override_fails() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(s(&["bin", "reward", "--pred", "a", "--gold", "b", "--train.group_size", "1"]), &mut out, &mut err);
        assert_eq!(code, 1);
        assert!(String::from_utf8_lossy(&err).contains("group_size must be \u{2265} 2"));
        let code = run(s(&["bin", "reward", "--pred", "a", "--gold", "b", "--train.bogus", "1"]), &mut out, &mut err);
        assert_eq!(code, 1);
    }
}
