//! Trains the tiny policy on the synthetic curriculum with GRPO.
//!
//! cargo run --release --example train_curriculum -- [checkpoint.tlm]

use qpa_grpo::curriculum;
use qpa_grpo::grpo::{train, LogRecord, TrainOptions};

fn main() -> anyhow::Result<()> {
    let train_set = curriculum::train_set();
    let held_out = curriculum::held_out();
    let cfg = curriculum::train_config();
    let started = std::time::Instant::now();

    let outcome = train(curriculum::initial_policy(), &train_set, &held_out, &cfg, &TrainOptions::default(), &mut |rec| {
        if let LogRecord::Eval { step, mean_reward, top1, .. } = rec {
            println!("step {step:>5}  held-out reward {mean_reward:.3}  top1 {top1:.1}%");
        }
    })?;

    println!(
        "trailing-100 training reward {:.3} in {:.1?}; best held-out {:.3} at step {}",
        outcome.trailing_mean_reward(100),
        started.elapsed(),
        outcome.best_score,
        outcome.best_step
    );
    if let Some(path) = std::env::args().nth(1) {
        outcome.best_policy.save(path.as_ref())?;
        println!("saved {path}");
    }
    Ok(())
}
