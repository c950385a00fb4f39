//! Trains on open-ended answers, then evaluates on held-out phrasings both
//! open-ended and as 4-way multiple choice.
//!
//! cargo run --release --example eval_formats

use qpa_grpo::curriculum;
use qpa_grpo::eval::{eval_mcq, eval_open_ended, make_mcq, McqMode};
use qpa_grpo::grpo::{train, TrainOptions};

fn main() -> anyhow::Result<()> {
    let train_set = curriculum::train_set();
    let held_out = curriculum::held_out();
    let cfg = curriculum::train_config();
    let outcome = train(curriculum::initial_policy(), &train_set, &train_set, &cfg, &TrainOptions::default(), &mut |_| {})?;
    let lm = outcome.final_policy;
    let max_tokens = cfg.sampling.max_tokens;

    print!("{}", eval_open_ended(&lm, &held_out, &cfg.reward_cfg, cfg.eval_threshold, max_tokens)?);
    let items = make_mcq(&held_out, 4, 0)?;
    let first = &items[0];
    println!("sample item: {} | options {:?} | gold {}", first.base.question, first.options, first.gold_index);
    for mode in [McqMode::ScoreOptions, McqMode::GenerateThenMatch] {
        print!("{}", eval_mcq(&lm, &items, mode, &cfg.reward_cfg, max_tokens)?);
    }
    Ok(())
}
