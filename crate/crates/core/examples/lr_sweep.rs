//! One-dimension-at-a-time sweep on the curriculum: learning rate first, then
//! group size with the winning rate.
//!
//! cargo run --release --example lr_sweep

use qpa_grpo::curriculum;
use qpa_grpo::grpo::{sequential_sweep, SelectionMetric};
use serde_json::json;

fn main() -> anyhow::Result<()> {
    let train_set = curriculum::train_set();
    let held_out = curriculum::held_out();
    let mut base = curriculum::train_config();
    base.max_steps = 1000;
    let stages = vec![
        ("learning_rate".to_string(), vec![json!(1e-3), json!(1e-2), json!(1e-1)]),
        ("group_size".to_string(), vec![json!(4), json!(8)]),
    ];
    let reports =
        sequential_sweep(&base, &stages, SelectionMetric::ValMeanReward, &train_set, &held_out, &|_| curriculum::initial_policy())?;
    for r in reports {
        println!("{}", r.to_tsv());
    }
    Ok(())
}
