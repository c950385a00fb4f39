//! Scores a few predictions against gold answers.
//!
//! cargo run --example reward_scoring

use qpa_grpo::{combined_reward, RewardConfig};

fn main() {
    let cfg = RewardConfig::default();
    let pairs = [
        ("under the bridge", "under the bridge"),
        ("under bridge", "under the bridge"),
        ("blue stars", "blue star"),
        ("Answer: the red door", "red door"),
        ("north", "south"),
        ("", "seven"),
    ];
    println!("{:<24}{:<20}{:>6}{:>6}{:>8}", "prediction", "gold", "f1", "lev", "reward");
    for (pred, gold) in pairs {
        let answer = qpa_grpo::reward::extract_final_answer(pred, &cfg);
        let b = combined_reward(answer, gold, &cfg).expect("gold is non-empty");
        println!("{:<24}{:<20}{:>6.2}{:>6}{:>8.3}", format!("{pred:?}"), gold, b.f1, b.lev_distance, b.reward);
    }
}
