//! Samples a group of answers from a randomly initialized policy and rescores
//! one of them.
//!
//! cargo run --example sample_policy

use qpa_grpo::curriculum;
use qpa_grpo::policy::{greedy_decode, sample_group, Policy, SamplingConfig, TinyLm};

fn main() -> anyhow::Result<()> {
    let lm = TinyLm::random(curriculum::vocab(), 32, 0, 1.0, 7)?;
    let example = curriculum::example(3, 0);
    println!("question: {}  (gold: {})", example.question, example.answer);

    let cfg = SamplingConfig { max_tokens: 4, ..SamplingConfig::default() };
    let group = sample_group(&lm, &example, 8, &cfg, 42)?;
    for g in &group {
        println!("  {:<28} logprob {:>8.3}", format!("{:?}", g.text), g.logprob);
    }

    let prompt = lm.prompt(&example)?;
    let (lp, grad) = lm.sequence_logprob_and_grad(&prompt, &group[0].tokens)?;
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    println!("rescored first sample: logprob {lp:.3}, gradient norm {norm:.3} over {} weights", lm.num_params());
    println!("greedy: {:?}", greedy_decode(&lm, &prompt, 4)?.text);
    Ok(())
}
