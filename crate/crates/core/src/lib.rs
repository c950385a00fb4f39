//! Mining context–question–pause–answer examples from subtitle transcripts and
//! training a small generative policy on them with group-relative policy
//! optimization.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! 1. [`transcript`] parses SRT / WebVTT files into ordered cues.
//! 2. [`extract`] finds questions followed by a silent pause and an answer, and
//!    builds a JSONL dataset ([`dataset`] handles splits and statistics).
//! 3. [`reward`] scores an answer against the gold answer with a blend of
//!    token F1 and normalized Levenshtein similarity.
//! 4. [`policy`] provides [`policy::TinyLm`], a linear-softmax autoregressive
//!    policy with exact analytic gradients, and [`grpo`] trains it.
//! 5. [`eval`] scores a policy on open-ended generation and multiple choice.
//!
//! Runnable walkthroughs for each stage live in `examples/`.

pub mod cli;
pub mod config;
pub mod curriculum;
pub mod dataset;
pub mod eval;
pub mod extract;
pub mod grpo;
pub mod hashing;
pub mod policy;
pub mod reward;
pub mod transcript;

pub use dataset::{Dataset, QaExample};
pub use policy::{Policy, TinyLm, Vocab};
pub use reward::{combined_reward, RewardBreakdown, RewardConfig};
