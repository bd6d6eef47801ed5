//! Difficulty-aligned trajectory matching.

#[cfg(test)]
pub(crate) mod fixture;
mod matching;
mod run;
mod synset;
mod tune;
mod window;

pub use matching::{matching_loss, segment_loss, segment_objective, EPS_DEN};
pub use run::{distill, DistillConfig, DistillState, LogRow};
pub use synset::{build_correct_subset, init_synthetic, label_std_stat, LabelMode, Provenance, SyntheticSet, MIN_ALPHA, ONE_HOT_MARGIN};
pub use tune::{auto_tune_window, first_unmatched_start, Probe, TuneConfig, TuneOutcome};
pub use window::{advance_window, sample_start_epoch, MatchWindow};
