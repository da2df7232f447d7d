//! Rank AUC, video-level evaluation by subsequence averaging, and the
//! ablation runner.

mod ablation;
mod metrics;
mod report;


pub use ablation::{ablation_run, train_and_evaluate, AblationAxis, AblationRow, AblationTable, RunCache, RunResult};
pub use metrics::{auc, brute_force_auc};
pub use report::{evaluate, synth_eval_splits, EvalReport, EvalSplit, ScoredVideo, SubsequencePolicy, FINE_GRAINED, IN_DISTRIBUTION};
