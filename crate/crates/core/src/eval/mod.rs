//! Retrieval evaluation: nDCG / MAP, paired TOST equivalence testing and
//! score-versus-rank power-law diagnostics.

mod metrics;
mod powerlaw;
mod tost;

pub use metrics::{average_precision, evaluate_run, format_metric_tsv, ndcg_at_k, Metric, MetricResult};
pub use powerlaw::{powerlaw_fit, powerlaw_fit_scores, PowerLawFit, POWERLAW_SHIFT_EPS};
pub use tost::{tost, TostResult};
