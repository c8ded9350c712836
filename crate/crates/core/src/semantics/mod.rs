//! Semantic categories for state variables, label sources and
//! label-driven suppression.

mod category;
mod heuristic;
mod predictions;
mod suppress;

pub use category::{SemanticCategory, UnknownCategory};
pub use heuristic::{label_heuristic, HEURISTIC_CONFIDENCE};
pub use predictions::{apply_predictions, parse_predictions, LabelSource, Prediction, PredictionError, DEFAULT_THRESHOLD};
pub use suppress::{default_suppression_rules, suppression_for, SuppressionRule};
