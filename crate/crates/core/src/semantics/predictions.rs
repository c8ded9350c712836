//! Prediction sidecar files and label resolution.
//!
//! One record per line, `#` comments allowed:
//!
//! ```text
//! FundsHandler mapping=3 BalanceMapping 0.97
//! FundsHandler slot=5 TimeUint 0.91
//! ```
//!
//! The slot spec is `slot=N` for scalars, `mapping=N` or `array=N` for the
//! base slot of a mapping or array.

use std::collections::BTreeMap;

use thiserror::Error;

use super::SemanticCategory;
use crate::diag::{Diagnostic, Stage};
use crate::ir::{format_word, parse_word, StateKind, Universe, Word};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub contract: String,
    pub slot: Word,
    pub kind: StateKind,
    pub category: SemanticCategory,
    pub confidence: f64,
}

impl Prediction {
    /// The sidecar line for this prediction.
    pub fn to_line(&self) -> String {
        let key = match self.kind {
            StateKind::Scalar => "slot",
            StateKind::Mapping => "mapping",
            StateKind::Array => "array",
        };
        format!(
            "{} {key}={} {} {}",
            self.contract,
            format_word(&self.slot),
            self.category,
            self.confidence
        )
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PredictionError {
    #[error("MalformedPrediction at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

fn malformed(line: usize, message: impl Into<String>) -> PredictionError {
    PredictionError::Malformed {
        line,
        message: message.into(),
    }
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>, PredictionError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let [contract, spec, category, confidence] = fields.as_slice() else {
            return Err(malformed(line, format!("expected 4 fields, found {}", fields.len())));
        };
        let (key, slot) = spec
            .split_once('=')
            .ok_or_else(|| malformed(line, format!("bad slot spec `{spec}`")))?;
        let kind = match key {
            "slot" => StateKind::Scalar,
            "mapping" => StateKind::Mapping,
            "array" => StateKind::Array,
            _ => return Err(malformed(line, format!("bad slot spec `{spec}`"))),
        };
        let slot = parse_word(slot).ok_or_else(|| malformed(line, format!("bad slot `{slot}`")))?;
        let category: SemanticCategory = category
            .parse()
            .map_err(|e| malformed(line, format!("{e}")))?;
        let confidence: f64 = confidence
            .parse()
            .ok()
            .filter(|c: &f64| (0.0..=1.0).contains(c))
            .ok_or_else(|| malformed(line, format!("confidence `{confidence}` not in [0, 1]")))?;
        out.push(Prediction {
            contract: contract.to_string(),
            slot,
            kind,
            category,
            confidence,
        });
    }
    Ok(out)
}

pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// Where a label came from. Later variants win ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LabelSource {
    Heuristic,
    Model,
    Ir,
}

/// Sets every state variable's label from the best available source.
///
/// Candidates are the label already present in the IR (confidence 1.0),
/// model predictions at or above `threshold`, and heuristic predictions.
/// The highest confidence wins, then the source order IR > model > heuristic.
/// A winning Unknown leaves the variable unlabeled. Predictions naming a slot
/// absent from the universe produce an UnresolvableSlot warning.
pub fn apply_predictions(
    universe: &mut Universe,
    model: &[Prediction],
    heuristic: &[Prediction],
    threshold: f64,
) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut best: BTreeMap<(usize, usize), (f64, LabelSource, SemanticCategory)> = BTreeMap::new();
    for (ci, c) in universe.contracts.iter().enumerate() {
        for (si, s) in c.state_vars.iter().enumerate() {
            if let Some(l) = s.label {
                best.insert((ci, si), (1.0, LabelSource::Ir, l));
            }
        }
    }
    let model = model
        .iter()
        .filter(|p| p.confidence >= threshold)
        .map(|p| (p, LabelSource::Model));
    let heuristic = heuristic.iter().map(|p| (p, LabelSource::Heuristic));
    for (p, source) in model.chain(heuristic) {
        let found = universe
            .contracts
            .iter()
            .position(|c| c.name == p.contract)
            .and_then(|ci| {
                let si = universe.contracts[ci]
                    .state_vars
                    .iter()
                    .position(|s| s.slot == p.slot && s.kind == p.kind)?;
                Some((ci, si))
            });
        let Some(key) = found else {
            diags.push(Diagnostic::warning(
                Stage::Semantics,
                format!(
                    "UnresolvableSlot({}, {} {})",
                    p.contract,
                    p.kind,
                    format_word(&p.slot)
                ),
            ));
            continue;
        };
        let cand = (p.confidence, source, p.category);
        let replace = match best.get(&key) {
            None => true,
            Some(cur) => (cand.0, cand.1) > (cur.0, cur.1),
        };
        if replace {
            best.insert(key, cand);
        }
    }
    for ((ci, si), (_, _, category)) in best {
        universe.contracts[ci].state_vars[si].label = (category != SemanticCategory::Unknown).then_some(category);
    }
    diags
}
