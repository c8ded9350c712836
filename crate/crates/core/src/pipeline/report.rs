use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::detect::Rule;
use crate::diag::{Diagnostic, Level};
use crate::graphs::{Access, Sdg};
use crate::ir::{FuncId, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FindingSeverity {
    Confirmed,
    Reachable,
    Suppressed,
}

impl FindingSeverity {
    fn as_str(self) -> &'static str {
        match self {
            FindingSeverity::Confirmed => "confirmed",
            FindingSeverity::Reachable => "reachable",
            FindingSeverity::Suppressed => "suppressed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub rule: Rule,
    pub severity: FindingSeverity,
    /// Id of the suppression rule, for suppressed findings only.
    pub suppressed_by: Option<String>,
    /// Function holding the indicator.
    pub function: String,
    pub block: String,
    /// Entry function the witness path starts at.
    pub entry: String,
    pub detail: String,
    pub path: String,
    /// Witness block path.
    pub blocks: Vec<String>,
    pub tainted_functions: Vec<String>,
    pub tainted_state_vars: Vec<String>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub contracts: usize,
    pub functions: usize,
    pub blocks: usize,
    pub entries: usize,
    pub indicators: usize,
    /// Functions left after connected-component pruning.
    pub kept_functions: usize,
    pub paths: usize,
    pub truncated_pairs: usize,
    pub expansions: u64,
    pub memo_hits: u64,
    pub memo_entries: u64,
    pub memo_fallbacks: u64,
    pub merge_iterations: u64,
    pub taint_steps: u64,
    pub tainted_keys: usize,
    pub tainted_functions: usize,
    pub tainted_state_vars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub total_ms: f64,
    pub stages_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub contracts: Vec<String>,
    pub entries: Vec<String>,
    pub findings: Vec<Finding>,
    pub suppressed: Vec<Finding>,
    /// Functions and state variables tainted from any entry.
    pub tainted_functions: Vec<String>,
    pub tainted_state_vars: Vec<String>,
    pub counters: Counters,
    pub diagnostics: Vec<Diagnostic>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("UnknownFormat: `{0}` (text, json)")]
    UnknownFormat(String),
}

impl FromStr for Format {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self, RenderError> {
        match s {
            "text" => Ok(Format::Text),
            "json" => Ok(Format::Json),
            _ => Err(RenderError::UnknownFormat(s.to_string())),
        }
    }
}

fn render_finding(out: &mut String, f: &Finding) {
    let tag = match &f.suppressed_by {
        Some(id) => format!("suppressed by {id}"),
        None => f.severity.as_str().to_string(),
    };
    let _ = writeln!(out, "  [{tag}] {} from {}", f.block, f.entry);
    let _ = writeln!(out, "    path: {}", f.path);
    if !f.detail.is_empty() {
        let _ = writeln!(out, "    {}", f.detail);
    }
    if !f.tainted_state_vars.is_empty() {
        let _ = writeln!(out, "    tainted state: {}", f.tainted_state_vars.join(", "));
    }
    for d in &f.diagnostics {
        let _ = writeln!(out, "    note: {d}");
    }
}

fn render_text(r: &Report) -> String {
    let mut out = String::new();
    if let Some(ir) = &r.ir {
        let _ = writeln!(out, "{ir}");
    }
    if let Some(g) = &r.graph {
        let _ = writeln!(out, "{g}");
    }
    if r.findings.is_empty() {
        out.push_str("No findings.\n");
    }
    for rule in Rule::ALL {
        let group: Vec<&Finding> = r.findings.iter().filter(|f| f.rule == rule).collect();
        if group.is_empty() {
            continue;
        }
        let _ = writeln!(out, "{rule} ({})", group.len());
        for f in group {
            render_finding(&mut out, f);
        }
    }
    if !r.suppressed.is_empty() {
        let _ = writeln!(out, "Suppressed ({})", r.suppressed.len());
        for f in &r.suppressed {
            let _ = writeln!(out, "  {}", f.rule);
            render_finding(&mut out, f);
        }
    }
    for d in r.diagnostics.iter().filter(|d| d.level != Level::Info) {
        let _ = writeln!(out, "{d}");
    }
    out
}

pub fn render_report(report: &Report, format: &str) -> Result<String, RenderError> {
    Ok(match format.parse::<Format>()? {
        Format::Text => render_text(report),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    })
}

/// Checks a path string against the SDG: consecutive functions must share a
/// call edge, `F→[v..]→G` needs a revert edge on each `v` from a block of `F`
/// to a block of `G`, and a trailing list names state accessed in the last
/// function.
pub fn check_path_string(program: &Program<'_>, sdg: &Sdg, path: &str) -> Result<(), String> {
    let tokens: Vec<&str> = path.split('→').collect();
    let func = |t: &str| program.lookup_qualified(t).ok_or_else(|| format!("unknown function `{t}`"));
    let vars = |t: &str| -> Option<Vec<String>> {
        let inner = t.strip_prefix('[')?.strip_suffix(']')?;
        Some(inner.split(',').map(str::to_string).collect())
    };
    let mut last: FuncId = func(tokens.first().copied().unwrap_or_default())?;
    let mut i = 1;
    while i < tokens.len() {
        match vars(tokens[i]) {
            None => {
                let g = func(tokens[i])?;
                let linked = sdg
                    .icfg
                    .edges
                    .iter()
                    .any(|e| program.func_of(e.src) == last && program.func_of(e.dst) == g);
                if !linked {
                    return Err(format!("no call edge {} → {}", program.func_name(last), tokens[i]));
                }
                last = g;
                i += 1;
            }
            Some(vs) if i + 1 < tokens.len() => {
                let g = func(tokens[i + 1])?;
                for v in &vs {
                    let ok = sdg.revert.iter().any(|d| {
                        program.func_of(d.writer) == last
                            && program.func_of(d.target) == g
                            && program.state_name(d.state) == v
                    });
                    if !ok {
                        return Err(format!("no revert edge on `{v}` into {}", tokens[i + 1]));
                    }
                }
                last = g;
                i += 2;
            }
            Some(vs) => {
                for v in &vs {
                    let ok = sdg.rw.iter().any(|d| {
                        program.func_of(d.block) == last
                            && program.state_name(d.state) == v
                            && matches!(d.access, Access::Write | Access::Read)
                    });
                    if !ok {
                        return Err(format!("`{v}` is not accessed in {}", program.func_name(last)));
                    }
                }
                i += 1;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(findings: Vec<Finding>) -> Report {
        Report {
            contracts: vec![],
            entries: vec![],
            findings,
            suppressed: vec![],
            tainted_functions: vec![],
            tainted_state_vars: vec![],
            counters: Counters::default(),
            diagnostics: vec![],
            timing: None,
            ir: None,
            graph: None,
        }
    }

    #[test]
    fn empty_text_report() {
        assert_eq!(render_report(&report(vec![]), "text").unwrap(), "No findings.\n");
    }

    #[test]
    fn unknown_format() {
        assert_eq!(
            render_report(&report(vec![]), "xml"),
            Err(RenderError::UnknownFormat("xml".into()))
        );
    }

    #[test]
    fn text_groups_by_rule() {
        let f = |rule, block: &str| Finding {
            rule,
            severity: FindingSeverity::Confirmed,
            suppressed_by: None,
            function: "A.f".into(),
            block: block.into(),
            entry: "A.f".into(),
            detail: String::new(),
            path: "A.f→[x]".into(),
            blocks: vec![],
            tainted_functions: vec![],
            tainted_state_vars: vec![],
            diagnostics: vec![],
        };
        let text = render_report(
            &report(vec![f(Rule::Timestamp, "A.f.b1"), f(Rule::Reentrancy, "A.f.b2"), f(Rule::Timestamp, "A.f.b3")]),
            "text",
        )
        .unwrap();
        let re = text.find("Reentrancy (1)").unwrap();
        let ts = text.find("Timestamp (2)").unwrap();
        assert!(re < ts);
        assert!(text[ts..].contains("A.f.b1") && text[ts..].contains("A.f.b3"));
        assert!(text.contains("path: A.f→[x]"));
    }
}
