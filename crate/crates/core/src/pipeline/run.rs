use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use super::manifest::{ContractSource, ContractSpec, Manifest};
use super::report::{Counters, Finding, FindingSeverity, Report, Timing};
use super::PipelineError;
use crate::detect::{detect_indicators, find_paths_parallel, find_paths_serial, prune_wcc, SearchConfig, SearchGraph};
use crate::diag::{Diagnostic, Stage};
use crate::evm::{assemble, decode_hex, lift_bytecode, LiftInput, SignatureTable};
use crate::graphs::{
    build_callgraph, build_icfg, build_sdg, emit_callgraph, emit_icfg, emit_sdg, extract_revert_deps, extract_rw_deps,
    Bindings, GraphFormat,
};
use crate::ir::{parse_ir, serialize_ir, validate, BlockId, Contract, FuncId, Program, Universe, Visibility};
use crate::semantics::{
    apply_predictions, default_suppression_rules, label_heuristic, parse_predictions, suppression_for, SuppressionRule,
    DEFAULT_THRESHOLD,
};
use crate::taint::{
    confirm_indicators, default_taint_opcodes, global_taint, propagate_parallel, propagate_serial, ConfirmConfig,
    FlowGraph, Severity, TaintConfig, TaintContext,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SemanticsMode {
    /// No labels at all, including labels written in the IR.
    Off,
    Heuristic,
    /// A prediction sidecar layered over the heuristic labels.
    File(PathBuf),
}

impl FromStr for SemanticsMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(SemanticsMode::Off),
            "heuristic" => Ok(SemanticsMode::Heuristic),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(SemanticsMode::File(p.into())),
                _ => Err(format!("unknown semantics mode `{s}` (off, heuristic, file:<path>)")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    CallGraph,
    Icfg,
    Sdg,
}

impl FromStr for GraphKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "callgraph" => Ok(GraphKind::CallGraph),
            "icfg" => Ok(GraphKind::Icfg),
            "sdg" => Ok(GraphKind::Sdg),
            _ => Err(format!("unknown graph `{s}` (callgraph, icfg, sdg)")),
        }
    }
}

/// Which findings make the exit code 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExitPolicy {
    #[default]
    AnyFinding,
    Confirmed,
    Never,
}

impl FromStr for ExitPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "any" => Ok(ExitPolicy::AnyFinding),
            "confirmed" => Ok(ExitPolicy::Confirmed),
            "never" => Ok(ExitPolicy::Never),
            _ => Err(format!("unknown exit policy `{s}` (any, confirmed, never)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    pub serial: bool,
    /// Worker cap for the parallel stages; 0 means one per entry.
    pub workers: usize,
    pub semantics: SemanticsMode,
    pub heuristics: bool,
    pub threshold: f64,
    pub no_sd_edges: bool,
    pub overflow_requires_taint: bool,
    pub suppression: Vec<SuppressionRule>,
    pub max_paths_per_pair: usize,
    pub max_depth: usize,
    pub memo_limit: usize,
    pub iteration_limit: usize,
    pub schedule_seed: Option<u64>,
    pub emit_ir: bool,
    pub emit_graph: Option<(GraphKind, GraphFormat)>,
    /// Wall-clock timings in the report. Off by default so reports stay
    /// byte-identical across runs.
    pub timing: bool,
}

impl Default for Config {
    fn default() -> Self {
        let search = SearchConfig::default();
        Config {
            serial: false,
            workers: 0,
            semantics: SemanticsMode::Heuristic,
            heuristics: true,
            threshold: DEFAULT_THRESHOLD,
            no_sd_edges: false,
            overflow_requires_taint: ConfirmConfig::default().overflow_requires_taint,
            suppression: default_suppression_rules(),
            max_paths_per_pair: search.max_paths_per_pair,
            max_depth: search.max_depth,
            memo_limit: search.memo_limit,
            iteration_limit: TaintConfig::default().iteration_limit,
            schedule_seed: None,
            emit_ir: false,
            emit_graph: None,
            timing: false,
        }
    }
}

struct Clock {
    enabled: bool,
    start: Instant,
    last: Instant,
    stages: BTreeMap<String, f64>,
}

impl Clock {
    fn new(enabled: bool) -> Self {
        let now = Instant::now();
        Clock {
            enabled,
            start: now,
            last: now,
            stages: BTreeMap::new(),
        }
    }

    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        log::debug!("{stage} done in {:?}", now - self.last);
        *self.stages.entry(stage.to_string()).or_default() += (now - self.last).as_secs_f64() * 1e3;
        self.last = now;
    }

    fn finish(self) -> Option<Timing> {
        self.enabled.then(|| Timing {
            total_ms: self.start.elapsed().as_secs_f64() * 1e3,
            stages_ms: self.stages,
        })
    }
}

fn stage_err(stage: Stage, message: impl Into<String>) -> PipelineError {
    PipelineError::Stage {
        stage,
        message: message.into(),
    }
}

fn lift_contract(spec: &ContractSpec, path: &std::path::Path, diags: &mut Vec<Diagnostic>) -> Result<Contract, PipelineError> {
    let text = Manifest::read(path)?;
    let code = if path.extension().is_some_and(|e| e == "easm") {
        assemble(&text).map_err(|e| stage_err(Stage::Frontend, format!("{}: {e}", path.display())))?
    } else {
        decode_hex(&text).map_err(|e| stage_err(Stage::Frontend, format!("{}: {e}", path.display())))?
    };
    let mut table = SignatureTable::default();
    for s in &spec.signatures {
        table
            .add(s)
            .ok_or_else(|| stage_err(Stage::Frontend, format!("contract `{}`: bad signature `{s}`", spec.name)))?;
    }
    let input = LiftInput {
        name: &spec.name,
        address: spec.address,
        signatures: &table,
        storage_names: &spec.storage,
    };
    let lifted = lift_bytecode(&code, &input).map_err(|e| stage_err(Stage::Frontend, format!("{}: {e}", spec.name)))?;
    diags.extend(lifted.diagnostics);
    Ok(lifted.contract)
}

fn load_universe(manifest: &Manifest, diags: &mut Vec<Diagnostic>) -> Result<Universe, PipelineError> {
    let mut parsed: BTreeMap<PathBuf, Universe> = BTreeMap::new();
    let mut contracts = Vec::new();
    for spec in &manifest.contracts {
        let from_ir = |u: &Universe| {
            let mut c = u
                .contract(&spec.name)
                .cloned()
                .ok_or_else(|| stage_err(Stage::Ir, format!("contract `{}` not found in its IR source", spec.name)))?;
            if spec.address.is_some() {
                c.address = spec.address;
            }
            Ok::<_, PipelineError>(c)
        };
        let parse = |text: &str| parse_ir(text).map_err(|e| stage_err(Stage::Ir, format!("{}: {e}", spec.name)));
        let c = match &spec.source {
            ContractSource::IrFile(path) => {
                if !parsed.contains_key(path) {
                    let u = parse(&Manifest::read(path)?)?;
                    parsed.insert(path.clone(), u);
                }
                from_ir(&parsed[path])?
            }
            ContractSource::IrText(text) => from_ir(&parse(text)?)?,
            ContractSource::Bytecode(path) => lift_contract(spec, path, diags)?,
        };
        contracts.push(c);
    }
    let u = Universe::new(contracts);
    let violations = validate(&u);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(stage_err(Stage::Ir, format!("invalid IR: {}", msgs.join("; "))));
    }
    Ok(u)
}

fn apply_semantics(u: &mut Universe, config: &Config, diags: &mut Vec<Diagnostic>) -> Result<(), PipelineError> {
    let model = match &config.semantics {
        SemanticsMode::Off => {
            for s in u.contracts.iter_mut().flat_map(|c| &mut c.state_vars) {
                s.label = None;
            }
            return Ok(());
        }
        SemanticsMode::Heuristic => Vec::new(),
        SemanticsMode::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| stage_err(Stage::Semantics, format!("cannot read {}: {e}", path.display())))?;
            parse_predictions(&text).map_err(|e| stage_err(Stage::Semantics, e.to_string()))?
        }
    };
    let heuristic = if config.heuristics {
        label_heuristic(&Program::new(u))
    } else {
        Vec::new()
    };
    diags.extend(apply_predictions(u, &model, &heuristic, config.threshold));
    Ok(())
}

fn entry_functions(p: &Program<'_>, manifest: &Manifest) -> Result<Vec<FuncId>, PipelineError> {
    let mut out = BTreeSet::new();
    match &manifest.entries {
        Some(names) => {
            for n in names {
                let f = p
                    .lookup_qualified(n)
                    .ok_or_else(|| PipelineError::Manifest(format!("UnknownEntry({n})")))?;
                out.insert(f);
            }
        }
        None => out.extend(p.func_ids().filter(|f| p.function(*f).visibility == Visibility::Public)),
    }
    Ok(out.into_iter().collect())
}

/// Runs every stage on the manifest's contracts and builds the report.
pub fn run_pipeline(manifest: &Manifest, config: &Config) -> Result<Report, PipelineError> {
    let mut clock = Clock::new(config.timing);
    let mut diags = Vec::new();
    let mut universe = load_universe(manifest, &mut diags)?;
    clock.lap(Stage::Frontend);

    apply_semantics(&mut universe, config, &mut diags)?;
    clock.lap(Stage::Semantics);

    let p = Program::new(&universe);
    let mut bindings = Bindings::new();
    for b in &manifest.bindings {
        bindings.bind(b.contract.clone(), b.slot, b.target.clone());
    }
    let cg = build_callgraph(&p, &bindings);
    diags.extend(cg.diagnostics.iter().cloned());
    let icfg = build_icfg(&p, &cg);
    let rw = extract_rw_deps(&p);
    let (revert, revert_diags) = extract_revert_deps(&p, &rw);
    diags.extend(revert_diags);
    let mut sdg = build_sdg(icfg, rw, revert);
    if config.no_sd_edges {
        sdg = sdg.without_sd_edges();
    }
    clock.lap(Stage::Graphs);

    let entry_funcs = entry_functions(&p, manifest)?;
    let entries: Vec<BlockId> = entry_funcs.iter().map(|f| p.entry_of(*f)).collect();
    let indicators = detect_indicators(&p, &cg);
    log::info!(
        "{} functions, {} entries, {} indicators",
        p.num_funcs(),
        entries.len(),
        indicators.len()
    );
    let indicator_funcs: BTreeSet<FuncId> = indicators.iter().map(|i| p.func_of(i.block)).collect();
    let keep = prune_wcc(&cg, &entry_funcs.iter().copied().collect(), &indicator_funcs);
    let graph = SearchGraph::from_icfg(&p, &sdg.icfg, &keep);
    let targets: Vec<BlockId> = indicators.iter().map(|i| i.block).collect();
    let search_cfg = SearchConfig {
        max_paths_per_pair: config.max_paths_per_pair,
        max_depth: config.max_depth,
        workers: config.workers,
        memo_limit: config.memo_limit,
        schedule_seed: config.schedule_seed,
    };
    let search = if config.serial {
        find_paths_serial(&graph, &entries, &targets, &search_cfg)
    } else {
        find_paths_parallel(&graph, &entries, &targets, &search_cfg)
    };
    log::info!("{} paths, {} expansions", search.paths.len(), search.stats.expansions);
    clock.lap(Stage::Detect);

    let flow = FlowGraph::new(&p, &cg, &sdg, &default_taint_opcodes());
    let ctx = TaintContext {
        program: &p,
        sdg: &sdg,
        flow: &flow,
    };
    let taint_cfg = TaintConfig {
        workers: config.workers,
        iteration_limit: config.iteration_limit,
        schedule_seed: config.schedule_seed,
    };
    let taint = if config.serial {
        propagate_serial(&ctx, &entries, &search.paths, &taint_cfg)
    } else {
        propagate_parallel(&ctx, &entries, &search.paths, &taint_cfg)
    };
    diags.extend(taint.diagnostics.iter().cloned());
    let confirm_cfg = ConfirmConfig {
        overflow_requires_taint: config.overflow_requires_taint,
    };
    let confirmed = confirm_indicators(&p, &sdg, &taint.state, &indicators, &search.paths, &confirm_cfg);
    let (tainted_funcs, tainted_vars) = global_taint(&p, &sdg, &taint.state);
    clock.lap(Stage::Taint);

    let truncated: BTreeSet<(BlockId, usize)> = search.truncated.iter().copied().collect();
    let mut findings = Vec::new();
    let mut suppressed = Vec::new();
    for f in &confirmed {
        let ind = &indicators[f.indicator];
        let mut finding = Finding {
            rule: ind.rule,
            severity: match f.severity {
                Severity::Confirmed => FindingSeverity::Confirmed,
                Severity::Reachable => FindingSeverity::Reachable,
            },
            suppressed_by: None,
            function: p.func_name(p.func_of(ind.block)).to_string(),
            block: p.block_name(ind.block).to_string(),
            entry: p.func_name(p.func_of(f.entry)).to_string(),
            detail: ind.detail.clone(),
            path: f.path_string.clone(),
            blocks: f.path.iter().map(|b| p.block_name(*b).to_string()).collect(),
            tainted_functions: f.tainted_functions.iter().map(|g| p.func_name(*g).to_string()).collect(),
            tainted_state_vars: f.tainted_state_vars.iter().map(|s| p.state_info(*s).name.clone()).collect(),
            diagnostics: Vec::new(),
        };
        if truncated.contains(&(f.entry, f.indicator)) {
            finding.diagnostics.push(format!(
                "PathCapReached: more than {} paths from {}; the first one found is shown",
                config.max_paths_per_pair, finding.entry
            ));
        }
        match suppression_for(&p, &config.suppression, ind) {
            Some(id) => {
                diags.push(Diagnostic::info(
                    Stage::Semantics,
                    format!("Suppressed {} at {} by {id}", ind.rule, finding.block),
                ));
                finding.severity = FindingSeverity::Suppressed;
                finding.suppressed_by = Some(id.to_string());
                suppressed.push(finding);
            }
            None => findings.push(finding),
        }
    }

    let artifacts = artifacts(&p, &universe, &cg, &sdg, config);
    let counters = Counters {
        contracts: universe.contracts.len(),
        functions: p.num_funcs(),
        blocks: p.num_blocks(),
        entries: entries.len(),
        indicators: indicators.len(),
        kept_functions: keep.len(),
        paths: search.paths.len(),
        truncated_pairs: search.truncated.len(),
        expansions: search.stats.expansions,
        memo_hits: search.stats.memo_hits,
        memo_entries: search.stats.memo_entries,
        memo_fallbacks: search.stats.fallbacks,
        merge_iterations: taint.stats.merge_iterations,
        taint_steps: taint.stats.steps,
        tainted_keys: taint.state.tainted.len(),
        tainted_functions: tainted_funcs.len(),
        tainted_state_vars: tainted_vars.len(),
    };
    clock.lap(Stage::Report);
    Ok(Report {
        contracts: universe.contracts.iter().map(|c| c.name.clone()).collect(),
        entries: entry_funcs.iter().map(|f| p.func_name(*f).to_string()).collect(),
        findings,
        suppressed,
        tainted_functions: tainted_funcs.iter().map(|f| p.func_name(*f).to_string()).collect(),
        tainted_state_vars: tainted_vars.iter().map(|s| p.state_info(*s).name.clone()).collect(),
        counters,
        diagnostics: diags,
        timing: clock.finish(),
        ir: artifacts.0,
        graph: artifacts.1,
    })
}

fn artifacts(
    p: &Program<'_>,
    u: &Universe,
    cg: &crate::graphs::CallGraph,
    sdg: &crate::graphs::Sdg,
    config: &Config,
) -> (Option<String>, Option<String>) {
    let ir = config.emit_ir.then(|| serialize_ir(u));
    let graph = config.emit_graph.map(|(kind, format)| match kind {
        GraphKind::CallGraph => emit_callgraph(p, cg, format),
        GraphKind::Icfg => emit_icfg(p, &sdg.icfg, format),
        GraphKind::Sdg => emit_sdg(p, sdg, format),
    });
    (ir, graph)
}

impl Report {
    pub fn exit_code(&self, policy: ExitPolicy) -> i32 {
        let hit = match policy {
            ExitPolicy::AnyFinding => !self.findings.is_empty(),
            ExitPolicy::Confirmed => self.findings.iter().any(|f| f.severity == FindingSeverity::Confirmed),
            ExitPolicy::Never => false,
        };
        i32::from(hit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_parse() {
        assert_eq!("off".parse(), Ok(SemanticsMode::Off));
        assert_eq!("file:x.pred".parse(), Ok(SemanticsMode::File("x.pred".into())));
        assert!("file:".parse::<SemanticsMode>().is_err());
        assert_eq!("sdg".parse(), Ok(GraphKind::Sdg));
        assert_eq!("never".parse(), Ok(ExitPolicy::Never));
    }

    #[test]
    fn empty_manifest_gives_empty_report() {
        let r = run_pipeline(&Manifest::default(), &Config::default()).unwrap();
        assert!(r.findings.is_empty() && r.suppressed.is_empty());
        assert_eq!(r.exit_code(ExitPolicy::AnyFinding), 0);
    }
}
