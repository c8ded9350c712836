use std::collections::BTreeSet;

use super::*;
use crate::detect::{detect_indicators, find_paths_serial, Rule, SearchConfig, SearchGraph};
use crate::graphs::{build_callgraph, build_icfg, build_sdg, extract_revert_deps, extract_rw_deps, Bindings, Sdg};
use crate::ir::{parse_ir, BlockId, Program};

const FIG2: &str = include_str!("../../tests/fixtures/fig2.ir");

struct Run {
    path_strings: Vec<(Rule, String)>,
    state_vars: Vec<Vec<String>>,
    funcs: Vec<Vec<String>>,
    serial: TaintOutcome,
}

fn sdg_for(p: &Program<'_>) -> (crate::graphs::CallGraph, Sdg) {
    let cg = build_callgraph(p, &Bindings::new());
    let icfg = build_icfg(p, &cg);
    let rw = extract_rw_deps(p);
    let (revert, _) = extract_revert_deps(p, &rw);
    (cg, build_sdg(icfg, rw, revert))
}

fn entries(p: &Program<'_>, names: &[&str]) -> Vec<BlockId> {
    names
        .iter()
        .map(|n| p.entry_of(p.lookup_qualified(n).unwrap()))
        .collect()
}

fn analyze(src: &str, entry_names: &[&str], strip: impl Fn(&Sdg) -> Sdg) -> Run {
    let u = parse_ir(src).unwrap();
    let p = Program::new(&u);
    let (cg, sdg) = sdg_for(&p);
    let sdg = strip(&sdg);
    let flow = FlowGraph::new(&p, &cg, &sdg, &default_taint_opcodes());
    let inds = detect_indicators(&p, &cg);
    let targets: Vec<BlockId> = inds.iter().map(|i| i.block).collect();
    let all = p.func_ids().collect();
    let graph = SearchGraph::from_icfg(&p, &sdg.icfg, &all);
    let es = entries(&p, entry_names);
    let paths = find_paths_serial(&graph, &es, &targets, &SearchConfig::default()).paths;
    let ctx = TaintContext {
        program: &p,
        sdg: &sdg,
        flow: &flow,
    };
    let serial = propagate_serial(&ctx, &es, &paths, &TaintConfig::default());
    let findings = confirm_indicators(&p, &sdg, &serial.state, &inds, &paths, &ConfirmConfig::default());
    Run {
        path_strings: findings
            .iter()
            .map(|f| (inds[f.indicator].rule, f.path_string.clone()))
            .collect(),
        state_vars: findings
            .iter()
            .map(|f| f.tainted_state_vars.iter().map(|s| p.state_name(*s).to_string()).collect())
            .collect(),
        funcs: findings
            .iter()
            .map(|f| f.tainted_functions.iter().map(|g| p.func_name(*g).to_string()).collect())
            .collect(),
        serial,
    }
}

const FIG2_ENTRIES: [&str; 2] = ["Auction.bid", "Auction.endAuction"];

#[test]
fn fig2_timestamp_path_crosses_revert_edge() {
    let run = analyze(FIG2, &FIG2_ENTRIES, Sdg::clone);
    assert!(
        run.path_strings.contains(&(
            Rule::Timestamp,
            "Auction.bid→FundsHandler.recordBid→[refunds]→FundsHandler.finalizeAuction→[seller,itemOwner]".into()
        )),
        "{:?}",
        run.path_strings
    );
    let reentrancy: Vec<_> = run.path_strings.iter().filter(|(r, _)| *r == Rule::Reentrancy).collect();
    assert_eq!(reentrancy.len(), 1, "{reentrancy:?}");
    assert!(run.path_strings.iter().all(|(r, _)| *r != Rule::Overflow));
}

#[test]
fn dropping_revert_edges_loses_item_owner() {
    let with = analyze(FIG2, &["Auction.bid"], Sdg::clone);
    let without = analyze(FIG2, &["Auction.bid"], Sdg::without_revert_edges);
    assert!(with.state_vars[0].contains(&"itemOwner".to_string()));
    assert!(!without.state_vars[0].contains(&"itemOwner".to_string()));
    assert!(with.funcs[0].contains(&"FundsHandler.finalizeAuction".to_string()));
    assert!(without.funcs[0].len() < with.funcs[0].len());
}

#[test]
fn fig2_parallel_matches_serial() {
    let u = parse_ir(FIG2).unwrap();
    let p = Program::new(&u);
    let (cg, sdg) = sdg_for(&p);
    let flow = FlowGraph::new(&p, &cg, &sdg, &default_taint_opcodes());
    let ctx = TaintContext {
        program: &p,
        sdg: &sdg,
        flow: &flow,
    };
    let es: Vec<BlockId> = p.func_ids().map(|f| p.entry_of(f)).collect();
    let serial = propagate_serial(&ctx, &es, &[], &TaintConfig::default());
    for workers in [1, 2, 4] {
        for seed in 0..4 {
            let cfg = TaintConfig {
                workers,
                schedule_seed: Some(seed),
                ..Default::default()
            };
            assert_eq!(propagate_parallel(&ctx, &es, &[], &cfg).state, serial.state);
        }
    }
}

#[test]
fn pending_edges_have_clean_sources() {
    let run = analyze(FIG2, &FIG2_ENTRIES, Sdg::clone);
    let st = &run.serial.state;
    assert!(st.pending.iter().all(|e| !st.tainted.contains(&e.src)));
    assert!(st.inert.iter().all(|e| !e.fires));
}

#[test]
fn private_only_universe_has_no_taint() {
    let src = "contract A\nfunction f private(x:uint)\nblock b0\n  v0 = ADD %x 1\n  RETURN v0\n";
    let run = analyze(src, &["A.f"], Sdg::clone);
    assert!(run.serial.state.tainted.is_empty());
}

#[test]
fn constant_overflow_is_only_reachable() {
    let src = "contract A\nfunction f public()\nblock b0\n  v0 = ADD 1 2\n  RETURN v0\n";
    let u = parse_ir(src).unwrap();
    let p = Program::new(&u);
    let (cg, sdg) = sdg_for(&p);
    let flow = FlowGraph::new(&p, &cg, &sdg, &default_taint_opcodes());
    let ctx = TaintContext {
        program: &p,
        sdg: &sdg,
        flow: &flow,
    };
    let inds = detect_indicators(&p, &cg);
    let es = entries(&p, &["A.f"]);
    let graph = SearchGraph::from_icfg(&p, &sdg.icfg, &p.func_ids().collect());
    let targets: Vec<BlockId> = inds.iter().map(|i| i.block).collect();
    let paths = find_paths_serial(&graph, &es, &targets, &SearchConfig::default()).paths;
    let out = propagate_serial(&ctx, &es, &paths, &TaintConfig::default());
    let f = confirm_indicators(&p, &sdg, &out.state, &inds, &paths, &ConfirmConfig::default());
    assert_eq!(f.len(), 1);
    assert_eq!(f[0].severity, Severity::Reachable);
    let loose = ConfirmConfig {
        overflow_requires_taint: false,
    };
    let f = confirm_indicators(&p, &sdg, &out.state, &inds, &paths, &loose);
    assert_eq!(f[0].severity, Severity::Confirmed);
}

#[test]
fn iteration_limit_reports_partial_state() {
    let u = parse_ir(FIG2).unwrap();
    let p = Program::new(&u);
    let (cg, sdg) = sdg_for(&p);
    let flow = FlowGraph::new(&p, &cg, &sdg, &default_taint_opcodes());
    let ctx = TaintContext {
        program: &p,
        sdg: &sdg,
        flow: &flow,
    };
    let es = entries(&p, &FIG2_ENTRIES);
    let full = propagate_serial(&ctx, &es, &[], &TaintConfig::default());
    let cfg = TaintConfig {
        iteration_limit: 2,
        ..Default::default()
    };
    let cut = propagate_serial(&ctx, &es, &[], &cfg);
    assert!(!cut.diagnostics.is_empty());
    assert!(cut.diagnostics[0].message.starts_with("IterationLimit"));
    let cut_keys: BTreeSet<_> = cut.state.tainted.iter().collect();
    assert!(cut_keys.len() < full.state.tainted.len());
}
