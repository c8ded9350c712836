mod common;

use std::collections::BTreeSet;

use common::*;
use crossinspect::diag::Stage;
use crossinspect::graphs::GraphFormat;
use crossinspect::ir::{parse_ir, BlockId, Opcode};
use crossinspect::pipeline::{
    check_path_string, render_report, run_pipeline, Config, ExitPolicy, FindingSeverity, GraphKind, Manifest,
    PipelineError, Report, SemanticsMode,
};

const FIG2_PATH: &str = "Auction.bid→FundsHandler.recordBid→[refunds]→FundsHandler.finalizeAuction→[seller,itemOwner]";

fn run(stem: &str, config: &Config) -> Report {
    run_pipeline(&manifest(stem), config).unwrap()
}

fn has(r: &Report, rule: &str, block: &str, entry: &str) -> bool {
    r.findings
        .iter()
        .any(|f| f.rule.to_string() == rule && f.block == block && f.entry == entry)
}

#[test]
fn fig2_reports_the_cross_contract_timestamp_path() {
    for stem in ["fig2", "fig2_bytecode"] {
        let r = run(stem, &Config::default());
        let ts = r
            .findings
            .iter()
            .find(|f| f.path == FIG2_PATH)
            .unwrap_or_else(|| panic!("{stem}: {:#?}", r.findings));
        assert_eq!(ts.rule.to_string(), "Timestamp");
        assert_eq!(ts.severity, FindingSeverity::Confirmed);
        assert_eq!(ts.block, "FundsHandler.recordBid.b2");
        assert!(r
            .findings
            .iter()
            .any(|f| f.rule.to_string() == "Reentrancy" && f.function == "FundsHandler.finalizeAuction"));
        assert!(r.findings.iter().all(|f| f.rule.to_string() != "Overflow"), "{stem}");
    }
}

#[test]
fn fig2_ir_and_bytecode_agree() {
    let key = |r: &Report| -> BTreeSet<(String, String, String, String)> {
        r.findings
            .iter()
            .map(|f| (f.rule.to_string(), f.function.clone(), f.entry.clone(), f.path.clone()))
            .collect()
    };
    let ir = run("fig2", &Config::default());
    let bc = run("fig2_bytecode", &Config::default());
    assert_eq!(key(&ir), key(&bc));
    assert_eq!(ir.tainted_functions, bc.tainted_functions);
}

#[test]
fn fixture_findings() {
    let r = run("fig5", &Config::default());
    assert_eq!(r.findings.len(), 1);
    assert!(has(&r, "Timestamp", "C.F2.b3", "C.F2"));

    let r = run("fig7", &Config::default());
    assert!(has(&r, "Timestamp", "M.shared.b3", "M.e1"));
    assert!(has(&r, "Timestamp", "M.shared.b3", "M.e2"));

    let r = run("fig11", &Config::default());
    assert!(has(&r, "DoS", "Test2.bet.b2", "Test2.bet"));
    assert!(has(&r, "Reentrancy", "Test2.transferToWinner.b2", "Test2.bet"));

    let r = run("fig11_noloop", &Config::default());
    assert!(r.findings.iter().all(|f| f.rule.to_string() != "DoS"));
    assert!(has(&r, "Reentrancy", "Test2.transferToWinner.b2", "Test2.bet"));
}

#[test]
fn fig9_overflow_depends_on_semantics() {
    let off = run(
        "fig9",
        &Config {
            semantics: SemanticsMode::Off,
            ..Config::default()
        },
    );
    assert!(has(&off, "Overflow", "FreezableToken.balanceOf.b0", "FreezableToken.balanceOf"));
    assert_eq!(off.exit_code(ExitPolicy::AnyFinding), 1);

    let labeled = run(
        "fig9",
        &Config {
            semantics: SemanticsMode::File(fixture("fig9.pred")),
            ..Config::default()
        },
    );
    assert!(labeled.findings.is_empty(), "{:#?}", labeled.findings);
    assert_eq!(labeled.suppressed.len(), 1);
    assert_eq!(labeled.suppressed[0].severity, FindingSeverity::Suppressed);
    assert!(labeled.suppressed[0].suppressed_by.is_some());
    assert_eq!(labeled.exit_code(ExitPolicy::AnyFinding), 0);

    let sidecar_only = run(
        "fig9",
        &Config {
            semantics: SemanticsMode::File(fixture("fig9.pred")),
            heuristics: false,
            ..Config::default()
        },
    );
    assert!(sidecar_only.findings.is_empty());
}

#[test]
fn sd_edge_ablation_narrows_the_fig2_finding() {
    let with = run("fig2", &Config::default());
    let without = run(
        "fig2",
        &Config {
            no_sd_edges: true,
            ..Config::default()
        },
    );
    let from_bid = |r: &Report| {
        r.findings
            .iter()
            .find(|f| f.block == "FundsHandler.recordBid.b2" && f.entry == "Auction.bid")
            .cloned()
            .unwrap()
    };
    let (a, b) = (from_bid(&with), from_bid(&without));
    assert_eq!(
        a.tainted_functions,
        ["Auction.bid", "FundsHandler.finalizeAuction", "FundsHandler.recordBid"]
    );
    assert_eq!(b.tainted_functions, ["Auction.bid", "FundsHandler.recordBid"]);
    assert!(a.tainted_state_vars.contains(&"FundsHandler.itemOwner".to_string()));
    assert!(!b.tainted_state_vars.contains(&"FundsHandler.itemOwner".to_string()));
    assert!(!b.path.contains("[refunds]→"));
}

#[test]
fn finding_paths_are_walks_in_the_sdg() {
    for stem in FIXTURE_MANIFESTS {
        let (u, bindings) = fixture_universe(stem);
        let built = Built::with_bindings(&u, &bindings);
        let (p, sdg) = (&built.program, &built.sdg);
        let r = run(stem, &Config::default());
        for f in r.findings.iter().chain(&r.suppressed) {
            check_path_string(p, sdg, &f.path).unwrap_or_else(|e| panic!("{stem}: {}: {e}", f.path));
            let blocks: Vec<BlockId> = f.blocks.iter().map(|b| p.lookup_block_name(b).unwrap()).collect();
            assert_eq!(blocks.last().map(|b| p.block_name(*b)), Some(f.block.as_str()));
            assert_eq!(p.func_name(p.func_of(blocks[0])), f.entry);
            for w in blocks.windows(2) {
                assert!(sdg.icfg.has_edge(w[0], w[1]), "{stem}: {} -> {}", p.block_name(w[0]), p.block_name(w[1]));
            }
        }
    }
}

#[test]
fn fig5_revert_target_dominates_the_revert() {
    let text = std::fs::read_to_string(fixture("fig5.ir")).unwrap();
    let u = parse_ir(&text).unwrap();
    let built = Built::new(&u);
    let p = &built.program;
    let f1 = p.lookup_qualified("C.F1").unwrap();
    let f2 = p.lookup_qualified("C.F2").unwrap();
    let deps: Vec<_> = built.sdg.revert.iter().filter(|d| p.func_of(d.writer) == f1).collect();
    assert_eq!(deps.len(), 1, "{deps:?}");
    let target = deps[0].target;
    assert_eq!(p.func_of(target), f2);
    let reverts: Vec<BlockId> = p
        .block_ids()
        .filter(|b| p.func_of(*b) == f2)
        .filter(|b| p.block(*b).terminator().is_some_and(|t| t.opcode == Opcode::Revert))
        .collect();
    assert!(!reverts.is_empty());
    let mut seen = BTreeSet::from([p.entry_of(f2)]);
    let mut stack = vec![p.entry_of(f2)];
    while let Some(b) = stack.pop() {
        if b == target {
            continue;
        }
        for s in p.successors(b) {
            if s != target && seen.insert(s) {
                stack.push(s);
            }
        }
    }
    for r in reverts {
        assert!(!seen.contains(&r), "REVERT block {} reachable around the target", p.block_name(r));
    }
}

#[test]
fn json_is_byte_identical_across_runs_and_workers() {
    for stem in FIXTURE_MANIFESTS {
        let m = manifest(stem);
        let json = |c: &Config| render_report(&run_pipeline(&m, c).unwrap(), "json").unwrap();
        let base = json(&Config::default());
        assert_eq!(json(&Config::default()), base, "{stem}");
        for workers in [1, 2, 4, 8] {
            for seed in [None, Some(0), Some(1), Some(7)] {
                let c = Config {
                    workers,
                    schedule_seed: seed,
                    ..Config::default()
                };
                assert_eq!(json(&c), base, "{stem} workers {workers} seed {seed:?}");
            }
        }
        let serial = run_pipeline(
            &m,
            &Config {
                serial: true,
                ..Config::default()
            },
        )
        .unwrap();
        let parallel = run_pipeline(&m, &Config::default()).unwrap();
        assert_eq!(serial.findings, parallel.findings, "{stem}");
        assert_eq!(serial.tainted_functions, parallel.tainted_functions, "{stem}");
        assert_eq!(serial.tainted_state_vars, parallel.tainted_state_vars, "{stem}");
    }
}

#[test]
fn json_reports_match_the_schema() {
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/report.schema.json")).unwrap())
            .unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let configs = [
        Config::default(),
        Config {
            timing: true,
            emit_ir: true,
            emit_graph: Some((GraphKind::Sdg, GraphFormat::Dot)),
            ..Config::default()
        },
        Config {
            semantics: SemanticsMode::File(fixture("fig9.pred")),
            ..Config::default()
        },
    ];
    for stem in FIXTURE_MANIFESTS {
        for c in &configs {
            let json = render_report(&run(stem, c), "json").unwrap();
            let value: serde_json::Value = serde_json::from_str(&json).unwrap();
            let result = compiled
                .validate(&value)
                .map_err(|errors| errors.map(|e| format!("{e} at {}", e.instance_path)).collect::<Vec<_>>());
            if let Err(msgs) = result {
                panic!("{stem}: {msgs:#?}");
            }
            let mut broken = value.clone();
            broken["findings"] = serde_json::json!([{ "rule": "Unknown" }]);
            assert!(!compiled.is_valid(&broken));
        }
    }
}

#[test]
fn timing_is_reported_only_on_request() {
    assert!(run("fig2", &Config::default()).timing.is_none());
    let t = run(
        "fig2",
        &Config {
            timing: true,
            ..Config::default()
        },
    )
    .timing
    .unwrap();
    assert!(t.stages_ms.contains_key("taint"));
}

#[test]
fn text_report_shows_paths() {
    let text = render_report(&run("fig2", &Config::default()), "text").unwrap();
    assert!(text.contains(&format!("path: {FIG2_PATH}")), "{text}");
    assert!(text.contains("Timestamp (2)"), "{text}");
}

#[test]
fn path_cap_is_reported() {
    let r = run(
        "fig7",
        &Config {
            max_paths_per_pair: 1,
            ..Config::default()
        },
    );
    assert!(r.counters.truncated_pairs > 0);
    assert!(r
        .findings
        .iter()
        .any(|f| f.diagnostics.iter().any(|d| d.starts_with("PathCapReached"))));
}

fn write_manifest(dir: &std::path::Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("m.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn input_errors() {
    let dir = std::env::temp_dir().join(format!("crossinspect-input-errors-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let fig5 = fixture("fig5.ir");

    assert!(Manifest::load(&dir.join("missing.toml")).is_err());

    let dup = format!(
        "[[contract]]\nname = \"C\"\nir = {fig5:?}\n\n[[contract]]\nname = \"C\"\nir = {fig5:?}\n"
    );
    assert!(Manifest::load(&write_manifest(&dir, &dup)).is_err());

    let unknown_entry = format!("entries = [\"C.nope\"]\n\n[[contract]]\nname = \"C\"\nir = {fig5:?}\n");
    let m = Manifest::load(&write_manifest(&dir, &unknown_entry)).unwrap();
    assert!(matches!(run_pipeline(&m, &Config::default()), Err(PipelineError::Manifest(_))));

    let missing_ir = "[[contract]]\nname = \"C\"\nir = \"nope.ir\"\n";
    let m = Manifest::load(&write_manifest(&dir, missing_ir)).unwrap();
    assert!(matches!(
        run_pipeline(&m, &Config::default()),
        Err(PipelineError::Stage { stage: Stage::Frontend, .. })
    ));

    let bad_ir = "[[contract]]\nname = \"C\"\nir_text = \"\"\"\nir-version 1\ncontract C\nfunction f public()\nblock b0\n  STOP\nblock b1\n  STOP\n\"\"\"\n";
    let m = Manifest::load(&write_manifest(&dir, bad_ir)).unwrap();
    let err = run_pipeline(&m, &Config::default()).unwrap_err();
    assert!(err.to_string().contains("UnreachableBlock"), "{err}");

    let m = manifest("fig9");
    let missing_pred = Config {
        semantics: SemanticsMode::File(dir.join("missing.pred")),
        ..Config::default()
    };
    assert!(matches!(
        run_pipeline(&m, &missing_pred),
        Err(PipelineError::Stage { stage: Stage::Semantics, .. })
    ));

    std::fs::remove_dir_all(&dir).unwrap();
}
