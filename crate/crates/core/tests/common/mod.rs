//! Generators and oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use crossinspect::detect::{EntryPath, SearchGraph};
use crossinspect::graphs::{
    build_callgraph, build_icfg, build_sdg, extract_revert_deps, extract_rw_deps, Bindings, CallGraph, RevertDep, Sdg,
};
use crossinspect::ir::{parse_ir, BlockId, Program, Universe, Visibility};
use crossinspect::pipeline::{run_pipeline, Config, Manifest};
use crossinspect::taint::{default_taint_opcodes, FlowGraph, TaintContext, TaintKey};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FIXTURE_MANIFESTS: [&str; 7] = ["fig2", "fig2_bytecode", "fig5", "fig7", "fig9", "fig11", "fig11_noloop"];

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn manifest(stem: &str) -> Manifest {
    Manifest::load(&fixture(&format!("{stem}.toml"))).unwrap()
}

/// The labeled universe of a fixture, as emitted by the pipeline, and the
/// manifest's bindings.
pub fn fixture_universe(stem: &str) -> (Universe, Bindings) {
    let m = manifest(stem);
    let config = Config {
        emit_ir: true,
        ..Config::default()
    };
    let report = run_pipeline(&m, &config).unwrap();
    let u = parse_ir(report.ir.as_deref().unwrap()).unwrap();
    let mut bindings = Bindings::new();
    for b in &m.bindings {
        bindings.bind(b.contract.clone(), b.slot, b.target.clone());
    }
    (u, bindings)
}

/// Edges `i -> j` with `i < j` only.
pub fn random_dag(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(u32, u32)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i as u32, j as u32));
            }
        }
    }
    edges
}

pub fn random_digraph(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<(u32, u32)> {
    (0..m)
        .map(|_| (rng.gen_range(0..n) as u32, rng.gen_range(0..n) as u32))
        .collect()
}

pub fn pick(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<BlockId> {
    let mut all: Vec<u32> = (0..n as u32).collect();
    all.shuffle(rng);
    all.truncate(k);
    all.into_iter().map(BlockId).collect()
}

/// Every simple path from each entry to each target, by plain recursion
/// over ascending successor lists. Ordered by entry, then target index, then
/// depth-first discovery.
pub fn brute_force_paths(n: usize, edges: &[(u32, u32)], entries: &[BlockId], targets: &[BlockId]) -> Vec<EntryPath> {
    let mut succ: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
    for &(a, c) in edges {
        succ[a as usize].insert(c);
    }
    fn walk(succ: &[BTreeSet<u32>], targets: &[BlockId], path: &mut Vec<u32>, out: &mut [Vec<Vec<BlockId>>]) {
        let here = *path.last().unwrap();
        for (i, t) in targets.iter().enumerate() {
            if t.0 == here {
                out[i].push(path.iter().map(|x| BlockId(*x)).collect());
            }
        }
        for &c in &succ[here as usize] {
            if !path.contains(&c) {
                path.push(c);
                walk(succ, targets, path, out);
                path.pop();
            }
        }
    }
    let mut result = Vec::new();
    for e in entries.iter().collect::<BTreeSet<_>>() {
        let mut per_target = vec![Vec::new(); targets.len()];
        walk(&succ, targets, &mut vec![e.0], &mut per_target);
        for (i, paths) in per_target.into_iter().enumerate() {
            result.extend(paths.into_iter().map(|blocks| EntryPath {
                entry: *e,
                indicator: i,
                blocks,
            }));
        }
    }
    result
}

/// A random IR universe as text. With `loop_free`, jumps only go forward
/// and calls only go to functions later in a global order.
pub fn random_program(rng: &mut ChaCha8Rng, loop_free: bool) -> String {
    struct Fn {
        contract: usize,
        name: String,
        params: usize,
        public: bool,
    }
    let ncontracts = rng.gen_range(1..=3);
    let mut funcs = Vec::new();
    for c in 0..ncontracts {
        for f in 0..rng.gen_range(2..=4) {
            funcs.push(Fn {
                contract: c,
                name: format!("f{f}"),
                params: rng.gen_range(0..=2),
                public: rng.gen_bool(0.7),
            });
        }
    }
    let nvars: Vec<usize> = (0..ncontracts).map(|_| rng.gen_range(1..=3)).collect();
    let mut out = String::from("ir-version 1\n");
    for (c, &nv) in nvars.iter().enumerate() {
        out.push_str(&format!("\ncontract K{c}\n"));
        for s in 0..nv {
            out.push_str(&format!("statevar s{s} slot={s} kind=scalar\n"));
        }
        out.push_str("statevar m slot=9 kind=mapping\n");
        for (gi, f) in funcs.iter().enumerate().filter(|(_, f)| f.contract == c) {
            let params: Vec<String> = (0..f.params).map(|i| format!("p{i}:uint256")).collect();
            let vis = if f.public { "public" } else { "private" };
            out.push_str(&format!("\nfunction {} {vis}({})\n", f.name, params.join(",")));
            let nblocks = rng.gen_range(1..=4);
            let revert_label = nblocks;
            let mut uses_revert = false;
            let mut next_val = 0;
            for bi in 0..nblocks {
                out.push_str(&format!("block b{bi}\n"));
                let mut vals: Vec<String> = Vec::new();
                let operand = |rng: &mut ChaCha8Rng, vals: &[String]| -> String {
                    let mut pool: Vec<String> = vals.to_vec();
                    pool.extend((0..f.params).map(|i| format!("%p{i}")));
                    pool.push("7".into());
                    pool.choose(rng).unwrap().clone()
                };
                for _ in 0..rng.gen_range(1..=4) {
                    let v = format!("v{next_val}");
                    let line = match rng.gen_range(0..8) {
                        0 => format!("{v} = {}", ["CALLER", "CALLVALUE", "TIMESTAMP"].choose(rng).unwrap()),
                        1 => format!("{v} = SLOAD $s{}", rng.gen_range(0..nvars[c])),
                        2 => format!("SSTORE $s{} {}", rng.gen_range(0..nvars[c]), operand(rng, &vals)),
                        3 => {
                            let op = ["ADD", "LT", "SUB"].choose(rng).unwrap();
                            format!("{v} = {op} {} {}", operand(rng, &vals), operand(rng, &vals))
                        }
                        4 => format!("{v} = SLOAD $m[{}]", operand(rng, &vals)),
                        5 => format!("SSTORE $m[{}] {}", operand(rng, &vals), operand(rng, &vals)),
                        _ => {
                            let callees: Vec<usize> = (0..funcs.len())
                                .filter(|&g| if loop_free { g > gi } else { g != gi })
                                .collect();
                            let Some(&g) = callees.choose(rng) else { continue };
                            let callee = &funcs[g];
                            let args: Vec<String> = (0..callee.params).map(|_| operand(rng, &vals)).collect();
                            if callee.contract == c {
                                format!("{v} = INTERNALCALL {} {}", callee.name, args.join(" "))
                            } else {
                                format!("{v} = CALL K{}.{} {}", callee.contract, callee.name, args.join(" "))
                            }
                        }
                    };
                    if line.starts_with(&v) {
                        vals.push(v);
                        next_val += 1;
                    }
                    out.push_str(&format!("  {}\n", line.trim_end()));
                }
                if bi + 1 == nblocks {
                    if rng.gen_bool(0.5) {
                        out.push_str("  STOP\n");
                    } else {
                        out.push_str(&format!("  RETURN {}\n", operand(rng, &vals)));
                    }
                    continue;
                }
                match rng.gen_range(0..3) {
                    0 => out.push_str(&format!("  JUMP b{}\n", bi + 1)),
                    1 => {
                        let v = format!("v{next_val}");
                        next_val += 1;
                        out.push_str(&format!("  {v} = SLOAD $s{}\n", rng.gen_range(0..nvars[c])));
                        out.push_str(&format!("  JUMPI {v} b{revert_label} b{}\n", bi + 1));
                        uses_revert = true;
                    }
                    _ => {
                        let other = if loop_free {
                            rng.gen_range(bi + 1..nblocks)
                        } else {
                            rng.gen_range(0..nblocks)
                        };
                        let mut conds: Vec<String> = vals.clone();
                        conds.extend((0..f.params).map(|i| format!("%p{i}")));
                        match conds.choose(rng) {
                            Some(c) => out.push_str(&format!("  JUMPI {c} b{} b{other}\n", bi + 1)),
                            None => out.push_str(&format!("  JUMP b{}\n", bi + 1)),
                        }
                    }
                }
            }
            if uses_revert {
                out.push_str(&format!("block b{revert_label}\n  REVERT\n"));
            }
        }
    }
    out
}

pub struct Built<'u> {
    pub program: Program<'u>,
    pub cg: CallGraph,
    pub sdg: Sdg,
    pub flow: FlowGraph,
}

impl<'u> Built<'u> {
    pub fn new(u: &'u Universe) -> Self {
        Self::with_bindings(u, &Bindings::new())
    }

    pub fn with_bindings(u: &'u Universe, bindings: &Bindings) -> Self {
        let program = Program::new(u);
        let cg = build_callgraph(&program, bindings);
        let icfg = build_icfg(&program, &cg);
        let rw = extract_rw_deps(&program);
        let (revert, _) = extract_revert_deps(&program, &rw);
        let sdg = build_sdg(icfg, rw, revert);
        let flow = FlowGraph::new(&program, &cg, &sdg, &default_taint_opcodes());
        Built { program, cg, sdg, flow }
    }

    pub fn ctx(&self) -> TaintContext<'_> {
        TaintContext {
            program: &self.program,
            sdg: &self.sdg,
            flow: &self.flow,
        }
    }

    pub fn public_entries(&self) -> Vec<BlockId> {
        let p = &self.program;
        p.func_ids()
            .filter(|f| p.function(*f).visibility == Visibility::Public)
            .map(|f| p.entry_of(f))
            .collect()
    }

    pub fn search_graph(&self) -> SearchGraph {
        SearchGraph::from_icfg(&self.program, &self.sdg.icfg, &self.program.func_ids().collect())
    }
}

fn revert_holds(built: &Built<'_>, tainted: &BTreeSet<TaintKey>, d: &RevertDep) -> bool {
    built
        .flow
        .revert_conditions
        .get(d)
        .is_some_and(|ks| ks.iter().any(|k| tainted.contains(k)))
}

/// Blocks reachable from `entries` over ICFG edges and the revert edges
/// whose condition holds under `tainted`.
pub fn reach_under(built: &Built<'_>, tainted: &BTreeSet<TaintKey>, entries: &[BlockId]) -> BTreeSet<BlockId> {
    let mut seen: BTreeSet<BlockId> = entries.iter().copied().collect();
    let mut queue: VecDeque<BlockId> = seen.iter().copied().collect();
    while let Some(x) = queue.pop_front() {
        let mut next: Vec<BlockId> = built.sdg.icfg.successors(x).to_vec();
        next.extend(
            built
                .sdg
                .revert
                .iter()
                .filter(|d| d.writer == x && revert_holds(built, tainted, d))
                .map(|d| d.target),
        );
        for y in next {
            if seen.insert(y) {
                queue.push_back(y);
            }
        }
    }
    seen
}

/// Least fixpoint by round-robin iteration: recompute the visited blocks from
/// scratch, then close the taint set over every firing edge of a visited
/// block, until neither changes.
pub fn taint_closure_oracle(built: &Built<'_>, entries: &[BlockId]) -> (BTreeSet<TaintKey>, BTreeSet<BlockId>) {
    let (p, sdg, flow) = (&built.program, &built.sdg, &built.flow);
    let mut tainted: BTreeSet<TaintKey> = BTreeSet::new();
    let mut visited: BTreeSet<BlockId> = BTreeSet::new();
    loop {
        let seen = reach_under(built, &tainted, entries);
        let mut t = tainted.clone();
        for &x in &seen {
            t.extend(flow.block_seeds[x.0 as usize].iter().copied());
            t.extend(flow.func_seeds[p.func_of(x).0 as usize].iter().copied());
        }
        let mut graph: BTreeMap<TaintKey, Vec<TaintKey>> = BTreeMap::new();
        for &x in &seen {
            for e in flow.edges[x.0 as usize].iter().filter(|e| e.fires) {
                graph.entry(e.src).or_default().push(e.dst);
            }
        }
        let mut stack: Vec<TaintKey> = t.iter().copied().collect();
        while let Some(k) = stack.pop() {
            for d in graph.get(&k).into_iter().flatten() {
                if t.insert(*d) {
                    stack.push(*d);
                }
            }
        }
        let followed: Vec<&RevertDep> = sdg
            .revert
            .iter()
            .filter(|d| seen.contains(&d.writer) && revert_holds(built, &t, d))
            .collect();
        for d in followed {
            t.extend(flow.revert_taints.get(d).into_iter().flatten().copied());
        }
        if t == tainted && seen == visited {
            return (tainted, visited);
        }
        tainted = t;
        visited = seen;
    }
}

/// Component representative per node.
pub fn union_find(n: usize, edges: &[(u32, u32)]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        let mut y = x;
        while parent[y] != r {
            let next = parent[y];
            parent[y] = r;
            y = next;
        }
        r
    }
    for &(a, c) in edges {
        let (ra, rc) = (find(&mut parent, a as usize), find(&mut parent, c as usize));
        parent[ra] = rc;
    }
    (0..n).map(|x| find(&mut parent, x)).collect()
}
