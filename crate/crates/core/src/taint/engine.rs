//! Worklist taint propagation over the SDG.
//!
//! A worker visits blocks reachable from its entries along ICFG edges. A
//! state-revert edge is followed only once the value its writer stores is
//! tainted; until then it is a pending visit. Inside visited blocks, a flow
//! edge whose source is untainted is kept as a pending ("untainted") edge and
//! fires if the source becomes tainted later. Edges of non-taint opcodes are
//! recorded as inert and never fire.
//!
//! The parallel mode runs one worker per entry with private state, merges the
//! states, fires pending edges against the merged taint, and resumes workers
//! whose pending visits became enabled, until nothing changes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::Serialize;

use super::flow::{FlowEdge, FlowGraph, TaintKey};
use crate::detect::EntryPath;
use crate::diag::{Diagnostic, Stage};
use crate::graphs::{RevertDep, Sdg};
use crate::ir::{BlockId, FuncId, Program};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaintConfig {
    /// Worker cap; 0 means one per entry.
    pub workers: usize,
    /// Flow-edge steps allowed per function and worker.
    pub iteration_limit: usize,
    /// Shuffles worker scheduling; results must not change.
    pub schedule_seed: Option<u64>,
}

impl Default for TaintConfig {
    fn default() -> Self {
        TaintConfig {
            workers: 0,
            iteration_limit: 10_000,
            schedule_seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TaintState {
    pub tainted: BTreeSet<TaintKey>,
    /// Firing edges whose source never became tainted.
    pub pending: BTreeSet<FlowEdge>,
    /// Edges of non-taint opcodes.
    pub inert: BTreeSet<FlowEdge>,
    /// Revert edges from visited writers whose stored value stayed clean.
    pub pending_visits: BTreeSet<RevertDep>,
    pub visited: BTreeSet<BlockId>,
    pub visited_by_entry: BTreeMap<BlockId, BTreeSet<BlockId>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TaintStats {
    pub merge_iterations: u64,
    pub steps: u64,
}

#[derive(Debug, Clone, Default)]
pub struct TaintOutcome {
    pub state: TaintState,
    pub stats: TaintStats,
    pub diagnostics: Vec<Diagnostic>,
}

/// Read-only inputs shared by all workers.
pub struct TaintContext<'a> {
    pub program: &'a Program<'a>,
    pub sdg: &'a Sdg,
    pub flow: &'a FlowGraph,
}

impl TaintContext<'_> {
    fn condition_holds(&self, dep: &RevertDep, tainted: impl Fn(&TaintKey) -> bool) -> bool {
        self.flow
            .revert_conditions
            .get(dep)
            .is_some_and(|keys| keys.iter().any(tainted))
    }

    /// Blocks reached from `entry` when revert edges are followed under `tainted`.
    pub fn reach(&self, tainted: &BTreeSet<TaintKey>, entry: BlockId) -> BTreeSet<BlockId> {
        let mut seen = BTreeSet::from([entry]);
        let mut queue = VecDeque::from([entry]);
        while let Some(b) = queue.pop_front() {
            let reverts = self
                .sdg
                .reverts_from(b)
                .iter()
                .filter(|d| self.condition_holds(d, |k| tainted.contains(k)))
                .map(|d| d.target);
            for s in self.sdg.icfg.successors(b).iter().copied().chain(reverts) {
                if seen.insert(s) {
                    queue.push_back(s);
                }
            }
        }
        seen
    }
}

struct Worker<'a> {
    ctx: &'a TaintContext<'a>,
    limit: usize,
    tainted: HashSet<TaintKey>,
    pending_by_src: HashMap<TaintKey, Vec<FlowEdge>>,
    inert: BTreeSet<FlowEdge>,
    visits_by_key: HashMap<TaintKey, Vec<RevertDep>>,
    pending_visits: BTreeSet<RevertDep>,
    visited: Vec<bool>,
    funcs_seen: Vec<bool>,
    blocks: VecDeque<BlockId>,
    keys: Vec<TaintKey>,
    steps: Vec<usize>,
    total_steps: u64,
    limited: BTreeSet<FuncId>,
}

impl<'a> Worker<'a> {
    fn new(ctx: &'a TaintContext<'a>, limit: usize) -> Self {
        Worker {
            ctx,
            limit,
            tainted: HashSet::new(),
            pending_by_src: HashMap::new(),
            inert: BTreeSet::new(),
            visits_by_key: HashMap::new(),
            pending_visits: BTreeSet::new(),
            visited: vec![false; ctx.program.num_blocks()],
            funcs_seen: vec![false; ctx.program.num_funcs()],
            blocks: VecDeque::new(),
            keys: Vec::new(),
            steps: vec![0; ctx.program.num_funcs()],
            total_steps: 0,
            limited: BTreeSet::new(),
        }
    }

    /// Queues the blocks of `paths` first, then the entries themselves.
    fn start(&mut self, entries: &[BlockId], paths: &[&EntryPath]) {
        for p in paths {
            self.blocks.extend(p.blocks.iter().copied());
        }
        self.blocks.extend(entries.iter().copied());
    }

    fn taint(&mut self, k: TaintKey) {
        if self.tainted.insert(k) {
            self.keys.push(k);
        }
    }

    fn step(&mut self, f: FuncId) -> bool {
        let n = &mut self.steps[f.0 as usize];
        *n += 1;
        self.total_steps += 1;
        if *n > self.limit {
            self.limited.insert(f);
            return false;
        }
        true
    }

    fn visit(&mut self, b: BlockId) {
        if std::mem::replace(&mut self.visited[b.0 as usize], true) {
            return;
        }
        let ctx = self.ctx;
        let f = ctx.program.func_of(b);
        if !std::mem::replace(&mut self.funcs_seen[f.0 as usize], true) {
            for k in &ctx.flow.func_seeds[f.0 as usize] {
                self.taint(*k);
            }
        }
        for k in &ctx.flow.block_seeds[b.0 as usize] {
            self.taint(*k);
        }
        for e in &ctx.flow.edges[b.0 as usize] {
            if !self.step(f) {
                break;
            }
            if !e.fires {
                self.inert.insert(*e);
            } else if self.tainted.contains(&e.src) {
                self.taint(e.dst);
            } else {
                self.pending_by_src.entry(e.src).or_default().push(*e);
            }
        }
        self.blocks.extend(ctx.sdg.icfg.successors(b).iter().copied());
        for dep in ctx.sdg.reverts_from(b) {
            if ctx.condition_holds(dep, |k| self.tainted.contains(k)) {
                self.follow(dep);
            } else if self.pending_visits.insert(*dep) {
                for k in ctx.flow.revert_conditions.get(dep).into_iter().flatten() {
                    self.visits_by_key.entry(*k).or_default().push(*dep);
                }
            }
        }
    }

    fn follow(&mut self, dep: &RevertDep) {
        for k in self.ctx.flow.revert_taints.get(dep).into_iter().flatten() {
            self.taint(*k);
        }
        self.blocks.push_back(dep.target);
    }

    fn run(&mut self) {
        loop {
            if let Some(k) = self.keys.pop() {
                for e in self.pending_by_src.remove(&k).unwrap_or_default() {
                    self.taint(e.dst);
                }
                for dep in self.visits_by_key.remove(&k).unwrap_or_default() {
                    if self.pending_visits.remove(&dep) {
                        self.follow(&dep);
                    }
                }
            } else if let Some(b) = self.blocks.pop_front() {
                self.visit(b);
            } else {
                return;
            }
        }
    }

    fn absorb(&mut self, global: &BTreeSet<TaintKey>) {
        for k in global {
            self.taint(*k);
        }
        self.run();
    }

    fn visited_set(&self) -> BTreeSet<BlockId> {
        self.visited
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(i, _)| BlockId(i as u32))
            .collect()
    }

    fn pending_edges(&self) -> impl Iterator<Item = &FlowEdge> {
        self.pending_by_src.values().flatten()
    }
}

fn limit_diagnostics(program: &Program<'_>, limited: &BTreeSet<FuncId>, limit: usize) -> Vec<Diagnostic> {
    limited
        .iter()
        .map(|f| {
            Diagnostic::warning(
                Stage::Taint,
                format!(
                    "IterationLimit: taint in {} stopped after {limit} steps; state is partial",
                    program.func_name(*f)
                ),
            )
        })
        .collect()
}

fn paths_of(paths: &[EntryPath], entry: BlockId) -> Vec<&EntryPath> {
    paths.iter().filter(|p| p.entry == entry).collect()
}

fn dedup_entries(entries: &[BlockId]) -> Vec<BlockId> {
    entries.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn propagate_serial(ctx: &TaintContext<'_>, entries: &[BlockId], paths: &[EntryPath], cfg: &TaintConfig) -> TaintOutcome {
    let entries = dedup_entries(entries);
    let mut w = Worker::new(ctx, cfg.iteration_limit);
    let ordered: Vec<&EntryPath> = entries.iter().flat_map(|e| paths_of(paths, *e)).collect();
    w.start(&entries, &ordered);
    w.run();
    let tainted: BTreeSet<TaintKey> = w.tainted.iter().copied().collect();
    let visited_by_entry = entries.iter().map(|e| (*e, ctx.reach(&tainted, *e))).collect();
    let state = TaintState {
        pending: w.pending_edges().copied().collect(),
        inert: w.inert.clone(),
        pending_visits: w.pending_visits.clone(),
        visited: w.visited_set(),
        visited_by_entry,
        tainted,
    };
    TaintOutcome {
        state,
        stats: TaintStats {
            merge_iterations: 0,
            steps: w.total_steps,
        },
        diagnostics: limit_diagnostics(ctx.program, &w.limited, cfg.iteration_limit),
    }
}

/// Runs `job` on every selected worker, spreading them over threads.
fn run_workers<'a>(
    workers: &[Mutex<Worker<'a>>],
    selected: &[usize],
    threads: usize,
    seed: Option<u64>,
    job: impl Fn(&mut Worker<'a>) + Sync,
) {
    let mut order = selected.to_vec();
    if let Some(s) = seed {
        order.shuffle(&mut StdRng::seed_from_u64(s));
    }
    let next = AtomicUsize::new(0);
    let threads = threads.min(order.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&i) = order.get(k) else {
                    break;
                };
                job(&mut workers[i].lock().expect("taint worker poisoned"));
                if seed.is_some() {
                    std::thread::yield_now();
                }
            });
        }
    });
}

pub fn propagate_parallel(ctx: &TaintContext<'_>, entries: &[BlockId], paths: &[EntryPath], cfg: &TaintConfig) -> TaintOutcome {
    let entries = dedup_entries(entries);
    let threads = match cfg.workers {
        0 => entries.len(),
        w => w.min(entries.len()),
    }
    .max(1);
    let workers: Vec<Mutex<Worker<'_>>> = entries
        .iter()
        .map(|e| {
            let mut w = Worker::new(ctx, cfg.iteration_limit);
            w.start(std::slice::from_ref(e), &paths_of(paths, *e));
            Mutex::new(w)
        })
        .collect();
    let all: Vec<usize> = (0..entries.len()).collect();
    run_workers(&workers, &all, threads, cfg.schedule_seed, Worker::run);

    let mut merges = 0u64;
    let (global, pending) = loop {
        merges += 1;
        let mut global: BTreeSet<TaintKey> = BTreeSet::new();
        let mut pending_by_src: HashMap<TaintKey, Vec<FlowEdge>> = HashMap::new();
        for m in &workers {
            let w = m.lock().expect("taint worker poisoned");
            global.extend(w.tainted.iter().copied());
            for e in w.pending_edges() {
                pending_by_src.entry(e.src).or_default().push(*e);
            }
        }
        let mut frontier: Vec<TaintKey> = global.iter().copied().collect();
        while let Some(k) = frontier.pop() {
            for e in pending_by_src.remove(&k).unwrap_or_default() {
                if global.insert(e.dst) {
                    frontier.push(e.dst);
                }
            }
        }
        let resume: Vec<usize> = workers
            .iter()
            .enumerate()
            .filter(|(_, m)| {
                let w = m.lock().expect("taint worker poisoned");
                w.pending_visits
                    .iter()
                    .any(|d| ctx.condition_holds(d, |k| global.contains(k)))
            })
            .map(|(i, _)| i)
            .collect();
        if resume.is_empty() {
            break (global, pending_by_src);
        }
        run_workers(&workers, &resume, threads, cfg.schedule_seed, |w| w.absorb(&global));
    };

    let workers: Vec<Worker<'_>> = workers.into_iter().map(|m| m.into_inner().expect("taint worker poisoned")).collect();
    let mut state = TaintState {
        pending: pending.into_values().flatten().collect(),
        ..Default::default()
    };
    let mut limited = BTreeSet::new();
    let mut steps = 0;
    for (w, e) in workers.iter().zip(&entries) {
        state.inert.extend(w.inert.iter().copied());
        state.pending_visits.extend(w.pending_visits.iter().copied());
        let visited = w.visited_set();
        state.visited.extend(visited.iter().copied());
        state.visited_by_entry.insert(*e, visited);
        limited.extend(w.limited.iter().copied());
        steps += w.total_steps;
    }
    state.tainted = global;
    TaintOutcome {
        state,
        stats: TaintStats {
            merge_iterations: merges,
            steps,
        },
        diagnostics: limit_diagnostics(ctx.program, &limited, cfg.iteration_limit),
    }
}
