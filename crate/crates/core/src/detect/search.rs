//! Entry-to-indicator path search.
//!
//! Both searches enumerate simple paths in depth-first order with successors
//! sorted by block id, keep the first `max_paths_per_pair` paths per
//! (entry, indicator) pair, and drop paths longer than `max_depth` blocks.
//!
//! The parallel search memoizes, for every block, the ordered list of all
//! simple suffixes from that block to any indicator block. Suffixes do not
//! depend on how a block was reached: inside the condensation DAG a suffix
//! can never return to its prefix, and inside a strongly connected component
//! the memo is built by a local search that splices the memos of blocks
//! outside the component. Per-pair caps are applied only when an entry's memo
//! is read back, so the result is exactly the serial result.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::atomic::{AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::graphs::Icfg;
use crate::ir::{BlockId, FuncId, Program};

/// Successor lists restricted to the blocks allowed by pruning.
#[derive(Debug, Clone)]
pub struct SearchGraph {
    succ: Vec<Vec<BlockId>>,
    allowed: Vec<bool>,
}

impl SearchGraph {
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (BlockId, BlockId)>) -> Self {
        Self::restricted(num_nodes, edges, vec![true; num_nodes])
    }

    /// The ICFG with every block outside `keep` removed.
    pub fn from_icfg(program: &Program<'_>, icfg: &Icfg, keep: &BTreeSet<FuncId>) -> Self {
        let allowed = program.block_ids().map(|b| keep.contains(&program.func_of(b))).collect();
        Self::restricted(icfg.num_blocks, icfg.edges.iter().map(|e| (e.src, e.dst)), allowed)
    }

    fn restricted(num_nodes: usize, edges: impl IntoIterator<Item = (BlockId, BlockId)>, allowed: Vec<bool>) -> Self {
        let mut succ = vec![Vec::new(); num_nodes];
        for (a, b) in edges {
            if allowed[a.0 as usize] && allowed[b.0 as usize] {
                succ[a.0 as usize].push(b);
            }
        }
        for s in &mut succ {
            s.sort();
            s.dedup();
        }
        SearchGraph { succ, allowed }
    }

    pub fn num_nodes(&self) -> usize {
        self.succ.len()
    }

    pub fn successors(&self, b: BlockId) -> &[BlockId] {
        &self.succ[b.0 as usize]
    }

    pub fn is_allowed(&self, b: BlockId) -> bool {
        self.allowed[b.0 as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchConfig {
    pub max_paths_per_pair: usize,
    pub max_depth: usize,
    /// Worker cap; 0 means one worker per entry.
    pub workers: usize,
    /// Suffixes a single memo entry may hold before the owning entry falls
    /// back to direct search.
    pub memo_limit: usize,
    /// Shuffles entry order and injects yields; results must not change.
    pub schedule_seed: Option<u64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_paths_per_pair: 64,
            max_depth: 512,
            workers: 0,
            memo_limit: 65_536,
            schedule_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct EntryPath {
    pub entry: BlockId,
    /// Index into the target list the search was given.
    pub indicator: usize,
    pub blocks: Vec<BlockId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    /// Blocks whose successor list was enumerated, counted per enumeration.
    pub expansions: u64,
    /// Reads of a completed memo entry.
    pub memo_hits: u64,
    /// Memo entries computed.
    pub memo_entries: u64,
    /// Entries whose memo overflowed and were searched directly.
    pub fallbacks: u64,
    #[serde(skip)]
    pub expansions_per_block: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchResult {
    /// Grouped by entry, then indicator, each group in discovery order.
    pub paths: Vec<EntryPath>,
    /// (entry, indicator) pairs with more paths than the cap.
    pub truncated: Vec<(BlockId, usize)>,
    pub stats: SearchStats,
}

struct Prepared<'a> {
    graph: &'a SearchGraph,
    /// Indicators located at each block.
    by_block: HashMap<BlockId, Vec<usize>>,
    num_targets: usize,
    can_reach: Vec<bool>,
    entries: Vec<BlockId>,
}

impl<'a> Prepared<'a> {
    fn new(graph: &'a SearchGraph, entries: &[BlockId], targets: &[BlockId]) -> Self {
        let n = graph.num_nodes();
        let mut by_block: HashMap<BlockId, Vec<usize>> = HashMap::new();
        for (i, t) in targets.iter().enumerate() {
            if graph.is_allowed(*t) {
                by_block.entry(*t).or_default().push(i);
            }
        }
        let mut preds = vec![Vec::new(); n];
        for a in 0..n {
            for b in graph.successors(BlockId(a as u32)) {
                preds[b.0 as usize].push(a);
            }
        }
        let mut can_reach = vec![false; n];
        let mut queue: VecDeque<usize> = by_block.keys().map(|b| b.0 as usize).collect();
        for &b in &queue {
            can_reach[b] = true;
        }
        while let Some(b) = queue.pop_front() {
            for &p in &preds[b] {
                if !can_reach[p] {
                    can_reach[p] = true;
                    queue.push_back(p);
                }
            }
        }
        let entries: Vec<BlockId> = entries
            .iter()
            .copied()
            .filter(|e| graph.is_allowed(*e))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Prepared {
            graph,
            by_block,
            num_targets: targets.len(),
            can_reach,
            entries,
        }
    }

    fn children(&self, b: BlockId) -> impl Iterator<Item = BlockId> + '_ {
        self.graph
            .successors(b)
            .iter()
            .copied()
            .filter(move |c| self.can_reach[c.0 as usize])
    }

    fn targets_at(&self, b: BlockId) -> &[usize] {
        self.by_block.get(&b).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Paths of one entry, collected with caps.
struct Collector {
    cap: usize,
    per_target: Vec<Vec<Vec<BlockId>>>,
    truncated: Vec<bool>,
    unfinished: usize,
}

impl Collector {
    fn new(num_targets: usize, cap: usize) -> Self {
        Collector {
            cap,
            per_target: vec![Vec::new(); num_targets],
            truncated: vec![false; num_targets],
            unfinished: num_targets,
        }
    }

    fn offer(&mut self, target: usize, path: impl FnOnce() -> Vec<BlockId>) {
        if self.per_target[target].len() < self.cap {
            self.per_target[target].push(path());
        } else if !self.truncated[target] {
            self.truncated[target] = true;
            self.unfinished -= 1;
        }
    }

    fn done(&self) -> bool {
        self.unfinished == 0
    }

    fn finish(self, entry: BlockId, out: &mut SearchResult) {
        for (i, paths) in self.per_target.into_iter().enumerate() {
            for blocks in paths {
                out.paths.push(EntryPath {
                    entry,
                    indicator: i,
                    blocks,
                });
            }
            if self.truncated[i] {
                out.truncated.push((entry, i));
            }
        }
    }
}

struct Counters {
    expansions: AtomicU64,
    per_block: Vec<AtomicU32>,
    memo_hits: AtomicU64,
    memo_entries: AtomicU64,
    fallbacks: AtomicU64,
}

impl Counters {
    fn new(n: usize) -> Self {
        Counters {
            expansions: AtomicU64::new(0),
            per_block: (0..n).map(|_| AtomicU32::new(0)).collect(),
            memo_hits: AtomicU64::new(0),
            memo_entries: AtomicU64::new(0),
            fallbacks: AtomicU64::new(0),
        }
    }

    fn expand(&self, b: BlockId) {
        self.expansions.fetch_add(1, Ordering::Relaxed);
        self.per_block[b.0 as usize].fetch_add(1, Ordering::Relaxed);
    }

    fn into_stats(self) -> SearchStats {
        SearchStats {
            expansions: self.expansions.into_inner(),
            memo_hits: self.memo_hits.into_inner(),
            memo_entries: self.memo_entries.into_inner(),
            fallbacks: self.fallbacks.into_inner(),
            expansions_per_block: self.per_block.into_iter().map(AtomicU32::into_inner).collect(),
        }
    }
}

/// Depth-first search from `entry`. When `memo` is given, blocks with a
/// complete memo are not descended into; their suffixes that avoid the
/// current path are spliced instead.
fn direct_search(
    prep: &Prepared<'_>,
    cfg: &SearchConfig,
    counters: &Counters,
    memo: Option<&[OnceLock<MemoEntry>]>,
    entry: BlockId,
    out: &mut Collector,
) {
    if !prep.can_reach[entry.0 as usize] {
        return;
    }
    let mut on_path = vec![false; prep.graph.num_nodes()];
    let mut path: Vec<BlockId> = Vec::new();
    // (block, next child index)
    let mut stack: Vec<(BlockId, usize)> = Vec::new();
    let mut pending = Some(entry);
    loop {
        if let Some(b) = pending.take() {
            if let Some(MemoEntry::Complete(suffixes)) = memo.and_then(|m| m[b.0 as usize].get()) {
                counters.memo_hits.fetch_add(1, Ordering::Relaxed);
                for s in suffixes {
                    if path.len() + s.len as usize > cfg.max_depth || s.iter().any(|x| on_path[x.0 as usize]) {
                        continue;
                    }
                    for &t in prep.targets_at(s.end) {
                        out.offer(t, || path.iter().copied().chain(s.iter()).collect());
                    }
                }
            } else {
                counters.expand(b);
                path.push(b);
                on_path[b.0 as usize] = true;
                for &t in prep.targets_at(b) {
                    out.offer(t, || path.clone());
                }
                stack.push((b, 0));
            }
        }
        if out.done() {
            return;
        }
        let Some((b, i)) = stack.last_mut() else {
            return;
        };
        let next = if path.len() < cfg.max_depth {
            prep.children(*b).skip(*i).enumerate().find(|(_, c)| !on_path[c.0 as usize])
        } else {
            None
        };
        match next {
            Some((k, c)) => {
                *i += k + 1;
                pending = Some(c);
            }
            None => {
                let (b, _) = stack.pop().unwrap();
                on_path[b.0 as usize] = false;
                path.pop();
            }
        }
    }
}

pub fn find_paths_serial(graph: &SearchGraph, entries: &[BlockId], targets: &[BlockId], cfg: &SearchConfig) -> SearchResult {
    let prep = Prepared::new(graph, entries, targets);
    let counters = Counters::new(graph.num_nodes());
    let mut out = SearchResult::default();
    for &e in &prep.entries {
        let mut c = Collector::new(prep.num_targets, cfg.max_paths_per_pair);
        direct_search(&prep, cfg, &counters, None, e, &mut c);
        c.finish(e, &mut out);
    }
    out.stats = counters.into_stats();
    out
}

/// Suffix path stored as a shared cons list.
#[derive(Debug)]
struct Link {
    block: BlockId,
    len: u32,
    end: BlockId,
    next: Option<Arc<Link>>,
}

impl Link {
    fn leaf(b: BlockId) -> Arc<Link> {
        Arc::new(Link {
            block: b,
            len: 1,
            end: b,
            next: None,
        })
    }

    fn cons(b: BlockId, rest: &Arc<Link>) -> Arc<Link> {
        Arc::new(Link {
            block: b,
            len: rest.len + 1,
            end: rest.end,
            next: Some(rest.clone()),
        })
    }

    fn iter(&self) -> impl Iterator<Item = BlockId> + '_ {
        std::iter::successors(Some(self), |l| l.next.as_deref()).map(|l| l.block)
    }
}

enum MemoEntry {
    Complete(Vec<Arc<Link>>),
    Overflow,
}

/// Strongly connected components of the search graph restricted to blocks
/// that can reach an indicator.
struct Components {
    comp_of: Vec<usize>,
    members: Vec<Vec<BlockId>>,
    /// Blocks outside the component that its members step to.
    exits: Vec<Vec<BlockId>>,
}

impl Components {
    fn new(prep: &Prepared<'_>) -> Self {
        let n = prep.graph.num_nodes();
        let mut index = vec![usize::MAX; n];
        let mut low = vec![0; n];
        let mut on_stack = vec![false; n];
        let mut stack = Vec::new();
        let mut comp_of = vec![usize::MAX; n];
        let mut members: Vec<Vec<BlockId>> = Vec::new();
        let mut next_index = 0;
        for root in 0..n {
            if index[root] != usize::MAX || !prep.can_reach[root] {
                continue;
            }
            let mut work: Vec<(usize, usize)> = vec![(root, 0)];
            index[root] = next_index;
            low[root] = next_index;
            next_index += 1;
            stack.push(root);
            on_stack[root] = true;
            while let Some(&mut (v, ref mut i)) = work.last_mut() {
                let children: Vec<usize> = prep.children(BlockId(v as u32)).map(|c| c.0 as usize).collect();
                if let Some(&w) = children.get(*i) {
                    *i += 1;
                    if index[w] == usize::MAX {
                        index[w] = next_index;
                        low[w] = next_index;
                        next_index += 1;
                        stack.push(w);
                        on_stack[w] = true;
                        work.push((w, 0));
                    } else if on_stack[w] {
                        low[v] = low[v].min(index[w]);
                    }
                    continue;
                }
                work.pop();
                if let Some(&(parent, _)) = work.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let id = members.len();
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp_of[w] = id;
                        comp.push(BlockId(w as u32));
                        if w == v {
                            break;
                        }
                    }
                    comp.sort();
                    members.push(comp);
                }
            }
        }
        let exits = members
            .iter()
            .enumerate()
            .map(|(id, comp)| {
                let mut out: Vec<BlockId> = comp
                    .iter()
                    .flat_map(|b| prep.children(*b))
                    .filter(|c| comp_of[c.0 as usize] != id)
                    .collect();
                out.sort();
                out.dedup();
                out
            })
            .collect();
        Components {
            comp_of,
            members,
            exits,
        }
    }

    fn is_cyclic(&self, b: BlockId) -> bool {
        self.members[self.comp_of[b.0 as usize]].len() > 1
    }

    fn deps(&self, prep: &Prepared<'_>, b: BlockId) -> Vec<BlockId> {
        if self.is_cyclic(b) {
            self.exits[self.comp_of[b.0 as usize]].clone()
        } else {
            prep.children(b).filter(|c| *c != b).collect()
        }
    }
}

struct MemoSearch<'a, 'g> {
    prep: &'a Prepared<'g>,
    cfg: &'a SearchConfig,
    comps: Components,
    memo: Vec<OnceLock<MemoEntry>>,
    counters: Counters,
}

impl MemoSearch<'_, '_> {
    fn read(&self, b: BlockId) -> &MemoEntry {
        self.counters.memo_hits.fetch_add(1, Ordering::Relaxed);
        self.memo[b.0 as usize].get().expect("memo dependency computed first")
    }

    /// Makes sure `root` and everything it depends on has a memo entry.
    fn ensure(&self, root: BlockId, rng: &mut Option<StdRng>) {
        let mut stack = vec![(root, false)];
        while let Some((b, ready)) = stack.pop() {
            let cell = &self.memo[b.0 as usize];
            if cell.get().is_some() {
                continue;
            }
            if let Some(r) = rng.as_mut() {
                if r.gen_bool(0.2) {
                    std::thread::yield_now();
                }
            }
            if ready {
                cell.get_or_init(|| self.compute(b));
                continue;
            }
            stack.push((b, true));
            for d in self.comps.deps(self.prep, b) {
                if self.memo[d.0 as usize].get().is_none() {
                    stack.push((d, false));
                }
            }
        }
    }

    fn compute(&self, b: BlockId) -> MemoEntry {
        self.counters.memo_entries.fetch_add(1, Ordering::Relaxed);
        let limit = self.cfg.memo_limit;
        let depth = self.cfg.max_depth;
        if !self.comps.is_cyclic(b) {
            self.counters.expand(b);
            let mut out = Vec::new();
            if !self.prep.targets_at(b).is_empty() {
                out.push(Link::leaf(b));
            }
            for c in self.prep.children(b).filter(|c| *c != b) {
                let MemoEntry::Complete(suffixes) = self.read(c) else {
                    return MemoEntry::Overflow;
                };
                for s in suffixes {
                    if (s.len as usize) < depth {
                        out.push(Link::cons(b, s));
                    }
                }
                if out.len() > limit {
                    return MemoEntry::Overflow;
                }
            }
            return MemoEntry::Complete(out);
        }
        self.compute_cyclic(b)
    }

    /// Local depth-first search inside `b`'s component.
    fn compute_cyclic(&self, b: BlockId) -> MemoEntry {
        let comp = self.comps.comp_of[b.0 as usize];
        let limit = self.cfg.memo_limit;
        let depth = self.cfg.max_depth;
        let step_budget = limit.saturating_mul(16).max(1024);
        let mut steps = 0usize;
        let mut out: Vec<Arc<Link>> = Vec::new();
        let mut on_path: HashMap<BlockId, ()> = HashMap::new();
        let mut path: Vec<BlockId> = Vec::new();
        let mut stack: Vec<(BlockId, usize)> = Vec::new();
        let prefixed = |path: &[BlockId], tail: Arc<Link>| path.iter().rev().fold(tail, |acc, p| Link::cons(*p, &acc));
        let mut pending = Some(b);
        loop {
            if let Some(x) = pending.take() {
                self.counters.expand(x);
                if !self.prep.targets_at(x).is_empty() {
                    out.push(prefixed(&path, Link::leaf(x)));
                }
                path.push(x);
                on_path.insert(x, ());
                stack.push((x, 0));
            }
            steps += 1;
            if out.len() > limit || steps > step_budget {
                return MemoEntry::Overflow;
            }
            let Some((x, i)) = stack.last_mut() else {
                return MemoEntry::Complete(out);
            };
            let children: Vec<BlockId> = self.prep.children(*x).collect();
            let mut advanced = false;
            while let Some(&c) = children.get(*i) {
                *i += 1;
                if self.comps.comp_of[c.0 as usize] == comp {
                    if !on_path.contains_key(&c) && path.len() < depth {
                        pending = Some(c);
                        advanced = true;
                        break;
                    }
                    continue;
                }
                let MemoEntry::Complete(suffixes) = self.read(c) else {
                    return MemoEntry::Overflow;
                };
                for s in suffixes {
                    if path.len() + (s.len as usize) <= depth {
                        out.push(prefixed(&path, s.clone()));
                    }
                }
                if out.len() > limit {
                    return MemoEntry::Overflow;
                }
            }
            if !advanced {
                let (x, _) = stack.pop().unwrap();
                on_path.remove(&x);
                path.pop();
            }
        }
    }

    fn collect(&self, entry: BlockId, out: &mut Collector) {
        if !self.prep.can_reach[entry.0 as usize] {
            return;
        }
        match self.read(entry) {
            MemoEntry::Complete(suffixes) => {
                for s in suffixes {
                    for &t in self.prep.targets_at(s.end) {
                        out.offer(t, || s.iter().collect());
                    }
                    if out.done() {
                        break;
                    }
                }
            }
            MemoEntry::Overflow => {
                self.counters.fallbacks.fetch_add(1, Ordering::Relaxed);
                direct_search(self.prep, self.cfg, &self.counters, Some(&self.memo), entry, out);
            }
        }
    }
}

pub fn find_paths_parallel(graph: &SearchGraph, entries: &[BlockId], targets: &[BlockId], cfg: &SearchConfig) -> SearchResult {
    let prep = Prepared::new(graph, entries, targets);
    let search = MemoSearch {
        prep: &prep,
        cfg,
        comps: Components::new(&prep),
        memo: (0..graph.num_nodes()).map(|_| OnceLock::new()).collect(),
        counters: Counters::new(graph.num_nodes()),
    };
    let mut order: Vec<usize> = (0..prep.entries.len()).collect();
    if let Some(seed) = cfg.schedule_seed {
        order.shuffle(&mut StdRng::seed_from_u64(seed));
    }
    let workers = match cfg.workers {
        0 => prep.entries.len(),
        w => w.min(prep.entries.len()),
    }
    .max(1);
    let next = AtomicUsize::new(0);
    let mut per_entry: Vec<Option<Collector>> = (0..prep.entries.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (search, order, next) = (&search, &order, &next);
                s.spawn(move || {
                    let mut rng = cfg.schedule_seed.map(|seed| StdRng::seed_from_u64(seed ^ (w as u64 + 1)));
                    let mut done = Vec::new();
                    loop {
                        let k = next.fetch_add(1, Ordering::Relaxed);
                        let Some(&pos) = order.get(k) else {
                            break;
                        };
                        let entry = search.prep.entries[pos];
                        if search.prep.can_reach[entry.0 as usize] {
                            search.ensure(entry, &mut rng);
                        }
                        let mut c = Collector::new(search.prep.num_targets, cfg.max_paths_per_pair);
                        search.collect(entry, &mut c);
                        done.push((pos, c));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            for (pos, c) in h.join().expect("search worker panicked") {
                per_entry[pos] = Some(c);
            }
        }
    });
    let mut out = SearchResult::default();
    for (pos, c) in per_entry.into_iter().enumerate() {
        c.expect("every entry searched").finish(prep.entries[pos], &mut out);
    }
    out.stats = search.counters.into_stats();
    out
}
