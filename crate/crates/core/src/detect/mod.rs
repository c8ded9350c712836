//! Vulnerability indicators, call-graph pruning and entry path search.

mod indicators;
mod prune;
mod search;

pub use indicators::{detect_indicators, is_checked, is_external_call, loop_blocks, Indicator, Rule};
pub use prune::prune_wcc;
pub use search::{
    find_paths_parallel, find_paths_serial, EntryPath, SearchConfig, SearchGraph, SearchResult, SearchStats,
};
