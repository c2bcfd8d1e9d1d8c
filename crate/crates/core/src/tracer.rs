//! Block-coverage tracing of single executions.
//!
//! Tracing happens at interpreter level: an observer checks every fetch
//! address against the block-start table, the analogue of a callback placed
//! at each block start, and logs a block the first time it is entered in the
//! current run. Repeat visits are filtered through a hash set keyed by block
//! start that is cleared after every run.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use fnv::FnvBuildHasher;
use hashbrown::HashSet;

use crate::cfg::{BasicBlock, Edge};
use crate::vm::{run, ExecBudget, ExecOutcome, Observer, ProgramImage, Snapshot};

/// Uniquely-covered blocks of one execution, in first-visit order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TraceLog {
    pub blocks: Vec<u32>,
    pub outcome: ExecOutcome,
}

#[derive(Debug, Clone)]
pub struct TracerImage {
    server: Snapshot,
    block_start: Vec<bool>,
    block_count: usize,
    visited: HashSet<u32, FnvBuildHasher>,
}

struct BlockRecorder<'a> {
    block_start: &'a [bool],
    visited: &'a mut HashSet<u32, FnvBuildHasher>,
    log: &'a mut Vec<u32>,
}

impl Observer for BlockRecorder<'_> {
    #[inline(always)]
    fn on_fetch(&mut self, pc: u32) {
        if self.block_start.get(pc as usize).copied().unwrap_or(false) && self.visited.insert(pc) {
            self.log.push(pc);
        }
    }
}

struct EdgeRecorder<'a> {
    block_start: &'a [bool],
    prev: Option<u32>,
    edges: BTreeSet<Edge>,
}

impl Observer for EdgeRecorder<'_> {
    fn on_fetch(&mut self, pc: u32) {
        if self.block_start.get(pc as usize).copied().unwrap_or(false) {
            if let Some(prev) = self.prev {
                self.edges.insert(Edge::new(prev, pc));
            }
            self.prev = Some(pc);
        }
    }
}

impl TracerImage {
    /// Builds a tracer over `blocks` (as returned by [`crate::cfg::discover_blocks`]).
    pub fn new(image: &ProgramImage, blocks: &[BasicBlock]) -> Self {
        let mut block_start = vec![false; image.len()];
        for b in blocks {
            block_start[b.start as usize] = true;
        }
        TracerImage {
            server: Snapshot::take(image),
            block_start,
            block_count: blocks.len(),
            visited: HashSet::with_capacity_and_hasher(blocks.len(), FnvBuildHasher::default()),
        }
    }

    pub fn image(&self) -> &ProgramImage {
        self.server.image()
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn is_block_start(&self, addr: u32) -> bool {
        self.block_start
            .get(addr as usize)
            .copied()
            .unwrap_or(false)
    }

    pub fn block_starts(&self) -> impl Iterator<Item = u32> + '_ {
        self.block_start
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(a, _)| a as u32)
    }

    pub fn trace(&mut self, input: &[u8], budget: ExecBudget) -> TraceLog {
        let mut blocks = Vec::new();
        let mut recorder = BlockRecorder {
            block_start: &self.block_start,
            visited: &mut self.visited,
            log: &mut blocks,
        };
        let outcome = run(self.server.image(), input, budget, &mut recorder);
        self.visited.clear();
        TraceLog { blocks, outcome }
    }

    /// Every consecutive block transition of one execution.
    pub fn trace_edges(&self, input: &[u8], budget: ExecBudget) -> BTreeSet<Edge> {
        let mut recorder = EdgeRecorder {
            block_start: &self.block_start,
            prev: None,
            edges: BTreeSet::new(),
        };
        run(self.server.image(), input, budget, &mut recorder);
        recorder.edges
    }
}

/// Tracer construction under its usual name.
pub fn build_tracer(image: &ProgramImage, blocks: &[BasicBlock]) -> TracerImage {
    TracerImage::new(image, blocks)
}
