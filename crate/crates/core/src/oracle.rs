//! The interest oracle: a copy of the target whose uncovered blocks start with
//! a trap byte.
//!
//! Running a test case on the oracle costs the same as running it on the
//! original program until it enters a block nobody has covered yet, at which
//! point it traps. Those are the only test cases that need tracing. After
//! tracing, the newly covered blocks get their original first byte back so
//! they never trap again.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::cfg::BasicBlock;
use crate::isa::TRAP;
use crate::tracer::TraceLog;
use crate::vm::{ExecBudget, OutcomeKind, ProgramImage, Snapshot};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("address {0:#x} is not a known block start")]
    UnknownBlock(u32),
}

/// Block starts covered by any test case so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalCoverage {
    covered: Vec<bool>,
    count: usize,
}

impl GlobalCoverage {
    pub fn new(code_len: usize) -> Self {
        GlobalCoverage {
            covered: vec![false; code_len],
            count: 0,
        }
    }

    #[inline]
    pub fn contains(&self, addr: u32) -> bool {
        self.covered.get(addr as usize).copied().unwrap_or(false)
    }

    /// Marks `addr` covered; returns whether it was new.
    pub fn insert(&mut self, addr: u32) -> bool {
        let slot = &mut self.covered[addr as usize];
        if *slot {
            return false;
        }
        *slot = true;
        self.count += 1;
        true
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Covered block starts in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.covered
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(a, _)| a as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VerdictKind {
    CoverageIncreasing,
    NotInteresting,
    Crash,
    Timeout,
}

impl VerdictKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictKind::CoverageIncreasing => "coverage-increasing",
            VerdictKind::NotInteresting => "not-interesting",
            VerdictKind::Crash => "crash",
            VerdictKind::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "coverage-increasing" => VerdictKind::CoverageIncreasing,
            "not-interesting" => VerdictKind::NotInteresting,
            "crash" => VerdictKind::Crash,
            "timeout" => VerdictKind::Timeout,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterestVerdict {
    pub kind: VerdictKind,
    pub trap_addr: Option<u32>,
    /// Instructions the oracle executed before stopping.
    pub instructions_executed: u64,
}

#[derive(Debug, Clone)]
pub struct OracleImage {
    image: ProgramImage,
    server: Option<Snapshot>,
    patch_map: BTreeMap<u32, u8>,
    excluded: BTreeSet<u32>,
    block_starts: BTreeSet<u32>,
}

impl OracleImage {
    /// Patches a trap over the first byte of every non-excluded block and
    /// starts the oracle's server.
    pub fn new(image: &ProgramImage, blocks: &[BasicBlock], excluded: &BTreeSet<u32>) -> Self {
        let mut patched = image.clone();
        let mut patch_map = BTreeMap::new();
        for b in blocks.iter().filter(|b| !excluded.contains(&b.start)) {
            let orig = patched
                .patch_byte(b.start, TRAP)
                .expect("block starts lie inside the image");
            patch_map.insert(b.start, orig);
        }
        let server = Some(Snapshot::take(&patched));
        OracleImage {
            image: patched,
            server,
            patch_map,
            excluded: excluded.clone(),
            block_starts: blocks.iter().map(|b| b.start).collect(),
        }
    }

    pub fn image(&self) -> &ProgramImage {
        &self.image
    }

    pub fn patch_map(&self) -> &BTreeMap<u32, u8> {
        &self.patch_map
    }

    pub fn excluded(&self) -> &BTreeSet<u32> {
        &self.excluded
    }

    pub fn is_patched(&self, addr: u32) -> bool {
        self.patch_map.contains_key(&addr)
    }

    /// Runs `input` on the live oracle. Never mutates the oracle.
    pub fn check_interesting(&self, input: &[u8], budget: ExecBudget) -> InterestVerdict {
        let server = self
            .server
            .as_ref()
            .expect("the server is restarted whenever a StoppedOracle is dropped");
        let out = server.execute(input, budget);
        let kind = match out.kind {
            OutcomeKind::Trap => VerdictKind::CoverageIncreasing,
            OutcomeKind::CleanExit => VerdictKind::NotInteresting,
            OutcomeKind::Crash => VerdictKind::Crash,
            OutcomeKind::Timeout => VerdictKind::Timeout,
        };
        InterestVerdict {
            kind,
            trap_addr: out.trap_addr,
            instructions_executed: out.instructions_executed,
        }
    }

    /// Discards the live server so the image can be patched.
    pub fn stop_server(&mut self) -> StoppedOracle<'_> {
        self.server = None;
        StoppedOracle { oracle: self }
    }

    /// Stops the server, restores every newly covered block in `trace` and
    /// restarts the server. Returns the number of blocks restored.
    pub fn unmodify(
        &mut self,
        global: &mut GlobalCoverage,
        trace: &TraceLog,
    ) -> Result<usize, OracleError> {
        let mut stopped = self.stop_server();
        let restored = stopped.unmodify_blocks(global, &trace.blocks);
        stopped.start_server();
        restored
    }
}

/// An oracle whose server is down. Dropping it restarts the server.
pub struct StoppedOracle<'a> {
    oracle: &'a mut OracleImage,
}

impl StoppedOracle<'_> {
    /// Restores the original first byte of each block in `blocks` that is
    /// neither globally covered nor excluded, and marks it covered.
    ///
    /// All addresses are validated before anything is patched.
    pub fn unmodify_blocks(
        &mut self,
        global: &mut GlobalCoverage,
        blocks: &[u32],
    ) -> Result<usize, OracleError> {
        let oracle = &mut *self.oracle;
        if let Some(&bad) = blocks.iter().find(|b| !oracle.block_starts.contains(b)) {
            return Err(OracleError::UnknownBlock(bad));
        }
        let mut restored = 0;
        for &b in blocks {
            if global.contains(b) || oracle.excluded.contains(&b) {
                continue;
            }
            if let Some(orig) = oracle.patch_map.remove(&b) {
                oracle
                    .image
                    .patch_byte(b, orig)
                    .expect("patched addresses lie inside the image");
            }
            global.insert(b);
            restored += 1;
        }
        Ok(restored)
    }

    pub fn start_server(self) {
        // Drop does the work.
    }
}

impl Drop for StoppedOracle<'_> {
    fn drop(&mut self) {
        self.oracle.server = Some(Snapshot::take(&self.oracle.image));
    }
}

/// Oracle construction under its usual name.
pub fn build_oracle(
    image: &ProgramImage,
    blocks: &[BasicBlock],
    excluded: &BTreeSet<u32>,
) -> OracleImage {
    OracleImage::new(image, blocks, excluded)
}
