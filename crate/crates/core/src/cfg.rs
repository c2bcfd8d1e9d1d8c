//! Static control-flow recovery, critical-edge splitting and edge inference.
//!
//! The ISA has only direct branches, so recovery by recursive traversal from
//! the entry point is exact: block leaders are the entry, every jump target and
//! every fall-through address after a conditional jump. Unreachable bytes are
//! never assigned to a block.
//!
//! Program entry counts as one incoming edge of the entry block, so a branch
//! back to the entry from a multi-way block is treated as critical. Without
//! that, observing the entry block would not imply that the back edge ran.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::isa::{decode, jump_target, rel_offset, DecodeError, Insn, OP_JMP};
use crate::vm::{ProgramImage, VmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: u32,
    pub dest: u32,
}

impl Edge {
    pub fn new(src: u32, dest: u32) -> Self {
        Edge { src, dest }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terminator {
    Fallthrough,
    Jmp,
    CondJmp,
    Halt,
    Abort,
}

impl Terminator {
    pub fn as_str(self) -> &'static str {
        match self {
            Terminator::Fallthrough => "fallthrough",
            Terminator::Jmp => "jmp",
            Terminator::CondJmp => "condjmp",
            Terminator::Halt => "halt",
            Terminator::Abort => "abort",
        }
    }
}

impl fmt::Display for Terminator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Terminator {
    type Err = CfgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "fallthrough" => Terminator::Fallthrough,
            "jmp" => Terminator::Jmp,
            "condjmp" => Terminator::CondJmp,
            "halt" => Terminator::Halt,
            "abort" => Terminator::Abort,
            _ => return Err(CfgError::UnknownTerminator),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasicBlock {
    pub start: u32,
    pub len: u32,
    pub terminator: Terminator,
    /// For `CondJmp`: `[taken, fall-through]`. One entry for `Jmp` and
    /// `Fallthrough`, none for `Halt` and `Abort`.
    pub successors: Vec<u32>,
}

impl BasicBlock {
    pub fn end(&self) -> u32 {
        self.start + self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Malformed {
    Truncated,
    IllegalOpcode(u8),
    BadRegister(u8),
    TrapInCode,
    JumpOutOfRange,
    OverlappingInstruction,
    FallsOffEnd,
}

impl From<DecodeError> for Malformed {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Truncated => Malformed::Truncated,
            DecodeError::IllegalOpcode(op) => Malformed::IllegalOpcode(op),
            DecodeError::BadRegister(r) => Malformed::BadRegister(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CfgError {
    #[error("malformed image at {addr:#x}: {reason:?}")]
    MalformedImage { addr: u32, reason: Malformed },
    #[error("{0} critical edges present; split them first")]
    CriticalEdgesPresent(usize),
    #[error("image too large for 16-bit relative branches")]
    ImageTooLarge,
    #[error("unknown terminator name")]
    UnknownTerminator,
    #[error(transparent)]
    Vm(#[from] VmError),
}

fn malformed(addr: usize, reason: Malformed) -> CfgError {
    CfgError::MalformedImage {
        addr: addr as u32,
        reason,
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Unvisited,
    Start,
    Operand,
}

/// Recovers the basic blocks reachable from the image's entry point, sorted by start.
pub fn discover_blocks(image: &ProgramImage) -> Result<Vec<BasicBlock>, CfgError> {
    let code = image.bytes();
    let n = code.len();
    let mut slots = vec![Slot::Unvisited; n];
    let mut insns: Vec<Option<Insn>> = vec![None; n];
    let mut leader = vec![false; n];
    let entry = image.entry() as usize;
    leader[entry] = true;

    let checked_target = |pc: usize, rel: i16| -> Result<usize, CfgError> {
        let t = jump_target(pc, rel);
        if t < 0 || t as usize >= n {
            return Err(malformed(pc, Malformed::JumpOutOfRange));
        }
        Ok(t as usize)
    };

    let mut work = vec![entry];
    while let Some(pc) = work.pop() {
        match slots[pc] {
            Slot::Start => continue,
            Slot::Operand => return Err(malformed(pc, Malformed::OverlappingInstruction)),
            Slot::Unvisited => {}
        }
        let insn = decode(code, pc).map_err(|e| malformed(pc, e.into()))?;
        if insn == Insn::Trap {
            return Err(malformed(pc, Malformed::TrapInCode));
        }
        slots[pc] = Slot::Start;
        for s in &mut slots[pc + 1..pc + insn.encoded_len()] {
            if *s != Slot::Unvisited {
                return Err(malformed(pc, Malformed::OverlappingInstruction));
            }
            *s = Slot::Operand;
        }
        insns[pc] = Some(insn);

        let next = pc + insn.encoded_len();
        match insn {
            Insn::Halt | Insn::Abort => {}
            Insn::Jmp(rel) => {
                let t = checked_target(pc, rel)?;
                leader[t] = true;
                work.push(t);
            }
            Insn::Jz(rel) | Insn::Jnz(rel) => {
                let t = checked_target(pc, rel)?;
                if next >= n {
                    return Err(malformed(pc, Malformed::FallsOffEnd));
                }
                leader[t] = true;
                leader[next] = true;
                work.push(t);
                work.push(next);
            }
            _ => {
                if next >= n {
                    return Err(malformed(pc, Malformed::FallsOffEnd));
                }
                work.push(next);
            }
        }
    }

    let mut blocks = Vec::new();
    for start in (0..n).filter(|&a| leader[a]) {
        let mut pc = start;
        let (terminator, successors, end) = loop {
            let insn = insns[pc].expect("leaders and their successors are decoded");
            let next = pc + insn.encoded_len();
            match insn {
                Insn::Halt => break (Terminator::Halt, vec![], next),
                Insn::Abort => break (Terminator::Abort, vec![], next),
                Insn::Jmp(rel) => break (Terminator::Jmp, vec![jump_target(pc, rel) as u32], next),
                Insn::Jz(rel) | Insn::Jnz(rel) => {
                    break (
                        Terminator::CondJmp,
                        vec![jump_target(pc, rel) as u32, next as u32],
                        next,
                    )
                }
                _ if leader[next] => break (Terminator::Fallthrough, vec![next as u32], next),
                _ => pc = next,
            }
        };
        blocks.push(BasicBlock {
            start: start as u32,
            len: (end - start) as u32,
            terminator,
            successors,
        });
    }
    Ok(blocks)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlFlowGraph {
    entry: u32,
    blocks: BTreeMap<u32, BasicBlock>,
    edges: BTreeSet<Edge>,
    in_degree: BTreeMap<u32, usize>,
}

impl ControlFlowGraph {
    pub fn new(entry: u32, blocks: Vec<BasicBlock>) -> Self {
        let blocks: BTreeMap<u32, BasicBlock> = blocks.into_iter().map(|b| (b.start, b)).collect();
        let edges: BTreeSet<Edge> = blocks
            .values()
            .flat_map(|b| b.successors.iter().map(move |&d| Edge::new(b.start, d)))
            .collect();
        let mut in_degree: BTreeMap<u32, usize> = blocks.keys().map(|&k| (k, 0)).collect();
        *in_degree.entry(entry).or_default() += 1;
        for e in &edges {
            *in_degree.entry(e.dest).or_default() += 1;
        }
        ControlFlowGraph {
            entry,
            blocks,
            edges,
            in_degree,
        }
    }

    pub fn from_image(image: &ProgramImage) -> Result<Self, CfgError> {
        Ok(Self::new(image.entry(), discover_blocks(image)?))
    }

    pub fn entry(&self) -> u32 {
        self.entry
    }

    pub fn blocks(&self) -> impl Iterator<Item = &BasicBlock> + '_ {
        self.blocks.values()
    }

    pub fn block(&self, start: u32) -> Option<&BasicBlock> {
        self.blocks.get(&start)
    }

    pub fn block_starts(&self) -> impl Iterator<Item = u32> + '_ {
        self.blocks.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    /// Number of distinct successors.
    pub fn out_degree(&self, start: u32) -> usize {
        self.edges
            .range(Edge::new(start, 0)..=Edge::new(start, u32::MAX))
            .count()
    }

    /// Number of distinct predecessors, plus one for the entry block.
    pub fn in_degree(&self, start: u32) -> usize {
        self.in_degree.get(&start).copied().unwrap_or(0)
    }

    /// Block starts reachable from the entry by graph search.
    pub fn reachable(&self) -> BTreeSet<u32> {
        let mut seen = BTreeSet::new();
        let mut work = vec![self.entry];
        while let Some(b) = work.pop() {
            if seen.insert(b) {
                if let Some(block) = self.blocks.get(&b) {
                    work.extend(block.successors.iter().copied());
                }
            }
        }
        seen
    }
}

/// Edges whose source has several successors and whose destination has several
/// predecessors.
pub fn find_critical_edges(cfg: &ControlFlowGraph) -> BTreeSet<Edge> {
    cfg.edges()
        .iter()
        .filter(|e| cfg.out_degree(e.src) >= 2 && cfg.in_degree(e.dest) >= 2)
        .copied()
        .collect()
}

#[derive(Debug, Clone)]
pub struct SplitOutput {
    pub image: ProgramImage,
    pub cfg: ControlFlowGraph,
    /// Dummy block start → the critical edge it replaces.
    pub dummies: BTreeMap<u32, Edge>,
    /// Relocated conditional branch start → the block it was moved out of.
    pub relocated: BTreeMap<u32, u32>,
}

fn encode_jump(out: &mut [u8], at: usize, opcode: u8, target: usize) -> Result<(), CfgError> {
    let rel = rel_offset(at, target).ok_or(CfgError::ImageTooLarge)?;
    out[at] = opcode;
    out[at + 1..at + 3].copy_from_slice(&rel.to_le_bytes());
    Ok(())
}

fn append_jump(out: &mut Vec<u8>, opcode: u8, target: usize) -> Result<usize, CfgError> {
    let at = out.len();
    out.extend_from_slice(&[0; 3]);
    encode_jump(out, at, opcode, target)?;
    Ok(at)
}

/// Splits every critical edge by routing it through an appended dummy block
/// holding a single `JMP` to the original destination.
///
/// A critical taken arm is retargeted in place. A fall-through arm cannot be
/// retargeted, so the conditional branch is moved to the image tail (its old
/// slot becomes a same-size `JMP` to the moved copy) and the dummy is placed
/// directly after it as its new fall-through. Existing offsets never move.
pub fn split_critical_edges(
    image: &ProgramImage,
    cfg: &ControlFlowGraph,
) -> Result<SplitOutput, CfgError> {
    let critical = find_critical_edges(cfg);
    if critical.is_empty() {
        return Ok(SplitOutput {
            image: image.clone(),
            cfg: cfg.clone(),
            dummies: BTreeMap::new(),
            relocated: BTreeMap::new(),
        });
    }

    let original = image.bytes();
    let mut out = original.to_vec();
    let mut dummies = BTreeMap::new();
    let mut relocated = BTreeMap::new();

    for block in cfg.blocks().filter(|b| b.terminator == Terminator::CondJmp) {
        let (taken, fall) = (block.successors[0], block.successors[1]);
        let taken_critical = critical.contains(&Edge::new(block.start, taken));
        let fall_critical = critical.contains(&Edge::new(block.start, fall));
        let branch_at = (block.end() - 3) as usize;
        let opcode = original[branch_at];

        if fall_critical {
            let moved = out.len();
            let fall_dummy = moved + 3;
            let taken_dest = if taken_critical {
                moved + 6
            } else {
                taken as usize
            };
            append_jump(&mut out, opcode, taken_dest)?;
            append_jump(&mut out, OP_JMP, fall as usize)?;
            dummies.insert(fall_dummy as u32, Edge::new(block.start, fall));
            if taken_critical {
                let d = append_jump(&mut out, OP_JMP, taken as usize)?;
                dummies.insert(d as u32, Edge::new(block.start, taken));
            }
            encode_jump(&mut out, branch_at, OP_JMP, moved)?;
            relocated.insert(moved as u32, block.start);
        } else if taken_critical {
            let d = append_jump(&mut out, OP_JMP, taken as usize)?;
            encode_jump(&mut out, branch_at, opcode, d)?;
            dummies.insert(d as u32, Edge::new(block.start, taken));
        }
    }

    if u32::try_from(out.len()).is_err() {
        return Err(CfgError::ImageTooLarge);
    }
    let new_image =
        ProgramImage::load(out, image.entry())?.with_input_len_max(image.input_len_max());
    let new_cfg = ControlFlowGraph::from_image(&new_image)?;
    debug_assert!(find_critical_edges(&new_cfg).is_empty());
    Ok(SplitOutput {
        image: new_image,
        cfg: new_cfg,
        dummies,
        relocated,
    })
}

/// Infers which edges ran from the set of covered blocks.
///
/// Only sound on graphs without critical edges: then every edge either leaves
/// a single-successor block or enters a single-predecessor block, so coverage
/// of both endpoints pins the edge down.
pub fn infer_edge_coverage(
    covered: &BTreeSet<u32>,
    cfg: &ControlFlowGraph,
) -> Result<BTreeSet<Edge>, CfgError> {
    let critical = find_critical_edges(cfg).len();
    if critical > 0 {
        return Err(CfgError::CriticalEdgesPresent(critical));
    }
    Ok(cfg
        .edges()
        .iter()
        .filter(|e| covered.contains(&e.src) && covered.contains(&e.dest))
        .filter(|e| cfg.out_degree(e.src) == 1 || cfg.in_degree(e.dest) == 1)
        .copied()
        .collect())
}
