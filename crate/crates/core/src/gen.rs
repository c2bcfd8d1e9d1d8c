//! Deterministic benchmark-program generators with ground truth.
//!
//! Every generator records the block table it lays out, the address of each
//! planted `ABORT` and one input per crash site that reaches it. All blocks a
//! generator emits are reachable from the entry.
//!
//! * maze: chains of byte-equality gates on distinct input positions, one
//!   chain per crash site. A failed gate skips to the next chain; the last
//!   chain fails into the exit block. From size 8 on, a checksum-style work
//!   loop over the input runs first, so every execution does a realistic
//!   amount of work.
//! * checksum: an XOR checksum of the first 16 input bytes is computed up
//!   front; each crash site sits behind optional byte gates (reading input
//!   positions 32 and up) and a guard comparing the checksum to a constant.
//! * parser: a byte-at-a-time state machine. Each state dispatches on a few
//!   token bytes; a zero byte (including end of input) exits and any other
//!   byte resets to the first state. Some tokens lead straight to `ABORT`.
//!
//! [`random_program`] builds arbitrary small forward-branching programs with
//! counted self-loops, used to exercise critical-edge splitting.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::asm::{AsmError, Assembler, Label};
use crate::cfg::{BasicBlock, Terminator};
use crate::isa::{Insn, Reg};
use crate::rng::FuzzRng;
use crate::vm::ProgramImage;

/// Iterations of the maze work loop (five instructions each).
pub const MAZE_WORK_ITERATIONS: u8 = 200;

/// Input bytes folded into the checksum generator's checksum.
pub const CHECKSUM_SPAN: u8 = 16;

/// First input position read by checksum-generator gates.
pub const CHECKSUM_GATE_BASE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchKind {
    Maze,
    Checksum,
    Parser,
}

impl BenchKind {
    pub const ALL: [BenchKind; 3] = [BenchKind::Maze, BenchKind::Checksum, BenchKind::Parser];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchKind::Maze => "maze",
            BenchKind::Checksum => "checksum",
            BenchKind::Parser => "parser",
        }
    }

    /// Smallest block count the generator can lay out.
    pub fn min_size(self) -> usize {
        match self {
            BenchKind::Maze => 4,
            BenchKind::Checksum => 5,
            BenchKind::Parser => 8,
        }
    }

    /// Largest block count the generator accepts.
    pub fn max_size(self) -> usize {
        match self {
            // Gates read input positions through an 8-bit immediate.
            BenchKind::Maze => 200,
            BenchKind::Checksum => 200,
            BenchKind::Parser => 4096,
        }
    }
}

impl fmt::Display for BenchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchKind {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "maze" => Ok(BenchKind::Maze),
            "checksum" => Ok(BenchKind::Checksum),
            "parser" => Ok(BenchKind::Parser),
            _ => Err(GenError::UnknownKind),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("{kind} needs at least {min} blocks")]
    SizeTooSmall { kind: BenchKind, min: usize },
    #[error("{kind} supports at most {max} blocks")]
    SizeTooLarge { kind: BenchKind, max: usize },
    #[error("unknown benchmark kind (expected maze, parser or checksum)")]
    UnknownKind,
    #[error(transparent)]
    Asm(#[from] AsmError),
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub kind: BenchKind,
    pub size: usize,
    pub seed: u64,
    pub image: ProgramImage,
    /// Ground-truth block table, sorted by start.
    pub blocks: Vec<BasicBlock>,
    /// Address of each planted `ABORT`.
    pub crash_sites: Vec<u32>,
    /// `witnesses[i]` crashes at `crash_sites[i]`.
    pub witnesses: Vec<Vec<u8>>,
    /// Non-crashing starting inputs for a fuzz session.
    pub seeds: Vec<Vec<u8>>,
}

impl Benchmark {
    /// Every generated block is reachable.
    pub fn reachable_count(&self) -> usize {
        self.blocks.len()
    }
}

/// Builds the benchmark `kind` with exactly `size` blocks.
pub fn generate(kind: BenchKind, size: usize, seed: u64) -> Result<Benchmark, GenError> {
    if size < kind.min_size() {
        return Err(GenError::SizeTooSmall {
            kind,
            min: kind.min_size(),
        });
    }
    if size > kind.max_size() {
        return Err(GenError::SizeTooLarge {
            kind,
            max: kind.max_size(),
        });
    }
    let mut rng = FuzzRng::new(seed);
    let bench = match kind {
        BenchKind::Maze => maze(size, &mut rng),
        BenchKind::Checksum => checksum(size, &mut rng),
        BenchKind::Parser => parser(size, &mut rng),
    }?;
    debug_assert_eq!(bench.blocks.len(), size);
    Ok(Benchmark {
        kind,
        size,
        seed,
        ..bench
    })
}

#[derive(Clone, Copy)]
enum Term {
    Fallthrough(Label),
    Jmp(Label),
    Cond { taken: Label, fall: Label },
    Halt,
    Abort,
}

/// Assembler wrapper that records the block layout as it is emitted. Blocks
/// must be emitted contiguously, each starting with [`Builder::begin`].
struct Builder {
    asm: Assembler,
    blocks: Vec<(Label, Term)>,
    aborts: Vec<Label>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            asm: Assembler::new(),
            blocks: Vec::new(),
            aborts: Vec::new(),
        }
    }

    fn label(&mut self) -> Label {
        self.asm.label()
    }

    fn begin(&mut self, at: Label) {
        self.asm.bind(at);
    }

    fn emit(&mut self, insn: Insn) {
        self.asm.emit(insn);
    }

    fn end(&mut self, at: Label, term: Term) {
        match term {
            Term::Fallthrough(_) => {}
            Term::Jmp(t) => self.asm.jmp(t),
            Term::Cond { taken, .. } => self.asm.jnz(taken),
            Term::Halt => self.asm.emit(Insn::Halt),
            Term::Abort => {
                self.aborts.push(at);
                self.asm.emit(Insn::Abort);
            }
        }
        self.blocks.push((at, term));
    }

    /// `input[idx] == value` falls through to `pass`; anything else jumps to
    /// `fail`.
    fn gate(&mut self, at: Label, idx: u8, value: u8, fail: Label, pass: Label) {
        self.begin(at);
        self.emit(Insn::LoadIn { dst: Reg::R0, idx });
        self.emit(Insn::LoadI {
            dst: Reg::R1,
            imm: value,
        });
        self.emit(Insn::Cmp {
            dst: Reg::R0,
            src: Reg::R1,
        });
        self.end(
            at,
            Term::Cond {
                taken: fail,
                fall: pass,
            },
        );
    }

    fn abort(&mut self, at: Label) {
        self.begin(at);
        self.end(at, Term::Abort);
    }

    fn finish(self) -> Result<(ProgramImage, Vec<BasicBlock>, Vec<u32>), AsmError> {
        let out = self.asm.finish()?;
        let code_len = out.bytes.len() as u32;
        let starts: Vec<u32> = self.blocks.iter().map(|&(l, _)| out.addr(l)).collect();
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, &(_, term))| {
                let start = starts[i];
                let end = starts.get(i + 1).copied().unwrap_or(code_len);
                let (terminator, successors) = match term {
                    Term::Fallthrough(n) => (Terminator::Fallthrough, vec![out.addr(n)]),
                    Term::Jmp(t) => (Terminator::Jmp, vec![out.addr(t)]),
                    Term::Cond { taken, fall } => {
                        (Terminator::CondJmp, vec![out.addr(taken), out.addr(fall)])
                    }
                    Term::Halt => (Terminator::Halt, vec![]),
                    Term::Abort => (Terminator::Abort, vec![]),
                };
                BasicBlock {
                    start,
                    len: end - start,
                    terminator,
                    successors,
                }
            })
            .collect();
        let aborts = self.aborts.iter().map(|&l| out.addr(l)).collect();
        Ok((ProgramImage::load(out.bytes, 0)?, blocks, aborts))
    }
}

fn crash_site_count(size: usize) -> usize {
    1 + size / 48
}

/// `count` distinct non-zero bytes.
fn distinct_nonzero(rng: &mut FuzzRng, count: usize) -> Vec<u8> {
    debug_assert!(count <= 255);
    let mut pool: Vec<u8> = (1..=255).collect();
    for i in 0..count {
        let j = i + rng.below(pool.len() - i);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}

/// Splits `total` gates over `segments` chains: the first chain gets at most
/// two (so one crash site is shallow), the rest share evenly. Chains may be
/// empty only when `allow_empty` holds.
fn split_gates(total: usize, segments: usize, allow_empty: bool) -> Vec<usize> {
    let floor = usize::from(!allow_empty);
    let first = if segments == 1 {
        total
    } else {
        total
            .saturating_sub(floor * (segments - 1))
            .min(2)
            .max(floor)
    };
    let mut counts = vec![first];
    let rest = total - first;
    let others = segments - 1;
    for i in 0..others {
        counts.push(rest / others + usize::from(i < rest % others));
    }
    counts
}

/// Emits `r4 = sum or xor of input[0..iterations]` as two blocks: a setup
/// block falling into a counted loop. Leaves r6 = 1.
fn input_loop(b: &mut Builder, iterations: u8, xor: bool, next: Label) {
    let (setup, body) = (b.label(), b.label());
    b.begin(setup);
    b.emit(Insn::LoadI {
        dst: Reg::R6,
        imm: 1,
    });
    b.emit(Insn::LoadI {
        dst: Reg::R7,
        imm: iterations,
    });
    b.emit(Insn::LoadI {
        dst: Reg::R5,
        imm: 0,
    });
    b.emit(Insn::LoadI {
        dst: Reg::R4,
        imm: 0,
    });
    b.end(setup, Term::Fallthrough(body));
    b.begin(body);
    b.emit(Insn::LoadInR {
        dst: Reg::R0,
        idx: Reg::R5,
    });
    if xor {
        b.emit(Insn::Xor {
            dst: Reg::R4,
            src: Reg::R0,
        });
    } else {
        b.emit(Insn::Add {
            dst: Reg::R4,
            src: Reg::R0,
        });
    }
    b.emit(Insn::Add {
        dst: Reg::R5,
        src: Reg::R6,
    });
    b.emit(Insn::Sub {
        dst: Reg::R7,
        src: Reg::R6,
    });
    b.end(
        body,
        Term::Cond {
            taken: body,
            fall: next,
        },
    );
}

fn maze(size: usize, rng: &mut FuzzRng) -> Result<Benchmark, GenError> {
    let work = size >= 8;
    let sites = crash_site_count(size);
    let gates = size - 1 - sites - if work { 2 } else { 0 };
    let per_chain = split_gates(gates, sites, false);
    let values = distinct_nonzero(rng, gates.min(255));

    let mut b = Builder::new();
    let exit = b.label();
    let heads: Vec<Label> = (0..sites).map(|_| b.label()).collect();
    if work {
        input_loop(&mut b, MAZE_WORK_ITERATIONS, false, heads[0]);
    }
    let mut witnesses = Vec::new();
    let mut idx = 0usize;
    for (chain, &n) in per_chain.iter().enumerate() {
        let fail = heads.get(chain + 1).copied().unwrap_or(exit);
        let crash = b.label();
        let mut at = heads[chain];
        // Input that fails every earlier chain's first gate.
        let mut witness = vec![0u8; gates];
        for g in 0..n {
            let pass = if g + 1 == n { crash } else { b.label() };
            let value = values[idx % values.len()];
            b.gate(at, idx as u8, value, fail, pass);
            witness[idx] = value;
            idx += 1;
            at = pass;
        }
        b.abort(crash);
        witnesses.push(witness);
    }
    b.begin(exit);
    b.end(exit, Term::Halt);

    let (image, blocks, crash_sites) = b.finish()?;
    Ok(Benchmark {
        kind: BenchKind::Maze,
        size,
        seed: 0,
        image,
        blocks,
        crash_sites,
        witnesses,
        seeds: vec![vec![0u8; 4]],
    })
}

fn checksum(size: usize, rng: &mut FuzzRng) -> Result<Benchmark, GenError> {
    let sites = crash_site_count(size).min((size - 3) / 2);
    let gates = size - 3 - 2 * sites;
    let per_chain = split_gates(gates, sites, true);
    let values = distinct_nonzero(rng, gates.min(255));
    let targets = distinct_nonzero(rng, sites);
    let input_len = if gates > 0 {
        CHECKSUM_GATE_BASE + gates
    } else {
        CHECKSUM_SPAN as usize
    };

    let mut b = Builder::new();
    let exit = b.label();
    let heads: Vec<Label> = (0..sites).map(|_| b.label()).collect();
    input_loop(&mut b, CHECKSUM_SPAN, true, heads[0]);
    let mut witnesses = Vec::new();
    let mut idx = 0usize;
    for (chain, &n) in per_chain.iter().enumerate() {
        let fail = heads.get(chain + 1).copied().unwrap_or(exit);
        let crash = b.label();
        let mut at = heads[chain];
        let mut witness = vec![0u8; input_len];
        for _ in 0..n {
            let pass = b.label();
            let pos = CHECKSUM_GATE_BASE + idx;
            let value = values[idx % values.len()];
            b.gate(at, pos as u8, value, fail, pass);
            witness[pos] = value;
            idx += 1;
            at = pass;
        }
        // The guard: the chain head itself when there are no gates.
        let guard = at;
        b.begin(guard);
        b.emit(Insn::LoadI {
            dst: Reg::R1,
            imm: targets[chain],
        });
        b.emit(Insn::Cmp {
            dst: Reg::R4,
            src: Reg::R1,
        });
        b.end(
            guard,
            Term::Cond {
                taken: fail,
                fall: crash,
            },
        );
        b.abort(crash);
        witness[0] = targets[chain];
        witnesses.push(witness);
    }
    b.begin(exit);
    b.end(exit, Term::Halt);

    let (image, blocks, crash_sites) = b.finish()?;
    Ok(Benchmark {
        kind: BenchKind::Checksum,
        size,
        seed: 0,
        image,
        blocks,
        crash_sites,
        witnesses,
        seeds: vec![vec![0u8; input_len]],
    })
}

fn parser(size: usize, rng: &mut FuzzRng) -> Result<Benchmark, GenError> {
    let sites = crash_site_count(size);
    let rest = size - 2 - sites;
    let states = (rest / 4).max(1);
    let tokens = rest - 2 * states;

    // Tokens per state: one each, the remainder spread at random.
    let mut per_state = vec![1usize; states];
    for _ in 0..tokens - states {
        per_state[rng.below(states)] += 1;
    }
    // Slot targets: state s's first slot advances to s + 1; crash sites take
    // random free slots; everything else jumps to a random state.
    #[derive(Clone, Copy)]
    enum Target {
        State(usize),
        Crash(usize),
    }
    let mut slots: Vec<Vec<Option<Target>>> = per_state.iter().map(|&k| vec![None; k]).collect();
    for (s, row) in slots.iter_mut().enumerate().take(states - 1) {
        row[0] = Some(Target::State(s + 1));
    }
    for c in 0..sites {
        let free: Vec<(usize, usize)> = slots
            .iter()
            .enumerate()
            .flat_map(|(s, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, t)| t.is_none())
                    .map(move |(k, _)| (s, k))
            })
            .collect();
        let (s, k) = free[rng.below(free.len())];
        slots[s][k] = Some(Target::Crash(c));
    }
    for row in slots.iter_mut() {
        for t in row.iter_mut().filter(|t| t.is_none()) {
            *t = Some(Target::State(rng.below(states)));
        }
    }
    let token_bytes: Vec<Vec<u8>> = per_state
        .iter()
        .map(|&k| distinct_nonzero(rng, k))
        .collect();

    let mut b = Builder::new();
    let exit = b.label();
    let heads: Vec<Label> = (0..states).map(|_| b.label()).collect();
    let crashes: Vec<Label> = (0..sites).map(|_| b.label()).collect();
    let init = b.label();
    b.begin(init);
    b.emit(Insn::LoadI {
        dst: Reg::R5,
        imm: 0,
    });
    b.emit(Insn::LoadI {
        dst: Reg::R6,
        imm: 1,
    });
    b.emit(Insn::LoadI {
        dst: Reg::R2,
        imm: 0,
    });
    b.end(init, Term::Fallthrough(heads[0]));
    for s in 0..states {
        let head = heads[s];
        let mut next = b.label();
        b.begin(head);
        b.emit(Insn::LoadInR {
            dst: Reg::R0,
            idx: Reg::R5,
        });
        b.emit(Insn::Add {
            dst: Reg::R5,
            src: Reg::R6,
        });
        b.emit(Insn::Cmp {
            dst: Reg::R0,
            src: Reg::R2,
        });
        // Zero byte: stop.
        b.asm.jz(exit);
        b.blocks.push((
            head,
            Term::Cond {
                taken: exit,
                fall: next,
            },
        ));
        for (k, target) in slots[s].iter().enumerate() {
            let at = next;
            next = b.label();
            let dest = match target.expect("every slot is assigned") {
                Target::State(t) => heads[t],
                Target::Crash(c) => crashes[c],
            };
            b.begin(at);
            b.emit(Insn::LoadI {
                dst: Reg::R1,
                imm: token_bytes[s][k],
            });
            b.emit(Insn::Cmp {
                dst: Reg::R0,
                src: Reg::R1,
            });
            b.asm.jz(dest);
            b.blocks.push((
                at,
                Term::Cond {
                    taken: dest,
                    fall: next,
                },
            ));
        }
        b.begin(next);
        b.end(next, Term::Jmp(heads[0]));
    }
    for &c in &crashes {
        b.abort(c);
    }
    b.begin(exit);
    b.end(exit, Term::Halt);

    // Witness for crash c: walk the chain tokens to the state owning the
    // crash slot, then send the crash token.
    let mut witnesses = vec![Vec::new(); sites];
    for (s, row) in slots.iter().enumerate() {
        for (k, t) in row.iter().enumerate() {
            if let Some(Target::Crash(c)) = *t {
                let mut w: Vec<u8> = (0..s).map(|p| token_bytes[p][0]).collect();
                w.push(token_bytes[s][k]);
                witnesses[c] = w;
            }
        }
    }
    // Crash sites are emitted in order, so `crash_sites[c]` is crash c.
    let (image, blocks, crash_sites) = b.finish()?;
    // A seed byte that matches no token in state 0 resets and keeps going.
    let filler = (1..=255u8)
        .find(|v| !token_bytes[0].contains(v))
        .expect("a state has fewer than 255 tokens");
    Ok(Benchmark {
        kind: BenchKind::Parser,
        size,
        seed: 0,
        image,
        blocks,
        crash_sites,
        witnesses,
        seeds: vec![vec![filler; 4]],
    })
}

/// A random program of roughly `n_blocks` blocks with forward conditional
/// and unconditional jumps, fall-throughs, counted self-loops and several
/// exits. Branch conditions compare an input byte against a value in `0..4`,
/// so inputs drawn from `0..4` take both arms often. Every execution
/// terminates well within the default budget.
pub fn random_program(seed: u64, n_blocks: usize) -> ProgramImage {
    let n = n_blocks.max(2);
    let mut rng = FuzzRng::new(seed);
    let mut a = Assembler::new();
    let labels: Vec<Label> = (0..n).map(|_| a.label()).collect();
    // Loop blocks rely on r7 being set right before them, so nothing else
    // jumps into them.
    let mut is_loop = vec![false; n];
    for i in 1..n - 1 {
        is_loop[i] = !is_loop[i - 1] && rng.below(6) == 0;
    }
    let forward = |rng: &mut FuzzRng, from: usize| -> Option<usize> {
        let candidates: Vec<usize> = (from + 1..n).filter(|&j| !is_loop[j]).collect();
        (!candidates.is_empty()).then(|| candidates[rng.below(candidates.len())])
    };

    a.bind(labels[0]);
    a.emit(Insn::LoadI {
        dst: Reg::R6,
        imm: 1,
    });
    for i in 0..n {
        if i > 0 {
            a.bind(labels[i]);
        }
        if is_loop[i] {
            a.emit(Insn::Sub {
                dst: Reg::R7,
                src: Reg::R6,
            });
            a.jnz(labels[i]);
            continue;
        }
        for _ in 0..rng.below(3) {
            let dst = Reg::new(rng.below(4) as u8).expect("r0..r3");
            let src = Reg::new(rng.below(4) as u8).expect("r0..r3");
            match rng.below(3) {
                0 => a.emit(Insn::Add { dst, src }),
                1 => a.emit(Insn::Xor { dst, src }),
                _ => a.emit(Insn::Mov { dst, src }),
            }
        }
        if i + 1 < n && is_loop[i + 1] {
            a.emit(Insn::LoadI {
                dst: Reg::R7,
                imm: 1 + rng.below(5) as u8,
            });
            continue;
        }
        if i + 1 == n {
            a.emit(Insn::Halt);
            continue;
        }
        match rng.below(10) {
            0..=5 => {
                a.emit(Insn::LoadIn {
                    dst: Reg::R0,
                    idx: rng.below(8) as u8,
                });
                a.emit(Insn::LoadI {
                    dst: Reg::R1,
                    imm: rng.below(4) as u8,
                });
                a.emit(Insn::Cmp {
                    dst: Reg::R0,
                    src: Reg::R1,
                });
                match forward(&mut rng, i) {
                    Some(t) if rng.below(2) == 0 => a.jz(labels[t]),
                    Some(t) => a.jnz(labels[t]),
                    None => {}
                }
            }
            6 => {
                if let Some(t) = forward(&mut rng, i) {
                    a.jmp(labels[t]);
                }
            }
            7 => a.emit(Insn::Halt),
            8 if rng.below(2) == 0 => a.emit(Insn::Abort),
            _ => {}
        }
    }
    a.finish_image(0)
        .expect("generated programs use short offsets")
}
