//! Deterministic interpreter for the [`crate::isa`] instruction set.
//!
//! A [`ProgramImage`] is executed against an input byte string under an
//! instruction budget. Execution stops on `HALT` (clean exit), on `ABORT` or
//! any fault (crash), on reaching the budget (timeout), or the moment a fetched
//! opcode is [`TRAP`] (trap).
//!
//! [`Snapshot`] plays the role of a forkserver: a frozen copy of an image that
//! test cases run against, discarded and retaken whenever the image is patched.

use alloc::vec::Vec;
use core::num::NonZeroU64;

use thiserror::Error;

use crate::isa::{
    NUM_REGS, OP_ABORT, OP_ADD, OP_CMP, OP_HALT, OP_JMP, OP_JNZ, OP_JZ, OP_LOADI, OP_LOADIN,
    OP_LOADINR, OP_MOV, OP_SUB, OP_XOR, TRAP,
};

/// Default instruction budget, the deterministic stand-in for a wall-clock timeout.
pub const DEFAULT_MAX_INSTRUCTIONS: u64 = 1_000_000;

/// Default cap on test case length.
pub const DEFAULT_INPUT_LEN_MAX: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VmError {
    #[error("malformed image: {0}")]
    MalformedImage(&'static str),
    #[error("address {addr:#x} out of range for image of {len} bytes")]
    AddressOutOfRange { addr: u32, len: usize },
    #[error("instruction budget must be positive")]
    ZeroBudget,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProgramImage {
    bytes: Vec<u8>,
    entry: u32,
    input_len_max: usize,
}

impl ProgramImage {
    /// Validates and wraps a code image.
    pub fn load(bytes: Vec<u8>, entry: u32) -> Result<Self, VmError> {
        if bytes.is_empty() {
            return Err(VmError::MalformedImage("empty code"));
        }
        if u32::try_from(bytes.len()).is_err() {
            return Err(VmError::MalformedImage("code larger than 4 GiB"));
        }
        match bytes.get(entry as usize) {
            None => Err(VmError::MalformedImage("entry out of range")),
            Some(&TRAP) => Err(VmError::MalformedImage("entry holds the trap opcode")),
            Some(_) => Ok(ProgramImage {
                bytes,
                entry,
                input_len_max: DEFAULT_INPUT_LEN_MAX,
            }),
        }
    }

    pub fn with_input_len_max(mut self, input_len_max: usize) -> Self {
        self.input_len_max = input_len_max;
        self
    }

    #[inline]
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn entry(&self) -> u32 {
        self.entry
    }

    #[inline]
    pub fn input_len_max(&self) -> usize {
        self.input_len_max
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// Overwrites one byte and returns the displaced value.
    pub fn patch_byte(&mut self, addr: u32, value: u8) -> Result<u8, VmError> {
        let len = self.bytes.len();
        let slot = self
            .bytes
            .get_mut(addr as usize)
            .ok_or(VmError::AddressOutOfRange { addr, len })?;
        Ok(core::mem::replace(slot, value))
    }

    /// Stable 64-bit FNV-1a checksum over entry and code bytes.
    pub fn checksum(&self) -> u64 {
        crate::hash::fnv1a(&[&self.entry.to_le_bytes(), &self.bytes])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExecBudget {
    max_instructions: NonZeroU64,
}

impl ExecBudget {
    pub fn new(max_instructions: u64) -> Result<Self, VmError> {
        NonZeroU64::new(max_instructions)
            .map(|max_instructions| ExecBudget { max_instructions })
            .ok_or(VmError::ZeroBudget)
    }

    #[inline]
    pub fn max_instructions(&self) -> u64 {
        self.max_instructions.get()
    }
}

impl Default for ExecBudget {
    fn default() -> Self {
        ExecBudget::new(DEFAULT_MAX_INSTRUCTIONS).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OutcomeKind {
    CleanExit,
    Crash,
    Timeout,
    Trap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExecOutcome {
    pub kind: OutcomeKind,
    /// Address of the trap byte, present iff `kind == Trap`.
    pub trap_addr: Option<u32>,
    pub instructions_executed: u64,
}

impl ExecOutcome {
    fn new(kind: OutcomeKind, instructions_executed: u64) -> Self {
        ExecOutcome {
            kind,
            trap_addr: None,
            instructions_executed,
        }
    }
}

/// Hook invoked before every instruction fetch.
///
/// Tracing is implemented as an observer: it sees every fetch address and
/// decides for itself which ones are block entries. The unit observer `()`
/// compiles away entirely.
pub trait Observer {
    fn on_fetch(&mut self, pc: u32);
}

impl Observer for () {
    #[inline(always)]
    fn on_fetch(&mut self, _pc: u32) {}
}

/// Runs `image` on `input` without observation.
///
/// Kept out of line so that every unobserved execution (pristine program and
/// oracle alike) runs the same machine code.
#[inline(never)]
pub fn execute(image: &ProgramImage, input: &[u8], budget: ExecBudget) -> ExecOutcome {
    run(image, input, budget, &mut ())
}

/// Runs `image` on `input`, reporting every fetch to `observer`.
///
/// The budget is checked before each fetch; a program may therefore execute
/// exactly `max_instructions` instructions and still exit cleanly if the last
/// one is `HALT` or `ABORT`. A fetched [`TRAP`] is not counted as executed.
#[inline]
pub fn run<O: Observer>(
    image: &ProgramImage,
    input: &[u8],
    budget: ExecBudget,
    observer: &mut O,
) -> ExecOutcome {
    let code = image.bytes();
    let limit = budget.max_instructions();
    let mut regs = [0u32; NUM_REGS];
    let mut zero = false;
    let mut pc = image.entry() as usize;
    let mut executed: u64 = 0;

    let crash = |executed| ExecOutcome::new(OutcomeKind::Crash, executed);

    loop {
        if executed == limit {
            return ExecOutcome::new(OutcomeKind::Timeout, executed);
        }
        observer.on_fetch(pc as u32);
        let Some(&op) = code.get(pc) else {
            return crash(executed);
        };
        match op {
            OP_HALT => return ExecOutcome::new(OutcomeKind::CleanExit, executed + 1),
            OP_ABORT => return crash(executed + 1),
            TRAP => {
                return ExecOutcome {
                    kind: OutcomeKind::Trap,
                    trap_addr: Some(pc as u32),
                    instructions_executed: executed,
                }
            }
            _ => {}
        }
        let (Some(&a), Some(&b)) = (code.get(pc + 1), code.get(pc + 2)) else {
            return crash(executed);
        };
        let next = pc + 3;
        match op {
            OP_JMP | OP_JZ | OP_JNZ => {
                let taken = match op {
                    OP_JMP => true,
                    OP_JZ => zero,
                    _ => !zero,
                };
                pc = if taken {
                    let target = next as isize + i16::from_le_bytes([a, b]) as isize;
                    if target < 0 {
                        return crash(executed + 1);
                    }
                    target as usize
                } else {
                    next
                };
            }
            OP_LOADIN..=OP_MOV => {
                let (dst, src) = (a as usize, b as usize);
                if dst >= NUM_REGS {
                    return crash(executed);
                }
                match op {
                    OP_LOADIN => regs[dst] = input.get(src).copied().unwrap_or(0) as u32,
                    OP_LOADI => regs[dst] = src as u32,
                    _ => {
                        if src >= NUM_REGS {
                            return crash(executed);
                        }
                        let rhs = regs[src];
                        match op {
                            OP_LOADINR => {
                                regs[dst] = input.get(rhs as usize).copied().unwrap_or(0) as u32
                            }
                            OP_ADD => {
                                regs[dst] = regs[dst].wrapping_add(rhs);
                                zero = regs[dst] == 0;
                            }
                            OP_SUB => {
                                regs[dst] = regs[dst].wrapping_sub(rhs);
                                zero = regs[dst] == 0;
                            }
                            OP_XOR => {
                                regs[dst] ^= rhs;
                                zero = regs[dst] == 0;
                            }
                            OP_CMP => zero = regs[dst] == rhs,
                            OP_MOV => regs[dst] = rhs,
                            _ => unreachable!(),
                        }
                    }
                }
                pc = next;
            }
            // Illegal opcode.
            _ => return crash(executed),
        }
        executed += 1;
    }
}

/// A frozen image that test cases execute against (the forkserver analogue).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    image: ProgramImage,
}

impl Snapshot {
    pub fn take(image: &ProgramImage) -> Self {
        Snapshot {
            image: image.clone(),
        }
    }

    /// Materializes a fresh image identical to the one the snapshot was taken from.
    pub fn restore(&self) -> ProgramImage {
        self.image.clone()
    }

    #[inline]
    pub fn image(&self) -> &ProgramImage {
        &self.image
    }

    pub fn image_bytes(&self) -> &[u8] {
        self.image.bytes()
    }

    pub fn entry(&self) -> u32 {
        self.image.entry()
    }

    #[inline]
    pub fn execute(&self, input: &[u8], budget: ExecBudget) -> ExecOutcome {
        execute(&self.image, input, budget)
    }
}
