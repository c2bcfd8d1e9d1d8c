//! Instruction set of the target VM.
//!
//! Every opcode is a single byte and operands follow inline, so overwriting
//! the first byte of any instruction with [`TRAP`] always yields a decodable
//! trap regardless of the instruction's length.
//!
//! | byte | mnemonic  | operands          | length |
//! |------|-----------|-------------------|--------|
//! | 0x00 | `HALT`    |                   | 1      |
//! | 0x01 | `ABORT`   |                   | 1      |
//! | 0x02 | `JMP`     | rel16             | 3      |
//! | 0x03 | `JZ`      | rel16             | 3      |
//! | 0x04 | `JNZ`     | rel16             | 3      |
//! | 0x05 | `LOADIN`  | reg, idx8         | 3      |
//! | 0x06 | `LOADINR` | reg, reg          | 3      |
//! | 0x07 | `LOADI`   | reg, imm8         | 3      |
//! | 0x08 | `ADD`     | reg, reg          | 3      |
//! | 0x09 | `SUB`     | reg, reg          | 3      |
//! | 0x0A | `XOR`     | reg, reg          | 3      |
//! | 0x0B | `CMP`     | reg, reg          | 3      |
//! | 0x0C | `MOV`     | reg, reg          | 3      |
//! | 0xCC | `TRAP`    |                   | 1      |
//!
//! Relative jump offsets are little-endian `i16`, measured from the address
//! of the following instruction.

use alloc::vec::Vec;

/// The reserved one-byte trap opcode.
pub const TRAP: u8 = 0xCC;

/// Number of general purpose registers.
pub const NUM_REGS: usize = 8;

pub const OP_HALT: u8 = 0x00;
pub const OP_ABORT: u8 = 0x01;
pub const OP_JMP: u8 = 0x02;
pub const OP_JZ: u8 = 0x03;
pub const OP_JNZ: u8 = 0x04;
pub const OP_LOADIN: u8 = 0x05;
pub const OP_LOADINR: u8 = 0x06;
pub const OP_LOADI: u8 = 0x07;
pub const OP_ADD: u8 = 0x08;
pub const OP_SUB: u8 = 0x09;
pub const OP_XOR: u8 = 0x0A;
pub const OP_CMP: u8 = 0x0B;
pub const OP_MOV: u8 = 0x0C;

/// Register index, always `< NUM_REGS` once decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(u8);

impl Reg {
    pub const R0: Reg = Reg(0);
    pub const R1: Reg = Reg(1);
    pub const R2: Reg = Reg(2);
    pub const R3: Reg = Reg(3);
    pub const R4: Reg = Reg(4);
    pub const R5: Reg = Reg(5);
    pub const R6: Reg = Reg(6);
    pub const R7: Reg = Reg(7);

    pub fn new(index: u8) -> Option<Reg> {
        ((index as usize) < NUM_REGS).then_some(Reg(index))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insn {
    Halt,
    Abort,
    Trap,
    Jmp(i16),
    Jz(i16),
    Jnz(i16),
    LoadIn { dst: Reg, idx: u8 },
    LoadInR { dst: Reg, idx: Reg },
    LoadI { dst: Reg, imm: u8 },
    Add { dst: Reg, src: Reg },
    Sub { dst: Reg, src: Reg },
    Xor { dst: Reg, src: Reg },
    Cmp { dst: Reg, src: Reg },
    Mov { dst: Reg, src: Reg },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeError {
    /// The instruction's opcode or operands extend past the end of the code.
    Truncated,
    IllegalOpcode(u8),
    BadRegister(u8),
}

/// Encoded length of the instruction starting with `opcode`.
#[inline]
pub fn insn_len(opcode: u8) -> Option<usize> {
    match opcode {
        OP_HALT | OP_ABORT | TRAP => Some(1),
        OP_JMP..=OP_MOV => Some(3),
        _ => None,
    }
}

impl Insn {
    pub fn encoded_len(&self) -> usize {
        match self {
            Insn::Halt | Insn::Abort | Insn::Trap => 1,
            _ => 3,
        }
    }

    pub fn opcode(&self) -> u8 {
        match self {
            Insn::Halt => OP_HALT,
            Insn::Abort => OP_ABORT,
            Insn::Trap => TRAP,
            Insn::Jmp(_) => OP_JMP,
            Insn::Jz(_) => OP_JZ,
            Insn::Jnz(_) => OP_JNZ,
            Insn::LoadIn { .. } => OP_LOADIN,
            Insn::LoadInR { .. } => OP_LOADINR,
            Insn::LoadI { .. } => OP_LOADI,
            Insn::Add { .. } => OP_ADD,
            Insn::Sub { .. } => OP_SUB,
            Insn::Xor { .. } => OP_XOR,
            Insn::Cmp { .. } => OP_CMP,
            Insn::Mov { .. } => OP_MOV,
        }
    }

    /// Relative offset for jumps.
    pub fn rel(&self) -> Option<i16> {
        match *self {
            Insn::Jmp(r) | Insn::Jz(r) | Insn::Jnz(r) => Some(r),
            _ => None,
        }
    }

    pub fn is_cond_jump(&self) -> bool {
        matches!(self, Insn::Jz(_) | Insn::Jnz(_))
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.opcode());
        match *self {
            Insn::Halt | Insn::Abort | Insn::Trap => {}
            Insn::Jmp(r) | Insn::Jz(r) | Insn::Jnz(r) => out.extend_from_slice(&r.to_le_bytes()),
            Insn::LoadIn { dst, idx } => out.extend_from_slice(&[dst.0, idx]),
            Insn::LoadI { dst, imm } => out.extend_from_slice(&[dst.0, imm]),
            Insn::LoadInR { dst, idx } => out.extend_from_slice(&[dst.0, idx.0]),
            Insn::Add { dst, src }
            | Insn::Sub { dst, src }
            | Insn::Xor { dst, src }
            | Insn::Cmp { dst, src }
            | Insn::Mov { dst, src } => out.extend_from_slice(&[dst.0, src.0]),
        }
    }
}

/// Decodes the instruction at `pc`.
pub fn decode(code: &[u8], pc: usize) -> Result<Insn, DecodeError> {
    let op = *code.get(pc).ok_or(DecodeError::Truncated)?;
    let len = insn_len(op).ok_or(DecodeError::IllegalOpcode(op))?;
    if len == 1 {
        return Ok(match op {
            OP_HALT => Insn::Halt,
            OP_ABORT => Insn::Abort,
            _ => Insn::Trap,
        });
    }
    let operands = code.get(pc + 1..pc + 3).ok_or(DecodeError::Truncated)?;
    let (a, b) = (operands[0], operands[1]);
    let reg = |r: u8| Reg::new(r).ok_or(DecodeError::BadRegister(r));
    let rel = i16::from_le_bytes([a, b]);
    Ok(match op {
        OP_JMP => Insn::Jmp(rel),
        OP_JZ => Insn::Jz(rel),
        OP_JNZ => Insn::Jnz(rel),
        OP_LOADIN => Insn::LoadIn {
            dst: reg(a)?,
            idx: b,
        },
        OP_LOADINR => Insn::LoadInR {
            dst: reg(a)?,
            idx: reg(b)?,
        },
        OP_LOADI => Insn::LoadI {
            dst: reg(a)?,
            imm: b,
        },
        OP_ADD => Insn::Add {
            dst: reg(a)?,
            src: reg(b)?,
        },
        OP_SUB => Insn::Sub {
            dst: reg(a)?,
            src: reg(b)?,
        },
        OP_XOR => Insn::Xor {
            dst: reg(a)?,
            src: reg(b)?,
        },
        OP_CMP => Insn::Cmp {
            dst: reg(a)?,
            src: reg(b)?,
        },
        OP_MOV => Insn::Mov {
            dst: reg(a)?,
            src: reg(b)?,
        },
        _ => unreachable!("insn_len accepted opcode {op:#x}"),
    })
}

/// Absolute target of a relative jump located at `pc`.
#[inline]
pub fn jump_target(pc: usize, rel: i16) -> isize {
    pc as isize + 3 + rel as isize
}

/// Relative offset encoding a jump at `pc` to `target`, if it fits in rel16.
pub fn rel_offset(pc: usize, target: usize) -> Option<i16> {
    let delta = target as i64 - (pc as i64 + 3);
    i16::try_from(delta).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn every_opcode_round_trips() {
        let insns = [
            Insn::Halt,
            Insn::Abort,
            Insn::Trap,
            Insn::Jmp(-3),
            Insn::Jz(100),
            Insn::Jnz(i16::MIN),
            Insn::LoadIn {
                dst: Reg::R3,
                idx: 9,
            },
            Insn::LoadInR {
                dst: Reg::R0,
                idx: Reg::R4,
            },
            Insn::LoadI {
                dst: Reg::R7,
                imm: 0xFF,
            },
            Insn::Add {
                dst: Reg::R1,
                src: Reg::R2,
            },
            Insn::Sub {
                dst: Reg::R1,
                src: Reg::R2,
            },
            Insn::Xor {
                dst: Reg::R1,
                src: Reg::R2,
            },
            Insn::Cmp {
                dst: Reg::R1,
                src: Reg::R2,
            },
            Insn::Mov {
                dst: Reg::R1,
                src: Reg::R2,
            },
        ];
        for insn in insns {
            let mut buf = Vec::new();
            insn.encode(&mut buf);
            assert_eq!(buf.len(), insn.encoded_len());
            assert_eq!(insn_len(buf[0]), Some(insn.encoded_len()));
            assert_eq!(decode(&buf, 0), Ok(insn));
        }
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode(&[], 0), Err(DecodeError::Truncated));
        assert_eq!(decode(&[OP_JMP, 0], 0), Err(DecodeError::Truncated));
        assert_eq!(decode(&[0x42], 0), Err(DecodeError::IllegalOpcode(0x42)));
        assert_eq!(decode(&[OP_ADD, 8, 0], 0), Err(DecodeError::BadRegister(8)));
    }

    #[test]
    fn trap_over_any_first_byte_decodes() {
        let mut code = vec![OP_LOADI, 1, 2, OP_HALT];
        code[0] = TRAP;
        assert_eq!(decode(&code, 0), Ok(Insn::Trap));
    }

    #[test]
    fn rel_offsets() {
        assert_eq!(rel_offset(0, 3), Some(0));
        assert_eq!(jump_target(10, -13), 0);
        assert_eq!(rel_offset(0, 40_000), None);
    }
}
