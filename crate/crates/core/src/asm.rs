//! A small label-resolving assembler used by the program generators and tests.

use alloc::vec::Vec;

use thiserror::Error;

use crate::isa::{rel_offset, Insn};
use crate::vm::{ProgramImage, VmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(usize);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("label {0} used but never bound")]
    UnboundLabel(usize),
    #[error("jump at {at:#x} cannot reach {target:#x} with a 16-bit offset")]
    OffsetOverflow { at: usize, target: usize },
    #[error(transparent)]
    Vm(#[from] VmError),
}

#[derive(Debug, Default)]
pub struct Assembler {
    code: Vec<u8>,
    labels: Vec<Option<u32>>,
    fixups: Vec<(usize, Label)>,
}

/// Output of [`Assembler::finish`]: code bytes plus the address of every label.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub bytes: Vec<u8>,
    labels: Vec<u32>,
}

impl Assembled {
    pub fn addr(&self, label: Label) -> u32 {
        self.labels[label.0]
    }
}

impl Assembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn label(&mut self) -> Label {
        self.labels.push(None);
        Label(self.labels.len() - 1)
    }

    pub fn bind(&mut self, label: Label) {
        debug_assert!(self.labels[label.0].is_none(), "label bound twice");
        self.labels[label.0] = Some(self.here());
    }

    pub fn here(&self) -> u32 {
        self.code.len() as u32
    }

    pub fn emit(&mut self, insn: Insn) {
        insn.encode(&mut self.code);
    }

    fn branch(&mut self, insn: Insn, target: Label) {
        self.fixups.push((self.code.len(), target));
        self.emit(insn);
    }

    pub fn jmp(&mut self, target: Label) {
        self.branch(Insn::Jmp(0), target);
    }

    pub fn jz(&mut self, target: Label) {
        self.branch(Insn::Jz(0), target);
    }

    pub fn jnz(&mut self, target: Label) {
        self.branch(Insn::Jnz(0), target);
    }

    pub fn finish(mut self) -> Result<Assembled, AsmError> {
        let labels = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or(AsmError::UnboundLabel(i)))
            .collect::<Result<Vec<u32>, _>>()?;
        for &(at, label) in &self.fixups {
            let target = labels[label.0] as usize;
            let rel = rel_offset(at, target).ok_or(AsmError::OffsetOverflow { at, target })?;
            self.code[at + 1..at + 3].copy_from_slice(&rel.to_le_bytes());
        }
        Ok(Assembled {
            bytes: self.code,
            labels,
        })
    }

    pub fn finish_image(self, entry: u32) -> Result<ProgramImage, AsmError> {
        Ok(ProgramImage::load(self.finish()?.bytes, entry)?)
    }
}
