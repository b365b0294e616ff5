//! A small, table-driven x86-64 subset.
//!
//! Every form has exactly one encoding. The decoder recognises a byte pattern
//! structurally and then re-encodes it; anything that does not come back
//! byte-identical is rejected, so decode and encode are exact inverses on
//! everything the decoder accepts.

mod decode;
mod encode;
mod fmt;
mod reg;

use alloc::string::String;
use alloc::vec::Vec;

pub use decode::{decode_at, decode_one, DecodeError};
pub use encode::{encode, encode_one, EncodeError, Encoded};
pub use reg::Reg;

use crate::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cond {
    O,
    No,
    B,
    Ae,
    E,
    Ne,
    Be,
    A,
    S,
    Ns,
    P,
    Np,
    L,
    Ge,
    Le,
    G,
}

impl Cond {
    pub const ALL: [Cond; 16] = [
        Cond::O,
        Cond::No,
        Cond::B,
        Cond::Ae,
        Cond::E,
        Cond::Ne,
        Cond::Be,
        Cond::A,
        Cond::S,
        Cond::Ns,
        Cond::P,
        Cond::Np,
        Cond::L,
        Cond::Ge,
        Cond::Le,
        Cond::G,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Cond {
        Cond::ALL[(code & 15) as usize]
    }

    pub fn jcc_name(self) -> &'static str {
        [
            "jo", "jno", "jb", "jae", "je", "jne", "jbe", "ja", "js", "jns", "jp", "jnp", "jl",
            "jge", "jle", "jg",
        ][self as usize]
    }

    /// Parses a jcc mnemonic, including the usual aliases.
    pub fn from_jcc_name(name: &str) -> Option<Cond> {
        if let Some(c) = Cond::ALL.iter().find(|c| c.jcc_name() == name) {
            return Some(*c);
        }
        Some(match name {
            "jc" | "jnae" => Cond::B,
            "jnc" | "jnb" => Cond::Ae,
            "jz" => Cond::E,
            "jnz" => Cond::Ne,
            "jna" => Cond::Be,
            "jnbe" => Cond::A,
            "jpe" => Cond::P,
            "jpo" => Cond::Np,
            "jnge" => Cond::L,
            "jnl" => Cond::Ge,
            "jng" => Cond::Le,
            "jnle" => Cond::G,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mnemonic {
    Mov,
    Movabs,
    Lea,
    Movsxd,
    Push,
    Pop,
    Add,
    Or,
    And,
    Sub,
    Xor,
    Cmp,
    Test,
    Inc,
    Dec,
    Imul,
    Jmp,
    JmpShort,
    Jcc(Cond),
    Call,
    Ret,
    Leave,
    Nop,
    Hlt,
    Syscall,
}

impl Mnemonic {
    pub const SIMPLE: [Mnemonic; 24] = [
        Mnemonic::Mov,
        Mnemonic::Movabs,
        Mnemonic::Lea,
        Mnemonic::Movsxd,
        Mnemonic::Push,
        Mnemonic::Pop,
        Mnemonic::Add,
        Mnemonic::Or,
        Mnemonic::And,
        Mnemonic::Sub,
        Mnemonic::Xor,
        Mnemonic::Cmp,
        Mnemonic::Test,
        Mnemonic::Inc,
        Mnemonic::Dec,
        Mnemonic::Imul,
        Mnemonic::Jmp,
        Mnemonic::JmpShort,
        Mnemonic::Call,
        Mnemonic::Ret,
        Mnemonic::Leave,
        Mnemonic::Nop,
        Mnemonic::Hlt,
        Mnemonic::Syscall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mnemonic::Mov => "mov",
            Mnemonic::Movabs => "movabs",
            Mnemonic::Lea => "lea",
            Mnemonic::Movsxd => "movsxd",
            Mnemonic::Push => "push",
            Mnemonic::Pop => "pop",
            Mnemonic::Add => "add",
            Mnemonic::Or => "or",
            Mnemonic::And => "and",
            Mnemonic::Sub => "sub",
            Mnemonic::Xor => "xor",
            Mnemonic::Cmp => "cmp",
            Mnemonic::Test => "test",
            Mnemonic::Inc => "inc",
            Mnemonic::Dec => "dec",
            Mnemonic::Imul => "imul",
            Mnemonic::Jmp => "jmp",
            Mnemonic::JmpShort => "jmp short",
            Mnemonic::Jcc(c) => c.jcc_name(),
            Mnemonic::Call => "call",
            Mnemonic::Ret => "ret",
            Mnemonic::Leave => "leave",
            Mnemonic::Nop => "nop",
            Mnemonic::Hlt => "hlt",
            Mnemonic::Syscall => "syscall",
        }
    }

    pub fn from_name(name: &str) -> Option<Mnemonic> {
        if let Some(m) = Mnemonic::SIMPLE.iter().find(|m| m.name() == name) {
            return Some(*m);
        }
        Cond::from_jcc_name(name).map(Mnemonic::Jcc)
    }

    /// ALU group with a `/digit` extension for the immediate forms.
    pub(crate) fn alu_ext(self) -> Option<u8> {
        Some(match self {
            Mnemonic::Add => 0,
            Mnemonic::Or => 1,
            Mnemonic::And => 4,
            Mnemonic::Sub => 5,
            Mnemonic::Xor => 6,
            Mnemonic::Cmp => 7,
            _ => return None,
        })
    }

    /// Whether an immediate operand has both an 8-bit and a 32-bit form.
    pub fn has_short_imm(self) -> bool {
        self.alu_ext().is_some() || matches!(self, Mnemonic::Push | Mnemonic::Imul)
    }

    pub fn is_branch(self) -> bool {
        matches!(
            self,
            Mnemonic::Jmp | Mnemonic::JmpShort | Mnemonic::Jcc(_) | Mnemonic::Call
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpSize {
    Dword,
    Qword,
}

impl OpSize {
    pub fn of(r: Reg) -> OpSize {
        if r.is_wide() {
            OpSize::Qword
        } else {
            OpSize::Dword
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            OpSize::Dword => "dword",
            OpSize::Qword => "qword",
        }
    }
}

/// `label + offset`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolRef {
    pub label: String,
    pub offset: i64,
}

impl SymbolRef {
    pub fn new(label: impl Into<String>, offset: i64) -> Self {
        SymbolRef {
            label: label.into(),
            offset,
        }
    }
}

/// A memory displacement: numeric, label-valued, or a stack-slot constant.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Disp {
    Value(i32),
    Symbol(SymbolRef),
    /// `bias - NAME`, where NAME is a per-function slot constant.
    Slot {
        name: String,
        bias: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MemRef {
    pub base: Option<Reg>,
    pub index: Option<Reg>,
    pub scale: u8,
    pub disp: Disp,
    pub rip: bool,
    pub size: OpSize,
    /// Use a 32-bit displacement even where an 8-bit one fits.
    pub force_disp32: bool,
}

impl MemRef {
    pub fn base_disp(base: Reg, disp: i32, size: OpSize) -> Self {
        MemRef {
            base: Some(base),
            index: None,
            scale: 1,
            disp: Disp::Value(disp),
            rip: false,
            size,
            force_disp32: false,
        }
    }

    pub fn rip(disp: i32, size: OpSize) -> Self {
        MemRef {
            base: None,
            index: None,
            scale: 1,
            disp: Disp::Value(disp),
            rip: true,
            size,
            force_disp32: false,
        }
    }

    pub fn disp_value(&self) -> Option<i32> {
        match self.disp {
            Disp::Value(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Imm {
    pub value: i64,
    /// Encoded width in bits: 8, 32 or 64.
    pub width: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Reg),
    Imm(Imm),
    Mem(MemRef),
    PcRel(Address),
    Sym(SymbolRef),
}

impl Operand {
    pub fn imm(value: i64, width: u8) -> Operand {
        Operand::Imm(Imm { value, width })
    }

    pub fn as_reg(&self) -> Option<Reg> {
        match self {
            Operand::Reg(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_mem(&self) -> Option<&MemRef> {
        match self {
            Operand::Mem(m) => Some(m),
            _ => None,
        }
    }
}

/// Location of an immediate, displacement or branch offset inside the bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Field {
    pub offset: u8,
    pub size: u8,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Fields {
    pub disp: Option<Field>,
    pub imm: Option<Field>,
    pub rel: Option<Field>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub address: Address,
    pub length: u8,
    pub mnemonic: Mnemonic,
    pub operands: Vec<Operand>,
    pub annotations: Vec<String>,
    pub fields: Fields,
}

impl Instruction {
    pub fn end(&self) -> Address {
        self.address + u64::from(self.length)
    }

    /// The byte field backing operand `index`, if it has one.
    pub fn field_of(&self, index: usize) -> Option<Field> {
        match self.operands.get(index)? {
            Operand::Mem(_) => self.fields.disp,
            Operand::Imm(_) => self.fields.imm,
            Operand::PcRel(_) => self.fields.rel,
            Operand::Sym(_) => self.fields.imm.or(self.fields.rel),
            Operand::Reg(_) => None,
        }
    }

    /// Index of the operand whose field starts at byte `offset`.
    pub fn operand_at_offset(&self, offset: u8) -> Option<usize> {
        (0..self.operands.len()).find(|&i| self.field_of(i).is_some_and(|f| f.offset == offset))
    }

    /// The address an operand designates, as stored in the bytes.
    pub fn operand_value(&self, index: usize) -> Option<Address> {
        match self.operands.get(index)? {
            Operand::Imm(imm) => Some(Address(imm.value as u64)),
            Operand::PcRel(a) => Some(*a),
            Operand::Mem(m) => {
                let d = i64::from(m.disp_value()?);
                if m.rip {
                    Some(self.end().wrapping_add_signed(d))
                } else {
                    Some(Address(d as u64))
                }
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstrClass {
    Fallthrough,
    Jump(Address),
    ConditionalJump(Address),
    IndirectJump,
    Call(Option<Address>),
    Return,
    Halt,
}

/// Control-flow class of a decoded (unsymbolized) instruction.
pub fn instruction_class(i: &Instruction) -> InstrClass {
    let target = match i.operands.first() {
        Some(Operand::PcRel(a)) => Some(*a),
        _ => None,
    };
    match i.mnemonic {
        Mnemonic::Jmp | Mnemonic::JmpShort => match target {
            Some(t) => InstrClass::Jump(t),
            None => InstrClass::IndirectJump,
        },
        Mnemonic::Jcc(_) => match target {
            Some(t) => InstrClass::ConditionalJump(t),
            None => InstrClass::IndirectJump,
        },
        Mnemonic::Call => InstrClass::Call(target),
        Mnemonic::Ret => InstrClass::Return,
        Mnemonic::Hlt => InstrClass::Halt,
        _ => InstrClass::Fallthrough,
    }
}

/// Canonical memory-operand size for a form: the register operand's width,
/// or a fixed width for forms that have one. Mutates only `Mem` operands.
pub fn normalize_sizes(mnemonic: Mnemonic, ops: &mut [Operand]) {
    let fixed = match mnemonic {
        Mnemonic::Push | Mnemonic::Pop | Mnemonic::Call | Mnemonic::Jmp => Some(OpSize::Qword),
        Mnemonic::Movsxd => Some(OpSize::Dword),
        _ => None,
    };
    let reg_size = ops.iter().find_map(|o| o.as_reg()).map(OpSize::of);
    if let Some(size) = fixed.or(reg_size) {
        for o in ops.iter_mut() {
            if let Operand::Mem(m) = o {
                m.size = size;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elf::Image;

    fn at(bytes: &[u8], addr: u64) -> Instruction {
        let mut img = Image::new();
        img.insert(Address(addr), bytes).unwrap();
        decode_one(&img, Address(addr)).unwrap()
    }

    #[test]
    fn classes() {
        assert_eq!(
            instruction_class(&at(&[0xff, 0xe2], 0x401a)),
            InstrClass::IndirectJump
        );
        assert_eq!(instruction_class(&at(&[0xc3], 0)), InstrClass::Return);
        assert_eq!(
            instruction_class(&at(&[0x48, 0x01, 0xca], 0)),
            InstrClass::Fallthrough
        );
        assert_eq!(
            instruction_class(&at(&[0xe9, 0x07, 0, 0, 0], 0x4017)),
            InstrClass::Jump(Address(0x4023))
        );
        assert_eq!(
            instruction_class(&at(&[0x0f, 0x84, 0x10, 0, 0, 0], 0x100)),
            InstrClass::ConditionalJump(Address(0x116))
        );
        assert_eq!(
            instruction_class(&at(&[0xe8, 0, 0, 0, 0], 0x100)),
            InstrClass::Call(Some(Address(0x105)))
        );
        assert_eq!(
            instruction_class(&at(&[0xff, 0xd0], 0)),
            InstrClass::Call(None)
        );
        assert_eq!(instruction_class(&at(&[0xf4], 0)), InstrClass::Halt);
    }

    #[test]
    fn jcc_aliases() {
        assert_eq!(Mnemonic::from_name("jz"), Some(Mnemonic::Jcc(Cond::E)));
        assert_eq!(Mnemonic::from_name("jnle"), Some(Mnemonic::Jcc(Cond::G)));
        assert_eq!(Mnemonic::from_name("jmp short"), Some(Mnemonic::JmpShort));
        assert_eq!(Mnemonic::from_name("adc"), None);
    }

    #[test]
    fn operand_fields() {
        let i = at(&[0x48, 0x8d, 0x0d, 0x19, 0, 0, 0], 0x4004);
        assert_eq!(i.operand_at_offset(3), Some(1));
        assert_eq!(i.operand_value(1), Some(Address(0x4024)));
        assert_eq!(i.field_of(0), None);
    }
}
