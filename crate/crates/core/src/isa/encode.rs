use alloc::vec::Vec;

use super::{Disp, Field, Fields, Imm, Instruction, MemRef, Mnemonic, OpSize, Operand, Reg};
use crate::Address;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("unsupported form: {0}")]
    UnsupportedForm(&'static str),
    #[error("operand is still symbolic")]
    Unresolved,
    #[error("branch target {target} out of range from {from}")]
    RangeOverflow { from: Address, target: Address },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub fields: Fields,
}

use EncodeError::UnsupportedForm as Bad;

fn fits_i8(v: i64) -> bool {
    i8::try_from(v).is_ok()
}

#[derive(Default)]
struct Enc {
    w: bool,
    r: bool,
    x: bool,
    b: bool,
    opcode: Vec<u8>,
    modrm: Option<u8>,
    sib: Option<u8>,
    disp: Vec<u8>,
    imm: Vec<u8>,
    rel: Option<(u8, Address)>,
}

impl Enc {
    fn op(opcode: &[u8]) -> Self {
        Enc {
            opcode: opcode.to_vec(),
            ..Enc::default()
        }
    }

    fn wide(mut self, w: bool) -> Self {
        self.w = w;
        self
    }

    /// Opcode with the register number folded into the low three bits.
    fn plus_reg(mut self, r: Reg) -> Self {
        let last = self.opcode.last_mut().unwrap();
        *last += r.low3();
        self.b = r.ext();
        self
    }

    fn modrm(mut self, reg: u8, rm: &Operand) -> Result<Self, EncodeError> {
        self.r = reg >= 8;
        let reg = (reg & 7) << 3;
        match rm {
            Operand::Reg(r) => {
                self.modrm = Some(0xc0 | reg | r.low3());
                self.b = r.ext();
            }
            Operand::Mem(m) => self.mem(reg, m)?,
            _ => return Err(Bad("expected register or memory operand")),
        }
        Ok(self)
    }

    fn mem(&mut self, reg: u8, m: &MemRef) -> Result<(), EncodeError> {
        let v = match m.disp {
            Disp::Value(v) => v,
            _ => return Err(EncodeError::Unresolved),
        };
        if !m.base.is_none_or(Reg::is_wide) || !m.index.is_none_or(Reg::is_wide) {
            return Err(Bad("address registers must be 64-bit"));
        }
        let scale_bits = match (m.index, m.scale) {
            (None, 1) => 0,
            (None, _) => return Err(Bad("scale without index")),
            (Some(_), 1) => 0,
            (Some(_), 2) => 1,
            (Some(_), 4) => 2,
            (Some(_), 8) => 3,
            _ => return Err(Bad("scale must be 1, 2, 4 or 8")),
        };
        if m.index.is_some_and(|i| i.num() == 4) {
            return Err(Bad("rsp cannot be an index"));
        }
        let disp32 = v.to_le_bytes().to_vec();
        if m.rip {
            if m.base.is_some() || m.index.is_some() || m.force_disp32 {
                return Err(Bad("rip-relative operand takes only a displacement"));
            }
            self.modrm = Some(reg | 0b101);
            self.disp = disp32;
            return Ok(());
        }
        let Some(base) = m.base else {
            if m.force_disp32 {
                return Err(Bad("redundant {disp32}"));
            }
            self.modrm = Some(reg | 0b100);
            let index = m.index.map_or(0b100, |i| {
                self.x = i.ext();
                i.low3()
            });
            self.sib = Some(scale_bits << 6 | index << 3 | 0b101);
            self.disp = disp32;
            return Ok(());
        };
        let v64 = i64::from(v);
        if m.force_disp32 && !fits_i8(v64) {
            return Err(Bad("redundant {disp32}"));
        }
        let md = if m.force_disp32 {
            0b10
        } else if v == 0 && base.low3() != 5 {
            0b00
        } else if fits_i8(v64) {
            0b01
        } else {
            0b10
        };
        self.b = base.ext();
        if m.index.is_some() || base.low3() == 4 {
            self.modrm = Some(md << 6 | reg | 0b100);
            let index = m.index.map_or(0b100, |i| {
                self.x = i.ext();
                i.low3()
            });
            self.sib = Some(scale_bits << 6 | index << 3 | base.low3());
        } else {
            self.modrm = Some(md << 6 | reg | base.low3());
        }
        self.disp = match md {
            0b00 => Vec::new(),
            0b01 => alloc::vec![v as u8],
            _ => disp32,
        };
        Ok(())
    }

    fn imm8(mut self, v: i64) -> Self {
        self.imm = alloc::vec![v as u8];
        self
    }

    fn imm32(mut self, v: i64) -> Self {
        self.imm = (v as i32).to_le_bytes().to_vec();
        self
    }

    fn rel(mut self, size: u8, target: Address) -> Self {
        self.rel = Some((size, target));
        self
    }

    fn finish(self, addr: Address) -> Result<Encoded, EncodeError> {
        let mut bytes = Vec::with_capacity(16);
        let rex = 0x40
            | u8::from(self.w) << 3
            | u8::from(self.r) << 2
            | u8::from(self.x) << 1
            | u8::from(self.b);
        if rex != 0x40 {
            bytes.push(rex);
        }
        bytes.extend_from_slice(&self.opcode);
        bytes.extend(self.modrm);
        bytes.extend(self.sib);
        let mut fields = Fields::default();
        if !self.disp.is_empty() {
            fields.disp = Some(Field {
                offset: bytes.len() as u8,
                size: self.disp.len() as u8,
            });
            bytes.extend_from_slice(&self.disp);
        }
        if !self.imm.is_empty() {
            fields.imm = Some(Field {
                offset: bytes.len() as u8,
                size: self.imm.len() as u8,
            });
            bytes.extend_from_slice(&self.imm);
        }
        if let Some((size, target)) = self.rel {
            let end = addr + (bytes.len() as u64 + u64::from(size));
            let delta = target.offset_from(end);
            let overflow = EncodeError::RangeOverflow { from: addr, target };
            fields.rel = Some(Field {
                offset: bytes.len() as u8,
                size,
            });
            if size == 1 {
                let d = i8::try_from(delta).map_err(|_| overflow)?;
                bytes.push(d as u8);
            } else {
                let d = i32::try_from(delta).map_err(|_| overflow)?;
                bytes.extend_from_slice(&d.to_le_bytes());
            }
        }
        Ok(Encoded { bytes, fields })
    }
}

/// Operation size of an r/m operand, checked against a register operand.
fn rm_size(rm: &Operand) -> Result<OpSize, EncodeError> {
    match rm {
        Operand::Reg(r) => Ok(OpSize::of(*r)),
        Operand::Mem(m) => Ok(m.size),
        _ => Err(Bad("expected register or memory operand")),
    }
}

fn same_size(rm: &Operand, r: Reg) -> Result<bool, EncodeError> {
    if rm_size(rm)? != OpSize::of(r) {
        return Err(Bad("operand size mismatch"));
    }
    Ok(r.is_wide())
}

fn short_or_long(imm: &Imm) -> Result<bool, EncodeError> {
    match imm.width {
        8 if fits_i8(imm.value) => Ok(true),
        32 if i32::try_from(imm.value).is_ok() => Ok(false),
        _ => Err(Bad("immediate does not fit its width")),
    }
}

fn long_imm(imm: &Imm) -> Result<i64, EncodeError> {
    if imm.width != 32 || i32::try_from(imm.value).is_err() {
        return Err(Bad("expected a 32-bit immediate"));
    }
    Ok(imm.value)
}

fn qword_rm(rm: &Operand) -> Result<(), EncodeError> {
    if rm_size(rm)? != OpSize::Qword {
        return Err(Bad("operand must be 64-bit"));
    }
    Ok(())
}

pub fn encode(i: &Instruction) -> Result<Encoded, EncodeError> {
    encode_one(i.address, i.mnemonic, &i.operands)
}

/// Encodes one instruction placed at `addr`. Branch targets are absolute.
pub fn encode_one(addr: Address, mn: Mnemonic, ops: &[Operand]) -> Result<Encoded, EncodeError> {
    use Operand as O;
    if ops.iter().any(|o| matches!(o, O::Sym(_))) {
        return Err(EncodeError::Unresolved);
    }
    let e = match (mn, ops) {
        (Mnemonic::Mov, [d, O::Reg(s)]) => {
            Enc::op(&[0x89]).wide(same_size(d, *s)?).modrm(s.num(), d)?
        }
        (Mnemonic::Mov, [O::Reg(d), m @ O::Mem(_)]) => {
            Enc::op(&[0x8b]).wide(same_size(m, *d)?).modrm(d.num(), m)?
        }
        (Mnemonic::Mov, [O::Reg(d), O::Imm(imm)]) if !d.is_wide() => {
            Enc::op(&[0xb8]).plus_reg(*d).imm32(long_imm(imm)?)
        }
        (Mnemonic::Mov, [d, O::Imm(imm)]) => {
            let w = rm_size(d)? == OpSize::Qword;
            Enc::op(&[0xc7]).wide(w).modrm(0, d)?.imm32(long_imm(imm)?)
        }
        (Mnemonic::Movabs, [O::Reg(d), O::Imm(imm)]) if d.is_wide() && imm.width == 64 => {
            let mut e = Enc::op(&[0xb8]).wide(true).plus_reg(*d);
            e.imm = imm.value.to_le_bytes().to_vec();
            e
        }
        (Mnemonic::Lea, [O::Reg(d), m @ O::Mem(_)]) => {
            Enc::op(&[0x8d]).wide(same_size(m, *d)?).modrm(d.num(), m)?
        }
        (Mnemonic::Movsxd, [O::Reg(d), s]) if d.is_wide() => {
            if rm_size(s)? != OpSize::Dword {
                return Err(Bad("movsxd source must be 32-bit"));
            }
            Enc::op(&[0x63]).wide(true).modrm(d.num(), s)?
        }
        (Mnemonic::Push, [O::Reg(r)]) if r.is_wide() => Enc::op(&[0x50]).plus_reg(*r),
        (Mnemonic::Push, [O::Imm(imm)]) => {
            if short_or_long(imm)? {
                Enc::op(&[0x6a]).imm8(imm.value)
            } else {
                Enc::op(&[0x68]).imm32(imm.value)
            }
        }
        (Mnemonic::Push, [m @ O::Mem(_)]) => {
            qword_rm(m)?;
            Enc::op(&[0xff]).modrm(6, m)?
        }
        (Mnemonic::Pop, [O::Reg(r)]) if r.is_wide() => Enc::op(&[0x58]).plus_reg(*r),
        (Mnemonic::Pop, [m @ O::Mem(_)]) => {
            qword_rm(m)?;
            Enc::op(&[0x8f]).modrm(0, m)?
        }
        (_, [d, O::Reg(s)]) if mn.alu_ext().is_some() => {
            let ext = mn.alu_ext().unwrap();
            Enc::op(&[ext << 3 | 1])
                .wide(same_size(d, *s)?)
                .modrm(s.num(), d)?
        }
        (_, [O::Reg(d), m @ O::Mem(_)]) if mn.alu_ext().is_some() => {
            let ext = mn.alu_ext().unwrap();
            Enc::op(&[ext << 3 | 3])
                .wide(same_size(m, *d)?)
                .modrm(d.num(), m)?
        }
        (_, [d, O::Imm(imm)]) if mn.alu_ext().is_some() => {
            let ext = mn.alu_ext().unwrap();
            let w = rm_size(d)? == OpSize::Qword;
            if short_or_long(imm)? {
                Enc::op(&[0x83]).wide(w).modrm(ext, d)?.imm8(imm.value)
            } else {
                Enc::op(&[0x81]).wide(w).modrm(ext, d)?.imm32(imm.value)
            }
        }
        (Mnemonic::Test, [d, O::Reg(s)]) => {
            Enc::op(&[0x85]).wide(same_size(d, *s)?).modrm(s.num(), d)?
        }
        (Mnemonic::Test, [d, O::Imm(imm)]) => {
            let w = rm_size(d)? == OpSize::Qword;
            Enc::op(&[0xf7]).wide(w).modrm(0, d)?.imm32(long_imm(imm)?)
        }
        (Mnemonic::Inc | Mnemonic::Dec, [d]) => {
            let w = rm_size(d)? == OpSize::Qword;
            let ext = u8::from(mn == Mnemonic::Dec);
            Enc::op(&[0xff]).wide(w).modrm(ext, d)?
        }
        (Mnemonic::Imul, [O::Reg(d), s]) => Enc::op(&[0x0f, 0xaf])
            .wide(same_size(s, *d)?)
            .modrm(d.num(), s)?,
        (Mnemonic::Imul, [O::Reg(d), s, O::Imm(imm)]) => {
            let w = same_size(s, *d)?;
            if short_or_long(imm)? {
                Enc::op(&[0x6b]).wide(w).modrm(d.num(), s)?.imm8(imm.value)
            } else {
                Enc::op(&[0x69]).wide(w).modrm(d.num(), s)?.imm32(imm.value)
            }
        }
        (Mnemonic::Jmp, [O::PcRel(t)]) => Enc::op(&[0xe9]).rel(4, *t),
        (Mnemonic::JmpShort, [O::PcRel(t)]) => Enc::op(&[0xeb]).rel(1, *t),
        (Mnemonic::Jcc(c), [O::PcRel(t)]) => Enc::op(&[0x0f, 0x80 | c.code()]).rel(4, *t),
        (Mnemonic::Call, [O::PcRel(t)]) => Enc::op(&[0xe8]).rel(4, *t),
        (Mnemonic::Jmp, [d]) => {
            qword_rm(d)?;
            Enc::op(&[0xff]).modrm(4, d)?
        }
        (Mnemonic::Call, [d]) => {
            qword_rm(d)?;
            Enc::op(&[0xff]).modrm(2, d)?
        }
        (Mnemonic::Ret, []) => Enc::op(&[0xc3]),
        (Mnemonic::Leave, []) => Enc::op(&[0xc9]),
        (Mnemonic::Nop, []) => Enc::op(&[0x90]),
        (Mnemonic::Hlt, []) => Enc::op(&[0xf4]),
        (Mnemonic::Syscall, []) => Enc::op(&[0x0f, 0x05]),
        _ => return Err(Bad("no encoding for this mnemonic and operand shape")),
    };
    e.finish(addr)
}
