use alloc::vec;
use alloc::vec::Vec;

use super::{encode_one, Cond, Disp, Imm, Instruction, MemRef, Mnemonic, OpSize, Operand, Reg};
use crate::elf::Image;
use crate::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("unknown opcode at {0}")]
    UnknownOpcode(Address),
    #[error("truncated instruction at {0}")]
    TruncatedInstruction(Address),
}

const MAX_LEN: usize = 15;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    addr: Address,
    rex: u8,
}

impl Cursor<'_> {
    fn u8(&mut self) -> Result<u8, DecodeError> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or(DecodeError::TruncatedInstruction(self.addr))?;
        self.pos += 1;
        Ok(b)
    }

    fn i8(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from(self.u8()? as i8))
    }

    fn i32(&mut self) -> Result<i32, DecodeError> {
        let mut b = [0u8; 4];
        for x in &mut b {
            *x = self.u8()?;
        }
        Ok(i32::from_le_bytes(b))
    }

    fn i64(&mut self) -> Result<i64, DecodeError> {
        let mut b = [0u8; 8];
        for x in &mut b {
            *x = self.u8()?;
        }
        Ok(i64::from_le_bytes(b))
    }

    fn w(&self) -> bool {
        self.rex & 8 != 0
    }

    fn rex_bit(&self, bit: u8) -> u8 {
        if self.rex & bit != 0 {
            8
        } else {
            0
        }
    }

    fn imm8(&mut self) -> Result<Operand, DecodeError> {
        Ok(Operand::Imm(Imm {
            value: self.i8()?,
            width: 8,
        }))
    }

    fn imm32(&mut self) -> Result<Operand, DecodeError> {
        Ok(Operand::Imm(Imm {
            value: i64::from(self.i32()?),
            width: 32,
        }))
    }

    /// Reads ModRM (and SIB/displacement). Returns the reg field and the r/m operand.
    fn modrm(&mut self, rm_wide: bool) -> Result<(u8, Operand), DecodeError> {
        let m = self.u8()?;
        let md = m >> 6;
        let reg = (m >> 3 & 7) | self.rex_bit(4);
        let rm = m & 7;
        if md == 3 {
            let r = Reg::with_width(rm | self.rex_bit(1), rm_wide);
            return Ok((reg, Operand::Reg(r)));
        }
        let size = if rm_wide {
            OpSize::Qword
        } else {
            OpSize::Dword
        };
        let mut mem = MemRef {
            base: None,
            index: None,
            scale: 1,
            disp: Disp::Value(0),
            rip: false,
            size,
            force_disp32: false,
        };
        let mut disp_size = match md {
            1 => 1,
            2 => 4,
            _ => 0,
        };
        if rm == 4 {
            let sib = self.u8()?;
            let index = (sib >> 3 & 7) | self.rex_bit(2);
            let base = sib & 7;
            if index != 4 {
                mem.index = Some(Reg::q(index));
                mem.scale = 1 << (sib >> 6);
            }
            if base == 5 && md == 0 {
                disp_size = 4;
            } else {
                mem.base = Some(Reg::q(base | self.rex_bit(1)));
            }
        } else if rm == 5 && md == 0 {
            mem.rip = true;
            disp_size = 4;
        } else {
            mem.base = Some(Reg::q(rm | self.rex_bit(1)));
        }
        let v = match disp_size {
            1 => self.i8()? as i32,
            4 => self.i32()?,
            _ => 0,
        };
        mem.disp = Disp::Value(v);
        mem.force_disp32 = md == 2 && i8::try_from(v).is_ok();
        Ok((reg, Operand::Mem(mem)))
    }

    fn rel(&mut self, size: u8) -> Result<Operand, DecodeError> {
        let delta = if size == 1 {
            self.i8()?
        } else {
            i64::from(self.i32()?)
        };
        let end = self.addr + self.pos as u64;
        Ok(Operand::PcRel(end.wrapping_add_signed(delta)))
    }
}

fn alu_from_ext(ext: u8) -> Option<Mnemonic> {
    Some(match ext {
        0 => Mnemonic::Add,
        1 => Mnemonic::Or,
        4 => Mnemonic::And,
        5 => Mnemonic::Sub,
        6 => Mnemonic::Xor,
        7 => Mnemonic::Cmp,
        _ => return None,
    })
}

fn structural(c: &mut Cursor<'_>) -> Result<(Mnemonic, Vec<Operand>), DecodeError> {
    let unknown = DecodeError::UnknownOpcode(c.addr);
    let mut op = c.u8()?;
    if (0x40..=0x4f).contains(&op) {
        c.rex = op;
        op = c.u8()?;
    }
    let w = c.w();
    let reg = |n: u8| Operand::Reg(Reg::with_width(n, w));
    let decoded = match op {
        0x0f => {
            let op2 = c.u8()?;
            match op2 {
                0x05 => (Mnemonic::Syscall, vec![]),
                0x80..=0x8f => (Mnemonic::Jcc(Cond::from_code(op2)), vec![c.rel(4)?]),
                0xaf => {
                    let (r, rm) = c.modrm(w)?;
                    (Mnemonic::Imul, vec![reg(r), rm])
                }
                _ => return Err(unknown),
            }
        }
        0x01 | 0x09 | 0x21 | 0x29 | 0x31 | 0x39 => {
            let mn = alu_from_ext(op >> 3).ok_or(unknown)?;
            let (r, rm) = c.modrm(w)?;
            (mn, vec![rm, reg(r)])
        }
        0x03 | 0x0b | 0x23 | 0x2b | 0x33 | 0x3b => {
            let mn = alu_from_ext(op >> 3).ok_or(unknown)?;
            let (r, rm) = c.modrm(w)?;
            (mn, vec![reg(r), rm])
        }
        0x50..=0x57 => (
            Mnemonic::Push,
            vec![Operand::Reg(Reg::q((op - 0x50) | c.rex_bit(1)))],
        ),
        0x58..=0x5f => (
            Mnemonic::Pop,
            vec![Operand::Reg(Reg::q((op - 0x58) | c.rex_bit(1)))],
        ),
        0x63 => {
            let (r, rm) = c.modrm(false)?;
            (Mnemonic::Movsxd, vec![Operand::Reg(Reg::q(r)), rm])
        }
        0x68 => (Mnemonic::Push, vec![c.imm32()?]),
        0x6a => (Mnemonic::Push, vec![c.imm8()?]),
        0x69 | 0x6b => {
            let (r, rm) = c.modrm(w)?;
            let imm = if op == 0x6b { c.imm8()? } else { c.imm32()? };
            (Mnemonic::Imul, vec![reg(r), rm, imm])
        }
        0x81 | 0x83 => {
            let (ext, rm) = c.modrm(w)?;
            let mn = alu_from_ext(ext & 7).ok_or(unknown)?;
            let imm = if op == 0x83 { c.imm8()? } else { c.imm32()? };
            (mn, vec![rm, imm])
        }
        0x85 => {
            let (r, rm) = c.modrm(w)?;
            (Mnemonic::Test, vec![rm, reg(r)])
        }
        0x89 => {
            let (r, rm) = c.modrm(w)?;
            (Mnemonic::Mov, vec![rm, reg(r)])
        }
        0x8b => {
            let (r, rm) = c.modrm(w)?;
            (Mnemonic::Mov, vec![reg(r), rm])
        }
        0x8d => {
            let (r, rm) = c.modrm(w)?;
            (Mnemonic::Lea, vec![reg(r), rm])
        }
        0x8f => {
            let (ext, rm) = c.modrm(true)?;
            if ext & 7 != 0 {
                return Err(unknown);
            }
            (Mnemonic::Pop, vec![rm])
        }
        0x90 => (Mnemonic::Nop, vec![]),
        0xb8..=0xbf => {
            let n = (op - 0xb8) | c.rex_bit(1);
            if w {
                let value = c.i64()?;
                (
                    Mnemonic::Movabs,
                    vec![reg(n), Operand::Imm(Imm { value, width: 64 })],
                )
            } else {
                (Mnemonic::Mov, vec![reg(n), c.imm32()?])
            }
        }
        0xc3 => (Mnemonic::Ret, vec![]),
        0xc7 => {
            let (ext, rm) = c.modrm(w)?;
            if ext & 7 != 0 {
                return Err(unknown);
            }
            (Mnemonic::Mov, vec![rm, c.imm32()?])
        }
        0xc9 => (Mnemonic::Leave, vec![]),
        0xe8 => (Mnemonic::Call, vec![c.rel(4)?]),
        0xe9 => (Mnemonic::Jmp, vec![c.rel(4)?]),
        0xeb => (Mnemonic::JmpShort, vec![c.rel(1)?]),
        0xf4 => (Mnemonic::Hlt, vec![]),
        0xf7 => {
            let (ext, rm) = c.modrm(w)?;
            if ext & 7 != 0 {
                return Err(unknown);
            }
            (Mnemonic::Test, vec![rm, c.imm32()?])
        }
        0xff => {
            // peek the extension to choose the operand width
            let ext = c
                .bytes
                .get(c.pos)
                .map(|m| m >> 3 & 7)
                .ok_or(DecodeError::TruncatedInstruction(c.addr))?;
            let (mn, wide) = match ext {
                0 => (Mnemonic::Inc, w),
                1 => (Mnemonic::Dec, w),
                2 => (Mnemonic::Call, true),
                4 => (Mnemonic::Jmp, true),
                6 => (Mnemonic::Push, true),
                _ => return Err(unknown),
            };
            let (_, rm) = c.modrm(wide)?;
            (mn, vec![rm])
        }
        _ => return Err(unknown),
    };
    Ok(decoded)
}

/// Decodes one instruction from `bytes`, which start at `addr`.
pub fn decode_at(bytes: &[u8], addr: Address) -> Result<Instruction, DecodeError> {
    let bytes = &bytes[..bytes.len().min(MAX_LEN)];
    let mut c = Cursor {
        bytes,
        pos: 0,
        addr,
        rex: 0,
    };
    let (mnemonic, operands) = structural(&mut c)?;
    let len = c.pos;
    let enc =
        encode_one(addr, mnemonic, &operands).map_err(|_| DecodeError::UnknownOpcode(addr))?;
    if enc.bytes != bytes[..len] {
        return Err(DecodeError::UnknownOpcode(addr));
    }
    Ok(Instruction {
        address: addr,
        length: len as u8,
        mnemonic,
        operands,
        annotations: Vec::new(),
        fields: enc.fields,
    })
}

/// Decodes the instruction at `addr` in the loaded image.
pub fn decode_one(image: &Image, addr: Address) -> Result<Instruction, DecodeError> {
    let bytes = image.bytes_from(addr);
    if bytes.is_empty() {
        return Err(DecodeError::TruncatedInstruction(addr));
    }
    decode_at(bytes, addr)
}
