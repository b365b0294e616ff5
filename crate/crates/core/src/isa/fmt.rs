use core::fmt::{self, Display, Formatter, Write};

use super::{Disp, Imm, Instruction, MemRef, Mnemonic, Operand, SymbolRef};

/// Writes ` + 0x10` or ` - 0x10`; `first` drops the leading operator for
/// positive values.
fn signed_hex(f: &mut impl Write, v: i64, first: bool) -> fmt::Result {
    match (v < 0, first) {
        (false, true) => write!(f, "{:#x}", v),
        (false, false) => write!(f, " + {:#x}", v),
        (true, true) => write!(f, "-{:#x}", v.unsigned_abs()),
        (true, false) => write!(f, " - {:#x}", v.unsigned_abs()),
    }
}

impl Display for SymbolRef {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)?;
        match self.offset {
            0 => Ok(()),
            o if o < 0 => write!(f, "-{:#x}", o.unsigned_abs()),
            o => write!(f, "+{:#x}", o),
        }
    }
}

impl Display for MemRef {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        f.write_char('[')?;
        let mut first = true;
        let sep = |f: &mut Formatter<'_>, first: &mut bool| {
            let r = if *first { Ok(()) } else { f.write_str(" + ") };
            *first = false;
            r
        };
        if self.rip {
            sep(f, &mut first)?;
            f.write_str("rip")?;
        }
        if let Some(b) = self.base {
            sep(f, &mut first)?;
            f.write_str(b.name())?;
        }
        if let Some(i) = self.index {
            sep(f, &mut first)?;
            f.write_str(i.name())?;
            if self.scale != 1 {
                write!(f, "*{}", self.scale)?;
            }
        }
        match &self.disp {
            Disp::Value(v) => {
                if *v != 0 || first || self.rip {
                    signed_hex(f, i64::from(*v), first)?;
                }
            }
            Disp::Symbol(s) => {
                sep(f, &mut first)?;
                f.write_str(&s.label)?;
                if s.offset != 0 {
                    signed_hex(f, s.offset, false)?;
                }
            }
            Disp::Slot { name, bias } => {
                if first {
                    write!(f, "-{name}")?;
                } else {
                    write!(f, " - {name}")?;
                }
                if *bias != 0 {
                    signed_hex(f, *bias, false)?;
                }
            }
        }
        f.write_char(']')
    }
}

impl Display for Operand {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => f.write_str(r.name()),
            Operand::Imm(Imm { value, .. }) => write!(f, "{value}"),
            Operand::Mem(m) => m.fmt(f),
            Operand::PcRel(a) => write!(f, "{a}"),
            Operand::Sym(s) => s.fmt(f),
        }
    }
}

impl Instruction {
    /// Whether a memory operand needs an explicit size keyword.
    fn needs_size(&self) -> bool {
        !matches!(
            self.mnemonic,
            Mnemonic::Push | Mnemonic::Pop | Mnemonic::Call | Mnemonic::Jmp
        ) && !self.operands.iter().any(|o| matches!(o, Operand::Reg(_)))
    }

    fn pseudo_prefixes(&self) -> (bool, bool) {
        let mut disp32 = false;
        let mut imm32 = false;
        for o in &self.operands {
            match o {
                Operand::Mem(m) => {
                    disp32 |= m.force_disp32 && !matches!(m.disp, Disp::Symbol(_));
                }
                Operand::Imm(imm) => {
                    imm32 |= self.mnemonic.has_short_imm()
                        && imm.width == 32
                        && i8::try_from(imm.value).is_ok();
                }
                _ => {}
            }
        }
        (disp32, imm32)
    }
}

impl Display for Instruction {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        let (disp32, imm32) = self.pseudo_prefixes();
        if disp32 {
            f.write_str("{disp32} ")?;
        }
        if imm32 {
            f.write_str("{imm32} ")?;
        }
        f.write_str(self.mnemonic.name())?;
        let sized = self.needs_size();
        for (i, o) in self.operands.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            if let (Operand::Mem(m), true) = (o, sized) {
                write!(f, "{} ", m.size.keyword())?;
            }
            o.fmt(f)?;
        }
        Ok(())
    }
}
