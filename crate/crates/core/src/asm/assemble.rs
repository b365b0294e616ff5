use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::parse::{parse_assembly, Expr, Item, ItemKind};
use super::AsmError;
use crate::elf::{inject_section, read_elf, ElfWriter, OutSection, SectionFlags, ELLF_SECTION};
use crate::facts::{BuildFacts, FunctionBlocks, Locals, RelocKind, Relocation, Variable};
use crate::isa::{encode_one, Disp, Imm, MemRef, Mnemonic, OpSize, Operand, SymbolRef};
use crate::lift::default_section_kind;
use crate::meta::{
    encode_metadata, DataRecord, EllfMetadata, InstructionRegion, PointerRecord, StackRecord,
    TextKind, TextRecord,
};
use crate::Address;

/// Bases for sections whose header gives none. Executable sections are laid
/// out from `base_text`, the others from `base_data`, each 16-aligned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AsmOptions {
    pub base_text: Option<Address>,
    pub base_data: Option<Address>,
}

#[derive(Debug, Clone)]
pub struct Assembled {
    /// The executable with its `.ellf` section.
    pub elf: Vec<u8>,
    /// The same executable without metadata.
    pub plain_elf: Vec<u8>,
    pub meta: EllfMetadata,
    pub facts: BuildFacts,
    pub symbols: BTreeMap<String, Address>,
}

/// Operand index and branch target pairs.
type Targets = Vec<(usize, Address)>;
/// `.entry` line and expression.
type EntryExpr = (usize, Expr);

struct Section {
    name: String,
    flags: SectionFlags,
    nobits: bool,
    base: Option<Address>,
    items: Vec<Item>,
    /// Offset of each item from the section start, filled by pass 1.
    offsets: Vec<u64>,
    /// Encoded length of each instruction item.
    lengths: Vec<u64>,
    size: u64,
}

fn parse_flags(s: &str, line: usize) -> Result<SectionFlags, AsmError> {
    let mut f = SectionFlags::default();
    for c in s.chars() {
        match c {
            'a' => f.alloc = true,
            'w' => f.write = true,
            'x' => f.exec = true,
            _ => {
                return Err(AsmError::Syntax {
                    line,
                    msg: format!("unknown section flag {c:?}"),
                })
            }
        }
    }
    f.alloc = true;
    Ok(f)
}

fn fits_i8(v: i64) -> bool {
    i8::try_from(v).is_ok()
}

fn fits_i32(v: i64) -> bool {
    i32::try_from(v).is_ok()
}

/// Operation size of an instruction, from its first register or memory operand.
fn op_size(ops: &[Operand]) -> OpSize {
    ops.iter()
        .find_map(|o| match o {
            Operand::Reg(r) => Some(OpSize::of(*r)),
            Operand::Mem(m) => Some(m.size),
            _ => None,
        })
        .unwrap_or(OpSize::Qword)
}

/// Immediate value and width as the encoder wants them. 32-bit operations
/// accept unsigned values and store them sign-extended.
fn fix_imm(mn: Mnemonic, ops: &[Operand], value: i64, imm32: bool, symbolic: bool) -> Imm {
    if mn == Mnemonic::Movabs {
        return Imm { value, width: 64 };
    }
    let value = if op_size(ops) == OpSize::Dword
        && mn != Mnemonic::Push
        && (0..=0xffff_ffff).contains(&value)
    {
        i64::from(value as u32 as i32)
    } else {
        value
    };
    let width = if mn.has_short_imm() && !imm32 && !symbolic && fits_i8(value) {
        8
    } else {
        32
    };
    Imm { value, width }
}

/// Everything a pass needs to turn parsed operands into concrete ones.
struct Resolver<'a> {
    symbols: Option<&'a BTreeMap<String, Address>>,
    slots: &'a BTreeMap<String, BTreeMap<String, u64>>,
    function: Option<&'a str>,
    line: usize,
}

impl Resolver<'_> {
    fn symbol(&self, s: &SymbolRef) -> Result<Option<Address>, AsmError> {
        let Some(table) = self.symbols else {
            return Ok(None);
        };
        let a = table
            .get(&s.label)
            .ok_or_else(|| AsmError::UndefinedLabel {
                line: self.line,
                name: s.label.clone(),
            })?;
        Ok(Some(a.wrapping_add_signed(s.offset)))
    }

    fn slot(&self, name: &str) -> Result<u64, AsmError> {
        self.function
            .and_then(|f| self.slots.get(f))
            .and_then(|m| m.get(name))
            .copied()
            .ok_or_else(|| AsmError::UndefinedLabel {
                line: self.line,
                name: name.into(),
            })
    }

    fn overflow(&self, what: &str) -> AsmError {
        AsmError::RangeOverflow {
            line: self.line,
            msg: what.into(),
        }
    }

    /// Concrete operands for an instruction at `here` of length `len`, and
    /// the targets of its symbolic operands by index. Pass 1 (no symbol
    /// table) substitutes placeholders of the final width.
    fn operands(
        &self,
        mn: Mnemonic,
        ops: &[Operand],
        imm32: bool,
        here: Address,
        len: u64,
    ) -> Result<(Vec<Operand>, Targets), AsmError> {
        let mut out = Vec::with_capacity(ops.len());
        let mut targets = Vec::new();
        for (i, o) in ops.iter().enumerate() {
            let concrete = match o {
                Operand::Sym(s) if mn.is_branch() => {
                    Operand::PcRel(self.symbol(s)?.unwrap_or(here))
                }
                Operand::Sym(s) => {
                    let t = self.symbol(s)?;
                    let mut imm = fix_imm(mn, ops, 0, imm32, true);
                    if let Some(t) = t {
                        targets.push((i, t));
                        imm = fix_imm(mn, ops, t.0 as i64, imm32, true);
                        if imm.width == 32 && !fits_i32(imm.value) {
                            return Err(self.overflow("address does not fit a 32-bit immediate"));
                        }
                    }
                    Operand::Imm(imm)
                }
                Operand::Imm(imm) => Operand::Imm(fix_imm(mn, ops, imm.value, imm32, false)),
                Operand::Mem(m) => {
                    let (m, t) = self.mem(m, here, len)?;
                    if let Some(t) = t {
                        targets.push((i, t));
                    }
                    Operand::Mem(m)
                }
                other => other.clone(),
            };
            out.push(concrete);
        }
        Ok((out, targets))
    }

    fn mem(
        &self,
        m: &MemRef,
        here: Address,
        len: u64,
    ) -> Result<(MemRef, Option<Address>), AsmError> {
        let mut m = m.clone();
        let mut target = None;
        match &m.disp {
            Disp::Value(_) => {}
            Disp::Slot { name, bias } => {
                let v = bias.wrapping_sub(self.slot(name)? as i64);
                let v = i32::try_from(v).map_err(|_| self.overflow("slot displacement"))?;
                m.disp = Disp::Value(v);
            }
            Disp::Symbol(s) => {
                let v = match self.symbol(s)? {
                    None => 0,
                    Some(t) => {
                        target = Some(t);
                        if m.rip {
                            t.offset_from(here + len)
                        } else {
                            t.0 as i64
                        }
                    }
                };
                let v = i32::try_from(v)
                    .map_err(|_| self.overflow("displacement does not fit 32 bits"))?;
                m.force_disp32 = m.base.is_some() && fits_i8(i64::from(v));
                m.disp = Disp::Value(v);
            }
        }
        Ok((m, target))
    }
}

fn encode_err(line: usize, e: crate::isa::EncodeError) -> AsmError {
    match e {
        crate::isa::EncodeError::RangeOverflow { .. } => AsmError::RangeOverflow {
            line,
            msg: e.to_string(),
        },
        _ => AsmError::Encode {
            line,
            msg: e.to_string(),
        },
    }
}

fn syntax(line: usize, msg: &str) -> AsmError {
    AsmError::Syntax {
        line,
        msg: msg.into(),
    }
}

/// Functions in scope per item: the latest `.func` in the section.
fn scopes(sec: &Section) -> Vec<Option<&str>> {
    let mut cur = None;
    sec.items
        .iter()
        .map(|it| {
            if let ItemKind::Func(f) = &it.kind {
                cur = Some(f.as_str());
            }
            cur
        })
        .collect()
}

fn split_sections(items: Vec<Item>) -> Result<(Vec<Section>, Option<EntryExpr>), AsmError> {
    let mut sections: Vec<Section> = Vec::new();
    let mut entry = None;
    for it in items {
        match it.kind {
            ItemKind::Section(d) => {
                if sections.iter().any(|s| s.name == d.name) {
                    return Err(syntax(it.line, "section declared twice"));
                }
                let (mut flags, mut nobits) = default_section_kind(&d.name);
                if let Some(f) = &d.flags {
                    flags = parse_flags(f, it.line)?;
                }
                if let Some(n) = d.nobits {
                    nobits = n;
                }
                sections.push(Section {
                    name: d.name,
                    flags,
                    nobits,
                    base: d.base,
                    items: Vec::new(),
                    offsets: Vec::new(),
                    lengths: Vec::new(),
                    size: 0,
                });
            }
            ItemKind::Entry(e) => entry = Some((it.line, e)),
            _ => match sections.last_mut() {
                Some(s) => s.items.push(it),
                None => return Err(syntax(it.line, "statement outside any section")),
            },
        }
    }
    Ok((sections, entry))
}

fn collect_slots(
    sections: &[Section],
) -> Result<BTreeMap<String, BTreeMap<String, u64>>, AsmError> {
    let mut slots: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for it in sections.iter().flat_map(|s| &s.items) {
        if let ItemKind::Slot {
            function,
            name,
            offset,
        } = &it.kind
        {
            let m = slots.entry(function.clone()).or_default();
            if m.insert(name.clone(), *offset).is_some() {
                return Err(AsmError::DuplicateLabel {
                    line: it.line,
                    name: name.clone(),
                });
            }
        }
    }
    Ok(slots)
}

/// Pass 1: item offsets and instruction lengths.
fn measure(
    sec: &mut Section,
    slots: &BTreeMap<String, BTreeMap<String, u64>>,
) -> Result<(), AsmError> {
    let scope: Vec<Option<String>> = scopes(sec)
        .into_iter()
        .map(|s| s.map(String::from))
        .collect();
    let mut off = 0u64;
    for (i, it) in sec.items.iter().enumerate() {
        sec.offsets.push(off);
        let size = match &it.kind {
            ItemKind::Instr {
                mnemonic,
                operands,
                imm32,
                ..
            } => {
                if !sec.flags.exec || sec.nobits {
                    return Err(syntax(it.line, "instruction outside an executable section"));
                }
                let r = Resolver {
                    symbols: None,
                    slots,
                    function: scope[i].as_deref(),
                    line: it.line,
                };
                let here = Address(off);
                let (ops, _) = r.operands(*mnemonic, operands, *imm32, here, 0)?;
                let enc = encode_one(here, *mnemonic, &ops).map_err(|e| encode_err(it.line, e))?;
                enc.bytes.len() as u64
            }
            ItemKind::Data { width, values } => {
                if sec.nobits {
                    return Err(syntax(it.line, "initialized data in a nobits section"));
                }
                u64::from(*width) * values.len() as u64
            }
            ItemKind::Bytes(b) => {
                if sec.nobits {
                    return Err(syntax(it.line, "initialized data in a nobits section"));
                }
                b.len() as u64
            }
            ItemKind::Zero(n) => *n,
            _ => 0,
        };
        sec.lengths.push(size);
        off += size;
    }
    sec.size = off;
    Ok(())
}

fn align16(a: u64) -> u64 {
    (a + 15) & !15
}

fn place(sections: &mut [Section], opts: &AsmOptions) -> Result<(), AsmError> {
    let mut text = opts.base_text.map(|a| a.0);
    let mut data = opts.base_data.map(|a| a.0);
    for s in sections.iter_mut() {
        if s.base.is_some() {
            continue;
        }
        let cursor = if s.flags.exec { &mut text } else { &mut data };
        let base = cursor.ok_or_else(|| AsmError::MissingBase(s.name.clone()))?;
        s.base = Some(Address(base));
        *cursor = Some(align16(base + s.size));
    }
    for (i, a) in sections.iter().enumerate() {
        for b in &sections[i + 1..] {
            let (x, y) = (a.base.unwrap().0, b.base.unwrap().0);
            let overlap = a.size > 0 && b.size > 0 && x < y + b.size && y < x + a.size;
            let wraps = x.checked_add(a.size).is_none() || y.checked_add(b.size).is_none();
            if overlap || wraps {
                return Err(AsmError::SectionOverlap {
                    a: a.name.clone(),
                    b: b.name.clone(),
                });
            }
        }
    }
    Ok(())
}

fn define(
    table: &mut BTreeMap<String, Address>,
    name: &str,
    a: Address,
    line: usize,
) -> Result<(), AsmError> {
    if table.insert(name.into(), a).is_some() {
        return Err(AsmError::DuplicateLabel {
            line,
            name: name.into(),
        });
    }
    Ok(())
}

fn symbol_table(sections: &[Section]) -> Result<BTreeMap<String, Address>, AsmError> {
    let mut table = BTreeMap::new();
    let mut sets = Vec::new();
    for s in sections {
        let base = s.base.unwrap();
        for (it, off) in s.items.iter().zip(&s.offsets) {
            match &it.kind {
                ItemKind::Label(n) | ItemKind::Func(n) => {
                    define(&mut table, n, base + *off, it.line)?
                }
                ItemKind::Set { name, value } => sets.push((it.line, name, value)),
                _ => {}
            }
        }
    }
    for s in sections {
        table.entry(s.name.clone()).or_insert(s.base.unwrap());
    }
    while !sets.is_empty() {
        let before = sets.len();
        let mut pending = Vec::new();
        for (line, name, value) in sets {
            if value.minus.is_some() {
                return Err(syntax(line, ".set takes a single label"));
            }
            let v = match &value.plus {
                None => Some(Address(value.constant as u64)),
                Some(p) => table.get(&p.label).map(|a| a.wrapping_add_signed(p.offset)),
            };
            match v {
                Some(a) => define(&mut table, name, a, line)?,
                None => pending.push((line, name, value)),
            }
        }
        if pending.len() == before {
            let (line, _, value) = pending[0];
            return Err(AsmError::UndefinedLabel {
                line,
                name: value.plus.as_ref().unwrap().label.clone(),
            });
        }
        sets = pending;
    }
    Ok(table)
}

#[derive(Default)]
struct Output {
    meta: EllfMetadata,
    facts: BuildFacts,
    /// Instruction start to end, per executable section.
    instr_ends: BTreeMap<Address, Address>,
}

fn value(
    e: &Expr,
    table: &BTreeMap<String, Address>,
    line: usize,
) -> Result<(Option<Address>, Option<Address>, i64), AsmError> {
    let look = |s: &SymbolRef| {
        table
            .get(&s.label)
            .map(|a| a.wrapping_add_signed(s.offset))
            .ok_or_else(|| AsmError::UndefinedLabel {
                line,
                name: s.label.clone(),
            })
    };
    let plus = e.plus.as_ref().map(look).transpose()?;
    let minus = e.minus.as_ref().map(look).transpose()?;
    Ok((plus, minus, e.constant))
}

/// Pass 2 over one section: bytes, metadata and facts.
fn emit_section(
    sec: &Section,
    table: &BTreeMap<String, Address>,
    slots: &BTreeMap<String, BTreeMap<String, u64>>,
    out: &mut Output,
) -> Result<Vec<u8>, AsmError> {
    let base = sec.base.unwrap();
    let scope = scopes(sec);
    let funcs: BTreeSet<&str> = sec
        .items
        .iter()
        .filter_map(|it| match &it.kind {
            ItemKind::Func(f) => Some(f.as_str()),
            _ => None,
        })
        .collect();
    let mut bytes = Vec::with_capacity(sec.size as usize);
    let mut run: Option<(Address, u64)> = None;
    let mut pending_labels: Vec<&str> = Vec::new();
    let mut last_instr: Option<Address> = None;
    let close = |run: &mut Option<(Address, u64)>, meta: &mut EllfMetadata| {
        if let Some((start, count)) = run.take() {
            meta.instruction_regions
                .push(InstructionRegion { start, count });
        }
    };
    for (i, it) in sec.items.iter().enumerate() {
        let here = base + sec.offsets[i];
        let line = it.line;
        match &it.kind {
            ItemKind::Label(n) => pending_labels.push(n),
            ItemKind::Func(_) => out.meta.text.push(TextRecord {
                addr: here,
                kind: TextKind::FunctionStart,
            }),
            ItemKind::EndFunc => {
                let a =
                    last_instr.ok_or_else(|| syntax(line, ".endfunc without an instruction"))?;
                out.meta.text.push(TextRecord {
                    addr: a,
                    kind: TextKind::FunctionEnd,
                });
            }
            ItemKind::Instr {
                mnemonic,
                operands,
                imm32,
                ..
            } => {
                for l in pending_labels.drain(..) {
                    if !funcs.contains(l) {
                        out.meta.text.push(TextRecord {
                            addr: here,
                            kind: TextKind::BasicBlock,
                        });
                    }
                }
                let r = Resolver {
                    symbols: Some(table),
                    slots,
                    function: scope[i],
                    line,
                };
                let len = sec.lengths[i];
                let (ops, targets) = r.operands(*mnemonic, operands, *imm32, here, len)?;
                let enc = encode_one(here, *mnemonic, &ops).map_err(|e| encode_err(line, e))?;
                if enc.bytes.len() as u64 != len {
                    return Err(AsmError::Encode {
                        line,
                        msg: "instruction length changed between passes".into(),
                    });
                }
                let instr = crate::isa::Instruction {
                    address: here,
                    length: len as u8,
                    mnemonic: *mnemonic,
                    operands: ops,
                    annotations: Vec::new(),
                    fields: enc.fields,
                };
                for (idx, t) in targets {
                    out.meta.pointers.push(PointerRecord::Operand {
                        instr_addr: here,
                        operand_index: idx as u32,
                        target: t,
                    });
                    let field = instr.field_of(idx).expect("symbolic operand has a field");
                    let kind = match (&instr.operands[idx], field.size) {
                        (Operand::Mem(m), _) if m.rip => RelocKind::Pc32,
                        (_, 8) => RelocKind::Abs64,
                        _ => RelocKind::Abs32,
                    };
                    out.facts.relocations.push(Relocation {
                        addr: here + u64::from(field.offset),
                        kind,
                        target_addr: t,
                        subtrahend_addr: None,
                    });
                }
                if let (true, Some(Operand::PcRel(t)), Some(f)) = (
                    mnemonic.is_branch(),
                    instr.operands.first(),
                    instr.fields.rel,
                ) {
                    if matches!(operands.first(), Some(Operand::Sym(_))) {
                        out.facts.relocations.push(Relocation {
                            addr: here + u64::from(f.offset),
                            kind: RelocKind::Pc32,
                            target_addr: *t,
                            subtrahend_addr: None,
                        });
                    }
                }
                bytes.extend_from_slice(&enc.bytes);
                out.instr_ends.insert(here, instr.end());
                last_instr = Some(here);
                match &mut run {
                    Some((_, count)) => *count += 1,
                    None => run = Some((here, 1)),
                }
            }
            ItemKind::Data { width, values } => {
                pending_labels.clear();
                close(&mut run, &mut out.meta);
                for (k, e) in values.iter().enumerate() {
                    let at = here + (k as u64) * u64::from(*width);
                    let (plus, minus, c) = value(e, table, line)?;
                    let v: i64 = match (plus, minus) {
                        (None, None) => c,
                        (Some(p), None) => {
                            out.meta.pointers.push(PointerRecord::Data {
                                addr: at,
                                target: p,
                            });
                            out.facts.relocations.push(Relocation {
                                addr: at,
                                kind: if *width == 8 {
                                    RelocKind::Abs64
                                } else {
                                    RelocKind::Abs32
                                },
                                target_addr: p,
                                subtrahend_addr: None,
                            });
                            p.0 as i64
                        }
                        (Some(p), Some(m)) => {
                            out.meta.pointers.push(PointerRecord::Diff {
                                addr: at,
                                minuend: p,
                                subtrahend: m,
                            });
                            out.facts.relocations.push(Relocation {
                                addr: at,
                                kind: RelocKind::Diff32,
                                target_addr: p,
                                subtrahend_addr: Some(m),
                            });
                            p.offset_from(m)
                        }
                        (None, Some(_)) => {
                            return Err(syntax(line, "negated label without a base"))
                        }
                    };
                    if *width == 4 {
                        let ok = if plus.is_some() && minus.is_none() {
                            u32::try_from(v).is_ok()
                        } else {
                            fits_i32(v) || (minus.is_none() && u32::try_from(v).is_ok())
                        };
                        if !ok {
                            return Err(AsmError::RangeOverflow {
                                line,
                                msg: "value does not fit 32 bits".into(),
                            });
                        }
                        bytes.extend_from_slice(&(v as u32).to_le_bytes());
                    } else {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            ItemKind::Bytes(b) => {
                pending_labels.clear();
                close(&mut run, &mut out.meta);
                bytes.extend_from_slice(b);
            }
            ItemKind::Zero(n) => {
                pending_labels.clear();
                close(&mut run, &mut out.meta);
                if !sec.nobits {
                    bytes.resize(bytes.len() + *n as usize, 0);
                }
            }
            ItemKind::Slot { .. } | ItemKind::Set { .. } | ItemKind::Size { .. } => {}
            ItemKind::Section(_) | ItemKind::Entry(_) => unreachable!("split out earlier"),
        }
    }
    close(&mut run, &mut out.meta);
    Ok(bytes)
}

/// Data records: every label in a non-executable section, tiled to the next.
fn data_records(sections: &[Section], table: &BTreeMap<String, Address>) -> Vec<DataRecord> {
    let mut sizes: BTreeMap<&str, u64> = BTreeMap::new();
    for it in sections.iter().flat_map(|s| &s.items) {
        if let ItemKind::Size { name, size } = &it.kind {
            sizes.insert(name, *size);
        }
    }
    let mut out = Vec::new();
    for s in sections.iter().filter(|s| !s.flags.exec) {
        let (base, end) = (s.base.unwrap(), s.base.unwrap() + s.size);
        let mut starts: BTreeMap<Address, Option<u64>> = BTreeMap::new();
        for (name, &a) in table {
            if a >= base && a < end && *name != s.name {
                let e = starts.entry(a).or_default();
                if let Some(&n) = sizes.get(name.as_str()) {
                    *e = Some(n);
                }
            }
        }
        let addrs: Vec<Address> = starts.keys().copied().collect();
        for (k, &a) in addrs.iter().enumerate() {
            let next = addrs.get(k + 1).copied().unwrap_or(end);
            let size = starts[&a].unwrap_or(next.0 - a.0);
            if size > 0 {
                out.push(DataRecord { addr: a, size });
            }
        }
    }
    out
}

fn build_facts(sections: &[Section], out: &mut Output) {
    let starts: Vec<Address> = out.meta.function_starts().collect();
    for (k, &f) in starts.iter().enumerate() {
        let Some(sec) = sections
            .iter()
            .find(|s| f >= s.base.unwrap() && f < s.base.unwrap() + s.size)
        else {
            continue;
        };
        let limit = starts
            .get(k + 1)
            .copied()
            .filter(|&n| n < sec.base.unwrap() + sec.size)
            .unwrap_or(sec.base.unwrap() + sec.size);
        let Some(end) = out.instr_ends.range(f..limit).next_back().map(|(_, e)| *e) else {
            continue;
        };
        let mut block_starts: Vec<Address> = out
            .meta
            .text
            .iter()
            .filter(|t| t.kind == TextKind::BasicBlock && t.addr > f && t.addr < end)
            .map(|t| t.addr)
            .collect();
        block_starts.insert(0, f);
        block_starts.dedup();
        let mut fb = FunctionBlocks {
            function_addr: f,
            ..FunctionBlocks::default()
        };
        for (i, &b) in block_starts.iter().enumerate() {
            let e = block_starts.get(i + 1).copied().unwrap_or(end);
            fb.block_offsets.push(b.0 - f.0);
            fb.block_sizes.push(e.0 - b.0);
        }
        out.facts.basic_blocks.push(fb);
    }
    out.facts.variables = out
        .meta
        .data
        .iter()
        .map(|d| Variable {
            addr: d.addr,
            size: d.size,
        })
        .collect();
    out.facts.locals = out
        .meta
        .stack
        .iter()
        .map(|s| Locals {
            function_addr: s.function_entry,
            offsets: s.offsets.clone(),
        })
        .collect();
}

pub fn assemble(text: &str, opts: &AsmOptions) -> Result<Assembled, AsmError> {
    let items = parse_assembly(text)?;
    let (mut sections, entry) = split_sections(items)?;
    let slots = collect_slots(&sections)?;
    for s in sections.iter_mut() {
        measure(s, &slots)?;
    }
    place(&mut sections, opts)?;
    let table = symbol_table(&sections)?;
    let mut out = Output::default();
    let mut datas = Vec::new();
    for s in &sections {
        datas.push(emit_section(s, &table, &slots, &mut out)?);
    }
    out.meta.data = data_records(&sections, &table);
    for (function, m) in &slots {
        let entry = *table
            .get(function)
            .ok_or_else(|| AsmError::UndefinedLabel {
                line: 0,
                name: function.clone(),
            })?;
        out.meta.stack.push(StackRecord {
            function_entry: entry,
            offsets: m.values().copied().collect(),
        });
    }
    let entries: BTreeSet<Address> = out.meta.function_starts().collect();
    out.meta
        .text
        .retain(|t| t.kind != TextKind::BasicBlock || !entries.contains(&t.addr));
    out.meta.sort();
    out.meta.text.dedup();
    out.meta.check().map_err(|v| {
        AsmError::Metadata(format!(
            "{} table, record {}: {}",
            v.table, v.index, v.reason
        ))
    })?;
    build_facts(&sections, &mut out);

    let entry = match entry {
        Some((line, e)) => match value(&e, &table, line)? {
            (Some(a), None, _) => a,
            (None, None, c) => Address(c as u64),
            _ => return Err(syntax(line, ".entry takes a single label")),
        },
        None => table.get("_start").copied().unwrap_or(Address::ZERO),
    };
    let mut w = ElfWriter::new(entry);
    for (s, data) in sections.iter().zip(datas) {
        let base = s.base.unwrap();
        if s.nobits {
            w.section(OutSection::nobits(&s.name, base, s.flags, s.size));
        } else {
            w.section(OutSection::progbits(&s.name, base, s.flags, data));
        }
    }
    let plain_elf = w.finish();
    let payload = encode_metadata(&out.meta)
        .map_err(|v| AsmError::Metadata(format!("{} table: {}", v.table, v.reason)))?;
    let elf = inject_section(&read_elf(&plain_elf)?, ELLF_SECTION, &payload)?;
    Ok(Assembled {
        elf,
        plain_elf,
        meta: out.meta,
        facts: out.facts,
        symbols: table,
    })
}
