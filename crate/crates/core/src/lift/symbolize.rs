use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::labels::{slot_name, LabelMap};
use super::{LiftError, Mode};
use crate::diag::{Diagnostic, DiagnosticKind};
use crate::elf::Image;
use crate::isa::{decode_one, Disp, Instruction, Mnemonic, Operand, Reg};
use crate::meta::{EllfMetadata, PointerRecord, TextKind};
use crate::Address;

pub(crate) type Instrs = BTreeMap<Address, Instruction>;

/// Step I: decode every region linearly.
pub(crate) fn decode_regions(
    meta: &EllfMetadata,
    image: &Image,
    labels: &LabelMap,
    mode: Mode,
    diags: &mut Vec<Diagnostic>,
) -> Result<Instrs, LiftError> {
    let mut out = Instrs::new();
    let mut regions = meta.instruction_regions.clone();
    regions.sort_by_key(|r| r.start);
    for (i, r) in regions.iter().enumerate() {
        let limit = regions.get(i + 1).map(|n| n.start);
        let sec_end = match labels.section(r.start).filter(|s| s.exec()) {
            Some(s) => s.end(),
            None => {
                let e = LiftError::RegionDecode(r.start);
                mode.fail(e, diags, DiagnosticKind::Range, Some(r.start))?;
                continue;
            }
        };
        let mut at = r.start;
        for _ in 0..r.count {
            let instr = match decode_one(image, at) {
                Ok(instr) if instr.end() <= sec_end => instr,
                _ => {
                    mode.fail(
                        LiftError::RegionDecode(at),
                        diags,
                        DiagnosticKind::Decode,
                        Some(at),
                    )?;
                    break;
                }
            };
            if limit.is_some_and(|l| instr.end() > l) || out.contains_key(&at) {
                mode.fail(
                    LiftError::RegionOverlap(at),
                    diags,
                    DiagnosticKind::Consistency,
                    Some(at),
                )?;
                break;
            }
            at = instr.end();
            out.insert(instr.address, instr);
        }
    }
    Ok(out)
}

/// Step II: symbolize operand pointers; data pointers become earmarks.
pub(crate) fn symbolize_pointers(
    meta: &EllfMetadata,
    instrs: &mut Instrs,
    labels: &LabelMap,
    mode: Mode,
    diags: &mut Vec<Diagnostic>,
) -> Result<BTreeMap<Address, PointerRecord>, LiftError> {
    let mut earmarks = BTreeMap::new();
    for p in &meta.pointers {
        let (instr_addr, index, target) = match *p {
            PointerRecord::Operand {
                instr_addr,
                operand_index,
                target,
            } => (instr_addr, operand_index as usize, target),
            other => {
                earmarks.insert(other.key(), other);
                continue;
            }
        };
        let Some(instr) = instrs.get_mut(&instr_addr) else {
            let e = LiftError::PointerNotAtInstruction(instr_addr);
            mode.fail(e, diags, DiagnosticKind::Alignment, Some(instr_addr))?;
            continue;
        };
        if index >= instr.operands.len() {
            let e = LiftError::OperandIndexOutOfRange {
                addr: instr_addr,
                index,
            };
            mode.fail(e, diags, DiagnosticKind::Consistency, Some(instr_addr))?;
            continue;
        }
        if !pointer_position(instr, index) {
            let e = LiftError::NotAPointerPosition {
                addr: instr_addr,
                index,
            };
            mode.fail(e, diags, DiagnosticKind::Consistency, Some(instr_addr))?;
            continue;
        }
        let found = instr.operand_value(index);
        if found != Some(target) {
            let e = LiftError::PointerMismatch {
                addr: instr_addr,
                expected: target,
                found: found.unwrap_or_default(),
            };
            mode.fail(e, diags, DiagnosticKind::PointerMismatch, Some(instr_addr))?;
        }
        let Some(sym) = labels.lookup(target) else {
            let e = LiftError::UnresolvedTarget {
                addr: instr_addr,
                target,
            };
            mode.fail(e, diags, DiagnosticKind::Range, Some(instr_addr))?;
            continue;
        };
        match &mut instr.operands[index] {
            Operand::Mem(m) => m.disp = Disp::Symbol(sym),
            o => *o = Operand::Sym(sym),
        }
    }
    Ok(earmarks)
}

/// Immediates and displacements of at least 32 bits, and branch offsets.
fn pointer_position(instr: &Instruction, index: usize) -> bool {
    let wide = instr.field_of(index).is_some_and(|f| f.size >= 4);
    match &instr.operands[index] {
        Operand::Imm(_) | Operand::PcRel(_) => wide,
        Operand::Mem(m) => wide && matches!(m.disp, Disp::Value(_)),
        _ => false,
    }
}

/// Step III: block and function annotations, branch targets.
pub(crate) fn symbolize_text(
    meta: &EllfMetadata,
    instrs: &mut Instrs,
    labels: &LabelMap,
    mode: Mode,
    diags: &mut Vec<Diagnostic>,
) -> Result<(), LiftError> {
    for t in &meta.text {
        let Some(instr) = instrs.get_mut(&t.addr) else {
            let e = LiftError::DanglingTextRecord(t.addr);
            mode.fail(e, diags, DiagnosticKind::Alignment, Some(t.addr))?;
            continue;
        };
        match t.kind {
            TextKind::FunctionStart => {
                if let Some(name) = labels.text_label(t.addr) {
                    instr.annotations.push(format!(".func {name}"));
                }
            }
            TextKind::BasicBlock => {
                if !labels.is_function(t.addr) {
                    if let Some(name) = labels.text_label(t.addr) {
                        instr.annotations.push(format!("{name}:"));
                    }
                }
            }
            TextKind::FunctionEnd => instr.annotations.push(String::from(".endfunc")),
        }
    }
    for instr in instrs.values_mut() {
        if !instr.mnemonic.is_branch() {
            continue;
        }
        if let Some(Operand::PcRel(t)) = instr.operands.first() {
            if let Some(sym) = labels.lookup(*t) {
                instr.operands[0] = Operand::Sym(sym);
            }
        }
    }
    Ok(())
}

/// Step IV: frame accesses become slot-relative. Returns the slot table.
pub(crate) fn symbolize_stack(
    meta: &EllfMetadata,
    instrs: &mut Instrs,
    labels: &LabelMap,
    diags: &mut Vec<Diagnostic>,
) -> BTreeMap<Address, Vec<u64>> {
    let mut slots = BTreeMap::new();
    for rec in &meta.stack {
        let entry = rec.function_entry;
        if !labels.is_function(entry) || rec.offsets.is_empty() {
            continue;
        }
        let mut offsets = rec.offsets.clone();
        offsets.sort_unstable();
        offsets.dedup();
        let end = labels.function_end(entry);
        let blocks: Vec<Address> = meta
            .text
            .iter()
            .filter(|t| t.kind == TextKind::BasicBlock && t.addr > entry && t.addr < end)
            .map(|t| t.addr)
            .collect();
        let addrs: Vec<Address> = instrs.range(entry..end).map(|(a, _)| *a).collect();
        let frame = has_frame(instrs, &addrs);
        let mut depth = Some(0i64);
        let mut prologue_depth = None;
        for a in addrs {
            if blocks.contains(&a) {
                if prologue_depth.is_none() {
                    prologue_depth = Some(depth);
                }
                depth = prologue_depth.flatten();
            }
            let instr = instrs.get_mut(&a).expect("address from map");
            for o in instr.operands.iter_mut() {
                let Operand::Mem(m) = o else { continue };
                let Disp::Value(disp) = m.disp else { continue };
                let below = match m.base {
                    Some(b) if b == Reg::RBP && frame => Some(8 - i64::from(disp)),
                    Some(b) if b == Reg::RSP => depth.map(|d| d - i64::from(disp)),
                    _ => None,
                };
                let Some(below) = below else { continue };
                match offsets.iter().find(|&&k| k as i64 >= below) {
                    Some(&k) if below > 0 => {
                        m.disp = Disp::Slot {
                            name: slot_name(k),
                            bias: i64::from(disp) + k as i64,
                        };
                    }
                    _ => diags.push(Diagnostic::warning(
                        DiagnosticKind::StackAccess,
                        Some(a),
                        format!("frame access {below} bytes below entry is outside every slot"),
                    )),
                }
            }
            depth = track_depth(instr, depth);
        }
        slots.insert(entry, offsets);
    }
    slots
}

/// `push rbp; mov rbp, rsp` at function entry.
fn has_frame(instrs: &Instrs, addrs: &[Address]) -> bool {
    let [a, b, ..] = addrs else { return false };
    let (i, j) = (&instrs[a], &instrs[b]);
    i.mnemonic == Mnemonic::Push
        && i.operands == [Operand::Reg(Reg::RBP)]
        && j.mnemonic == Mnemonic::Mov
        && j.operands == [Operand::Reg(Reg::RBP), Operand::Reg(Reg::RSP)]
}

/// Bytes pushed below the entry stack pointer after `instr`.
fn track_depth(instr: &Instruction, depth: Option<i64>) -> Option<i64> {
    let d = depth?;
    let rsp_dest = instr.operands.first() == Some(&Operand::Reg(Reg::RSP));
    let imm = match instr.operands.get(1) {
        Some(Operand::Imm(i)) => Some(i.value),
        _ => None,
    };
    match instr.mnemonic {
        Mnemonic::Push => Some(d + 8),
        Mnemonic::Pop if rsp_dest => None,
        Mnemonic::Pop => Some(d - 8),
        Mnemonic::Sub if rsp_dest => imm.map(|v| d + v),
        Mnemonic::Add if rsp_dest => imm.map(|v| d - v),
        Mnemonic::Leave => None,
        Mnemonic::Cmp | Mnemonic::Test => Some(d),
        _ if rsp_dest => None,
        _ => Some(d),
    }
}
