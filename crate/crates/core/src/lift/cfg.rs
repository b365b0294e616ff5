use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use super::labels::LabelMap;
use super::symbolize::Instrs;
use super::{LiftError, Mode};
use crate::diag::{Diagnostic, DiagnosticKind};
use crate::isa::{instruction_class, InstrClass};
use crate::meta::{EllfMetadata, PointerRecord, TextKind};
use crate::Address;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfgBlock {
    pub start: Address,
    pub end: Address,
    pub successors: Vec<Address>,
    /// Targets of an indirect jump inside the block.
    pub indirect_successors: Vec<Address>,
    /// Control may leave the function from this block.
    pub exit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    pub function_entry: Address,
    pub blocks: Vec<CfgBlock>,
}

impl Cfg {
    pub fn block(&self, start: Address) -> Option<&CfgBlock> {
        self.blocks.iter().find(|b| b.start == start)
    }

    /// The block containing `addr`.
    pub fn block_of(&self, addr: Address) -> Option<&CfgBlock> {
        self.blocks.iter().find(|b| addr >= b.start && addr < b.end)
    }
}

/// One graph per function, built from the decoded (unsymbolized) code.
pub(crate) fn build_cfgs(
    raw: &Instrs,
    meta: &EllfMetadata,
    labels: &LabelMap,
    mode: Mode,
    diags: &mut Vec<Diagnostic>,
) -> Result<Vec<Cfg>, LiftError> {
    let all_blocks: BTreeSet<Address> = meta
        .text
        .iter()
        .filter(|t| t.kind != TextKind::FunctionEnd && raw.contains_key(&t.addr))
        .map(|t| t.addr)
        .collect();
    let ends: BTreeSet<Address> = meta
        .text
        .iter()
        .filter(|t| t.kind == TextKind::FunctionEnd)
        .map(|t| t.addr)
        .collect();
    let mut cfgs = Vec::new();
    for (entry, _) in labels.functions() {
        let fend = labels.function_end(entry);
        let starts: Vec<Address> = all_blocks.range(entry..fend).copied().collect();
        let tables = table_targets(meta, entry, fend, &starts);
        let mut blocks = Vec::new();
        for (i, &start) in starts.iter().enumerate() {
            let limit = starts.get(i + 1).copied().unwrap_or(fend);
            let mut succ = BTreeSet::new();
            let mut exit = false;
            let mut indirect = BTreeSet::new();
            let mut at = start;
            let mut last = None;
            while let Some(instr) = raw.get(&at).filter(|_| at < limit) {
                exit |= ends.contains(&at);
                let mut direct = |t: Address, exit: &mut bool| -> Result<(), LiftError> {
                    if t >= entry && t < fend && all_blocks.contains(&t) {
                        succ.insert(t);
                    } else if all_blocks.contains(&t) {
                        *exit = true;
                    } else {
                        let e = LiftError::TargetOutsideFunction {
                            from: at,
                            target: t,
                        };
                        mode.fail(e, diags, DiagnosticKind::Consistency, Some(at))?;
                        *exit = true;
                    }
                    Ok(())
                };
                match instruction_class(instr) {
                    InstrClass::Jump(t) | InstrClass::ConditionalJump(t) => direct(t, &mut exit)?,
                    InstrClass::IndirectJump => {
                        succ.extend(tables.iter().copied());
                        indirect.extend(tables.iter().copied());
                    }
                    InstrClass::Return | InstrClass::Halt => exit = true,
                    _ => {}
                }
                last = Some(instr);
                at = instr.end();
            }
            if let Some(instr) = last {
                match instruction_class(instr) {
                    InstrClass::Fallthrough
                    | InstrClass::ConditionalJump(_)
                    | InstrClass::Call(_) => {
                        if at < fend && all_blocks.contains(&at) {
                            succ.insert(at);
                        } else {
                            exit = true;
                        }
                    }
                    _ => {}
                }
            } else {
                diags.push(Diagnostic::warning(
                    DiagnosticKind::Consistency,
                    Some(start),
                    format!("block at {start} holds no instructions"),
                ));
            }
            blocks.push(CfgBlock {
                start,
                end: at,
                successors: succ.into_iter().collect(),
                indirect_successors: indirect.into_iter().collect(),
                exit,
            });
        }
        cfgs.push(Cfg {
            function_entry: entry,
            blocks,
        });
    }
    Ok(cfgs)
}

/// Successors of indirect jumps inside [entry, fend): the minuends of
/// difference records whose base the function materializes, and the data
/// pointers stored in objects it references. All blocks if neither exists.
fn table_targets(
    meta: &EllfMetadata,
    entry: Address,
    fend: Address,
    starts: &[Address],
) -> Vec<Address> {
    let referenced: BTreeSet<Address> = meta
        .pointers
        .iter()
        .filter_map(|p| match *p {
            PointerRecord::Operand {
                instr_addr, target, ..
            } if instr_addr >= entry && instr_addr < fend => Some(target),
            _ => None,
        })
        .collect();
    let objects: Vec<(Address, Address)> = meta
        .data
        .iter()
        .filter(|d| referenced.contains(&d.addr))
        .filter_map(|d| Some((d.addr, d.end()?)))
        .collect();
    let mut out = BTreeSet::new();
    for p in &meta.pointers {
        let t = match *p {
            PointerRecord::Diff {
                minuend,
                subtrahend,
                ..
            } if referenced.contains(&subtrahend) => minuend,
            PointerRecord::Data { addr, target }
                if objects.iter().any(|&(a, e)| addr >= a && addr < e) =>
            {
                target
            }
            _ => continue,
        };
        if starts.contains(&t) {
            out.insert(t);
        }
    }
    if out.is_empty() {
        return starts.to_vec();
    }
    out.into_iter().collect()
}
