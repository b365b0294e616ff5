//! Build facts: block maps, relocations, variables, locals and jump tables as
//! reported by a toolchain, and their conversion into metadata.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::diag::{Diagnostic, DiagnosticKind};
use crate::elf::{load_image, ElfError, ElfImage, Image};
use crate::isa::{decode_one, Instruction, Operand};
use crate::meta::{
    DataRecord, EllfMetadata, InstructionRegion, PointerRecord, StackRecord, TextKind, TextRecord,
};
use crate::Address;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FunctionBlocks {
    pub function_addr: Address,
    pub block_offsets: Vec<u64>,
    pub block_sizes: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RelocKind {
    Abs64,
    Abs32,
    Pc32,
    Diff32,
}

impl RelocKind {
    pub fn name(self) -> &'static str {
        match self {
            RelocKind::Abs64 => "abs64",
            RelocKind::Abs32 => "abs32",
            RelocKind::Pc32 => "pc32",
            RelocKind::Diff32 => "diff32",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "abs64" => RelocKind::Abs64,
            "abs32" => RelocKind::Abs32,
            "pc32" => RelocKind::Pc32,
            "diff32" => RelocKind::Diff32,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relocation {
    pub addr: Address,
    pub kind: RelocKind,
    pub target_addr: Address,
    pub subtrahend_addr: Option<Address>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variable {
    pub addr: Address,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Locals {
    pub function_addr: Address,
    pub offsets: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JumpTable {
    pub table_addr: Address,
    pub entry_count: u64,
    pub entry_size: u64,
}

impl JumpTable {
    fn contains(&self, a: Address) -> bool {
        let len = self.entry_count.saturating_mul(self.entry_size);
        a >= self.table_addr && a.0 - self.table_addr.0 < len
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildFacts {
    pub basic_blocks: Vec<FunctionBlocks>,
    pub relocations: Vec<Relocation>,
    pub variables: Vec<Variable>,
    pub locals: Vec<Locals>,
    pub jump_tables: Vec<JumpTable>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FactsError {
    #[error("inconsistent build facts at {addr}: {reason}")]
    InconsistentFacts { addr: Address, reason: String },
    #[error(transparent)]
    Elf(#[from] ElfError),
}

fn inconsistent(addr: Address, reason: impl Into<String>) -> FactsError {
    FactsError::InconsistentFacts {
        addr,
        reason: reason.into(),
    }
}

#[derive(Clone, Copy)]
struct Block {
    start: Address,
    end: Address,
    function: Address,
}

/// Decodes `[start, end)` and returns every instruction in it.
fn decode_range(
    image: &Image,
    start: Address,
    end: Address,
) -> Result<Vec<Instruction>, FactsError> {
    let mut out = Vec::new();
    let mut a = start;
    while a < end {
        let i = decode_one(image, a).map_err(|e| inconsistent(a, format!("{e}")))?;
        a = i.end();
        out.push(i);
    }
    if a != end {
        return Err(inconsistent(
            start,
            "block does not end on an instruction boundary",
        ));
    }
    Ok(out)
}

/// Converts build facts into metadata. Decoding the image is needed to count
/// instructions per region and to place each function's end record.
pub fn from_build_facts(
    facts: &BuildFacts,
    img: &ElfImage,
) -> Result<(EllfMetadata, Vec<Diagnostic>), FactsError> {
    let image = load_image(img)?;
    let mut meta = EllfMetadata::new();
    let mut diags = Vec::new();

    let mut blocks = Vec::new();
    for f in &facts.basic_blocks {
        if f.block_offsets.len() != f.block_sizes.len() {
            return Err(inconsistent(
                f.function_addr,
                "block offsets and sizes differ in length",
            ));
        }
        if !f.block_offsets.contains(&0) {
            return Err(inconsistent(
                f.function_addr,
                "function has no block at offset 0",
            ));
        }
        for (&off, &size) in f.block_offsets.iter().zip(&f.block_sizes) {
            if size == 0 {
                continue;
            }
            let start = f
                .function_addr
                .checked_add(off)
                .ok_or_else(|| inconsistent(f.function_addr, "block offset overflows"))?;
            let end = start
                .checked_add(size)
                .ok_or_else(|| inconsistent(start, "block size overflows"))?;
            blocks.push(Block {
                start,
                end,
                function: f.function_addr,
            });
        }
    }
    blocks.sort_by_key(|b| b.start);
    for w in blocks.windows(2) {
        if w[1].start < w[0].end {
            return Err(inconsistent(w[1].start, "blocks overlap"));
        }
    }

    // instructions by address, per block
    let mut instrs: BTreeMap<Address, Instruction> = BTreeMap::new();
    let mut last_in_block = BTreeMap::new();
    for b in &blocks {
        let decoded = decode_range(&image, b.start, b.end)?;
        if let Some(last) = decoded.last() {
            last_in_block.insert(b.start, last.address);
        }
        for i in decoded {
            instrs.insert(i.address, i);
        }
    }

    // coalesce contiguous blocks into regions
    let mut i = 0;
    while i < blocks.len() {
        let start = blocks[i].start;
        let mut end = blocks[i].end;
        let mut j = i + 1;
        while j < blocks.len() && blocks[j].start == end {
            end = blocks[j].end;
            j += 1;
        }
        let count = instrs.range(start..end).count() as u64;
        meta.instruction_regions
            .push(InstructionRegion { start, count });
        i = j;
    }

    let mut last_block: BTreeMap<Address, Address> = BTreeMap::new();
    for b in &blocks {
        let kind = if b.start == b.function {
            TextKind::FunctionStart
        } else {
            TextKind::BasicBlock
        };
        meta.text.push(TextRecord {
            addr: b.start,
            kind,
        });
        last_block.insert(b.function, b.start);
    }
    for (_, block) in last_block {
        meta.text.push(TextRecord {
            addr: last_in_block[&block],
            kind: TextKind::FunctionEnd,
        });
    }

    for r in &facts.relocations {
        let containing = instrs
            .range(..=r.addr)
            .next_back()
            .map(|(_, i)| i)
            .filter(|i| r.addr < i.end());
        let record = match (containing, r.kind) {
            (Some(i), RelocKind::Abs64 | RelocKind::Abs32 | RelocKind::Pc32) => {
                let offset = (r.addr.0 - i.address.0) as u8;
                let index = i
                    .operand_at_offset(offset)
                    .ok_or_else(|| inconsistent(r.addr, "relocation is not at an operand field"))?;
                if matches!(i.operands[index], Operand::PcRel(_)) {
                    // branch targets are covered by the text table
                    continue;
                }
                PointerRecord::Operand {
                    instr_addr: i.address,
                    operand_index: index as u32,
                    target: r.target_addr,
                }
            }
            (Some(_), RelocKind::Diff32) => {
                return Err(inconsistent(r.addr, "pointer difference inside code"));
            }
            (None, RelocKind::Abs64 | RelocKind::Abs32) => PointerRecord::Data {
                addr: r.addr,
                target: r.target_addr,
            },
            (None, RelocKind::Pc32) => {
                return Err(inconsistent(r.addr, "pc-relative relocation in data"));
            }
            (None, RelocKind::Diff32) => {
                let subtrahend = match facts.jump_tables.iter().find(|t| t.contains(r.addr)) {
                    Some(t) => t.table_addr,
                    None => r.subtrahend_addr.ok_or_else(|| {
                        inconsistent(
                            r.addr,
                            "difference outside any jump table has no subtrahend",
                        )
                    })?,
                };
                PointerRecord::Diff {
                    addr: r.addr,
                    minuend: r.target_addr,
                    subtrahend,
                }
            }
        };
        meta.pointers.push(record);
    }

    let mut vars: Vec<Variable> = facts
        .variables
        .iter()
        .filter(|v| v.size > 0)
        .copied()
        .collect();
    vars.sort_by_key(|v| v.addr);
    let mut end = Address(0);
    for v in vars {
        if !meta.data.is_empty() && v.addr < end {
            diags.push(Diagnostic::warning(
                DiagnosticKind::OverlapDropped,
                Some(v.addr),
                format!("variable of {} bytes overlaps the previous one", v.size),
            ));
            continue;
        }
        end = v
            .addr
            .checked_add(v.size)
            .ok_or_else(|| inconsistent(v.addr, "variable extent overflows"))?;
        meta.data.push(DataRecord {
            addr: v.addr,
            size: v.size,
        });
    }

    let mut locals: BTreeMap<Address, Vec<u64>> = BTreeMap::new();
    for l in &facts.locals {
        if l.offsets.contains(&0) {
            return Err(inconsistent(l.function_addr, "stack offset 0"));
        }
        locals
            .entry(l.function_addr)
            .or_default()
            .extend_from_slice(&l.offsets);
    }
    for (function_entry, mut offsets) in locals {
        offsets.sort_unstable();
        offsets.dedup();
        if !offsets.is_empty() {
            meta.stack.push(StackRecord {
                function_entry,
                offsets,
            });
        }
    }

    meta.sort();
    meta.check().map_err(|v| {
        let addr = Address(0);
        inconsistent(addr, format!("{v}"))
    })?;
    Ok((meta, diags))
}
