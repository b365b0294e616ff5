//! JSON interchange for metadata and build facts.
//!
//! Addresses are written as `"0x…"` strings. On input they may also be plain
//! integers or decimal strings.

use std::fmt;

use ellf_core::facts::{
    BuildFacts, FunctionBlocks, JumpTable, Locals, RelocKind, Relocation, Variable,
};
use ellf_core::meta::{
    DataRecord, EllfMetadata, InstructionRegion, PointerRecord, StackRecord, TextKind, TextRecord,
    VERSION,
};
use ellf_core::Address;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hex(pub u64);

impl Serialize for Hex {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:#x}", self.0))
    }
}

struct HexVisitor;

impl Visitor<'_> for HexVisitor {
    type Value = Hex;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("an address as a \"0x\" string or an unsigned integer")
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Hex, E> {
        Ok(Hex(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Hex, E> {
        u64::try_from(v)
            .map(Hex)
            .map_err(|_| E::custom("negative address"))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Hex, E> {
        parse_u64(v)
            .map(Hex)
            .ok_or_else(|| E::custom(format!("bad address {v:?}")))
    }
}

impl<'de> Deserialize<'de> for Hex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Hex, D::Error> {
        d.deserialize_any(HexVisitor)
    }
}

/// Parses `0x`-prefixed hex or decimal.
pub fn parse_u64(s: &str) -> Option<u64> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) if !h.is_empty() => u64::from_str_radix(h, 16).ok(),
        Some(_) => None,
        None => s.parse().ok(),
    }
}

impl From<Address> for Hex {
    fn from(a: Address) -> Hex {
        Hex(a.0)
    }
}

impl From<Hex> for Address {
    fn from(h: Hex) -> Address {
        Address(h.0)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaJson {
    version: u8,
    instruction_regions: Vec<RegionJson>,
    pointers: Vec<PointerJson>,
    text: Vec<TextJson>,
    stack: Vec<StackJson>,
    data: Vec<DataJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionJson {
    start: Hex,
    count: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum PointerJson {
    Operand {
        instr_addr: Hex,
        operand_index: u32,
        target: Hex,
    },
    Data {
        addr: Hex,
        target: Hex,
    },
    Diff {
        addr: Hex,
        minuend: Hex,
        subtrahend: Hex,
    },
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum TextKindJson {
    BasicBlock,
    FunctionStart,
    FunctionEnd,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextJson {
    addr: Hex,
    kind: TextKindJson,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StackJson {
    function_entry: Hex,
    offsets: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataJson {
    addr: Hex,
    size: u64,
}

#[derive(Debug)]
pub enum JsonError {
    Syntax(serde_json::Error),
    Version(u8),
}

impl fmt::Display for JsonError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JsonError::Syntax(e) => write!(f, "malformed JSON: {e}"),
            JsonError::Version(v) => write!(f, "unsupported metadata version {v}"),
        }
    }
}

impl std::error::Error for JsonError {}

impl From<serde_json::Error> for JsonError {
    fn from(e: serde_json::Error) -> Self {
        JsonError::Syntax(e)
    }
}

pub fn metadata_to_json(m: &EllfMetadata) -> String {
    let j = MetaJson {
        version: m.version,
        instruction_regions: m
            .instruction_regions
            .iter()
            .map(|r| RegionJson {
                start: r.start.into(),
                count: r.count,
            })
            .collect(),
        pointers: m
            .pointers
            .iter()
            .map(|p| match *p {
                PointerRecord::Operand {
                    instr_addr,
                    operand_index,
                    target,
                } => PointerJson::Operand {
                    instr_addr: instr_addr.into(),
                    operand_index,
                    target: target.into(),
                },
                PointerRecord::Data { addr, target } => PointerJson::Data {
                    addr: addr.into(),
                    target: target.into(),
                },
                PointerRecord::Diff {
                    addr,
                    minuend,
                    subtrahend,
                } => PointerJson::Diff {
                    addr: addr.into(),
                    minuend: minuend.into(),
                    subtrahend: subtrahend.into(),
                },
            })
            .collect(),
        text: m
            .text
            .iter()
            .map(|t| TextJson {
                addr: t.addr.into(),
                kind: match t.kind {
                    TextKind::BasicBlock => TextKindJson::BasicBlock,
                    TextKind::FunctionStart => TextKindJson::FunctionStart,
                    TextKind::FunctionEnd => TextKindJson::FunctionEnd,
                },
            })
            .collect(),
        stack: m
            .stack
            .iter()
            .map(|s| StackJson {
                function_entry: s.function_entry.into(),
                offsets: s.offsets.clone(),
            })
            .collect(),
        data: m
            .data
            .iter()
            .map(|d| DataJson {
                addr: d.addr.into(),
                size: d.size,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&j).expect("metadata serializes");
    s.push('\n');
    s
}

/// Parses the interchange form. Table order is taken as given; canonical
/// order is checked later by the codec.
pub fn metadata_from_json(s: &str) -> Result<EllfMetadata, JsonError> {
    let j: MetaJson = serde_json::from_str(s)?;
    if j.version != VERSION {
        return Err(JsonError::Version(j.version));
    }
    let mut m = EllfMetadata::new();
    m.instruction_regions = j
        .instruction_regions
        .into_iter()
        .map(|r| InstructionRegion {
            start: r.start.into(),
            count: r.count,
        })
        .collect();
    m.pointers = j
        .pointers
        .into_iter()
        .map(|p| match p {
            PointerJson::Operand {
                instr_addr,
                operand_index,
                target,
            } => PointerRecord::Operand {
                instr_addr: instr_addr.into(),
                operand_index,
                target: target.into(),
            },
            PointerJson::Data { addr, target } => PointerRecord::Data {
                addr: addr.into(),
                target: target.into(),
            },
            PointerJson::Diff {
                addr,
                minuend,
                subtrahend,
            } => PointerRecord::Diff {
                addr: addr.into(),
                minuend: minuend.into(),
                subtrahend: subtrahend.into(),
            },
        })
        .collect();
    m.text = j
        .text
        .into_iter()
        .map(|t| TextRecord {
            addr: t.addr.into(),
            kind: match t.kind {
                TextKindJson::BasicBlock => TextKind::BasicBlock,
                TextKindJson::FunctionStart => TextKind::FunctionStart,
                TextKindJson::FunctionEnd => TextKind::FunctionEnd,
            },
        })
        .collect();
    m.stack = j
        .stack
        .into_iter()
        .map(|s| StackRecord {
            function_entry: s.function_entry.into(),
            offsets: s.offsets,
        })
        .collect();
    m.data = j
        .data
        .into_iter()
        .map(|d| DataRecord {
            addr: d.addr.into(),
            size: d.size,
        })
        .collect();
    Ok(m)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactsJson {
    #[serde(default)]
    basic_blocks: Vec<BlocksJson>,
    #[serde(default)]
    relocations: Vec<RelocJson>,
    #[serde(default)]
    variables: Vec<VariableJson>,
    #[serde(default)]
    locals: Vec<LocalsJson>,
    #[serde(default)]
    jump_tables: Vec<TableJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlocksJson {
    function_addr: Hex,
    block_offsets: Vec<u64>,
    block_sizes: Vec<u64>,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum RelocKindJson {
    Abs64,
    Abs32,
    Pc32,
    Diff32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelocJson {
    addr: Hex,
    kind: RelocKindJson,
    target_addr: Hex,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subtrahend_addr: Option<Hex>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableJson {
    addr: Hex,
    size: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocalsJson {
    function_addr: Hex,
    offsets: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableJson {
    table_addr: Hex,
    entry_count: u64,
    entry_size: u64,
}

pub fn facts_to_json(f: &BuildFacts) -> String {
    let j = FactsJson {
        basic_blocks: f
            .basic_blocks
            .iter()
            .map(|b| BlocksJson {
                function_addr: b.function_addr.into(),
                block_offsets: b.block_offsets.clone(),
                block_sizes: b.block_sizes.clone(),
            })
            .collect(),
        relocations: f
            .relocations
            .iter()
            .map(|r| RelocJson {
                addr: r.addr.into(),
                kind: match r.kind {
                    RelocKind::Abs64 => RelocKindJson::Abs64,
                    RelocKind::Abs32 => RelocKindJson::Abs32,
                    RelocKind::Pc32 => RelocKindJson::Pc32,
                    RelocKind::Diff32 => RelocKindJson::Diff32,
                },
                target_addr: r.target_addr.into(),
                subtrahend_addr: r.subtrahend_addr.map(Hex::from),
            })
            .collect(),
        variables: f
            .variables
            .iter()
            .map(|v| VariableJson {
                addr: v.addr.into(),
                size: v.size,
            })
            .collect(),
        locals: f
            .locals
            .iter()
            .map(|l| LocalsJson {
                function_addr: l.function_addr.into(),
                offsets: l.offsets.clone(),
            })
            .collect(),
        jump_tables: f
            .jump_tables
            .iter()
            .map(|t| TableJson {
                table_addr: t.table_addr.into(),
                entry_count: t.entry_count,
                entry_size: t.entry_size,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&j).expect("facts serialize");
    s.push('\n');
    s
}

pub fn facts_from_json(s: &str) -> Result<BuildFacts, JsonError> {
    let j: FactsJson = serde_json::from_str(s)?;
    Ok(BuildFacts {
        basic_blocks: j
            .basic_blocks
            .into_iter()
            .map(|b| FunctionBlocks {
                function_addr: b.function_addr.into(),
                block_offsets: b.block_offsets,
                block_sizes: b.block_sizes,
            })
            .collect(),
        relocations: j
            .relocations
            .into_iter()
            .map(|r| Relocation {
                addr: r.addr.into(),
                kind: match r.kind {
                    RelocKindJson::Abs64 => RelocKind::Abs64,
                    RelocKindJson::Abs32 => RelocKind::Abs32,
                    RelocKindJson::Pc32 => RelocKind::Pc32,
                    RelocKindJson::Diff32 => RelocKind::Diff32,
                },
                target_addr: r.target_addr.into(),
                subtrahend_addr: r.subtrahend_addr.map(Address::from),
            })
            .collect(),
        variables: j
            .variables
            .into_iter()
            .map(|v| Variable {
                addr: v.addr.into(),
                size: v.size,
            })
            .collect(),
        locals: j
            .locals
            .into_iter()
            .map(|l| Locals {
                function_addr: l.function_addr.into(),
                offsets: l.offsets,
            })
            .collect(),
        jump_tables: j
            .jump_tables
            .into_iter()
            .map(|t| JumpTable {
                table_addr: t.table_addr.into(),
                entry_count: t.entry_count,
                entry_size: t.entry_size,
            })
            .collect(),
    })
}
