use alloc::vec::Vec;

use super::varint::{read_svarint, read_uvarint, write_svarint, write_uvarint, VarintError};
use super::{
    DataRecord, EllfMetadata, InstructionRegion, InvariantViolation, PointerRecord, StackRecord,
    TextKind, TextRecord, VERSION,
};
use crate::Address;

pub const MAGIC: [u8; 4] = *b"ELLF";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableId {
    Instructions = 1,
    Pointers = 2,
    Text = 3,
    Stack = 4,
    Data = 5,
}

impl TableId {
    pub const ALL: [TableId; 5] = [
        TableId::Instructions,
        TableId::Pointers,
        TableId::Text,
        TableId::Stack,
        TableId::Data,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TableId::Instructions => "instructions",
            TableId::Pointers => "pointers",
            TableId::Text => "text",
            TableId::Stack => "stack",
            TableId::Data => "data",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("bad magic: not an .ellf section")]
    BadMagic,
    #[error("unsupported .ellf version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated {0} table")]
    TruncatedTable(&'static str),
    #[error("non-canonical encoding in {table} table: {reason}")]
    NonCanonical {
        table: &'static str,
        reason: &'static str,
    },
    #[error("varint overflow in {0} table")]
    VarintOverflow(&'static str),
}

/// Encodes `meta` into the canonical `.ellf` byte layout.
pub fn encode_metadata(meta: &EllfMetadata) -> Result<Vec<u8>, InvariantViolation> {
    meta.check()?;
    let mut out = Vec::with_capacity(16);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    for id in TableId::ALL {
        encode_table_unchecked(meta, id, &mut out);
    }
    Ok(out)
}

/// Encodes a single table (id, count, entries). Used for size accounting.
pub fn encode_table(meta: &EllfMetadata, id: TableId) -> Result<Vec<u8>, InvariantViolation> {
    meta.check()?;
    let mut out = Vec::new();
    encode_table_unchecked(meta, id, &mut out);
    Ok(out)
}

fn delta(prev: &mut Option<Address>, key: Address) -> u64 {
    let d = match *prev {
        Some(p) => key.0 - p.0,
        None => key.0,
    };
    *prev = Some(key);
    d
}

fn encode_table_unchecked(meta: &EllfMetadata, id: TableId, out: &mut Vec<u8>) {
    out.push(id as u8);
    let mut prev = None;
    match id {
        TableId::Instructions => {
            write_uvarint(out, meta.instruction_regions.len() as u64);
            for r in &meta.instruction_regions {
                write_uvarint(out, delta(&mut prev, r.start));
                write_uvarint(out, r.count);
            }
        }
        TableId::Pointers => {
            write_uvarint(out, meta.pointers.len() as u64);
            for p in &meta.pointers {
                let key = p.key();
                write_uvarint(out, delta(&mut prev, key));
                out.push(p.kind_tag());
                match *p {
                    PointerRecord::Operand {
                        operand_index,
                        target,
                        ..
                    } => {
                        write_uvarint(out, u64::from(operand_index));
                        write_svarint(out, target.offset_from(key));
                    }
                    PointerRecord::Data { target, .. } => {
                        write_svarint(out, target.offset_from(key));
                    }
                    PointerRecord::Diff {
                        minuend,
                        subtrahend,
                        ..
                    } => {
                        write_svarint(out, minuend.offset_from(key));
                        write_svarint(out, subtrahend.offset_from(key));
                    }
                }
            }
        }
        TableId::Text => {
            write_uvarint(out, meta.text.len() as u64);
            for t in &meta.text {
                write_uvarint(out, delta(&mut prev, t.addr));
                out.push(t.kind.tag());
            }
        }
        TableId::Stack => {
            write_uvarint(out, meta.stack.len() as u64);
            for s in &meta.stack {
                write_uvarint(out, delta(&mut prev, s.function_entry));
                write_uvarint(out, s.offsets.len() as u64);
                let mut last = 0;
                for &o in &s.offsets {
                    write_uvarint(out, o - last);
                    last = o;
                }
            }
        }
        TableId::Data => {
            write_uvarint(out, meta.data.len() as u64);
            for d in &meta.data {
                write_uvarint(out, delta(&mut prev, d.addr));
                write_uvarint(out, d.size);
            }
        }
    }
}

struct Reader<'a> {
    input: &'a [u8],
    pos: usize,
    table: &'static str,
}

impl<'a> Reader<'a> {
    fn map(&self, e: VarintError) -> DecodeError {
        match e {
            VarintError::Truncated => DecodeError::TruncatedTable(self.table),
            VarintError::Overflow => DecodeError::VarintOverflow(self.table),
            VarintError::NonMinimal => DecodeError::NonCanonical {
                table: self.table,
                reason: "non-minimal varint",
            },
        }
    }

    fn byte(&mut self) -> Result<u8, DecodeError> {
        let b = *self
            .input
            .get(self.pos)
            .ok_or(DecodeError::TruncatedTable(self.table))?;
        self.pos += 1;
        Ok(b)
    }

    fn uvarint(&mut self) -> Result<u64, DecodeError> {
        let (v, n) = read_uvarint(&self.input[self.pos..]).map_err(|e| self.map(e))?;
        self.pos += n;
        Ok(v)
    }

    fn svarint(&mut self) -> Result<i64, DecodeError> {
        let (v, n) = read_svarint(&self.input[self.pos..]).map_err(|e| self.map(e))?;
        self.pos += n;
        Ok(v)
    }

    fn key(&mut self, prev: &mut Option<Address>) -> Result<Address, DecodeError> {
        let d = self.uvarint()?;
        let key = match *prev {
            Some(p) => p
                .checked_add(d)
                .ok_or(DecodeError::VarintOverflow(self.table))?,
            None => Address(d),
        };
        *prev = Some(key);
        Ok(key)
    }

    fn non_canonical(&self, reason: &'static str) -> DecodeError {
        DecodeError::NonCanonical {
            table: self.table,
            reason,
        }
    }

    /// Reads an entry count, bounded by the bytes left so a hostile count
    /// cannot trigger a huge allocation.
    fn count(&mut self) -> Result<usize, DecodeError> {
        let n = self.uvarint()?;
        let remaining = (self.input.len() - self.pos) as u64;
        if n > remaining {
            return Err(DecodeError::TruncatedTable(self.table));
        }
        Ok(n as usize)
    }

    fn table_header(&mut self, id: TableId) -> Result<usize, DecodeError> {
        self.table = id.name();
        if self.byte()? != id as u8 {
            return Err(self.non_canonical("unexpected table id"));
        }
        self.count()
    }
}

/// Decodes a `.ellf` section, accepting only canonical encodings.
pub fn decode_metadata(bytes: &[u8]) -> Result<EllfMetadata, DecodeError> {
    if bytes.len() < MAGIC.len() {
        return if MAGIC.starts_with(bytes) {
            Err(DecodeError::TruncatedTable("header"))
        } else {
            Err(DecodeError::BadMagic)
        };
    }
    if bytes[..4] != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let mut r = Reader {
        input: bytes,
        pos: 4,
        table: "header",
    };
    let version = r.byte()?;
    if version != VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    let mut meta = EllfMetadata::new();

    let n = r.table_header(TableId::Instructions)?;
    let mut prev = None;
    for _ in 0..n {
        let start = r.key(&mut prev)?;
        let count = r.uvarint()?;
        meta.instruction_regions
            .push(InstructionRegion { start, count });
    }

    let n = r.table_header(TableId::Pointers)?;
    let mut prev = None;
    for _ in 0..n {
        let key = r.key(&mut prev)?;
        let rec = match r.byte()? {
            0 => {
                let idx = r.uvarint()?;
                let operand_index =
                    u32::try_from(idx).map_err(|_| DecodeError::VarintOverflow(r.table))?;
                PointerRecord::Operand {
                    instr_addr: key,
                    operand_index,
                    target: key.wrapping_add_signed(r.svarint()?),
                }
            }
            1 => PointerRecord::Data {
                addr: key,
                target: key.wrapping_add_signed(r.svarint()?),
            },
            2 => {
                let minuend = key.wrapping_add_signed(r.svarint()?);
                let subtrahend = key.wrapping_add_signed(r.svarint()?);
                PointerRecord::Diff {
                    addr: key,
                    minuend,
                    subtrahend,
                }
            }
            _ => return Err(r.non_canonical("unknown pointer kind")),
        };
        meta.pointers.push(rec);
    }

    let n = r.table_header(TableId::Text)?;
    let mut prev = None;
    for _ in 0..n {
        let addr = r.key(&mut prev)?;
        let kind = TextKind::from_tag(r.byte()?).ok_or(r.non_canonical("unknown text kind"))?;
        meta.text.push(TextRecord { addr, kind });
    }

    let n = r.table_header(TableId::Stack)?;
    let mut prev = None;
    for _ in 0..n {
        let function_entry = r.key(&mut prev)?;
        let count = r.count()?;
        let mut offsets = Vec::with_capacity(count);
        let mut last: u64 = 0;
        for _ in 0..count {
            let d = r.uvarint()?;
            last = last
                .checked_add(d)
                .ok_or(DecodeError::VarintOverflow(r.table))?;
            offsets.push(last);
        }
        meta.stack.push(StackRecord {
            function_entry,
            offsets,
        });
    }

    let n = r.table_header(TableId::Data)?;
    let mut prev = None;
    for _ in 0..n {
        let addr = r.key(&mut prev)?;
        let size = r.uvarint()?;
        meta.data.push(DataRecord { addr, size });
    }

    if r.pos != bytes.len() {
        r.table = "trailer";
        return Err(r.non_canonical("trailing bytes"));
    }
    meta.check().map_err(|v| DecodeError::NonCanonical {
        table: v.table,
        reason: v.reason,
    })?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn a(v: u64) -> Address {
        Address(v)
    }

    /// Oracle boxes of the lifting example, with the data oracle placed at
    /// the addresses that actually hold the jump table.
    fn switch_metadata() -> EllfMetadata {
        EllfMetadata {
            version: 1,
            instruction_regions: vec![InstructionRegion {
                start: a(0x4000),
                count: 10,
            }],
            pointers: vec![
                PointerRecord::Operand {
                    instr_addr: a(0x4004),
                    operand_index: 1,
                    target: a(0x4024),
                },
                PointerRecord::Diff {
                    addr: a(0x4024),
                    minuend: a(0x4014),
                    subtrahend: a(0x4024),
                },
                PointerRecord::Diff {
                    addr: a(0x402c),
                    minuend: a(0x401c),
                    subtrahend: a(0x4024),
                },
            ],
            text: vec![
                TextRecord {
                    addr: a(0x4000),
                    kind: TextKind::FunctionStart,
                },
                TextRecord {
                    addr: a(0x4014),
                    kind: TextKind::BasicBlock,
                },
                TextRecord {
                    addr: a(0x4023),
                    kind: TextKind::FunctionEnd,
                },
            ],
            stack: vec![],
            data: vec![
                DataRecord {
                    addr: a(0x4024),
                    size: 8,
                },
                DataRecord {
                    addr: a(0x402c),
                    size: 8,
                },
            ],
        }
    }

    // Hand-encoded against the wire layout before the codec existed.
    const SWITCH_BYTES: &[u8] = &[
        0x45, 0x4c, 0x4c, 0x46, 0x01, // magic, version
        0x01, 0x01, 0x80, 0x80, 0x01, 0x0a, // regions
        0x02, 0x03, // pointers
        0x84, 0x80, 0x01, 0x00, 0x01, 0x40, // operand 0x4004 #1 -> +0x20
        0x20, 0x02, 0x1f, 0x00, // diff 0x4024: -16, 0
        0x08, 0x02, 0x1f, 0x0f, // diff 0x402c: -16, -8
        0x03, 0x03, 0x80, 0x80, 0x01, 0x01, 0x14, 0x00, 0x0f, 0x02, // text
        0x04, 0x00, // stack
        0x05, 0x02, 0xa4, 0x80, 0x01, 0x08, 0x08, 0x08, // data
    ];

    #[test]
    fn two_way_switch_matches_hand_encoding() {
        let m = switch_metadata();
        assert_eq!(encode_metadata(&m).unwrap(), SWITCH_BYTES);
        assert_eq!(decode_metadata(SWITCH_BYTES).unwrap(), m);
    }

    #[test]
    fn empty_metadata_layout() {
        let bytes = encode_metadata(&EllfMetadata::new()).unwrap();
        assert_eq!(
            bytes,
            [0x45, 0x4c, 0x4c, 0x46, 0x01, 1, 0, 2, 0, 3, 0, 4, 0, 5, 0]
        );
        assert_eq!(decode_metadata(&bytes).unwrap(), EllfMetadata::new());
    }

    #[test]
    fn minimal_region_round_trips() {
        let mut m = EllfMetadata::new();
        m.instruction_regions.push(InstructionRegion {
            start: a(0),
            count: 1,
        });
        let bytes = encode_metadata(&m).unwrap();
        assert_eq!(decode_metadata(&bytes).unwrap(), m);
    }

    #[test]
    fn magic_only_is_truncated() {
        assert!(matches!(
            decode_metadata(b"ELLF"),
            Err(DecodeError::TruncatedTable(_))
        ));
        assert!(matches!(
            decode_metadata(b"EL"),
            Err(DecodeError::TruncatedTable(_))
        ));
        assert_eq!(decode_metadata(b"ELF\x7f\x01"), Err(DecodeError::BadMagic));
        assert_eq!(
            decode_metadata(b"ELLF\x02"),
            Err(DecodeError::UnsupportedVersion(2))
        );
    }

    #[test]
    fn duplicate_text_record_is_non_canonical() {
        // two identical function starts at 0x10
        let bytes = [
            0x45, 0x4c, 0x4c, 0x46, 0x01, 1, 0, 2, 0, 3, 2, 0x10, 1, 0x00, 1, 4, 0, 5, 0,
        ];
        assert!(matches!(
            decode_metadata(&bytes),
            Err(DecodeError::NonCanonical { table: "text", .. })
        ));
        // same address, kinds out of order
        let bytes = [
            0x45, 0x4c, 0x4c, 0x46, 0x01, 1, 0, 2, 0, 3, 2, 0x10, 2, 0x00, 1, 4, 0, 5, 0,
        ];
        assert!(matches!(
            decode_metadata(&bytes),
            Err(DecodeError::NonCanonical { table: "text", .. })
        ));
    }

    #[test]
    fn rejects_trailing_bytes_and_bad_ids() {
        let mut bytes = encode_metadata(&EllfMetadata::new()).unwrap();
        bytes.push(0);
        assert!(matches!(
            decode_metadata(&bytes),
            Err(DecodeError::NonCanonical { .. })
        ));
        let mut bytes = encode_metadata(&EllfMetadata::new()).unwrap();
        bytes[5] = 2;
        assert!(matches!(
            decode_metadata(&bytes),
            Err(DecodeError::NonCanonical { .. })
        ));
    }

    #[test]
    fn encode_rejects_unsorted_tables() {
        let mut m = switch_metadata();
        m.data.reverse();
        assert!(encode_metadata(&m).is_err());
    }

    #[test]
    fn table_sizes_sum_to_total() {
        let m = switch_metadata();
        let total: usize = TableId::ALL
            .iter()
            .map(|&t| encode_table(&m, t).unwrap().len())
            .sum();
        assert_eq!(total + 5, encode_metadata(&m).unwrap().len());
    }
}
