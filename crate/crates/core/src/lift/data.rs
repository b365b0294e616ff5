use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::labels::LabelMap;
use super::{LiftError, Mode};
use crate::diag::{Diagnostic, DiagnosticKind};
use crate::elf::Image;
use crate::isa::SymbolRef;
use crate::meta::{EllfMetadata, PointerRecord};
use crate::Address;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece {
    Raw(Vec<u8>),
    Zeroes(u64),
    Pointer {
        width: u8,
        target: SymbolRef,
    },
    Diff {
        width: u8,
        minuend: SymbolRef,
        subtrahend: SymbolRef,
    },
}

/// One data object: a record's extent up to the next record, or the
/// anonymous bytes before the first record of a section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub address: Address,
    pub size: u64,
    pub label: Option<String>,
    /// Recorded size, when smaller than the tiled extent.
    pub declared_size: Option<u64>,
    pub pieces: Vec<Piece>,
}

/// Step V.
pub(crate) fn symbolize_data(
    meta: &EllfMetadata,
    image: &Image,
    earmarks: &BTreeMap<Address, PointerRecord>,
    labels: &LabelMap,
    mode: Mode,
    diags: &mut Vec<Diagnostic>,
) -> Result<Vec<Variable>, LiftError> {
    let mut vars = Vec::new();
    for sec in labels.sections().iter().filter(|s| !s.exec()) {
        let records: BTreeMap<Address, u64> = meta
            .data
            .iter()
            .filter(|d| sec.contains(d.addr))
            .map(|d| (d.addr, d.size))
            .collect();
        let mut starts: Vec<Address> = records.keys().copied().collect();
        if starts.first() != Some(&sec.base) && sec.size > 0 {
            starts.insert(0, sec.base);
        }
        for (i, &start) in starts.iter().enumerate() {
            let end = starts.get(i + 1).copied().unwrap_or(sec.end());
            let size = end.0 - start.0;
            let declared = records.get(&start).copied();
            let pieces = if sec.nobits {
                for &a in earmarks.range(start..end).map(|(a, _)| a) {
                    let e = LiftError::PointerMismatch {
                        addr: a,
                        expected: Address::ZERO,
                        found: Address::ZERO,
                    };
                    mode.fail(e, diags, DiagnosticKind::PointerMismatch, Some(a))?;
                }
                alloc::vec![Piece::Zeroes(size)]
            } else {
                let bytes = image.slice(start, size as usize).unwrap_or(&[]);
                let span = Span {
                    start,
                    end,
                    sec_end: sec.end(),
                    bytes,
                };
                span.pieces(image, earmarks, labels, mode, diags)?
            };
            vars.push(Variable {
                address: start,
                size,
                label: labels.data_label(start).map(String::from),
                declared_size: declared.filter(|&d| d < size),
                pieces,
            });
        }
    }
    Ok(vars)
}

struct Span<'a> {
    start: Address,
    end: Address,
    sec_end: Address,
    bytes: &'a [u8],
}

impl Span<'_> {
    fn pieces(
        &self,
        image: &Image,
        earmarks: &BTreeMap<Address, PointerRecord>,
        labels: &LabelMap,
        mode: Mode,
        diags: &mut Vec<Diagnostic>,
    ) -> Result<Vec<Piece>, LiftError> {
        let mut out = Vec::new();
        let mut pos = self.start;
        for (&at, rec) in earmarks.range(self.start..self.end) {
            if at < pos {
                continue;
            }
            let next = earmarks.range(at + 1..).next().map(|(a, _)| *a);
            let fits = |w: u64| at + w <= self.sec_end && next.is_none_or(|n| at + w <= n);
            let matching: Vec<u64> = [8u64, 4]
                .into_iter()
                .filter(|&w| fits(w) && stored_matches(image, at, w, rec))
                .collect();
            let Some(&width) = matching.iter().find(|&&w| at + w <= self.end) else {
                let e = match matching.first() {
                    Some(_) => LiftError::PointerStraddle {
                        addr: at,
                        next: self.end,
                    },
                    None => LiftError::PointerMismatch {
                        addr: at,
                        expected: rec_value(rec),
                        found: Address(read(image, at, 8).unwrap_or(0)),
                    },
                };
                let kind = match e {
                    LiftError::PointerStraddle { .. } => DiagnosticKind::PointerStraddle,
                    _ => DiagnosticKind::PointerMismatch,
                };
                mode.fail(e, diags, kind, Some(at))?;
                continue;
            };
            let piece = match *rec {
                PointerRecord::Data { target, .. } => {
                    labels.lookup(target).map(|target| Piece::Pointer {
                        width: width as u8,
                        target,
                    })
                }
                PointerRecord::Diff {
                    minuend,
                    subtrahend,
                    ..
                } => labels
                    .lookup(minuend)
                    .zip(labels.lookup(subtrahend))
                    .map(|(m, s)| Piece::Diff {
                        width: width as u8,
                        minuend: m,
                        subtrahend: s,
                    }),
                PointerRecord::Operand { .. } => None,
            };
            let Some(piece) = piece else {
                let e = LiftError::UnresolvedTarget {
                    addr: at,
                    target: rec_value(rec),
                };
                mode.fail(e, diags, DiagnosticKind::Range, Some(at))?;
                continue;
            };
            self.raw(pos, at, &mut out);
            out.push(piece);
            pos = at + width;
        }
        self.raw(pos, self.end, &mut out);
        Ok(out)
    }

    fn raw(&self, from: Address, to: Address, out: &mut Vec<Piece>) {
        if from < to {
            let lo = (from.0 - self.start.0) as usize;
            let hi = (to.0 - self.start.0) as usize;
            out.push(Piece::Raw(self.bytes[lo..hi].to_vec()));
        }
    }
}

fn rec_value(rec: &PointerRecord) -> Address {
    match *rec {
        PointerRecord::Data { target, .. } => target,
        PointerRecord::Diff {
            minuend,
            subtrahend,
            ..
        } => Address(minuend.0.wrapping_sub(subtrahend.0)),
        PointerRecord::Operand { target, .. } => target,
    }
}

fn read(image: &Image, at: Address, width: u64) -> Option<u64> {
    let b = image.slice(at, width as usize)?;
    let mut buf = [0u8; 8];
    buf[..b.len()].copy_from_slice(b);
    Some(u64::from_le_bytes(buf))
}

fn stored_matches(image: &Image, at: Address, width: u64, rec: &PointerRecord) -> bool {
    let Some(raw) = read(image, at, width) else {
        return false;
    };
    match *rec {
        PointerRecord::Data { target, .. } => raw == target.0,
        PointerRecord::Diff {
            minuend,
            subtrahend,
            ..
        } => {
            let want = minuend.0.wrapping_sub(subtrahend.0) as i64;
            let got = if width == 4 {
                i64::from(raw as u32 as i32)
            } else {
                raw as i64
            };
            got == want
        }
        PointerRecord::Operand { .. } => false,
    }
}
