use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use super::{EllfMetadata, PointerRecord, TextKind};
use crate::diag::{Diagnostic, DiagnosticKind};
use crate::elf::{load_image, ElfImage, Section};
use crate::isa::decode_one;
use crate::Address;

fn exec_section(img: &ElfImage, a: Address) -> Option<&Section> {
    img.section_at(a).filter(|s| s.flags.exec)
}

/// Inside some alloc section, or exactly one past the end of one.
fn in_any_section(img: &ElfImage, a: Address) -> bool {
    img.alloc_sections().any(|s| s.contains(a) || s.end() == a)
}

fn err(kind: DiagnosticKind, addr: Address, msg: alloc::string::String) -> Diagnostic {
    Diagnostic::error(kind, Some(addr), msg)
}

/// Cross-checks metadata against the binary. An empty result means the
/// metadata is consistent with the image.
pub fn validate_metadata(meta: &EllfMetadata, img: &ElfImage) -> Vec<Diagnostic> {
    use DiagnosticKind::*;
    let mut out = Vec::new();
    let image = match load_image(img) {
        Ok(i) => i,
        Err(e) => {
            out.push(Diagnostic::error(Consistency, None, format!("{e}")));
            return out;
        }
    };

    let mut starts = BTreeSet::new();
    let mut decoded_ok = true;
    for r in &meta.instruction_regions {
        if exec_section(img, r.start).is_none() {
            out.push(err(
                Range,
                r.start,
                "instruction region outside executable sections".into(),
            ));
            decoded_ok = false;
            continue;
        }
        let mut a = r.start;
        for _ in 0..r.count {
            match decode_one(&image, a) {
                Ok(i) => {
                    starts.insert(a);
                    a = i.end();
                }
                Err(e) => {
                    out.push(err(Decode, a, format!("{e}")));
                    decoded_ok = false;
                    break;
                }
            }
        }
    }

    for p in &meta.pointers {
        let targets: Vec<Address> = match *p {
            PointerRecord::Operand { target, .. } | PointerRecord::Data { target, .. } => {
                alloc::vec![target]
            }
            PointerRecord::Diff {
                minuend,
                subtrahend,
                ..
            } => alloc::vec![minuend, subtrahend],
        };
        for t in targets {
            if !in_any_section(img, t) {
                out.push(err(
                    Range,
                    p.key(),
                    format!("pointer target {t} outside all sections"),
                ));
            }
        }
        match p {
            PointerRecord::Operand { instr_addr, .. } => {
                if decoded_ok && !starts.contains(instr_addr) {
                    out.push(err(
                        Alignment,
                        *instr_addr,
                        "operand pointer is not at an instruction start".into(),
                    ));
                }
            }
            _ => {
                if img.section_at(p.key()).is_none() {
                    out.push(err(
                        Range,
                        p.key(),
                        "data pointer outside alloc sections".into(),
                    ));
                }
            }
        }
    }

    let mut seen_start = false;
    for t in &meta.text {
        if exec_section(img, t.addr).is_none() {
            out.push(err(
                Range,
                t.addr,
                "text record outside executable sections".into(),
            ));
        } else if decoded_ok && !starts.contains(&t.addr) {
            out.push(err(
                Alignment,
                t.addr,
                "text record is not an instruction start".into(),
            ));
        }
        match t.kind {
            TextKind::FunctionStart => seen_start = true,
            TextKind::FunctionEnd if !seen_start => out.push(err(
                Consistency,
                t.addr,
                "function end before any function start".into(),
            )),
            _ => {}
        }
    }

    for s in &meta.stack {
        if !meta.text_kind_at(s.function_entry, TextKind::FunctionStart) {
            out.push(err(
                Consistency,
                s.function_entry,
                "stack record for an address that is not a function start".into(),
            ));
        }
    }

    for d in &meta.data {
        let ok = img
            .section_at(d.addr)
            .is_some_and(|s| !s.flags.exec && d.end().is_some_and(|e| e <= s.end()));
        if !ok {
            out.push(err(
                Range,
                d.addr,
                format!("data extent of {} bytes outside its section", d.size),
            ));
        }
    }
    out
}
