use alloc::string::String;
use core::fmt::Write;

use super::data::{Piece, Variable};
use super::labels::{function_name, SectionSpan};
use super::LiftedProgram;
use crate::elf::SectionFlags;
use crate::isa::SymbolRef;

/// Flags and kind a section gets when its header line names neither.
pub fn default_section_kind(name: &str) -> (SectionFlags, bool) {
    let f = |write, exec| SectionFlags {
        alloc: true,
        exec,
        write,
    };
    if name.starts_with(".text") {
        (f(false, true), false)
    } else if name.starts_with(".bss") {
        (f(true, false), true)
    } else if name.starts_with(".data") {
        (f(true, false), false)
    } else {
        (f(false, false), false)
    }
}

pub fn flags_str(f: SectionFlags) -> String {
    let mut s = String::new();
    if f.alloc {
        s.push('a');
    }
    if f.write {
        s.push('w');
    }
    if f.exec {
        s.push('x');
    }
    s
}

fn section_header(out: &mut String, s: &SectionSpan) {
    let _ = write!(out, ".section {} base={:#x}", s.name, s.base.0);
    let (flags, nobits) = default_section_kind(&s.name);
    if flags != s.flags {
        let _ = write!(out, " flags={}", flags_str(s.flags));
    }
    if nobits != s.nobits {
        out.push_str(if s.nobits { " nobits" } else { " progbits" });
    }
    out.push('\n');
}

/// Renders a lifted program in the reassemblable dialect.
pub fn emit_assembly(p: &LiftedProgram) -> String {
    let mut out = String::new();
    if let Some(e) = &p.entry {
        let _ = writeln!(out, ".entry {e}");
    }
    for s in p.labels.sections() {
        section_header(&mut out, s);
        if s.exec() {
            emit_code(&mut out, p, s);
        } else {
            for v in p.variables.iter().filter(|v| s.contains(v.address)) {
                emit_variable(&mut out, v);
            }
        }
    }
    out
}

fn emit_code(out: &mut String, p: &LiftedProgram, s: &SectionSpan) {
    let mut at = s.base;
    while at < s.end() {
        if let Some(instr) = p.instructions.get(&at) {
            let mut post = alloc::vec::Vec::new();
            for a in &instr.annotations {
                if a == ".endfunc" {
                    post.push(a);
                    continue;
                }
                let _ = writeln!(out, "{a}");
                if a.starts_with(".func ") {
                    let f = function_name(at);
                    for k in p.slots.get(&at).into_iter().flatten() {
                        let _ = writeln!(out, ".slot {f}, s{k}, {k}");
                    }
                }
            }
            let _ = writeln!(out, "    {instr}");
            for a in post {
                let _ = writeln!(out, "{a}");
            }
            at = instr.end();
        } else {
            let next = p
                .instructions
                .range(at..s.end())
                .next()
                .map_or(s.end(), |(a, _)| *a);
            let bytes = p.image.slice(at, (next.0 - at.0) as usize).unwrap_or(&[]);
            emit_raw(out, bytes);
            at = next;
        }
    }
}

fn emit_variable(out: &mut String, v: &Variable) {
    if let Some(l) = &v.label {
        let _ = writeln!(out, "{l}:");
        if let Some(n) = v.declared_size {
            let _ = writeln!(out, ".size {l}, {n}");
        }
    }
    for piece in &v.pieces {
        match piece {
            Piece::Raw(b) => emit_raw(out, b),
            Piece::Zeroes(n) => {
                let _ = writeln!(out, "    .zero {n}");
            }
            Piece::Pointer { width, target } => {
                let _ = writeln!(out, "    {} {target}", data_directive(*width));
            }
            Piece::Diff {
                width,
                minuend,
                subtrahend,
            } => {
                let _ = writeln!(
                    out,
                    "    {} {} - {}",
                    data_directive(*width),
                    term(minuend),
                    term(subtrahend)
                );
            }
        }
    }
}

fn data_directive(width: u8) -> &'static str {
    if width == 8 {
        ".quad"
    } else {
        ".long"
    }
}

fn term(s: &SymbolRef) -> String {
    if s.offset == 0 {
        s.label.clone()
    } else {
        alloc::format!("({s})")
    }
}

fn printable(b: u8) -> bool {
    (0x20..0x7f).contains(&b)
}

fn zero_run(b: &[u8]) -> usize {
    b.iter().take_while(|&&x| x == 0).count()
}

/// Length of a printable string plus its terminator, if one starts here.
fn string_run(b: &[u8]) -> Option<usize> {
    let n = b.iter().take_while(|&&x| printable(x)).count();
    (n >= 3 && b.get(n) == Some(&0)).then_some(n)
}

fn emit_raw(out: &mut String, b: &[u8]) {
    let mut i = 0;
    while i < b.len() {
        let z = zero_run(&b[i..]);
        if z >= 16 {
            let _ = writeln!(out, "    .zero {z}");
            i += z;
            continue;
        }
        if let Some(n) = string_run(&b[i..]) {
            out.push_str("    .asciz \"");
            for &c in &b[i..i + n] {
                if c == b'"' || c == b'\\' {
                    out.push('\\');
                }
                out.push(c as char);
            }
            out.push_str("\"\n");
            i += n + 1;
            continue;
        }
        out.push_str("    .byte ");
        let mut n = 0;
        while i < b.len() && n < 16 {
            if n > 0 && (zero_run(&b[i..]) >= 16 || string_run(&b[i..]).is_some()) {
                break;
            }
            if n > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{:#04x}", b[i]);
            i += 1;
            n += 1;
        }
        out.push('\n');
    }
}
