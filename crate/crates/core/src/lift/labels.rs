use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::elf::{ElfImage, SectionFlags, SectionKind};
use crate::isa::{Instruction, SymbolRef};
use crate::meta::{EllfMetadata, TextKind};
use crate::Address;

/// An alloc section as seen by the lifter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionSpan {
    pub name: String,
    pub base: Address,
    pub size: u64,
    pub flags: SectionFlags,
    pub nobits: bool,
}

impl SectionSpan {
    pub fn end(&self) -> Address {
        self.base + self.size
    }

    pub fn contains(&self, a: Address) -> bool {
        a >= self.base && a < self.end()
    }

    pub fn exec(&self) -> bool {
        self.flags.exec
    }
}

pub fn section_spans(img: &ElfImage) -> Vec<SectionSpan> {
    img.alloc_sections()
        .map(|s| SectionSpan {
            name: s.name.clone(),
            base: s.vaddr,
            size: s.size,
            flags: s.flags,
            nobits: s.kind == SectionKind::Nobits,
        })
        .collect()
}

/// Address-derived label names for code and data.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelMap {
    sections: Vec<SectionSpan>,
    text: BTreeMap<Address, String>,
    data: BTreeMap<Address, String>,
    functions: BTreeMap<Address, String>,
}

pub fn function_name(entry: Address) -> String {
    format!("F_{:x}", entry.0)
}

pub fn slot_name(offset: u64) -> String {
    format!("s{offset}")
}

impl LabelMap {
    /// Names every function start, block start and data object. Records
    /// that do not sit on a decoded instruction (text) or inside a
    /// non-executable section (data) get no name.
    pub fn generate(
        meta: &EllfMetadata,
        sections: Vec<SectionSpan>,
        instrs: &BTreeMap<Address, Instruction>,
    ) -> Self {
        let mut map = LabelMap {
            sections,
            ..LabelMap::default()
        };
        for f in meta.function_starts() {
            if instrs.contains_key(&f) && map.section(f).is_some_and(SectionSpan::exec) {
                map.functions.insert(f, function_name(f));
                map.text.insert(f, function_name(f));
            }
        }
        let mut counters: BTreeMap<Address, u32> = BTreeMap::new();
        for t in &meta.text {
            if t.kind != TextKind::BasicBlock
                || !instrs.contains_key(&t.addr)
                || map.text.contains_key(&t.addr)
            {
                continue;
            }
            let name = match map.function_of(t.addr) {
                Some(f) => {
                    let k = counters.entry(f).or_insert(0);
                    *k += 1;
                    format!("{}.Lb{}", map.functions[&f], k)
                }
                None => format!("B_{:x}", t.addr.0),
            };
            map.text.insert(t.addr, name);
        }
        for d in &meta.data {
            if map.section(d.addr).is_some_and(|s| !s.exec()) {
                map.data.insert(d.addr, format!("D_{:x}", d.addr.0));
            }
        }
        map
    }

    pub fn sections(&self) -> &[SectionSpan] {
        &self.sections
    }

    pub fn section(&self, a: Address) -> Option<&SectionSpan> {
        self.sections.iter().find(|s| s.contains(a))
    }

    /// The function whose extent contains `a`: the closest function start at
    /// or below `a` in the same section.
    pub fn function_of(&self, a: Address) -> Option<Address> {
        let s = self.section(a)?;
        self.functions
            .range(s.base..=a)
            .next_back()
            .map(|(f, _)| *f)
    }

    /// End of the function starting at `entry`: the next function start in
    /// the same section, or the section end.
    pub fn function_end(&self, entry: Address) -> Address {
        let end = self.section(entry).map_or(entry, SectionSpan::end);
        self.functions
            .range(entry + 1..end)
            .next()
            .map_or(end, |(f, _)| *f)
    }

    pub fn functions(&self) -> impl Iterator<Item = (Address, &str)> {
        self.functions.iter().map(|(a, n)| (*a, n.as_str()))
    }

    pub fn text_label(&self, a: Address) -> Option<&str> {
        self.text.get(&a).map(String::as_str)
    }

    pub fn data_label(&self, a: Address) -> Option<&str> {
        self.data.get(&a).map(String::as_str)
    }

    pub fn is_function(&self, a: Address) -> bool {
        self.functions.contains_key(&a)
    }

    /// Symbolic form of `addr`: the closest label at or below it in the
    /// namespace of its section, falling back to the section itself. A
    /// section's one-past-the-end address resolves against that section.
    pub fn lookup(&self, addr: Address) -> Option<SymbolRef> {
        let sec = self
            .section(addr)
            .or_else(|| self.sections.iter().find(|s| s.end() == addr))?;
        let names = if sec.exec() { &self.text } else { &self.data };
        match names.range(sec.base..=addr).next_back() {
            Some((a, name)) => Some(SymbolRef::new(name.clone(), (addr.0 - a.0) as i64)),
            None => Some(SymbolRef::new(
                sec.name.clone(),
                (addr.0 - sec.base.0) as i64,
            )),
        }
    }
}
