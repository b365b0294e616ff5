use alloc::string::String;
use alloc::vec::Vec;

use super::{
    SectionFlags, SectionHeader, EHDR_SIZE, PHDR_SIZE, SHDR_SIZE, SHT_NOBITS, SHT_PROGBITS,
    SHT_STRTAB,
};
use crate::Address;

const PAGE: u64 = 0x1000;
const PT_LOAD: u32 = 1;

/// A section to be laid out by [`ElfWriter`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutSection {
    pub name: String,
    pub sh_type: u32,
    pub vaddr: Address,
    pub flags: SectionFlags,
    pub data: Vec<u8>,
    /// Memory size; differs from `data.len()` only for nobits.
    pub size: u64,
    pub link: u32,
    pub entsize: u64,
}

impl OutSection {
    pub fn progbits(name: &str, vaddr: Address, flags: SectionFlags, data: Vec<u8>) -> Self {
        OutSection {
            name: name.into(),
            sh_type: SHT_PROGBITS,
            vaddr,
            flags,
            size: data.len() as u64,
            data,
            link: 0,
            entsize: 0,
        }
    }

    pub fn nobits(name: &str, vaddr: Address, flags: SectionFlags, size: u64) -> Self {
        OutSection {
            name: name.into(),
            sh_type: SHT_NOBITS,
            vaddr,
            flags,
            data: Vec::new(),
            size,
            link: 0,
            entsize: 0,
        }
    }

    pub fn other(name: &str, sh_type: u32, data: Vec<u8>) -> Self {
        OutSection {
            name: name.into(),
            sh_type,
            vaddr: Address(0),
            flags: SectionFlags::default(),
            size: data.len() as u64,
            data,
            link: 0,
            entsize: 0,
        }
    }
}

/// Writes a static ELF64 executable with one `PT_LOAD` per alloc section.
///
/// Sections get header indices 1.. in insertion order; `.shstrtab` comes last.
#[derive(Debug, Clone)]
pub struct ElfWriter {
    entry: Address,
    sections: Vec<OutSection>,
}

fn pad_to(out: &mut Vec<u8>, offset: u64) {
    out.resize(offset as usize, 0);
}

impl ElfWriter {
    pub fn new(entry: Address) -> Self {
        ElfWriter {
            entry,
            sections: Vec::new(),
        }
    }

    pub fn section(&mut self, s: OutSection) -> &mut Self {
        self.sections.push(s);
        self
    }

    pub fn finish(&self) -> Vec<u8> {
        let loads: Vec<usize> = (0..self.sections.len())
            .filter(|&i| self.sections[i].flags.alloc && self.sections[i].size > 0)
            .collect();
        let phoff = if loads.is_empty() {
            0
        } else {
            EHDR_SIZE as u64
        };

        let mut out = alloc::vec![0u8; EHDR_SIZE + loads.len() * PHDR_SIZE];
        let mut names = alloc::vec![0u8];
        let mut headers = alloc::vec![SectionHeader::default()];

        for s in &self.sections {
            let name = names.len() as u32;
            names.extend_from_slice(s.name.as_bytes());
            names.push(0);
            let mut offset = out.len() as u64;
            if s.flags.alloc {
                let want = s.vaddr.0 % PAGE;
                if offset % PAGE != want {
                    offset += (want + PAGE - offset % PAGE) % PAGE;
                }
            } else {
                offset = offset.next_multiple_of(8);
            }
            if s.sh_type != SHT_NOBITS {
                pad_to(&mut out, offset);
                out.extend_from_slice(&s.data);
            }
            headers.push(SectionHeader {
                name,
                sh_type: s.sh_type,
                flags: s.flags.to_raw(),
                addr: s.vaddr.0,
                offset,
                size: s.size,
                link: s.link,
                info: 0,
                addralign: if s.flags.alloc { 16 } else { 8 },
                entsize: s.entsize,
            });
        }

        let shstr_name = names.len() as u32;
        names.extend_from_slice(b".shstrtab\0");
        let shstr_off = out.len() as u64;
        out.extend_from_slice(&names);
        headers.push(SectionHeader {
            name: shstr_name,
            sh_type: SHT_STRTAB,
            offset: shstr_off,
            size: names.len() as u64,
            addralign: 1,
            ..SectionHeader::default()
        });

        let shoff = (out.len() as u64).next_multiple_of(8);
        pad_to(&mut out, shoff);
        for h in &headers {
            h.write(&mut out);
        }

        for (n, &i) in loads.iter().enumerate() {
            let s = &self.sections[i];
            let h = &headers[i + 1];
            let mut flags = 4u32;
            if s.flags.write {
                flags |= 2;
            }
            if s.flags.exec {
                flags |= 1;
            }
            let filesz = if s.sh_type == SHT_NOBITS { 0 } else { s.size };
            let mut ph = Vec::with_capacity(PHDR_SIZE);
            ph.extend_from_slice(&PT_LOAD.to_le_bytes());
            ph.extend_from_slice(&flags.to_le_bytes());
            ph.extend_from_slice(&h.offset.to_le_bytes());
            ph.extend_from_slice(&s.vaddr.0.to_le_bytes());
            ph.extend_from_slice(&s.vaddr.0.to_le_bytes());
            ph.extend_from_slice(&filesz.to_le_bytes());
            ph.extend_from_slice(&s.size.to_le_bytes());
            ph.extend_from_slice(&PAGE.to_le_bytes());
            let at = EHDR_SIZE + n * PHDR_SIZE;
            out[at..at + PHDR_SIZE].copy_from_slice(&ph);
        }

        let mut eh = Vec::with_capacity(EHDR_SIZE);
        eh.extend_from_slice(b"\x7fELF");
        eh.extend_from_slice(&[2, 1, 1, 0]);
        eh.extend_from_slice(&[0; 8]);
        eh.extend_from_slice(&2u16.to_le_bytes()); // ET_EXEC
        eh.extend_from_slice(&0x3eu16.to_le_bytes()); // EM_X86_64
        eh.extend_from_slice(&1u32.to_le_bytes());
        eh.extend_from_slice(&self.entry.0.to_le_bytes());
        eh.extend_from_slice(&phoff.to_le_bytes());
        eh.extend_from_slice(&shoff.to_le_bytes());
        eh.extend_from_slice(&0u32.to_le_bytes());
        eh.extend_from_slice(&(EHDR_SIZE as u16).to_le_bytes());
        eh.extend_from_slice(&(PHDR_SIZE as u16).to_le_bytes());
        eh.extend_from_slice(&(loads.len() as u16).to_le_bytes());
        eh.extend_from_slice(&(SHDR_SIZE as u16).to_le_bytes());
        eh.extend_from_slice(&(headers.len() as u16).to_le_bytes());
        eh.extend_from_slice(&((headers.len() - 1) as u16).to_le_bytes());
        out[..EHDR_SIZE].copy_from_slice(&eh);
        out
    }
}
