//! Minimal ELF64 little-endian container support.
//!
//! Only what the toolkit needs: the section header table, the section name
//! string table and the dynamic symbol table are parsed; program headers are
//! never interpreted and are carried through untouched.

mod image;
mod writer;

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

pub use image::{load_image, Image};
pub use writer::{ElfWriter, OutSection};

use crate::Address;

// Based on:
// https://refspecs.linuxfoundation.org/elf/gabi4+/ch4.eheader.html

pub const EHDR_SIZE: usize = 64;
pub const SHDR_SIZE: usize = 64;
pub const PHDR_SIZE: usize = 56;

pub const SHT_NULL: u32 = 0;
pub const SHT_PROGBITS: u32 = 1;
pub const SHT_STRTAB: u32 = 3;
pub const SHT_NOBITS: u32 = 8;
pub const SHT_DYNSYM: u32 = 11;
/// Section type used for the `.ellf` payload (inside the OS-specific range).
pub const SHT_ELLF: u32 = 0x6fff_4c46;

pub const SHF_WRITE: u64 = 0x1;
pub const SHF_ALLOC: u64 = 0x2;
pub const SHF_EXECINSTR: u64 = 0x4;

pub const ELLF_SECTION: &str = ".ellf";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ElfError {
    #[error("not an ELF file")]
    NotElf,
    #[error("unsupported ELF class {0} (only ELF64 is supported)")]
    UnsupportedClass(u8),
    #[error("unsupported ELF data encoding {0} (only little-endian is supported)")]
    UnsupportedEndianness(u8),
    #[error("malformed ELF: {0}")]
    MalformedHeader(&'static str),
    #[error("alloc sections overlap at {0}")]
    OverlapError(Address),
    #[error("section {0} already present")]
    DuplicateSection(String),
    #[error("section {0} not found")]
    SectionNotFound(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SectionFlags {
    pub alloc: bool,
    pub exec: bool,
    pub write: bool,
}

impl SectionFlags {
    pub fn from_raw(flags: u64) -> Self {
        SectionFlags {
            alloc: flags & SHF_ALLOC != 0,
            exec: flags & SHF_EXECINSTR != 0,
            write: flags & SHF_WRITE != 0,
        }
    }

    pub fn to_raw(self) -> u64 {
        let mut f = 0;
        if self.alloc {
            f |= SHF_ALLOC;
        }
        if self.exec {
            f |= SHF_EXECINSTR;
        }
        if self.write {
            f |= SHF_WRITE;
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionKind {
    Progbits,
    Nobits,
    Other,
}

/// A section header exactly as stored in the file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SectionHeader {
    pub name: u32,
    pub sh_type: u32,
    pub flags: u64,
    pub addr: u64,
    pub offset: u64,
    pub size: u64,
    pub link: u32,
    pub info: u32,
    pub addralign: u64,
    pub entsize: u64,
}

impl SectionHeader {
    fn parse(b: &[u8]) -> Self {
        SectionHeader {
            name: le32(b, 0),
            sh_type: le32(b, 4),
            flags: le64(b, 8),
            addr: le64(b, 16),
            offset: le64(b, 24),
            size: le64(b, 32),
            link: le32(b, 40),
            info: le32(b, 44),
            addralign: le64(b, 48),
            entsize: le64(b, 56),
        }
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.name.to_le_bytes());
        out.extend_from_slice(&self.sh_type.to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        out.extend_from_slice(&self.addr.to_le_bytes());
        out.extend_from_slice(&self.offset.to_le_bytes());
        out.extend_from_slice(&self.size.to_le_bytes());
        out.extend_from_slice(&self.link.to_le_bytes());
        out.extend_from_slice(&self.info.to_le_bytes());
        out.extend_from_slice(&self.addralign.to_le_bytes());
        out.extend_from_slice(&self.entsize.to_le_bytes());
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub vaddr: Address,
    pub file_offset: u64,
    pub size: u64,
    pub flags: SectionFlags,
    pub kind: SectionKind,
    pub header: SectionHeader,
}

impl Section {
    pub fn contains(&self, addr: Address) -> bool {
        addr >= self.vaddr && addr.0 - self.vaddr.0 < self.size
    }

    pub fn end(&self) -> Address {
        Address(self.vaddr.0.saturating_add(self.size))
    }
}

/// A parsed ELF64 file. Immutable once read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElfImage {
    pub entry_point: Address,
    /// Every entry of the section header table, including the null entry.
    pub sections: Vec<Section>,
    pub dynamic_symbols: BTreeMap<Address, String>,
    pub raw_file: Vec<u8>,
    shstrndx: usize,
}

fn le16(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

fn le32(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn le64(b: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

fn range(file: &[u8], offset: u64, size: u64) -> Option<&[u8]> {
    let start = usize::try_from(offset).ok()?;
    let len = usize::try_from(size).ok()?;
    file.get(start..start.checked_add(len)?)
}

fn c_str(table: &[u8], offset: u32) -> Option<String> {
    let rest = table.get(offset as usize..)?;
    let end = rest.iter().position(|&b| b == 0)?;
    core::str::from_utf8(&rest[..end])
        .ok()
        .map(ToOwned::to_owned)
}

/// Parses an ELF64 little-endian file.
pub fn read_elf(bytes: &[u8]) -> Result<ElfImage, ElfError> {
    if bytes.len() < 4 || bytes[..4] != *b"\x7fELF" {
        return Err(ElfError::NotElf);
    }
    if bytes.len() < 6 {
        return Err(ElfError::MalformedHeader("truncated identification"));
    }
    if bytes[4] != 2 {
        return Err(ElfError::UnsupportedClass(bytes[4]));
    }
    if bytes[5] != 1 {
        return Err(ElfError::UnsupportedEndianness(bytes[5]));
    }
    if bytes.len() < EHDR_SIZE {
        return Err(ElfError::MalformedHeader("truncated file header"));
    }
    let entry_point = Address(le64(bytes, 0x18));
    let shoff = le64(bytes, 0x28);
    let shentsize = le16(bytes, 0x3a);
    let shnum = le16(bytes, 0x3c) as usize;
    let shstrndx = le16(bytes, 0x3e) as usize;

    let mut headers = Vec::with_capacity(shnum);
    if shnum > 0 {
        if shentsize as usize != SHDR_SIZE {
            return Err(ElfError::MalformedHeader("unexpected section header size"));
        }
        let table = range(bytes, shoff, (shnum * SHDR_SIZE) as u64).ok_or(
            ElfError::MalformedHeader("section header table out of bounds"),
        )?;
        for chunk in table.chunks_exact(SHDR_SIZE) {
            headers.push(SectionHeader::parse(chunk));
        }
    }

    let names: &[u8] = if shstrndx != 0 {
        let h = headers.get(shstrndx).ok_or(ElfError::MalformedHeader(
            "section name table index out of range",
        ))?;
        range(bytes, h.offset, h.size).ok_or(ElfError::MalformedHeader(
            "section name table out of bounds",
        ))?
    } else {
        &[]
    };

    let mut sections = Vec::with_capacity(headers.len());
    for (i, h) in headers.iter().enumerate() {
        let name = if (i == 0 && h.sh_type == SHT_NULL) || names.is_empty() {
            String::new()
        } else {
            c_str(names, h.name).ok_or(ElfError::MalformedHeader("bad section name"))?
        };
        let kind = match h.sh_type {
            SHT_PROGBITS => SectionKind::Progbits,
            SHT_NOBITS => SectionKind::Nobits,
            _ => SectionKind::Other,
        };
        if kind != SectionKind::Nobits && h.sh_type != SHT_NULL {
            range(bytes, h.offset, h.size)
                .ok_or(ElfError::MalformedHeader("section data out of bounds"))?;
        }
        if h.flags & SHF_ALLOC != 0 && h.addr.checked_add(h.size).is_none() {
            return Err(ElfError::MalformedHeader("section address range overflows"));
        }
        sections.push(Section {
            name,
            vaddr: Address(h.addr),
            file_offset: h.offset,
            size: h.size,
            flags: SectionFlags::from_raw(h.flags),
            kind,
            header: *h,
        });
    }

    let dynamic_symbols = read_dynamic_symbols(bytes, &headers)?;

    Ok(ElfImage {
        entry_point,
        sections,
        dynamic_symbols,
        raw_file: bytes.to_vec(),
        shstrndx,
    })
}

fn read_dynamic_symbols(
    bytes: &[u8],
    headers: &[SectionHeader],
) -> Result<BTreeMap<Address, String>, ElfError> {
    let mut out = BTreeMap::new();
    let Some(dynsym) = headers.iter().find(|h| h.sh_type == SHT_DYNSYM) else {
        return Ok(out);
    };
    let strtab = headers
        .get(dynsym.link as usize)
        .and_then(|h| range(bytes, h.offset, h.size))
        .ok_or(ElfError::MalformedHeader("dynamic string table missing"))?;
    let syms = range(bytes, dynsym.offset, dynsym.size).ok_or(ElfError::MalformedHeader(
        "dynamic symbol table out of bounds",
    ))?;
    for sym in syms.chunks_exact(24) {
        let name_off = le32(sym, 0);
        let value = le64(sym, 8);
        if name_off == 0 || value == 0 {
            continue;
        }
        let name =
            c_str(strtab, name_off).ok_or(ElfError::MalformedHeader("bad dynamic symbol name"))?;
        out.entry(Address(value)).or_insert(name);
    }
    Ok(out)
}

impl ElfImage {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn alloc_sections(&self) -> impl Iterator<Item = &Section> {
        self.sections.iter().filter(|s| s.flags.alloc)
    }

    /// The alloc section containing `addr`.
    pub fn section_at(&self, addr: Address) -> Option<&Section> {
        self.alloc_sections().find(|s| s.contains(addr))
    }

    /// File bytes of a section (empty for nobits).
    pub fn section_data(&self, section: &Section) -> &[u8] {
        if section.kind == SectionKind::Nobits {
            return &[];
        }
        range(&self.raw_file, section.file_offset, section.size).unwrap_or(&[])
    }

    /// Total size of all alloc sections.
    pub fn alloc_bytes(&self) -> u64 {
        self.alloc_sections().map(|s| s.size).sum()
    }

    pub fn shstrndx(&self) -> usize {
        self.shstrndx
    }
}

/// Returns the file bytes of the named section.
pub fn extract_section<'a>(img: &'a ElfImage, name: &str) -> Result<&'a [u8], ElfError> {
    let s = img
        .section(name)
        .ok_or_else(|| ElfError::SectionNotFound(name.to_owned()))?;
    Ok(img.section_data(s))
}

fn align_to(out: &mut Vec<u8>, align: usize) {
    while !out.len().is_multiple_of(align) {
        out.push(0);
    }
}

/// Appends a non-alloc section to the file.
///
/// Existing bytes are never moved: the payload, a fresh copy of the section
/// name table and a rebuilt section header table are appended after the
/// current end of file, and only the file header fields locating the table
/// are patched.
pub fn inject_section(img: &ElfImage, name: &str, payload: &[u8]) -> Result<Vec<u8>, ElfError> {
    if img.section(name).is_some() {
        return Err(ElfError::DuplicateSection(name.to_owned()));
    }
    let mut headers: Vec<SectionHeader> = img.sections.iter().map(|s| s.header).collect();
    if headers.is_empty() {
        headers.push(SectionHeader::default());
    }

    let mut out = img.raw_file.clone();
    let payload_offset = out.len() as u64;
    out.extend_from_slice(payload);

    let mut shstrndx = img.shstrndx;
    let mut names: Vec<u8> = if shstrndx != 0 {
        img.section_data(&img.sections[shstrndx]).to_vec()
    } else {
        alloc::vec![0]
    };
    let new_name = names.len() as u32;
    names.extend_from_slice(name.as_bytes());
    names.push(0);

    headers.push(SectionHeader {
        name: new_name,
        sh_type: SHT_ELLF,
        flags: 0,
        addr: 0,
        offset: payload_offset,
        size: payload.len() as u64,
        link: 0,
        info: 0,
        addralign: 1,
        entsize: 0,
    });

    if shstrndx == 0 {
        let own_name = names.len() as u32;
        names.extend_from_slice(b".shstrtab\0");
        headers.push(SectionHeader {
            name: own_name,
            sh_type: SHT_STRTAB,
            addralign: 1,
            ..SectionHeader::default()
        });
        shstrndx = headers.len() - 1;
    }
    let names_offset = out.len() as u64;
    out.extend_from_slice(&names);
    headers[shstrndx].offset = names_offset;
    headers[shstrndx].size = names.len() as u64;

    align_to(&mut out, 8);
    let shoff = out.len() as u64;
    for h in &headers {
        h.write(&mut out);
    }

    let shnum =
        u16::try_from(headers.len()).map_err(|_| ElfError::MalformedHeader("too many sections"))?;
    let shstrndx = shstrndx as u16;
    out[0x28..0x30].copy_from_slice(&shoff.to_le_bytes());
    out[0x3a..0x3c].copy_from_slice(&(SHDR_SIZE as u16).to_le_bytes());
    out[0x3c..0x3e].copy_from_slice(&shnum.to_le_bytes());
    out[0x3e..0x40].copy_from_slice(&shstrndx.to_le_bytes());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample() -> Vec<u8> {
        let mut w = ElfWriter::new(Address(0x4000));
        w.section(OutSection::progbits(
            ".text",
            Address(0x4000),
            SectionFlags {
                alloc: true,
                exec: true,
                write: false,
            },
            vec![0x55, 0xc3],
        ));
        w.section(OutSection::nobits(
            ".bss",
            Address(0x6000),
            SectionFlags {
                alloc: true,
                exec: false,
                write: true,
            },
            64,
        ));
        w.finish()
    }

    #[test]
    fn short_inputs_are_not_elf() {
        assert_eq!(read_elf(&[0x7f, b'E', b'L']), Err(ElfError::NotElf));
        assert_eq!(read_elf(b""), Err(ElfError::NotElf));
    }

    #[test]
    fn class_and_endianness_are_checked() {
        let mut f = sample();
        f[4] = 1;
        assert_eq!(read_elf(&f), Err(ElfError::UnsupportedClass(1)));
        let mut f = sample();
        f[5] = 2;
        assert_eq!(read_elf(&f), Err(ElfError::UnsupportedEndianness(2)));
        let f = sample();
        assert!(matches!(
            read_elf(&f[..40]),
            Err(ElfError::MalformedHeader(_))
        ));
    }

    #[test]
    fn parses_written_sections() {
        let img = read_elf(&sample()).unwrap();
        assert_eq!(img.entry_point, Address(0x4000));
        let text = img.section(".text").unwrap();
        assert!(text.flags.exec && text.flags.alloc);
        assert_eq!(img.section_data(text), [0x55, 0xc3]);
        let bss = img.section(".bss").unwrap();
        assert_eq!(bss.kind, SectionKind::Nobits);
        assert_eq!(bss.size, 64);
        assert_eq!(img.alloc_bytes(), 66);
    }

    #[test]
    fn inject_then_extract() {
        let img = read_elf(&sample()).unwrap();
        let out = inject_section(&img, ".ellf", b"payload").unwrap();
        let img2 = read_elf(&out).unwrap();
        assert_eq!(extract_section(&img2, ".ellf").unwrap(), b"payload");
        assert_eq!(img2.sections.len(), img.sections.len() + 1);
        assert_eq!(img2.shstrndx(), img.shstrndx());
        assert_eq!(load_image(&img).unwrap(), load_image(&img2).unwrap());
        assert_eq!(
            inject_section(&img2, ".ellf", b"x"),
            Err(ElfError::DuplicateSection(".ellf".into()))
        );
        let s = img2.section(".ellf").unwrap();
        assert_eq!(s.header.sh_type, SHT_ELLF);
        assert!(!s.flags.alloc);
        // everything before the old end of file is untouched except the
        // header fields locating the section table
        assert_eq!(
            out[EHDR_SIZE..img.raw_file.len()],
            img.raw_file[EHDR_SIZE..]
        );
    }

    #[test]
    fn extract_missing_section() {
        let img = read_elf(&sample()).unwrap();
        assert_eq!(
            extract_section(&img, ".missing"),
            Err(ElfError::SectionNotFound(".missing".into()))
        );
    }

    #[test]
    fn dynamic_symbols_are_read() {
        let mut dynstr = vec![0u8];
        dynstr.extend_from_slice(b"printf\0");
        let mut sym = vec![0u8; 24];
        let mut entry = vec![0u8; 24];
        entry[0..4].copy_from_slice(&1u32.to_le_bytes());
        entry[8..16].copy_from_slice(&0x4010u64.to_le_bytes());
        sym.extend_from_slice(&entry);

        let mut w = ElfWriter::new(Address(0));
        w.section(OutSection::progbits(
            ".text",
            Address(0x4000),
            SectionFlags {
                alloc: true,
                exec: true,
                write: false,
            },
            vec![0xc3; 32],
        ));
        let mut ds = OutSection::other(".dynsym", SHT_DYNSYM, sym);
        ds.link = 3;
        ds.entsize = 24;
        w.section(ds);
        w.section(OutSection::other(".dynstr", SHT_STRTAB, dynstr));
        let img = read_elf(&w.finish()).unwrap();
        assert_eq!(
            img.dynamic_symbols
                .get(&Address(0x4010))
                .map(String::as_str),
            Some("printf")
        );
    }
}
