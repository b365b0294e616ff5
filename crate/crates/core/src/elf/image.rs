use alloc::vec::Vec;

use super::{ElfError, ElfImage, SectionKind};
use crate::Address;

/// The loaded execution image: a sparse byte map over every alloc section.
///
/// Stored as sorted, non-overlapping, non-adjacent runs of bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Image {
    segments: Vec<(Address, Vec<u8>)>,
}

impl Image {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a run of bytes. Fails if any byte is already mapped.
    pub fn insert(&mut self, start: Address, bytes: &[u8]) -> Result<(), ElfError> {
        if bytes.is_empty() {
            return Ok(());
        }
        let end = start
            .0
            .checked_add(bytes.len() as u64)
            .ok_or(ElfError::OverlapError(start))?;
        let pos = self.segments.partition_point(|(a, _)| *a < start);
        if let Some((a, b)) = pos.checked_sub(1).map(|i| &self.segments[i]) {
            if a.0 + b.len() as u64 > start.0 {
                return Err(ElfError::OverlapError(start));
            }
        }
        if let Some((a, _)) = self.segments.get(pos) {
            if a.0 < end {
                return Err(ElfError::OverlapError(*a));
            }
        }
        self.segments.insert(pos, (start, bytes.to_vec()));
        // merge with neighbours that touch
        if pos + 1 < self.segments.len() && self.segments[pos + 1].0 .0 == end {
            let (_, next) = self.segments.remove(pos + 1);
            self.segments[pos].1.extend_from_slice(&next);
        }
        if pos > 0 {
            let (a, b) = &self.segments[pos - 1];
            if a.0 + b.len() as u64 == start.0 {
                let (_, cur) = self.segments.remove(pos);
                self.segments[pos - 1].1.extend_from_slice(&cur);
            }
        }
        Ok(())
    }

    fn segment(&self, addr: Address) -> Option<(Address, &[u8])> {
        let pos = self.segments.partition_point(|(a, _)| *a <= addr);
        let (a, b) = self.segments.get(pos.checked_sub(1)?)?;
        let off = addr.0 - a.0;
        (off < b.len() as u64).then_some((*a, b.as_slice()))
    }

    pub fn get(&self, addr: Address) -> Option<u8> {
        let (a, b) = self.segment(addr)?;
        Some(b[(addr.0 - a.0) as usize])
    }

    /// All mapped bytes from `addr` up to the end of its contiguous run.
    pub fn bytes_from(&self, addr: Address) -> &[u8] {
        match self.segment(addr) {
            Some((a, b)) => &b[(addr.0 - a.0) as usize..],
            None => &[],
        }
    }

    /// Exactly `len` mapped bytes starting at `addr`, if all are mapped.
    pub fn slice(&self, addr: Address, len: usize) -> Option<&[u8]> {
        self.bytes_from(addr).get(..len)
    }

    pub fn len(&self) -> u64 {
        self.segments.iter().map(|(_, b)| b.len() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn contains(&self, addr: Address) -> bool {
        self.segment(addr).is_some()
    }

    pub fn segments(&self) -> impl Iterator<Item = (Address, &[u8])> {
        self.segments.iter().map(|(a, b)| (*a, b.as_slice()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Address, u8)> + '_ {
        self.segments.iter().flat_map(|(a, b)| {
            b.iter()
                .enumerate()
                .map(move |(i, &v)| (Address(a.0 + i as u64), v))
        })
    }
}

/// Builds the byte map of every alloc section. Nobits sections read as zero.
pub fn load_image(img: &ElfImage) -> Result<Image, ElfError> {
    let mut out = Image::new();
    for s in img.alloc_sections() {
        if s.kind == SectionKind::Nobits {
            let len = usize::try_from(s.size)
                .map_err(|_| ElfError::MalformedHeader("section too large"))?;
            out.insert(s.vaddr, &alloc::vec![0u8; len])?;
        } else {
            let data = img.section_data(s);
            if data.len() as u64 != s.size {
                return Err(ElfError::MalformedHeader("section data out of bounds"));
            }
            out.insert(s.vaddr, data)?;
        }
    }
    Ok(out)
}
