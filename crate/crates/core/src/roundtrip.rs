//! Assemble, lift, reassemble, and compare.

use alloc::string::String;
use alloc::vec::Vec;

use crate::asm::{assemble, AsmError, AsmOptions};
use crate::elf::{extract_section, load_image, read_elf, ElfError, ELLF_SECTION};
use crate::lift::{emit_assembly, lift, LiftError, Mode};
use crate::meta::{decode_metadata, DecodeError, EllfMetadata};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RoundtripError {
    #[error("assembling the source failed: {0}")]
    Source(AsmError),
    #[error("lifting failed: {0}")]
    Lift(#[from] LiftError),
    #[error("reassembling the lifted text failed: {0}")]
    Reassemble(AsmError),
    #[error(transparent)]
    Elf(#[from] ElfError),
    #[error(transparent)]
    Meta(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundtripReport {
    /// Loaded bytes and entry point of both binaries agree.
    pub bytes_equal: bool,
    /// The reassembled binary carries the same metadata.
    pub metadata_equal: bool,
    /// Lifting the reassembled binary reproduces the lifted text.
    pub text_fixpoint: bool,
    pub lifted: String,
    pub relifted: String,
    pub notes: Vec<String>,
}

impl RoundtripReport {
    pub fn passed(&self) -> bool {
        self.bytes_equal && self.metadata_equal && self.text_fixpoint
    }
}

/// Lifts an executable using the metadata it carries.
pub fn lift_binary(elf: &[u8], mode: Mode) -> Result<(String, EllfMetadata), RoundtripError> {
    let img = read_elf(elf)?;
    let meta = decode_metadata(extract_section(&img, ELLF_SECTION)?)?;
    let lp = lift(&img, &meta, mode)?;
    Ok((emit_assembly(&lp), meta))
}

pub fn roundtrip_check(
    source: &str,
    opts: &AsmOptions,
    mode: Mode,
) -> Result<RoundtripReport, RoundtripError> {
    let first = assemble(source, opts).map_err(RoundtripError::Source)?;
    let (lifted, meta) = lift_binary(&first.elf, mode)?;
    let second = assemble(&lifted, opts).map_err(RoundtripError::Reassemble)?;
    let (relifted, meta2) = lift_binary(&second.elf, mode)?;

    let (a, b) = (read_elf(&first.plain_elf)?, read_elf(&second.plain_elf)?);
    let mut notes = Vec::new();
    let same_image = load_image(&a)? == load_image(&b)?;
    let same_entry = a.entry_point == b.entry_point;
    if !same_image {
        notes.push(String::from("loaded bytes differ"));
    }
    if !same_entry {
        notes.push(alloc::format!(
            "entry point {} became {}",
            a.entry_point,
            b.entry_point
        ));
    }
    let metadata_equal = meta == meta2;
    if !metadata_equal {
        notes.push(String::from("metadata differs after reassembly"));
    }
    let text_fixpoint = lifted == relifted;
    if !text_fixpoint {
        notes.push(String::from("lifted text is not a fixpoint"));
    }
    Ok(RoundtripReport {
        bytes_equal: same_image && same_entry,
        metadata_equal,
        text_fixpoint,
        lifted,
        relifted,
        notes,
    })
}
