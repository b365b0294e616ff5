//! Metadata-guided lifting of a binary to reassemblable assembly.

mod cfg;
mod data;
mod emit;
mod labels;
mod symbolize;

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec::Vec;

pub use cfg::{Cfg, CfgBlock};
pub use data::{Piece, Variable};
pub use emit::{default_section_kind, emit_assembly, flags_str};
pub use labels::{function_name, section_spans, slot_name, LabelMap, SectionSpan};

use crate::diag::{Diagnostic, DiagnosticKind, Severity};
use crate::elf::{load_image, ElfError, ElfImage, Image};
use crate::isa::{Instruction, SymbolRef};
use crate::meta::{validate_metadata, EllfMetadata};
use crate::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Any inconsistency is an error.
    #[default]
    Strict,
    /// Inconsistencies become diagnostics and the affected item stays numeric.
    Lenient,
}

impl Mode {
    pub(crate) fn fail(
        self,
        e: LiftError,
        diags: &mut Vec<Diagnostic>,
        kind: DiagnosticKind,
        addr: Option<Address>,
    ) -> Result<(), LiftError> {
        match self {
            Mode::Strict => Err(e),
            Mode::Lenient => {
                diags.push(Diagnostic::warning(kind, addr, e.to_string()));
                Ok(())
            }
        }
    }
}

/// The three order-independent symbolization steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Text,
    Stack,
    Data,
}

pub const DEFAULT_ORDER: [Step; 3] = [Step::Text, Step::Stack, Step::Data];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LiftError {
    #[error("metadata failed validation ({} diagnostics)", .0.len())]
    InvalidMetadata(Vec<Diagnostic>),
    #[error("region does not decode at {0}")]
    RegionDecode(Address),
    #[error("RegionOverlap: instruction at {0} runs into another region")]
    RegionOverlap(Address),
    #[error("operand pointer at {0} is not an instruction start")]
    PointerNotAtInstruction(Address),
    #[error("OperandIndexOutOfRange: operand {index} of instruction at {addr}")]
    OperandIndexOutOfRange { addr: Address, index: usize },
    #[error("NotAPointerPosition: operand {index} of instruction at {addr}")]
    NotAPointerPosition { addr: Address, index: usize },
    #[error("PointerMismatch at {addr}: metadata says {expected}, bytes hold {found}")]
    PointerMismatch {
        addr: Address,
        expected: Address,
        found: Address,
    },
    #[error("pointer at {addr} targets {target}, which lies in no section")]
    UnresolvedTarget { addr: Address, target: Address },
    #[error("DanglingTextRecord: {0} is not an instruction start")]
    DanglingTextRecord(Address),
    #[error(
        "PointerStraddle at {addr}: stored pointer crosses the object boundary at {next} \
         (suffix-merge hazard)"
    )]
    PointerStraddle { addr: Address, next: Address },
    #[error("TargetOutsideFunction: jump at {from} to {target} has no block label")]
    TargetOutsideFunction { from: Address, target: Address },
    #[error(transparent)]
    Elf(#[from] ElfError),
}

#[derive(Debug, Clone)]
pub struct LiftedProgram {
    pub entry: Option<SymbolRef>,
    pub labels: LabelMap,
    /// Symbolized instructions with their annotations.
    pub instructions: BTreeMap<Address, Instruction>,
    /// Instructions as decoded, before symbolization.
    pub decoded: BTreeMap<Address, Instruction>,
    pub variables: Vec<Variable>,
    /// Slot offsets per function entry.
    pub slots: BTreeMap<Address, Vec<u64>>,
    pub cfgs: Vec<Cfg>,
    pub diagnostics: Vec<Diagnostic>,
    pub(crate) image: Image,
}

impl LiftedProgram {
    pub fn cfg(&self, entry: Address) -> Option<&Cfg> {
        self.cfgs.iter().find(|c| c.function_entry == entry)
    }
}

pub fn lift(img: &ElfImage, meta: &EllfMetadata, mode: Mode) -> Result<LiftedProgram, LiftError> {
    lift_with_order(img, meta, mode, DEFAULT_ORDER)
}

/// Lifts with Steps III to V applied in `order`.
pub fn lift_with_order(
    img: &ElfImage,
    meta: &EllfMetadata,
    mode: Mode,
    order: [Step; 3],
) -> Result<LiftedProgram, LiftError> {
    let mut diags = validate_metadata(meta, img);
    if mode == Mode::Strict && !diags.is_empty() {
        return Err(LiftError::InvalidMetadata(diags));
    }
    for d in &mut diags {
        d.severity = Severity::Warning;
    }
    degraded(meta, &mut diags);
    let image = load_image(img)?;
    let spans = section_spans(img);
    let bootstrap = LabelMap::generate(&EllfMetadata::new(), spans.clone(), &BTreeMap::new());
    let decoded = symbolize::decode_regions(meta, &image, &bootstrap, mode, &mut diags)?;
    let labels = LabelMap::generate(meta, spans, &decoded);
    let mut instrs = decoded.clone();
    let earmarks = symbolize::symbolize_pointers(meta, &mut instrs, &labels, mode, &mut diags)?;
    let mut slots = BTreeMap::new();
    let mut variables = Vec::new();
    for step in order {
        match step {
            Step::Text => symbolize::symbolize_text(meta, &mut instrs, &labels, mode, &mut diags)?,
            Step::Stack => {
                slots = symbolize::symbolize_stack(meta, &mut instrs, &labels, &mut diags)
            }
            Step::Data => {
                variables =
                    data::symbolize_data(meta, &image, &earmarks, &labels, mode, &mut diags)?
            }
        }
    }
    let cfgs = cfg::build_cfgs(&decoded, meta, &labels, mode, &mut diags)?;
    let entry = (img.entry_point != Address::ZERO)
        .then(|| labels.lookup(img.entry_point))
        .flatten();
    diags.sort_by_key(|a| (a.addr, a.kind));
    Ok(LiftedProgram {
        entry,
        labels,
        instructions: instrs,
        decoded,
        variables,
        slots,
        cfgs,
        diagnostics: diags,
        image,
    })
}

fn degraded(meta: &EllfMetadata, diags: &mut Vec<Diagnostic>) {
    let mut note = |what: &str| {
        diags.push(Diagnostic::warning(
            DiagnosticKind::Degraded,
            None,
            alloc::format!("no {what} records; falling back to coarser output"),
        ))
    };
    if meta.text.is_empty() {
        note("text");
    }
    if meta.pointers.is_empty() {
        note("pointer");
    }
    if meta.data.is_empty() {
        note("data");
    }
}
