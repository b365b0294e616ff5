use alloc::string::String;
use core::fmt;

use crate::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DiagnosticKind {
    /// An address or extent lies outside the section it must belong to.
    Range,
    /// An address is not an instruction start.
    Alignment,
    /// Tables disagree with each other.
    Consistency,
    /// Instruction bytes inside a region did not decode.
    Decode,
    /// A later data variable overlapped an earlier one and was dropped.
    OverlapDropped,
    /// A pointer record disagrees with the bytes it describes.
    PointerMismatch,
    /// A stored pointer crosses into the next data object.
    PointerStraddle,
    /// A frame access could not be attributed to a stack slot.
    StackAccess,
    /// An oracle table is absent and a coarser fallback was used.
    Degraded,
}

impl DiagnosticKind {
    pub fn name(self) -> &'static str {
        match self {
            DiagnosticKind::Range => "RangeDiagnostic",
            DiagnosticKind::Alignment => "AlignmentDiagnostic",
            DiagnosticKind::Consistency => "ConsistencyDiagnostic",
            DiagnosticKind::Decode => "DecodeDiagnostic",
            DiagnosticKind::OverlapDropped => "OverlapDropped",
            DiagnosticKind::PointerMismatch => "PointerMismatch",
            DiagnosticKind::PointerStraddle => "PointerStraddle",
            DiagnosticKind::StackAccess => "StackAccess",
            DiagnosticKind::Degraded => "Degraded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub severity: Severity,
    pub addr: Option<Address>,
    pub message: String,
}

impl Diagnostic {
    pub fn error(kind: DiagnosticKind, addr: Option<Address>, message: String) -> Self {
        Diagnostic {
            kind,
            severity: Severity::Error,
            addr,
            message,
        }
    }

    pub fn warning(kind: DiagnosticKind, addr: Option<Address>, message: String) -> Self {
        Diagnostic {
            kind,
            severity: Severity::Warning,
            addr,
            message,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match self.addr {
            Some(a) => write!(f, "{sev}: {} at {a}: {}", self.kind.name(), self.message),
            None => write!(f, "{sev}: {}: {}", self.kind.name(), self.message),
        }
    }
}
