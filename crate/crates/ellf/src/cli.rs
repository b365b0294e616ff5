use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use ellf_core::asm::{assemble, AsmOptions};
use ellf_core::diag::Severity;
use ellf_core::elf::{extract_section, inject_section, read_elf, ElfImage, ELLF_SECTION};
use ellf_core::facts::from_build_facts;
use ellf_core::lift::{emit_assembly, lift, Mode};
use ellf_core::meta::{
    decode_metadata, encode_metadata, encode_table, validate_metadata, EllfMetadata, TableId,
};
use ellf_core::roundtrip::roundtrip_check;
use ellf_core::Address;

use crate::json::{
    facts_from_json, facts_to_json, metadata_from_json, metadata_to_json, parse_u64,
};

#[derive(Debug, Parser)]
#[command(
    name = "ellf",
    version,
    about = "Inject, inspect, lift and reassemble ELLF binaries"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add an .ellf section to an ELF file.
    #[command(group(ArgGroup::new("source").required(true)))]
    Inject {
        /// Metadata in JSON interchange form.
        #[arg(long, value_name = "M.json", group = "source")]
        meta: Option<PathBuf>,
        /// Build facts to convert into metadata.
        #[arg(long, value_name = "F.json", group = "source")]
        facts: Option<PathBuf>,
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print the metadata carried by an ELLF file.
    Extract {
        input: PathBuf,
        /// Print JSON instead of the raw section bytes.
        #[arg(long)]
        json: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Lift an ELLF file to symbolized assembly.
    Lift {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        mode: ModeArgs,
    },
    /// Assemble a source file into an ELLF file.
    Asm {
        input: PathBuf,
        #[command(flatten)]
        bases: BaseArgs,
        #[arg(short, long)]
        output: PathBuf,
        /// Write the executable without an .ellf section.
        #[arg(long)]
        plain: bool,
        /// Also write the build facts as JSON.
        #[arg(long, value_name = "F.json")]
        facts_out: Option<PathBuf>,
    },
    /// Assemble, lift, reassemble and compare.
    Roundtrip {
        input: PathBuf,
        #[command(flatten)]
        bases: BaseArgs,
        /// Downgrade lifting errors to warnings.
        #[arg(long)]
        lenient: bool,
    },
    /// Report metadata size against allocated bytes.
    Stats { input: PathBuf },
}

#[derive(Debug, Args)]
pub struct ModeArgs {
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    /// The default.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct BaseArgs {
    #[arg(long, value_name = "ADDR", value_parser = parse_addr, default_value = "0x401000")]
    pub base_text: u64,
    #[arg(long, value_name = "ADDR", value_parser = parse_addr, default_value = "0x600000")]
    pub base_data: u64,
}

impl BaseArgs {
    fn options(&self) -> AsmOptions {
        AsmOptions {
            base_text: Some(Address(self.base_text)),
            base_data: Some(Address(self.base_data)),
        }
    }
}

fn parse_addr(s: &str) -> Result<u64, String> {
    parse_u64(s).ok_or_else(|| format!("not an address: {s}"))
}

/// A failed command: 1 for domain errors, 2 for I/O.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn domain(message: impl fmt::Display) -> Self {
        Failure {
            code: 1,
            message: message.to_string(),
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        Failure {
            code: 2,
            message: format!("{}: {e}", path.display()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn read_bytes(p: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(p).map_err(|e| Failure::io(p, e))
}

fn read_text(p: &Path) -> Result<String, Failure> {
    fs::read_to_string(p).map_err(|e| Failure::io(p, e))
}

fn write_file(p: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(p, bytes).map_err(|e| Failure::io(p, e))
}

fn stdout_write(bytes: &[u8]) -> CmdResult {
    let mut out = io::stdout().lock();
    out.write_all(bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Failure::io(Path::new("<stdout>"), e))
}

fn load_elf(p: &Path) -> Result<ElfImage, Failure> {
    read_elf(&read_bytes(p)?).map_err(|e| Failure::domain(format!("{}: {e}", p.display())))
}

fn carried_metadata(img: &ElfImage) -> Result<(EllfMetadata, usize), Failure> {
    let raw = extract_section(img, ELLF_SECTION).map_err(Failure::domain)?;
    let meta = decode_metadata(raw).map_err(Failure::domain)?;
    Ok((meta, raw.len()))
}

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Inject {
            meta,
            facts,
            input,
            output,
        } => cmd_inject(meta.as_deref(), facts.as_deref(), &input, &output),
        Command::Extract {
            input,
            json,
            output,
        } => cmd_extract(&input, json, output.as_deref()),
        Command::Lift {
            input,
            output,
            mode,
        } => cmd_lift(&input, &output, mode.strict),
        Command::Asm {
            input,
            bases,
            output,
            plain,
            facts_out,
        } => cmd_asm(
            &input,
            &bases.options(),
            &output,
            plain,
            facts_out.as_deref(),
        ),
        Command::Roundtrip {
            input,
            bases,
            lenient,
        } => cmd_roundtrip(&input, &bases.options(), lenient),
        Command::Stats { input } => cmd_stats(&input),
    }
}

fn cmd_inject(
    meta_path: Option<&Path>,
    facts_path: Option<&Path>,
    input: &Path,
    output: &Path,
) -> CmdResult {
    let img = load_elf(input)?;
    let meta = match (meta_path, facts_path) {
        (Some(p), _) => metadata_from_json(&read_text(p)?)
            .map_err(|e| Failure::domain(format!("{}: {e}", p.display())))?,
        (None, Some(p)) => {
            let facts = facts_from_json(&read_text(p)?)
                .map_err(|e| Failure::domain(format!("{}: {e}", p.display())))?;
            let (meta, diags) = from_build_facts(&facts, &img).map_err(Failure::domain)?;
            for d in &diags {
                eprintln!("{d}");
            }
            meta
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let payload = encode_metadata(&meta).map_err(Failure::domain)?;
    let diags = validate_metadata(&meta, &img);
    for d in &diags {
        eprintln!("{d}");
    }
    let errors = diags
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .count();
    if errors > 0 {
        return Err(Failure::domain(format!(
            "metadata failed validation with {errors} error(s)"
        )));
    }
    let out = inject_section(&img, ELLF_SECTION, &payload).map_err(Failure::domain)?;
    write_file(output, &out)?;
    println!("{}: .ellf {} bytes", output.display(), payload.len());
    Ok(())
}

fn cmd_extract(input: &Path, json: bool, output: Option<&Path>) -> CmdResult {
    let img = load_elf(input)?;
    let raw = extract_section(&img, ELLF_SECTION).map_err(Failure::domain)?;
    let bytes = if json {
        let meta = decode_metadata(raw).map_err(Failure::domain)?;
        metadata_to_json(&meta).into_bytes()
    } else {
        raw.to_vec()
    };
    match output {
        Some(p) => write_file(p, &bytes),
        None => stdout_write(&bytes),
    }
}

fn cmd_lift(input: &Path, output: &Path, strict: bool) -> CmdResult {
    let img = load_elf(input)?;
    let (meta, _) = carried_metadata(&img)?;
    let mode = if strict { Mode::Strict } else { Mode::Lenient };
    let lp = lift(&img, &meta, mode).map_err(Failure::domain)?;
    write_file(output, emit_assembly(&lp).as_bytes())?;
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for d in &lp.diagnostics {
        eprintln!("{d}");
        let c = counts.entry(d.kind.name()).or_default();
        match d.severity {
            Severity::Warning => c.0 += 1,
            Severity::Error => c.1 += 1,
        }
    }
    println!(
        "lifted {} instructions in {} functions to {}",
        lp.decoded.len(),
        lp.cfgs.len(),
        output.display()
    );
    for (kind, (w, e)) in counts {
        println!("{kind}: {w} warning(s), {e} error(s)");
    }
    Ok(())
}

fn cmd_asm(
    input: &Path,
    opts: &AsmOptions,
    output: &Path,
    plain: bool,
    facts_out: Option<&Path>,
) -> CmdResult {
    let src = read_text(input)?;
    let a =
        assemble(&src, opts).map_err(|e| Failure::domain(format!("{}: {e}", input.display())))?;
    write_file(output, if plain { &a.plain_elf } else { &a.elf })?;
    if let Some(p) = facts_out {
        write_file(p, facts_to_json(&a.facts).as_bytes())?;
    }
    Ok(())
}

fn cmd_roundtrip(input: &Path, opts: &AsmOptions, lenient: bool) -> CmdResult {
    let src = read_text(input)?;
    let mode = if lenient { Mode::Lenient } else { Mode::Strict };
    let r = roundtrip_check(&src, opts, mode)
        .map_err(|e| Failure::domain(format!("{}: {e}", input.display())))?;
    let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
    println!("byte identity: {}", verdict(r.bytes_equal));
    println!("metadata fixpoint: {}", verdict(r.metadata_equal));
    println!("text fixpoint: {}", verdict(r.text_fixpoint));
    for n in &r.notes {
        eprintln!("note: {n}");
    }
    if r.passed() {
        Ok(())
    } else {
        Err(Failure::domain(format!(
            "{}: roundtrip mismatch",
            input.display()
        )))
    }
}

fn cmd_stats(input: &Path) -> CmdResult {
    let img = load_elf(input)?;
    let (meta, size) = carried_metadata(&img)?;
    let alloc = img.alloc_bytes();
    println!("alloc bytes: {alloc}");
    println!("ellf bytes: {size}");
    if alloc == 0 {
        println!("ratio: n/a");
    } else {
        println!("ratio: {:.4}", size as f64 / alloc as f64);
    }
    for id in TableId::ALL {
        let records = match id {
            TableId::Instructions => meta.instruction_regions.len(),
            TableId::Pointers => meta.pointers.len(),
            TableId::Text => meta.text.len(),
            TableId::Stack => meta.stack.len(),
            TableId::Data => meta.data.len(),
        };
        let bytes = encode_table(&meta, id).map_err(Failure::domain)?.len();
        println!("table {}: {records} records, {bytes} bytes", id.name());
    }
    Ok(())
}
