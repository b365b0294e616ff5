use std::fs;
use std::path::PathBuf;

use ellf_core::asm::{assemble, AsmOptions};
use ellf_core::elf::read_elf;
use ellf_core::facts::from_build_facts;
use ellf_core::lift::Mode;
use ellf_core::roundtrip::roundtrip_check;

fn corpus() -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus");
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "s"))
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, fs::read_to_string(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn opts() -> AsmOptions {
    AsmOptions {
        base_text: Some(0x401000.into()),
        base_data: Some(0x600000.into()),
    }
}

#[test]
fn every_program_round_trips() {
    let mut failed = Vec::new();
    for (name, src) in corpus() {
        match roundtrip_check(&src, &opts(), Mode::Strict) {
            Ok(r) if r.passed() => {}
            Ok(r) => failed.push(format!(
                "{name}: {:?}\n{}\n----\n{}",
                r.notes, r.lifted, r.relifted
            )),
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    }
    assert!(failed.is_empty(), "{}", failed.join("\n"));
}

#[test]
fn build_facts_reproduce_assembler_metadata() {
    for (name, src) in corpus() {
        let a = assemble(&src, &opts()).unwrap_or_else(|e| panic!("{name}: {e}"));
        let img = read_elf(&a.plain_elf).unwrap();
        let (meta, diags) =
            from_build_facts(&a.facts, &img).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(meta, a.meta, "{name}");
        assert!(diags.is_empty(), "{name}: {diags:?}");
    }
}
