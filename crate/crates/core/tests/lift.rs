use std::fs;
use std::path::PathBuf;

use ellf_core::asm::{assemble, AsmOptions, Assembled};
use ellf_core::elf::read_elf;
use ellf_core::isa::encode;
use ellf_core::lift::{emit_assembly, lift, lift_with_order, LiftError, Mode, Step};
use ellf_core::meta::{EllfMetadata, PointerRecord, TextKind, TextRecord};
use ellf_core::roundtrip::{roundtrip_check, RoundtripError};
use ellf_core::{Address, DiagnosticKind};

fn read(rel: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(rel);
    fs::read_to_string(p).unwrap()
}

fn opts() -> AsmOptions {
    AsmOptions {
        base_text: Some(Address(0x401000)),
        base_data: Some(Address(0x600000)),
    }
}

fn build(rel: &str) -> Assembled {
    assemble(&read(rel), &opts()).unwrap()
}

#[test]
fn two_way_switch_bytes_and_metadata() {
    let a = build("corpus/two_way_switch.s");
    let img = read_elf(&a.plain_elf).unwrap();
    let text = img.section(".text").unwrap();
    let expected: [u8; 0x24] = [
        0x55, 0x48, 0x89, 0xe5, 0x48, 0x8d, 0x0d, 0x19, 0, 0, 0, 0x48, 0x63, 0x14, 0xa9, 0x48,
        0x01, 0xca, 0xff, 0xe2, 0x48, 0x31, 0xc0, 0xe9, 0x07, 0, 0, 0, 0x48, 0xc7, 0xc0, 0x2a, 0,
        0, 0, 0xc3,
    ];
    assert_eq!(img.section_data(text), expected);
    let data = img.section(".data").unwrap();
    let mut cells = Vec::new();
    cells.extend_from_slice(&(0x4014i64 - 0x4024).to_le_bytes());
    cells.extend_from_slice(&(0x401ci64 - 0x4024).to_le_bytes());
    assert_eq!(img.section_data(data), cells);
    assert_eq!(a.meta.instruction_regions.len(), 1);
    assert_eq!(a.meta.instruction_regions[0].count, 10);
    assert_eq!(
        a.meta.pointers,
        vec![
            PointerRecord::Operand {
                instr_addr: Address(0x4004),
                operand_index: 1,
                target: Address(0x4024)
            },
            PointerRecord::Diff {
                addr: Address(0x4024),
                minuend: Address(0x4014),
                subtrahend: Address(0x4024)
            },
            PointerRecord::Diff {
                addr: Address(0x402c),
                minuend: Address(0x401c),
                subtrahend: Address(0x4024)
            },
        ]
    );
}

#[test]
fn indirect_jump_has_exactly_the_table_targets() {
    let a = build("corpus/two_way_switch.s");
    let img = read_elf(&a.plain_elf).unwrap();
    let lp = lift(&img, &a.meta, Mode::Strict).unwrap();
    let cfg = lp.cfg(Address(0x4000)).unwrap();
    let b = cfg.block_of(Address(0x4012)).unwrap();
    assert_eq!(b.successors, vec![Address(0x4014), Address(0x401c)]);
    assert_eq!(b.indirect_successors, b.successors);
    assert!(!b.exit);
    let text = emit_assembly(&lp);
    assert!(text.contains(".quad F_4000.Lb1 - D_4024"), "{text}");
    assert!(text.contains(".quad F_4000.Lb2 - D_4024"), "{text}");
    assert!(text.contains("lea rcx, [rip + D_4024]"), "{text}");
}

#[test]
fn three_entry_table_successors() {
    let a = build("corpus/switch3.s");
    let img = read_elf(&a.plain_elf).unwrap();
    let lp = lift(&img, &a.meta, Mode::Strict).unwrap();
    let f = a.symbols["classify"];
    let cfg = lp.cfg(f).unwrap();
    let jmp = lp
        .decoded
        .range(f..)
        .find(|(_, i)| i.mnemonic == ellf_core::isa::Mnemonic::Jmp && i.operands.len() == 1)
        .map(|(a, _)| *a)
        .unwrap();
    let succ = &cfg.block_of(jmp).unwrap().indirect_successors;
    let want: Vec<Address> = ["case_a", "case_b", "case_c"]
        .iter()
        .map(|n| a.symbols[*n])
        .collect();
    assert_eq!(succ, &want);
}

#[test]
fn step_order_does_not_change_output() {
    let orders = [
        [Step::Text, Step::Stack, Step::Data],
        [Step::Text, Step::Data, Step::Stack],
        [Step::Stack, Step::Text, Step::Data],
        [Step::Stack, Step::Data, Step::Text],
        [Step::Data, Step::Text, Step::Stack],
        [Step::Data, Step::Stack, Step::Text],
    ];
    for name in [
        "two_way_switch",
        "stack_slots",
        "frame_locals",
        "mixed_sections",
        "switch8",
    ] {
        let a = build(&format!("corpus/{name}.s"));
        let img = read_elf(&a.plain_elf).unwrap();
        let first =
            emit_assembly(&lift_with_order(&img, &a.meta, Mode::Strict, orders[0]).unwrap());
        for o in &orders[1..] {
            let t = emit_assembly(&lift_with_order(&img, &a.meta, Mode::Strict, *o).unwrap());
            assert_eq!(t, first, "{name} {o:?}");
        }
    }
}

#[test]
fn straddle_fails_strict_and_degrades_lenient() {
    let src = read("fixtures/straddle.s");
    let err = roundtrip_check(&src, &opts(), Mode::Strict).unwrap_err();
    let RoundtripError::Lift(LiftError::PointerStraddle { addr, next }) = &err else {
        panic!("{err}");
    };
    assert_eq!((*addr, *next), (Address(0x601000), Address(0x601004)));
    let msg = err.to_string();
    assert!(
        msg.contains("PointerStraddle") && msg.contains("suffix-merge"),
        "{msg}"
    );

    let a = assemble(&src, &opts()).unwrap();
    let img = read_elf(&a.plain_elf).unwrap();
    let lp = lift(&img, &a.meta, Mode::Lenient).unwrap();
    assert!(lp
        .diagnostics
        .iter()
        .any(|d| d.kind == DiagnosticKind::PointerStraddle));
    assert!(!emit_assembly(&lp).contains(".quad D_"));
}

#[test]
fn single_ret_control_passes() {
    let r = roundtrip_check(&read("fixtures/single_ret.s"), &opts(), Mode::Strict).unwrap();
    assert!(r.passed(), "{:?}", r.notes);
}

#[test]
fn regions_only_lift_falls_back_to_sections() {
    let a = build("corpus/loop_sum.s");
    let img = read_elf(&a.plain_elf).unwrap();
    let mut coarse = EllfMetadata::new();
    coarse.instruction_regions = a.meta.instruction_regions.clone();
    let lp = lift(&img, &coarse, Mode::Lenient).unwrap();
    let text = emit_assembly(&lp);
    assert!(text.contains("call .text+0x"), "{text}");
    assert!(lp
        .diagnostics
        .iter()
        .any(|d| d.kind == DiagnosticKind::Degraded));
    let again = assemble(&text, &opts()).unwrap();
    let (x, y) = (
        read_elf(&a.plain_elf).unwrap(),
        read_elf(&again.plain_elf).unwrap(),
    );
    assert_eq!(
        ellf_core::elf::load_image(&x).unwrap(),
        ellf_core::elf::load_image(&y).unwrap()
    );
}

#[test]
fn strict_rejects_dangling_text_and_bad_operands() {
    let a = build("corpus/two_way_switch.s");
    let img = read_elf(&a.plain_elf).unwrap();

    let mut m = a.meta.clone();
    m.text.push(TextRecord {
        addr: Address(0x4002),
        kind: TextKind::BasicBlock,
    });
    m.sort();
    assert!(matches!(
        lift(&img, &m, Mode::Strict),
        Err(LiftError::InvalidMetadata(_))
    ));
    let lp = lift(&img, &m, Mode::Lenient).unwrap();
    assert!(lp
        .diagnostics
        .iter()
        .any(|d| d.kind == DiagnosticKind::Alignment));

    let mut m = a.meta.clone();
    m.pointers[0] = PointerRecord::Operand {
        instr_addr: Address(0x4004),
        operand_index: 5,
        target: Address(0x4024),
    };
    assert_eq!(
        lift(&img, &m, Mode::Strict).unwrap_err(),
        LiftError::OperandIndexOutOfRange {
            addr: Address(0x4004),
            index: 5
        }
    );

    let mut m = a.meta.clone();
    m.pointers[0] = PointerRecord::Operand {
        instr_addr: Address(0x4004),
        operand_index: 0,
        target: Address(0x4024),
    };
    assert_eq!(
        lift(&img, &m, Mode::Strict).unwrap_err(),
        LiftError::NotAPointerPosition {
            addr: Address(0x4004),
            index: 0
        }
    );
}

#[test]
fn corpus_instructions_reencode_identically() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus");
    let mut seen = std::collections::BTreeSet::new();
    for e in fs::read_dir(dir).unwrap() {
        let src = fs::read_to_string(e.unwrap().path()).unwrap();
        let a = assemble(&src, &opts()).unwrap();
        let img = read_elf(&a.plain_elf).unwrap();
        let lp = lift(&img, &a.meta, Mode::Strict).unwrap();
        let image = ellf_core::elf::load_image(&img).unwrap();
        for i in lp.decoded.values() {
            let bytes = image.slice(i.address, usize::from(i.length)).unwrap();
            assert_eq!(encode(i).unwrap().bytes, bytes, "{i}");
            seen.insert(i.mnemonic.name());
        }
    }
    assert!(seen.len() >= 20, "{seen:?}");
}
