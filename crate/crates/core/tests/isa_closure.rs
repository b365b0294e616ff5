use ellf_core::isa::{
    decode_at, encode_one, normalize_sizes, Cond, Disp, MemRef, Mnemonic, OpSize, Operand, Reg,
};
use ellf_core::Address;
use proptest::prelude::*;

const AT: Address = Address(0x401000);

fn reg64() -> impl Strategy<Value = Reg> {
    (0u8..16).prop_map(Reg::q)
}

fn reg(wide: bool) -> impl Strategy<Value = Reg> {
    (0u8..16).prop_map(move |n| if wide { Reg::q(n) } else { Reg::d(n) })
}

fn mem() -> impl Strategy<Value = MemRef> {
    let index = prop_oneof![
        Just(None),
        (0u8..16)
            .prop_filter("rsp is not an index", |&n| n != 4)
            .prop_map(|n| Some(Reg::q(n)))
    ];
    let scale = prop_oneof![Just(1u8), Just(2), Just(4), Just(8)];
    let disp = prop_oneof![Just(0i32), -128i32..128, any::<i32>()];
    let based = (prop::option::of(reg64()), index, scale, disp, any::<bool>()).prop_map(
        |(base, index, scale, d, force)| MemRef {
            base,
            index,
            scale: if index.is_some() { scale } else { 1 },
            disp: Disp::Value(d),
            rip: false,
            size: OpSize::Qword,
            force_disp32: force && base.is_some() && i8::try_from(d).is_ok(),
        },
    );
    prop_oneof![4 => based, 1 => any::<i32>().prop_map(|d| MemRef::rip(d, OpSize::Qword))]
}

fn rm(wide: bool) -> impl Strategy<Value = Operand> {
    prop_oneof![
        reg(wide).prop_map(Operand::Reg),
        mem().prop_map(Operand::Mem)
    ]
}

fn imm(short: bool) -> impl Strategy<Value = Operand> {
    let narrow = any::<i8>().prop_map(|v| Operand::imm(i64::from(v), 8));
    let long = any::<i32>().prop_map(|v| Operand::imm(i64::from(v), 32));
    if short {
        prop_oneof![narrow, long].boxed()
    } else {
        long.boxed()
    }
}

fn alu() -> impl Strategy<Value = Mnemonic> {
    prop::sample::select(vec![
        Mnemonic::Add,
        Mnemonic::Or,
        Mnemonic::And,
        Mnemonic::Sub,
        Mnemonic::Xor,
        Mnemonic::Cmp,
    ])
}

fn target() -> impl Strategy<Value = Operand> {
    (-100_000i64..100_000).prop_map(|d| Operand::PcRel(AT.wrapping_add_signed(d)))
}

/// One instruction drawn from the supported form table.
fn form() -> impl Strategy<Value = (Mnemonic, Vec<Operand>)> {
    let w = any::<bool>();
    prop_oneof![
        (w, reg(true), rm(true))
            .prop_flat_map(|(wide, _, _)| (reg(wide), rm(wide)))
            .prop_map(|(r, m)| (Mnemonic::Mov, vec![Operand::Reg(r), m])),
        w.prop_flat_map(|wide| (mem(), reg(wide)))
            .prop_map(|(m, r)| (Mnemonic::Mov, vec![Operand::Mem(m), Operand::Reg(r)])),
        (w, any::<i32>())
            .prop_flat_map(|(wide, v)| (reg(wide), Just(v)))
            .prop_map(|(r, v)| (
                Mnemonic::Mov,
                vec![Operand::Reg(r), Operand::imm(i64::from(v), 32)]
            )),
        (mem(), imm(false)).prop_map(|(m, i)| (Mnemonic::Mov, vec![Operand::Mem(m), i])),
        (reg64(), any::<i64>())
            .prop_map(|(r, v)| (Mnemonic::Movabs, vec![Operand::Reg(r), Operand::imm(v, 64)])),
        w.prop_flat_map(|wide| (reg(wide), mem()))
            .prop_map(|(r, m)| (Mnemonic::Lea, vec![Operand::Reg(r), Operand::Mem(m)])),
        (reg64(), mem())
            .prop_map(|(r, m)| (Mnemonic::Movsxd, vec![Operand::Reg(r), Operand::Mem(m)])),
        prop_oneof![
            reg64().prop_map(Operand::Reg),
            mem().prop_map(Operand::Mem),
            imm(true)
        ]
        .prop_map(|o| (Mnemonic::Push, vec![o])),
        prop_oneof![reg64().prop_map(Operand::Reg), mem().prop_map(Operand::Mem)]
            .prop_map(|o| (Mnemonic::Pop, vec![o])),
        (alu(), w)
            .prop_flat_map(|(mn, wide)| (Just(mn), rm(wide), reg(wide)))
            .prop_map(|(mn, m, r)| (mn, vec![m, Operand::Reg(r)])),
        (alu(), w)
            .prop_flat_map(|(mn, wide)| (Just(mn), reg(wide), mem()))
            .prop_map(|(mn, r, m)| (mn, vec![Operand::Reg(r), Operand::Mem(m)])),
        (alu(), w)
            .prop_flat_map(|(mn, wide)| (Just(mn), rm(wide), imm(true)))
            .prop_map(|(mn, m, i)| (mn, vec![m, i])),
        w.prop_flat_map(|wide| (rm(wide), reg(wide)))
            .prop_map(|(m, r)| (Mnemonic::Test, vec![m, Operand::Reg(r)])),
        w.prop_flat_map(|wide| (rm(wide), imm(false)))
            .prop_map(|(m, i)| (Mnemonic::Test, vec![m, i])),
        (prop::sample::select(vec![Mnemonic::Inc, Mnemonic::Dec]), w)
            .prop_flat_map(|(mn, wide)| (Just(mn), rm(wide)))
            .prop_map(|(mn, m)| (mn, vec![m])),
        w.prop_flat_map(|wide| (reg(wide), rm(wide)))
            .prop_map(|(r, m)| (Mnemonic::Imul, vec![Operand::Reg(r), m])),
        w.prop_flat_map(|wide| (reg(wide), rm(wide), imm(true)))
            .prop_map(|(r, m, i)| (Mnemonic::Imul, vec![Operand::Reg(r), m, i])),
        target().prop_map(|t| (Mnemonic::Jmp, vec![t])),
        (-128i64..128).prop_map(|d| (
            Mnemonic::JmpShort,
            vec![Operand::PcRel(AT.wrapping_add_signed(d + 2))]
        )),
        (0u8..16, target()).prop_map(|(c, t)| (Mnemonic::Jcc(Cond::from_code(c)), vec![t])),
        target().prop_map(|t| (Mnemonic::Call, vec![t])),
        (
            prop::sample::select(vec![Mnemonic::Jmp, Mnemonic::Call]),
            rm(true)
        )
            .prop_map(|(mn, o)| (mn, vec![o])),
        prop::sample::select(vec![
            Mnemonic::Ret,
            Mnemonic::Leave,
            Mnemonic::Nop,
            Mnemonic::Hlt,
            Mnemonic::Syscall
        ])
        .prop_map(|mn| (mn, vec![])),
    ]
    .prop_map(|(mn, mut ops)| {
        normalize_sizes(mn, &mut ops);
        (mn, ops)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6000))]

    #[test]
    fn encoded_forms_decode_to_themselves((mn, ops) in form()) {
        let enc = encode_one(AT, mn, &ops).unwrap();
        let dec = decode_at(&enc.bytes, AT).unwrap();
        prop_assert_eq!(dec.mnemonic, mn);
        prop_assert_eq!(&dec.operands, &ops);
        prop_assert_eq!(usize::from(dec.length), enc.bytes.len());
        prop_assert_eq!(dec.fields, enc.fields);
    }
}
