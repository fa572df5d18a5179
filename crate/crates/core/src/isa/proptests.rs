use proptest::prelude::*;

use super::*;
use crate::memory::{DdrTag, HbmTag};

fn vreg() -> impl Strategy<Value = VReg> {
    prop_oneof![
        (0usize..80).prop_map(VReg::whole),
        (0usize..80, 0usize..500, 1usize..64).prop_map(|(i, a, w)| VReg::slice(i, a, a + w)),
    ]
}

fn reg() -> impl Strategy<Value = Operand> {
    prop_oneof![vreg().prop_map(Operand::V), (0usize..80).prop_map(Operand::S)]
}

fn hbm() -> impl Strategy<Value = HbmTag> {
    prop_oneof![
        (0usize..50, prop::sample::select(vec!["wq", "wk", "wv", "wa", "wf1", "wf2"]))
            .prop_map(|(layer, n)| HbmTag::Weight { layer, name: n.to_string() }),
        Just(HbmTag::WteT),
        (0usize..50, 0usize..30).prop_map(|(layer, head)| HbmTag::KeyT { layer, head }),
        (0usize..50, 0usize..30).prop_map(|(layer, head)| HbmTag::ValueT { layer, head }),
        "[a-z][a-z0-9_]{0,6}"
            .prop_filter_map("built-in name", |s| { s.parse::<HbmTag>().is_err().then_some(HbmTag::Symbol(s)) }),
    ]
}

fn ddr() -> impl Strategy<Value = DdrTag> {
    prop_oneof![
        (0usize..1024).prop_map(|slot| DdrTag::WteRow { slot }),
        (0usize..1024).prop_map(|pos| DdrTag::WpeRow { pos }),
        (0usize..1024).prop_map(|slot| DdrTag::Tok { slot }),
        (0usize..50, prop::sample::select(crate::memory::LAYER_PARAMS.to_vec()))
            .prop_map(|(layer, n)| DdrTag::LayerParam { layer, name: n.to_string() }),
        Just(DdrTag::Final("lnf_g".into())),
        Just(DdrTag::Const("eps".into())),
        (0usize..1024, 0usize..50).prop_map(|(pos, layer)| DdrTag::Act { pos, layer }),
        "[a-z][a-z0-9_]{0,6}".prop_map(DdrTag::Scratch),
    ]
}

fn instr() -> impl Strategy<Value = Instr> {
    use ComputeOp::*;
    let elementwise = (prop::sample::select(vec![Add, Sub, Mul]), reg(), reg(), reg())
        .prop_map(|(op, d, a, b)| Instr::compute(op, d, a, Some(b)));
    let unary = (prop::sample::select(vec![RecipSqrt, Recip, Exp, Load, Store]), reg(), reg())
        .prop_map(|(op, d, a)| Instr::compute(op, d, a, None));
    let matrix = prop_oneof![
        (vreg(), hbm(), ddr(), vreg()).prop_map(|(d, w, b, x)| {
            Instr::compute(Conv1D, Operand::V(d), Operand::Hbm(w), Some(Operand::Ddr(b)))
                .with_flags(Flags { x: Some(x), ..Default::default() })
        }),
        (vreg(), hbm(), vreg(), 0usize..1024).prop_map(|(d, k, q, t)| {
            Instr::compute(MaskedMM, Operand::V(d), Operand::Hbm(k), Some(Operand::V(q)))
                .with_flags(Flags { tok: Some(t), ..Default::default() })
        }),
        (vreg(), hbm(), vreg()).prop_map(|(d, m, x)| Instr::compute(
            MM,
            Operand::V(d),
            Operand::Hbm(m),
            Some(Operand::V(x))
        )),
    ];
    let misc = prop_oneof![
        ((0usize..80), vreg()).prop_map(|(s, v)| Instr::compute(Accum, Operand::S(s), Operand::V(v), None)),
        (vreg(), vreg()).prop_map(|(d, v)| Instr::compute(Gelu, Operand::V(d), Operand::V(v), None)),
        ((0usize..80), vreg()).prop_map(|(s, v)| Instr::compute(ReduMax, Operand::S(s), Operand::V(v), None)),
        ((0usize..1024), vreg()).prop_map(|(t, v)| {
            Instr::compute(ReduMax, Operand::Ddr(DdrTag::Tok { slot: t }), Operand::V(v), None)
                .with_flags(Flags { argmax: true, ..Default::default() })
        }),
    ];
    let dma = prop_oneof![
        (hbm(), 1usize..1 << 20).prop_map(|(t, n)| Instr::dma(DmaOp::ReadWeights, Operand::Hbm(t), Operand::Mfu, n)),
        (ddr(), reg(), 1usize..5000).prop_map(|(t, r, n)| Instr::dma(DmaOp::ReadDdr, Operand::Ddr(t), r, n)),
        (vreg(), hbm(), 1usize..100).prop_map(|(v, t, n)| Instr::dma(
            DmaOp::WriteKv,
            Operand::V(v),
            Operand::Hbm(t),
            n
        )),
        (vreg(), ddr(), 1usize..5000).prop_map(|(v, t, n)| Instr::dma(
            DmaOp::WriteDdr,
            Operand::V(v),
            Operand::Ddr(t),
            n
        )),
    ];
    let router = prop_oneof![
        (vreg(), 1usize..5000).prop_map(|(v, n)| Instr::router(RouterOp::Send, Operand::V(v), Operand::Peer, n)),
        (vreg(), 1usize..5000).prop_map(|(v, n)| Instr::router(RouterOp::Recv, Operand::Peer, Operand::V(v), n)),
    ];
    prop_oneof![elementwise, unary, matrix, misc, dma, router]
}

fn program() -> impl Strategy<Value = Program> {
    (
        prop::collection::vec(instr(), 0..40),
        prop::collection::vec((0usize..40, prop::sample::select(vec!["qkv", "attention", "sync", "ffn"])), 0..5),
        (0usize..8, 1usize..9, 0usize..50, 0usize..64, 0usize..64),
    )
        .prop_map(|(instrs, mut secs, (core_id, n_cores, n_layer, n_in, n_out))| {
            secs.sort();
            secs.dedup_by_key(|s| s.0);
            let n = instrs.len();
            Program {
                meta: ProgramMeta { core_id, n_cores, n_layer, n_in, n_out },
                instrs,
                sections: secs.into_iter().filter(|s| s.0 <= n).map(|(i, s)| (i, s.to_string())).collect(),
            }
        })
}

proptest! {
    #[test]
    fn format_then_parse_is_identity(p in program()) {
        let text = format(&p);
        let q = parse_asm(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
        prop_assert_eq!(q, p);
    }
}
