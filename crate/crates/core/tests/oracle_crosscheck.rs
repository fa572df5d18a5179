//! The function units against the oracle's op-by-op binary16 emulation.
//! Same tree orders, so results must match bit for bit.

use dfx_core::engine::fu;
use dfx_core::memory::{TileGeom, TiledMatrix};
use dfx_core::model::{Fp16, TensorF16};
use dfx_core::oracle::emulate;
use proptest::prelude::*;

fn fp16s(v: &[f64]) -> Vec<Fp16> {
    v.iter().map(|&x| Fp16::from_f64(x)).collect()
}

fn wide(v: &[Fp16]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64()).collect()
}

proptest! {
    #[test]
    fn accum_order(xs in prop::collection::vec(-100.0f64..100.0, 1..300)) {
        let x = fp16s(&xs);
        let got = fu::accum(&x, 64).to_f64();
        prop_assert_eq!(got, emulate::chunked_sum(&wide(&x), 64));
    }

    #[test]
    fn conv1d_columns(rows in 1usize..150, cols in 1usize..40, seed in 0u64..1000) {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 4.0
        };
        let x = fp16s(&(0..rows).map(|_| next()).collect::<Vec<_>>());
        let a = TensorF16::from_f64(rows, cols, &(0..rows * cols).map(|_| next()).collect::<Vec<_>>()).unwrap();
        let b = fp16s(&(0..cols).map(|_| next()).collect::<Vec<_>>());
        let y = fu::conv1d(&x, &TiledMatrix::from_dense(&a, 0, TileGeom::default()), &b).unwrap();
        for j in 0..cols {
            let col: Vec<f64> = (0..rows).map(|i| a.get(i, j).to_f64()).collect();
            let dot = emulate::dot(&wide(&x), &col, 64);
            let want = dfx_core::oracle::f16ref::round(dot + b[j].to_f64());
            prop_assert_eq!(y[j].to_f64(), want, "column {}", j);
        }
    }
}
