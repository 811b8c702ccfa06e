use osc_core::oscillation::OscillationTracker;
use osc_core::quantizer::{quant_error_with_scale, quantize_with_scale, threshold_distances};
use osc_core::stats::welch_t;
use osc_core::tensor::{matmul, Matrix, Rng};
use osc_core::toy::{ste_grad_delta_1w, ste_grad_delta_2w, ToyState, TwoWeightState};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..6, 1usize..6, 1usize..6, 1usize..6)
}

/// Two-condition oscillation count written directly from the definition:
/// an event at t needs q_t != q_{t-1} and a direction opposite to the most
/// recent earlier change.
fn brute_force_count(seq: &[i64]) -> u32 {
    let mut count = 0;
    for t in 1..seq.len() {
        if seq[t] == seq[t - 1] {
            continue;
        }
        let dir = (seq[t] - seq[t - 1]).signum();
        let prev = (1..t).rev().find(|&u| seq[u] != seq[u - 1]);
        if let Some(u) = prev {
            if (seq[u] - seq[u - 1]).signum() != dir {
                count += 1;
            }
        }
    }
    count
}

fn tracked_count(seq: &[i64]) -> u32 {
    let mut t = OscillationTracker::new();
    for &k in seq {
        t.observe(&[k]).unwrap();
    }
    t.counts().first().copied().unwrap_or(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matmul_is_associative((m, k, l, n) in dims(), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut r = |rows, cols| osc_core::tensor::rand_normal(&mut rng, rows, cols, 0.0, 1.0).unwrap();
        let (a, b, c) = (r(m, k), r(k, l), r(l, n));
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let scale = left.max_abs().max(1.0);
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn elementwise_ops_commute_with_transpose(a in matrix(3, 4), b in matrix(3, 4), k in -2.0f64..2.0) {
        prop_assert_eq!(a.add(&b).unwrap().transpose(), a.transpose().add(&b.transpose()).unwrap());
        prop_assert_eq!(a.sub(&b).unwrap().transpose(), a.transpose().sub(&b.transpose()).unwrap());
        prop_assert_eq!(a.hadamard(&b).unwrap().transpose(), a.transpose().hadamard(&b.transpose()).unwrap());
        prop_assert_eq!(a.scale(k).transpose(), a.transpose().scale(k));
    }

    #[test]
    fn matmul_transpose_identity((m, k, _, n) in dims(), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a = osc_core::tensor::rand_normal(&mut rng, m, k, 0.0, 1.0).unwrap();
        let b = osc_core::tensor::rand_normal(&mut rng, k, n, 0.0, 1.0).unwrap();
        let lhs = matmul(&a, &b).unwrap().transpose();
        let rhs = matmul(&b.transpose(), &a.transpose()).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn quantize_is_idempotent_at_fixed_scale(w in matrix(1, 16), s in 0.01f64..2.0) {
        let once = quantize_with_scale(&w, s).unwrap();
        let twice = quantize_with_scale(&once.values, s).unwrap();
        prop_assert_eq!(once.values, twice.values);
        prop_assert_eq!(once.bin_indices, twice.bin_indices);
    }

    #[test]
    fn quantize_is_odd(w in matrix(1, 16), s in 0.01f64..2.0) {
        // Half-to-even rounding is itself odd, so ties need no exclusion.
        let pos = quantize_with_scale(&w, s).unwrap();
        let neg = quantize_with_scale(&w.scale(-1.0), s).unwrap();
        prop_assert_eq!(neg.values, pos.values.scale(-1.0));
    }

    #[test]
    fn error_is_bounded_by_half_step(w in matrix(1, 32), s in 1e-3f64..5.0) {
        let e = quant_error_with_scale(&w, s).unwrap();
        for &x in e.data() {
            prop_assert!(x.abs() <= s / 2.0);
        }
    }

    #[test]
    fn error_sign_follows_nearest_threshold(k in -20i64..20, s in 0.05f64..2.0, u in 0.001f64..0.999) {
        // w strictly inside bin k, away from the level and the thresholds.
        prop_assume!((u - 0.5).abs() > 1e-6);
        let w = s * (k as f64 - 0.5 + u);
        let e = quant_error_with_scale(&Matrix::row_vector(&[w]).unwrap(), s).unwrap().data()[0];
        let (d_low, d_up) = threshold_distances(w, s);
        if d_up < d_low {
            prop_assert!(e > 0.0);
        } else {
            prop_assert!(e < 0.0);
        }
    }

    #[test]
    fn tracker_matches_brute_force(seq in prop::collection::vec(-4i64..4, 0..50)) {
        prop_assert_eq!(tracked_count(&seq), brute_force_count(&seq));
    }

    #[test]
    fn tracker_is_shift_invariant(seq in prop::collection::vec(-4i64..4, 1..50), c in -1000i64..1000) {
        let shifted: Vec<i64> = seq.iter().map(|k| k + c).collect();
        prop_assert_eq!(tracked_count(&seq), tracked_count(&shifted));
    }

    #[test]
    fn tracker_is_reversal_symmetric(seq in prop::collection::vec(-4i64..4, 1..50)) {
        let mut rev = seq.clone();
        rev.reverse();
        prop_assert_eq!(tracked_count(&seq), tracked_count(&rev));
        prop_assert_eq!(brute_force_count(&rev), tracked_count(&rev));
    }

    #[test]
    fn tracker_invariants_hold(seqs in prop::collection::vec(prop::collection::vec(-3i64..3, 4), 1..30)) {
        let mut t = OscillationTracker::new();
        let mut prev = vec![0u32; 4];
        for obs in &seqs {
            t.observe(obs).unwrap();
            for (c, p) in t.counts().iter().zip(&prev) {
                prop_assert!(c >= p);
                prop_assert!(*c < t.samples());
            }
            prev = t.counts().to_vec();
        }
    }

    #[test]
    fn welch_is_antisymmetric_with_valid_p(
        a in prop::collection::vec(0u32..20, 2..40),
        b in prop::collection::vec(0u32..20, 2..40),
    ) {
        let fa: Vec<f64> = a.iter().map(|&x| x as f64).collect();
        let fb: Vec<f64> = b.iter().map(|&x| x as f64).collect();
        if let (Ok(ab), Ok(ba)) = (welch_t(&fa, &fb), welch_t(&fb, &fa)) {
            prop_assert_eq!(ab.t, -ba.t);
            prop_assert_eq!(ab.df, ba.df);
            prop_assert!(ab.p > 0.0 && ab.p <= 1.0);
            prop_assert!((ab.p - ba.p).abs() < 1e-15);
        }
    }

    #[test]
    fn toy_decomposition_identity(
        w in -3.0f64..3.0, x in -2.0f64..2.0, y in -2.0f64..2.0, s in 0.05f64..2.0,
    ) {
        let st = ToyState::new(w, x, y, s, 0.1).unwrap();
        // STE backprop through L(q(w)) = ½(q x − y)²: (q x − y)·x.
        let ste = (st.q() * x - y) * x;
        prop_assert!((ste - (st.grad_fp() + ste_grad_delta_1w(&st))).abs() <= 1e-12);
    }

    #[test]
    fn two_weight_parts_sum(
        w1 in -3.0f64..3.0, w2 in -3.0f64..3.0, x in -2.0f64..2.0, y in -2.0f64..2.0, s in 0.05f64..2.0,
    ) {
        let st = TwoWeightState::new(w1, w2, x, y, s, 0.1).unwrap();
        let g = ste_grad_delta_2w(&st);
        prop_assert_eq!(g.g1.oscillator + g.g1.dampener, g.g1.total());
        prop_assert_eq!(g.g2.oscillator + g.g2.dampener, g.g2.total());
        // STE backprop of L(q) minus backprop of L(w), for L = ½(w2·w1·x − y)².
        let (q1, q2) = (st.q1(), st.q2());
        let rq = q2 * q1 * x - y;
        let (f1, f2) = st.grad_fp();
        prop_assert!((g.g1.total() - (rq * q2 * x - f1)).abs() <= 1e-12);
        prop_assert!((g.g2.total() - (rq * q1 * x - f2)).abs() <= 1e-12);
    }

    #[test]
    fn two_weight_on_levels_is_zero(k1 in -8i64..8, k2 in -8i64..8, x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let s = 0.25;
        let st = TwoWeightState::new(k1 as f64 * s, k2 as f64 * s, x, y, s, 0.1).unwrap();
        let g = ste_grad_delta_2w(&st);
        prop_assert_eq!((g.g1.total(), g.g2.total()), (0.0, 0.0));
    }
}

#[test]
fn equal_seeds_give_equal_streams() {
    let mut a = Rng::new(2024);
    let mut b = Rng::new(2024);
    for _ in 0..10_000 {
        assert_eq!(a.next_u64(), b.next_u64());
    }
    let mut c = Rng::stream(2024, 1);
    let mut d = Rng::stream(2024, 2);
    let same = (0..100).filter(|_| c.next_u64() == d.next_u64()).count();
    assert_eq!(same, 0);
}

#[test]
fn brute_force_reference_examples() {
    assert_eq!(brute_force_count(&[0, 1, 0, 1]), 2);
    assert_eq!(brute_force_count(&[0, 1, 2, 3]), 0);
    assert_eq!(brute_force_count(&[4, 4, 4]), 0);
    assert_eq!(brute_force_count(&[0, 2, 2, 1, 1, 3]), 2);
}
