//! Gradual exchange of two parallel chains inside a `ShiftSystem`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, precondition, Result};
use crate::shifts::{Chain, Rotation, ShiftSystem};

/// Positions are 0-based along chain A; chain B position `p + b_shift` sits
/// beside chain A position `p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeWindow {
    pub i0: usize,
    pub i1: usize,
    pub n0: usize,
    #[serde(default)]
    pub b_shift: i64,
}

impl ExchangeWindow {
    pub fn new(i0: usize, i1: usize, n0: usize) -> Self {
        ExchangeWindow { i0, i1, n0, b_shift: 0 }
    }

    fn b_pos(&self, p: usize) -> Option<usize> {
        usize::try_from(p as i64 + self.b_shift).ok()
    }
}

/// Arrow weights of both chains over `[i0, i1)`.
pub fn window_weights(sys: &ShiftSystem, chain_a: usize, chain_b: usize, w: &ExchangeWindow) -> Result<(Vec<f64>, Vec<f64>)> {
    let (ca, cb) = (chain(sys, chain_a)?, chain(sys, chain_b)?);
    check_window(ca, cb, w)?;
    let a = ca.weights[w.i0..w.i1].to_vec();
    let start = w.b_pos(w.i0).unwrap();
    let b = cb.weights[start..start + (w.i1 - w.i0)].to_vec();
    Ok((a, b))
}

fn chain(sys: &ShiftSystem, id: usize) -> Result<&Chain> {
    sys.chains.get(id).map_or_else(|| domain(format!("no chain {}", id)), Ok)
}

fn check_window(ca: &Chain, cb: &Chain, w: &ExchangeWindow) -> Result<()> {
    if w.n0 < 2 {
        return domain(format!("N0 = {} but at least 2 is required", w.n0));
    }
    if w.i1 < w.i0 + w.n0 {
        return domain(format!("window [{}, {}] has fewer than N0 + 1 = {} positions", w.i0, w.i1, w.n0 + 1));
    }
    if w.i1 >= ca.len() {
        return domain(format!("window end {} outside chain A of length {}", w.i1, ca.len()));
    }
    match (w.b_pos(w.i0), w.b_pos(w.i1)) {
        (Some(_), Some(e)) if e < cb.len() => Ok(()),
        _ => domain(format!("window shifted by {} leaves chain B of length {}", w.b_shift, cb.len())),
    }
}

/// Rotate chain A into chain B over the window. A′ = A exactly; the tails
/// after position `i0 + N0` trade places and chain B picks up the sign.
pub fn gradual_exchange(sys: &ShiftSystem, chain_a: usize, chain_b: usize, w: &ExchangeWindow) -> Result<ShiftSystem> {
    let mut out = sys.clone();
    gradual_exchange_mut(&mut out, chain_a, chain_b, w)?;
    out.validate()?;
    Ok(out)
}

/// In-place form of [`gradual_exchange`]; skips the full partition check.
pub fn gradual_exchange_mut(sys: &mut ShiftSystem, chain_a: usize, chain_b: usize, w: &ExchangeWindow) -> Result<()> {
    if chain_a == chain_b {
        return domain("an exchange needs two distinct chains");
    }
    let (ca, cb) = (chain(sys, chain_a)?, chain(sys, chain_b)?);
    check_window(ca, cb, w)?;
    if ca.is_closed() || cb.is_closed() {
        return precondition("exchanged chains must be open");
    }
    let (a, b) = window_weights(sys, chain_a, chain_b, w)?;
    if a.iter().chain(&b).any(|&x| x < 0.0) {
        return precondition("exchange weights must be nonnegative");
    }
    let bp = |p: usize| w.b_pos(p).unwrap();
    for k in 1..=w.n0 {
        let p = w.i0 + k;
        if ca.diagonal[p] != cb.diagonal[bp(p)] {
            return precondition(format!(
                "diagonal values differ at rotated position {} ({} vs {})",
                p,
                ca.diagonal[p],
                cb.diagonal[bp(p)]
            ));
        }
    }

    let mut rotations = Vec::with_capacity(w.n0);
    for k in 1..=w.n0 {
        let p = w.i0 + k;
        let theta = k as f64 * PI / (2.0 * w.n0 as f64);
        rotations.push(Rotation::givens(ca.indices[p], cb.indices[bp(p)], theta));
    }

    // positions ≤ i0 + N0 keep their own columns; the rest come from the other chain
    let cut = w.i0 + w.n0;
    let bcut = bp(cut);
    let len = (w.i1 - w.i0) as f64;
    let ramp = |i: usize| (i - w.i0) as f64 / len;
    let blend = |t: f64, x: f64, y: f64| ((1.0 - t) * x * x + t * y * y).sqrt();

    let a_len = cut + 1 + cb.len() - bcut - 1;
    let new_a = Chain {
        indices: ca.indices[..=cut].iter().chain(&cb.indices[bcut + 1..]).copied().collect(),
        diagonal: ca.diagonal[..=cut].iter().chain(&cb.diagonal[bcut + 1..]).copied().collect(),
        weights: (0..a_len - 1)
            .map(|i| match i {
                i if i < w.i0 => ca.weights[i],
                i if i < w.i1 => blend(ramp(i), ca.weights[i], cb.weights[bp(i)]),
                i => cb.weights[bp(i)],
            })
            .collect(),
        closing: None,
    };
    let b_len = bcut + 1 + ca.len() - cut - 1;
    let new_b = Chain {
        indices: cb.indices[..=bcut].iter().chain(&ca.indices[cut + 1..]).copied().collect(),
        diagonal: cb.diagonal[..=bcut].iter().chain(&ca.diagonal[cut + 1..]).copied().collect(),
        weights: (0..b_len - 1)
            .map(|j| {
                let sign = if j == bcut { -1.0 } else { 1.0 };
                sign * match (j as i64 - w.b_shift).max(-1) {
                    i if i < w.i0 as i64 => cb.weights[j],
                    i if i < w.i1 as i64 => blend(ramp(i as usize), cb.weights[j], ca.weights[i as usize]),
                    i => ca.weights[i as usize],
                }
            })
            .collect(),
        closing: None,
    };
    sys.rotation_log.extend(rotations);
    sys.chains[chain_a] = new_a;
    sys.chains[chain_b] = new_b;
    sys.normalize_signs(chain_b);
    Ok(())
}

/// (bound on ||S′−S||, bound on the self-commutator increment).
pub fn exchange_bounds(weights_a: &[f64], weights_b: &[f64], n0: usize) -> Result<(f64, f64)> {
    if weights_a.len() != weights_b.len() {
        return domain("weight sequences must have equal length");
    }
    if n0 == 0 {
        return domain("N0 must be positive");
    }
    let step = PI / (2.0 * n0 as f64);
    let norm = weights_a
        .iter()
        .zip(weights_b)
        .map(|(&a, &b)| (a - b).abs() + step * a.abs().max(b.abs()))
        .fold(0.0, f64::max);
    let inc = weights_a.iter().zip(weights_b).map(|(&a, &b)| (b * b - a * a).abs()).fold(0.0, f64::max) / n0 as f64;
    Ok((norm, inc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{op_norm, unitary_defect, ComplexMatrix, C64};
    use approx::assert_relative_eq;

    fn two_chains(a: &[f64], b: &[f64], da: &[f64], db: &[f64]) -> ShiftSystem {
        ShiftSystem::from_blocks(&[(da.to_vec(), a.to_vec()), (db.to_vec(), b.to_vec())]).unwrap()
    }

    #[test]
    fn bounds_examples() {
        let (n, i) = exchange_bounds(&[1.0, 1.0], &[0.0, 0.0], 2).unwrap();
        assert_relative_eq!(n, 1.0 + PI / 4.0, max_relative = 1e-15);
        assert_eq!(i, 0.5);
        let (n, i) = exchange_bounds(&[0.3, 0.7], &[0.3, 0.7], 5).unwrap();
        assert_relative_eq!(n, PI / 10.0 * 0.7, max_relative = 1e-15);
        assert_eq!(i, 0.0);
        assert!(exchange_bounds(&[1.0], &[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn constant_weights_stay_constant() {
        let c = 0.8;
        let sys = two_chains(&[c; 9], &[c; 9], &[0.0; 10], &[0.0; 10]);
        let w = ExchangeWindow::new(2, 7, 4);
        let out = gradual_exchange(&sys, 0, 1, &w).unwrap();
        for ch in &out.chains {
            assert!(ch.weights.iter().all(|&x| (x - c).abs() < 1e-15));
        }
        let (_, s) = sys.materialize(64).unwrap();
        let (_, s2) = out.materialize(64).unwrap();
        assert!(op_norm(&s2.sub(&s).unwrap()).unwrap() <= PI / 8.0 * c + 1e-12);
    }

    #[test]
    fn ramp_from_one_to_zero() {
        let sys = two_chains(&[1.0; 7], &[0.0; 7], &[0.0; 8], &[0.0; 8]);
        let w = ExchangeWindow::new(1, 5, 2);
        let out = gradual_exchange(&sys, 0, 1, &w).unwrap();
        let wa = &out.chains[0].weights;
        assert_eq!(wa[0], 1.0);
        for j in 0..4 {
            assert_relative_eq!(wa[1 + j], (1.0 - j as f64 / 4.0).sqrt(), max_relative = 1e-15);
        }
        assert!(wa[5..].iter().all(|&x| x == 0.0));
        let wb = &out.chains[1].weights;
        for j in 0..4 {
            assert_relative_eq!(wb[1 + j], (j as f64 / 4.0).sqrt(), max_relative = 1e-15, epsilon = 1e-300);
        }
        assert!(wb[5..].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn orbit_of_the_window_start_reaches_the_b_tail() {
        let a = [1.0, 0.9, 1.1, 1.2, 0.8, 1.0, 0.7, 1.3, 0.5];
        let b = [0.6, 1.4, 0.9, 1.0, 1.1, 0.95, 1.2, 0.85, 1.0];
        let sys = two_chains(&a, &b, &[0.0; 10], &[0.0; 10]);
        let w = ExchangeWindow::new(1, 6, 3);
        let out = gradual_exchange(&sys, 0, 1, &w).unwrap();
        let (_, s) = out.materialize(64).unwrap();
        let mut x = vec![C64::new(0.0, 0.0); 20];
        x[1] = C64::new(1.0, 0.0);
        for _ in 0..=w.n0 {
            x = s.matvec(&x);
        }
        // 10 + (i0 + N0 + 1) is the B column at position 5
        for (i, v) in x.iter().enumerate() {
            if i != 15 {
                assert!(v.norm() < 1e-13, "component {} = {}", i, v);
            }
        }
        assert!(x[15].norm() > 0.1);
    }

    #[test]
    fn perturbation_supported_in_window() {
        let a = [1.0, 0.9, 1.1, 1.2, 0.8, 1.0, 0.7, 1.3];
        let b = [0.6, 1.4, 0.9, 1.0, 1.1, 0.95, 1.2, 0.85];
        let sys = two_chains(&a, &b, &[0.0; 9], &[0.0; 9]);
        let w = ExchangeWindow::new(2, 6, 3);
        let out = gradual_exchange(&sys, 0, 1, &w).unwrap();
        let (a0, s0) = sys.materialize(64).unwrap();
        let (a1, s1) = out.materialize(64).unwrap();
        assert!(a1.sub(&a0).unwrap().max_abs() < 1e-14);
        let d = s1.sub(&s0).unwrap();
        let inside = |i: usize| (2..=6).contains(&(i % 9));
        for i in 0..18 {
            for j in 0..18 {
                if !(inside(i) && inside(j)) {
                    assert!(d[(i, j)].norm() < 1e-14, "({}, {})", i, j);
                }
            }
        }
        assert!(unitary_defect(&out.frame_matrix()).unwrap() < 1e-12);
    }

    #[test]
    fn shifted_alignment() {
        let sys = two_chains(&[1.0; 6], &[0.5; 9], &[0.0; 7], &[0.0; 10]);
        let w = ExchangeWindow { i0: 1, i1: 4, n0: 2, b_shift: 3 };
        let out = gradual_exchange(&sys, 0, 1, &w).unwrap();
        assert_eq!(out.chains[0].len() + out.chains[1].len(), 17);
        assert_eq!(out.chains[0].len(), 3 + 10 - 6);
        let (_, s0) = sys.materialize(64).unwrap();
        let (_, s1) = out.materialize(64).unwrap();
        let (bound, _) = exchange_bounds(&[1.0; 3], &[0.5; 3], 2).unwrap();
        assert!(op_norm(&s1.sub(&s0).unwrap()).unwrap() <= bound + 1e-12);
    }

    #[test]
    fn rejects_bad_windows() {
        let sys = two_chains(&[1.0; 5], &[1.0; 5], &[0.0; 6], &[1.0; 6]);
        assert!(gradual_exchange(&sys, 0, 1, &ExchangeWindow::new(0, 3, 2)).is_err());
        let sys = two_chains(&[1.0; 5], &[1.0; 5], &[0.0; 6], &[0.0; 6]);
        assert!(gradual_exchange(&sys, 0, 1, &ExchangeWindow::new(0, 1, 2)).is_err());
        assert!(gradual_exchange(&sys, 0, 1, &ExchangeWindow::new(3, 6, 2)).is_err());
        assert!(gradual_exchange(&sys, 0, 1, &ExchangeWindow::new(0, 4, 1)).is_err());
        assert!(gradual_exchange(&sys, 0, 0, &ExchangeWindow::new(0, 4, 2)).is_err());
        let neg = two_chains(&[1.0, -1.0, 1.0], &[1.0; 3], &[0.0; 4], &[0.0; 4]);
        assert!(gradual_exchange(&neg, 0, 1, &ExchangeWindow::new(0, 3, 2)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        fn random_case(seed: u64) -> (ShiftSystem, ExchangeWindow) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n0 = rng.gen_range(2..5);
            let i0 = rng.gen_range(0..3);
            let i1 = i0 + n0 + rng.gen_range(0..4);
            let na = i1 + 1 + rng.gen_range(0..3);
            let nb = i1 + 1 + rng.gen_range(0..3);
            let a: Vec<f64> = (0..na - 1).map(|_| rng.gen::<f64>() * 2.0).collect();
            let b: Vec<f64> = (0..nb - 1).map(|_| rng.gen::<f64>() * 2.0).collect();
            let da: Vec<f64> = (0..na).map(|i| i as f64).collect();
            let db: Vec<f64> = (0..nb).map(|i| i as f64).collect();
            (two_chains(&a, &b, &da, &db), ExchangeWindow::new(i0, i1, n0))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn measured_change_within_bounds(seed in any::<u64>()) {
                let (sys, w) = random_case(seed);
                let (a, b) = window_weights(&sys, 0, 1, &w).unwrap();
                let (nb, inc) = exchange_bounds(&a, &b, w.n0).unwrap();
                let out = gradual_exchange(&sys, 0, 1, &w).unwrap();
                let (a0, s0) = sys.materialize(64).unwrap();
                let (a1, s1) = out.materialize(64).unwrap();
                prop_assert!(s1.max_imag_abs() == 0.0);
                prop_assert!(a1.sub(&a0).unwrap().max_abs() < 1e-12);
                let measured = op_norm(&s1.sub(&s0).unwrap()).unwrap();
                prop_assert!(measured <= nb + 1e-10, "measured {} bound {}", measured, nb);
                prop_assert!(out.self_commutator_norm() <= sys.self_commutator_norm() + inc + 1e-10);
                prop_assert!(unitary_defect(&out.frame_matrix()).unwrap() < 1e-10);
                prop_assert!(out.chains.iter().all(|c| c.weights.iter().all(|&x| x >= 0.0)));
            }

            #[test]
            fn disjoint_windows_compose(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a: Vec<f64> = (0..15).map(|_| rng.gen::<f64>()).collect();
                let b: Vec<f64> = (0..15).map(|_| rng.gen::<f64>()).collect();
                let c: Vec<f64> = (0..15).map(|_| rng.gen::<f64>()).collect();
                let d: Vec<f64> = (0..15).map(|_| rng.gen::<f64>()).collect();
                let sys = ShiftSystem::from_blocks(&[
                    (vec![0.0; 16], a), (vec![0.0; 16], b), (vec![0.0; 16], c), (vec![0.0; 16], d),
                ]).unwrap();
                let w1 = ExchangeWindow::new(1, 5, 3);
                let w2 = ExchangeWindow::new(8, 12, 2);
                let one = gradual_exchange(&sys, 0, 1, &w1).unwrap();
                let two = gradual_exchange(&sys, 2, 3, &w2).unwrap();
                let both = gradual_exchange(&one, 2, 3, &w2).unwrap();
                let s0 = sys.materialize(64).unwrap().1;
                let m = |x: &ShiftSystem| op_norm(&x.materialize(64).unwrap().1.sub(&s0).unwrap()).unwrap();
                let expect = m(&one).max(m(&two));
                prop_assert!((m(&both) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn identity_frame_dense_check() {
        let sys = two_chains(&[1.0; 4], &[1.0; 4], &[0.0; 5], &[0.0; 5]);
        let out = gradual_exchange(&sys, 0, 1, &ExchangeWindow::new(0, 3, 3)).unwrap();
        let q = out.frame_matrix();
        assert!(q.max_imag_abs() == 0.0);
        assert!(q.sub(&ComplexMatrix::identity(10)).unwrap().max_abs() > 0.5);
    }
}
