//! Weighted shifts and the chain/frame representation (`ShiftSystem`) that
//! every construction produces.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::ComplexFloat;
use serde::{Deserialize, Serialize};

use crate::error::{domain, NearbyError, Result};
use crate::linalg::{ComplexMatrix, LinearOp, C64, ONE, ZERO};

/// `S e_k = c_k e_{k+1}`; bilateral shifts also map `e_{n−1}` to `c_n e_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedShift {
    pub weights: Vec<C64>,
    pub closing: Option<C64>,
}

impl WeightedShift {
    pub fn unilateral(weights: &[f64]) -> Self {
        WeightedShift { weights: weights.iter().map(|&w| C64::new(w, 0.0)).collect(), closing: None }
    }

    /// `weights` lists all n arrows, the last one closing the cycle.
    pub fn bilateral(weights: &[f64]) -> Result<Self> {
        Self::bilateral_complex(&weights.iter().map(|&w| C64::new(w, 0.0)).collect::<Vec<_>>())
    }

    pub fn bilateral_complex(weights: &[C64]) -> Result<Self> {
        match weights.split_last() {
            Some((&last, rest)) => Ok(WeightedShift { weights: rest.to_vec(), closing: Some(last) }),
            None => domain("a bilateral shift needs at least one weight"),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len() + 1
    }

    pub fn is_bilateral(&self) -> bool {
        self.closing.is_some()
    }

    /// All n (bilateral) or n−1 (unilateral) arrow weights in order.
    pub fn arrows(&self) -> Vec<C64> {
        let mut a = self.weights.clone();
        a.extend(self.closing);
        a
    }

    pub fn is_nonnegative(&self) -> bool {
        self.arrows().iter().all(|c| c.im == 0.0 && c.re >= 0.0)
    }

    pub fn is_real(&self) -> bool {
        self.arrows().iter().all(|c| c.im == 0.0)
    }

    pub fn op_norm(&self) -> f64 {
        self.arrows().iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn self_commutator_norm(&self) -> f64 {
        let sq: Vec<f64> = self.arrows().iter().map(|c| c.norm_sqr()).collect();
        if self.is_bilateral() {
            let n = sq.len();
            (0..n).map(|k| (sq[(k + 1) % n] - sq[k]).abs()).fold(0.0, f64::max)
        } else {
            unilateral_defect(&sq)
        }
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        let n = self.dim();
        let mut m = ComplexMatrix::zeros(n, n);
        for (k, &c) in self.weights.iter().enumerate() {
            m[(k + 1, k)] = c;
        }
        if let Some(c) = self.closing {
            m[(0, n - 1)] += c;
        }
        m
    }

    /// Single-chain system; non-real open weights move into the phase diagonal.
    pub fn to_system(&self) -> ShiftSystem {
        let n = self.dim();
        if self.weights.iter().any(|c| c.im != 0.0) {
            let (norm, ph) = phase_normalize(self);
            let mut sys = norm.to_system();
            sys.phases = Some(ph);
            return sys;
        }
        let real: Vec<f64> = self.weights.iter().map(|c| c.re).collect();
        let chain = Chain { indices: (0..n).collect(), diagonal: vec![0.0; n], weights: real, closing: self.closing };
        ShiftSystem { ambient_dim: n, rotation_log: Vec::new(), chains: vec![chain], phases: None }
    }
}

/// max(|c_1|², |c_{n−1}|², max_k ||c_{k+1}|² − |c_k|²|) for squared magnitudes `sq`.
pub fn unilateral_defect(sq: &[f64]) -> f64 {
    match (sq.first(), sq.last()) {
        (Some(&f), Some(&l)) => sq.windows(2).map(|w| (w[1] - w[0]).abs()).fold(f.max(l), f64::max),
        _ => 0.0,
    }
}

/// Rewrite `ws` as `D·ws(|c_k|)·D*` with a diagonal unitary `D = diag(phases)`.
/// A bilateral closing weight keeps the residual phase.
pub fn phase_normalize(ws: &WeightedShift) -> (WeightedShift, Vec<C64>) {
    let n = ws.dim();
    let mut phases = Vec::with_capacity(n);
    phases.push(ONE);
    for (k, c) in ws.weights.iter().enumerate() {
        let u = if c.norm() == 0.0 { ONE } else { c / c.norm() };
        let next = phases[k] * u;
        phases.push(next / next.norm());
    }
    let weights = ws.weights.iter().map(|c| C64::new(c.norm(), 0.0)).collect();
    let closing = ws.closing.map(|c| c * phases[n - 1] * phases[0].conj());
    (WeightedShift { weights, closing }, phases)
}

/// Planar rotation of frame columns `p`, `q` by `angle`; `p == q` with
/// angle π negates column `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub p: usize,
    pub q: usize,
    pub angle: f64,
}

impl Rotation {
    pub fn givens(p: usize, q: usize, angle: f64) -> Self {
        Rotation { p, q, angle }
    }

    pub fn flip(p: usize) -> Self {
        Rotation { p, q: p, angle: PI }
    }

    fn apply(&self, x: &mut [C64]) {
        if self.p == self.q {
            x[self.p] = -x[self.p];
            return;
        }
        let (s, c) = self.angle.sin_cos();
        let (a, b) = (x[self.p], x[self.q]);
        x[self.p] = a * c - b * s;
        x[self.q] = a * s + b * c;
    }

    fn apply_transpose(&self, x: &mut [C64]) {
        if self.p == self.q {
            x[self.p] = -x[self.p];
            return;
        }
        let (s, c) = self.angle.sin_cos();
        let (a, b) = (x[self.p], x[self.q]);
        x[self.p] = a * c + b * s;
        x[self.q] = -a * s + b * c;
    }
}

/// One orbit: frame columns visited in order, the diagonal value attached to
/// each, and the arrow weights between consecutive columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub indices: Vec<usize>,
    pub diagonal: Vec<f64>,
    pub weights: Vec<f64>,
    /// Arrow from the last column back to the first.
    pub closing: Option<C64>,
}

impl Chain {
    pub fn open(indices: Vec<usize>, diagonal: Vec<f64>, weights: Vec<f64>) -> Self {
        Chain { indices, diagonal, weights, closing: None }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.closing.is_some()
    }

    pub fn as_shift(&self) -> WeightedShift {
        WeightedShift { weights: self.weights.iter().map(|&w| C64::new(w, 0.0)).collect(), closing: self.closing }
    }

    pub fn max_weight(&self) -> f64 {
        let open = self.weights.iter().map(|w| w.abs()).fold(0.0, f64::max);
        open.max(self.closing.map_or(0.0, |c| c.norm()))
    }
}

/// Ambient space `C^n`, a real orthogonal frame `Q` given as a product of
/// rotations, and chains describing `A = Q·diag·Qᵀ` and `S = Q·S₀·Qᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftSystem {
    pub ambient_dim: usize,
    pub rotation_log: Vec<Rotation>,
    pub chains: Vec<Chain>,
    /// Optional outer diagonal unitary `D` (complex Berg inputs): `S = D·Q·S₀·Qᵀ·D*`.
    pub phases: Option<Vec<C64>>,
}

impl ShiftSystem {
    /// Direct sum of (diagonal, weights) blocks on consecutive coordinates.
    pub fn from_blocks(blocks: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let mut chains = Vec::with_capacity(blocks.len());
        let mut next = 0;
        for (d, w) in blocks {
            let n = d.len();
            chains.push(Chain::open((next..next + n).collect(), d.clone(), w.clone()));
            next += n;
        }
        let sys = ShiftSystem { ambient_dim: next, rotation_log: Vec::new(), chains, phases: None };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.ambient_dim];
        for (id, ch) in self.chains.iter().enumerate() {
            if ch.indices.is_empty() {
                return domain(format!("chain {} is empty", id));
            }
            if ch.diagonal.len() != ch.indices.len() || ch.weights.len() + 1 != ch.indices.len() {
                return domain(format!(
                    "chain {}: {} indices, {} diagonal values, {} weights",
                    id,
                    ch.indices.len(),
                    ch.diagonal.len(),
                    ch.weights.len()
                ));
            }
            for &i in &ch.indices {
                if i >= self.ambient_dim {
                    return domain(format!("chain {} uses index {} outside dimension {}", id, i, self.ambient_dim));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return domain(format!("index {} appears in more than one chain position", i));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return domain(format!("index {} belongs to no chain", i));
        }
        for r in &self.rotation_log {
            if r.p >= self.ambient_dim || r.q >= self.ambient_dim {
                return domain(format!("rotation on ({}, {}) outside dimension {}", r.p, r.q, self.ambient_dim));
            }
            if r.p == r.q && ((r.angle / PI).round() * PI - r.angle).abs() > 1e-12 {
                return domain("single-index rotation entries must be sign flips");
            }
        }
        if let Some(ph) = &self.phases {
            if ph.len() != self.ambient_dim {
                return domain("phase diagonal has the wrong length");
            }
        }
        Ok(())
    }

    pub fn is_real(&self) -> bool {
        self.chains.iter().all(|c| c.closing.is_none_or(|z| z.im == 0.0))
            && self.phases.as_ref().is_none_or(|p| p.iter().all(|z| z.im == 0.0))
    }

    /// (chain id, position) for every frame column.
    pub fn locate(&self) -> Vec<(usize, usize)> {
        let mut loc = vec![(usize::MAX, usize::MAX); self.ambient_dim];
        for (id, ch) in self.chains.iter().enumerate() {
            for (pos, &i) in ch.indices.iter().enumerate() {
                loc[i] = (id, pos);
            }
        }
        loc
    }

    pub fn max_weight(&self) -> f64 {
        self.chains.iter().map(|c| c.max_weight()).fold(0.0, f64::max)
    }

    /// Largest self-commutator norm over the chains (each chain is an orthogonal summand).
    pub fn self_commutator_norm(&self) -> f64 {
        self.chains.iter().map(|c| c.as_shift().self_commutator_norm()).fold(0.0, f64::max)
    }

    /// `x ← Q x` (`transpose = false`) or `x ← Qᵀ x`.
    pub fn frame_apply(&self, x: &mut [C64], transpose: bool) {
        if transpose {
            self.rotation_log.iter().for_each(|r| r.apply_transpose(x));
        } else {
            self.rotation_log.iter().rev().for_each(|r| r.apply(x));
        }
    }

    pub fn frame_matrix(&self) -> ComplexMatrix {
        FrameOp(self).to_dense()
    }

    pub fn a_op(&self) -> SystemOp<'_> {
        SystemOp { sys: self, kind: SystemOpKind::Diagonal }
    }

    pub fn s_op(&self) -> SystemOp<'_> {
        SystemOp { sys: self, kind: SystemOpKind::Shift }
    }

    /// Dense (A, S); `cap` bounds the dimension.
    pub fn materialize(&self, cap: usize) -> Result<(ComplexMatrix, ComplexMatrix)> {
        self.validate()?;
        if self.ambient_dim > cap {
            return domain(format!("dimension {} exceeds the materialization cap {}", self.ambient_dim, cap));
        }
        Ok((self.a_op().to_dense(), self.s_op().to_dense()))
    }

    /// Multiply the stored vectors so all open weights become nonnegative;
    /// each negated column is logged as a sign flip. A closed chain may keep
    /// one negative (or complex) closing weight.
    pub fn normalize_signs(&mut self, chain: usize) {
        let ch = &mut self.chains[chain];
        // f_{k+1} = f_k·sign(w_k); column k is negated when f_k = −1
        let mut f = 1.0;
        let mut flips = Vec::new();
        for k in 0..ch.weights.len() {
            if ch.weights[k] < 0.0 {
                f = -f;
            }
            ch.weights[k] = ch.weights[k].abs();
            if f < 0.0 {
                flips.push(ch.indices[k + 1]);
            }
        }
        if let Some(c) = ch.closing.as_mut() {
            *c *= f;
        }
        self.rotation_log.extend(flips.into_iter().map(Rotation::flip));
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let io = |e: csv::Error| NearbyError::Domain(format!("csv: {}", e));
        wtr.write_record(["chain_id", "position", "diagonal", "weight"]).map_err(io)?;
        for (id, ch) in self.chains.iter().enumerate() {
            for pos in 0..ch.len() {
                let w = if pos < ch.weights.len() {
                    ch.weights[pos]
                } else {
                    ch.closing.map_or(0.0, |c| if c.im == 0.0 { c.re } else { c.abs() })
                };
                wtr.write_record(&[
                    id.to_string(),
                    pos.to_string(),
                    format!("{:.17e}", ch.diagonal[pos]),
                    format!("{:.17e}", w),
                ])
                .map_err(io)?;
            }
        }
        wtr.flush().map_err(|e| NearbyError::Domain(format!("csv: {}", e)))?;
        Ok(())
    }
}

struct FrameOp<'a>(&'a ShiftSystem);

impl LinearOp for FrameOp<'_> {
    fn nrows(&self) -> usize {
        self.0.ambient_dim
    }
    fn ncols(&self) -> usize {
        self.0.ambient_dim
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        y.copy_from_slice(x);
        self.0.frame_apply(y, false);
    }
    fn apply_adjoint(&self, x: &[C64], y: &mut [C64]) {
        y.copy_from_slice(x);
        self.0.frame_apply(y, true);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemOpKind {
    Diagonal,
    Shift,
}

/// Matrix-free view of the A or S part of a system.
pub struct SystemOp<'a> {
    sys: &'a ShiftSystem,
    kind: SystemOpKind,
}

impl SystemOp<'_> {
    fn core(&self, x: &[C64], y: &mut [C64], adjoint: bool) {
        y.iter_mut().for_each(|v| *v = ZERO);
        for ch in &self.sys.chains {
            match self.kind {
                SystemOpKind::Diagonal => {
                    for (&i, &d) in ch.indices.iter().zip(&ch.diagonal) {
                        y[i] = x[i] * d;
                    }
                }
                SystemOpKind::Shift => {
                    for (k, &w) in ch.weights.iter().enumerate() {
                        let (from, to) = (ch.indices[k], ch.indices[k + 1]);
                        if adjoint {
                            y[from] += x[to] * w;
                        } else {
                            y[to] += x[from] * w;
                        }
                    }
                    if let Some(c) = ch.closing {
                        let (from, to) = (*ch.indices.last().unwrap(), ch.indices[0]);
                        if adjoint {
                            y[from] += x[to] * c.conj();
                        } else {
                            y[to] += x[from] * c;
                        }
                    }
                }
            }
        }
    }

    fn full(&self, x: &[C64], y: &mut [C64], adjoint: bool) {
        let mut t = x.to_vec();
        if let Some(ph) = &self.sys.phases {
            t.iter_mut().zip(ph).for_each(|(v, p)| *v *= p.conj());
        }
        self.sys.frame_apply(&mut t, true);
        self.core(&t, y, adjoint);
        self.sys.frame_apply(y, false);
        if let Some(ph) = &self.sys.phases {
            y.iter_mut().zip(ph).for_each(|(v, p)| *v *= p);
        }
    }
}

impl LinearOp for SystemOp<'_> {
    fn nrows(&self) -> usize {
        self.sys.ambient_dim
    }
    fn ncols(&self) -> usize {
        self.sys.ambient_dim
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.full(x, y, false)
    }
    fn apply_adjoint(&self, x: &[C64], y: &mut [C64]) {
        self.full(x, y, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{normality_defect, op_norm, op_norm_op, unitary_defect, Difference};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn self_commutator_examples() {
        let b = WeightedShift::bilateral(&[0.7; 5]).unwrap();
        assert_eq!(b.self_commutator_norm(), 0.0);
        let s1 = WeightedShift::unilateral(&[2f64.sqrt(), 2f64.sqrt()]);
        assert_relative_eq!(s1.self_commutator_norm(), 2.0, max_relative = 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for bil in [false, true] {
            let w: Vec<f64> = (0..7).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let ws = if bil { WeightedShift::bilateral(&w).unwrap() } else { WeightedShift::unilateral(&w) };
            let m = normality_defect(&ws.to_matrix()).unwrap();
            assert_relative_eq!(ws.self_commutator_norm(), m, max_relative = 1e-10);
        }
    }

    #[test]
    fn phase_normalize_real_signs() {
        let ws = WeightedShift::unilateral(&[-1.0, 2.0, -3.0]);
        let (norm, ph) = phase_normalize(&ws);
        assert_eq!(norm.arrows(), vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(3.0, 0.0)]);
        assert!(ph.iter().all(|p| p.im == 0.0 && p.re.abs() == 1.0));
        let d = ComplexMatrix::diag(&ph);
        let back = d.matmul(&norm.to_matrix()).unwrap().matmul(&d.adjoint()).unwrap();
        assert!(back.sub(&ws.to_matrix()).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn phase_normalize_identity_on_nonnegative() {
        let ws = WeightedShift::unilateral(&[1.0, 0.0, 3.0]);
        let (norm, ph) = phase_normalize(&ws);
        assert_eq!(norm, ws);
        assert!(ph.iter().all(|&p| p == ONE));
    }

    #[test]
    fn phase_normalize_bilateral_residual_phase() {
        let i = C64::new(0.0, 1.0);
        let ws = WeightedShift::bilateral_complex(&[i, i, i, i]).unwrap();
        let (norm, ph) = phase_normalize(&ws);
        assert!(norm.weights.iter().all(|&w| w == ONE));
        let c = norm.closing.unwrap();
        assert_relative_eq!(c.norm(), 1.0, max_relative = 1e-15);
        assert!((c - i * i * i * i).norm() < 1e-15);
        let d = ComplexMatrix::diag(&ph);
        let back = d.matmul(&norm.to_matrix()).unwrap().matmul(&d.adjoint()).unwrap();
        assert!(back.sub(&ws.to_matrix()).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn materialize_single_chain() {
        let sys = ShiftSystem::from_blocks(&[(vec![1.0, 2.0, 3.0], vec![0.5, 0.25])]).unwrap();
        let (a, s) = sys.materialize(100).unwrap();
        assert_eq!(a, ComplexMatrix::diag_real(&[1.0, 2.0, 3.0]));
        assert_eq!(s, WeightedShift::unilateral(&[0.5, 0.25]).to_matrix());
        assert!(sys.materialize(2).is_err());
    }

    #[test]
    fn validate_rejects_bad_partitions() {
        let mut sys = ShiftSystem::from_blocks(&[(vec![0.0, 0.0], vec![1.0])]).unwrap();
        sys.chains[0].indices[1] = 0;
        assert!(sys.validate().is_err());
        let short = ShiftSystem { ambient_dim: 3, rotation_log: vec![], chains: vec![Chain::open(vec![0, 1], vec![0.0; 2], vec![1.0])], phases: None };
        assert!(short.validate().is_err());
    }

    #[test]
    fn rotations_forward_then_backward() {
        let mut sys = ShiftSystem::from_blocks(&[(vec![0.0; 5], vec![1.0; 4])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let log: Vec<Rotation> =
            (0..12).map(|_| Rotation::givens(rng.gen_range(0..5), rng.gen_range(0..5), rng.gen::<f64>() * 6.0)).filter(|r| r.p != r.q).collect();
        let mut back = log.clone();
        back.reverse();
        sys.rotation_log = log.clone();
        sys.rotation_log.extend(back.iter().map(|r| Rotation { angle: -r.angle, ..*r }));
        let q = sys.frame_matrix();
        assert!(q.sub(&ComplexMatrix::identity(5)).unwrap().max_abs() < 1e-12);
        sys.rotation_log = log;
        assert!(unitary_defect(&sys.frame_matrix()).unwrap() < 1e-12);
    }

    #[test]
    fn sign_normalization_preserves_the_operator() {
        let mut sys = ShiftSystem::from_blocks(&[(vec![0.0; 5], vec![1.0, -2.0, -0.5, 3.0])]).unwrap();
        let (_, before) = sys.materialize(10).unwrap();
        sys.normalize_signs(0);
        assert!(sys.chains[0].weights.iter().all(|&w| w >= 0.0));
        let (_, after) = sys.materialize(10).unwrap();
        assert!(after.sub(&before).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn csv_export_has_expected_columns() {
        let sys = ShiftSystem::from_blocks(&[(vec![0.0, 1.0], vec![0.5])]).unwrap();
        let mut buf = Vec::new();
        sys.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("chain_id,position,diagonal,weight\n"));
        assert_eq!(text.lines().count(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn phase_normalize_is_unitary_equivalence(seed in any::<u64>(), n in 1usize..9, bil in any::<bool>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let w: Vec<C64> = (0..n).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
                let ws = if bil { WeightedShift::bilateral_complex(&w).unwrap() } else { WeightedShift { weights: w, closing: None } };
                let (norm, ph) = phase_normalize(&ws);
                prop_assert!(norm.weights.iter().all(|c| c.im == 0.0 && c.re >= 0.0));
                let d = ComplexMatrix::diag(&ph);
                let back = d.matmul(&norm.to_matrix()).unwrap().matmul(&d.adjoint()).unwrap();
                prop_assert!(back.sub(&ws.to_matrix()).unwrap().max_abs() < 1e-12);
                let (a, b) = (op_norm(&ws.to_matrix()).unwrap(), op_norm(&norm.to_matrix()).unwrap());
                prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
                let sys = ws.to_system();
                let diff = Difference { a: &sys.s_op(), b: &ws.to_matrix() };
                prop_assert!(op_norm_op(&diff).unwrap() < 1e-12);
            }

            #[test]
            fn system_norm_is_max_weight(seed in any::<u64>(), blocks in 1usize..4) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let spec: Vec<(Vec<f64>, Vec<f64>)> = (0..blocks).map(|_| {
                    let n = rng.gen_range(1..6);
                    ((0..n).map(|_| rng.gen::<f64>()).collect(), (0..n - 1).map(|_| rng.gen::<f64>() * 3.0).collect())
                }).collect();
                let mut sys = ShiftSystem::from_blocks(&spec).unwrap();
                let dim = sys.ambient_dim;
                for _ in 0..4 {
                    let (p, q) = (rng.gen_range(0..dim), rng.gen_range(0..dim));
                    if p != q { sys.rotation_log.push(Rotation::givens(p, q, rng.gen::<f64>())); }
                }
                let (a, s) = sys.materialize(64).unwrap();
                prop_assert!(a.is_hermitian(1e-12));
                prop_assert!(s.max_imag_abs() == 0.0);
                let expect = sys.max_weight();
                prop_assert!((op_norm(&s).unwrap() - expect).abs() <= 1e-10 * expect.max(1.0));
            }
        }
    }
}
