//! Macroscopic observables T_N(A), uncertainty inequalities and the standard
//! almost-commuting fixtures.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{domain, precondition, NearbyError, Result};
use crate::gep::{CommutingPair, Interval};
use crate::linalg::{
    commutator_norm, hermitian_eig, hermitian_tridiagonal_eig, normality_defect, op_norm, op_norm_op, Commutator, ComplexMatrix, Difference,
    HermitianPart, LinearOp, SelfCommutator, SparseOp, SpectralDecomposition, C64, ONE, ZERO,
};
use crate::shifts::ShiftSystem;

/// Default dimension cap for dense T_N(A).
pub const DEFAULT_CAP: usize = 4096;
/// Trace and positivity tolerance for states.
pub const STATE_TOL: f64 = 1e-12;
/// Matching tolerance for joint spectra and eigenvalue clusters.
pub const JOINT_TOL: f64 = 1e-9;
/// Relative slack used when deciding whether an inequality holds.
pub const CHECK_SLACK: f64 = 1e-9;
// generic mixing coefficient for A′ + κB′
const KAPPA: f64 = 0.754_877_666_246_692_7;

fn inner(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

fn vec_norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn check_square(name: &str, m: &ComplexMatrix) -> Result<()> {
    if !m.is_square() || m.is_empty() {
        return domain(format!("{} must be a nonempty square matrix, got {}x{}", name, m.rows(), m.cols()));
    }
    Ok(())
}

fn check_hermitian(name: &str, m: &ComplexMatrix) -> Result<()> {
    check_square(name, m)?;
    if !m.is_hermitian(1e-10) {
        return domain(format!("{} is not hermitian (defect {:.3e})", name, m.hermitian_defect()));
    }
    Ok(())
}

fn same_dim(ms: &[(&str, &ComplexMatrix)]) -> Result<usize> {
    let d = ms[0].1.rows();
    for (name, m) in ms {
        if m.rows() != d || m.cols() != d {
            return domain(format!("{} is {}x{}, expected {}x{}", name, m.rows(), m.cols(), d, d));
        }
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// states

/// A pure vector or a density matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum State {
    Pure(Vec<C64>),
    Mixed(ComplexMatrix),
}

impl State {
    pub fn pure(psi: Vec<C64>) -> Result<Self> {
        if psi.is_empty() {
            return domain("empty state vector");
        }
        let n = vec_norm(&psi);
        if (n - 1.0).abs() > STATE_TOL * 10.0 {
            return domain(format!("state vector has norm {}", n));
        }
        Ok(State::Pure(psi))
    }

    /// Rescales a nonzero vector to unit norm.
    pub fn normalized(mut psi: Vec<C64>) -> Result<Self> {
        let n = vec_norm(&psi);
        if n == 0.0 || !n.is_finite() {
            return domain("cannot normalize a zero or non-finite vector");
        }
        psi.iter_mut().for_each(|v| *v /= n);
        Ok(State::Pure(psi))
    }

    pub fn mixed(rho: ComplexMatrix) -> Result<Self> {
        check_hermitian("density matrix", &rho)?;
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return domain(format!("density matrix has trace {}", tr));
        }
        let low = hermitian_eig(&rho)?.eigenvalues[0];
        if low < -STATE_TOL {
            return domain(format!("density matrix has eigenvalue {:.3e}", low));
        }
        Ok(State::Mixed(rho))
    }

    pub fn dim(&self) -> usize {
        match self {
            State::Pure(v) => v.len(),
            State::Mixed(r) => r.rows(),
        }
    }

    pub fn density(&self) -> ComplexMatrix {
        match self {
            State::Pure(v) => ComplexMatrix::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj()),
            State::Mixed(r) => r.clone(),
        }
    }

    /// ⟨X⟩ = Tr[Xρ].
    pub fn expectation(&self, x: &ComplexMatrix) -> C64 {
        match self {
            State::Pure(v) => inner(v, &x.matvec(v)),
            State::Mixed(r) => {
                let n = r.rows();
                (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| x[(i, j)] * r[(j, i)]).sum()
            }
        }
    }

    /// Standard deviation Δ_ρA = ⟨(A − ⟨A⟩)²⟩^{1/2} of a hermitian A.
    pub fn deviation(&self, a: &ComplexMatrix) -> f64 {
        let mean = self.expectation(a).re;
        let shifted = ComplexMatrix::from_fn(a.rows(), a.cols(), |i, j| if i == j { a[(i, j)] - mean } else { a[(i, j)] });
        match self {
            State::Pure(v) => vec_norm(&shifted.matvec(v)),
            State::Mixed(_) => {
                let sq = shifted.matmul(&shifted).expect("square");
                self.expectation(&sq).re.max(0.0).sqrt()
            }
        }
    }

    /// Tr[Pρ] for a projection given by orthonormal columns `cols` of `frame`.
    fn weight_on(&self, frame: &ComplexMatrix, cols: &[usize]) -> f64 {
        let w: f64 = match self {
            State::Pure(v) => cols.iter().map(|&k| inner(&frame.column(k), v).norm_sqr()).sum(),
            State::Mixed(r) => cols
                .iter()
                .map(|&k| {
                    let u = frame.column(k);
                    inner(&u, &r.matvec(&u)).re
                })
                .sum(),
        };
        w.clamp(0.0, 1.0)
    }
}

// ---------------------------------------------------------------------------
// T_N

fn site_count_dim(d: usize, n: usize) -> Option<usize> {
    (0..n).try_fold(1usize, |acc, _| acc.checked_mul(d))
}

/// Matrix-free T_N(A) = (1/N) Σ_k I^{⊗(N−1−k)} ⊗ A ⊗ I^{⊗k}.
pub struct TnOp<'a> {
    a: &'a ComplexMatrix,
    n: usize,
    dim: usize,
}

impl<'a> TnOp<'a> {
    pub fn new(a: &'a ComplexMatrix, n: usize) -> Result<Self> {
        check_square("A", a)?;
        if n == 0 {
            return domain("T_N needs N ≥ 1");
        }
        let dim = site_count_dim(a.rows(), n).ok_or_else(|| NearbyError::Domain("d^N overflows".into()))?;
        Ok(TnOp { a, n, dim })
    }

    fn act(&self, x: &[C64], y: &mut [C64], adjoint: bool) {
        let d = self.a.rows();
        let inv = 1.0 / self.n as f64;
        y.iter_mut().for_each(|v| *v = ZERO);
        let support: Vec<(usize, C64)> = x.iter().copied().enumerate().filter(|&(_, v)| v != ZERO).collect();
        let mut stride = 1;
        for _ in 0..self.n {
            for &(idx, xv) in &support {
                let digit = (idx / stride) % d;
                let base = idx - digit * stride;
                for r in 0..d {
                    let e = if adjoint { self.a[(digit, r)].conj() } else { self.a[(r, digit)] };
                    if e != ZERO {
                        y[base + r * stride] += e * xv * inv;
                    }
                }
            }
            stride *= d;
        }
    }
}

impl LinearOp for TnOp<'_> {
    fn nrows(&self) -> usize {
        self.dim
    }
    fn ncols(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.act(x, y, false)
    }
    fn apply_adjoint(&self, x: &[C64], y: &mut [C64]) {
        self.act(x, y, true)
    }
}

/// Dense T_N(A); `cap` bounds d^N.
pub fn t_n(a: &ComplexMatrix, n: usize, cap: usize) -> Result<ComplexMatrix> {
    let op = TnOp::new(a, n)?;
    if op.dim > cap {
        return domain(format!("d^N = {} exceeds the materialization cap {}", op.dim, cap));
    }
    Ok(op.to_dense())
}

/// Distinct values of (1/N)(x_1 + … + x_N) with every x_k drawn from `values`.
pub fn average_sum_set(values: &[f64], n: usize) -> Vec<f64> {
    let mut sums = vec![0.0];
    for _ in 0..n {
        let mut next: Vec<f64> = sums.iter().flat_map(|s| values.iter().map(move |v| s + v)).collect();
        next.sort_by(f64::total_cmp);
        next.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
        sums = next;
    }
    sums.into_iter().map(|s| s / n as f64).collect()
}

// ---------------------------------------------------------------------------
// fixtures

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FixtureKind {
    Choi(usize),
    Voiculescu(usize),
    Phillips { a: C64, b: C64, c: C64 },
}

#[derive(Clone, Debug)]
pub enum Fixture {
    /// Diagonal A with spacing 1/n on [−1, 1] and the shift B with b_i² + d_i² = 1.
    Choi { n: usize, a: ComplexMatrix, b: ComplexMatrix, commutator: f64, self_commutator: f64, bound: f64 },
    /// Cyclic shift U and phase diagonal V.
    Voiculescu { n: usize, u: ComplexMatrix, v: ComplexMatrix, commutator: f64, closed_form: f64, stated: f64 },
    /// S = [[a, b], [0, c]] and its nearest normal.
    Phillips {
        s: ComplexMatrix,
        normal: ComplexMatrix,
        distance: f64,
        half_b: f64,
        bound: f64,
        closed_bound: f64,
        normality_defect: f64,
    },
}

pub fn fixture(kind: FixtureKind) -> Result<Fixture> {
    match kind {
        FixtureKind::Choi(n) => {
            if n < 2 {
                return precondition("the Choi fixture needs n ≥ 2");
            }
            let dim = 2 * n + 1;
            let d: Vec<f64> = (0..dim).map(|i| -1.0 + i as f64 / n as f64).collect();
            let a = ComplexMatrix::diag_real(&d);
            let mut b = ComplexMatrix::zeros(dim, dim);
            for i in 0..dim - 1 {
                b[(i + 1, i)] = C64::new((1.0 - d[i] * d[i]).max(0.0).sqrt(), 0.0);
            }
            let (sa, sb) = (SparseOp::from_dense(&a), SparseOp::from_dense(&b));
            let commutator = op_norm_op(&Commutator { a: &sa, b: &sb })?;
            let self_commutator = op_norm_op(&SelfCommutator(&sb))?;
            Ok(Fixture::Choi { n, a, b, commutator, self_commutator, bound: 2.0 / n as f64 })
        }
        FixtureKind::Voiculescu(n) => {
            if n < 2 {
                return precondition("the Voiculescu fixture needs n ≥ 2");
            }
            let u = ComplexMatrix::from_fn(n, n, |i, j| if i == (j + 1) % n { ONE } else { ZERO });
            let v = ComplexMatrix::diag(&(0..n).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64)).collect::<Vec<_>>());
            let commutator = op_norm_op(&Commutator { a: &SparseOp::from_dense(&u), b: &SparseOp::from_dense(&v) })?;
            Ok(Fixture::Voiculescu {
                n,
                u,
                v,
                commutator,
                closed_form: 2.0 * (PI / n as f64).sin(),
                stated: 2.0 * PI / n as f64,
            })
        }
        FixtureKind::Phillips { a, b, c } => {
            let s = ComplexMatrix::from_vec(2, 2, vec![a, b, ZERO, c])?;
            let gap = a - c;
            let u = if gap.norm() > 0.0 { gap / gap.norm() } else { ONE };
            let normal = ComplexMatrix::from_vec(2, 2, vec![a, b * 0.5, u * u * b.conj() * 0.5, c])?;
            let distance = op_norm(&normal.sub(&s)?)?;
            let bound = 0.5 * normality_defect(&s)?.sqrt();
            let closed_bound = 0.5 * (b.norm().powi(4) + gap.norm_sqr() * b.norm_sqr()).powf(0.25);
            Ok(Fixture::Phillips {
                normality_defect: normality_defect(&normal)?,
                s,
                normal,
                distance,
                half_b: 0.5 * b.norm(),
                bound,
                closed_bound,
            })
        }
    }
}

impl Fixture {
    /// Whether the measured quantities satisfy the fixture's stated relations.
    pub fn holds(&self) -> bool {
        let tight = |x: f64, y: f64| x <= y * (1.0 + CHECK_SLACK) + 1e-12;
        match self {
            Fixture::Choi { commutator, self_commutator, bound, .. } => tight(*commutator, *bound) && tight(*self_commutator, *bound),
            Fixture::Voiculescu { commutator, closed_form, stated, .. } => {
                (commutator - closed_form).abs() <= 1e-10 && tight(*closed_form, *stated)
            }
            Fixture::Phillips { distance, half_b, bound, normality_defect, s, .. } => {
                let scale = 1.0 + s.max_abs().powi(2);
                (distance - half_b).abs() <= 1e-10 * scale && tight(*distance, *bound) && *normality_defect <= 1e-10 * scale
            }
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Fixture::Choi { n, commutator, self_commutator, bound, .. } => json!({
                "fixture": "choi", "n": n, "dim": 2 * n + 1,
                "commutator_norm": commutator, "self_commutator_norm": self_commutator, "bound": bound,
                "holds": self.holds(),
            }),
            Fixture::Voiculescu { n, commutator, closed_form, stated, .. } => json!({
                "fixture": "voiculescu", "n": n,
                "commutator_norm": commutator, "two_sin_pi_over_n": closed_form, "two_pi_over_n": stated,
                "holds": self.holds(),
            }),
            Fixture::Phillips { s, normal, distance, half_b, bound, closed_bound, normality_defect } => {
                let entries = |m: &ComplexMatrix| -> Vec<[f64; 2]> { m.entries().iter().map(|z| [z.re, z.im]).collect() };
                json!({
                    "fixture": "phillips", "s": entries(s), "normal": entries(normal),
                    "distance": distance, "half_b": half_b, "bound": bound, "closed_bound": closed_bound,
                    "normality_defect": normality_defect, "holds": self.holds(),
                })
            }
        }
    }
}

// ---------------------------------------------------------------------------
// uncertainty inequalities

/// One inequality `lhs ≤ rhs`, or the reason it was not evaluated.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub margin: Option<f64>,
    pub holds: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped_reason: Option<String>,
}

impl InequalityCheck {
    pub fn evaluated(name: &str, lhs: f64, rhs: f64) -> Self {
        let slack = CHECK_SLACK * lhs.abs().max(rhs.abs()).max(1.0);
        InequalityCheck {
            name: name.into(),
            lhs: Some(lhs),
            rhs: Some(rhs),
            margin: Some(rhs - lhs),
            holds: Some(lhs <= rhs + slack),
            skipped_reason: None,
        }
    }

    pub fn skipped(name: &str, reason: impl Into<String>) -> Self {
        InequalityCheck { name: name.into(), lhs: None, rhs: None, margin: None, holds: None, skipped_reason: Some(reason.into()) }
    }

    pub fn applicable(&self) -> bool {
        self.skipped_reason.is_none()
    }
}

/// Spectral windows S_A and S_B.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Windows {
    pub a: Interval,
    pub b: Interval,
}

#[derive(Clone, Debug, Serialize)]
pub struct UncertaintyReport {
    pub dim: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub deviation_a: f64,
    pub deviation_b: f64,
    /// ⟨i[A,B]⟩ (real for hermitian A, B).
    pub commutator_mean: f64,
    pub entropy_a: f64,
    pub entropy_b: f64,
    pub norm_a: f64,
    pub norm_b: f64,
    /// Smallest singular value of [A,B].
    pub sigma_min: f64,
    pub inequalities: Vec<InequalityCheck>,
}

impl UncertaintyReport {
    /// True when every evaluated inequality holds.
    pub fn all_hold(&self) -> bool {
        self.inequalities.iter().all(|c| c.holds != Some(false))
    }

    pub fn get(&self, name: &str) -> Option<&InequalityCheck> {
        self.inequalities.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// Eigenvalue clusters (frame column lists) of a decomposition.
fn clusters(values: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (k, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(g) if (v - values[*g.last().unwrap()]).abs() <= tol => g.push(k),
            _ => out.push(vec![k]),
        }
    }
    out
}

fn cluster_tol(values: &[f64]) -> f64 {
    JOINT_TOL * (1.0 + values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Columns `cols` of `frame` as a matrix.
fn columns(frame: &ComplexMatrix, cols: &[usize]) -> ComplexMatrix {
    ComplexMatrix::from_fn(frame.rows(), cols.len(), |i, k| frame[(i, cols[k])])
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum()
}

/// ‖E_1 E_2‖ for projections onto the spans of orthonormal column sets.
fn projection_product_norm(f1: &ComplexMatrix, c1: &[usize], f2: &ComplexMatrix, c2: &[usize]) -> Result<f64> {
    if c1.is_empty() || c2.is_empty() {
        return Ok(0.0);
    }
    let g = columns(f1, c1).adjoint().matmul(&columns(f2, c2))?;
    op_norm(&g)
}

fn spectral_columns(decomp: &SpectralDecomposition, window: &Interval) -> Vec<usize> {
    (0..decomp.eigenvalues.len()).filter(|&k| window.contains(decomp.eigenvalues[k])).collect()
}

fn smallest_singular_value(c: &ComplexMatrix) -> Result<f64> {
    let gram = c.adjoint().matmul(c)?;
    Ok(hermitian_eig(&gram)?.eigenvalues[0].max(0.0).sqrt())
}

pub const ROBERTSON: &str = "robertson";
pub const ENTROPY: &str = "entropy";
pub const COMMUTATOR_WINDOWS: &str = "commutator_windows";
pub const UPPER_PROJECTION: &str = "upper_projection";

/// Evaluates the uncertainty inequalities for hermitian A, B in `state`.
pub fn uncertainty_report(a: &ComplexMatrix, b: &ComplexMatrix, state: &State, windows: Option<&Windows>) -> Result<UncertaintyReport> {
    check_hermitian("A", a)?;
    check_hermitian("B", b)?;
    let dim = same_dim(&[("A", a), ("B", b)])?;
    if state.dim() != dim {
        return domain(format!("state has dimension {}, observables {}", state.dim(), dim));
    }
    let (mean_a, mean_b) = (state.expectation(a).re, state.expectation(b).re);
    let (deviation_a, deviation_b) = (state.deviation(a), state.deviation(b));
    let comm = a.matmul(b)?.sub(&b.matmul(a)?)?;
    let commutator_mean = (state.expectation(&comm) * C64::new(0.0, 1.0)).re;
    let mut inequalities = vec![InequalityCheck::evaluated(ROBERTSON, 0.5 * commutator_mean.abs(), deviation_a * deviation_b)];

    let (ea, eb) = (hermitian_eig(a)?, hermitian_eig(b)?);
    let (ga, gb) = (clusters(&ea.eigenvalues, cluster_tol(&ea.eigenvalues)), clusters(&eb.eigenvalues, cluster_tol(&eb.eigenvalues)));
    let pa: Vec<f64> = ga.iter().map(|g| state.weight_on(&ea.frame, g)).collect();
    let pb: Vec<f64> = gb.iter().map(|g| state.weight_on(&eb.frame, g)).collect();
    let (entropy_a, entropy_b) = (entropy(&pa), entropy(&pb));
    let mut overlap: f64 = 0.0;
    for p in &ga {
        for q in &gb {
            overlap = overlap.max(projection_product_norm(&ea.frame, p, &eb.frame, q)?);
        }
    }
    inequalities.push(InequalityCheck::evaluated(ENTROPY, -2.0 * overlap.min(1.0).log2(), entropy_a + entropy_b));

    let (norm_a, norm_b) = (op_norm(a)?, op_norm(b)?);
    let sigma_min = smallest_singular_value(&comm)?;
    let comm_norm = op_norm(&comm)?;
    let invertible = sigma_min > JOINT_TOL * (1.0 + comm_norm);
    match windows {
        None => {
            inequalities.push(InequalityCheck::skipped(COMMUTATOR_WINDOWS, "no spectral windows supplied"));
            inequalities.push(InequalityCheck::skipped(UPPER_PROJECTION, "no spectral windows supplied"));
        }
        Some(_) if !invertible => {
            inequalities.push(InequalityCheck::skipped(COMMUTATOR_WINDOWS, "[A,B] is not invertible"));
            inequalities.push(InequalityCheck::skipped(UPPER_PROJECTION, "[A,B] is not invertible"));
        }
        Some(w) => {
            let (ca, cb) = (spectral_columns(&ea, &w.a), spectral_columns(&eb, &w.b));
            let tail_a = (1.0 - state.weight_on(&ea.frame, &ca)).max(0.0).sqrt();
            let tail_b = (1.0 - state.weight_on(&eb.frame, &cb)).max(0.0).sqrt();
            let (la, lb) = (w.a.diam(), w.b.diam());
            let rhs = norm_a * lb + norm_b * la + 4.0 * norm_a * norm_b * (tail_a + tail_b);
            inequalities.push(InequalityCheck::evaluated(COMMUTATOR_WINDOWS, sigma_min, rhs));
            if lb / norm_b + la / norm_a < sigma_min / (norm_a * norm_b) {
                let x = sigma_min / (4.0 * norm_a * norm_b) - lb / (4.0 * norm_b) - la / (4.0 * norm_a);
                let product = projection_product_norm(&ea.frame, &ca, &eb.frame, &cb)?;
                inequalities.push(InequalityCheck::evaluated(UPPER_PROJECTION, product, (1.0 - x * x).max(0.0).sqrt()));
            } else {
                inequalities.push(InequalityCheck::skipped(UPPER_PROJECTION, "windows too wide for the commutator gap"));
            }
        }
    }
    Ok(UncertaintyReport {
        dim,
        mean_a,
        mean_b,
        deviation_a,
        deviation_b,
        commutator_mean,
        entropy_a,
        entropy_b,
        norm_a,
        norm_b,
        sigma_min,
        inequalities,
    })
}

// ---------------------------------------------------------------------------
// joint spectra of commuting pairs

/// Joint eigenbasis of commuting hermitian A′, B′ with the paired eigenvalues.
#[derive(Clone, Debug)]
pub struct JointSpectrum {
    pub points: Vec<(f64, f64)>,
    pub frame: ComplexMatrix,
}

impl JointSpectrum {
    pub fn contains(&self, point: (f64, f64)) -> bool {
        let scale = 1.0 + self.points.iter().fold(0.0f64, |m, p| m.max(p.0.abs()).max(p.1.abs()));
        self.points.iter().any(|p| (p.0 - point.0).abs() <= JOINT_TOL * scale && (p.1 - point.1).abs() <= JOINT_TOL * scale)
    }

    /// Distinct points, sorted.
    pub fn distinct(&self) -> Vec<(f64, f64)> {
        distinct_points(&self.points)
    }
}

fn distinct_points(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let scale = 1.0 + points.iter().fold(0.0f64, |m, p| m.max(p.0.abs()).max(p.1.abs()));
    let mut pts = points.to_vec();
    pts.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        if !out.iter().any(|q| (q.0 - p.0).abs() <= JOINT_TOL * scale && (q.1 - p.1).abs() <= JOINT_TOL * scale) {
            out.push(p);
        }
    }
    out
}

// Diagonalize each compression in turn, splitting on clusters.
fn refine(w: ComplexMatrix, ops: &[&ComplexMatrix], out: &mut Vec<Vec<C64>>) -> Result<()> {
    if w.cols() == 1 || ops.is_empty() {
        out.extend((0..w.cols()).map(|k| w.column(k)));
        return Ok(());
    }
    let m = w.adjoint().matmul(&ops[0].matmul(&w)?)?;
    let eig = hermitian_eig(&m)?;
    let w2 = w.matmul(&eig.frame)?;
    for g in clusters(&eig.eigenvalues, cluster_tol(&eig.eigenvalues)) {
        refine(columns(&w2, &g), &ops[1..], out)?;
    }
    Ok(())
}

pub fn joint_spectrum(a_prime: &ComplexMatrix, b_prime: &ComplexMatrix) -> Result<JointSpectrum> {
    check_hermitian("A′", a_prime)?;
    check_hermitian("B′", b_prime)?;
    let d = same_dim(&[("A′", a_prime), ("B′", b_prime)])?;
    let scale = 1.0 + op_norm(a_prime)? * op_norm(b_prime)?;
    let c = commutator_norm(a_prime, b_prime)?;
    if c > JOINT_TOL * scale {
        return domain(format!("A′ and B′ do not commute (‖[A′,B′]‖ = {:.3e})", c));
    }
    let h = a_prime.add(&b_prime.scale(C64::new(KAPPA, 0.0)))?;
    let eig = hermitian_eig(&h)?;
    let mut cols = Vec::with_capacity(d);
    for g in clusters(&eig.eigenvalues, cluster_tol(&eig.eigenvalues)) {
        refine(columns(&eig.frame, &g), &[a_prime, b_prime], &mut cols)?;
    }
    let frame = ComplexMatrix::from_fn(d, d, |i, k| cols[k][i]);
    let points = cols.iter().map(|v| (inner(v, &a_prime.matvec(v)).re, inner(v, &b_prime.matvec(v)).re)).collect();
    Ok(JointSpectrum { points, frame })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OverlapCheck {
    pub point: (f64, f64),
    pub radii: (f64, f64),
    pub bound: f64,
    pub measured: f64,
    pub holds: bool,
}

/// Dense context for repeated overlap checks against one (A, B, A′, B′).
pub struct OverlapContext {
    ea: SpectralDecomposition,
    eb: SpectralDecomposition,
    pub joint: JointSpectrum,
    pub distance_a: f64,
    pub distance_b: f64,
}

impl OverlapContext {
    pub fn new(a: &ComplexMatrix, b: &ComplexMatrix, a_prime: &ComplexMatrix, b_prime: &ComplexMatrix) -> Result<Self> {
        check_hermitian("A", a)?;
        check_hermitian("B", b)?;
        same_dim(&[("A", a), ("B", b), ("A′", a_prime), ("B′", b_prime)])?;
        let joint = joint_spectrum(a_prime, b_prime)?;
        Ok(OverlapContext {
            ea: hermitian_eig(a)?,
            eb: hermitian_eig(b)?,
            joint,
            distance_a: op_norm(&a_prime.sub(a)?)?,
            distance_b: op_norm(&b_prime.sub(b)?)?,
        })
    }

    pub fn check(&self, point: (f64, f64), r_a: f64, r_b: f64) -> Result<OverlapCheck> {
        if !(r_a > 0.0 && r_b > 0.0) {
            return precondition("window radii must be positive");
        }
        if !self.joint.contains(point) {
            return domain(format!("({}, {}) is not in the joint spectrum of A′, B′", point.0, point.1));
        }
        let bound = 1.0 - (self.distance_a / r_a + self.distance_b / r_b);
        let ca = spectral_columns(&self.ea, &Interval::closed(point.0 - r_a, point.0 + r_a));
        let cb = spectral_columns(&self.eb, &Interval::closed(point.1 - r_b, point.1 + r_b));
        let measured = projection_product_norm(&self.ea.frame, &ca, &self.eb.frame, &cb)?;
        Ok(OverlapCheck { point, radii: (r_a, r_b), bound, measured, holds: measured >= bound - CHECK_SLACK })
    }
}

/// 1 − (2‖A′−A‖/|S_A| + 2‖B′−B‖/|S_B|) for S_A = [λA − rA, λA + rA], with the
/// measured ‖E_{S_A}(A)E_{S_B}(B)‖ beside it.
pub fn overlap_lower_bound(
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    a_prime: &ComplexMatrix,
    b_prime: &ComplexMatrix,
    point: (f64, f64),
    r_a: f64,
    r_b: f64,
) -> Result<OverlapCheck> {
    OverlapContext::new(a, b, a_prime, b_prime)?.check(point, r_a, r_b)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VarianceCheck {
    /// max over joint eigenvectors ψ of Δ_ψA·Δ_ψB.
    pub worst_product: f64,
    /// ‖A′−A‖·‖B′−B‖.
    pub bound: f64,
    pub holds: bool,
}

fn variance_check(worst_product: f64, bound: f64) -> VarianceCheck {
    VarianceCheck { worst_product, bound, holds: worst_product <= bound * (1.0 + CHECK_SLACK) + CHECK_SLACK }
}

/// Δ_ψA·Δ_ψB ≤ ‖A′−A‖‖B′−B‖ over the joint eigenbasis of (A′, B′).
pub fn variance_product_check(a: &ComplexMatrix, b: &ComplexMatrix, a_prime: &ComplexMatrix, b_prime: &ComplexMatrix) -> Result<VarianceCheck> {
    let ctx = OverlapContext::new(a, b, a_prime, b_prime)?;
    let mut worst: f64 = 0.0;
    for k in 0..ctx.joint.frame.cols() {
        let psi = State::Pure(ctx.joint.frame.column(k));
        worst = worst.max(psi.deviation(a) * psi.deviation(b));
    }
    Ok(variance_check(worst, ctx.distance_a * ctx.distance_b))
}

// ---------------------------------------------------------------------------
// structured checks for constructed commuting pairs

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Part {
    Real,
    Imag,
}

/// Radius multiple of the measured distance used for the overlap windows.
pub const RADIUS_FACTOR: f64 = 4.0;

#[derive(Clone, Debug, Serialize)]
pub struct PairCheck {
    pub part: Part,
    pub distance_a: f64,
    pub distance_b: f64,
    pub variance: VarianceCheck,
    pub overlaps: Vec<OverlapCheck>,
}

impl PairCheck {
    pub fn holds(&self) -> bool {
        self.variance.holds && self.overlaps.iter().all(|o| o.holds)
    }
}

// Hermitian part of one chain's shift in chain coordinates.
fn chain_part(sys: &ShiftSystem, chain: usize, part: Part) -> ComplexMatrix {
    let ch = &sys.chains[chain];
    let n = ch.len();
    let mut s = ComplexMatrix::zeros(n, n);
    for (k, &w) in ch.weights.iter().enumerate() {
        s[(k + 1, k)] += C64::new(w, 0.0);
    }
    if let Some(c) = ch.closing {
        s[(0, n - 1)] += c;
    }
    let sa = s.adjoint();
    match part {
        Part::Real => ComplexMatrix::from_fn(n, n, |i, j| (s[(i, j)] + sa[(i, j)]) * 0.5),
        Part::Imag => ComplexMatrix::from_fn(n, n, |i, j| (s[(i, j)] - sa[(i, j)]) * C64::new(0.0, -0.5)),
    }
}

struct ChainSpectrum {
    columns: Vec<usize>,
    diagonal: Vec<f64>,
    eig: SpectralDecomposition,
}

fn chain_spectra(sys: &ShiftSystem, part: Part) -> Result<Vec<ChainSpectrum>> {
    (0..sys.chains.len())
        .into_par_iter()
        .map(|c| {
            let ch = &sys.chains[c];
            let eig = if ch.closing.is_none() {
                let half = match part {
                    Part::Real => C64::new(0.5, 0.0),
                    Part::Imag => C64::new(0.0, -0.5),
                };
                let off: Vec<C64> = ch.weights.iter().map(|&w| half * w).collect();
                hermitian_tridiagonal_eig(&vec![0.0; ch.len()], &off)?
            } else {
                hermitian_eig(&chain_part(sys, c, part))?
            };
            Ok(ChainSpectrum { columns: ch.indices.clone(), diagonal: ch.diagonal.clone(), eig })
        })
        .collect()
}

fn spread(points: Vec<(f64, f64)>, max_points: usize) -> Vec<(f64, f64)> {
    if points.len() <= max_points || max_points == 0 {
        return points;
    }
    (0..max_points).map(|k| points[k * (points.len() - 1) / (max_points - 1).max(1)]).collect()
}

/// VarLemma over the full joint eigenbasis and the overlap bound at up to
/// `max_points` distinct joint points, for A = diag part of the original
/// system, B its Re/Im shift part, and (A′, B′) the same parts of S″.
/// Works chain by chain, so no dense operator of the full dimension is formed.
pub fn commuting_pair_check(pair: &CommutingPair, part: Part, max_points: usize) -> Result<PairCheck> {
    let normal = pair.s_double.as_ref().ok_or_else(|| NearbyError::Domain("the pair has no normal part S″".into()))?;
    let orig = &pair.original;
    if orig.rotation_log.iter().any(|r| r.p != r.q) || orig.phases.is_some() {
        return domain("the original system must be given in its standard frame up to signs");
    }
    let imaginary = part == Part::Imag;
    let (a0, s0, a1, s1) = (orig.a_op(), orig.s_op(), normal.a_op(), normal.s_op());
    let (b0, b1) = (HermitianPart { op: &s0, imaginary }, HermitianPart { op: &s1, imaginary });
    let distance_a = op_norm_op(&Difference { a: &a1, b: &a0 })?;
    let distance_b = op_norm_op(&Difference { a: &b1, b: &b0 })?;

    let joint = chain_spectra(normal, part)?;
    for cs in &joint {
        let v = cs.diagonal[0];
        if cs.diagonal.iter().any(|&x| x != v) {
            return Err(NearbyError::Internal("an S″ chain spans two A′ levels".into()));
        }
    }
    let n = normal.ambient_dim;
    let vectors: Vec<(usize, usize)> = joint.iter().enumerate().flat_map(|(c, cs)| (0..cs.columns.len()).map(move |k| (c, k))).collect();
    let worst = vectors
        .par_iter()
        .map(|&(c, k)| {
            let cs = &joint[c];
            let mut psi = vec![ZERO; n];
            for (p, &col) in cs.columns.iter().enumerate() {
                psi[col] = cs.eig.frame[(p, k)];
            }
            normal.frame_apply(&mut psi, false);
            deviation_op(&a0, &psi) * deviation_op(&b0, &psi)
        })
        .reduce(|| 0.0, f64::max);
    let variance = variance_check(worst, distance_a * distance_b);

    let points: Vec<(f64, f64)> =
        joint.iter().flat_map(|cs| cs.eig.eigenvalues.iter().map(move |&mu| (cs.diagonal[0], mu))).collect();
    let points = spread(distinct_points(&points), max_points);
    let original = chain_spectra(orig, part)?;
    let r_a = (RADIUS_FACTOR * distance_a).max(1e-9);
    let r_b = (RADIUS_FACTOR * distance_b).max(1e-9);
    let overlaps = points
        .par_iter()
        .map(|&pt| {
            let bound = 1.0 - (distance_a / r_a + distance_b / r_b);
            let sa = Interval::closed(pt.0 - r_a, pt.0 + r_a);
            let sb = Interval::closed(pt.1 - r_b, pt.1 + r_b);
            let mut measured: f64 = 0.0;
            // A and B are block diagonal over the original chains; sign flips commute with E_A
            for cs in &original {
                let rows: Vec<usize> = (0..cs.columns.len()).filter(|&p| sa.contains(cs.diagonal[p])).collect();
                let cols = spectral_columns(&cs.eig, &sb);
                if rows.is_empty() || cols.is_empty() {
                    continue;
                }
                let sub = ComplexMatrix::from_fn(rows.len(), cols.len(), |i, j| cs.eig.frame[(rows[i], cols[j])]);
                measured = measured.max(op_norm(&sub)?);
            }
            Ok(OverlapCheck { point: pt, radii: (r_a, r_b), bound, measured, holds: measured >= bound - CHECK_SLACK })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairCheck { part, distance_a, distance_b, variance, overlaps })
}

fn deviation_op(op: &dyn LinearOp, psi: &[C64]) -> f64 {
    let mut y = vec![ZERO; psi.len()];
    op.apply(psi, &mut y);
    let mean = inner(psi, &y).re;
    y.iter_mut().zip(psi).for_each(|(u, p)| *u -= p * mean);
    vec_norm(&y)
}
