//! Nearby commuting triples for the collective spin of N spin-½ sites:
//! windowed exchange on scaled irreps, the fixed-step progression lemma,
//! the multiplicity-driven block plan and the induced linear map Y_N.

use std::f64::consts::PI;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::berg::CUBIC_C;
use crate::error::{domain, NearbyError, Result};
use crate::gep::{exchange_process, Block, BlockFamily, CommutingPair, WindowPlan};
use crate::linalg::{op_norm_op, Commutator, Difference, HermitianPart, LinearOp, ZeroOp, C64, ZERO};
use crate::shifts::ShiftSystem;
use crate::su2::{irrep, MultiplicityTable, Spin};

/// Berg exponent used throughout; the cubic mode keeps everything real.
pub const ALPHA: f64 = 1.0 / 3.0;
pub const C_ALPHA: f64 = CUBIC_C;

pub const STEP_C3: f64 = 1.045;
pub const STEP_C4: f64 = 18.65;
pub const STEP_C5: f64 = 1.082;
pub const SMALL_C2: f64 = 6.285;
pub const N_STAR: f64 = 4.962e7;
pub const HEADLINE_12: f64 = 6.286;
pub const HEADLINE_3: f64 = 1.083;
pub const Y_CONSTANT: f64 = 17.92;
pub const DISCARD_C: f64 = 5.0;
/// Largest N whose multiplicity table is built; beyond it only the layout is planned.
pub const PLAN_ONLY_ABOVE: u64 = 5000;
pub const DEFAULT_CAP: usize = 5000;

/// Certified bounds get this upward slack before any comparison.
pub const SLACK: f64 = 1.0 + 1e-12;

/// L = ⌊1.045 N^{4/7}⌋.
pub fn step_gap(n: f64) -> u64 {
    (STEP_C3 * n.powf(4.0 / 7.0)).floor() as u64
}

/// Λ0 for the integer (`half = false`) or half-integer family.
pub fn lambda0(n: f64, half: bool) -> f64 {
    0.5 * n.sqrt() + if half { 1.5 } else { 1.0 }
}

/// The scalars the windowed construction depends on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SnearbyShape {
    pub lambda_1: f64,
    pub lambda_m: f64,
    pub m: usize,
    pub n: f64,
    pub gap: f64,
    pub l: f64,
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SnearbyQuantities {
    pub c_delta: f64,
    pub n_delta: u64,
    /// `None` for a single spin (no exchanges).
    pub n0: Option<u64>,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub bound_12: f64,
    pub bound_3: f64,
}

/// c_Δ, N0, T, G, D and the final bounds, after checking the hypotheses.
pub fn snearby_quantities(s: &SnearbyShape) -> Result<SnearbyQuantities> {
    let (lam, n) = (s.lambda_m, s.n);
    if !(n >= 1.0) || s.m == 0 {
        return domain("need N ≥ 1 and at least one spin");
    }
    if !(s.l > 0.0 && s.delta > 0.0) {
        return domain(format!("l = {} and Δ = {} must be positive", s.l, s.delta));
    }
    let nd = n * s.delta;
    if nd < 4.0 {
        return domain(format!("NΔ = {} violates 4 ≤ NΔ", nd));
    }
    if nd > 2.0 * lam {
        return domain(format!("NΔ = {} violates NΔ ≤ 2Λ = {}", nd, 2.0 * lam));
    }
    let n_delta = (2.0 * lam / nd).floor() as u64;
    let c_delta = 2.0 * lam / (n * n_delta as f64);
    let (n0, t, g) = if s.m == 1 {
        (None, 0.0, 0.0)
    } else {
        let raw = ((nd - 5.0) / (2.0 * s.m as f64 - 3.0)).floor() - 1.0;
        if raw < 2.0 {
            return domain(format!("N0 = ⌊(NΔ−5)/(2m−3)⌋ − 1 = {} but the exchanges need N0 ≥ 2", raw));
        }
        let n0 = raw as u64;
        let k = PI / (2.0 * n0 as f64);
        let t = (2.0 + 2.0 * s.gap / n0 as f64) * lam / (n * n);
        let g1 = lam.sqrt() * 2.0 * s.gap / s.l.sqrt() + k * (lam + 0.5);
        let g2 = (2.0 * lam * s.gap).sqrt() + k * (2.0 * lam * (s.l + 1.0)).sqrt();
        (Some(n0), t, g1.max(g2) / n)
    };
    let d = (2.0 * lam / n * ((s.gap + 1.0) / n + c_delta))
        .sqrt()
        .max((s.lambda_1 + 0.5) / n)
        .max(c_delta / 2.0 + (s.gap + 0.5) / n);
    let bound_12 = g.max(d) + C_ALPHA * ((lam + 0.5) / n).powf(1.0 - 2.0 * ALPHA) * t.powf(ALPHA).max(d.powf(2.0 * ALPHA));
    Ok(SnearbyQuantities { c_delta, n_delta, n0, t, g, d, bound_12, bound_3: c_delta })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnearbyParams {
    pub spins: Vec<Spin>,
    pub n: u64,
    pub l: f64,
    pub delta: f64,
    pub gap: f64,
}

impl SnearbyParams {
    pub fn validate(&self) -> Result<()> {
        if self.spins.is_empty() {
            return domain("no spins");
        }
        let parity = self.spins[0].two_lambda % 2;
        for w in self.spins.windows(2) {
            let step = w[1].lambda() - w[0].lambda();
            if step < 0.0 {
                return domain(format!("spins must be nondecreasing: {} after {}", w[1], w[0]));
            }
            if step > self.gap {
                return domain(format!("λ_(r+1) − λ_r = {} exceeds L = {}", step, self.gap));
            }
        }
        if self.spins.iter().any(|s| s.two_lambda % 2 != parity) {
            return domain("spins mix integers and half-integers");
        }
        Ok(())
    }

    pub fn shape(&self) -> SnearbyShape {
        SnearbyShape {
            lambda_1: self.spins[0].lambda(),
            lambda_m: self.spins.last().unwrap().lambda(),
            m: self.spins.len(),
            n: self.n as f64,
            gap: self.gap,
            l: self.l,
            delta: self.delta,
        }
    }
}

/// S^{λ_1} ⊕ … ⊕ S^{λ_m} scaled by 1/N as a nested block family.
pub fn irrep_family(spins: &[Spin], n: u64) -> BlockFamily {
    let top = spins.iter().map(|s| s.two_lambda).max().unwrap_or(0) as i64;
    let nf = n as f64;
    // grid position p ↔ 2m = 2p − 2Λ
    let alpha: Vec<f64> = (0..=top as usize).map(|p| ((2 * p as i64 - top) as f64 / 2.0) / nf).collect();
    let blocks = spins
        .iter()
        .map(|s| Block {
            lo: ((top - s.two_lambda as i64) / 2) as usize,
            weights: irrep(*s).sigma_plus_weights.iter().map(|d| d / nf).collect(),
        })
        .collect();
    BlockFamily { alpha, blocks }
}

/// Which case of the progression lemma produced a triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// λ_m < 6.285 N^{6/7}
    SmallSpin,
    /// N < N_*
    SmallN,
    /// The windowed construction.
    Snearby,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TripleBounds {
    /// For ‖A1′ − S(σ1)‖ and ‖A2′ − S(σ2)‖.
    pub sigma12: f64,
    pub sigma3: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TripleMeasured {
    /// ‖A_i′ − S(σ_i)‖, i = 1, 2, 3.
    pub distance: [f64; 3],
    /// ‖[A1′,A2′]‖, ‖[A1′,A3′]‖, ‖[A2′,A3′]‖.
    pub commutator: [f64; 3],
    /// Largest |Im| in A1′, |Re| in A2′, |Im| in A3′ (standard basis).
    pub pattern: [f64; 3],
    pub scale: f64,
}

impl TripleMeasured {
    pub fn within(&self, b: &TripleBounds, tol: f64) -> bool {
        self.distance[0] <= b.sigma12 * SLACK + tol * self.scale
            && self.distance[1] <= b.sigma12 * SLACK + tol * self.scale
            && self.distance[2] <= b.sigma3 * SLACK + tol * self.scale
    }

    pub fn commuting(&self, tol: f64) -> bool {
        let s2 = self.scale * self.scale;
        self.commutator.iter().all(|&c| c <= tol * s2)
    }

    pub fn real_pattern(&self, tol: f64) -> bool {
        self.pattern.iter().all(|&p| p <= tol * self.scale)
    }
}

#[derive(Clone, Debug)]
pub enum TripleData {
    /// A1′ = A2′ = 0, A3′ = S(σ3).
    Trivial,
    Exchange(Box<CommutingPair>),
    /// Only the bound arithmetic was done.
    Unmaterialized,
}

/// (A1′, A2′, A3′) for one block S = (1/N)(S^{λ_1} ⊕ … ⊕ S^{λ_m}).
#[derive(Clone, Debug)]
pub struct CertifiedTriple {
    pub spins: Vec<Spin>,
    pub n: u64,
    pub branch: Branch,
    pub quantities: Option<SnearbyQuantities>,
    pub bounds: TripleBounds,
    pub data: TripleData,
}

impl CertifiedTriple {
    pub fn dim(&self) -> usize {
        self.spins.iter().map(|s| s.dim()).sum()
    }

    /// The block itself: chains carry S(σ3) on the diagonal and S(σ+) as weights.
    pub fn reference(&self) -> Result<ShiftSystem> {
        irrep_family(&self.spins, self.n).to_system()
    }

    /// Measured distances, commutators and reality pattern; matrix-free.
    pub fn measure(&self) -> Result<TripleMeasured> {
        let reference = self.reference()?;
        let s = reference.s_op();
        let refs: [Box<dyn LinearOp + Send + '_>; 3] = [
            Box::new(HermitianPart { op: &s, imaginary: false }),
            Box::new(HermitianPart { op: &s, imaginary: true }),
            Box::new(reference.a_op()),
        ];
        let scale = self.spins.last().map_or(0.0, |l| l.lambda() + 0.5) / self.n as f64;
        let dim = reference.ambient_dim;
        match &self.data {
            TripleData::Unmaterialized => Err(NearbyError::Domain("this triple was planned but not built".into())),
            TripleData::Trivial => {
                let zero = ZeroOp(dim);
                let a3 = reference.a_op();
                let ops: [&dyn LinearOp; 3] = [&zero, &zero, &a3];
                measure_ops(&ops, &refs, scale)
            }
            TripleData::Exchange(pair) => {
                let sd = pair.s_double.as_ref().ok_or_else(|| NearbyError::Internal("normal part missing".into()))?;
                let s2 = sd.s_op();
                let a1 = HermitianPart { op: &s2, imaginary: false };
                let a2 = HermitianPart { op: &s2, imaginary: true };
                let a3 = sd.a_op();
                let ops: [&dyn LinearOp; 3] = [&a1, &a2, &a3];
                measure_ops(&ops, &refs, scale)
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "spins": self.spins.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            "branch": self.branch,
            "bounds": self.bounds,
            "quantities": self.quantities,
        })
    }
}

fn measure_ops(ops: &[&dyn LinearOp; 3], refs: &[Box<dyn LinearOp + Send + '_>; 3], scale: f64) -> Result<TripleMeasured> {
    let mut distance = [0.0; 3];
    for i in 0..3 {
        distance[i] = op_norm_op(&Difference { a: ops[i], b: refs[i].as_ref() })?;
    }
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let mut commutator = [0.0; 3];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        commutator[k] = op_norm_op(&Commutator { a: ops[i], b: ops[j] })?;
    }
    let pattern = [pattern_defect(ops[0], false), pattern_defect(ops[1], true), pattern_defect(ops[2], false)];
    Ok(TripleMeasured { distance, commutator, pattern, scale })
}

/// Largest |Im| (or |Re| when `imaginary`) over the standard-basis entries.
pub fn pattern_defect(op: &dyn LinearOp, imaginary: bool) -> f64 {
    let n = op.ncols();
    let mut e = vec![ZERO; n];
    let mut y = vec![ZERO; op.nrows()];
    let mut worst = 0.0_f64;
    for j in 0..n {
        e[j] = C64::new(1.0, 0.0);
        op.apply(&e, &mut y);
        e[j] = ZERO;
        for v in &y {
            worst = worst.max(if imaginary { v.re.abs() } else { v.im.abs() });
        }
    }
    worst
}

/// Windowed construction on S = (1/N)(S^{λ_1} ⊕ … ⊕ S^{λ_m}).
pub fn snearby(p: &SnearbyParams) -> Result<CertifiedTriple> {
    p.validate()?;
    let q = snearby_quantities(&p.shape())?;
    let family = irrep_family(&p.spins, p.n);
    let big = p.spins.last().unwrap().lambda();
    let nf = p.n as f64;
    // cut points in units of 1/N so they order exactly against the grid
    let step = 2.0 * big / q.n_delta as f64;
    let mut cuts: Vec<f64> = (0..q.n_delta).map(|k| (-big + k as f64 * step) / nf).collect();
    cuts.push(big / nf);
    let plan = WindowPlan::uniform(cuts, q.n0.unwrap_or(2) as usize);
    let pair = exchange_process(&family, &plan, true)?;
    Ok(CertifiedTriple {
        spins: p.spins.clone(),
        n: p.n,
        branch: Branch::Snearby,
        quantities: Some(q),
        bounds: TripleBounds { sigma12: q.bound_12, sigma3: q.bound_3 },
        data: TripleData::Exchange(Box::new(pair)),
    })
}

/// Parameters of the windowed construction chosen by the progression lemma.
pub fn step_params(spins: &[Spin], n: u64) -> SnearbyParams {
    let nf = n as f64;
    SnearbyParams {
        spins: spins.to_vec(),
        n,
        l: STEP_C4 * nf.powf(5.0 / 7.0),
        delta: STEP_C5 * nf.powf(-3.0 / 7.0),
        gap: step_gap(nf) as f64,
    }
}

/// Progression lemma: spins μ_1 < … < μ_m with common step L.
pub fn big_l_step(spins: &[Spin], n: u64, lambda0: f64, cap: usize) -> Result<CertifiedTriple> {
    if spins.is_empty() || n == 0 {
        return domain("need N ≥ 1 and at least one spin");
    }
    let nf = n as f64;
    let gap = step_gap(nf);
    for w in spins.windows(2) {
        if w[1].two_lambda as u64 != w[0].two_lambda as u64 + 2 * gap {
            return domain(format!("spins {} and {} are not L = {} apart", w[0], w[1], gap));
        }
    }
    if lambda0 > 0.5 * nf.sqrt() + 1.5 {
        return domain(format!("Λ0 = {} exceeds ½√N + 3/2", lambda0));
    }
    let (lam1, lamm) = (spins[0].lambda(), spins.last().unwrap().lambda());
    if lam1 > lambda0 + 2.0 * gap as f64 {
        return domain(format!("λ_1 = {} exceeds Λ0 + 2L = {}", lam1, lambda0 + 2.0 * gap as f64));
    }
    if lamm > nf / 2.0 {
        return domain(format!("λ_m = {} exceeds N/2", lamm));
    }
    let trivial = |branch, bound| CertifiedTriple {
        spins: spins.to_vec(),
        n,
        branch,
        quantities: None,
        bounds: TripleBounds { sigma12: bound, sigma3: 0.0 },
        data: TripleData::Trivial,
    };
    if lamm < SMALL_C2 * nf.powf(6.0 / 7.0) {
        return Ok(trivial(Branch::SmallSpin, SMALL_C2 * nf.powf(-1.0 / 7.0)));
    }
    if nf < N_STAR {
        return Ok(trivial(Branch::SmallN, 0.5 * N_STAR.powf(1.0 / 7.0) * nf.powf(-1.0 / 7.0)));
    }
    let p = step_params(spins, n);
    let dim: usize = spins.iter().map(|s| s.dim()).sum();
    if dim <= cap {
        return snearby(&p);
    }
    let q = snearby_quantities(&p.shape())?;
    Ok(CertifiedTriple {
        spins: spins.to_vec(),
        n,
        branch: Branch::Snearby,
        quantities: Some(q),
        bounds: TripleBounds { sigma12: q.bound_12, sigma3: q.bound_3 },
        data: TripleData::Unmaterialized,
    })
}

/// One constraint on the progression-lemma constants at N_*.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// The four constant requirements of the parameter lemma, with the
/// progression lemma's exponents (γ2 = 1, γ̲2 = 6/7, γ3 = 4/7, γ5 = 3/7).
pub fn constant_requirements(n_star: f64) -> Vec<ConstantCheck> {
    let (g2, g2u, g3, g5) = (1.0, 6.0 / 7.0, 4.0 / 7.0, 3.0 / 7.0);
    let c1 = 1.0 / (2.0 * STEP_C3 - 2.0 * n_star.powf(-4.0 / 7.0));
    let c5 = STEP_C5;
    let mut out = Vec::new();
    let mut push = |name, lhs: f64, rhs: f64, strict: bool| {
        let holds = if strict { lhs < rhs } else { lhs <= rhs };
        out.push(ConstantCheck { name, lhs, rhs, holds });
    };
    push("1 < 2 c1 N*^(γ2−γ3)", 1.0, 2.0 * c1 * n_star.powf(g2 - g3), true);
    push(
        "4 c1 N*^(γ2−γ3+γ5−1) + 5 N*^(γ5−1) < c5",
        4.0 * c1 * n_star.powf(g2 - g3 + g5 - 1.0) + 5.0 * n_star.powf(g5 - 1.0),
        c5,
        true,
    );
    push("4 ≤ c5 N*^(1−γ5)", 4.0, c5 * n_star.powf(1.0 - g5), false);
    push("c5 < 2 c̲2 N*^(γ̲2+γ5−1)", c5, 2.0 * SMALL_C2 * n_star.powf(g2u + g5 - 1.0), true);
    out
}

/// A progression μ_1, …, μ_K with its level-set peel: `peels[r]` is the
/// multiplicity of the prefix μ_1, …, μ_{r+1}.
#[derive(Clone, Debug, PartialEq)]
pub struct Progression {
    pub spins: Vec<Spin>,
    pub peels: Vec<BigUint>,
}

impl Progression {
    pub fn blocks(&self) -> impl Iterator<Item = (&[Spin], &BigUint)> + '_ {
        self.peels.iter().enumerate().filter(|(_, m)| !m.is_zero()).map(|(r, m)| (&self.spins[..=r], m))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockPlan {
    pub n: u64,
    pub gap: u64,
    /// (Λ0, first monotone spin) for each parity family present.
    pub families: Vec<(f64, Spin)>,
    pub discarded: Vec<(Spin, BigUint)>,
    pub progressions: Vec<Progression>,
}

impl BlockPlan {
    /// Exact ‖·‖ of the discarded part of S(σ1): max λ / N.
    pub fn discard_cost(&self) -> f64 {
        self.discarded.iter().filter(|(_, m)| !m.is_zero()).map(|(s, _)| s.lambda()).fold(0.0, f64::max) / self.n as f64
    }

    pub fn discard_bound(&self) -> f64 {
        DISCARD_C * (self.n as f64).powf(-3.0 / 7.0)
    }

    /// Σ multiplicity × dimension over the plan.
    pub fn dimension(&self) -> BigUint {
        let mut total = BigUint::zero();
        for (s, m) in &self.discarded {
            total += m * BigUint::from(s.dim());
        }
        for p in &self.progressions {
            for (spins, m) in p.blocks() {
                total += m * BigUint::from(spins.iter().map(|s| s.dim()).sum::<usize>());
            }
        }
        total
    }
}

/// Smallest spin from which multiplicities never increase (step 1).
pub fn first_monotone_spin(entries: &[(Spin, BigUint)]) -> Option<Spin> {
    let mut first = entries.last()?.0;
    for w in entries.windows(2).rev() {
        if w[0].1 >= w[1].1 {
            first = w[0].0;
        } else {
            break;
        }
    }
    Some(first)
}

/// Block plan of (1/N)(⊕ n_λ S^λ). `entries` may mix integer and
/// half-integer spins; each family is planned separately. `start` is the
/// smallest spin kept in the progressions (per family, default: the first
/// monotone spin).
pub fn decompose(entries: &[(Spin, BigUint)], n: u64, gap: u64, start: Option<Spin>) -> Result<BlockPlan> {
    if gap == 0 {
        return domain("L must be positive");
    }
    let mut plan = BlockPlan { n, gap, families: Vec::new(), discarded: Vec::new(), progressions: Vec::new() };
    for parity in [0, 1] {
        let mut fam: Vec<(Spin, BigUint)> = entries.iter().filter(|(s, _)| s.two_lambda % 2 == parity).cloned().collect();
        if fam.is_empty() {
            continue;
        }
        fam.sort_by_key(|(s, _)| s.two_lambda);
        if fam.windows(2).any(|w| w[0].0 == w[1].0) {
            return domain(format!("spin {} listed twice", fam[0].0));
        }
        // fill gaps with zero multiplicity so positions step by one
        let (lo, hi) = (fam[0].0.two_lambda, fam.last().unwrap().0.two_lambda);
        let full: Vec<(Spin, BigUint)> = (lo..=hi)
            .step_by(2)
            .map(|t| fam.iter().find(|(s, _)| s.two_lambda == t).map_or((Spin::new(t), BigUint::zero()), |e| e.clone()))
            .collect();
        let first = match start.filter(|s| s.two_lambda % 2 == parity) {
            Some(s) => s,
            None => first_monotone_spin(&full).unwrap(),
        };
        let idx = |s: Spin| ((s.two_lambda as i64 - lo as i64) / 2) as usize;
        let i_star = if first.two_lambda < lo { 0 } else { idx(first) };
        let g = gap as usize;
        for i in i_star..full.len() {
            if i + g < full.len() && full[i].1 < full[i + g].1 {
                return domain(format!(
                    "n_{} = {} < n_{} = {} violates n_i ≥ n_(i+L) past the start spin {}",
                    full[i].0, full[i].1, full[i + g].0, full[i + g].1, first
                ));
            }
        }
        plan.families.push((lambda0(n as f64, parity == 1), full[i_star.min(full.len() - 1)].0));
        let mut used = vec![false; full.len()];
        let top = full.len() - 1;
        for anchor in (top.saturating_sub(g - 1)..=top).rev() {
            if anchor < i_star {
                continue;
            }
            let mut idxs = vec![anchor];
            while let Some(&last) = idxs.last() {
                if last >= i_star + g {
                    idxs.push(last - g);
                } else {
                    break;
                }
            }
            idxs.reverse();
            for &i in &idxs {
                used[i] = true;
            }
            let mults: Vec<&BigUint> = idxs.iter().map(|&i| &full[i].1).collect();
            let k = idxs.len();
            let mut peels = Vec::with_capacity(k);
            for r in 0..k - 1 {
                peels.push(mults[r] - mults[r + 1]);
            }
            peels.push(mults[k - 1].clone());
            plan.progressions.push(Progression { spins: idxs.iter().map(|&i| full[i].0).collect(), peels });
        }
        for (i, e) in full.into_iter().enumerate() {
            if !used[i] && !e.1.is_zero() {
                plan.discarded.push(e);
            }
        }
    }
    Ok(plan)
}

#[derive(Clone, Debug)]
pub struct BlockResult {
    pub triple: CertifiedTriple,
    pub multiplicity: BigUint,
    pub measured: Option<TripleMeasured>,
}

/// Layout of the plan when the multiplicity table is out of reach.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanSketch {
    pub parity_half: bool,
    pub lambda0: f64,
    /// Multiplicities are nonincreasing from here (½√N rounded up to the parity).
    pub first_monotone: f64,
    pub progressions: u64,
    pub longest: u64,
    pub branch: Branch,
    pub longest_quantities: Option<SnearbyQuantities>,
}

#[derive(Clone, Debug)]
pub struct OgataReport {
    pub n: u64,
    pub gap: u64,
    pub plan: Option<BlockPlan>,
    pub sketch: Option<PlanSketch>,
    pub blocks: Vec<BlockResult>,
    pub bounds: TripleBounds,
    pub headline: TripleBounds,
}

impl OgataReport {
    pub fn all_within(&self, tol: f64) -> bool {
        self.blocks.iter().all(|b| b.measured.is_none_or(|m| m.within(&b.triple.bounds, tol)))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let blocks: Vec<_> = self
            .blocks
            .iter()
            .map(|b| {
                let mut v = b.triple.to_json();
                v["multiplicity"] = serde_json::Value::String(b.multiplicity.to_string());
                if let Some(m) = &b.measured {
                    v["measured"] = serde_json::to_value(m).unwrap();
                }
                v
            })
            .collect();
        let plan = self.plan.as_ref().map(|p| {
            serde_json::json!({
                "discarded": p.discarded.iter().map(|(s, m)| serde_json::json!({"spin": s.to_string(), "multiplicity": m.to_string()})).collect::<Vec<_>>(),
                "discard_cost": p.discard_cost(),
                "discard_bound": p.discard_bound(),
                "progressions": p.progressions.iter().map(|q| q.spins.iter().map(|s| s.to_string()).collect::<Vec<_>>()).collect::<Vec<_>>(),
                "dimension": p.dimension().to_string(),
            })
        });
        serde_json::json!({
            "N": self.n,
            "L": self.gap,
            "plan": plan,
            "sketch": self.sketch,
            "blocks": blocks,
            "bounds": self.bounds,
            "headline_bounds": self.headline,
            "symmetry_flags": {"Y1": "real", "iY2": "real", "Y3": "real"},
        })
    }
}

pub fn headline(n: u64) -> TripleBounds {
    let nf = n as f64;
    TripleBounds { sigma12: HEADLINE_12 * nf.powf(-1.0 / 7.0), sigma3: HEADLINE_3 * nf.powf(-3.0 / 7.0) }
}

/// Layout of the plan for one parity family without multiplicities.
pub fn sketch(n: u64) -> Result<PlanSketch> {
    if n == 0 {
        return domain("N must be positive");
    }
    let nf = n as f64;
    let half = n % 2 == 1;
    let gap = step_gap(nf).max(1);
    let two_top = n;
    // ½√N rounded up to a spin of the right parity
    let mut two_first = (nf.sqrt()).ceil() as u64;
    if two_first % 2 != n % 2 {
        two_first += 1;
    }
    let two_first = two_first.min(two_top);
    let spins_from_first = (two_top - two_first) / 2 + 1;
    let progressions = gap.min(spins_from_first);
    let longest = (two_top - two_first) / (2 * gap) + 1;
    let lambda_m = two_top as f64 / 2.0;
    let lam0 = lambda0(nf, half);
    let (branch, longest_quantities) = if lambda_m < SMALL_C2 * nf.powf(6.0 / 7.0) {
        (Branch::SmallSpin, None)
    } else if nf < N_STAR {
        (Branch::SmallN, None)
    } else {
        let lambda_1 = lambda_m - (longest - 1) as f64 * gap as f64;
        let shape = SnearbyShape {
            lambda_1,
            lambda_m,
            m: longest as usize,
            n: nf,
            gap: gap as f64,
            l: STEP_C4 * nf.powf(5.0 / 7.0),
            delta: STEP_C5 * nf.powf(-3.0 / 7.0),
        };
        (Branch::Snearby, Some(snearby_quantities(&shape)?))
    };
    Ok(PlanSketch { parity_half: half, lambda0: lam0, first_monotone: two_first as f64 / 2.0, progressions, longest, branch, longest_quantities })
}

/// The full construction for N sites. Blocks of dimension ≤ `cap` are built
/// and measured (when `measure`); above `PLAN_ONLY_ABOVE` (or with
/// `plan_only`) only the layout and bound arithmetic are reported.
pub fn construct(n: u64, cap: usize, measure: bool, plan_only: bool) -> Result<OgataReport> {
    if n == 0 {
        return domain("N must be positive");
    }
    let gap = step_gap(n as f64).max(1);
    let head = headline(n);
    if plan_only || n > PLAN_ONLY_ABOVE {
        let sk = sketch(n)?;
        let sigma12 = sk.longest_quantities.map_or(head.sigma12, |q| q.bound_12.min(head.sigma12));
        return Ok(OgataReport {
            n,
            gap,
            plan: None,
            sketch: Some(sk),
            blocks: Vec::new(),
            bounds: TripleBounds { sigma12, sigma3: head.sigma3 },
            headline: head,
        });
    }
    let n32 = u32::try_from(n).map_err(|_| NearbyError::Domain("N too large for a table".into()))?;
    let table = MultiplicityTable::new(n32);
    let entries: Vec<(Spin, BigUint)> = table.spins().map(|s| (s, table.get(s))).collect();
    let plan = decompose(&entries, n, gap, None)?;
    let mut jobs = Vec::new();
    for p in &plan.progressions {
        for (spins, m) in p.blocks() {
            jobs.push((spins.to_vec(), m.clone()));
        }
    }
    let lam0 = plan.families.first().map_or(0.0, |f| f.0);
    let blocks: Vec<BlockResult> = jobs
        .into_par_iter()
        .map(|(spins, multiplicity)| {
            let triple = big_l_step(&spins, n, lam0, cap)?;
            let measured = if measure && triple.dim() <= cap { Some(triple.measure()?) } else { None };
            Ok(BlockResult { triple, multiplicity, measured })
        })
        .collect::<Result<_>>()?;
    let sigma12 = blocks.iter().map(|b| b.triple.bounds.sigma12).fold(plan.discard_cost(), f64::max);
    let sigma3 = blocks.iter().map(|b| b.triple.bounds.sigma3).fold(0.0, f64::max);
    Ok(OgataReport { n, gap, plan: Some(plan), sketch: None, blocks, bounds: TripleBounds { sigma12, sigma3 }, headline: head })
}

/// Y_N(A) for A = c1σ1 + c2σ2 + c3σ3 + c4·I.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YMap {
    pub coefficients: [(f64, f64); 4],
    pub norm_a: f64,
    /// Σ |c_i| × (per-σ certified bound).
    pub bound: f64,
    /// 17.92 ‖A‖ N^{−1/7}.
    pub headline: f64,
    pub self_adjoint: bool,
    pub symmetric: bool,
}

/// ‖c1σ1 + c2σ2 + c3σ3 + c4 I‖ from the 2×2 singular values.
pub fn pauli_norm(c: &[C64; 4]) -> f64 {
    let h = C64::new(0.5, 0.0);
    let i = C64::new(0.0, 1.0);
    let m = [c[3] - c[2] * h, (c[0] + i * c[1]) * h, (c[0] - i * c[1]) * h, c[3] + c[2] * h];
    let fro: f64 = m.iter().map(|z| z.norm_sqr()).sum();
    let det = (m[0] * m[3] - m[1] * m[2]).norm();
    ((fro + (fro * fro - 4.0 * det * det).max(0.0).sqrt()) / 2.0).sqrt()
}

pub fn y_map(c: [C64; 4], report: &OgataReport) -> YMap {
    let b = report.bounds;
    let bound = (c[0].norm() + c[1].norm()) * b.sigma12 + c[2].norm() * b.sigma3;
    let norm_a = pauli_norm(&c);
    YMap {
        coefficients: c.map(|z| (z.re, z.im)),
        norm_a,
        bound,
        headline: Y_CONSTANT * norm_a * (report.n as f64).powf(-1.0 / 7.0),
        self_adjoint: c.iter().all(|z| z.im == 0.0),
        symmetric: c[1] == ZERO,
    }
}

/// Measured ‖T_N(A) − Y_N(A)‖ on one block.
pub fn y_block_distance(c: [C64; 4], triple: &CertifiedTriple) -> Result<f64> {
    let reference = triple.reference()?;
    let s = reference.s_op();
    let a = reference.a_op();
    let r1 = HermitianPart { op: &s, imaginary: false };
    let r2 = HermitianPart { op: &s, imaginary: true };
    let target = Combination { terms: vec![(c[0], &r1), (c[1], &r2), (c[2], &a)], dim: reference.ambient_dim };
    match &triple.data {
        TripleData::Trivial => {
            let y = Combination { terms: vec![(c[2], &a)], dim: reference.ambient_dim };
            op_norm_op(&Difference { a: &y, b: &target })
        }
        TripleData::Exchange(pair) => {
            let sd = pair.s_double.as_ref().ok_or_else(|| NearbyError::Internal("normal part missing".into()))?;
            let s2 = sd.s_op();
            let a3 = sd.a_op();
            let y1 = HermitianPart { op: &s2, imaginary: false };
            let y2 = HermitianPart { op: &s2, imaginary: true };
            let y = Combination { terms: vec![(c[0], &y1), (c[1], &y2), (c[2], &a3)], dim: reference.ambient_dim };
            op_norm_op(&Difference { a: &y, b: &target })
        }
        TripleData::Unmaterialized => domain("this triple was planned but not built"),
    }
}

// c4·I cancels in T_N(A) − Y_N(A), so it is left out of both sides.
struct Combination<'a> {
    terms: Vec<(C64, &'a dyn LinearOp)>,
    dim: usize,
}

impl LinearOp for Combination<'_> {
    fn nrows(&self) -> usize {
        self.dim
    }
    fn ncols(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|v| *v = ZERO);
        let mut t = vec![ZERO; self.dim];
        for (c, op) in &self.terms {
            op.apply(x, &mut t);
            y.iter_mut().zip(&t).for_each(|(a, b)| *a += c * b);
        }
    }
    fn apply_adjoint(&self, x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|v| *v = ZERO);
        let mut t = vec![ZERO; self.dim];
        for (c, op) in &self.terms {
            op.apply_adjoint(x, &mut t);
            y.iter_mut().zip(&t).for_each(|(a, b)| *a += c.conj() * b);
        }
    }
}

/// Exact Σ n_λ (2λ+1) for a list of entries.
pub fn entries_dimension(entries: &[(Spin, BigUint)]) -> BigUint {
    entries.iter().map(|(s, m)| m * BigUint::from(s.dim())).sum()
}

/// Convenience for tests and the CLI: multiplicity as f64 where it fits.
pub fn multiplicity_f64(m: &BigUint) -> f64 {
    m.to_f64().unwrap_or(f64::INFINITY)
}
