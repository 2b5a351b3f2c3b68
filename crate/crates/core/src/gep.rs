//! The gradual exchange process. Nested families of diagonal and weighted
//! shift blocks are cut into spectral windows; inside each window the blocks
//! are braided by gradual exchanges and a few weights are dropped, which
//! yields an exactly commuting pair (A′, S′) and a normal S″.

use std::collections::HashSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::berg::{cubic_on_segment, CUBIC_C};
use crate::error::{domain, NearbyError, Result};
use crate::exchange::{gradual_exchange_mut, ExchangeWindow};
use crate::linalg::{op_norm_op, Commutator, Difference, SelfCommutator};
use crate::shifts::{Chain, ShiftSystem};

/// One block: positions `lo..=lo + weights.len()` of the shared grid, with
/// `weights[k]` the arrow from position `lo + k` to `lo + k + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub lo: usize,
    pub weights: Vec<f64>,
}

impl Block {
    pub fn hi(&self) -> usize {
        self.lo + self.weights.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Blocks ordered by nesting: block r's positions lie inside block r+1's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockFamily {
    pub alpha: Vec<f64>,
    pub blocks: Vec<Block>,
}

/// `[lo, hi)` or `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub closed: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, closed: true }
    }

    pub fn half_open(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, closed: false }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && (x < self.hi || (self.closed && x == self.hi))
    }

    pub fn diam(&self) -> f64 {
        self.hi - self.lo
    }
}

impl BlockFamily {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return domain("a family needs at least one block");
        }
        if self.alpha.iter().any(|a| !a.is_finite()) || self.alpha.windows(2).any(|w| w[0] >= w[1]) {
            return domain("the diagonal grid must be finite and strictly increasing");
        }
        for (r, b) in self.blocks.iter().enumerate() {
            if b.hi() >= self.alpha.len() {
                return domain(format!("block {} reaches position {} beyond the grid of {}", r + 1, b.hi(), self.alpha.len()));
            }
            if b.weights.iter().any(|w| !w.is_finite()) {
                return domain(format!("block {} has a non-finite weight", r + 1));
            }
        }
        for (r, w) in self.blocks.windows(2).enumerate() {
            if w[1].lo > w[0].lo || w[1].hi() < w[0].hi() {
                return domain(format!("block {} is not nested inside block {}", r + 1, r + 2));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.m());
        let mut acc = 0;
        for b in &self.blocks {
            off.push(acc);
            acc += b.len();
        }
        off
    }

    /// |c_i^r| with 0 where block r has no arrow out of position i.
    pub fn weight(&self, r: usize, i: usize) -> f64 {
        let b = &self.blocks[r];
        if i >= b.lo && i < b.hi() {
            b.weights[i - b.lo].abs()
        } else {
            0.0
        }
    }

    /// Grid positions of σ(A) ∩ I as an inclusive range.
    pub fn positions_in(&self, iv: &Interval) -> Option<(usize, usize)> {
        let top = self.blocks.last().unwrap();
        let inside: Vec<usize> = (top.lo..=top.hi()).filter(|&i| iv.contains(self.alpha[i])).collect();
        Some((*inside.first()?, *inside.last()?))
    }

    /// 0-based r0: first block whose range covers the window positions.
    fn r0(&self, p_lo: usize, p_hi: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.lo <= p_lo && b.hi() >= p_hi)
    }

    /// Direct sum of the blocks with A on the diagonal; chain r is block r.
    pub fn to_system(&self) -> Result<ShiftSystem> {
        self.validate()?;
        let blocks: Vec<(Vec<f64>, Vec<f64>)> =
            self.blocks.iter().map(|b| (self.alpha[b.lo..=b.hi()].to_vec(), b.weights.clone())).collect();
        ShiftSystem::from_blocks(&blocks)
    }

    /// (block, grid position) for every column of `to_system`.
    fn column_info(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().enumerate().flat_map(|(r, b)| (b.lo..=b.hi()).map(move |i| (r, i))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WindowBounds {
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "T")]
    pub t: f64,
    /// 1-based, `None` when no block covers the window.
    pub r0: Option<usize>,
    pub m_k: usize,
    pub count: usize,
}

/// (G_I, D_I, T_I) for a window, plus r0, m_k and #σ(A)∩I.
pub fn window_bounds(family: &BlockFamily, iv: &Interval, n_i: usize) -> WindowBounds {
    let empty = WindowBounds { g: 0.0, d: 0.0, t: 0.0, r0: None, m_k: 0, count: 0 };
    let Some((p_lo, p_hi)) = family.positions_in(iv) else { return empty };
    let count = p_hi - p_lo + 1;
    let Some(r0) = family.r0(p_lo, p_hi) else { return WindowBounds { count, ..empty } };
    let m = family.m();
    let step = PI / (2.0 * n_i.max(1) as f64);
    let (mut g, mut d, mut t) = (0.0_f64, 0.0_f64, 0.0_f64);
    for i in p_lo..=p_hi {
        d = d.max(family.weight(r0, i));
        for r in r0..m - 1 {
            let (x, y) = (family.weight(r, i), family.weight(r + 1, i));
            g = g.max((y - x).abs() + step * x.max(y));
            t = t.max((y * y - x * x).abs());
        }
    }
    WindowBounds { g, d, t: t / n_i.max(1) as f64, r0: Some(r0 + 1), m_k: m - r0, count }
}

/// Required #σ(A)∩I for `m_k` braided blocks at exchange length `n`.
pub fn required_count(m_k: usize, n: usize) -> usize {
    let braid = (2 * m_k as i64 - 3) * (n as i64 + 1) + 4;
    braid.max(3) as usize
}

/// 1-based window positions where the slot-1 weight is dropped.
pub fn drop_positions(m_k: usize, n: usize) -> Vec<usize> {
    let mut out = vec![2];
    for r in 2..m_k {
        out.push(4 + (n + 1) * (2 * r - 3));
    }
    if m_k >= 2 {
        out.push(3 + (n + 1) * (2 * m_k - 3));
    }
    out
}

/// Slot pairs (higher, lower) exchanged over U_j, 1-based.
pub fn braid_pairs(m_k: usize, j: usize) -> Vec<(usize, usize)> {
    if j < m_k {
        (0..j).step_by(2).map(|e| (j + 1 - e, j - e)).collect()
    } else {
        (0..2 * m_k - j - 2).step_by(2).map(|e| (2 * m_k - j - 1 - e, 2 * m_k - j - 2 - e)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExchangeRecord {
    pub j: usize,
    pub upper_slot: usize,
    pub lower_slot: usize,
}

/// Outcome of one window: F and F^c as frame columns, dropped columns and
/// the exchanges performed.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowOutcome {
    pub f: Vec<usize>,
    pub f_c: Vec<usize>,
    pub drops: Vec<usize>,
    pub exchanges: Vec<ExchangeRecord>,
    pub bounds: WindowBounds,
    pub positions: (usize, usize),
}

struct Layout {
    offsets: Vec<usize>,
    info: Vec<(usize, usize)>,
}

impl Layout {
    fn new(family: &BlockFamily) -> Self {
        Layout { offsets: family.offsets(), info: family.column_info() }
    }

    fn col(&self, family: &BlockFamily, r: usize, i: usize) -> usize {
        self.offsets[r] + i - family.blocks[r].lo
    }
}

fn process_window(state: &mut ShiftSystem, family: &BlockFamily, layout: &Layout, iv: &Interval, n: usize) -> Result<WindowOutcome> {
    let bounds = window_bounds(family, iv, n);
    let Some((p_lo, p_hi)) = family.positions_in(iv) else {
        return domain(format!("window [{}, {}] contains no spectrum", iv.lo, iv.hi));
    };
    let r0 = bounds.r0.ok_or_else(|| NearbyError::Internal("the largest block must cover every window".into()))? - 1;
    let mk = bounds.m_k;
    let need = required_count(mk, n);
    if bounds.count < need {
        return domain(format!(
            "window [{}, {}] holds {} spectral points but m_k = {} and N = {} need {} (deficit {})",
            iv.lo,
            iv.hi,
            bounds.count,
            mk,
            n,
            need,
            need - bounds.count
        ));
    }
    if mk >= 2 && n < 2 {
        return domain(format!("N = {} but braiding {} blocks needs N ≥ 2", n, mk));
    }
    let slot_col = |s: usize, p: usize| layout.col(family, r0 + s - 1, p_lo + p - 1);

    let mut exchanges = Vec::new();
    if mk >= 2 {
        for j in 1..=2 * mk - 3 {
            let start = 3 + (n + 1) * (j - 1);
            for (hi, lo) in braid_pairs(mk, j) {
                let loc = state.locate();
                let (cx, px) = loc[slot_col(hi, start)];
                let (cy, py) = loc[slot_col(lo, start)];
                let w = ExchangeWindow { i0: px, i1: px + n, n0: n, b_shift: py as i64 - px as i64 };
                gradual_exchange_mut(state, cx, cy, &w)?;
                exchanges.push(ExchangeRecord { j, upper_slot: hi, lower_slot: lo });
            }
        }
    }

    let loc = state.locate();
    let mut drops = Vec::new();
    for p in drop_positions(mk, n) {
        let c = slot_col(1, p);
        let (ch, pos) = loc[c];
        let chain = &mut state.chains[ch];
        if pos >= chain.weights.len() {
            return Err(NearbyError::Internal(format!("dropped column {} has no outgoing arrow", c)));
        }
        chain.weights[pos] = 0.0;
        drops.push(c);
    }

    let drop_set: HashSet<usize> = drops.iter().copied().collect();
    let mut used = HashSet::new();
    let mut f = Vec::new();
    for s in 1..=mk {
        let mut c = slot_col(s, 1);
        loop {
            f.push(c);
            if drop_set.contains(&c) {
                if !used.insert(c) {
                    return Err(NearbyError::Internal(format!("two orbits end at column {}", c)));
                }
                break;
            }
            let (ch, pos) = loc[c];
            let next = state.chains[ch].indices.get(pos + 1).copied();
            match next {
                Some(nx) if layout.info[nx].1 <= p_hi => c = nx,
                _ => return Err(NearbyError::Internal(format!("orbit from slot {} leaves the window undropped", s))),
            }
        }
    }
    let f_set: HashSet<usize> = f.iter().copied().collect();
    let mut f_c: Vec<usize> = (r0..family.m())
        .flat_map(|r| (p_lo..=p_hi).map(move |i| (r, i)))
        .map(|(r, i)| layout.col(family, r, i))
        .filter(|c| !f_set.contains(c))
        .collect();
    for r in 0..r0 {
        let b = &family.blocks[r];
        let (lo, hi) = (b.lo.max(p_lo), b.hi().min(p_hi));
        if lo > hi {
            continue;
        }
        let cols = (lo..=hi).map(|i| layout.col(family, r, i));
        if b.lo <= p_lo {
            f.extend(cols);
        } else {
            f_c.extend(cols);
        }
    }
    Ok(WindowOutcome { f, f_c, drops, exchanges, bounds, positions: (p_lo, p_hi) })
}

fn signed_system(family: &BlockFamily) -> Result<ShiftSystem> {
    let mut sys = family.to_system()?;
    for c in 0..sys.chains.len() {
        sys.normalize_signs(c);
    }
    Ok(sys)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowProjection {
    pub outcome: WindowOutcome,
    /// S′ for this single window; columns refer to its rotated frame.
    pub system: ShiftSystem,
}

/// Single closed window [a, b] with exchange length `n0`.
pub fn window_projection(family: &BlockFamily, a: f64, b: f64, n0: usize) -> Result<WindowProjection> {
    if !(a < b) {
        return domain("window needs a < b");
    }
    let mut sys = signed_system(family)?;
    let layout = Layout::new(family);
    let outcome = process_window(&mut sys, family, &layout, &Interval::closed(a, b), n0)?;
    Ok(WindowProjection { outcome, system: sys })
}

/// Cut points a_1 < … < a_{n0} and one exchange length per window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub cuts: Vec<f64>,
    pub n: Vec<usize>,
}

impl WindowPlan {
    pub fn uniform(cuts: Vec<f64>, n: usize) -> Self {
        let k = cuts.len().saturating_sub(1);
        WindowPlan { cuts, n: vec![n; k] }
    }

    pub fn windows(&self) -> Vec<Interval> {
        let last = self.cuts.len() - 1;
        self.cuts.windows(2).enumerate().map(|(k, w)| Interval { lo: w[0], hi: w[1], closed: k + 1 == last }).collect()
    }

    pub fn validate(&self, family: &BlockFamily) -> Result<()> {
        if self.cuts.len() < 2 {
            return domain("a plan needs at least two cut points");
        }
        if self.cuts.windows(2).any(|w| !(w[0] < w[1])) {
            return domain("cut points must be strictly increasing");
        }
        if self.n.len() != self.cuts.len() - 1 {
            return domain(format!("{} windows but {} exchange lengths", self.cuts.len() - 1, self.n.len()));
        }
        let top = family.blocks.last().unwrap();
        let (lo, hi) = (family.alpha[top.lo], family.alpha[top.hi()]);
        if lo < self.cuts[0] || hi > *self.cuts.last().unwrap() {
            return domain(format!("spectrum [{}, {}] is not covered by the windows", lo, hi));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowReport {
    pub a_k: f64,
    pub a_k1: f64,
    pub r0: Option<usize>,
    pub m_k: usize,
    #[serde(rename = "N_k")]
    pub n_k: usize,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub count: usize,
    pub exchanges: usize,
    pub drops: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GepBounds {
    pub a_distance: f64,
    pub s_distance: f64,
    pub s_defect_in: f64,
    pub s_prime_defect: f64,
    pub s_double_distance: f64,
    pub s_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GepMeasured {
    pub a_distance: f64,
    pub s_distance: f64,
    pub s_prime_defect: f64,
    pub commutator_a_s_prime: f64,
    pub s_double_distance: Option<f64>,
    pub commutator_a_s_double: Option<f64>,
    pub s_double_defect: Option<f64>,
    pub a_prime_drift: Option<f64>,
}

/// A′ lives on the chain diagonals of `s_prime` (and `s_double`).
#[derive(Clone, Debug)]
pub struct CommutingPair {
    pub original: ShiftSystem,
    pub s_prime: ShiftSystem,
    pub s_double: Option<ShiftSystem>,
    pub levels: Vec<f64>,
    pub windows: Vec<WindowReport>,
    pub bounds: GepBounds,
    pub outcomes: Vec<WindowOutcome>,
}

impl CommutingPair {
    /// Frame columns of E_k (0-based k over the cut points).
    pub fn spectral_columns(&self, k: usize) -> Vec<usize> {
        let v = self.levels[k];
        self.s_prime.chains.iter().flat_map(|c| c.indices.iter().zip(&c.diagonal)).filter(|(_, &d)| d == v).map(|(&i, _)| i).collect()
    }

    pub fn measure(&self) -> Result<GepMeasured> {
        let (a0, s0) = (self.original.a_op(), self.original.s_op());
        let (a1, s1) = (self.s_prime.a_op(), self.s_prime.s_op());
        let a_distance = op_norm_op(&Difference { a: &a1, b: &a0 })?;
        let s_distance = op_norm_op(&Difference { a: &s1, b: &s0 })?;
        let s_prime_defect = op_norm_op(&SelfCommutator(&s1))?;
        let commutator_a_s_prime = op_norm_op(&Commutator { a: &a1, b: &s1 })?;
        let mut out = GepMeasured {
            a_distance,
            s_distance,
            s_prime_defect,
            commutator_a_s_prime,
            s_double_distance: None,
            commutator_a_s_double: None,
            s_double_defect: None,
            a_prime_drift: None,
        };
        if let Some(s2) = &self.s_double {
            let (a2, n2) = (s2.a_op(), s2.s_op());
            out.s_double_distance = Some(op_norm_op(&Difference { a: &n2, b: &s1 })?);
            out.commutator_a_s_double = Some(op_norm_op(&Commutator { a: &a1, b: &n2 })?);
            out.s_double_defect = Some(op_norm_op(&SelfCommutator(&n2))?);
            out.a_prime_drift = Some(op_norm_op(&Difference { a: &a2, b: &a1 })?);
        }
        Ok(out)
    }

    pub fn breakdown_json(&self) -> serde_json::Value {
        serde_json::json!({ "windows": self.windows, "bounds": self.bounds })
    }
}

/// Run every window, assemble A′ from the F_k, and (optionally) replace
/// each orbit of S′ by a nearby normal.
pub fn exchange_process(family: &BlockFamily, plan: &WindowPlan, with_normal: bool) -> Result<CommutingPair> {
    family.validate()?;
    plan.validate(family)?;
    let original = signed_system(family)?;
    let mut state = original.clone();
    let layout = Layout::new(family);
    let dim = state.ambient_dim;
    let mut value = vec![f64::NAN; dim];
    let mut reports = Vec::new();
    let mut outcomes = Vec::new();
    for (k, iv) in plan.windows().iter().enumerate() {
        if family.positions_in(iv).is_none() {
            return domain(format!("window {} = [{}, {}] contains no spectrum", k + 1, iv.lo, iv.hi));
        }
        let out = process_window(&mut state, family, &layout, iv, plan.n[k])?;
        for &c in &out.f {
            value[c] = plan.cuts[k];
        }
        for &c in &out.f_c {
            value[c] = plan.cuts[k + 1];
        }
        let (p_lo, _) = out.positions;
        reports.push(WindowReport {
            a_k: plan.cuts[k],
            a_k1: plan.cuts[k + 1],
            r0: out.bounds.r0,
            m_k: out.bounds.m_k,
            n_k: plan.n[k],
            g: out.bounds.g,
            d: out.bounds.d,
            t: out.bounds.t,
            count: out.bounds.count,
            exchanges: out.exchanges.len(),
            drops: out.drops.iter().map(|&c| layout.info[c].1 - p_lo + 1).collect(),
        });
        outcomes.push(out);
    }
    if let Some(c) = value.iter().position(|v| v.is_nan()) {
        return Err(NearbyError::Internal(format!("column {} received no A′ value", c)));
    }
    for ch in &mut state.chains {
        ch.diagonal = ch.indices.iter().map(|&c| value[c]).collect();
        for (k, &w) in ch.weights.iter().enumerate() {
            if w != 0.0 && ch.diagonal[k] != ch.diagonal[k + 1] {
                return Err(NearbyError::Internal(format!("S′ arrow {} → {} crosses A′ levels", ch.indices[k], ch.indices[k + 1])));
            }
        }
    }

    let s_norm = original.max_weight();
    let s_defect_in = original.self_commutator_norm();
    let a_distance = plan.windows().iter().map(Interval::diam).fold(0.0, f64::max);
    let s_distance = reports.iter().map(|r| r.g.max(r.d)).fold(0.0, f64::max);
    let s_prime_defect = reports.iter().map(|r| (s_defect_in + r.t).max(r.d * r.d)).fold(0.0, f64::max);
    let bounds = GepBounds {
        a_distance,
        s_distance,
        s_defect_in,
        s_prime_defect,
        s_double_distance: CUBIC_C * s_norm.cbrt() * s_prime_defect.cbrt(),
        s_norm,
    };

    let s_double = if with_normal { Some(normal_part(&state)?) } else { None };
    Ok(CommutingPair { original, s_prime: state, s_double, levels: plan.cuts.clone(), windows: reports, bounds, outcomes })
}

/// Maximal nonzero-weight runs of a chain as (columns, weights, A′ value).
pub fn segments(ch: &Chain) -> Vec<(Vec<usize>, Vec<f64>, f64)> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 0..=ch.weights.len() {
        if k == ch.weights.len() || ch.weights[k] == 0.0 {
            out.push((ch.indices[start..=k].to_vec(), ch.weights[start..k].to_vec(), ch.diagonal[start]));
            start = k + 1;
        }
    }
    out
}

fn normal_part(s_prime: &ShiftSystem) -> Result<ShiftSystem> {
    let mut log = s_prime.rotation_log.clone();
    let mut chains = Vec::new();
    for ch in &s_prime.chains {
        if ch.is_closed() {
            return Err(NearbyError::Internal("S′ chains are open".into()));
        }
        for (cols, w, v) in segments(ch) {
            let (pieces, _) = cubic_on_segment(&cols, &w)?;
            log.extend(pieces.rotations);
            for mut c in pieces.chains {
                c.diagonal = vec![v; c.len()];
                chains.push(c);
            }
        }
    }
    let sys = ShiftSystem { ambient_dim: s_prime.ambient_dim, rotation_log: log, chains, phases: None };
    sys.validate()?;
    Ok(sys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{commutator_norm, normality_defect, op_norm};
    use approx::assert_relative_eq;

    fn identical(m: usize, len: usize, c: f64) -> BlockFamily {
        BlockFamily {
            alpha: (0..len).map(|i| i as f64).collect(),
            blocks: (0..m).map(|_| Block { lo: 0, weights: vec![c; len - 1] }).collect(),
        }
    }

    #[test]
    fn bounds_for_identical_blocks() {
        let fam = identical(3, 20, 0.7);
        let b = window_bounds(&fam, &Interval::closed(0.0, 19.0), 4);
        assert_relative_eq!(b.g, PI / 8.0 * 0.7, max_relative = 1e-15);
        assert_eq!(b.t, 0.0);
        assert_eq!(b.d, 0.7);
        assert_eq!((b.r0, b.m_k, b.count), (Some(1), 3, 20));
    }

    #[test]
    fn bounds_for_shifted_blocks() {
        let delta = 0.05;
        let fam = BlockFamily {
            alpha: (0..10).map(|i| i as f64).collect(),
            blocks: vec![Block { lo: 0, weights: vec![0.5; 9] }, Block { lo: 0, weights: vec![0.5 + delta; 9] }],
        };
        let b = window_bounds(&fam, &Interval::closed(0.0, 8.5), 3);
        assert_relative_eq!(b.g, delta + PI / 6.0 * 0.55, max_relative = 1e-14);
        assert_relative_eq!(b.t, (0.55f64.powi(2) - 0.25) / 3.0, max_relative = 1e-12);
        let none = window_bounds(&fam, &Interval::closed(20.0, 30.0), 3);
        assert_eq!((none.g, none.d, none.t, none.r0), (0.0, 0.0, 0.0, None));
    }

    #[test]
    fn single_block_window() {
        let fam = BlockFamily { alpha: (0..8).map(|i| i as f64).collect(), blocks: vec![Block { lo: 0, weights: vec![0.3, 0.4, 0.5, 0.6, 0.5, 0.4, 0.3] }] };
        let wp = window_projection(&fam, 2.0, 6.0, 2).unwrap();
        assert_eq!(wp.outcome.f, vec![2, 3]);
        assert_eq!(wp.outcome.f_c, vec![4, 5, 6]);
        let (_, s0) = fam.to_system().unwrap().materialize(64).unwrap();
        let (_, s1) = wp.system.materialize(64).unwrap();
        let d = op_norm(&s1.sub(&s0).unwrap()).unwrap();
        assert_relative_eq!(d, 0.6, max_relative = 1e-14);
        assert!(d <= wp.outcome.bounds.d);
    }

    #[test]
    fn two_identical_blocks_drop_schedule() {
        let n = 3;
        let fam = identical(2, 12, 1.0);
        let wp = window_projection(&fam, 0.0, 11.0, n).unwrap();
        assert_eq!(drop_positions(2, n), vec![2, 4 + n]);
        let info = fam.column_info();
        let pos: Vec<usize> = wp.outcome.drops.iter().map(|&c| info[c].1 + 1).collect();
        assert_eq!(pos, vec![2, 4 + n]);
        assert_eq!(wp.outcome.exchanges, vec![ExchangeRecord { j: 1, upper_slot: 2, lower_slot: 1 }]);
        // every dropped column is in slot 1
        assert!(wp.outcome.drops.iter().all(|&c| info[c].0 == 0));
    }

    #[test]
    fn braid_schedule_matches_the_orbit_lowering() {
        for mk in 2..7 {
            // each slot r is lowered over U_{r-1}, …, U_{2r-3}
            let mut pos: Vec<usize> = (0..=mk).collect();
            let mut at = vec![0; mk + 1];
            for (r, p) in pos.iter().enumerate() {
                at[*p] = r;
            }
            let mut reached = vec![None; mk + 1];
            reached[1] = Some(0);
            for j in 1..=2 * mk - 3 {
                for (hi, lo) in braid_pairs(mk, j) {
                    let (x, y) = (at[hi], at[lo]);
                    at.swap(hi, lo);
                    pos[x] = lo;
                    pos[y] = hi;
                }
                for r in 2..=mk {
                    if pos[r] == 1 && reached[r].is_none() {
                        reached[r] = Some(j);
                    }
                }
            }
            for r in 2..=mk {
                assert_eq!(reached[r], Some(2 * r - 3), "m_k = {} slot {}", mk, r);
            }
        }
    }

    #[test]
    fn orbits_end_at_their_drops() {
        let n = 2;
        let mk = 4;
        let len = required_count(mk, n) + 2;
        let fam = identical(mk, len, 0.9);
        let wp = window_projection(&fam, 0.0, (len - 1) as f64, n).unwrap();
        let info = fam.column_info();
        let ends: Vec<usize> = wp.outcome.drops.iter().map(|&c| info[c].1 + 1).collect();
        assert_eq!(ends, drop_positions(mk, n));
        assert_eq!(wp.outcome.f.len() + wp.outcome.f_c.len(), mk * len);
        // F is invariant: S′ maps F into F
        let (_, s) = wp.system.materialize(512).unwrap();
        let q = wp.system.frame_matrix();
        let in_f: HashSet<usize> = wp.outcome.f.iter().copied().collect();
        for &c in &wp.outcome.f {
            let img = s.matvec(&q.column(c));
            for j in 0..s.rows() {
                if !in_f.contains(&j) {
                    let coeff: crate::linalg::C64 = q.column(j).iter().zip(&img).map(|(a, b)| a.conj() * b).sum();
                    assert!(coeff.norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lower_blocks_follow_the_left_endpoint() {
        let fam = BlockFamily {
            alpha: (0..30).map(|i| i as f64).collect(),
            blocks: vec![
                Block { lo: 8, weights: vec![0.2; 12] },
                Block { lo: 0, weights: vec![0.2; 20] },
                Block { lo: 0, weights: vec![0.3; 29] },
            ],
        };
        let wp = window_projection(&fam, 5.0, 25.0, 2).unwrap();
        assert_eq!(wp.outcome.bounds.r0, Some(3));
        let info = fam.column_info();
        assert_eq!(wp.outcome.f_c.iter().filter(|&&c| info[c].0 == 0).count(), 13);
        assert_eq!(wp.outcome.f.iter().filter(|&&c| info[c].0 == 1).count(), 16);
    }

    #[test]
    fn count_deficit_is_reported() {
        let fam = identical(3, 10, 1.0);
        let err = window_projection(&fam, 0.0, 9.0, 2).unwrap_err().to_string();
        assert!(err.contains("deficit 3"), "{}", err);
    }

    #[test]
    fn single_window_composition() {
        let fam = BlockFamily { alpha: (0..9).map(|i| i as f64 / 8.0).collect(), blocks: vec![Block { lo: 0, weights: vec![0.1; 8] }] };
        let pair = exchange_process(&fam, &WindowPlan::uniform(vec![0.0, 1.0], 2), true).unwrap();
        let meas = pair.measure().unwrap();
        assert!(meas.a_distance <= 1.0);
        assert!(meas.commutator_a_s_prime < 1e-12);
        assert!(meas.commutator_a_s_double.unwrap() < 1e-12);
        assert!(meas.s_double_defect.unwrap() < 1e-12);
        assert_eq!(pair.spectral_columns(0).len() + pair.spectral_columns(1).len(), 9);
    }

    #[test]
    fn breakdown_json_fields() {
        let fam = identical(2, 24, 0.5);
        let pair = exchange_process(&fam, &WindowPlan::uniform(vec![0.0, 12.0, 23.0], 2), false).unwrap();
        let v = pair.breakdown_json();
        let w = &v["windows"][0];
        for k in ["a_k", "a_k1", "r0", "m_k", "N_k", "G", "D", "T"] {
            assert!(w.get(k).is_some(), "{}", k);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        fn random_case(seed: u64) -> (BlockFamily, WindowPlan) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = rng.gen_range(1..4);
            let n = 2;
            let per = required_count(m, n);
            let windows = rng.gen_range(1..4);
            let len = per * windows + rng.gen_range(0..per);
            let mut ranges = vec![(0usize, len - 1)];
            for _ in 1..m {
                let (lo, hi) = *ranges.last().unwrap();
                let span = hi - lo;
                let a = lo + rng.gen_range(0..=span / 3);
                let b = hi - rng.gen_range(0..=span / 3);
                ranges.push((a, b.max(a + 1)));
            }
            ranges.reverse();
            let blocks = ranges
                .iter()
                .map(|&(lo, hi)| Block {
                    lo,
                    weights: (lo..hi).map(|_| (rng.gen::<f64>() - 0.2) * 0.8).collect(),
                })
                .collect();
            let alpha: Vec<f64> = (0..len).map(|i| i as f64 / len as f64).collect();
            let mut cuts: Vec<f64> = (0..windows).map(|k| alpha[k * per]).collect();
            cuts.push(alpha[len - 1]);
            (BlockFamily { alpha, blocks }, WindowPlan::uniform(cuts, n))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(500))]

            #[test]
            fn commuting_pair_invariants(seed in any::<u64>()) {
                let (fam, plan) = random_case(seed);
                let pair = exchange_process(&fam, &plan, true).unwrap();
                let (a0, s0) = pair.original.materialize(512).unwrap();
                let (a1, s1) = pair.s_prime.materialize(512).unwrap();
                let (a2, s2) = pair.s_double.as_ref().unwrap().materialize(512).unwrap();
                let scale = 1.0 + pair.bounds.s_norm + a0.max_abs();
                prop_assert!(commutator_norm(&a1, &s1).unwrap() <= 1e-10 * scale);
                prop_assert!(commutator_norm(&a1, &s2).unwrap() <= 1e-10 * scale);
                prop_assert!(normality_defect(&s2).unwrap() <= 1e-10 * scale * scale);
                prop_assert!(a2.sub(&a1).unwrap().max_abs() <= 1e-12);
                let b = pair.bounds;
                prop_assert!(op_norm(&a1.sub(&a0).unwrap()).unwrap() <= b.a_distance + 1e-12);
                prop_assert!(op_norm(&s1.sub(&s0).unwrap()).unwrap() <= b.s_distance + 1e-10);
                prop_assert!(normality_defect(&s1).unwrap() <= b.s_prime_defect + 1e-10);
                prop_assert!(op_norm(&s2.sub(&s1).unwrap()).unwrap() <= b.s_double_distance + 1e-10);
                prop_assert!(s1.max_imag_abs() == 0.0 && s2.max_imag_abs() == 0.0 && a1.max_imag_abs() == 0.0);
            }
        }
    }
}
