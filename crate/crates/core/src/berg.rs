//! Nearby normal matrices for almost normal bilateral weighted shifts:
//! level-set rounding followed by exchanges between neighbouring levels.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{domain, precondition, NearbyError, Result};
use crate::linalg::{op_norm_op, Difference, LinearOp, SelfCommutator, C64, ONE};
use crate::shifts::{phase_normalize, Chain, Rotation, ShiftSystem, WeightedShift};

/// Cubic-mode constants: rescaled norm r, threshold M0 and the resulting constant.
pub const CUBIC_R: f64 = 0.162;
pub const CUBIC_M0: f64 = 15.937;
pub const CUBIC_C: f64 = 5.3308;
pub const SIGMA_R: f64 = 0.2897;
pub const SIGMA_M0: f64 = 10.762;
pub const SIGMA_C: f64 = 4.8573;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BergMode {
    Grid { m: u64 },
    Cubic,
    Sigma { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BergCertificate {
    pub mode: BergMode,
    #[serde(rename = "M")]
    pub m: Option<u64>,
    #[serde(rename = "M0")]
    pub m0: Option<f64>,
    pub r: Option<f64>,
    pub sigma: Option<f64>,
    pub bound: f64,
    pub measured: f64,
    pub defect_in: f64,
    pub defect_out: f64,
    pub orbit_magnitudes: Vec<f64>,
}

impl BergCertificate {
    pub fn holds(&self) -> bool {
        self.measured <= self.bound
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// A system of closed orbits, each of constant weight magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalShiftSystem {
    pub system: ShiftSystem,
    /// Grid spacing is 1/M (scaled back in the optimized modes); `None` when no grid was used.
    pub m: Option<u64>,
}

impl NormalShiftSystem {
    pub fn orbit_magnitudes(&self) -> Vec<f64> {
        self.system.chains.iter().map(|c| c.max_weight()).collect()
    }

    pub fn orbit_count(&self) -> usize {
        self.system.chains.len()
    }

    /// Each orbit closed and of constant magnitude (relative tolerance `tol`).
    pub fn check_structure(&self, tol: f64) -> Result<()> {
        for (id, ch) in self.system.chains.iter().enumerate() {
            let Some(c) = ch.closing else {
                return Err(NearbyError::Internal(format!("orbit {} is not closed", id)));
            };
            let m = c.norm();
            if ch.weights.iter().any(|w| (w.abs() - m).abs() > tol * m.max(1.0)) {
                return Err(NearbyError::Internal(format!("orbit {} has unequal weight magnitudes", id)));
            }
        }
        Ok(())
    }
}

/// Rotations, orbits and sign/phase data for one cyclic segment living on
/// the given frame columns.
#[derive(Clone, Debug, Default)]
pub struct BergPieces {
    pub rotations: Vec<Rotation>,
    pub chains: Vec<Chain>,
    /// Non-real phase per column (only for non-real input); real signs are in `rotations`.
    pub phases: Option<Vec<(usize, C64)>>,
}

/// Core construction on a cycle `cols[0] → cols[1] → … → cols[n−1] → cols[0]`
/// with arrow weights `arrows[k]` out of `cols[k]`. No hypothesis check.
pub fn construct_on_columns(cols: &[usize], arrows: &[C64], m: u64) -> Result<BergPieces> {
    let n = cols.len();
    if n == 0 || arrows.len() != n {
        return domain("a cycle needs one arrow per column");
    }
    if m < 4 || m % 2 == 1 {
        return domain(format!("M = {} must be an even integer ≥ 4", m));
    }
    let mags: Vec<f64> = arrows.iter().map(|c| c.norm()).collect();
    let smax = mags.iter().copied().fold(0.0, f64::max);
    let smin = mags.iter().copied().fold(f64::INFINITY, f64::min);

    if (n as u64) <= 2 * m {
        let mid = (smax + smin) / 2.0;
        return Ok(single_orbit(cols, arrows, n - 1, &vec![mid; n]));
    }

    let mu = m as usize;
    let k_tilde = mags.iter().position(|&x| x == smax).unwrap();
    let d = n % mu;
    let start = (k_tilde + n - d) % n;
    // interval sizes in cycle order from `start`: M + d, then M each
    let mut bounds = vec![0, mu + d];
    while *bounds.last().unwrap() < n {
        bounds.push(bounds.last().unwrap() + mu);
    }
    let mf = m as f64;
    let levels: Vec<u64> = bounds
        .windows(2)
        .map(|w| {
            let lo = (w[0]..w[1]).map(|t| mags[(start + t) % n]).fold(f64::INFINITY, f64::min);
            ((smax - lo) * mf).floor().max(0.0) as u64
        })
        .collect();
    let q = levels.len();
    for j in 0..q {
        let (x, y) = (levels[j], levels[(j + 1) % q]);
        if x.abs_diff(y) > 1 {
            return precondition(format!(
                "neighbouring interval levels {} and {} differ by more than one grid step; the weights vary too fast for M = {}",
                x, y, m
            ));
        }
    }
    let value = |r: u64| (smax - r as f64 / mf).max(0.0);
    let r_low = *levels.iter().max().unwrap();
    let j_low = levels.iter().position(|&r| r == r_low).unwrap();
    let t_low = bounds[j_low];

    // cycle order starting just after the residual-phase arrow
    let order: Vec<usize> = (0..n).map(|u| (start + t_low + 1 + u) % n).collect();
    let level_of = |k: usize| {
        let t = (k + n - start) % n;
        levels[bounds.partition_point(|&b| b <= t) - 1]
    };
    let level_seq: Vec<u64> = order.iter().map(|&k| level_of(k)).collect();
    let top = *level_seq.iter().min().unwrap();
    if r_low == top {
        let w = vec![value(top); n];
        let ord_cols: Vec<usize> = order.iter().map(|&k| cols[k]).collect();
        let ord_arrows: Vec<C64> = order.iter().map(|&k| arrows[k]).collect();
        return Ok(single_orbit(&ord_cols, &ord_arrows, n - 1, &w));
    }

    let ord_cols: Vec<usize> = order.iter().map(|&k| cols[k]).collect();
    let ord_arrows: Vec<C64> = order.iter().map(|&k| arrows[k]).collect();
    let mut pieces = phase_pieces(&ord_cols, &ord_arrows);
    let residual = {
        let ws = WeightedShift::bilateral_complex(&ord_arrows).unwrap();
        let c = phase_normalize(&ws).0.closing.unwrap();
        if c.norm() == 0.0 {
            ONE
        } else {
            c / c.norm()
        }
    };

    let k0 = (mu - 2) / 2;
    let mut active: Vec<(usize, u64)> = ord_cols.iter().copied().zip(level_seq).collect();
    for r in top..r_low {
        let b = value(r);
        let mut next = Vec::with_capacity(active.len());
        let mut i = 0;
        while i < active.len() {
            if active[i].1 != r {
                next.push(active[i]);
                i += 1;
                continue;
            }
            let end = (i..active.len()).find(|&e| active[e].1 != r).unwrap_or(active.len());
            let run: Vec<usize> = active[i..end].iter().map(|x| x.0).collect();
            let len = run.len();
            if len < mu || end == active.len() {
                return Err(NearbyError::Internal(format!("level run of length {} at level {} (M = {})", len, r, m)));
            }
            for k in 1..=k0 {
                pieces.rotations.push(Rotation::givens(run[k], run[len - k0 - 1 + k], k as f64 * PI / (2.0 * k0 as f64)));
            }
            let eta = run[k0 + 1..].to_vec();
            let el = eta.len();
            pieces.chains.push(Chain {
                indices: eta,
                diagonal: vec![0.0; el],
                weights: vec![b; el - 1],
                closing: Some(C64::new(-b, 0.0)),
            });
            next.extend(run[..=k0].iter().map(|&c| (c, r + 1)));
            i = end;
        }
        active = next;
    }
    let al = active.len();
    let low = value(r_low);
    pieces.chains.push(Chain {
        indices: active.iter().map(|x| x.0).collect(),
        diagonal: vec![0.0; al],
        weights: vec![low; al - 1],
        closing: Some(residual * low),
    });
    Ok(pieces)
}

/// Signs (as flips) or phases taking the cycle to nonnegative weights except the last arrow.
fn phase_pieces(cols: &[usize], arrows: &[C64]) -> BergPieces {
    let ws = WeightedShift::bilateral_complex(arrows).unwrap();
    let (_, ph) = phase_normalize(&ws);
    let mut pieces = BergPieces::default();
    if arrows.iter().all(|c| c.im == 0.0) {
        pieces.rotations = cols.iter().zip(&ph).filter(|(_, p)| p.re < 0.0).map(|(&c, _)| Rotation::flip(c)).collect();
    } else {
        pieces.phases = Some(cols.iter().copied().zip(ph).collect());
    }
    pieces
}

/// One closed orbit on `cols` with magnitudes `mags`; the residual phase sits on arrow `last`.
fn single_orbit(cols: &[usize], arrows: &[C64], last: usize, mags: &[f64]) -> BergPieces {
    debug_assert_eq!(last, cols.len() - 1);
    let mut pieces = phase_pieces(cols, arrows);
    let ws = WeightedShift::bilateral_complex(arrows).unwrap();
    let c = phase_normalize(&ws).0.closing.unwrap();
    let u = if c.norm() == 0.0 { ONE } else { c / c.norm() };
    let n = cols.len();
    pieces.chains.push(Chain {
        indices: cols.to_vec(),
        diagonal: vec![0.0; n],
        weights: mags[..n - 1].to_vec(),
        closing: Some(u * mags[n - 1]),
    });
    pieces
}

fn pieces_to_system(n: usize, pieces: BergPieces, scale: f64) -> ShiftSystem {
    let mut chains = pieces.chains;
    for ch in &mut chains {
        ch.weights.iter_mut().for_each(|w| *w *= scale);
        ch.closing = ch.closing.map(|c| c * scale);
    }
    let phases = pieces.phases.map(|p| {
        let mut v = vec![ONE; n];
        p.into_iter().for_each(|(c, z)| v[c] = z);
        v
    });
    ShiftSystem { ambient_dim: n, rotation_log: pieces.rotations, chains, phases }
}

fn zero_system(n: usize) -> ShiftSystem {
    let chain = Chain { indices: (0..n).collect(), diagonal: vec![0.0; n], weights: vec![0.0; n - 1], closing: Some(C64::new(0.0, 0.0)) };
    ShiftSystem { ambient_dim: n, rotation_log: Vec::new(), chains: vec![chain], phases: None }
}

/// (||N − S||, ||[N*, N]||) measured matrix-free.
pub fn measure(ws: &WeightedShift, n: &ShiftSystem) -> Result<(f64, f64)> {
    let s = as_bilateral(ws).to_system();
    let (no, so) = (n.s_op(), s.s_op());
    let dist = op_norm_op(&Difference { a: &no, b: &so })?;
    let defect = op_norm_op(&SelfCommutator(&no))?;
    Ok((dist, defect))
}

/// Unilateral shifts are read as bilateral with closing weight 0.
pub fn as_bilateral(ws: &WeightedShift) -> WeightedShift {
    WeightedShift { weights: ws.weights.clone(), closing: Some(ws.closing.unwrap_or(C64::new(0.0, 0.0))) }
}

/// Grid construction at spacing 1/M under either hypothesis
/// (defect < 1/M³, or all |c_k| ≥ σ with defect < 2σ/M²).
pub fn level_set_normalize(ws: &WeightedShift, m: u64, sigma: Option<f64>) -> Result<(NormalShiftSystem, BergCertificate)> {
    let bil = as_bilateral(ws);
    let defect = bil.self_commutator_norm();
    let mf = m as f64;
    let cubic_ok = defect < mf.powi(-3);
    let sigma_ok = sigma.is_some_and(|s| s > 0.0 && bil.arrows().iter().all(|c| c.norm() >= s) && defect < 2.0 * s / (mf * mf));
    if !cubic_ok && !sigma_ok {
        let mut msg = format!("self-commutator {:e} is not below 1/M³ = {:e}", defect, mf.powi(-3));
        if let Some(s) = sigma {
            msg += &format!(" and the σ = {} hypothesis (weights ≥ σ, defect < 2σ/M² = {:e}) fails", s, 2.0 * s / (mf * mf));
        }
        return domain(msg);
    }
    grid_construction(&bil, m, sigma, defect)
}

/// The grid construction without the hypothesis check; the adjacency of
/// interval levels is still enforced at run time.
pub fn level_set_unchecked(ws: &WeightedShift, m: u64) -> Result<(NormalShiftSystem, BergCertificate)> {
    let bil = as_bilateral(ws);
    let defect = bil.self_commutator_norm();
    grid_construction(&bil, m, None, defect)
}

fn grid_construction(bil: &WeightedShift, m: u64, sigma: Option<f64>, defect: f64) -> Result<(NormalShiftSystem, BergCertificate)> {
    let mf = m as f64;
    let n = bil.dim();
    let pieces = construct_on_columns(&(0..n).collect::<Vec<_>>(), &bil.arrows(), m)?;
    let sys = pieces_to_system(n, pieces, 1.0);
    sys.validate()?;
    let (measured, defect_out) = measure(bil, &sys)?;
    let bound = (bil.op_norm() * PI * mf / (mf - 2.0) + 2.0) / mf;
    let normal = NormalShiftSystem { system: sys, m: Some(m) };
    let cert = BergCertificate {
        mode: BergMode::Grid { m },
        m: Some(m),
        m0: None,
        r: None,
        sigma,
        bound,
        measured,
        defect_in: defect,
        defect_out,
        orbit_magnitudes: normal.orbit_magnitudes(),
    };
    Ok((normal, cert))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NearestMode {
    Cubic,
    Sigma(f64),
}

/// Even M = 2(⌈y/2⌉ − 1) for y = x^{−1/p}, saturating for tiny x.
fn grid_m(y: f64) -> u64 {
    const CAP: f64 = (1u64 << 60) as f64;
    let half = (y / 2.0).ceil().min(CAP);
    2 * (half as u64 - 1)
}

/// The optimized wrapper: rescale to norm r, pick M from the defect, fall
/// back to N = 0 above the threshold.
pub fn nearest_normal(ws: &WeightedShift, mode: NearestMode) -> Result<(NormalShiftSystem, BergCertificate)> {
    let bil = as_bilateral(ws);
    let norm = bil.op_norm();
    if norm == 0.0 {
        return domain("the zero shift has no rescaling");
    }
    let defect = bil.self_commutator_norm();
    let n = bil.dim();
    let (r, m0, c, sigma) = match mode {
        NearestMode::Cubic => (CUBIC_R, CUBIC_M0, CUBIC_C, None),
        NearestMode::Sigma(s) => {
            if !(s > 0.0) || bil.arrows().iter().any(|c| c.norm() < s) {
                return domain(format!("σ = {} is not a lower bound for the weight magnitudes", s));
            }
            (SIGMA_R, SIGMA_M0, SIGMA_C, Some(s))
        }
    };
    let scale = r / norm;
    let scaled_defect = defect * scale * scale;
    let (x, p) = match sigma {
        None => (scaled_defect, 3.0),
        Some(s) => (scaled_defect / (2.0 * s * scale), 2.0),
    };
    let bound = match sigma {
        None => c * norm.cbrt() * defect.cbrt(),
        Some(s) => c * (norm / s).sqrt() * defect.sqrt(),
    };
    let (sys, m) = if x > (m0 + 2.0).powf(-p) {
        (zero_system(n), None)
    } else {
        let m = grid_m(x.powf(-1.0 / p));
        let arrows: Vec<C64> = bil.arrows().iter().map(|c| c * scale).collect();
        let pieces = construct_on_columns(&(0..n).collect::<Vec<_>>(), &arrows, m)?;
        (pieces_to_system(n, pieces, 1.0 / scale), Some(m))
    };
    sys.validate()?;
    let (measured, defect_out) = measure(&bil, &sys)?;
    let normal = NormalShiftSystem { system: sys, m };
    let cert = BergCertificate {
        mode: match sigma {
            None => BergMode::Cubic,
            Some(s) => BergMode::Sigma { sigma: s },
        },
        m,
        m0: Some(m0),
        r: Some(r),
        sigma,
        bound,
        measured,
        defect_in: defect,
        defect_out,
        orbit_magnitudes: normal.orbit_magnitudes(),
    };
    Ok((normal, cert))
}

/// f(r, M0)·r^{−1/3}, the constant reached by the cubic mode.
pub fn cubic_constant(r: f64, m0: f64) -> f64 {
    let a = r.powf(2.0 / 3.0) * (m0 + 2.0);
    let b = (r.powf(2.0 / 3.0) * PI * m0 / (m0 - 2.0) + 2.0 / r.cbrt()) * (m0 + 2.0) / m0;
    a.max(b)
}

/// f(r, M0)/√(2r), the constant reached by the σ mode.
pub fn sigma_constant(r: f64, m0: f64) -> f64 {
    let f = (r * (m0 + 2.0)).max((r * PI * m0 / (m0 - 2.0) + 2.0) * (m0 + 2.0) / m0);
    f / (2.0 * r).sqrt()
}

/// Segment helper used by later constructions: Berg cubic mode on a real
/// open chain segment (closing weight 0), returning rotations and orbits on
/// the segment's frame columns plus the certified bound.
pub fn cubic_on_segment(cols: &[usize], weights: &[f64]) -> Result<(BergPieces, f64)> {
    let n = cols.len();
    if weights.len() + 1 != n {
        return domain("segment needs one weight fewer than columns");
    }
    let mut arrows: Vec<C64> = weights.iter().map(|&w| C64::new(w, 0.0)).collect();
    arrows.push(C64::new(0.0, 0.0));
    let ws = WeightedShift::bilateral_complex(&arrows)?;
    let norm = ws.op_norm();
    let defect = ws.self_commutator_norm();
    let bound = CUBIC_C * norm.cbrt() * defect.cbrt();
    if norm == 0.0 {
        let chain = Chain { indices: cols.to_vec(), diagonal: vec![0.0; n], weights: vec![0.0; n - 1], closing: Some(C64::new(0.0, 0.0)) };
        return Ok((BergPieces { rotations: vec![], chains: vec![chain], phases: None }, 0.0));
    }
    let scale = CUBIC_R / norm;
    let x = defect * scale * scale;
    if x > (CUBIC_M0 + 2.0).powi(-3) {
        let chain = Chain { indices: cols.to_vec(), diagonal: vec![0.0; n], weights: vec![0.0; n - 1], closing: Some(C64::new(0.0, 0.0)) };
        return Ok((BergPieces { rotations: vec![], chains: vec![chain], phases: None }, bound));
    }
    let m = grid_m(x.powf(-1.0 / 3.0));
    let scaled: Vec<C64> = arrows.iter().map(|c| c * scale).collect();
    let mut pieces = construct_on_columns(cols, &scaled, m)?;
    for ch in &mut pieces.chains {
        ch.weights.iter_mut().for_each(|w| *w /= scale);
        ch.closing = ch.closing.map(|c| c / scale);
    }
    Ok((pieces, bound))
}

/// Convenience: measured normality defect of a system's S part.
pub fn system_defect(sys: &ShiftSystem) -> Result<f64> {
    let op = sys.s_op();
    op_norm_op(&SelfCommutator(&op as &dyn LinearOp))
}
