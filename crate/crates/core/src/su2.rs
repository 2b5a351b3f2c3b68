//! Spin representations S^λ of su(2), their shift weights, the weight
//! inequalities, and multiplicities in the N-fold tensor power of spin ½.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{domain, precondition, Result};
use crate::linalg::{ComplexMatrix, C64};

/// A spin λ, stored as the integer 2λ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Spin {
    pub two_lambda: u32,
}

impl Spin {
    pub const fn new(two_lambda: u32) -> Self {
        Spin { two_lambda }
    }

    pub const fn integer(lambda: u32) -> Self {
        Spin { two_lambda: 2 * lambda }
    }

    pub fn lambda(self) -> f64 {
        self.two_lambda as f64 / 2.0
    }

    pub fn dim(self) -> usize {
        self.two_lambda as usize + 1
    }

    pub fn is_half_integer(self) -> bool {
        self.two_lambda % 2 == 1
    }
}

impl std::fmt::Display for Spin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.two_lambda.is_multiple_of(2) {
            write!(f, "{}", self.two_lambda / 2)
        } else {
            write!(f, "{}/2", self.two_lambda)
        }
    }
}

impl std::str::FromStr for Spin {
    type Err = crate::error::NearbyError;

    /// Accepts "3/2", "1.5" or "2".
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || crate::error::NearbyError::Domain(format!("'{}' is not a spin (use 3/2, 1.5 or 2)", s));
        let two = if let Some((num, den)) = s.split_once('/') {
            let num: u32 = num.trim().parse().map_err(|_| bad())?;
            match den.trim() {
                "1" => num.checked_mul(2).ok_or_else(bad)?,
                "2" => num,
                _ => return Err(bad()),
            }
        } else {
            let x: f64 = s.parse().map_err(|_| bad())?;
            let t = 2.0 * x;
            if !(t >= 0.0) || t.fract() != 0.0 || t > u32::MAX as f64 {
                return Err(bad());
            }
            t as u32
        };
        Ok(Spin::new(two))
    }
}

// d_{λ,m} from 2λ and 2m: ((2λ−2m)(2λ+2m+2))^{1/2} / 2
fn weight_from_twos(two_lambda: i64, two_m: i64) -> f64 {
    (((two_lambda - two_m) * (two_lambda + two_m + 2)) as f64).sqrt() / 2.0
}

/// `d_{λ,m} = √((λ−m)(λ+m+1))` for `−λ ≤ m < λ`.
pub fn shift_weight(spin: Spin, two_m: i64) -> Result<f64> {
    let tl = spin.two_lambda as i64;
    if two_m < -tl || two_m >= tl {
        return domain(format!("m = {}/2 outside [-{}, {}) for spin {}", two_m, spin, spin, spin));
    }
    if (two_m - tl).rem_euclid(2) != 0 {
        return domain(format!("2m = {} and 2λ = {} differ in parity", two_m, tl));
    }
    Ok(weight_from_twos(tl, two_m))
}

/// Diagonal of S^λ(σ3) and the subdiagonal weights of S^λ(σ+), basis ordered m = −λ, …, λ.
#[derive(Clone, Debug, PartialEq)]
pub struct IrrepPair {
    pub spin: Spin,
    pub sigma3: Vec<f64>,
    pub sigma_plus_weights: Vec<f64>,
}

impl IrrepPair {
    pub fn sigma3_matrix(&self) -> ComplexMatrix {
        ComplexMatrix::diag_real(&self.sigma3)
    }

    /// Lower shift: e_k ↦ d_k e_{k+1}.
    pub fn sigma_plus_matrix(&self) -> ComplexMatrix {
        let n = self.sigma3.len();
        let mut m = ComplexMatrix::zeros(n, n);
        for (k, &d) in self.sigma_plus_weights.iter().enumerate() {
            m[(k + 1, k)] = C64::new(d, 0.0);
        }
        m
    }

    /// (S(σ1), S(σ2), S(σ3)) with σ1 = Re σ+, σ2 = Im σ+.
    pub fn pauli_images(&self) -> [ComplexMatrix; 3] {
        let (re, im) = self.sigma_plus_matrix().re_im_parts();
        [re, im, self.sigma3_matrix()]
    }
}

pub fn irrep(spin: Spin) -> IrrepPair {
    let tl = spin.two_lambda as i64;
    let sigma3 = (0..=tl).map(|k| (2 * k - tl) as f64 / 2.0).collect();
    let sigma_plus_weights = (0..tl).map(|k| weight_from_twos(tl, 2 * k - tl)).collect();
    IrrepPair { spin, sigma3, sigma_plus_weights }
}

/// Row `n` of Pascal's triangle in exact integers.
pub fn binomial_row(n: u32) -> Vec<BigUint> {
    let mut row = vec![BigUint::one()];
    for _ in 0..n {
        row = next_pascal_row(&row);
    }
    row
}

pub fn next_pascal_row(row: &[BigUint]) -> Vec<BigUint> {
    let mut next = Vec::with_capacity(row.len() + 1);
    next.push(BigUint::one());
    for w in row.windows(2) {
        next.push(&w[0] + &w[1]);
    }
    next.push(BigUint::one());
    next
}

/// Multiplicities n_λ of S^λ in the N-fold tensor power of S^{1/2}.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplicityTable {
    pub n_sites: u32,
    /// Keyed by 2λ; only spins with 2λ ≡ N (mod 2) and λ ≤ N/2 are present.
    pub entries: BTreeMap<u32, BigUint>,
}

impl MultiplicityTable {
    pub fn new(n_sites: u32) -> Self {
        Self::from_row(n_sites, &binomial_row(n_sites))
    }

    /// Build from the precomputed Pascal row `n_sites`.
    pub fn from_row(n_sites: u32, row: &[BigUint]) -> Self {
        let n = n_sites as usize;
        let mut entries = BTreeMap::new();
        // 2λ = N − 2j for j = 0..=N/2; k = λ + N/2 = N − j
        for j in 0..=n / 2 {
            let k = n - j;
            let upper = if k < n { row[k + 1].clone() } else { BigUint::zero() };
            entries.insert((n - 2 * j) as u32, &row[k] - upper);
        }
        MultiplicityTable { n_sites, entries }
    }

    pub fn get(&self, spin: Spin) -> BigUint {
        self.entries.get(&spin.two_lambda).cloned().unwrap_or_else(BigUint::zero)
    }

    /// Σ n_λ (2λ+1), which must equal 2^N.
    pub fn total_dimension(&self) -> BigUint {
        self.entries.iter().map(|(&t, n)| n * BigUint::from(t + 1)).sum()
    }

    pub fn spins(&self) -> impl Iterator<Item = Spin> + '_ {
        self.entries.keys().map(|&t| Spin::new(t))
    }
}

pub fn tensor_multiplicity(n_sites: u32, spin: Spin) -> BigUint {
    if spin.two_lambda > n_sites || !(spin.two_lambda + n_sites).is_multiple_of(2) {
        return BigUint::zero();
    }
    let row = binomial_row(n_sites);
    let k = ((spin.two_lambda + n_sites) / 2) as usize;
    let upper = row.get(k + 1).cloned().unwrap_or_else(BigUint::zero);
    &row[k] - upper
}

/// λ* = √(N+2)/2 − 1.
pub fn turning_point(n_sites: u32) -> f64 {
    ((n_sites as f64) + 2.0).sqrt() / 2.0 - 1.0
}

/// Exact comparison of λ against λ* via the sign of (2λ+2)² − (N+2).
pub fn compare_to_turning_point(spin: Spin, n_sites: u32) -> Ordering {
    let lhs = (spin.two_lambda as u64 + 2).pow(2);
    lhs.cmp(&(n_sites as u64 + 2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// d_{λ,i} ≤ λ + ½
    Max,
    /// d_{λ,i} ≤ √(2λ(M+1)) when λ − |i| ≤ M
    Edge,
    /// d_{λ,i} − d_{μ,i} ≤ √(2λL)
    Diff,
    /// d_{λ,i} − d_{μ,i} + C·max(d_{λ,i}, d_{μ,i}) ≤ max(√λ·2L/√l + C(λ+½), √(2λL) + C√(2λ(l+1)))
    DiffOrEdge,
    /// d_{λ,i}² − d_{μ,i}² ≤ 2λL
    SqDiff,
    /// ‖[S^λ(σ+)*, S^λ(σ+)]‖ = 2λ
    SelfComm,
}

/// Parameters of a weight inequality. Only the fields the chosen kind reads
/// are checked; `mu` and `two_i` default to unconstrained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundParams {
    pub lambda: Spin,
    pub mu: Option<Spin>,
    pub two_i: Option<i64>,
    /// Spin gap bound L.
    pub gap: f64,
    /// Edge distance bound M.
    pub edge: f64,
    /// Split parameter l > 0.
    pub l: f64,
    /// Rotation coefficient C ≥ 0.
    pub c: f64,
}

impl BoundParams {
    pub fn new(lambda: Spin) -> Self {
        BoundParams { lambda, mu: None, two_i: None, gap: 0.0, edge: 0.0, l: 1.0, c: 0.0 }
    }
}

fn check_index(p: &BoundParams) -> Result<()> {
    let tl = p.lambda.two_lambda as i64;
    if let Some(mu) = p.mu {
        if mu.two_lambda > p.lambda.two_lambda {
            return precondition(format!("μ = {} exceeds λ = {}", mu, p.lambda));
        }
        if (tl - mu.two_lambda as i64) % 2 != 0 {
            return precondition("λ − μ is not an integer");
        }
    }
    if let Some(ti) = p.two_i {
        let bound = p.mu.map_or(tl, |m| m.two_lambda as i64);
        if ti.abs() > bound {
            return precondition(format!("|i| = {}/2 exceeds μ", ti.abs()));
        }
        if (tl - ti).rem_euclid(2) != 0 {
            return precondition("λ − i is not an integer");
        }
    }
    Ok(())
}

fn check_gap(p: &BoundParams) -> Result<()> {
    if !(p.gap >= 0.0) {
        return precondition(format!("gap L = {} must be nonnegative", p.gap));
    }
    if let Some(mu) = p.mu {
        if p.lambda.lambda() - mu.lambda() > p.gap {
            return precondition(format!("λ − μ = {} exceeds L = {}", p.lambda.lambda() - mu.lambda(), p.gap));
        }
    }
    Ok(())
}

/// Right-hand side of the chosen weight inequality.
pub fn weight_bound(kind: BoundKind, p: &BoundParams) -> Result<f64> {
    let lam = p.lambda.lambda();
    match kind {
        BoundKind::Max => {
            check_index(p)?;
            Ok(lam + 0.5)
        }
        BoundKind::Edge => {
            check_index(p)?;
            if !(p.edge >= 0.0) {
                return precondition(format!("M = {} must be nonnegative", p.edge));
            }
            if let Some(ti) = p.two_i {
                let dist = lam - (ti.abs() as f64) / 2.0;
                if dist > p.edge {
                    return precondition(format!("λ − |i| = {} exceeds M = {}", dist, p.edge));
                }
            }
            Ok((2.0 * lam * (p.edge + 1.0)).sqrt())
        }
        BoundKind::Diff => {
            check_index(p)?;
            check_gap(p)?;
            Ok((2.0 * lam * p.gap).sqrt())
        }
        BoundKind::DiffOrEdge => {
            check_index(p)?;
            check_gap(p)?;
            if !(p.l > 0.0) {
                return precondition(format!("l = {} must be positive", p.l));
            }
            if !(p.c >= 0.0) {
                return precondition(format!("C = {} must be nonnegative", p.c));
            }
            let first = lam.sqrt() * 2.0 * p.gap / p.l.sqrt() + p.c * (lam + 0.5);
            let second = (2.0 * lam * p.gap).sqrt() + p.c * (2.0 * lam * (p.l + 1.0)).sqrt();
            Ok(first.max(second))
        }
        BoundKind::SqDiff => {
            check_index(p)?;
            check_gap(p)?;
            Ok(2.0 * lam * p.gap)
        }
        BoundKind::SelfComm => Ok(2.0 * lam),
    }
}

/// d_{λ,i} extended by 0 at i = λ (the top of the ladder), as used when
/// comparing two spins at a common index.
pub fn weight_or_zero(spin: Spin, two_i: i64) -> f64 {
    let tl = spin.two_lambda as i64;
    if two_i >= tl || two_i < -tl {
        0.0
    } else {
        weight_from_twos(tl, two_i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{normality_defect, op_norm};
    use approx::assert_relative_eq;

    #[test]
    fn spins_parse() {
        assert_eq!("3/2".parse::<Spin>().unwrap(), Spin::new(3));
        assert_eq!("1.5".parse::<Spin>().unwrap(), Spin::new(3));
        assert_eq!("2".parse::<Spin>().unwrap(), Spin::new(4));
        assert_eq!("4/1".parse::<Spin>().unwrap(), Spin::new(8));
        for bad in ["1/3", "-1", "0.25", "x", "1/"] {
            assert!(bad.parse::<Spin>().is_err(), "{}", bad);
        }
        for t in 0..9 {
            assert_eq!(Spin::new(t).to_string().parse::<Spin>().unwrap(), Spin::new(t));
        }
    }

    #[test]
    fn shift_weight_examples() {
        assert_eq!(shift_weight(Spin::new(1), -1).unwrap(), 1.0);
        for t in 1..20u32 {
            let s = Spin::new(t);
            let w = shift_weight(s, -(t as i64)).unwrap();
            assert_relative_eq!(w, (t as f64).sqrt(), max_relative = 1e-14);
        }
        assert_relative_eq!(shift_weight(Spin::integer(2), 0).unwrap(), 6f64.sqrt(), max_relative = 1e-15);
        assert!(shift_weight(Spin::integer(2), 4).is_err());
        assert!(shift_weight(Spin::integer(2), 1).is_err());
        assert!(shift_weight(Spin::integer(2), -6).is_err());
    }

    #[test]
    fn irrep_examples() {
        let h = irrep(Spin::new(1));
        assert_eq!(h.sigma3, vec![-0.5, 0.5]);
        assert_eq!(h.sigma_plus_weights, vec![1.0]);
        let one = irrep(Spin::integer(1));
        assert_eq!(one.sigma3, vec![-1.0, 0.0, 1.0]);
        assert_relative_eq!(one.sigma_plus_weights[0], 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(one.sigma_plus_weights[1], 2f64.sqrt(), max_relative = 1e-15);
        let zero = irrep(Spin::new(0));
        assert_eq!(zero.sigma3, vec![0.0]);
        assert!(zero.sigma_plus_weights.is_empty());
    }

    #[test]
    fn irrep_norms_equal_lambda() {
        for t in 1..14u32 {
            let p = irrep(Spin::new(t));
            let lam = t as f64 / 2.0;
            for m in p.pauli_images() {
                assert_relative_eq!(op_norm(&m).unwrap(), lam, max_relative = 1e-12);
            }
            assert_relative_eq!(normality_defect(&p.sigma_plus_matrix()).unwrap(), 2.0 * lam, max_relative = 1e-12);
        }
    }

    #[test]
    fn multiplicity_examples() {
        assert_eq!(tensor_multiplicity(3, Spin::new(1)), BigUint::from(2u32));
        assert_eq!(tensor_multiplicity(3, Spin::new(3)), BigUint::from(1u32));
        assert_eq!(tensor_multiplicity(2, Spin::new(0)), BigUint::from(1u32));
        assert_eq!(tensor_multiplicity(4, Spin::new(3)), BigUint::zero());
        assert_eq!(tensor_multiplicity(4, Spin::new(10)), BigUint::zero());
        let t = MultiplicityTable::new(3);
        assert_eq!(t.entries.len(), 2);
        assert_eq!(t.total_dimension(), BigUint::from(8u32));
    }

    #[test]
    fn turning_point_examples() {
        assert_eq!(turning_point(2), 0.0);
        assert_relative_eq!(turning_point(1000), 1002f64.sqrt() / 2.0 - 1.0, max_relative = 1e-15);
        assert!((turning_point(1000) - 14.8272).abs() < 1e-4);
        assert_eq!(turning_point(14), 1.0);
        assert_eq!(compare_to_turning_point(Spin::integer(1), 14), Ordering::Equal);
        let t = MultiplicityTable::new(14);
        assert_eq!(t.get(Spin::integer(1)), t.get(Spin::integer(2)));
    }

    #[test]
    fn weight_bound_examples() {
        let p = BoundParams::new(Spin::integer(10));
        assert_eq!(weight_bound(BoundKind::Max, &p).unwrap(), 10.5);
        let q = BoundParams { gap: 2.0, ..p };
        assert_eq!(weight_bound(BoundKind::SqDiff, &q).unwrap(), 40.0);
        assert_eq!(weight_bound(BoundKind::SelfComm, &BoundParams::new(Spin::integer(7))).unwrap(), 14.0);
    }

    #[test]
    fn weight_bound_rejects_bad_hypotheses() {
        let base = BoundParams::new(Spin::integer(10));
        let too_far = BoundParams { mu: Some(Spin::integer(5)), gap: 2.0, ..base };
        assert!(weight_bound(BoundKind::Diff, &too_far).is_err());
        let mu_big = BoundParams { mu: Some(Spin::integer(11)), gap: 5.0, ..base };
        assert!(weight_bound(BoundKind::SqDiff, &mu_big).is_err());
        let edge = BoundParams { two_i: Some(0), edge: 3.0, ..base };
        assert!(weight_bound(BoundKind::Edge, &edge).is_err());
        let no_l = BoundParams { l: 0.0, ..base };
        assert!(weight_bound(BoundKind::DiffOrEdge, &no_l).is_err());
        let parity = BoundParams { two_i: Some(1), ..base };
        assert!(weight_bound(BoundKind::Max, &parity).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn weights_on_the_circle(t in 1u32..200) {
                let p = irrep(Spin::new(t));
                let lam = t as f64 / 2.0;
                for (k, &d) in p.sigma_plus_weights.iter().enumerate() {
                    let m = p.sigma3[k];
                    let lhs = (m + 0.5).powi(2) + d * d;
                    prop_assert!((lhs - (lam + 0.5).powi(2)).abs() <= 1e-10 * (lam + 1.0).powi(2));
                    prop_assert!(d > 0.0 && d <= lam + 0.5);
                }
                let first = p.sigma_plus_weights[0];
                let last = *p.sigma_plus_weights.last().unwrap();
                prop_assert!((first - (2.0 * lam).sqrt()).abs() < 1e-12 * lam.max(1.0));
                prop_assert!((last - (2.0 * lam).sqrt()).abs() < 1e-12 * lam.max(1.0));
            }

            #[test]
            fn dimension_conservation(n in 1u32..300) {
                let t = MultiplicityTable::new(n);
                prop_assert_eq!(t.total_dimension(), BigUint::one() << n as usize);
                for s in t.spins() {
                    prop_assert_eq!(s.two_lambda % 2, n % 2);
                }
            }
        }
    }
}
