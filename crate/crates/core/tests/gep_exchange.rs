use nearby::gep::{exchange_process, window_bounds};
use nearby::observables::{commuting_pair_check, Part};
use nearby::suite::{gep_cases, Scale, DEFAULT_SEED};

#[test]
fn random_families_commute_after_exchange() {
    for (family, plan) in gep_cases(Scale::Quick, DEFAULT_SEED + 1) {
        let pair = exchange_process(&family, &plan, true).unwrap();
        let m = pair.measure().unwrap();
        let tol = 1e-10 * (1.0 + pair.bounds.s_norm + 1.0);
        assert!(m.commutator_a_s_prime <= tol, "{:?}", m);
        assert!(m.commutator_a_s_double.unwrap() <= tol, "{:?}", m);
        assert!(m.a_prime_drift.unwrap() <= 1e-12, "{:?}", m);
        let windows = plan.windows();
        let diam = windows.iter().map(|w| w.diam()).fold(0.0, f64::max);
        assert!(m.a_distance <= diam + 1e-12, "{:?}", m);
        let gd = windows.iter().zip(&plan.n).map(|(w, &n)| window_bounds(&family, w, n)).map(|b| b.g.max(b.d)).fold(0.0, f64::max);
        assert!(m.s_distance <= gd + tol, "{:?}", m);
        for part in [Part::Real, Part::Imag] {
            let c = commuting_pair_check(&pair, part, 8).unwrap();
            assert!(c.holds(), "{:?}", c);
        }
    }
}

#[test]
fn exchange_without_normal_keeps_s_prime_only() {
    let (family, plan) = gep_cases(Scale::Quick, DEFAULT_SEED).remove(0);
    let pair = exchange_process(&family, &plan, false).unwrap();
    assert!(pair.s_double.is_none());
    assert_eq!(pair.s_prime.ambient_dim, family.dim());
    assert!(pair.measure().unwrap().s_double_distance.is_none());
}
