//! Monte Carlo moment experiments: exponents, scaling law, factorization.

use gmclab::estimate::experiments::*;
use gmclab::estimate::{mc_moment, FieldFactory, MomentQuery, MomentTarget};
use gmclab::gmc::{zeta, GmcParams};
use gmclab::kernel::KernelFamily;
use gmclab::{Grid, KernelSpec};

fn fit_of(r: &SlopeReport, q: f64) -> f64 {
    r.curves.iter().find(|c| c.p == q).unwrap().fit.slope
}

#[test]
fn multifractal_slopes_follow_zeta() {
    let cfg = MultifractalConfig { cells: 1 << 13, ..MultifractalConfig::line(0.5, vec![0.5, 2.0, 3.0]) };
    let r = multifractal_experiment(&cfg, 1000, 1).unwrap();
    for (q, z) in [(0.5, 0.53125), (2.0, 1.75), (3.0, 2.25)] {
        assert!((zeta(q, 0.5) - z).abs() < 1e-12);
        let s = fit_of(&r, q);
        assert!((s - z).abs() <= 0.15, "q={q}: slope {s}");
    }
}

#[test]
fn circle_exponent_matches_line() {
    let line = multifractal_experiment(&MultifractalConfig { cells: 8192, ..MultifractalConfig::line(0.5, vec![2.0]) }, 600, 2).unwrap();
    let circ = multifractal_experiment(&MultifractalConfig::circle(0.5, vec![2.0]), 600, 2).unwrap();
    assert_eq!(circ.table.column("q").unwrap()[0], 2.0);
    assert!((fit_of(&line, 2.0) - fit_of(&circ, 2.0)).abs() <= 0.2);
}

#[test]
fn tables_are_reproducible() {
    let cfg = MultifractalConfig { cells: 2048, ts: dyadic(3, 6), ..MultifractalConfig::line(0.4, vec![2.0]) };
    let a = multifractal_experiment(&cfg, 200, 9).unwrap().table.to_csv();
    let b = multifractal_experiment(&cfg, 200, 9).unwrap().table.to_csv();
    assert_eq!(a, b);
    let c = multifractal_experiment(&cfg, 200, 10).unwrap().table.to_csv();
    assert_ne!(a, c);
}

#[test]
fn scaling_law_sides_agree_in_law() {
    let r = scaling_law_experiment(&ScalingLawConfig::default(), 2000, 7).unwrap();
    assert!(r.ks.p_value > 0.01, "{:?}", r.ks);
    assert!(r.lognormal.iter().all(|c| c.within_3se), "{:?}", r.lognormal);
    let expect_var = 2f64.ln() - 0.5;
    assert!((r.variance - expect_var).abs() < 1e-15);
}

#[test]
fn cone_scaling_law_with_omega_factor() {
    let cfg = ScalingLawConfig { family: KernelFamily::ConeOmega, ..Default::default() };
    let r = scaling_law_experiment(&cfg, 1500, 3).unwrap();
    assert!((r.variance - 2f64.ln()).abs() < 1e-15);
    assert!(r.ks.p_value > 0.01, "{:?}", r.ks);
}

#[test]
fn shifted_mass_moments_decay_at_least_at_the_bound_rate() {
    let cfg = ShiftedMassConfig { cells: 8192, ..Default::default() };
    let r = shifted_mass_experiment(&cfg, 1000, 5).unwrap();
    let c = &r.curves[0];
    assert!(!r.out_of_hypothesis);
    assert!((c.expected - 0.75).abs() < 1e-12);
    // the bound t^(zeta(p)-1) dominates: the fitted decay is never slower
    assert!(c.fit.slope >= c.expected - 0.2, "{}", c.fit.slope);
}

#[test]
#[ignore = "fitted exponent sits near zeta(p+1)-1, not zeta(p)-1; see README"]
fn shifted_mass_slope_within_tolerance_of_bound_exponent() {
    let r = shifted_mass_experiment(&ShiftedMassConfig::default(), 2000, 7).unwrap();
    let c = &r.curves[0];
    assert!((c.fit.slope - c.expected).abs() <= 0.2, "{}", c.fit.slope);
}

#[test]
fn sup_modulus_monotone_in_range_and_above_bound_rate() {
    let cfg = ModulusConfig { cells: 4608, ..Default::default() };
    let r = modulus_experiment(&cfg, 300, 6).unwrap();
    let (l, x, e) = (r.table.column("L").unwrap(), r.table.column("x").unwrap(), r.table.column("estimate").unwrap());
    for &xx in &cfg.xs {
        let row: Vec<f64> = (0..l.len()).filter(|&i| x[i] == xx).map(|i| e[i]).collect();
        assert!(row.windows(2).all(|w| w[1] >= w[0]), "x={xx}: {row:?}");
    }
    assert!(r.fit.slope >= r.expected - 0.25, "{}", r.fit.slope);
    let inf = modulus_experiment(&ModulusConfig { sup: false, ..cfg }, 300, 6).unwrap();
    let ie = inf.table.column("estimate").unwrap();
    assert!(ie.iter().zip(&e).all(|(a, b)| a <= b));
}

#[test]
#[ignore = "fitted exponent is near 1.0 at this resolution; see README"]
fn sup_modulus_slope_within_tolerance() {
    let r = modulus_experiment(&ModulusConfig::default(), 1000, 7).unwrap();
    assert!((r.fit.slope - r.expected).abs() <= 0.25, "{}", r.fit.slope);
}

#[test]
fn multipoint_product_factorizes_across_separated_scales() {
    let r = multipoint_factorization(&FactorizationConfig::default(), 2000, 4).unwrap();
    assert!(r.holds, "{} vs {} (se {})", r.joint.mean, r.product, r.combined_stderr);
    assert!(!r.out_of_hypothesis);
}

#[test]
fn smallball_exponent_exceeds_one() {
    let r = smallball_experiment(&SmallBallConfig::default(), 4000, 7).unwrap();
    let est = r.table.column("estimate").unwrap();
    assert!(est.iter().all(|&e| e > 0.0 && e <= 1.0));
    assert!(est.windows(2).all(|w| w[1] < w[0]));
    assert!(r.fit.unwrap().slope > 1.0);
}

#[test]
fn ratio_exponents_have_the_expected_sign() {
    let eq = RatioConfig { cells: 1 << 14, ..RatioConfig::equal_length(0.5, 1.05) };
    let r = ratio_moment_experiment(&eq, 1500, 3).unwrap();
    assert!(r.fit.slope > -0.5 && r.fit.slope < 0.2, "{:?}", r.fit);
    let dn = RatioConfig { cells: 1 << 14, ..RatioConfig::decreasing_numerator(0.3, 1.05) };
    let r = ratio_moment_experiment(&dn, 1500, 3).unwrap();
    assert!(r.fit.slope >= 0.9, "{:?}", r.fit);
    assert!(!r.out_of_hypothesis);
}

#[test]
fn inverse_moment_guard_uses_the_inverse_range() {
    let grid = Grid::covering(0.0, 2.0, 1024).unwrap();
    let f = FieldFactory::new(KernelSpec::line(1.0, grid.h), grid, GmcParams::mean_one(0.5).unwrap()).unwrap();
    let ok = MomentQuery::new(MomentTarget::InverseIncrement, vec![(0.2, 0.4)], -2.0);
    assert!(mc_moment(&ok, &f, 200, 1).unwrap().mean > 0.0);
    let bad = MomentQuery::new(MomentTarget::InverseIncrement, vec![(0.2, 0.4)], -3.0);
    assert!(mc_moment(&bad, &f, 200, 1).is_err());
}
