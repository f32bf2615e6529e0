//! Kernels, sampled fields and chaos measures against independent oracles.

use gmclab::gmc::{build_measure, comparison_check, ComparisonKind, CovSource, Functional, GmcParams, Normalization, Verdict};
use gmclab::kernel::{area_oracle, gram_matrix, CovMatrix};
use gmclab::sampler::{sample_field, FieldSampler};
use gmclab::stats::mean_se;
use gmclab::{Grid, KernelSpec};
use proptest::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn line_and_cone_match_area_oracle(delta in 0.2f64..2.0, r in 0.01f64..0.5, u in 0.0f64..1.2, cone in any::<bool>()) {
        let eps = r * delta;
        let d = u * delta;
        let spec = if cone { KernelSpec::cone(delta, eps) } else { KernelSpec::line(delta, eps) };
        let closed = spec.covariance(d).unwrap().value;
        let quad = area_oracle(&spec, 0.0, d, 1e-9).unwrap();
        prop_assert!((closed - quad).abs() <= 1e-6, "{closed} vs {quad}");
    }

    #[test]
    fn mass_is_positive_and_cumulative_monotone(seed in 0u64..1000, gamma in 0.0f64..1.3) {
        let grid = Grid::covering(0.0, 1.0, 128).unwrap();
        let f = &sample_field(&KernelSpec::line(1.0, grid.h), &grid, 1, seed).unwrap()[0];
        let m = build_measure(f, GmcParams::mean_one(gamma).unwrap()).unwrap();
        prop_assert!(m.cell_mass.iter().all(|&c| c > 0.0));
        prop_assert!(m.cumulative.windows(2).all(|w| w[1] > w[0]));
        let (a, b, c) = (0.1, 0.45, 0.9);
        let whole = m.mass(a, c).unwrap();
        prop_assert!((whole - m.mass(a, b).unwrap() - m.mass(b, c).unwrap()).abs() <= 1e-12 * whole);
    }
}

#[test]
fn empirical_covariance_matches_quadrature() {
    let grid = Grid::covering(0.0, 2.0, 32).unwrap();
    let spec = KernelSpec::line(1.0, grid.h);
    let samples = sample_field(&spec, &grid, 4000, 21).unwrap();
    for (i, j) in [(0, 0), (0, 3), (5, 12), (10, 31), (16, 17)] {
        let prods: Vec<f64> = samples.iter().map(|s| s.values[i] * s.values[j]).collect();
        let est = mean_se(&prods);
        let d = (grid.center(i) - grid.center(j)).abs();
        let oracle = area_oracle(&spec, 0.0, d, 1e-10).unwrap();
        assert!((est.mean - oracle).abs() <= (5.0 * est.stderr).max(0.05), "({i},{j}): {} vs {oracle}", est.mean);
    }
}

#[test]
fn mean_mass_under_both_normalizations() {
    let grid = Grid::covering(0.0, 1.0, 256).unwrap();
    let one = GmcParams::mean_one(0.5).unwrap();
    let paper = GmcParams::new(0.5, Normalization::Paper).unwrap();
    let line = sample_field(&KernelSpec::line(1.0, grid.h), &grid, 2000, 5).unwrap();
    let masses: Vec<f64> = line.iter().map(|f| build_measure(f, one).unwrap().total()).collect();
    let e = mean_se(&masses);
    assert!((e.mean - 1.0).abs() < 3.0 * e.stderr, "{e:?}");
    let half = sample_field(&KernelSpec::line(0.5, grid.h), &grid, 2000, 6).unwrap();
    let masses: Vec<f64> = half.iter().map(|f| build_measure(f, paper).unwrap().total()).collect();
    let e = mean_se(&masses);
    let expect = 0.5f64.powf(0.125);
    assert!((expect - 0.9170).abs() < 1e-4);
    assert!((e.mean - expect).abs() < 3.0 * e.stderr, "{e:?}");
}

#[test]
fn refinement_moves_masses_less_than_error() {
    let one = GmcParams::mean_one(0.5).unwrap();
    let mut means = Vec::new();
    for n in [256, 512] {
        let grid = Grid::covering(0.0, 1.0, n).unwrap();
        let fs = sample_field(&KernelSpec::line(1.0, 1.0 / 256.0), &grid, 1000, 9).unwrap();
        let xs: Vec<f64> = fs.iter().map(|f| build_measure(f, one).unwrap().mass(0.25, 0.5).unwrap()).collect();
        means.push(mean_se(&xs));
    }
    assert!((means[0].mean - means[1].mean).abs() < 3.0 * means[0].stderr.max(means[1].stderr));
}

fn two_point(c: f64) -> CovSource {
    CovSource::Matrix(CovMatrix::from_rows(&[vec![1.0, c], vec![c, 1.0]]).unwrap())
}

/// `P(X <= tau, Y <= tau)` for unit normals with correlation `rho`, by quadrature over the first coordinate.
fn orthant(rho: f64, tau: f64) -> f64 {
    let n = Normal::standard();
    let s = (1.0 - rho * rho).sqrt();
    let (lo, steps) = (-9.0, 200_000);
    let w = (tau - lo) / steps as f64;
    (0..steps)
        .map(|k| {
            let x = lo + (k as f64 + 0.5) * w;
            n.pdf(x) * n.cdf((tau - rho * x) / s) * w
        })
        .sum()
}

#[test]
fn slepian_two_point_oracle() {
    assert!((orthant(0.0, 1.0) - 0.7079).abs() < 1e-4);
    assert!((orthant(0.5, 1.0) - 0.7452).abs() < 1e-4);
    let grid = Grid::covering(0.0, 2.0, 2).unwrap();
    let r = comparison_check(
        ComparisonKind::Slepian,
        &two_point(0.0),
        Some(&two_point(0.5)),
        Functional::SupBelow { tau: 1.0 },
        &grid,
        20000,
        4,
    )
    .unwrap();
    assert_eq!(r.verdict, Verdict::Holds);
    assert!((r.lhs - orthant(0.0, 1.0)).abs() < 3.0 * r.lhs_se);
    assert!((r.rhs - orthant(0.5, 1.0)).abs() < 3.0 * r.rhs_se);
}

#[test]
fn fkg_product_of_sums() {
    let grid = Grid::covering(0.0, 3.0, 3).unwrap();
    let c = CovSource::Matrix(
        CovMatrix::from_rows(&[vec![1.0, 0.3, 0.1], vec![0.3, 1.0, 0.4], vec![0.1, 0.4, 1.0]]).unwrap(),
    );
    let r = comparison_check(ComparisonKind::Fkg, &c, None, Functional::SumProduct, &grid, 5000, 8).unwrap();
    // E[(sum X)^2] is the sum of all covariances; E[sum X] = 0
    assert!((r.lhs - 4.6).abs() < 4.0 * r.lhs_se, "{r:?}");
    assert_eq!(r.verdict, Verdict::Holds);
}

#[test]
fn kahane_on_ordered_kernels() {
    let grid = Grid::covering(0.0, 1.0, 16).unwrap();
    let small = CovSource::Spec(KernelSpec::line(0.5, grid.h));
    let large = CovSource::Spec(KernelSpec::line(1.0, grid.h));
    let r = comparison_check(
        ComparisonKind::Kahane,
        &small,
        Some(&large),
        Functional::PowerMoment { q: 2.0, gamma: 0.5 },
        &grid,
        4000,
        2,
    )
    .unwrap();
    assert_eq!(r.verdict, Verdict::Holds);
    assert!(gram_matrix(&KernelSpec::line(1.0, grid.h), &grid, None).is_ok());
}

#[test]
fn circulant_and_dense_paths_share_the_law() {
    let grid = Grid::covering(0.0, 0.4, 64).unwrap();
    let line = FieldSampler::new(&KernelSpec::line(1.0, grid.h), &grid).unwrap();
    let scaled = FieldSampler::new(&KernelSpec::scaled(1.0, grid.h, 1.0), &grid).unwrap();
    let var = |s: &FieldSampler| {
        let xs: Vec<f64> = (0..3000).map(|i| s.draw(3, 1, i)[10].powi(2)).collect();
        mean_se(&xs)
    };
    let (a, b) = (var(&line), var(&scaled));
    assert!((a.mean - b.mean).abs() < 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt());
}
