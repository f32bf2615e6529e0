//! Contract of the hitting-time inverse and its experiments.

use gmclab::error::GmcError;
use gmclab::gmc::{build_measure, GmcMeasure, GmcParams};
use gmclab::inverse::{hierarchy_measures, lebesgue_deviation_experiment, precompose, InverseMap, LebesgueConfig};
use gmclab::sampler::{sample_field, HierarchySampler};
use gmclab::{Grid, KernelSpec};
use proptest::prelude::*;

fn measure(gamma: f64, seed: u64, n: usize) -> GmcMeasure {
    let grid = Grid::covering(0.0, 1.0, n).unwrap();
    let f = &sample_field(&KernelSpec::line(1.0, grid.h), &grid, 1, seed).unwrap()[0];
    build_measure(f, GmcParams::mean_one(gamma).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trips(seed in 0u64..500, gamma in 0.0f64..1.2, u in 0.0f64..1.0, t in 0.0f64..1.0) {
        let m = measure(gamma, seed, 256);
        let q = InverseMap::new(&m);
        let x = u * m.total();
        let max_cell = m.cell_mass.iter().cloned().fold(0.0, f64::max);
        prop_assert!((m.cdf(q.q(x).unwrap()).unwrap() - x).abs() <= max_cell);
        prop_assert!((q.q(m.cdf(t).unwrap()).unwrap() - t).abs() <= m.grid.h);
    }

    #[test]
    fn semigroup(seed in 0u64..500, gamma in 0.0f64..1.2, a in 0.0f64..0.5, b in 0.0f64..0.5) {
        let m = measure(gamma, seed, 256);
        let q = InverseMap::new(&m);
        let (x, y) = (a * m.total(), b * m.total());
        let qy = q.q(y).unwrap();
        let lhs = q.invert(x, qy).unwrap() + qy;
        let rhs = q.q(x + y).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn out_of_mass_exactly_past_remaining(seed in 0u64..500, t in 0.0f64..1.0, over in 1e-9f64..1.0) {
        let m = measure(0.8, seed, 128);
        let q = InverseMap::new(&m);
        let rem = m.total() - m.cdf(t).unwrap();
        prop_assert!(q.invert(rem, t).is_ok());
        let out = q.invert(rem * (1.0 + over) + 1e-300, t);
        prop_assert!(matches!(out, Err(GmcError::OutOfMass { .. })), "{out:?}");
    }

    #[test]
    fn strictly_increasing_where_mass_is_positive(seed in 0u64..500, a in 0.0f64..0.99, d in 1e-6f64..0.01) {
        let m = measure(0.6, seed, 256);
        let q = InverseMap::new(&m);
        let x = a * m.total();
        prop_assert!(q.q(x + d * m.total()).unwrap() > q.q(x).unwrap());
    }
}

/// Mean squared deviation of `eta^k(Q^{k+m}(x))` from `x` for every pair `k < k + m` of levels.
fn precompose_errors(gamma: f64, trials: u64) -> Vec<Vec<f64>> {
    let grid = Grid::covering(0.0, 2.0, 4096).unwrap();
    let heights = [0.5, 0.25, 0.125, 0.0625];
    let hs = HierarchySampler::new(heights.iter().map(|&d| KernelSpec::line(d, grid.h)).collect(), &grid).unwrap();
    let params = GmcParams::mean_one(gamma).unwrap();
    let x = 0.5;
    let mut err = vec![vec![0.0; 4]; 4];
    for i in 0..trials {
        let ms = hierarchy_measures(&hs, params, 17, i).unwrap();
        for k in 0..4 {
            for f in k + 1..4 {
                let v = precompose(&ms[k], &InverseMap::new(&ms[f]), x).unwrap();
                err[k][f] += (v - x).powi(2) / trials as f64;
            }
        }
    }
    err
}

#[test]
fn precomposed_error_shrinks_with_coarse_height() {
    let err = precompose_errors(0.05, 400);
    // one level apart, the deviation is governed by the coarse height
    assert!(err[0][1] > err[1][2] && err[1][2] > err[2][3], "{err:?}");
    // at fixed coarse level it saturates as the fine level moves away: the increments shrink
    let row = &err[0];
    assert!(row[3] - row[2] < row[2] - row[1], "{row:?}");
}

#[test]
#[ignore = "holds in the opposite direction; see README"]
fn precomposed_error_decreasing_in_scale_gap() {
    let err = precompose_errors(0.05, 400);
    assert!(err[0][2] <= err[0][1] && err[0][3] <= err[0][2], "{:?}", err[0]);
}

#[test]
fn lebesgue_deviations_shrink_with_scale() {
    let grid = Grid::covering(0.0, 1.0, 2048).unwrap();
    let cfg = LebesgueConfig {
        heights: vec![0.5, 0.125, 0.03125],
        grid,
        a: (0.25, 0.75),
        x: 0.5,
        deviations: vec![0.05, 0.5],
        gamma: 0.5,
    };
    let t = lebesgue_deviation_experiment(&cfg, 1000, 4).unwrap();
    let delta = t.column("delta").unwrap();
    let cols = ["p_lower", "p_upper", "p_inverse"];
    for col in cols {
        let p = t.column(col).unwrap();
        let se = t.column(&format!("stderr_{}", &col[2..])).unwrap();
        let at = |d: f64| -> Vec<(f64, f64)> {
            p.iter().zip(&se).zip(&delta).filter(|(_, &dd)| dd == d).map(|((a, b), _)| (*a, *b)).collect()
        };
        let row = at(0.05);
        for w in row.windows(2) {
            assert!(w[1].0 <= w[0].0 + 3.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt(), "{col}: {row:?}");
        }
    }
    // a deviation as large as |A| can never be undershot
    let lower = t.column("p_lower").unwrap();
    assert!(lower.iter().zip(&delta).filter(|(_, &d)| d >= 0.5).all(|(&p, _)| p == 0.0));
}
