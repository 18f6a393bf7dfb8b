use affinity_core::simulate::DiscreteChooSiowSpec;
use affinity_core::*;
use ndarray::{Array1, Array2};

/// Eleven types per side on [-1, 1], surplus `b·x·y + c` with `c` set so a
/// share `singles` of men stay single, about `couples` expected couples.
fn sized_market(b: f64, singles: f64, couples: f64) -> DiscreteChooSiowSpec {
    let types = Array1::linspace(-1.0, 1.0, 11);
    let phi = Array2::from_shape_fn((11, 11), |(i, j)| b * types[i] * types[j]);
    let total = couples / (1.0 - singles);
    let men = Array1::from_elem(11, total / 11.0);
    let women = men.clone();
    let c = offset_for_singles_share(&phi, 1.0, &men, &women, singles).unwrap();
    DiscreteChooSiowSpec {
        phi: phi.mapv(|v| v + c),
        sigma: 1.0,
        men,
        women,
        x_types: types.clone().insert_axis(ndarray::Axis(1)),
        y_types: types.insert_axis(ndarray::Axis(1)),
    }
}

fn market(b: f64, singles: f64) -> DiscreteChooSiowSpec {
    sized_market(b, singles, 2000.0)
}

#[test]
fn matched_subsample_recovers_affinity_at_any_singles_share() {
    let b = 1.5;
    for (k, share) in [0.1, 0.5, 0.9].into_iter().enumerate() {
        let spec = market(b, share);
        let (pop, _) = simulate_discrete_choo_siow(&spec, 40 + k as u64).unwrap();
        let (observed_share, _) = pop.singles_shares();
        assert!((observed_share - share).abs() < 0.02);
        let cfg = FitConfig {
            support: SupportReduction::MergeDuplicates,
            ..FitConfig::default()
        };
        let (model, report) = fit_affinity(&pop.matched, &cfg).unwrap();
        let cov = asymptotic_covariance(&pop.matched, &model, &report.coupling).unwrap();
        let se = cov.b_standard_errors()[[0, 0]];
        let est = report.b_hat[[0, 0]];
        assert!((est - b).abs() < 2.0 * se, "share {share}: {est} ± {se}");
    }
}

#[test]
fn surplus_is_exact_on_discrete_tables() {
    let spec = market(0.7, 0.5);
    let (pop, _) = simulate_discrete_choo_siow(&spec, 3).unwrap();
    let binned = pop.bin().unwrap();
    let coupling = binned_coupling(&binned).unwrap();
    let s = matching_surplus(&pop, &coupling, 1.0).unwrap();
    for ((i, j), v) in s.log_ratio.indexed_iter() {
        let mu = binned.couples[[i, j]];
        let expected = (mu * mu / (binned.x.singles[i] * binned.y.singles[j])).ln();
        if mu == 0.0 {
            assert_eq!(*v, f64::NEG_INFINITY);
        } else {
            assert!((v - expected).abs() <= 8.0 * f64::EPSILON * expected.abs().max(1.0));
        }
    }
}

#[test]
fn recovered_surplus_tracks_truth() {
    // large market: sampling error in the log counts is small
    let spec = sized_market(0.7, 0.5, 100_000.0);
    let (pop, eq) = simulate_discrete_choo_siow(&spec, 4).unwrap();
    let s = matching_surplus(&pop, &binned_coupling(&pop.bin().unwrap()).unwrap(), 1.0).unwrap();
    for ((i, j), v) in s.surplus.indexed_iter() {
        // delta-method std of (1/2)log(μ²/(μ_x0 μ_0y)) under Poisson counts
        let sd = 0.5 * (4.0 / eq.matched[[i, j]] + 1.0 / eq.single_x[i] + 1.0 / eq.single_y[j]).sqrt();
        assert!((v - spec.phi[[i, j]]).abs() < 5.0 * sd, "({i},{j}) {v} vs {}", spec.phi[[i, j]]);
    }
}
