//! End-to-end runs through the solver, the policy file and the estimators.

use std::sync::Arc;

use fadesim::importance::{estimator_comparison, is_estimate, EstimatorContext};
use fadesim::kbe::{solve_kbe, solve_kbe_initial_slice, value_at, ControlPolicy, KbeGridConfig, ValueFunctionGrid};
use fadesim::mc::DEFAULT_CONFIDENCE;
use fadesim::{ProjectedModel, RayleighParams, TimeGrid};

const P: RayleighParams = RayleighParams {
    b: 1.0,
    sigma: 1.0,
    i0: 1.0,
    q0: 1.0,
};

fn small_config() -> KbeGridConfig {
    KbeGridConfig::new(4.0, 60, 60, P.b, P.sigma, 0.5)
}

#[test]
fn initial_slice_equals_full_grid_at_t0() {
    let c = small_config();
    let full = solve_kbe(&c).unwrap();
    let slice = solve_kbe_initial_slice(&c).unwrap();
    assert_eq!(slice.max_overshoot, full.max_overshoot);
    for x in [0.0, 0.1, 0.25, 1.0, 2.0, 5.5, 11.9] {
        for w in [-0.1, 0.0, 0.3, 1.0, 2.5, 3.0, 3.9, 4.0] {
            assert_eq!(slice.ccdf(x, w).unwrap(), value_at(&full, 0.0, x, 0.0, w).unwrap(), "x={x} w={w}");
        }
    }
}

#[test]
fn policy_file_round_trip_reproduces_is_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let grid = solve_kbe(&small_config()).unwrap();
    let (json, _) = grid.save(&dir.path().join("v")).unwrap();
    let loaded = Arc::new(ValueFunctionGrid::load(&json, true).unwrap());
    let grid = Arc::new(grid);
    let model = ProjectedModel::rayleigh(P).unwrap();
    let tg = TimeGrid::new(4.0, 100).unwrap();
    let run = |g: &Arc<ValueFunctionGrid>| {
        is_estimate(&model, &ControlPolicy::new(g.clone(), 3.0), P.r0(), 0.5, &tg, 4000, 17, DEFAULT_CONFIDENCE).unwrap()
    };
    let a = run(&grid);
    let b = run(&loaded);
    assert_eq!(a.p_hat.to_bits(), b.p_hat.to_bits());
    assert_eq!(a.sample_variance.to_bits(), b.sample_variance.to_bits());
    assert!(a.p_hat > 0.0 && !a.degenerate);
}

#[test]
fn comparison_rows_are_consistent() {
    let grid = Arc::new(solve_kbe(&small_config()).unwrap());
    let ctx = EstimatorContext {
        model: ProjectedModel::rayleigh(P).unwrap(),
        r0: P.r0(),
        gamma: 0.5,
        grid: TimeGrid::new(4.0, 100).unwrap(),
        value_grid: Some(grid),
        confidence: DEFAULT_CONFIDENCE,
    };
    let rows = estimator_comparison(&ctx, &[2.0, 2.5], 20_000, 5_000, 1, 2, 0.05).unwrap();
    for r in &rows {
        // Both estimate the same probability; IS should need far fewer runs.
        let se = (r.var_mc / 20_000.0 + r.var_is / 5_000.0).sqrt();
        assert!((r.a_mc - r.a_is).abs() <= 4.0 * se, "{r:?}");
        assert!(r.m_needed_is < r.m_needed_mc, "{r:?}");
    }
}
