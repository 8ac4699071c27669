use proptest::prelude::*;
use spinshield::dynamics::TimeSeries;
use spinshield::experiments::{
    calibrate_pair_convention, heat_comparison, measure, mean_over_window, protection_in_series, sweep, window_mean,
    Protection, Settings, SweepGrid, SweepStatistic,
};
use spinshield::metrics::MetricName;
use spinshield::model::{NoiseSpec, PairConvention};
use spinshield::topology::{extreme_geometry, BufferGraph, Extreme};

fn series(values: &[f64]) -> TimeSeries {
    let mut s = TimeSeries::new(vec![MetricName::CohL1.key().to_string()]);
    for (k, &v) in values.iter().enumerate() {
        s.push(10.0 * k as f64, &[v]).unwrap();
    }
    s
}

/// Direct reading of "stays below from the last upward excursion onwards".
fn oracle(values: &[f64], threshold: f64, window: f64) -> Option<f64> {
    let last_above = values.iter().rposition(|&v| !(v < threshold));
    let crossing = match last_above {
        None => 0.0,
        Some(k) if k + 1 == values.len() => return None,
        Some(k) => {
            let (v0, v1) = (values[k], values[k + 1]);
            10.0 * k as f64 + 10.0 * (v0 - threshold) / (v0 - v1)
        }
    };
    let end = 10.0 * (values.len() - 1) as f64;
    (end - crossing >= window).then_some(crossing)
}

proptest! {
    #[test]
    fn protection_time_matches_direct_reading(
        values in prop::collection::vec(0.0f64..2.0, 1..60),
        window in 0.0f64..200.0,
    ) {
        let r = protection_in_series(&series(&values), MetricName::CohL1, 1.0, window).unwrap();
        let expected = oracle(&values, 1.0, window);
        match (r.outcome, expected) {
            (Protection::Detected { time, confirmed_until }, Some(t)) => {
                prop_assert!((time - t).abs() < 1e-9);
                prop_assert!(time <= confirmed_until);
                for (k, &v) in values.iter().enumerate() {
                    let tk = 10.0 * k as f64;
                    if tk > time && tk <= confirmed_until {
                        prop_assert!(v < 1.0);
                    }
                }
            }
            (Protection::NotDetected { .. }, None) => {}
            (got, want) => prop_assert!(false, "{got:?} vs {want:?}"),
        }
    }

    #[test]
    fn window_mean_of_constant_is_the_constant(c in -5.0f64..5.0, n in 2usize..50) {
        let times: Vec<f64> = (0..n).map(|k| k as f64).collect();
        let values = vec![c; n];
        let m = mean_over_window(&times, &values, 0.0, (n - 1) as f64).unwrap();
        prop_assert!((m - c).abs() < 1e-12);
    }
}

#[test]
fn relabelling_buffers_changes_no_reported_scalar() {
    let path = BufferGraph::new(3, [(2, 3), (3, 4)]).unwrap();
    let moved = path.relabel(&[2, 0, 1]);
    assert_ne!(path, moved);
    let mut s = Settings::default();
    s.g = 0.02;
    s.t_max = 3_000.0;
    let run = |g: BufferGraph| {
        let spec = s.spec(g);
        let cfg = s.integrator(&spec).unwrap();
        measure(&spec, &cfg, &MetricName::TABLE, 0.3, &MetricName::TABLE, (2_000.0, 3_000.0)).unwrap()
    };
    let (a, b) = (run(path), run(moved));
    for (x, y) in a.protection.iter().zip(&b.protection) {
        assert_eq!(x.time().is_some(), y.time().is_some());
        if let (Some(p), Some(q)) = (x.time(), y.time()) {
            assert!((p - q).abs() < 1e-6, "{}: {p} vs {q}", x.metric);
        }
    }
    for (x, y) in a.windows.iter().zip(&b.windows) {
        assert!(x.mean >= 0.0);
        assert!((x.mean - y.mean).abs() <= 1e-10 * x.mean.abs().max(1e-12), "{}", x.metric);
    }
}

#[test]
fn single_sweep_cell_equals_window_mean_and_self_difference_vanishes() {
    let settings = Settings::default();
    let tetra = extreme_geometry(4, Extreme::Maximal).unwrap();
    let grid = SweepGrid {
        g_values: vec![0.002],
        gamma_values: vec![0.0005],
        geometry: tetra.clone(),
        statistic: SweepStatistic::WindowMeanL1,
    };
    let result = sweep(&grid, &settings).unwrap();
    assert_eq!(result.failures(), 0);
    let mut local = settings;
    local.t_max = settings.window.1;
    let spec = local.spec(tetra);
    let cfg = local.integrator(&spec).unwrap();
    let direct = window_mean(&spec, &cfg, MetricName::CohL1, settings.window.0, settings.window.1).unwrap();
    assert_eq!(result.cells[0].value.as_ref().copied().unwrap(), direct.mean);
    let zero = result.difference(&result).unwrap();
    assert!(zero.cells.iter().all(|c| c.value == Ok(0.0)));
}

#[test]
fn sweep_records_failed_cells_and_continues() {
    let mut settings = Settings::default();
    settings.window = (900.0, 1_000.0);
    let grid = SweepGrid {
        g_values: vec![0.002, 3.0],
        gamma_values: vec![0.0005],
        geometry: extreme_geometry(2, Extreme::Maximal).unwrap(),
        statistic: SweepStatistic::WindowMeanL1,
    };
    let result = sweep(&grid, &settings).unwrap();
    assert_eq!(result.failures(), 1);
    assert!(result.cells[0].value.is_ok());
    let csv = result.to_csv();
    assert!(csv.starts_with("g,gamma,statistic_value\n"));
    assert!(csv.lines().nth(2).unwrap().ends_with("NaN"));
}

#[test]
fn calibration_is_deterministic_and_keeps_the_default() {
    let settings = Settings::default();
    let a = calibrate_pair_convention(&settings).unwrap();
    let b = calibrate_pair_convention(&settings).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.chosen, Some(PairConvention::UnorderedOnce));
    let once = &a.candidates[0];
    assert!(once.relative_error.unwrap() <= 0.15);
}

#[test]
fn closed_cluster_heat_oscillates_without_converging() {
    let mut settings = Settings::default();
    settings.noise = NoiseSpec::thermal(0.4, 0.0);
    settings.g = 0.02;
    settings.t_max = 5_000.0;
    let h = heat_comparison(2, &settings, 0.5).unwrap();
    for traj in [&h.empty, &h.maximal] {
        let q = traj.series.column(MetricName::HeatIntegrated.key()).unwrap();
        assert!(q.iter().all(|v| v.abs() <= settings.omega + 1e-12));
        assert!(q.iter().any(|v| v.abs() > 1e-3));
    }
    assert!(!h.both_converged());
}
