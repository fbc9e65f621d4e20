use super::*;
use crate::rng::SeededRng;
use crate::rollout::Regime;

fn series(ratio: Vec<f64>, power: Vec<f64>, dv: Vec<f64>) -> RolloutRecord {
    let n = ratio.len();
    RolloutRecord {
        band_ratio: ratio,
        band_power: power,
        delta_v: dv,
        l1: vec![0.0; n],
        l2: vec![0.0; n],
    }
}

// Direct scans straight from the definitions, recomputing every window.

fn trailing_mean(xs: &[f64], t: usize, w: usize) -> f64 {
    let lo = (t + 1).saturating_sub(w);
    xs[lo..=t].iter().sum::<f64>() / (t + 1 - lo) as f64
}

fn gate_ok(r: &RolloutRecord, s: &ConvergenceSpec, t: usize) -> bool {
    r.band_ratio[t] >= s.ratio_gate && r.band_power[t] >= s.power_gate
}

fn scan_strict(r: &RolloutRecord, s: &ConvergenceSpec) -> Option<usize> {
    let n = r.horizon();
    (0..n).find(|&start| {
        start + s.hold_steps <= n
            && (start..start + s.hold_steps).all(|t| {
                trailing_mean(&r.delta_v, t, s.ma_window) < s.dv_thresh && gate_ok(r, s, t)
            })
    })
}

fn rel_spread(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(f64::MIN, f64::max);
    let lo = xs.iter().cloned().fold(f64::MAX, f64::min);
    hi / lo - 1.0
}

fn scan_quasi(r: &RolloutRecord, s: &ConvergenceSpec) -> Option<usize> {
    (s.hold_steps - 1..r.horizon()).find(|&t| {
        let w = t + 1 - s.hold_steps..=t;
        w.clone().all(|k| gate_ok(r, s, k))
            && rel_spread(&r.band_ratio[w.clone()]) <= s.quasi_ratio_tol
            && rel_spread(&r.band_power[w]) <= s.quasi_power_tol
            && s.quasi_dv_factor
                .is_none_or(|f| trailing_mean(&r.delta_v, t, s.ma_window) < f * s.dv_thresh)
    })
}

/// Piecewise series that wander in and out of the gates, plateau, and settle.
fn synthetic(rng: &mut SeededRng, n: usize) -> RolloutRecord {
    let mut ratio = Vec::with_capacity(n);
    let mut power = Vec::with_capacity(n);
    let mut dv = Vec::with_capacity(n);
    let (mut r, mut p, mut d) = (0.3, 2e-4, 1e-4);
    let mut left = 0;
    let mut jitter = 0.0;
    for _ in 0..n {
        if left == 0 {
            left = 3 + rng.range_inclusive(0, 30) as usize;
            r = 0.15 + 0.25 * rng.uniform();
            p = 5e-5 + 3e-4 * rng.uniform();
            d = 10f64.powf(-7.0 + 4.0 * rng.uniform());
            jitter = [0.0, 0.01, 0.04, 0.12][rng.range_inclusive(0, 3) as usize];
        }
        left -= 1;
        ratio.push(r * (1.0 + jitter * (rng.uniform() - 0.5)));
        power.push(p * (1.0 + jitter * (rng.uniform() - 0.5)));
        dv.push(d * (1.0 + (rng.uniform() - 0.5)));
    }
    series(ratio, power, dv)
}

#[test]
fn detectors_match_scans_on_synthetic_series() {
    let mut rng = SeededRng::new(2024);
    let plateau_only = ConvergenceSpec {
        quasi_dv_factor: None,
        ..Default::default()
    };
    let (mut hits_s, mut hits_q) = (0, 0);
    for i in 0..200 {
        let rec = synthetic(&mut rng, 60 + i % 120);
        for spec in [ConvergenceSpec::default(), plateau_only] {
            assert_eq!(
                detect_strict(&rec, &spec),
                scan_strict(&rec, &spec),
                "series {i}"
            );
            assert_eq!(
                detect_quasi(&rec, &spec),
                scan_quasi(&rec, &spec),
                "series {i}"
            );
            hits_s += detect_strict(&rec, &spec).is_some() as usize;
            hits_q += detect_quasi(&rec, &spec).is_some() as usize;
        }
    }
    // the generator must exercise both outcomes
    assert!(hits_s > 10 && hits_s < 390, "{hits_s}");
    assert!(hits_q > 10 && hits_q < 390, "{hits_q}");
}

#[test]
fn strict_idealized_series() {
    let spec = ConvergenceSpec::default();
    let rec = series(vec![0.3; 40], vec![2e-4; 40], vec![0.0; 40]);
    assert_eq!(detect_strict(&rec, &spec), Some(0));
    let busy = series(vec![0.3; 40], vec![2e-4; 40], vec![1e-3; 40]);
    assert_eq!(detect_strict(&busy, &spec), None);
}

#[test]
fn strict_waits_for_the_moving_average() {
    let spec = ConvergenceSpec::default();
    let n = 100;
    let dv: Vec<f64> = (0..n).map(|t| if t < 50 { 1e-3 } else { 1e-7 }).collect();
    let ratio: Vec<f64> = (0..n).map(|t| if t < 40 { 0.1 } else { 0.3 }).collect();
    let rec = series(ratio, vec![2e-4; n], dv);
    assert_eq!(detect_strict(&rec, &spec), Some(54));
    assert_eq!(scan_strict(&rec, &spec), Some(54));
}

#[test]
fn strict_needs_gates() {
    let spec = ConvergenceSpec::default();
    let rec = series(vec![0.1; 40], vec![2e-4; 40], vec![0.0; 40]);
    assert_eq!(detect_strict(&rec, &spec), None);
}

#[test]
fn quasi_examples() {
    let spec = ConvergenceSpec::default();
    let flat = series(vec![0.3; 40], vec![2e-4; 40], vec![0.0; 40]);
    assert_eq!(detect_quasi(&flat, &spec), Some(11));

    let osc: Vec<f64> = (0..60)
        .map(|t| if t % 2 == 0 { 0.33 } else { 0.27 })
        .collect();
    assert_eq!(
        detect_quasi(&series(osc, vec![2e-4; 60], vec![0.0; 60]), &spec),
        None
    );

    let ratio: Vec<f64> = (0..150)
        .map(|t| if t < 80 { 0.3 + 0.002 * t as f64 } else { 0.5 })
        .collect();
    let rec = series(ratio, vec![2e-4; 150], vec![0.0; 150]);
    assert_eq!(detect_quasi(&rec, &spec), Some(91));
    assert_eq!(scan_quasi(&rec, &spec), Some(91));
}

#[test]
fn quasi_change_bound_is_optional() {
    let busy = series(vec![0.3; 40], vec![2e-4; 40], vec![1e-3; 40]);
    assert_eq!(detect_quasi(&busy, &ConvergenceSpec::default()), None);
    let plateau_only = ConvergenceSpec {
        quasi_dv_factor: None,
        ..Default::default()
    };
    assert_eq!(detect_quasi(&busy, &plateau_only), Some(11));
}

#[test]
fn strict_implies_gates() {
    let mut rng = SeededRng::new(5);
    let spec = ConvergenceSpec::default();
    for _ in 0..200 {
        let rec = synthetic(&mut rng, 100);
        if let Some(t) = detect_strict(&rec, &spec) {
            assert!(gate_ok(&rec, &spec, t));
        }
    }
}

#[test]
fn frozen_tail_has_zero_stability_tail() {
    let mut dv = vec![1e-3; 50];
    for d in &mut dv[30..] {
        *d = 0.0;
    }
    assert_eq!(
        stability_tail(&series(vec![0.3; 50], vec![0.0; 50], dv)),
        0.0
    );
}

#[test]
fn moving_average_is_trailing() {
    let ma = moving_average(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3);
    assert_eq!(ma, vec![1.0, 1.5, 2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn medians_and_sentinels() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert_eq!(median_time([Some(10), None, None].into_iter(), 120), None);
    assert_eq!(
        median_time([Some(10), Some(20), None].into_iter(), 120),
        Some(20.0)
    );
}

#[test]
fn spec_validation() {
    assert!(ConvergenceSpec::default().validate().is_ok());
    let bad = ConvergenceSpec {
        ma_window: 20,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn pure_regime_has_zero_cost_and_is_deterministic() {
    let mut sc = Regime::PureRd.scenario(24);
    sc.init.patch_half = 4;
    let seeds = [1, 2, 3];
    let spec = ConvergenceSpec::default();
    let params = ControllerParams::init(0);
    let (a, rows) = evaluate(
        "pure_rd",
        &sc,
        Some(&params),
        &seeds,
        30,
        &spec,
        Execution::Sequential,
    )
    .unwrap();
    let (b, _) = evaluate(
        "pure_rd",
        &sc,
        Some(&params),
        &seeds,
        30,
        &spec,
        Execution::Parallel { threads: 2 },
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!((a.l1_mean, a.l2_mean), (0.0, 0.0));
    assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), seeds);
    assert_eq!(a.n_failed, 0);
}

#[test]
fn failed_rollouts_are_flagged() {
    let mut sc = Regime::Hybrid.scenario(16);
    sc.init.patch_half = 3;
    sc.schedule.amplitude = 1e30;
    sc.sim.clamp_f = (-1e38, 1e38);
    sc.sim.clamp_k = (-1e38, 1e38);
    let params = ControllerParams::init(0);
    let (rep, rows) = evaluate(
        "hybrid",
        &sc,
        Some(&params),
        &[0, 1],
        40,
        &ConvergenceSpec::default(),
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(rep.n_failed, 2);
    assert!(rows[0].failure.is_some());
    assert_eq!(rep.quasi_rate, 0.0);
    assert!(
        rows[0].csv_row("hybrid").split(',').count() == SeedResult::CSV_HEADER.split(',').count()
    );
}
