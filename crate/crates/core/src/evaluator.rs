//! Frozen-policy evaluation: convergence detection, spectral quality and
//! control cost aggregated over seeds.

use serde::{Deserialize, Serialize};

use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::objective::{mean, RolloutRecord};
use crate::rollout::{Scenario, Simulator};

pub const STABILITY_TAIL_STEPS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSpec {
    pub dv_thresh: f64,
    pub ma_window: usize,
    pub hold_steps: usize,
    pub ratio_gate: f64,
    pub power_gate: f64,
    pub quasi_ratio_tol: f64,
    pub quasi_power_tol: f64,
    /// When set, quasi convergence also needs the moving-average change
    /// below `quasi_dv_factor * dv_thresh`.
    pub quasi_dv_factor: Option<f64>,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self {
            dv_thresh: 1e-5,
            ma_window: 5,
            hold_steps: 12,
            ratio_gate: 0.22,
            power_gate: 1.2e-4,
            quasi_ratio_tol: 0.05,
            quasi_power_tol: 0.08,
            quasi_dv_factor: Some(10.0),
        }
    }
}

impl ConvergenceSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("dv_thresh", self.dv_thresh),
            ("ratio_gate", self.ratio_gate),
            ("power_gate", self.power_gate),
            ("quasi_ratio_tol", self.quasi_ratio_tol),
            ("quasi_power_tol", self.quasi_power_tol),
            ("quasi_dv_factor", self.quasi_dv_factor.unwrap_or(1.0)),
        ];
        for (name, x) in pos {
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::config(format!(
                    "{name} must be a finite value > 0, got {x}"
                )));
            }
        }
        if self.ma_window == 0 || self.ma_window > self.hold_steps {
            return Err(Error::config(format!(
                "need 0 < ma_window ({}) <= hold_steps ({})",
                self.ma_window, self.hold_steps
            )));
        }
        Ok(())
    }

    fn gates(&self, rec: &RolloutRecord, t: usize) -> bool {
        rec.band_ratio[t] >= self.ratio_gate && rec.band_power[t] >= self.power_gate
    }
}

/// Trailing mean over up to `window` entries (shorter at the start).
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for (t, &x) in xs.iter().enumerate() {
        acc += x;
        if t >= window {
            acc -= xs[t - window];
        }
        out.push(acc / (t + 1).min(window) as f64);
    }
    out
}

/// First step of the first run of `hold_steps` consecutive steps with the
/// moving-average change below threshold and both spectral gates met.
pub fn detect_strict(rec: &RolloutRecord, spec: &ConvergenceSpec) -> Option<usize> {
    let ma = moving_average(&rec.delta_v, spec.ma_window);
    let mut run = 0;
    for (t, &m) in ma.iter().enumerate() {
        if m < spec.dv_thresh && spec.gates(rec, t) {
            run += 1;
            if run == spec.hold_steps {
                return Some(t + 1 - run);
            }
        } else {
            run = 0;
        }
    }
    None
}

fn plateau(xs: &[f64], tol: f64) -> bool {
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    lo > 0.0 && hi <= lo * (1.0 + tol)
}

/// Last step of the first trailing `hold_steps` window in which the gates
/// hold throughout and ratio and power stay within their relative plateau
/// tolerances (plus the optional change bound at the window end).
pub fn detect_quasi(rec: &RolloutRecord, spec: &ConvergenceSpec) -> Option<usize> {
    let n = spec.hold_steps;
    let ma = moving_average(&rec.delta_v, spec.ma_window);
    let mut gated_run = 0;
    for (t, &m) in ma.iter().enumerate() {
        gated_run = if spec.gates(rec, t) { gated_run + 1 } else { 0 };
        if gated_run < n {
            continue;
        }
        if let Some(f) = spec.quasi_dv_factor {
            if !(m < f * spec.dv_thresh) {
                continue;
            }
        }
        let w = t + 1 - n..=t;
        if plateau(&rec.band_ratio[w.clone()], spec.quasi_ratio_tol)
            && plateau(&rec.band_power[w], spec.quasi_power_tol)
        {
            return Some(t);
        }
    }
    None
}

/// Mean change of V over the final steps.
pub fn stability_tail(rec: &RolloutRecord) -> f64 {
    let n = rec.delta_v.len();
    mean(&rec.delta_v[n.saturating_sub(STABILITY_TAIL_STEPS)..])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub strict_t: Option<usize>,
    pub quasi_t: Option<usize>,
    pub band_ratio: f64,
    pub band_power: f64,
    pub l1: f64,
    pub l2: f64,
    pub stability_tail: f64,
    /// Diagnostic of a rollout that failed numerically.
    pub failure: Option<String>,
}

impl SeedResult {
    pub const CSV_HEADER: &'static str =
        "regime,seed,strict_t,quasi_t,band_ratio,band_power,l1,l2,stability_tail,failure";

    pub fn from_record(seed: u64, rec: &RolloutRecord, spec: &ConvergenceSpec) -> Self {
        let last = rec.horizon().saturating_sub(1);
        Self {
            seed,
            strict_t: detect_strict(rec, spec),
            quasi_t: detect_quasi(rec, spec),
            band_ratio: rec.band_ratio.get(last).copied().unwrap_or(0.0),
            band_power: rec.band_power.get(last).copied().unwrap_or(0.0),
            l1: rec.l1_mean(),
            l2: rec.l2_mean(),
            stability_tail: stability_tail(rec),
            failure: None,
        }
    }

    pub fn failed(seed: u64, err: &Error) -> Self {
        Self {
            seed,
            strict_t: None,
            quasi_t: None,
            band_ratio: f64::NAN,
            band_power: f64::NAN,
            l1: f64::NAN,
            l2: f64::NAN,
            stability_tail: f64::NAN,
            failure: Some(err.to_string()),
        }
    }

    pub fn csv_row(&self, regime: &str) -> String {
        let opt = |x: Option<usize>| x.map(|t| t.to_string()).unwrap_or_default();
        let num = |x: f64| {
            if x.is_nan() {
                String::new()
            } else {
                x.to_string()
            }
        };
        format!(
            "{regime},{},{},{},{},{},{},{},{},{}",
            self.seed,
            opt(self.strict_t),
            opt(self.quasi_t),
            num(self.band_ratio),
            num(self.band_power),
            num(self.l1),
            num(self.l2),
            num(self.stability_tail),
            self.failure
                .as_deref()
                .unwrap_or("")
                .replace([',', '\n'], ";"),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: String,
    pub n_seeds: usize,
    pub horizon: usize,
    pub n_failed: usize,
    pub strict_rate: f64,
    pub quasi_rate: f64,
    /// `None` means the median is at or beyond the horizon.
    pub t_strict_median: Option<f64>,
    pub t_quasi_median: Option<f64>,
    pub band_ratio_median: f64,
    pub band_power_median: f64,
    pub l1_mean: f64,
    pub l2_mean: f64,
    pub stability_tail: f64,
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn median_time(ts: impl Iterator<Item = Option<usize>>, horizon: usize) -> Option<f64> {
    let xs: Vec<f64> = ts.map(|t| t.unwrap_or(horizon) as f64).collect();
    let m = median(&xs);
    (m < horizon as f64).then_some(m)
}

impl RegimeReport {
    pub const CSV_HEADER: &'static str =
        "regime,n_seeds,horizon,n_failed,strict_rate,quasi_rate,t_strict_median,\
t_quasi_median,band_ratio_median,band_power_median,l1_mean,l2_mean,stability_tail";

    pub fn aggregate(regime: &str, horizon: usize, results: &[SeedResult]) -> Self {
        let n = results.len();
        let ok: Vec<&SeedResult> = results.iter().filter(|r| r.failure.is_none()).collect();
        let rate = |f: fn(&SeedResult) -> bool| {
            if n == 0 {
                0.0
            } else {
                results.iter().filter(|r| f(r)).count() as f64 / n as f64
            }
        };
        let col = |f: fn(&SeedResult) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
        Self {
            regime: regime.to_string(),
            n_seeds: n,
            horizon,
            n_failed: n - ok.len(),
            strict_rate: rate(|r| r.strict_t.is_some()),
            quasi_rate: rate(|r| r.quasi_t.is_some()),
            t_strict_median: median_time(results.iter().map(|r| r.strict_t), horizon),
            t_quasi_median: median_time(results.iter().map(|r| r.quasi_t), horizon),
            band_ratio_median: median(&col(|r| r.band_ratio)),
            band_power_median: median(&col(|r| r.band_power)),
            l1_mean: mean(&col(|r| r.l1)),
            l2_mean: mean(&col(|r| r.l2)),
            stability_tail: mean(&col(|r| r.stability_tail)),
        }
    }

    pub fn csv_row(&self) -> String {
        let t = |x: Option<f64>| {
            x.map(|v| v.to_string())
                .unwrap_or_else(|| format!(">={}", self.horizon))
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.regime,
            self.n_seeds,
            self.horizon,
            self.n_failed,
            self.strict_rate,
            self.quasi_rate,
            t(self.t_strict_median),
            t(self.t_quasi_median),
            self.band_ratio_median,
            self.band_power_median,
            self.l1_mean,
            self.l2_mean,
            self.stability_tail
        )
    }
}

pub fn evaluate_seed(
    sim: &Simulator<f32>,
    params: Option<&ControllerParams<f32>>,
    seed: u64,
    horizon: usize,
    spec: &ConvergenceSpec,
) -> SeedResult {
    match sim.eval_rollout(params, seed, horizon, |_| Ok(())) {
        Ok((rec, _)) => SeedResult::from_record(seed, &rec, spec),
        Err(e) => SeedResult::failed(seed, &e),
    }
}

/// Runs every seed without gradient recording and aggregates in seed order.
pub fn evaluate(
    regime: &str,
    scenario: &Scenario,
    params: Option<&ControllerParams<f32>>,
    seeds: &[u64],
    horizon: usize,
    spec: &ConvergenceSpec,
    exec: Execution,
) -> Result<(RegimeReport, Vec<SeedResult>)> {
    spec.validate()?;
    if seeds.is_empty() {
        return Err(Error::config("evaluation needs at least one seed"));
    }
    if horizon < spec.ma_window + spec.hold_steps {
        return Err(Error::config(format!(
            "horizon {horizon} is shorter than ma_window + hold_steps ({})",
            spec.ma_window + spec.hold_steps
        )));
    }
    let sim = Simulator::<f32>::new(scenario.clone())?;
    let results = exec.map(seeds, |&s| evaluate_seed(&sim, params, s, horizon, spec));
    Ok((RegimeReport::aggregate(regime, horizon, &results), results))
}

#[cfg(test)]
mod tests;
