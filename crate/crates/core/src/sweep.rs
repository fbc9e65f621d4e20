//! Amplitude sweeps with frozen weights, Pareto fronts over
//! (control cost, band selectivity) and the farthest-from-chord knee.

use serde::{Deserialize, Serialize};

use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_seed, ConvergenceSpec, RegimeReport, SeedResult};
use crate::exec::Execution;
use crate::rollout::{Scenario, Simulator};

pub const DEFAULT_AMPLITUDES: [f64; 5] = [0.0, 0.015, 0.03, 0.045, 0.08];
pub const REFERENCE_AMPLITUDE: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub amplitude: f64,
    pub report: RegimeReport,
    /// Mean l2 power as a multiple of the reference amplitude's; `None` when
    /// the reference has no control power.
    pub l2_relative: Option<f64>,
}

impl SweepPoint {
    pub const CSV_HEADER: &'static str =
        "amplitude,quasi_rate,t_quasi_median,band_ratio_median,l1_mean,l2_mean,l2_relative,strict_rate,n_failed";

    /// Converged in the median seed.
    pub fn converged(&self) -> bool {
        self.report.t_quasi_median.is_some()
    }

    pub fn csv_row(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.amplitude,
            r.quasi_rate,
            r.t_quasi_median
                .map(|t| t.to_string())
                .unwrap_or_else(|| format!(">={}", r.horizon)),
            r.band_ratio_median,
            r.l1_mean,
            r.l2_mean,
            self.l2_relative.map(|x| x.to_string()).unwrap_or_default(),
            r.strict_rate,
            r.n_failed,
        )
    }
}

/// Reference point: the one at [`REFERENCE_AMPLITUDE`] if present, else the first.
fn reference_index(amps: &[f64]) -> usize {
    amps.iter()
        .position(|&a| a == REFERENCE_AMPLITUDE)
        .unwrap_or(0)
}

/// Per-seed result of one sweep amplitude.
pub type SweepRow = (f64, SeedResult);

/// Evaluates the frozen controller at each amplitude on identical seeds.
/// Every (amplitude, seed) rollout is an independent job.
#[allow(clippy::too_many_arguments)]
pub fn amplitude_sweep(
    base: &Scenario,
    params: &ControllerParams<f32>,
    amps: &[f64],
    seeds: &[u64],
    horizon: usize,
    spec: &ConvergenceSpec,
    exec: Execution,
) -> Result<(Vec<SweepPoint>, Vec<SweepRow>)> {
    if amps.is_empty() || seeds.is_empty() {
        return Err(Error::config(
            "amplitude sweep needs at least one amplitude and one seed",
        ));
    }
    spec.validate()?;
    let sims = amps
        .iter()
        .map(|&a| {
            let mut sc = base.clone();
            sc.schedule.amplitude = a;
            Simulator::<f32>::new(sc)
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..amps.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results = exec.map(&jobs, |&(i, s)| {
        evaluate_seed(&sims[i], Some(params), s, horizon, spec)
    });

    let mut points: Vec<SweepPoint> = amps
        .iter()
        .zip(results.chunks(seeds.len()))
        .map(|(&a, rows)| SweepPoint {
            amplitude: a,
            report: RegimeReport::aggregate(&format!("hybrid@{a}"), horizon, rows),
            l2_relative: None,
        })
        .collect();
    let r = reference_index(amps);
    let ref_l2 = points[r].report.l2_mean;
    for (i, p) in points.iter_mut().enumerate() {
        p.l2_relative = if i == r {
            Some(1.0)
        } else if ref_l2 > 0.0 {
            Some(p.report.l2_mean / ref_l2)
        } else {
            None
        };
    }
    let rows = jobs.iter().map(|&(i, _)| amps[i]).zip(results).collect();
    Ok((points, rows))
}

/// Indices of the non-dominated points (minimize cost, maximize quality),
/// ordered by cost. Exact ties are kept; non-finite points are ignored.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].0.is_finite() && points[i].1.is_finite())
        .collect();
    idx.sort_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        pa.0.total_cmp(&pb.0)
            .then(pb.1.total_cmp(&pa.1))
            .then(a.cmp(&b))
    });
    let mut front = Vec::new();
    let mut best_cheaper = f64::NEG_INFINITY;
    let mut g = 0;
    while g < idx.len() {
        let cost = points[idx[g]].0;
        let end = idx[g..]
            .iter()
            .position(|&i| points[i].0 != cost)
            .map_or(idx.len(), |k| g + k);
        // first entry of a cost group carries its best quality
        let top = points[idx[g]].1;
        if top > best_cheaper {
            front.extend(idx[g..end].iter().copied().filter(|&i| points[i].1 == top));
            best_cheaper = top;
        }
        g = end;
    }
    front
}

/// Min-max bounds used to normalize both axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub cost_min: f64,
    pub cost_max: f64,
    pub quality_min: f64,
    pub quality_max: f64,
}

impl Normalization {
    pub fn of(points: &[(f64, f64)]) -> Self {
        let mut n = Self {
            cost_min: f64::INFINITY,
            cost_max: f64::NEG_INFINITY,
            quality_min: f64::INFINITY,
            quality_max: f64::NEG_INFINITY,
        };
        for &(c, q) in points {
            n.cost_min = n.cost_min.min(c);
            n.cost_max = n.cost_max.max(c);
            n.quality_min = n.quality_min.min(q);
            n.quality_max = n.quality_max.max(q);
        }
        n
    }

    pub fn apply(&self, (c, q): (f64, f64)) -> (f64, f64) {
        let scale = |x: f64, lo: f64, hi: f64| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
        (
            scale(c, self.cost_min, self.cost_max),
            scale(q, self.quality_min, self.quality_max),
        )
    }
}

/// Position in `front` (sorted by cost) of the point farthest from the chord
/// joining the first and last points after normalization. Ties and fronts of
/// at most two points resolve to the cheapest point.
pub fn knee(front: &[(f64, f64)]) -> Option<usize> {
    if front.is_empty() {
        return None;
    }
    if front.len() <= 2 {
        return Some(0);
    }
    let norm = Normalization::of(front);
    let pts: Vec<(f64, f64)> = front.iter().map(|&p| norm.apply(p)).collect();
    let (a, b) = (pts[0], pts[pts.len() - 1]);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return Some(0);
    }
    let mut best = (0, 0.0);
    for (i, p) in pts.iter().enumerate() {
        let d = (dx * (p.1 - a.1) - dy * (p.0 - a.0)).abs() / len;
        if d > best.1 {
            best = (i, d);
        }
    }
    Some(best.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostAxis {
    L2,
    L1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoResult {
    pub converged_only: bool,
    pub cost_axis: CostAxis,
    /// Amplitudes on the front, by increasing cost.
    pub front: Vec<f64>,
    pub knee: Option<f64>,
    pub normalization: Option<Normalization>,
}

/// Front and knee over sweep points, by default restricted to points whose
/// median seed quasi-converged.
pub fn sweep_pareto(
    points: &[SweepPoint],
    converged_only: bool,
    cost_axis: CostAxis,
) -> ParetoResult {
    let cand: Vec<&SweepPoint> = points
        .iter()
        .filter(|p| !converged_only || p.converged())
        .collect();
    let xy: Vec<(f64, f64)> = cand
        .iter()
        .map(|p| {
            let c = match cost_axis {
                CostAxis::L2 => p.report.l2_mean,
                CostAxis::L1 => p.report.l1_mean,
            };
            (c, p.report.band_ratio_median)
        })
        .collect();
    let front = pareto_front(&xy);
    let fxy: Vec<(f64, f64)> = front.iter().map(|&i| xy[i]).collect();
    ParetoResult {
        converged_only,
        cost_axis,
        front: front.iter().map(|&i| cand[i].amplitude).collect(),
        knee: knee(&fxy).map(|k| cand[front[k]].amplitude),
        normalization: (!fxy.is_empty()).then(|| Normalization::of(&fxy)),
    }
}
