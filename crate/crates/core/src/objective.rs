//! Training loss: hinge spectral deficit, gated stability penalty, l1 control
//! cost and a tail-averaged sustain term.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::spectral::SpectralMetrics;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_ratio: f64,
    pub w_power: f64,
    pub w_stab: f64,
    pub w_l1: f64,
    pub w_sustain: f64,
    pub ratio_target: f64,
    pub power_target: f64,
    pub sustain_frac: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_ratio: 1.0,
            w_power: 1.0,
            // mean |dV| near a settled pattern is ~1e-4, so the squared
            // penalty needs a large weight to register next to the deficits
            w_stab: 1e6,
            w_l1: 0.1,
            w_sustain: 1.0,
            ratio_target: 0.22,
            power_target: 1.2e-4,
            sustain_frac: 0.25,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("w_ratio", self.w_ratio),
            ("w_power", self.w_power),
            ("w_stab", self.w_stab),
            ("w_l1", self.w_l1),
            ("w_sustain", self.w_sustain),
        ];
        for (name, w) in named {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::config(format!(
                    "{name} must be a finite value >= 0, got {w}"
                )));
            }
        }
        if !(self.ratio_target > 0.0) || !(self.power_target > 0.0) {
            return Err(Error::config("ratio_target and power_target must be > 0"));
        }
        if !(self.sustain_frac > 0.0 && self.sustain_frac <= 1.0) {
            return Err(Error::config(format!(
                "sustain_frac must lie in (0, 1], got {}",
                self.sustain_frac
            )));
        }
        Ok(())
    }

    pub fn targets_met(&self, ratio: f64, power: f64) -> bool {
        ratio >= self.ratio_target && power >= self.power_target
    }

    /// First index of the sustain window for a rollout of length `t`.
    pub fn sustain_start(&self, t: usize) -> usize {
        let s = ((1.0 - self.sustain_frac) * t as f64).ceil() as usize;
        s.min(t.saturating_sub(1))
    }
}

pub fn spectral_deficit(m: SpectralMetrics, w: &LossWeights) -> f64 {
    w.w_ratio * (1.0 - m.band_ratio / w.ratio_target).max(0.0)
        + w.w_power * (1.0 - m.band_power / w.power_target).max(0.0)
}

/// Per-step series of one rollout. Entry `t` describes the state after step
/// `t + 1`; `delta_v[t]` is the mean absolute change of V over that step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub band_ratio: Vec<f64>,
    pub band_power: Vec<f64>,
    pub delta_v: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
}

impl RolloutRecord {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            band_ratio: Vec::with_capacity(n),
            band_power: Vec::with_capacity(n),
            delta_v: Vec::with_capacity(n),
            l1: Vec::with_capacity(n),
            l2: Vec::with_capacity(n),
        }
    }

    pub fn horizon(&self) -> usize {
        self.band_ratio.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon();
        let lens = [
            self.band_power.len(),
            self.delta_v.len(),
            self.l1.len(),
            self.l2.len(),
        ];
        if lens.iter().any(|&n| n != t) {
            return Err(Error::config(format!(
                "rollout record series lengths differ: {t} vs {lens:?}"
            )));
        }
        Ok(())
    }

    pub fn metrics_at(&self, t: usize) -> SpectralMetrics {
        SpectralMetrics {
            band_ratio: self.band_ratio[t],
            band_power: self.band_power[t],
        }
    }

    pub fn l1_mean(&self) -> f64 {
        mean(&self.l1)
    }

    pub fn l2_mean(&self) -> f64 {
        mean(&self.l2)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Tape handles for the loss-relevant quantities of one step (scalars).
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub ratio: Var,
    pub power: Var,
    pub delta_v: Var,
    pub l1: Var,
}

/// Weighted loss contributions; `total` is their sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub deficit_final: f64,
    pub stab: f64,
    pub l1: f64,
    pub sustain: f64,
    pub total: f64,
    /// Index of the first step meeting both targets (horizon if none).
    pub gate: usize,
}

pub const MIN_LOSS_HORIZON: usize = 4;

fn deficit_on<T: Real>(tape: &mut Tape<T>, s: &StepVars, w: &LossWeights) -> Result<Var> {
    let mut hinge = |x: Var, target: f64, weight: f64| -> Result<Var> {
        let r = tape.scale(x, T::lit(-1.0 / target))?;
        let r = tape.offset(r, T::one())?;
        let r = tape.relu(r)?;
        tape.scale(r, T::lit(weight))
    };
    let a = hinge(s.ratio, w.ratio_target, w.w_ratio)?;
    let b = hinge(s.power, w.power_target, w.w_power)?;
    tape.add(a, b)
}

/// Builds the total loss on the tape. The gate index is read from forward
/// values and carries no gradient.
pub fn total_loss_on<T: Real>(
    tape: &mut Tape<T>,
    steps: &[StepVars],
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let horizon = steps.len();
    if horizon < MIN_LOSS_HORIZON {
        return Err(Error::config(format!(
            "loss needs a horizon of at least {MIN_LOSS_HORIZON} steps, got {horizon}"
        )));
    }
    let mut gate = horizon;
    for (t, s) in steps.iter().enumerate() {
        let (r, p) = (
            tape.item(s.ratio)?.to_f64_lossy(),
            tape.item(s.power)?.to_f64_lossy(),
        );
        if w.targets_met(r, p) {
            gate = t;
            break;
        }
    }

    let deficit_final = deficit_on(tape, &steps[horizon - 1], w)?;

    let stab = if gate + 1 < horizon {
        let sq = steps[gate + 1..]
            .iter()
            .map(|s| tape.square(s.delta_v))
            .collect::<Result<Vec<_>>>()?;
        let m = tape.mean_n(&sq)?;
        Some(tape.scale(m, T::lit(w.w_stab))?)
    } else {
        None
    };

    let l1s: Vec<Var> = steps.iter().map(|s| s.l1).collect();
    let l1 = tape.mean_n(&l1s)?;
    let l1 = tape.scale(l1, T::lit(w.w_l1))?;

    let tail = steps[w.sustain_start(horizon)..]
        .iter()
        .map(|s| deficit_on(tape, s, w))
        .collect::<Result<Vec<_>>>()?;
    let sustain = tape.mean_n(&tail)?;
    let sustain = tape.scale(sustain, T::lit(w.w_sustain))?;

    let mut parts = vec![deficit_final, l1, sustain];
    parts.extend(stab);
    let total = tape.add_n(&parts)?;

    let val = |tape: &Tape<T>, v: Var| tape.item(v).map(|x| x.to_f64_lossy());
    let breakdown = LossBreakdown {
        deficit_final: val(tape, deficit_final)?,
        stab: match stab {
            Some(s) => val(tape, s)?,
            None => 0.0,
        },
        l1: val(tape, l1)?,
        sustain: val(tape, sustain)?,
        total: val(tape, total)?,
        gate,
    };
    Ok((total, breakdown))
}

/// Loss of a recorded rollout, evaluated with the same code path as training.
pub fn total_loss(rec: &RolloutRecord, w: &LossWeights) -> Result<LossBreakdown> {
    rec.validate()?;
    let mut tape = Tape::<f64>::new();
    let mut c = |x: f64| tape.constant(Tensor::scalar(x));
    let steps: Vec<StepVars> = (0..rec.horizon())
        .map(|t| StepVars {
            ratio: c(rec.band_ratio[t]),
            power: c(rec.band_power[t]),
            delta_v: c(rec.delta_v[t]),
            l1: c(rec.l1[t]),
        })
        .collect();
    Ok(total_loss_on(&mut tape, &steps, w)?.1)
}
