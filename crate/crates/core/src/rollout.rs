//! Controlled rollouts: regime presets, the differentiable training rollout
//! and the memory-flat evaluation rollout. Both share one per-step routine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::controller::{control_fields_on, ControllerParams, GainSchedule, PolicyVars};
use crate::error::{Error, Result};
use crate::objective::{total_loss_on, LossBreakdown, LossWeights, RolloutRecord, StepVars};
use crate::rd::{
    gs_step_on, init_state, SimParams, SimState, DEFAULT_NOISE_SIGMA, DEFAULT_PATCH_HALF,
};
use crate::spectral::{BandSpec, SpectralPlan};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub noise_sigma: f64,
    pub patch_half: usize,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            noise_sigma: DEFAULT_NOISE_SIGMA,
            patch_half: DEFAULT_PATCH_HALF,
        }
    }
}

/// Everything except the controller weights that determines a rollout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub sim: SimParams,
    pub schedule: GainSchedule,
    pub band: BandSpec,
    pub init: InitSpec,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.schedule.validate()?;
        self.band.validate()?;
        if !(self.init.noise_sigma >= 0.0) {
            return Err(Error::config(format!(
                "noise_sigma must be >= 0, got {}",
                self.init.noise_sigma
            )));
        }
        Ok(())
    }

    pub fn initial_state<T: Real>(&self, seed: u64) -> Result<SimState<T>> {
        init_state(seed, &self.sim, self.init.noise_sigma, self.init.patch_half)
    }
}

pub const NN_DOMINANT_AMPLITUDE: f64 = 0.30;

/// Long enough that the gain never leaves its plateau inside any horizon.
const NO_DECAY_HOLD: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    PureRd,
    NnDominant,
    Hybrid,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::PureRd, Regime::NnDominant, Regime::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Regime::PureRd => "pure_rd",
            Regime::NnDominant => "nn_dominant",
            Regime::Hybrid => "hybrid",
        }
    }

    /// Base rates and gain schedule of the regime on an `n x n` grid.
    pub fn scenario(self, n: usize) -> Scenario {
        let sim = SimParams::default().with_grid(n);
        let (sim, schedule) = match self {
            Regime::PureRd => (sim, GainSchedule::default().with_amplitude(0.0)),
            Regime::NnDominant => (
                sim.with_base(0.01, 0.01),
                GainSchedule {
                    amplitude: NN_DOMINANT_AMPLITUDE,
                    warm: 10,
                    hold: NO_DECAY_HOLD,
                    decay: 0,
                },
            ),
            Regime::Hybrid => (sim, GainSchedule::default()),
        };
        Scenario {
            sim,
            schedule,
            ..Default::default()
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pure_rd" | "cell_only" => Ok(Regime::PureRd),
            "nn_dominant" | "brain_only" => Ok(Regime::NnDominant),
            "hybrid" => Ok(Regime::Hybrid),
            _ => Err(Error::config(format!(
                "unknown regime {s:?}; expected pure_rd, nn_dominant or hybrid"
            ))),
        }
    }
}

struct Advanced {
    u: Var,
    v: Var,
    step: StepVars,
    l2: f64,
}

/// A scenario bound to a precision, with its FFT plan prepared once.
#[derive(Clone, Debug)]
pub struct Simulator<T: Real> {
    scenario: Scenario,
    plan: SpectralPlan<T>,
}

/// Result of a differentiable rollout.
#[derive(Clone, Debug)]
pub struct TrainRollout<T: Real> {
    pub loss: LossBreakdown,
    /// Gradients in [`ControllerParams::tensors`] order.
    pub grads: Vec<Tensor<T>>,
    pub record: RolloutRecord,
}

impl<T: Real> Simulator<T> {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let [h, w] = scenario.sim.field_shape();
        Ok(Self {
            plan: SpectralPlan::new(h, w, scenario.band)?,
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn advance(
        &self,
        tape: &mut Tape<T>,
        policy: Option<&PolicyVars>,
        u: Var,
        v: Var,
        t: usize,
    ) -> Result<Advanced> {
        let controls = match policy {
            Some(p) => control_fields_on(tape, p, &self.scenario.schedule, t, u, v)?,
            None => None,
        };
        let (df, dk) = controls.unzip();
        let (u2, v2) = gs_step_on(tape, &self.scenario.sim, u, v, df, dk)?;

        let change = tape.sub(v2, v)?;
        let change = tape.abs(change)?;
        let delta_v = tape.mean(change)?;

        let (l1, l2) = match controls {
            Some((df, dk)) => {
                let l2 = [df, dk]
                    .iter()
                    .map(|&x| {
                        tape.value(x)
                            .data()
                            .iter()
                            .map(|a| a.to_f64_lossy().powi(2))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    / tape.value(df).len() as f64;
                let af = tape.abs(df)?;
                let ak = tape.abs(dk)?;
                let s = tape.add(af, ak)?;
                (tape.mean(s)?, l2)
            }
            None => (tape.constant(Tensor::scalar(T::zero())), 0.0),
        };
        let band = self.plan.band_terms(tape, v2)?;
        Ok(Advanced {
            u: u2,
            v: v2,
            step: StepVars {
                ratio: band.ratio,
                power: band.power,
                delta_v,
                l1,
            },
            l2,
        })
    }

    fn push_record(tape: &Tape<T>, a: &Advanced, rec: &mut RolloutRecord) -> Result<()> {
        let get = |v: Var| tape.item(v).map(|x| x.to_f64_lossy());
        rec.band_ratio.push(get(a.step.ratio)?);
        rec.band_power.push(get(a.step.power)?);
        rec.delta_v.push(get(a.step.delta_v)?);
        rec.l1.push(get(a.step.l1)?);
        rec.l2.push(a.l2);
        Ok(())
    }

    /// Rolls out `horizon` steps on one tape from the seeded initial state,
    /// then backpropagates the total loss into the controller weights.
    pub fn train_rollout(
        &self,
        params: &ControllerParams<T>,
        seed: u64,
        horizon: usize,
        weights: &LossWeights,
    ) -> Result<TrainRollout<T>> {
        let state: SimState<T> = self.scenario.initial_state(seed)?;
        let mut tape = Tape::new();
        let policy = params.register(&mut tape, true);
        let mut u = tape.constant(state.u);
        let mut v = tape.constant(state.v);
        let mut steps = Vec::with_capacity(horizon);
        let mut record = RolloutRecord::with_capacity(horizon);
        for t in 0..horizon {
            let a = self
                .advance(&mut tape, Some(&policy), u, v, t)
                .map_err(|e| e.at_step(t))?;
            Self::push_record(&tape, &a, &mut record)?;
            steps.push(a.step);
            (u, v) = (a.u, a.v);
        }
        let (loss_var, loss) = total_loss_on(&mut tape, &steps, weights)?;
        tape.backward(loss_var)?;
        let grads = policy
            .vars()
            .into_iter()
            .zip(params.tensors())
            .map(|(var, p)| {
                tape.grad(var)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.shape()))
            })
            .collect();
        Ok(TrainRollout {
            loss,
            grads,
            record,
        })
    }

    /// Forward-only rollout with a fresh tape per step, so memory does not
    /// grow with the horizon. `observe` sees the initial state and the state
    /// after every step.
    pub fn eval_rollout(
        &self,
        params: Option<&ControllerParams<T>>,
        seed: u64,
        horizon: usize,
        mut observe: impl FnMut(&SimState<T>) -> Result<()>,
    ) -> Result<(RolloutRecord, SimState<T>)> {
        let mut state: SimState<T> = self.scenario.initial_state(seed)?;
        observe(&state)?;
        let mut record = RolloutRecord::with_capacity(horizon);
        for t in 0..horizon {
            let mut tape = Tape::new();
            let policy = params.map(|p| p.register(&mut tape, false));
            let u = tape.constant(state.u);
            let v = tape.constant(state.v);
            let a = self
                .advance(&mut tape, policy.as_ref(), u, v, t)
                .map_err(|e| e.at_step(t))?;
            Self::push_record(&tape, &a, &mut record)?;
            state = SimState {
                u: tape.value(a.u).clone(),
                v: tape.value(a.v).clone(),
                t: t + 1,
            };
            observe(&state)?;
        }
        Ok((record, state))
    }
}
