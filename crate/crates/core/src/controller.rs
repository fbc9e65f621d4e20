//! Convolutional policy that proposes feed/kill modulation fields.
//!
//! Architecture: `(U, V)` stacked as two channels, then three 3x3 convolutions
//! `2 -> 16 -> 16 -> 2`, each followed by `tanh`. The two output channels are
//! box-smoothed and multiplied by the scheduled amplitude, so
//! `|dF|, |dK| <= amplitude_at(t)` pointwise.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

pub const INPUT_CHANNELS: usize = 2;
pub const HIDDEN_CHANNELS: usize = 16;
pub const OUTPUT_CHANNELS: usize = 2;

/// `(c_in, c_out)` of each layer.
pub const LAYER_CHANNELS: [(usize, usize); 3] = [
    (INPUT_CHANNELS, HIDDEN_CHANNELS),
    (HIDDEN_CHANNELS, HIDDEN_CHANNELS),
    (HIDDEN_CHANNELS, OUTPUT_CHANNELS),
];

const BOX_STENCIL: [f64; 9] = [1.0 / 9.0; 9];

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T: Real> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerParams<T: Real> {
    pub layers: [ConvLayer<T>; 3],
}

impl<T: Real> ControllerParams<T> {
    /// Gaussian weights with `sigma = 1/sqrt(fan_in)`, zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let layers = LAYER_CHANNELS.map(|(ci, co)| {
            let sigma = 1.0 / ((ci * 9) as f64).sqrt();
            ConvLayer {
                kernel: Tensor::from_fn(&[co, ci, 3, 3], |_| T::lit(sigma * rng.gaussian())),
                bias: Tensor::zeros(&[co]),
            }
        });
        Self { layers }
    }

    pub fn zeros() -> Self {
        Self {
            layers: LAYER_CHANNELS.map(|(ci, co)| ConvLayer {
                kernel: Tensor::zeros(&[co, ci, 3, 3]),
                bias: Tensor::zeros(&[co]),
            }),
        }
    }

    /// Parameter tensors in a fixed order: kernel, bias per layer.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.kernel, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.kernel, &mut l.bias])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (layer, (ci, co))) in self.layers.iter().zip(LAYER_CHANNELS).enumerate() {
            if layer.kernel.shape() != [co, ci, 3, 3] || layer.bias.shape() != [co] {
                return Err(Error::config(format!(
                    "layer {i}: expected kernel [{co},{ci},3,3] and bias [{co}], got {:?} and {:?}",
                    layer.kernel.shape(),
                    layer.bias.shape()
                )));
            }
            if !layer.kernel.is_finite() || !layer.bias.is_finite() {
                return Err(Error::NonFinite {
                    op: "controller params",
                    step: None,
                });
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ControllerParams<U> {
        ControllerParams {
            layers: self.layers.clone().map(|l| ConvLayer {
                kernel: l.kernel.cast(),
                bias: l.bias.cast(),
            }),
        }
    }

    /// Places the parameters on a tape, as leaves when `trainable`.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> PolicyVars {
        let mut put = |t: &Tensor<T>| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let layers = [0, 1, 2].map(|i| (put(&self.layers[i].kernel), put(&self.layers[i].bias)));
        PolicyVars { layers }
    }
}

/// Tape handles of a registered [`ControllerParams`].
#[derive(Clone, Copy, Debug)]
pub struct PolicyVars {
    pub layers: [(Var, Var); 3],
}

impl PolicyVars {
    /// Same order as [`ControllerParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(k, b)| [k, b]).collect()
    }
}

/// Raw policy outputs in `(-1, 1)` for `[H,W]` fields `u`, `v`.
pub fn policy_forward<T: Real>(
    tape: &mut Tape<T>,
    p: &PolicyVars,
    u: Var,
    v: Var,
) -> Result<(Var, Var)> {
    if tape.shape(u) != tape.shape(v) || tape.shape(u).len() != 2 {
        return Err(Error::config(format!(
            "policy input fields must share an [H,W] shape, got {:?} and {:?}",
            tape.shape(u),
            tape.shape(v)
        )));
    }
    let mut x = tape.stack(&[u, v])?;
    for &(kernel, bias) in &p.layers {
        let z = tape.conv2d(x, kernel, bias)?;
        x = tape.tanh(z)?;
    }
    Ok((tape.select(x, 0)?, tape.select(x, 1)?))
}

/// 3x3 box mean with reflect padding.
pub fn smooth3_on<T: Real>(tape: &mut Tape<T>, f: Var) -> Result<Var> {
    tape.stencil3x3(f, BOX_STENCIL.map(T::lit))
}

pub fn smooth3<T: Real>(f: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(f.clone());
    let y = smooth3_on(&mut tape, x)?;
    Ok(tape.value(y).clone())
}

/// Warm-hold-decay gain profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub amplitude: f64,
    pub warm: usize,
    pub hold: usize,
    pub decay: usize,
}

impl Default for GainSchedule {
    fn default() -> Self {
        Self {
            amplitude: 0.03,
            warm: 10,
            hold: 60,
            decay: 50,
        }
    }
}

impl GainSchedule {
    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    /// Ramp over `[0, warm)`, plateau over `[warm, warm+hold)`, linear fall
    /// over the next `decay` steps, then zero.
    pub fn amplitude_at(&self, t: usize) -> f64 {
        let a = self.amplitude;
        let hold_end = self.warm.saturating_add(self.hold);
        if t < self.warm {
            a * t as f64 / self.warm as f64
        } else if t < hold_end {
            a
        } else if t - hold_end < self.decay {
            a * (1.0 - (t - hold_end) as f64 / self.decay as f64)
        } else {
            0.0
        }
    }

    /// First step after which the gain is zero forever.
    pub fn end(&self) -> usize {
        self.warm
            .saturating_add(self.hold)
            .saturating_add(self.decay)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::config(format!(
                "amplitude must be >= 0, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// Scheduled control fields at step `t`; `None` when the gain is zero
/// (the fields are identically zero and the network is not evaluated).
pub fn control_fields_on<T: Real>(
    tape: &mut Tape<T>,
    p: &PolicyVars,
    schedule: &GainSchedule,
    t: usize,
    u: Var,
    v: Var,
) -> Result<Option<(Var, Var)>> {
    let gain = schedule.amplitude_at(t);
    if gain == 0.0 {
        return Ok(None);
    }
    let (raw_f, raw_k) = policy_forward(tape, p, u, v)?;
    let mut scaled = |raw| -> Result<Var> {
        let s = smooth3_on(tape, raw)?;
        tape.scale(s, T::lit(gain))
    };
    Ok(Some((scaled(raw_f)?, scaled(raw_k)?)))
}

/// Standalone version of [`control_fields_on`]; returns explicit zero fields
/// when the gain is zero.
pub fn control_fields<T: Real>(
    params: &ControllerParams<T>,
    schedule: &GainSchedule,
    t: usize,
    u: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let (ui, vi) = (tape.constant(u.clone()), tape.constant(v.clone()));
    match control_fields_on(&mut tape, &vars, schedule, t, ui, vi)? {
        Some((df, dk)) => Ok((tape.value(df).clone(), tape.value(dk).clone())),
        None => Ok((Tensor::zeros(u.shape()), Tensor::zeros(u.shape()))),
    }
}

/// Raw `(rawF, rawK)` for standalone fields.
pub fn raw_outputs<T: Real>(
    params: &ControllerParams<T>,
    u: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let (ui, vi) = (tape.constant(u.clone()), tape.constant(v.clone()));
    let (f, k) = policy_forward(&mut tape, &vars, ui, vi)?;
    Ok((tape.value(f).clone(), tape.value(k).clone()))
}
