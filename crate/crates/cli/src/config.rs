//! Flat key-value run configuration: defaults, then a JSON file, then
//! `--key=value` flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use rdsteer::controller::GainSchedule;
use rdsteer::evaluator::ConvergenceSpec;
use rdsteer::exec::Execution;
use rdsteer::objective::LossWeights;
use rdsteer::optim::AdamConfig;
use rdsteer::rd::{SimParams, DEFAULT_NOISE_SIGMA, DEFAULT_PATCH_HALF};
use rdsteer::rollout::{InitSpec, Regime, Scenario};
use rdsteer::spectral::BandSpec;
use rdsteer::sweep::{CostAxis, DEFAULT_AMPLITUDES};
use rdsteer::trainer::TrainConfig;
use rdsteer::{Error, Result};

pub const THREADS_ENV: &str = "RDSTEER_THREADS";

/// Every key, with its default. See `docs/config.md`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,

    pub regime: String,
    pub grid: usize,
    pub du: f64,
    pub dv: f64,
    pub dt: f64,
    pub f0: Option<f64>,
    pub k0: Option<f64>,
    pub noise_sigma: f64,
    pub patch_half: usize,
    pub amp: Option<f64>,
    pub warm: Option<usize>,
    pub hold: Option<usize>,
    pub decay: Option<usize>,
    pub r_lo: f64,
    pub r_hi: f64,

    pub episodes: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub horizon_min: usize,
    pub horizon_max: usize,
    pub w_ratio: f64,
    pub w_power: f64,
    pub w_stab: f64,
    pub w_l1: f64,
    pub w_sustain: f64,
    pub ratio_target: f64,
    pub power_target: f64,
    pub sustain_frac: f64,
    pub checkpoint_every: usize,
    pub max_retries: usize,
    pub resume: bool,

    pub checkpoint: Option<PathBuf>,
    pub allow_incomplete: bool,
    pub n_seeds: usize,
    pub seed_start: u64,
    pub horizon: usize,
    pub dv_thresh: f64,
    pub ma_window: usize,
    pub hold_steps: usize,
    pub ratio_gate: f64,
    pub power_gate: f64,
    pub quasi_ratio_tol: f64,
    pub quasi_power_tol: f64,
    pub quasi_dv_factor: Option<f64>,
    pub dump_final: bool,

    pub amps: Vec<f64>,
    pub sweep_horizon: usize,
    pub converged_only: bool,
    pub cost_axis: CostAxis,

    pub steps: usize,
    pub snapshot_every: usize,

    pub input: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimParams::default();
        let adam = AdamConfig::default();
        let w = LossWeights::default();
        let conv = ConvergenceSpec::default();
        let band = BandSpec::default();
        let train = TrainConfig::default();
        Self {
            out_dir: PathBuf::from("run"),
            seed: 0,
            threads: None,

            regime: Regime::Hybrid.name().to_string(),
            grid: 48,
            du: sim.du,
            dv: sim.dv,
            dt: sim.dt,
            f0: None,
            k0: None,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            patch_half: DEFAULT_PATCH_HALF,
            amp: None,
            warm: None,
            hold: None,
            decay: None,
            r_lo: band.r_lo,
            r_hi: band.r_hi,

            episodes: train.episodes,
            lr: adam.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            clip_norm: adam.clip_norm,
            horizon_min: train.horizon_min,
            horizon_max: train.horizon_max,
            w_ratio: w.w_ratio,
            w_power: w.w_power,
            w_stab: w.w_stab,
            w_l1: w.w_l1,
            w_sustain: w.w_sustain,
            ratio_target: w.ratio_target,
            power_target: w.power_target,
            sustain_frac: w.sustain_frac,
            checkpoint_every: 25,
            max_retries: train.max_retries,
            resume: false,

            checkpoint: None,
            allow_incomplete: false,
            n_seeds: 16,
            seed_start: 1000,
            horizon: 120,
            dv_thresh: conv.dv_thresh,
            ma_window: conv.ma_window,
            hold_steps: conv.hold_steps,
            ratio_gate: conv.ratio_gate,
            power_gate: conv.power_gate,
            quasi_ratio_tol: conv.quasi_ratio_tol,
            quasi_power_tol: conv.quasi_power_tol,
            quasi_dv_factor: conv.quasi_dv_factor,
            dump_final: false,

            amps: DEFAULT_AMPLITUDES.to_vec(),
            sweep_horizon: 120,
            converged_only: true,
            cost_axis: CostAxis::L2,

            steps: 240,
            snapshot_every: 40,

            input: None,
        }
    }
}

fn default_map() -> Map<String, Value> {
    match serde_json::to_value(RunConfig::default()) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("RunConfig serializes to an object"),
    }
}

/// Splits `--key=value` flags; values parse as JSON when they can and are
/// taken as strings otherwise.
pub fn parse_flags(args: &[String]) -> Result<(Option<PathBuf>, Map<String, Value>)> {
    let mut file = None;
    let mut flags = Map::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let body = a.strip_prefix("--").ok_or_else(|| {
            Error::Usage(format!(
                "unexpected argument {a:?}; options look like --key=value"
            ))
        })?;
        let (key, raw) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Usage(format!("option --{body} needs a value")))?;
                (body.to_string(), v.clone())
            }
        };
        let key = key.replace('-', "_");
        if key == "config" {
            file = Some(PathBuf::from(raw));
            continue;
        }
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        flags.insert(key, value);
    }
    Ok((file, flags))
}

fn read_file(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::config(format!(
            "{}: config must be a JSON object",
            path.display()
        ))),
        Err(e) => Err(Error::config(format!("{}: {e}", path.display()))),
    }
}

/// Merges defaults, file values and flag values (later wins), rejecting
/// unknown keys and naming the key of any type error.
pub fn resolve(file: Option<&Path>, flags: Map<String, Value>) -> Result<RunConfig> {
    let defaults = default_map();
    let mut merged = defaults.clone();
    let mut given = Vec::new();
    let layers = [file.map(read_file).transpose()?, Some(flags)];
    for layer in layers.into_iter().flatten() {
        for (k, v) in layer {
            if !defaults.contains_key(&k) {
                return Err(Error::config(format!("unknown config key {k:?}")));
            }
            given.push(k.clone());
            merged.insert(k, v);
        }
    }
    let cfg: RunConfig = match serde_json::from_value(Value::Object(merged.clone())) {
        Ok(c) => c,
        Err(e) => {
            for k in &given {
                let mut probe = defaults.clone();
                probe.insert(k.clone(), merged[k].clone());
                if let Err(err) = serde_json::from_value::<RunConfig>(Value::Object(probe)) {
                    return Err(Error::config(format!("config key {k:?}: {err}")));
                }
            }
            return Err(Error::config(e.to_string()));
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn regime(&self) -> Result<Regime> {
        self.regime.parse()
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let mut sc = self.regime()?.scenario(self.grid);
        sc.sim = SimParams {
            du: self.du,
            dv: self.dv,
            dt: self.dt,
            f0: self.f0.unwrap_or(sc.sim.f0),
            k0: self.k0.unwrap_or(sc.sim.k0),
            ..sc.sim
        };
        let s = sc.schedule;
        sc.schedule = GainSchedule {
            amplitude: self.amp.unwrap_or(s.amplitude),
            warm: self.warm.unwrap_or(s.warm),
            hold: self.hold.unwrap_or(s.hold),
            decay: self.decay.unwrap_or(s.decay),
        };
        sc.band = BandSpec::new(self.r_lo, self.r_hi)?;
        sc.init = InitSpec {
            noise_sigma: self.noise_sigma,
            patch_half: self.patch_half,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            episodes: self.episodes,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
                clip_norm: self.clip_norm,
            },
            horizon_min: self.horizon_min,
            horizon_max: self.horizon_max,
            scenario: self.scenario()?,
            weights: LossWeights {
                w_ratio: self.w_ratio,
                w_power: self.w_power,
                w_stab: self.w_stab,
                w_l1: self.w_l1,
                w_sustain: self.w_sustain,
                ratio_target: self.ratio_target,
                power_target: self.power_target,
                sustain_frac: self.sustain_frac,
            },
            seed: self.seed,
            max_retries: self.max_retries,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn convergence(&self) -> ConvergenceSpec {
        ConvergenceSpec {
            dv_thresh: self.dv_thresh,
            ma_window: self.ma_window,
            hold_steps: self.hold_steps,
            ratio_gate: self.ratio_gate,
            power_gate: self.power_gate,
            quasi_ratio_tol: self.quasi_ratio_tol,
            quasi_power_tol: self.quasi_power_tol,
            quasi_dv_factor: self.quasi_dv_factor,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64)
            .map(|i| self.seed_start + i)
            .collect()
    }

    /// `threads` key, else the environment variable, else one per core.
    pub fn execution(&self) -> Execution {
        let env = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok());
        Execution::with_threads(self.threads.or(env).unwrap_or(0))
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config()?;
        self.convergence().validate()?;
        if self.n_seeds == 0 {
            return Err(Error::config("n_seeds must be at least 1"));
        }
        if self.amps.is_empty() || self.amps.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::config(
                "amps must be a non-empty list of finite values >= 0",
            ));
        }
        if self.snapshot_every == 0 {
            return Err(Error::config("snapshot_every must be at least 1"));
        }
        Ok(())
    }

    /// Keys and values as an ordered JSON object.
    pub fn echo(&self) -> Value {
        serde_json::to_value(self).unwrap_or(Value::Null)
    }
}
