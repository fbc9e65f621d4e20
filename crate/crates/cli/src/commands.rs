//! The five subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use rdsteer::checkpoint::Checkpoint;
use rdsteer::controller::ControllerParams;
use rdsteer::evaluator::{evaluate, RegimeReport, SeedResult};
use rdsteer::io::{csv_text, read_dump, scatter_svg, write_dump, write_pgm, ScatterPoint};
use rdsteer::objective::RolloutRecord;
use rdsteer::rollout::{Regime, Simulator};
use rdsteer::sweep::{amplitude_sweep, sweep_pareto, SweepPoint};
use rdsteer::trainer::{EpisodeLog, Trainer};
use rdsteer::Error;

use crate::config::RunConfig;
use crate::rundir::{is_complete, RunDir, MANIFEST};

pub const SUBCOMMANDS: [&str; 5] = ["train", "eval", "sweep", "simulate", "render"];

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Failure with a stable machine-readable code.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": { "code": self.code, "message": self.message } }).to_string()
    }

    pub fn exit_code(&self) -> i32 {
        match self.code.as_str() {
            "usage_error" | "config_error" => 2,
            _ => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(sub: &str, cfg: &RunConfig) -> CliResult<()> {
    match sub {
        "train" => train(cfg),
        "eval" => eval(cfg),
        "sweep" => sweep(cfg),
        "simulate" => simulate(cfg),
        "render" => render(cfg),
        other => Err(CliError::new(
            "usage_error",
            format!(
                "unknown subcommand {other:?}; expected one of {}",
                SUBCOMMANDS.join(", ")
            ),
        )),
    }
}

/// Loads a checkpoint, refusing ones whose run directory never completed.
pub fn load_checkpoint(path: &Path, allow_incomplete: bool) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(CliError::new(
            "checkpoint_not_found",
            format!("no checkpoint at {}", path.display()),
        ));
    }
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !allow_incomplete && !is_complete(dir) {
        return Err(CliError::new(
            "incomplete_run",
            format!(
                "{} has no {MANIFEST}; the run that wrote it did not finish (set allow_incomplete=true to use it anyway)",
                dir.display()
            ),
        ));
    }
    Ok(Checkpoint::load(path)?)
}

fn checkpoint_params(
    cfg: &RunConfig,
    required: bool,
) -> CliResult<Option<(PathBuf, ControllerParams<f32>)>> {
    match &cfg.checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p, cfg.allow_incomplete)?;
            Ok(Some((p.clone(), ck.params()?)))
        }
        None if required => Err(CliError::new(
            "usage_error",
            format!(
                "regime {} needs a trained controller: pass --checkpoint=PATH",
                cfg.regime
            ),
        )),
        None => Ok(None),
    }
}

fn train(cfg: &RunConfig) -> CliResult<()> {
    let tc = cfg.train_config()?;
    let ck_path = cfg.out_dir.join(CHECKPOINT_FILE);
    let log_path = cfg.out_dir.join(TRAIN_LOG_FILE);
    let existing = ck_path.is_file();
    if existing && !is_complete(&cfg.out_dir) && !cfg.resume {
        return Err(CliError::new(
            "incomplete_run",
            format!(
                "{} holds an unfinished training run; pass --resume=true to continue it or pick a fresh out_dir",
                cfg.out_dir.display()
            ),
        ));
    }
    let (mut trainer, mut rows) = if cfg.resume && existing {
        let ck = Checkpoint::load(&ck_path)?;
        let t = Trainer::resume(tc, &ck)?;
        let done = t.episodes_done();
        let old = fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let rows: Vec<String> = old.lines().skip(1).take(done).map(str::to_string).collect();
        if rows.len() != done {
            return Err(CliError::new(
                "incomplete_run",
                format!(
                    "{} has {} rows but the checkpoint is at episode {done}",
                    log_path.display(),
                    rows.len()
                ),
            ));
        }
        (t, rows)
    } else {
        (Trainer::new(tc)?, Vec::new())
    };

    let mut dir = RunDir::open(&cfg.out_dir)?;
    let save = |dir: &mut RunDir, t: &Trainer, rows: &[String]| -> CliResult<()> {
        let ck = t.checkpoint(&cfg.regime);
        dir.write(CHECKPOINT_FILE, ck.to_json()?.as_bytes())?;
        dir.write(
            TRAIN_LOG_FILE,
            csv_text(EpisodeLog::CSV_HEADER, rows.iter().cloned()).as_bytes(),
        )?;
        Ok(())
    };
    let every = cfg.checkpoint_every;
    let mut failure = None;
    let result = trainer.run(|t, log| {
        rows.push(log.csv_row());
        let n = t.episodes_done();
        if every > 0 && n % every == 0 {
            eprintln!("episode {n}/{}: loss {}", cfg.episodes, log.loss.total);
            if let Err(e) = save(&mut dir, t, &rows) {
                failure = Some(e);
                return Err(Error::Usage("checkpoint write failed".into()));
            }
        }
        Ok(())
    });
    if let Some(e) = failure {
        return Err(e);
    }
    result?;
    save(&mut dir, &trainer, &rows)?;
    dir.finish("train", cfg.echo(), Some(&ck_path))?;
    Ok(())
}

fn seed_rows<'a>(regime: &'a str, rows: &'a [SeedResult]) -> impl Iterator<Item = String> + 'a {
    rows.iter().map(move |r| r.csv_row(regime))
}

fn eval(cfg: &RunConfig) -> CliResult<()> {
    let regime = cfg.regime()?;
    let scenario = cfg.scenario()?;
    let needs_policy = scenario.schedule.amplitude > 0.0;
    let loaded = checkpoint_params(cfg, needs_policy)?;
    let params = loaded.as_ref().map(|(_, p)| p);
    let seeds = cfg.seeds();
    let spec = cfg.convergence();
    let (report, rows) = evaluate(
        regime.name(),
        &scenario,
        params,
        &seeds,
        cfg.horizon,
        &spec,
        cfg.execution(),
    )?;

    let mut dir = RunDir::open(&cfg.out_dir)?;
    dir.write(
        "eval_seeds.csv",
        csv_text(SeedResult::CSV_HEADER, seed_rows(regime.name(), &rows)).as_bytes(),
    )?;
    dir.write(
        "eval_summary.csv",
        csv_text(RegimeReport::CSV_HEADER, [report.csv_row()]).as_bytes(),
    )?;
    let text = serde_json::to_string_pretty(&json!({ "report": report, "seeds": rows }))
        .map_err(Error::from)?
        + "\n";
    dir.write("eval_report.json", text.as_bytes())?;
    if cfg.dump_final {
        let sim = Simulator::<f32>::new(scenario)?;
        for &s in &seeds {
            if let Ok((_, state)) = sim.eval_rollout(params, s, cfg.horizon, |_| Ok(())) {
                let p = dir.path(&format!("final_v_seed{s}.pgm"));
                let written = write_pgm(&p, &state.v, Some(&format!("v at step {}", state.t)))?;
                dir.track(&written);
            }
        }
    }
    let ck = loaded.as_ref().map(|(p, _)| p.as_path());
    dir.finish("eval", cfg.echo(), ck)?;
    Ok(())
}

fn sweep(cfg: &RunConfig) -> CliResult<()> {
    let scenario = cfg.scenario()?;
    let Some((ck_path, params)) = checkpoint_params(cfg, true)? else {
        unreachable!("checkpoint is required")
    };
    let spec = cfg.convergence();
    let (points, rows) = amplitude_sweep(
        &scenario,
        &params,
        &cfg.amps,
        &cfg.seeds(),
        cfg.sweep_horizon,
        &spec,
        cfg.execution(),
    )?;
    let default = sweep_pareto(&points, cfg.converged_only, cfg.cost_axis);
    let unconstrained = sweep_pareto(&points, false, cfg.cost_axis);

    let mut dir = RunDir::open(&cfg.out_dir)?;
    dir.write(
        "sweep.csv",
        csv_text(SweepPoint::CSV_HEADER, points.iter().map(|p| p.csv_row())).as_bytes(),
    )?;
    let seed_csv = csv_text(
        &format!("amplitude,{}", SeedResult::CSV_HEADER),
        rows.iter()
            .map(|(a, r)| format!("{a},{}", r.csv_row(&cfg.regime))),
    );
    dir.write("sweep_seeds.csv", seed_csv.as_bytes())?;
    let summary =
        json!({ "points": points, "pareto": default, "pareto_unconstrained": unconstrained });
    let text = serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n";
    dir.write("pareto.json", text.as_bytes())?;

    let scatter: Vec<ScatterPoint> = points
        .iter()
        .map(|p| ScatterPoint {
            x: match cfg.cost_axis {
                rdsteer::sweep::CostAxis::L2 => p.report.l2_mean,
                rdsteer::sweep::CostAxis::L1 => p.report.l1_mean,
            },
            y: p.report.band_ratio_median,
            label: format!(
                "A={}{}",
                p.amplitude,
                if default.knee == Some(p.amplitude) {
                    " (knee)"
                } else {
                    ""
                }
            ),
            highlight: default.front.contains(&p.amplitude),
        })
        .collect();
    let axis = match cfg.cost_axis {
        rdsteer::sweep::CostAxis::L2 => "mean l2 control power",
        rdsteer::sweep::CostAxis::L1 => "mean l1 control effort",
    };
    dir.write(
        "pareto.svg",
        scatter_svg(&scatter, axis, "median band ratio").as_bytes(),
    )?;
    dir.finish("sweep", cfg.echo(), Some(&ck_path))?;
    Ok(())
}

fn metrics_csv(rec: &RolloutRecord) -> String {
    csv_text(
        "step,band_ratio,band_power,delta_v,l1,l2",
        (0..rec.horizon()).map(|t| {
            format!(
                "{},{},{},{},{},{}",
                t + 1,
                rec.band_ratio[t],
                rec.band_power[t],
                rec.delta_v[t],
                rec.l1[t],
                rec.l2[t]
            )
        }),
    )
}

fn simulate(cfg: &RunConfig) -> CliResult<()> {
    let scenario = cfg.scenario()?;
    let loaded = checkpoint_params(cfg, false)?;
    let params = loaded.as_ref().map(|(_, p)| p);
    if params.is_none() && scenario.schedule.amplitude > 0.0 && cfg.regime()? != Regime::PureRd {
        eprintln!("no checkpoint given; simulating without control");
    }
    let sim = Simulator::<f32>::new(scenario)?;
    let mut dir = RunDir::open(&cfg.out_dir)?;
    let mut written = Vec::new();
    let every = cfg.snapshot_every;
    let (rec, last) = sim.eval_rollout(params, cfg.seed, cfg.steps, |s| {
        if s.t % every == 0 {
            let p = dir.path(&format!("snap_v_{:04}.pgm", s.t));
            written.extend(write_pgm(&p, &s.v, Some(&format!("v at step {}", s.t)))?);
        }
        Ok(())
    })?;
    dir.track(&written);
    dir.write("metrics.csv", metrics_csv(&rec).as_bytes())?;
    let u = write_dump(&dir.path("u_final.f32"), &last.u, "u", last.t)?;
    let v = write_dump(&dir.path("v_final.f32"), &last.v, "v", last.t)?;
    dir.track(&u);
    dir.track(&v);
    let ck = loaded.as_ref().map(|(p, _)| p.as_path());
    dir.finish("simulate", cfg.echo(), ck)?;
    Ok(())
}

fn render(cfg: &RunConfig) -> CliResult<()> {
    let input = cfg.input.as_ref().ok_or_else(|| {
        CliError::new(
            "usage_error",
            "render needs --input=PATH to a raw field dump",
        )
    })?;
    if !input.is_file() {
        return Err(CliError::new(
            "not_found",
            format!("no field dump at {}", input.display()),
        ));
    }
    let (field, meta) = read_dump(input)?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "field".into());
    let mut dir = RunDir::open(&cfg.out_dir)?;
    let p = dir.path(&format!("{stem}.pgm"));
    let written = write_pgm(
        &p,
        &field,
        Some(&format!("{} at step {}", meta.field, meta.step)),
    )?;
    dir.track(&written);
    dir.finish("render", cfg.echo(), None)?;
    Ok(())
}
