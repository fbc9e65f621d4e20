//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rdsteer::autodiff::{Tape, Var};
use rdsteer::controller::{policy_forward, ControllerParams};
use rdsteer::evaluator::{detect_quasi, detect_strict, evaluate, ConvergenceSpec};
use rdsteer::exec::Execution;
use rdsteer::objective::{total_loss_on, LossWeights, RolloutRecord, StepVars};
use rdsteer::rd::{
    gs_step, gs_step_on, laplacian, Kinetics, SimParams, SimState, LAPLACIAN_STENCIL,
};
use rdsteer::rng::SeededRng;
use rdsteer::rollout::Regime;
use rdsteer::spectral::{BandSpec, SpectralPlan};
use rdsteer::sweep::{amplitude_sweep, knee, pareto_front, DEFAULT_AMPLITUDES};
use rdsteer::trainer::{TrainConfig, Trainer, DESK_GRID};
use rdsteer::Tensor;

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;
type LossBuilder<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> rdsteer::Result<Var> + 'a;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn field(rng: &mut SeededRng, h: usize, w: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(&[h, w], |_| lo + (hi - lo) * rng.uniform())
}

// 1. Numerical kernel

fn criterion_1() -> Outcome {
    let mut rng = SeededRng::new(11);

    // impulse response is the stencil itself
    for &(h, w, y0, x0) in &[(5, 5, 2, 2), (9, 7, 4, 3), (16, 16, 8, 11)] {
        let mut f = Tensor::<f64>::zeros(&[h, w]);
        f.data_mut()[y0 * w + x0] = 1.0;
        let l = laplacian(&f).map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as i64 - y0 as i64, x as i64 - x0 as i64);
                let want = if dy.abs() <= 1 && dx.abs() <= 1 {
                    LAPLACIAN_STENCIL[((dy + 1) * 3 + dx + 1) as usize]
                } else {
                    0.0
                };
                let got = l.data()[y * w + x];
                check(got == want, || {
                    format!("impulse {h}x{w} at ({y},{x}): {got} != {want}")
                })?;
            }
        }
    }

    // constant fields have zero Laplacian
    for c in [0.0, 1.0, 0.5, 0.25, 0.75, 2.0] {
        let l = laplacian(&Tensor::full(&[6, 9], c)).map_err(|e| e.to_string())?;
        check(l.data().iter().all(|&x| x == 0.0), || {
            format!("constant {c}: nonzero Laplacian")
        })?;
    }

    // diffusion alone conserves mass
    let mut p = SimParams::default().with_grid(32);
    p.kinetics = Kinetics::DiffusionOnly;
    let mut s = SimState {
        u: field(&mut rng, 32, 32, 0.0, 1.0),
        v: field(&mut rng, 32, 32, 0.0, 1.0),
        t: 0,
    };
    let (mu, mv) = (s.u.sum(), s.v.sum());
    for _ in 0..100 {
        s = gs_step(&s, &p, None, None).map_err(|e| e.to_string())?;
    }
    let rel_u = (s.u.sum() - mu).abs() / mu;
    let rel_v = (s.v.sum() - mv).abs() / mv;
    check(rel_u < 1e-8 && rel_v < 1e-8, || {
        format!("mass drift U {rel_u:.2e}, V {rel_v:.2e}")
    })?;

    // (U,V) = (1,0) is a fixed point
    let p = SimParams::default().with_grid(24);
    let start = SimState {
        u: Tensor::full(&[24, 24], 1.0f64),
        v: Tensor::zeros(&[24, 24]),
        t: 0,
    };
    let zero = Tensor::<f64>::zeros(&[24, 24]);
    let mut a = start.clone();
    let mut b = start.clone();
    for _ in 0..500 {
        a = gs_step(&a, &p, None, None).map_err(|e| e.to_string())?;
        b = gs_step(&b, &p, Some(&zero), Some(&zero)).map_err(|e| e.to_string())?;
    }
    check(a.u == start.u && a.v == start.v, || {
        "fixed point drifted".into()
    })?;
    check(b.u == start.u && b.v == start.v, || {
        "fixed point drifted under zero control".into()
    })?;

    Ok(format!("impulse/constant exact, mass drift U {rel_u:.1e} V {rel_v:.1e}, fixed point exact over 500 steps"))
}

// 2. Spectral oracle

fn fftfreq(i: usize, n: usize) -> f64 {
    if i < n.div_ceil(2) {
        i as f64 / n as f64
    } else {
        (i as f64 - n as f64) / n as f64
    }
}

/// Band power and ratio from a direct O(N^4) DFT.
fn naive_band(f: &Tensor<f64>, r_lo: f64, r_hi: f64) -> (f64, f64) {
    let (h, w) = (f.shape()[0], f.shape()[1]);
    let mean = f.data().iter().sum::<f64>() / (h * w) as f64;
    let norm = ((h * w) as f64).powi(2);
    let (mut band, mut total) = (0.0, 0.0);
    for ky in 0..h {
        for kx in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let ph = -2.0 * PI * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                    let g = f.data()[y * w + x] - mean;
                    re += g * ph.cos();
                    im += g * ph.sin();
                }
            }
            let pw = (re * re + im * im) / norm;
            let r = fftfreq(ky, h).hypot(fftfreq(kx, w));
            total += pw;
            if (r_lo..=r_hi).contains(&r) {
                band += pw;
            }
        }
    }
    (band, if total > 0.0 { band / total } else { 0.0 })
}

fn criterion_2() -> Outcome {
    let mut rng = SeededRng::new(22);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let n = if i % 2 == 0 { 8 } else { 12 };
        let f = field(&mut rng, n, n, -1.0, 1.0);
        let plan =
            SpectralPlan::<f64>::new(n, n, BandSpec::default()).map_err(|e| e.to_string())?;
        let m = plan.metrics(&f).map_err(|e| e.to_string())?;
        let (power, ratio) = naive_band(&f, 0.05, 0.22);
        let rp = (m.band_power - power).abs() / power.abs().max(f64::MIN_POSITIVE);
        let rr = (m.band_ratio - ratio).abs() / ratio.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rp).max(rr);
        check(rp < 1e-6 && rr < 1e-6, || {
            format!("field {i} ({n}x{n}): power rel {rp:.2e}, ratio rel {rr:.2e}")
        })?;
    }
    Ok(format!("50 fields, worst relative error {worst:.2e}"))
}

// 3. Gradients against central differences

/// Worst relative error between analytic and central-difference gradients.
/// Components below 1e-6 of the largest are compared against that scale.
fn compare_grads(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric
        .iter()
        .chain(analytic)
        .fold(0.0f64, |m, x| m.max(x.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            (a - n).abs()
                / a.abs()
                    .max(n.abs())
                    .max(1e-6 * scale)
                    .max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

/// Gradient of `f` w.r.t. every entry of every input, by central differences.
fn central_diff(inputs: &[Tensor<f64>], mut f: impl FnMut(&[Tensor<f64>]) -> f64) -> Vec<f64> {
    let mut xs = inputs.to_vec();
    let mut out = Vec::new();
    for k in 0..xs.len() {
        for i in 0..xs[k].len() {
            let x0 = xs[k].data()[i];
            let h = 1e-6 * x0.abs().max(1.0);
            xs[k].data_mut()[i] = x0 + h;
            let up = f(&xs);
            xs[k].data_mut()[i] = x0 - h;
            let down = f(&xs);
            xs[k].data_mut()[i] = x0;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

/// Builds `loss(inputs)` on a tape with every input a leaf; returns the value
/// and the flattened gradient.
fn tape_grad(inputs: &[Tensor<f64>], build: &LossBuilder) -> rdsteer::Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = build(&mut tape, &leaves)?;
    let value = tape.item(loss)?;
    tape.backward(loss)?;
    let mut g = Vec::new();
    for (v, x) in leaves.iter().zip(inputs) {
        match tape.grad(*v) {
            Some(t) => g.extend_from_slice(t.data()),
            None => g.extend(std::iter::repeat_n(0.0, x.len())),
        }
    }
    Ok((value, g))
}

fn fd_check(name: &str, inputs: &[Tensor<f64>], build: &LossBuilder) -> Result<f64, String> {
    let (_, analytic) = tape_grad(inputs, build).map_err(|e| format!("{name}: {e}"))?;
    let numeric = central_diff(inputs, |xs| {
        tape_grad(xs, build).map(|(v, _)| v).unwrap_or(f64::NAN)
    });
    let err = compare_grads(&analytic, &numeric);
    check(err < 1e-4, || format!("{name}: relative error {err:.2e}"))?;
    check(analytic.iter().any(|&g| g != 0.0), || {
        format!("{name}: gradient is identically zero")
    })?;
    Ok(err)
}

/// Scalar projection of a field onto fixed random weights.
fn project(tape: &mut Tape<f64>, x: Var, weights: &Tensor<f64>) -> rdsteer::Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(x, w)?;
    tape.sum(p)
}

/// One differentiable step with explicit control leaves, returning the new
/// state and the per-step loss quantities.
fn control_step(
    tape: &mut Tape<f64>,
    p: &SimParams,
    plan: &SpectralPlan<f64>,
    u: Var,
    v: Var,
    df: Var,
    dk: Var,
) -> rdsteer::Result<(Var, Var, StepVars)> {
    let (u2, v2) = gs_step_on(tape, p, u, v, Some(df), Some(dk))?;
    let d = tape.sub(v2, v)?;
    let d = tape.abs(d)?;
    let delta_v = tape.mean(d)?;
    let (af, ak) = (tape.abs(df)?, tape.abs(dk)?);
    let a = tape.add(af, ak)?;
    let l1 = tape.mean(a)?;
    let band = plan.band_terms(tape, v2)?;
    Ok((
        u2,
        v2,
        StepVars {
            ratio: band.ratio,
            power: band.power,
            delta_v,
            l1,
        },
    ))
}

fn rollout_loss(
    tape: &mut Tape<f64>,
    leaves: &[Var],
    start: &SimState<f64>,
    p: &SimParams,
    plan: &SpectralPlan<f64>,
    w: &LossWeights,
    full_loss: bool,
) -> rdsteer::Result<Var> {
    let mut u = tape.constant(start.u.clone());
    let mut v = tape.constant(start.v.clone());
    let mut steps = Vec::new();
    for pair in leaves.chunks(2) {
        let (u2, v2, s) = control_step(tape, p, plan, u, v, pair[0], pair[1])?;
        steps.push(s);
        (u, v) = (u2, v2);
    }
    if full_loss {
        return Ok(total_loss_on(tape, &steps, w)?.0);
    }
    // every loss ingredient at every step: hinge deficits, squared change, l1
    let mut parts = Vec::new();
    for s in &steps {
        for (x, target, weight) in [
            (s.ratio, w.ratio_target, w.w_ratio),
            (s.power, w.power_target, w.w_power),
        ] {
            let r = tape.scale(x, -1.0 / target)?;
            let r = tape.offset(r, 1.0)?;
            let r = tape.relu(r)?;
            parts.push(tape.scale(r, weight)?);
        }
        let sq = tape.square(s.delta_v)?;
        parts.push(tape.scale(sq, w.w_stab)?);
        parts.push(tape.scale(s.l1, w.w_l1)?);
    }
    tape.add_n(&parts)
}

fn criterion_3() -> Outcome {
    let mut rng = SeededRng::new(33);
    let n = 8;

    // (a) conv stack outputs w.r.t. weights and input fields
    let params = ControllerParams::<f64>::init(5);
    let (u, v) = (
        field(&mut rng, n, n, 0.0, 1.0),
        field(&mut rng, n, n, 0.0, 1.0),
    );
    let (rf, rk) = (
        field(&mut rng, n, n, -1.0, 1.0),
        field(&mut rng, n, n, -1.0, 1.0),
    );
    let mut inputs: Vec<Tensor<f64>> = params.tensors().into_iter().cloned().collect();
    inputs.push(u.clone());
    inputs.push(v.clone());
    let conv = |tape: &mut Tape<f64>, x: &[Var]| -> rdsteer::Result<Var> {
        let pv = rdsteer::controller::PolicyVars {
            layers: [(x[0], x[1]), (x[2], x[3]), (x[4], x[5])],
        };
        let (f, k) = policy_forward(tape, &pv, x[6], x[7])?;
        let a = project(tape, f, &rf)?;
        let b = project(tape, k, &rk)?;
        tape.add(a, b)
    };
    let err_a = fd_check("conv stack", &inputs, &conv)?;

    // (b) band power (and ratio) w.r.t. the input field
    let plan = SpectralPlan::<f64>::new(n, n, BandSpec::default()).map_err(|e| e.to_string())?;
    let f = field(&mut rng, n, n, 0.0, 1.0);
    let power = |tape: &mut Tape<f64>, x: &[Var]| Ok(plan.band_terms(tape, x[0])?.power);
    let ratio = |tape: &mut Tape<f64>, x: &[Var]| Ok(plan.band_terms(tape, x[0])?.ratio);
    let err_b = fd_check("band power", std::slice::from_ref(&f), &power)?.max(fd_check(
        "band ratio",
        std::slice::from_ref(&f),
        &ratio,
    )?);

    // (c) rollout loss w.r.t. the per-step control fields
    let p = SimParams::default().with_grid(n);
    let start = SimState {
        u: field(&mut rng, n, n, 0.4, 1.0),
        v: field(&mut rng, n, n, 0.0, 0.4),
        t: 0,
    };
    let w = LossWeights::default();
    let controls = |steps: usize, rng: &mut SeededRng| -> Vec<Tensor<f64>> {
        (0..2 * steps)
            .map(|_| Tensor::from_fn(&[n, n], |_| 0.005 * rng.gaussian()))
            .collect()
    };
    let three = controls(3, &mut rng);
    let loss3 =
        |tape: &mut Tape<f64>, x: &[Var]| rollout_loss(tape, x, &start, &p, &plan, &w, false);
    let err_c = fd_check("3-step rollout loss", &three, &loss3)?;
    // the training loss itself needs at least four steps
    let four = controls(4, &mut rng);
    let loss4 =
        |tape: &mut Tape<f64>, x: &[Var]| rollout_loss(tape, x, &start, &p, &plan, &w, true);
    let err_t = fd_check("4-step training loss", &four, &loss4)?;

    Ok(format!(
        "worst relative error: conv {err_a:.1e}, band {err_b:.1e}, 3-step loss {err_c:.1e}, training loss {err_t:.1e}"
    ))
}

// 4. Detectors against brute-force scans

fn window_mean(xs: &[f64], end: usize, w: usize) -> f64 {
    let first = end.saturating_sub(w - 1);
    let sl = &xs[first..=end];
    sl.iter().sum::<f64>() / sl.len() as f64
}

fn brute_strict(r: &RolloutRecord, s: &ConvergenceSpec) -> Option<usize> {
    let n = r.band_ratio.len();
    let good = |t: usize| {
        window_mean(&r.delta_v, t, s.ma_window) < s.dv_thresh
            && r.band_ratio[t] >= s.ratio_gate
            && r.band_power[t] >= s.power_gate
    };
    for end in 0..n {
        if end + 1 >= s.hold_steps {
            let first = end + 1 - s.hold_steps;
            if (first..=end).all(good) {
                return Some(first);
            }
        }
    }
    None
}

fn brute_quasi(r: &RolloutRecord, s: &ConvergenceSpec) -> Option<usize> {
    let n = r.band_ratio.len();
    for end in 0..n {
        if end + 1 < s.hold_steps {
            continue;
        }
        let win = end + 1 - s.hold_steps..=end;
        if !win
            .clone()
            .all(|t| r.band_ratio[t] >= s.ratio_gate && r.band_power[t] >= s.power_gate)
        {
            continue;
        }
        let flat = |xs: &[f64], tol: f64| {
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi <= lo * (1.0 + tol)
        };
        if !flat(&r.band_ratio[win.clone()], s.quasi_ratio_tol)
            || !flat(&r.band_power[win], s.quasi_power_tol)
        {
            continue;
        }
        if let Some(k) = s.quasi_dv_factor {
            if window_mean(&r.delta_v, end, s.ma_window) >= k * s.dv_thresh {
                continue;
            }
        }
        return Some(end);
    }
    None
}

/// Random series that drift through settled, noisy and gated segments.
fn synthetic_series(rng: &mut SeededRng) -> RolloutRecord {
    let n = 40 + rng.range_inclusive(0, 200) as usize;
    let mut rec = RolloutRecord::with_capacity(n);
    let mut seg = 0;
    let (mut r, mut p, mut d, mut noise) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        if seg == 0 {
            seg = 2 + rng.range_inclusive(0, 40);
            r = 0.1 + 0.3 * rng.uniform();
            p = 1e-4 * (0.5 + 2.0 * rng.uniform());
            d = 10f64.powf(-8.0 + 5.0 * rng.uniform());
            noise = [0.0, 0.005, 0.03, 0.2][rng.range_inclusive(0, 3) as usize];
        }
        seg -= 1;
        rec.band_ratio
            .push(r * (1.0 + noise * (2.0 * rng.uniform() - 1.0)));
        rec.band_power
            .push(p * (1.0 + noise * (2.0 * rng.uniform() - 1.0)));
        rec.delta_v.push(d * 2.0 * rng.uniform());
        rec.l1.push(0.0);
        rec.l2.push(0.0);
    }
    rec
}

fn criterion_4() -> Outcome {
    let mut rng = SeededRng::new(44);
    let spec = ConvergenceSpec::default();
    let plateau_only = ConvergenceSpec {
        quasi_dv_factor: None,
        ..spec
    };
    let (mut agree, mut total, mut strict_hits, mut quasi_hits) = (0, 0, 0, 0);
    for _ in 0..200 {
        let rec = synthetic_series(&mut rng);
        for s in [spec, plateau_only] {
            let (ds, bs) = (detect_strict(&rec, &s), brute_strict(&rec, &s));
            let (dq, bq) = (detect_quasi(&rec, &s), brute_quasi(&rec, &s));
            agree += (ds == bs) as usize + (dq == bq) as usize;
            total += 2;
            strict_hits += bs.is_some() as usize;
            quasi_hits += bq.is_some() as usize;
        }
    }
    check(agree == total, || {
        format!("{agree}/{total} detector outputs agree")
    })?;
    check(strict_hits > 0 && quasi_hits > 0, || {
        "synthetic series never converge".into()
    })?;
    Ok(format!(
        "200 series x 2 specs, {agree}/{total} agree ({strict_hits} strict and {quasi_hits} quasi detections)"
    ))
}

// 5. Pareto front and knee

fn brute_front(pts: &[(f64, f64)]) -> Vec<usize> {
    let ok = |p: (f64, f64)| p.0.is_finite() && p.1.is_finite();
    let mut front: Vec<usize> = (0..pts.len())
        .filter(|&i| ok(pts[i]))
        .filter(|&i| {
            !(0..pts.len()).any(|j| {
                ok(pts[j])
                    && pts[j].0 <= pts[i].0
                    && pts[j].1 >= pts[i].1
                    && (pts[j].0 < pts[i].0 || pts[j].1 > pts[i].1)
            })
        })
        .collect();
    front.sort_by(|&a, &b| pts[a].0.total_cmp(&pts[b].0).then(a.cmp(&b)));
    front
}

fn criterion_5() -> Outcome {
    let mut rng = SeededRng::new(55);
    for case in 0..300 {
        let n = 1 + rng.range_inclusive(0, 199) as usize;
        let coarse = case % 3 == 0;
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                if coarse {
                    // small integer grid forces ties and duplicates
                    (
                        rng.range_inclusive(0, 9) as f64,
                        rng.range_inclusive(0, 9) as f64,
                    )
                } else {
                    (rng.uniform(), rng.uniform())
                }
            })
            .collect();
        let (got, want) = (pareto_front(&pts), brute_front(&pts));
        check(got == want, || {
            format!("case {case} (n={n}): front {got:?} != {want:?}")
        })?;
    }
    let front = [(0.0, 0.0), (0.1, 0.9), (1.0, 1.0)];
    let k = knee(&front);
    check(k == Some(1), || format!("knee of {front:?} is {k:?}"))?;
    Ok("300 random sets up to n=200 agree; knee of {(0,0),(0.1,0.9),(1,1)} is (0.1,0.9)".into())
}

// 6. Uncontrolled baseline

fn eval_seeds() -> Vec<u64> {
    (1000..1016).collect()
}

fn criterion_6() -> Outcome {
    let spec = ConvergenceSpec::default();
    let (rep, rows) = evaluate(
        "pure_rd",
        &Regime::PureRd.scenario(96),
        None,
        &eval_seeds(),
        240,
        &spec,
        Execution::default(),
    )
    .map_err(|e| e.to_string())?;
    check(rep.n_failed == 0, || {
        format!("{} rollouts failed", rep.n_failed)
    })?;
    let m = rep.band_ratio_median;
    check((0.30..=0.60).contains(&m), || {
        format!("median band ratio {m:.4} outside [0.30, 0.60]")
    })?;
    check(
        rows.iter().all(|r| r.l1 == 0.0 && r.l2 == 0.0) && rep.l1_mean == 0.0 && rep.l2_mean == 0.0,
        || "control cost is not exactly zero".into(),
    )?;
    Ok(format!(
        "96x96, 240 steps, 16 seeds: median band ratio {m:.4}; l1 = l2 = 0"
    ))
}

// 7. Division of labor after desk-scale training

const TRAIN_EPISODES: usize = 100;
const RETRY_BUDGET: u64 = 3;

struct SeedOutcome {
    pure_quasi: f64,
    hybrid_quasi: f64,
    nn_quasi: f64,
    hybrid_l1: f64,
    hybrid_l2: f64,
    nn_l1: f64,
    nn_l2: f64,
    sweep_quasi: Vec<f64>,
}

fn train(regime: Regime, seed: u64) -> rdsteer::Result<ControllerParams<f32>> {
    let cfg = TrainConfig {
        episodes: TRAIN_EPISODES,
        seed,
        scenario: regime.scenario(DESK_GRID),
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg)?;
    trainer.run(|_, _| Ok(()))?;
    Ok(trainer.params().clone())
}

fn division_of_labor(seed: u64) -> rdsteer::Result<SeedOutcome> {
    let spec = ConvergenceSpec::default();
    let exec = Execution::default();
    let seeds = eval_seeds();
    let horizon = 120;
    let hybrid = train(Regime::Hybrid, seed)?;
    let nn = train(Regime::NnDominant, seed)?;
    let run = |regime: Regime, p: Option<&ControllerParams<f32>>| {
        evaluate(
            regime.name(),
            &regime.scenario(DESK_GRID),
            p,
            &seeds,
            horizon,
            &spec,
            exec,
        )
        .map(|r| r.0)
    };
    let pure = run(Regime::PureRd, None)?;
    let hy = run(Regime::Hybrid, Some(&hybrid))?;
    let nd = run(Regime::NnDominant, Some(&nn))?;
    let (sweep, _) = amplitude_sweep(
        &Regime::Hybrid.scenario(DESK_GRID),
        &hybrid,
        &DEFAULT_AMPLITUDES,
        &seeds,
        horizon,
        &spec,
        exec,
    )?;
    Ok(SeedOutcome {
        pure_quasi: pure.quasi_rate,
        hybrid_quasi: hy.quasi_rate,
        nn_quasi: nd.quasi_rate,
        hybrid_l1: hy.l1_mean,
        hybrid_l2: hy.l2_mean,
        nn_l1: nd.l1_mean,
        nn_l2: nd.l2_mean,
        sweep_quasi: sweep.iter().map(|p| p.report.quasi_rate).collect(),
    })
}

fn median3(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn judge_division(outcomes: &[SeedOutcome]) -> Result<String, String> {
    let med = |f: &dyn Fn(&SeedOutcome) -> f64| median3(outcomes.iter().map(f).collect());
    let (pure, hy, nn) = (
        med(&|o| o.pure_quasi),
        med(&|o| o.hybrid_quasi),
        med(&|o| o.nn_quasi),
    );
    let l1_gap = med(&|o| o.nn_l1) / med(&|o| o.hybrid_l1);
    let l2_gap = med(&|o| o.nn_l2) / med(&|o| o.hybrid_l2);
    let sweep: Vec<f64> = (0..DEFAULT_AMPLITUDES.len())
        .map(|i| med(&|o| o.sweep_quasi[i]))
        .collect();
    let (first, last) = (sweep[0], sweep[sweep.len() - 1]);
    let interior = sweep[1..sweep.len() - 1]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);

    let summary = format!(
        "quasi rate hybrid {hy:.3} / pure {pure:.3} / nn {nn:.3}; nn/hybrid l1 {l1_gap:.1}x, l2 {l2_gap:.0}x; sweep quasi {sweep:?}"
    );
    let a = hy > pure && hy > nn;
    let b = l1_gap >= 5.0 && l2_gap >= 5.0;
    let c = interior > first && interior > last;
    if a && b && c {
        Ok(summary)
    } else {
        Err(format!("(a) {a} (b) {b} (c) {c}: {summary}"))
    }
}

fn criterion_7() -> Outcome {
    let mut last = String::new();
    for attempt in 0..RETRY_BUDGET {
        let seeds: Vec<u64> = (3 * attempt..3 * attempt + 3).collect();
        let outcomes = seeds
            .iter()
            .map(|&s| division_of_labor(s))
            .collect::<rdsteer::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        match judge_division(&outcomes) {
            Ok(s) => {
                return Ok(format!(
                    "training seeds {seeds:?} ({} episodes): {s}",
                    TRAIN_EPISODES
                ))
            }
            Err(e) => {
                eprintln!(
                    "criterion 7 attempt {} with training seeds {seeds:?} failed: {e}",
                    attempt + 1
                );
                last = e;
            }
        }
    }
    Err(format!("all {RETRY_BUDGET} attempts failed; last: {last}"))
}

// 8. Byte-identical reruns of every subcommand

fn run_cli(sub: &str, out: &Path, args: &[String]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_rdsteer"))
        .arg(sub)
        .arg(format!("--out_dir={}", out.display()))
        .arg("--threads=1")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(status.status.success(), || {
        format!(
            "{sub} failed: {}",
            String::from_utf8_lossy(&status.stderr).trim()
        )
    })
}

fn dir_contents(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        out.insert(
            name,
            std::fs::read(entry.path()).map_err(|e| e.to_string())?,
        );
    }
    Ok(out)
}

/// Manifest with the run-specific fields removed.
fn stable_manifest(bytes: &[u8]) -> Result<serde_json::Value, String> {
    let mut m: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    let obj = m.as_object_mut().ok_or("manifest is not an object")?;
    obj.remove("wall_clock_seconds");
    if let Some(cfg) = obj.get_mut("config").and_then(|c| c.as_object_mut()) {
        cfg.remove("out_dir");
    }
    Ok(m)
}

fn compare_runs(sub: &str, a: &Path, b: &Path) -> Result<usize, String> {
    let (ca, cb) = (dir_contents(a)?, dir_contents(b)?);
    check(ca.keys().eq(cb.keys()), || {
        format!("{sub}: file sets differ")
    })?;
    check(ca.contains_key("manifest.json"), || {
        format!("{sub}: no manifest")
    })?;
    for (name, bytes) in &ca {
        if name == "manifest.json" {
            check(
                stable_manifest(bytes)? == stable_manifest(&cb[name])?,
                || format!("{sub}: manifests differ"),
            )?;
        } else {
            check(*bytes == cb[name], || format!("{sub}: {name} differs"))?;
        }
    }
    Ok(ca.len())
}

fn criterion_8() -> Outcome {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
        .join(format!("acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    let small: Vec<String> = ["--grid=16", "--patch_half=3"].map(String::from).to_vec();
    let with = |extra: &[String]| -> Vec<String> { small.iter().chain(extra).cloned().collect() };

    let ck = root.join("train_a").join("checkpoint.json");
    let dump = root.join("simulate_a").join("v_final.f32");
    let runs: Vec<(&str, Vec<String>)> = vec![
        (
            "train",
            with(
                &[
                    "--episodes=4",
                    "--horizon_min=8",
                    "--horizon_max=12",
                    "--checkpoint_every=2",
                ]
                .map(String::from),
            ),
        ),
        (
            "eval",
            with(&[
                format!("--checkpoint={}", ck.display()),
                "--n_seeds=3".into(),
                "--horizon=24".into(),
                "--dump_final=true".into(),
            ]),
        ),
        (
            "sweep",
            with(&[
                format!("--checkpoint={}", ck.display()),
                "--n_seeds=2".into(),
                "--sweep_horizon=20".into(),
            ]),
        ),
        (
            "simulate",
            with(&[
                format!("--checkpoint={}", ck.display()),
                "--steps=20".into(),
                "--snapshot_every=10".into(),
            ]),
        ),
        ("render", vec![format!("--input={}", dump.display())]),
    ];
    let mut files = 0;
    for (sub, args) in &runs {
        let (a, b) = (root.join(format!("{sub}_a")), root.join(format!("{sub}_b")));
        run_cli(sub, &a, args)?;
        run_cli(sub, &b, args)?;
        files += compare_runs(sub, &a, &b)?;
    }
    let _ = std::fs::remove_dir_all(&root);
    Ok(format!(
        "5 subcommands run twice single-threaded, {files} artifacts identical"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] = [
        ("numerical kernel", criterion_1),
        ("spectral oracle", criterion_2),
        ("differentiability", criterion_3),
        ("detector oracle", criterion_4),
        ("pareto and knee", criterion_5),
        ("baseline physics", criterion_6),
        ("division of labor", criterion_7),
        ("determinism", criterion_8),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = f();
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {n} ({name}): PASS ({secs:.1}s) {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL ({secs:.1}s) {msg}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
