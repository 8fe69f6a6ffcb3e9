use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use foldlab_core::canrel::{check_fold, curve_fold_check};
use foldlab_core::decomp::{
    cotlar_assemble, key_estimate_sweep, ortho_sweep, regime_check, tau_for_coupling, OrthoTable,
};
use foldlab_core::opnorm::{
    decay_sweep, twisted_decay_sweep, Amplitude, DiffProfile, DifferenceAmplitude, NormDecaySeries,
    NormOptions, Profile, SweepOptions, TensorAmplitude, WeightedAnnulus,
};
use foldlab_core::phase::{fefferman_det, heisenberg_det};
use foldlab_core::{Error, Phase, PhaseSpec};

use crate::config::{Experiment, ExperimentConfig, RateFamily};
use crate::error::CliError;
use crate::report::{Check, Comparison, Report};

pub fn run(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    match cfg.experiment {
        Experiment::DetVerify => det_verify(cfg),
        Experiment::FoldCheck => fold_check(cfg),
        Experiment::CurveFold => curve_fold(cfg),
        Experiment::RateSweep => rate_sweep(cfg),
        Experiment::KeyEstimate => key_estimate(cfg),
        Experiment::RegimeCheck => regime(cfg),
        Experiment::OrthoSweep => ortho(cfg).map(|(r, _)| r),
        Experiment::Cotlar => cotlar(cfg),
    }
}

fn norm_options(cfg: &ExperimentConfig) -> NormOptions {
    let mut opts = NormOptions { seed: cfg.seed, ..NormOptions::default() };
    if let Some(m) = cfg.max_iter {
        opts.max_iter = m;
    }
    opts
}

fn rel_err(closed: f64, generic: f64) -> f64 {
    (closed - generic).abs() / closed.abs().max(generic.abs()).max(1e-300)
}

fn det_verify(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let (beta, n) = (cfg.beta, cfg.n);
    let d = 2 * n;
    let tol = cfg.tolerance.unwrap_or(1e-6);
    let b = cfg.diag_b()?;
    let radial = PhaseSpec::radial(beta, d)?;
    let heis = PhaseSpec::heisenberg_cond_ii(beta, b.clone(), 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rep = Report::new(&[
        "index",
        "r",
        "fefferman_closed",
        "fefferman_generic",
        "fefferman_rel_err",
        "heisenberg_closed",
        "heisenberg_generic",
        "heisenberg_rel_err",
        "tolerance",
        "pass",
    ]);
    let mut worst = 0.0f64;
    for i in 0..cfg.samples.unwrap_or(100) {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = rng.gen_range(0.3..2.0);
        let u: Vec<f64> = loop {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if s > 0.1 && s <= 1.0 {
                break v.into_iter().map(|a| a / s).collect();
            }
        };
        let y: Vec<f64> = x.iter().zip(&u).map(|(a, v)| a - r * v).collect();
        let f_closed = fefferman_det(beta, n, r)?;
        let f_generic = radial.mixed_hessian(&x, &y)?.determinant();

        // the product form holds for separations in the (e_1, e_{n+1}) plane
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut w = vec![0.0; d];
        w[0] = phi.cos();
        w[n] = phi.sin();
        let y: Vec<f64> = x.iter().zip(&w).map(|(a, v)| a - r * v).collect();
        let h_closed = heisenberg_det(beta, &b, r)?;
        let h_generic = heis.mixed_hessian(&x, &y)?.determinant();

        let (ef, eh) = (rel_err(f_closed, f_generic), rel_err(h_closed, h_generic));
        worst = worst.max(ef).max(eh);
        rep.push(vec![
            i.into(),
            r.into(),
            f_closed.into(),
            f_generic.into(),
            ef.into(),
            h_closed.into(),
            h_generic.into(),
            eh.into(),
            tol.into(),
            (ef <= tol && eh <= tol).into(),
        ]);
    }
    rep.checks.push(Check::new("max_rel_err", worst, 0.0, tol, Comparison::AtMost));
    Ok(rep)
}

fn fold_check(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let mu = cfg.mu_or(1.0);
    let phase = cfg.heisenberg_phase(mu)?;
    let f = check_fold(&phase, cfg.samples.unwrap_or(50), cfg.theta, cfg.seed)?;
    let first_order_floor = 1e-3;
    let mut rep = Report::new(&[
        "beta",
        "mu",
        "rho",
        "radius",
        "points",
        "corank_ok",
        "first_order_ok",
        "transversality_ok",
        "min_first_order",
        "min_margin",
        "theta",
    ]);
    rep.push(vec![
        cfg.beta.into(),
        mu.into(),
        cfg.rho.into(),
        f.radius.into(),
        f.points_tested.into(),
        f.corank_ok.into(),
        f.first_order_ok.into(),
        f.transversality_ok.into(),
        f.min_first_order.into(),
        f.min_margin.into(),
        cfg.theta.into(),
    ]);
    rep.checks.push(Check::flag("variety_exists", f.exists));
    rep.checks.push(Check::flag("corank_one", f.corank_ok));
    rep.checks.push(Check::new("min_first_order", f.min_first_order, first_order_floor, 0.0, Comparison::AtLeast));
    rep.checks.push(Check::new("min_transversality_margin", f.min_margin, cfg.theta, 0.0, Comparison::AtLeast));
    rep.note("report", &f);
    Ok(rep)
}

fn curve_fold(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let mu = cfg.mu_or(1.0);
    let f = curve_fold_check(cfg.beta, cfg.k, mu)?;
    let mut rep = Report::new(&["beta", "k", "mu", "x0", "third_derivative"]);
    rep.push(vec![cfg.beta.into(), (cfg.k as usize).into(), mu.into(), f.x0.into(), f.third_derivative.into()]);
    let floor = cfg.tolerance.unwrap_or(1e-6);
    rep.checks.push(Check::new("abs_third_derivative", f.third_derivative.abs(), floor, 0.0, Comparison::AtLeast));
    Ok(rep)
}

fn push_series(rep: &mut Report, s: &NormDecaySeries) {
    for e in &s.entries {
        rep.push(vec![e.lambda.into(), e.norm.into(), e.iterations.into(), e.residual.into(), e.rows.into(), e.cols.into()]);
    }
    rep.note("slope", s.slope);
    rep.note("slope_stderr", s.slope_stderr);
    rep.note("local_slopes", s.local_slopes());
}

fn rate_sweep(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let mut rep = Report::new(&["lambda", "norm", "iterations", "residual", "rows", "cols"]);
    let mut opts = SweepOptions { rule: cfg.grid_rule(), norm: norm_options(cfg), ..SweepOptions::default() };
    if cfg.family == RateFamily::Bilinear && cfg.max_iter.is_none() {
        // continuous top edge of the spectrum: the iteration ends on the Ritz-value stall
        opts.norm.max_iter = 5000;
    }
    let mu = cfg.mu_or(1.0);
    let (series, expected, tol) = match cfg.family {
        RateFamily::Bilinear => {
            let bump = Profile::new(0.0, 1.0, 0.5)?;
            let amp: Arc<dyn Amplitude> =
                Arc::new(TensorAmplitude { x: vec![bump; cfg.dim], y: vec![bump; cfg.dim] });
            let phase: Arc<dyn Phase> = Arc::new(PhaseSpec::bilinear(cfg.dim)?);
            let s = decay_sweep(phase, amp, &cfg.lambdas([6, 12]), &opts)?;
            (s, -(cfg.dim as f64) / 2.0, 0.05)
        }
        RateFamily::Curve => {
            // localize |x - y| around the fold point when there is one
            let (center, expected) = if mu > 0.0 {
                (curve_fold_check(cfg.beta, cfg.k, mu)?.x0, -1.0 / 3.0)
            } else {
                (1.0, -0.5)
            };
            let amp: Arc<dyn Amplitude> = Arc::new(DifferenceAmplitude {
                x: vec![Profile::new(0.0, 0.5, 0.5)?],
                diff: DiffProfile::Tensor(vec![Profile::new(center, 0.5 * center, 0.5)?]),
            });
            let phase: Arc<dyn Phase> = Arc::new(PhaseSpec::curve(cfg.beta, cfg.k, mu)?);
            let s = decay_sweep(phase, amp, &cfg.lambdas([6, 12]), &opts)?;
            (s, expected, 0.05)
        }
        RateFamily::Heisenberg => {
            let phase = cfg.heisenberg_phase(mu)?;
            let amp = Arc::new(WeightedAnnulus { profile: Profile::new(0.89, 0.6, 0.5)?, power: cfg.weight_power });
            let s = twisted_decay_sweep(&phase, amp, &cfg.lambdas([3, 7]), &opts.rule, &opts.norm)?;
            let expected = if mu == 0.0 { -(cfg.n as f64) } else { -(cfg.n as f64 - 1.0 / 6.0) };
            (s, expected, 0.1)
        }
    };
    push_series(&mut rep, &series);
    rep.checks.push(Check::new(
        "slope",
        series.slope,
        cfg.expect_slope.unwrap_or(expected),
        cfg.tolerance.unwrap_or(tol),
        Comparison::Within,
    ));
    Ok(rep)
}

fn key_estimate(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let alpha = cfg.alpha_or(0.0);
    let [lo, hi] = cfg.j_range.unwrap_or([2, 6]);
    let js: Vec<i32> = (lo..=hi).collect();
    let spec = cfg.amplitude(alpha, lo)?;
    let ke = key_estimate_sweep(&spec, &cfg.condition()?, &js, &cfg.sampling(), &cfg.grid_rule(), &norm_options(cfg))?;
    let mut rep = Report::new(&["j", "tau", "mu", "norm", "iterations", "residual"]);
    for r in &ke.rows {
        rep.push(vec![r.j.into(), r.tau.into(), r.mu.into(), r.norm.into(), r.iterations.into(), r.residual.into()]);
    }
    rep.note("sup", &ke.sup);
    rep.note("slope", ke.fit.slope);
    rep.note("slope_stderr", ke.fit.slope_stderr);
    rep.note("local_slopes", ke.local_slopes());
    rep.checks.push(Check::new(
        "slope",
        ke.fit.slope,
        cfg.expect_slope.unwrap_or(alpha - cfg.threshold_alpha()),
        cfg.tolerance.unwrap_or(0.15),
        Comparison::Within,
    ));
    Ok(rep)
}

fn regime(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let j = cfg.j_range.map(|r| r[0]).unwrap_or(4);
    let spec = cfg.amplitude(cfg.alpha_or(0.0), j)?;
    let couplings = cfg.couplings.clone().unwrap_or_else(|| vec![0.0, 1.0 / 16.0, 0.2, 5.0, 16.0, 64.0]);
    let taus: Vec<f64> = couplings.iter().map(|&m| tau_for_coupling(cfg.beta, j, m)).collect();
    let t = regime_check(&spec, &cfg.condition()?, &taus, cfg.eps, &cfg.grid_rule(), &norm_options(cfg))?;
    let mut rep = Report::new(&["j", "tau", "mu", "norm", "bound", "ratio"]);
    for r in &t.rows {
        rep.push(vec![j.into(), r.tau.into(), r.mu.into(), r.norm.into(), r.bound.into(), r.ratio.into()]);
    }
    rep.checks.push(Check::new("fitted_constant", t.constant, cfg.max_constant, 0.0, Comparison::AtMost));
    rep.checks.push(Check::new("exceeding_rows", t.exceeding.len() as f64, 0.0, 0.0, Comparison::AtMost));
    Ok(rep)
}

fn ortho(cfg: &ExperimentConfig) -> Result<(Report, OrthoTable), CliError> {
    let j = cfg.j_range.map(|r| r[0]).unwrap_or(0);
    let spec = cfg.amplitude(cfg.alpha_or(cfg.threshold_alpha()), j)?;
    let jp: Vec<i32> = (j..=j + cfg.max_gap).collect();
    let t = ortho_sweep(&spec, &cfg.condition()?, &jp, cfg.mu_or(1.0), cfg.eps, &cfg.grid_rule(), &norm_options(cfg))?;
    let mut rep = Report::new(&["j", "jprime", "tau", "composed", "norm_j", "norm_jprime", "submultiplicative"]);
    for r in &t.rows {
        rep.push(vec![
            r.j.into(),
            r.jprime.into(),
            r.tau.into(),
            r.composed.into(),
            r.norm_j.into(),
            r.norm_jprime.into(),
            r.submultiplicative.into(),
        ]);
    }
    rep.note("slope", t.fit.slope);
    rep.note("slope_stderr", t.fit.slope_stderr);
    rep.checks.push(Check::new(
        "gap_slope",
        t.fit.slope,
        cfg.expect_slope.unwrap_or(-cfg.beta / 6.0),
        cfg.tolerance.unwrap_or(0.1),
        Comparison::AtMost,
    ));
    rep.checks.push(Check::flag("submultiplicative", t.rows.iter().all(|r| r.submultiplicative)));
    Ok((rep, t))
}

fn cotlar(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let (mut rep, gains): (Report, BTreeMap<u32, f64>) = match &cfg.gains {
        Some(g) => {
            let mut rep = Report::new(&["gap", "gain"]);
            for (k, &v) in g.iter().enumerate() {
                rep.push(vec![k.into(), v.into()]);
            }
            (rep, g.iter().enumerate().map(|(k, &v)| (k as u32, v)).collect())
        }
        None => {
            let (mut rep, t) = ortho(cfg)?;
            rep.checks.clear();
            (rep, t.gains())
        }
    };
    match cotlar_assemble(&gains) {
        Ok(b) => {
            rep.note("bound", b);
            rep.checks.push(Check::flag("finite_bound", b.total.is_finite()));
        }
        Err(Error::NonDecaying(msg)) => {
            rep.note("error", format!("gains do not decay: {msg}"));
            rep.checks.push(Check::flag("finite_bound", false));
        }
        Err(e) => return Err(e.into()),
    }
    Ok(rep)
}
