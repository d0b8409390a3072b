//! Command-line front end: certify, simulate, sweep, verify and maxstep on
//! TOML scenarios.

pub mod output;
pub mod scenario;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use delayfb::delayop::{ControlUpdate, DelayOperator, OutputFeedback};
use delayfb::gains::{self, CascadeHypotheses};
use delayfb::simcore::{self, ChainPlant, Trajectory};
use delayfb::verify::{self, VerifyError};
use rayon::prelude::*;

use output::KeyValues;
use scenario::{Overrides, PlantConfig, Scenario};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "delayfb", version, about = "Delay-based output feedback: certification, simulation and checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Kv,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Built-in scenario (example31, example31-forced, example32) or a TOML file.
    #[arg(long)]
    pub scenario: String,
    /// Delay step, overriding the scenario.
    #[arg(long)]
    pub h: Option<f64>,
    /// Final time, overriding the scenario.
    #[arg(long)]
    pub tend: Option<f64>,
    /// Integration steps per delay step (dt = h / dt-div), at least 4.
    #[arg(long = "dt-div")]
    pub dt_div: Option<usize>,
    /// Output file instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed of the Monte-Carlo runs.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { h: self.h, t_end: self.tend, dt_div: self.dt_div }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    All,
    Estimator,
    Fading,
    StateFeedback,
    Envelope,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify the gain and compute the largest certified step h*.
    ///
    /// h* is found by bisection to 1e-6 relative, never below 1e-12. The
    /// conditions and closed-loop gains are reported at --h, or at h* when
    /// --h is absent. Exit 1 when the conditions fail at the reported step.
    Certify {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the closed loop and write the trajectory as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write a gnuplot script plotting the CSV.
        #[arg(long)]
        gnuplot: Option<PathBuf>,
    },
    /// Simulate over a grid of steps or of one gain component.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `h` or `k1` .. `kn`.
        #[arg(long, default_value = "h")]
        param: String,
        #[arg(long, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, allow_negative_numbers = true)]
        to: f64,
        #[arg(long, default_value_t = 21)]
        points: usize,
    },
    /// Check the estimator, fading-memory, state-feedback or cascade bounds.
    ///
    /// The estimator check uses the scenario step and --runs random chains.
    /// The fading-memory check runs the scenario at the certified step with
    /// the control recomputed continuously.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Check::All)]
        check: Check,
        #[arg(long, default_value_t = 100)]
        runs: usize,
    },
    /// Empirical largest stable step by bisection.
    ///
    /// A step is stable when |x(200)| < 1e-2 sup|history| and unstable when
    /// |x| passes 1e6 or the run diverges; bisection stops at width 5e-3.
    Maxstep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.05)]
        lo: f64,
        #[arg(long, default_value_t = 0.5)]
        hi: f64,
        /// Cross-check on a uniform grid with this many points.
        #[arg(long)]
        scan: Option<usize>,
    },
}

/// Error caused by the invocation rather than by the computation.
#[derive(Debug)]
pub struct UsageError(pub anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| UsageError(e).into())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli.command) {
        Ok(pass) => {
            if pass {
                EXIT_OK
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_FAIL
            }
        }
    }
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit(kv: &KeyValues, format: Format, out: &Option<PathBuf>) -> Result<()> {
    let text = match format {
        Format::Kv => kv.render_kv(),
        Format::Csv => kv.render_csv(),
    };
    let mut w = open_out(out)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn load(common: &Common) -> Result<Scenario> {
    usage(Scenario::load(&common.scenario))
}

fn dispatch(cmd: &Command) -> Result<bool> {
    match cmd {
        Command::Certify { common } => certify(common),
        Command::Simulate { common, gnuplot } => simulate(common, gnuplot),
        Command::Sweep { common, param, from, to, points } => sweep(common, param, *from, *to, *points),
        Command::Verify { common, check, runs } => verify_cmd(common, *check, *runs),
        Command::Maxstep { common, lo, hi, scan } => maxstep(common, *lo, *hi, *scan),
    }
}

fn certify(common: &Common) -> Result<bool> {
    let s = load(common)?;
    let gc = s.certificate()?;
    let ec = usage(s.estimator())?;
    let h_star = gains::max_certified_step(&gc, &ec)?;
    let h = common.h.unwrap_or(h_star);
    if !(h > 0.0 && h <= 1.0) {
        return usage(Err(anyhow!("step h = {h} must lie in (0, 1]")));
    }
    let cert = gains::step_certificate(&gc, &ec, h)?;

    let mut kv = KeyValues::default();
    kv.push("scenario", &s.name);
    kv.push("n", gc.n);
    kv.nums("k", &gc.k);
    kv.num("alpha", gc.alpha);
    kv.num("beta", gc.beta);
    kv.num("mu", gc.mu);
    kv.num("lyapunov_rate", gc.lyap_rate);
    kv.num("m0", gc.m0);
    kv.nums("m", &gc.m);
    kv.num("k0", ec.k0);
    kv.nums("k_estimator", &ec.k);
    kv.num("h_star", h_star);
    kv.num("h", cert.h);
    kv.num("cond1", cert.cond1);
    kv.num("cond2", cert.cond2);
    kv.num("residual1", 1.0 - cert.cond1);
    kv.num("residual2", 1.0 - cert.cond2);
    kv.push("valid", cert.is_valid());
    if let Some(g) = &cert.gains {
        kv.num("c", g.c);
        kv.num("l", g.l_rem);
        kv.num("q0", g.q0);
        kv.nums("q", &g.q);
        kv.num("qe", g.qe);
        kv.num("ln_l", g.ln_l_rem);
        kv.num("ln_q0", g.ln_q0);
        kv.nums("ln_q", &g.ln_q);
        kv.num("ln_qe", g.ln_qe);
    }
    emit(&kv, common.format.unwrap_or(Format::Kv), &common.out)?;
    Ok(cert.is_valid())
}

/// First time at which the run stopped early.
fn stop_time(traj: &Trajectory) -> Option<f64> {
    match (traj.diverged, traj.blown_up) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

fn simulate(common: &Common, gnuplot: &Option<PathBuf>) -> Result<bool> {
    let s = load(common)?;
    let over = common.overrides();
    let h = usage(s.step(&over))?;
    usage(s.options(h, &over))?;
    let traj = s.simulate(h, &over)?;
    {
        let mut w = open_out(&common.out)?;
        match common.format.unwrap_or(Format::Csv) {
            Format::Csv => output::write_csv(&mut w, &traj)?,
            Format::Kv => {
                let mut kv = KeyValues::default();
                kv.push("scenario", &s.name);
                kv.num("h", h);
                kv.num("dt", traj.dt);
                kv.push("points", traj.len());
                kv.num("t_final", *traj.times.last().unwrap_or(&0.0));
                kv.nums("x_final", traj.x.last().map_or(&[][..], |v| v));
                kv.num("x_norm_final", traj.x_norm(traj.len() - 1));
                w.write_all(kv.render_kv().as_bytes())?;
            }
        }
        w.flush()?;
    }
    if let Some(path) = gnuplot {
        let csv = common.out.as_ref().map_or("trajectory.csv".to_string(), |p| p.display().to_string());
        std::fs::write(path, output::gnuplot_script(&csv, traj.n(), traj.kz(), &s.name))
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    match stop_time(&traj) {
        Some(t) => {
            eprintln!("simulation diverged at t = {t}");
            Ok(false)
        }
        None => Ok(true),
    }
}

fn linspace(from: f64, to: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![from];
    }
    (0..points).map(|i| from + (to - from) * i as f64 / (points - 1) as f64).collect()
}

fn sweep(common: &Common, param: &str, from: f64, to: f64, points: usize) -> Result<bool> {
    let s = load(common)?;
    let over = common.overrides();
    if points == 0 || !from.is_finite() || !to.is_finite() {
        return usage(Err(anyhow!("sweep needs finite bounds and at least one point")));
    }
    let gain_index = match param {
        "h" => None,
        p => match p.strip_prefix('k').and_then(|i| i.parse::<usize>().ok()) {
            Some(i) if (1..=s.n()).contains(&i) => Some(i - 1),
            _ => return usage(Err(anyhow!("--param must be h or k1..k{}", s.n()))),
        },
    };
    let values = linspace(from, to, points);
    let base_h = if gain_index.is_some() { Some(usage(s.step(&over))?) } else { None };
    if gain_index.is_none() && values.iter().any(|h| !(*h > 0.0 && *h <= 1.0)) {
        return usage(Err(anyhow!("swept steps must lie in (0, 1]")));
    }
    let rows: Vec<Result<[String; 5]>> = values
        .par_iter()
        .map(|&v| {
            let mut k = s.gain();
            let h = match gain_index {
                Some(i) => {
                    k[i] = v;
                    base_h.unwrap_or(v)
                }
                None => v,
            };
            let row = match s.simulate_with(&k, h, &over) {
                Ok(traj) => {
                    let last = traj.x_norm(traj.len() - 1);
                    let peak = (0..traj.len()).map(|i| traj.x_norm(i)).fold(0.0, f64::max);
                    let status = if stop_time(&traj).is_some() {
                        "diverged"
                    } else if last < verify::CLASSIFIER_DECAY * traj.history_sup {
                        "decayed"
                    } else {
                        "bounded"
                    };
                    [output::num(v), status.into(), output::num(last), output::num(peak), output::num(h)]
                }
                Err(e) => [
                    output::num(v),
                    format!("error: {e}").replace(',', ";"),
                    String::new(),
                    String::new(),
                    output::num(h),
                ],
            };
            Ok(row)
        })
        .collect();
    let mut w = open_out(&common.out)?;
    let format = common.format.unwrap_or(Format::Csv);
    if format == Format::Csv {
        writeln!(w, "{param},status,x_norm_final,x_norm_peak,h")?;
    }
    for row in rows {
        let row = row?;
        match format {
            Format::Csv => writeln!(w, "{}", row.join(","))?,
            Format::Kv => writeln!(
                w,
                "{param} = {}: status = {}, x_norm_final = {}, x_norm_peak = {}",
                row[0], row[1], row[2], row[3]
            )?,
        }
    }
    w.flush()?;
    Ok(true)
}

fn report_line(kv: &mut KeyValues, name: &str, pass: bool, detail: String) {
    kv.push(&format!("check.{name}"), format!("{} ({detail})", if pass { "pass" } else { "fail" }));
}

fn verify_cmd(common: &Common, check: Check, runs: usize) -> Result<bool> {
    let s = load(common)?;
    let over = common.overrides();
    let is_chain = matches!(s.plant, PlantConfig::Chain { .. });
    let wanted = |c: Check| check == c || (check == Check::All && (c == Check::Envelope) != is_chain);
    let mut kv = KeyValues::default();
    kv.push("scenario", &s.name);
    let mut all = true;

    if wanted(Check::Estimator) {
        let h = usage(s.step(&over))?;
        let r = verify::check_estimator_bound(s.n(), h, runs, &usage(s.estimator())?, common.seed, 1.0)?;
        all &= r.pass;
        report_line(
            &mut kv,
            "estimator",
            r.pass,
            format!(
                "h = {h}, runs = {}, points = {}, violations = {}, worst ratio = {:.6e}",
                r.runs, r.points, r.violations, r.worst_ratio
            ),
        );
    }
    if wanted(Check::Fading) || wanted(Check::StateFeedback) {
        let PlantConfig::Chain { n, alpha, beta, gain } = &s.plant else {
            return usage(Err(anyhow!("fading-memory and state-feedback checks need a chain plant")));
        };
        let plant = ChainPlant { n: *n, alpha: *alpha, beta: *beta, gain: gain.clone() };
        let gc = s.certificate()?;
        let inputs = s.inputs();
        if wanted(Check::Fading) {
            let ec = usage(s.estimator())?;
            let h = match common.h {
                Some(h) => h,
                None => gains::max_certified_step(&gc, &ec)?,
            };
            let cert = gains::step_certificate(&gc, &ec, h)?;
            let fb =
                OutputFeedback::from_gain(&gc.k, &DelayOperator::new(*n, h)?).with_update(ControlUpdate::Continuous);
            let traj = simcore::simulate_chain(&plant, &fb, &s.history(), &inputs, &s.options(h, &over)?)?;
            match verify::check_fading_memory(&traj, &cert, &gc, &inputs) {
                Ok(r) => {
                    let finite = cert.gains.as_ref().is_some_and(|g| g.is_finite());
                    all &= r.pass;
                    report_line(
                        &mut kv,
                        "fading",
                        r.pass,
                        format!(
                            "h = {h}, points = {}, max ratio = {:.6e}{}",
                            r.points,
                            r.max_ratio,
                            if finite { "" } else { ", gains overflow: bound vacuous" }
                        ),
                    );
                }
                Err(VerifyError::InvalidCertificate(h)) => {
                    all = false;
                    report_line(&mut kv, "fading", false, format!("step {h} is not certified"));
                }
                Err(e) => return Err(e.into()),
            }
        }
        if wanted(Check::StateFeedback) {
            let x0 = s.history().at(0.0);
            let dt = s.step(&over)? / s.steps_per_delay(&over) as f64;
            let t_end = over.t_end.unwrap_or(s.simulation.t_end);
            let traj =
                simcore::simulate_state_feedback(&plant, &gc.k, &x0, &inputs, &simcore::SimOptions::new(t_end, dt))?;
            let r = verify::check_state_feedback_estimate(&traj, &gc, &inputs)?;
            all &= r.pass;
            report_line(
                &mut kv,
                "state-feedback",
                r.pass,
                format!("points = {}, max ratio = {:.6e}", r.points, r.max_ratio),
            );
        }
    }
    if wanted(Check::Envelope) {
        let PlantConfig::Cascade { model } = &s.plant else {
            return usage(Err(anyhow!("the envelope check needs a cascade plant")));
        };
        let gc = s.certificate()?;
        let ec = usage(s.estimator())?;
        let b = match common.h {
            Some(h) => h,
            None => 0.5 * gains::max_certified_step(&gc, &ec)?,
        };
        let (gamma, l_hyp, cz) = model.hypotheses();
        let hyp = CascadeHypotheses { gamma, l_hyp, cz };
        let base = gains::step_certificate(&gc, &ec, b)?;
        let threshold = base.gains.as_ref().map(|g| gains::scaling_threshold(g, &hyp));
        match threshold {
            Some((rb, _)) if rb.is_finite() => {
                let design = gains::scaled_design(&gc, &ec, b, hyp, 2.0 * rb)?;
                let plant = simcore::CascadePlant::new(model.clone());
                let traj = simcore::simulate_cascade(
                    &plant,
                    &design.feedback(),
                    &s.initial.z0,
                    &s.history(),
                    &s.inputs(),
                    &s.options(design.h, &over)?,
                )?;
                let r = verify::check_cascade_envelope(
                    &traj,
                    &design,
                    &s.inputs(),
                    |z| model.v_func(z),
                    |x| model.a_func(x),
                )?;
                all &= r.pass;
                report_line(
                    &mut kv,
                    "envelope",
                    r.pass,
                    format!("b = {b}, r = {:.6e}, h = {:.6e}, max ratio = {:.6e}", design.r, design.h, r.max_ratio),
                );
            }
            Some((_, ln_rb1)) => {
                all = false;
                report_line(
                    &mut kv,
                    "envelope",
                    false,
                    format!("no finite scaling at b = {b}: ln(R(b) - 1) = {ln_rb1:.6e} overflows"),
                );
            }
            None => {
                all = false;
                report_line(&mut kv, "envelope", false, format!("base step {b} is not certified"));
            }
        }
    }
    if kv.rows.len() == 1 {
        bail!("no check applies to this scenario");
    }
    kv.push("result", if all { "pass" } else { "fail" });
    emit(&kv, common.format.unwrap_or(Format::Kv), &common.out)?;
    Ok(all)
}

fn maxstep(common: &Common, lo: f64, hi: f64, scan: Option<usize>) -> Result<bool> {
    let s = load(common)?;
    let over = common.overrides();
    let setup = usage(s.chain_setup(&over))?;
    let h = match verify::empirical_max_step(&setup, lo, hi) {
        Ok(h) => h,
        Err(e @ (VerifyError::BadBracket { .. } | VerifyError::Config(_))) => return usage(Err(e.into())),
        Err(e) => return Err(e.into()),
    };
    let mut kv = KeyValues::default();
    kv.push("scenario", &s.name);
    kv.num("lo", lo);
    kv.num("hi", hi);
    kv.num("max_step", h);
    if let Some(points) = scan {
        let grid = linspace(lo, hi, points.max(2));
        kv.num("max_step_scan", verify::scan_max_step(&setup, &grid)?);
    }
    emit(&kv, common.format.unwrap_or(Format::Kv), &common.out)?;
    Ok(true)
}
