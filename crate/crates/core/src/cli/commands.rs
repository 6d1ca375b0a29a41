use std::io::Write;

use super::config::{ConfigError, RunConfig};
use super::output::{format_float, DirSink, Sink};
use super::CliError;
use crate::brownian::IncrementStream;
use crate::error::MtemError;
use crate::lab::{
    fit_exponent, run_ensemble, verify_lemma_global_lipschitz, verify_lemma_lambda_preserved,
    EnsembleSpec,
};
use crate::model::{SamplingPlan, SdeModel, StabilityParams};
use crate::parallel::for_each_block;
use crate::schemes::{SchemeKind, Simulator};
use crate::truncation::verify_step_condition;

/// Multiple of `h` bounding the sampled pairs in the Lipschitz check.
const LIPSCHITZ_SAMPLING_MULTIPLE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Exponent,
    Verify,
    Compare,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Exponent => "exponent",
            Command::Verify => "verify",
            Command::Compare => "compare",
        }
    }
}

/// What a command produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rendered {
    pub files: Vec<String>,
    /// Diagnostics for stderr.
    pub notes: Vec<String>,
    /// Failed verdicts (`verify` only).
    pub failures: Vec<String>,
}

/// Runs `command` and writes its CSV outputs plus `manifest.txt` into `cfg.out`.
pub fn run_command(command: Command, cfg: &RunConfig) -> Result<Rendered, CliError> {
    let mut sink = DirSink::new(&cfg.out)?;
    let rendered = render(command, cfg, &mut sink)?;
    if !rendered.failures.is_empty() {
        for note in &rendered.notes {
            eprintln!("{note}");
        }
        return Err(CliError::Verification(rendered.failures.join("; ")));
    }
    Ok(rendered)
}

/// Runs `command`, writing every output file to `sink`.
pub fn render(command: Command, cfg: &RunConfig, sink: &mut dyn Sink) -> Result<Rendered, CliError> {
    let mut out = Rendered::default();
    match command {
        Command::Simulate => simulate(cfg, sink, &mut out)?,
        Command::Exponent => exponent(cfg, sink, &mut out)?,
        Command::Verify => verify(cfg, sink, &mut out)?,
        Command::Compare => compare(cfg, sink, &mut out)?,
    }
    write_manifest(command, cfg, sink)?;
    out.files.push("manifest.txt".into());
    Ok(out)
}

fn write_manifest(command: Command, cfg: &RunConfig, sink: &mut dyn Sink) -> Result<(), CliError> {
    let mut w = sink.create("manifest.txt")?;
    writeln!(w, "# mtem {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "# command={}", command.name())?;
    // output location and worker count do not affect results
    for (k, v) in cfg.to_pairs() {
        if k != "out" && k != "workers" {
            writeln!(w, "{k}={v}")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn state_header(prefix: &str, dimension: usize) -> String {
    if dimension == 1 {
        prefix.to_string()
    } else {
        (0..dimension).map(|i| format!("{prefix}_{i}")).collect::<Vec<_>>().join(",")
    }
}

fn write_state(w: &mut dyn Write, state: Option<&[f64]>, dimension: usize) -> std::io::Result<()> {
    for i in 0..dimension {
        if let Some(s) = state {
            write!(w, ",{}", format_float(s[i]))?;
        } else {
            write!(w, ",")?;
        }
    }
    Ok(())
}

/// Runs one path from its increment stream and keeps the strided states.
fn strided_path(
    sim: &Simulator,
    cfg: &RunConfig,
    index: usize,
) -> (Vec<(usize, Vec<f64>)>, Option<usize>) {
    let mut stream = IncrementStream::new(cfg.seed, index as u64, cfg.delta, cfg.refinement)
        .expect("grid validated by configuration");
    let mut kept = Vec::new();
    let mut last = (0, Vec::new());
    let outcome = sim.run_streamed(&cfg.x0, &mut stream, |k, x| {
        if k % cfg.stride == 0 {
            kept.push((k, x.to_vec()));
        } else {
            last = (k, x.to_vec());
        }
    });
    if let Some(&(k, _)) = kept.last() {
        if last.0 > k {
            kept.push(last);
        }
    }
    (kept, outcome.diverged_at)
}

fn simulate(cfg: &RunConfig, sink: &mut dyn Sink, out: &mut Rendered) -> Result<(), CliError> {
    let model = cfg.model.model();
    let policy = cfg.policy();
    let sim = Simulator::new(&model, &policy, cfg.scheme, cfg.delta, cfg.steps)?;
    let d = model.dimension();
    let mut w = sink.create("trajectories.csv")?;
    writeln!(w, "path_index,k,t,{},diverged", state_header("x", d))?;
    let mut diverged = 0;
    for_each_block(
        cfg.paths,
        cfg.workers,
        |range| range.map(|i| (i, strided_path(&sim, cfg, i))).collect::<Vec<_>>(),
        |block| {
            for (index, (states, diverged_at)) in block {
                diverged += usize::from(diverged_at.is_some());
                for (k, x) in states {
                    write!(w, "{index},{k},{}", format_float(k as f64 * cfg.delta))?;
                    write_state(&mut *w, Some(&x), d)?;
                    writeln!(w, ",{}", u8::from(diverged_at.is_some()))?;
                }
            }
            Ok::<(), CliError>(())
        },
    )?;
    w.flush()?;
    out.files.push("trajectories.csv".into());
    out.notes.push(format!(
        "simulate: {} {} paths, {diverged} diverged",
        cfg.paths, cfg.scheme
    ));
    Ok(())
}

/// `λ` from the config, the closed form, or sampling; `None` when the
/// model shows no decay.
fn stability_params(cfg: &RunConfig, model: &SdeModel, notes: &mut Vec<String>) -> Result<Option<StabilityParams>, CliError> {
    let plan = SamplingPlan::default();
    let lambda = match cfg.lambda {
        Some(l) => {
            let params = StabilityParams::new(cfg.p, l, cfg.epsilon.unwrap_or(l / 2.0))
                .map_err(|e| ConfigError::new("epsilon", e.to_string()))?;
            let check = params.cross_check(model, &plan)?;
            if check.warn {
                notes.push(format!(
                    "warning: sampled sup of the stability functional exceeds -lambda by {:e} (estimated lambda {})",
                    check.excess, check.estimated
                ));
            }
            l
        }
        None => match cfg.model.analytic_lambda(cfg.p) {
            Some(l) => l,
            None => model.estimate_lambda(cfg.p, &plan)?,
        },
    };
    if !(lambda > 0.0) {
        notes.push(format!("note: lambda = {lambda} is not positive; no exponent bound reported"));
        return Ok(None);
    }
    let eps = cfg.epsilon.unwrap_or(lambda / 2.0);
    let params = StabilityParams::new(cfg.p, lambda, eps).map_err(|e| ConfigError::new("epsilon", e.to_string()))?;
    Ok(Some(params))
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "fail"
    }
}

fn exponent(cfg: &RunConfig, sink: &mut dyn Sink, out: &mut Rendered) -> Result<(), CliError> {
    let model = cfg.model.model();
    let policy = cfg.policy();
    let params = stability_params(cfg, &model, &mut out.notes)?;
    let spec = EnsembleSpec {
        scheme: cfg.scheme,
        x0: cfg.x0.clone(),
        delta: cfg.delta,
        steps: cfg.steps,
        paths: cfg.paths,
        seed: cfg.seed,
        refinement: cfg.refinement,
        p: cfg.p,
        floor: cfg.floor,
        workers: cfg.workers,
    };
    let ensemble = run_ensemble(&model, &policy, &spec)?;
    let moment = &ensemble.moment;
    if moment.diverged_paths == cfg.paths {
        return Err(MtemError::Estimation(format!("all {} paths diverged", cfg.paths)).into());
    }

    let mut w = sink.create("moments.csv")?;
    writeln!(w, "t,moment,stderr,censored")?;
    for k in 0..moment.times.len() {
        writeln!(
            w,
            "{},{},{},{}",
            format_float(moment.times[k]),
            format_float(moment.means[k]),
            format_float(moment.std_errors[k]),
            moment.censored[k]
        )?;
    }
    w.flush()?;
    drop(w);
    out.files.push("moments.csv".into());

    let horizon = cfg.horizon();
    let window = (cfg.window.0 * horizon, cfg.window.1 * horizon);
    let fit = fit_exponent(moment, window, cfg.floor)?;
    let mut w = sink.create("fit.csv")?;
    writeln!(w, "slope,intercept,t_lo,t_hi,r_squared,points,censored_points,paths,diverged,bound,verdict")?;
    let (bound, fit_verdict) = match params {
        Some(sp) => {
            let b = sp.moment_exponent_bound();
            (format_float(b), verdict(fit.slope <= b))
        }
        None => (String::new(), ""),
    };
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{bound},{fit_verdict}",
        format_float(fit.slope),
        format_float(fit.intercept),
        format_float(fit.t_lo),
        format_float(fit.t_hi),
        format_float(fit.r_squared),
        fit.points,
        fit.censored_points,
        cfg.paths,
        moment.diverged_paths
    )?;
    w.flush()?;
    drop(w);
    out.files.push("fit.csv".into());
    out.notes.push(format!("exponent: fitted moment slope {:.6}", fit.slope));

    if horizon >= 1.0 {
        let summary = ensemble.as_exponent_summary(cfg.floor)?;
        let mut w = sink.create("as_exponent.csv")?;
        writeln!(w, "q05,q50,q95,max,paths,censored,diverged,bound,verdict")?;
        let (bound, as_verdict) = match params {
            Some(sp) => {
                let b = sp.almost_sure_exponent_bound();
                (format_float(b), verdict(summary.q95 <= b))
            }
            None => (String::new(), ""),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{bound},{as_verdict}",
            format_float(summary.q05),
            format_float(summary.q50),
            format_float(summary.q95),
            format_float(summary.max),
            cfg.paths,
            summary.censored,
            summary.diverged
        )?;
        w.flush()?;
        out.files.push("as_exponent.csv".into());
    } else {
        out.notes.push(format!(
            "note: horizon {horizon} < 1, almost-sure exponent summary skipped"
        ));
    }
    Ok(())
}

fn verify(cfg: &RunConfig, sink: &mut dyn Sink, out: &mut Rendered) -> Result<(), CliError> {
    let model = cfg.model.model();
    let policy = cfg.policy();
    let deltas = cfg.verify_deltas();
    let lipschitz = model.lipschitz_fn();

    let report = verify_step_condition(&policy, lipschitz.as_ref(), &deltas)?;
    let mut w = sink.create("step_condition.csv")?;
    writeln!(w, "delta,h,L_h,product,verdict")?;
    for row in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            format_float(row.delta),
            format_float(row.h),
            format_float(row.lipschitz_at_h),
            format_float(row.product),
            verdict(row.ok)
        )?;
    }
    w.flush()?;
    drop(w);
    out.files.push("step_condition.csv".into());
    if !report.monotone {
        out.failures.push("step condition is not monotone".into());
    }

    let lambda = match cfg.lambda.or_else(|| cfg.model.analytic_lambda(cfg.p)) {
        Some(l) => l,
        None => model.estimate_lambda(cfg.p, &SamplingPlan::default())?,
    };

    let mut lip = sink.create("lemma_lipschitz.csv")?;
    writeln!(lip, "delta,h,coefficient,max_ratio,bound,verdict")?;
    let mut lipschitz_rows = Vec::new();
    let mut lambda_rows = Vec::new();
    for &delta in &report.rows.iter().map(|r| r.delta).collect::<Vec<_>>() {
        let h = policy.radius(delta)?;
        let r = verify_lemma_global_lipschitz(&model, h, cfg.trials, LIPSCHITZ_SAMPLING_MULTIPLE, cfg.seed)?;
        let limit = r.bound * (1.0 + crate::lab::LIPSCHITZ_SLACK);
        for (name, ratio) in [("f", r.max_ratio_f), ("g", r.max_ratio_g)] {
            let pass = ratio <= limit;
            writeln!(
                lip,
                "{},{},{name},{},{},{}",
                format_float(delta),
                format_float(h),
                format_float(ratio),
                format_float(r.bound),
                verdict(pass)
            )?;
        }
        if !r.pass {
            out.failures.push(format!("global Lipschitz bound violated at delta = {delta}"));
        }
        lipschitz_rows.push(r);
        let l = verify_lemma_lambda_preserved(&model, h, cfg.p, lambda, &SamplingPlan::default())?;
        if !l.pass {
            out.failures.push(format!("truncated functional exceeds -lambda at delta = {delta}"));
        }
        lambda_rows.push((delta, l));
    }
    lip.flush()?;
    drop(lip);
    out.files.push("lemma_lipschitz.csv".into());

    let mut w = sink.create("lemma_lambda.csv")?;
    writeln!(w, "delta,h,p,lambda,sup,bound,verdict")?;
    for (delta, l) in &lambda_rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            format_float(*delta),
            format_float(l.radius),
            format_float(l.p),
            format_float(l.lambda),
            format_float(l.sup),
            format_float(l.bound),
            verdict(l.pass)
        )?;
    }
    w.flush()?;
    out.files.push("lemma_lambda.csv".into());
    out.notes.push(format!(
        "verify: {} step sizes, {} failure(s)",
        report.rows.len(),
        out.failures.len()
    ));
    Ok(())
}

fn compare(cfg: &RunConfig, sink: &mut dyn Sink, out: &mut Rendered) -> Result<(), CliError> {
    let model = cfg.model.model();
    let policy = cfg.policy();
    let mtem = Simulator::new(&model, &policy, SchemeKind::Mtem, cfg.delta, cfg.steps)?;
    let em = Simulator::new(&model, &policy, SchemeKind::Em, cfg.delta, cfg.steps)?;
    let d = model.dimension();

    let mut w = sink.create("compare.csv")?;
    writeln!(w, "path_index,k,t,{},{}", state_header("mtem", d), state_header("em", d))?;
    let (mut mtem_diverged, mut em_diverged) = (0usize, 0usize);
    for_each_block(
        cfg.paths,
        cfg.workers,
        |range| {
            range
                .map(|i| (i, strided_path(&mtem, cfg, i), strided_path(&em, cfg, i)))
                .collect::<Vec<_>>()
        },
        |block| {
            for (index, (a, a_div), (b, b_div)) in block {
                mtem_diverged += usize::from(a_div.is_some());
                em_diverged += usize::from(b_div.is_some());
                let mut ks: Vec<usize> = a.iter().chain(&b).map(|(k, _)| *k).collect();
                ks.sort_unstable();
                ks.dedup();
                let (mut ia, mut ib) = (a.iter().peekable(), b.iter().peekable());
                for k in ks {
                    let sa = ia.next_if(|(ka, _)| *ka == k).map(|(_, s)| s.as_slice());
                    let sb = ib.next_if(|(kb, _)| *kb == k).map(|(_, s)| s.as_slice());
                    write!(w, "{index},{k},{}", format_float(k as f64 * cfg.delta))?;
                    write_state(&mut *w, sa, d)?;
                    write_state(&mut *w, sb, d)?;
                    writeln!(w)?;
                }
            }
            Ok::<(), CliError>(())
        },
    )?;
    w.flush()?;
    drop(w);
    out.files.push("compare.csv".into());

    let mut w = sink.create("compare_summary.csv")?;
    writeln!(w, "scheme,paths,diverged")?;
    writeln!(w, "mtem,{},{mtem_diverged}", cfg.paths)?;
    writeln!(w, "em,{},{em_diverged}", cfg.paths)?;
    w.flush()?;
    out.files.push("compare_summary.csv".into());
    out.notes.push(format!(
        "compare: {} paths, mtem diverged {mtem_diverged}, em diverged {em_diverged}",
        cfg.paths
    ));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::{parse_config, MemorySink};

    fn config(text: &str) -> RunConfig {
        parse_config(Some(text), &[]).unwrap()
    }

    #[test]
    fn simulate_writes_header_and_rows() {
        let cfg = config("paths=3\nsteps=20\nstride=5\nrefinement=2");
        let mut sink = MemorySink::default();
        render(Command::Simulate, &cfg, &mut sink).unwrap();
        let csv = sink.text("trajectories.csv").unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("path_index,k,t,x,diverged"));
        // k = 0, 5, 10, 15, 20 per path
        assert_eq!(lines.count(), 15);
        assert!(csv.contains("\n0,0,0.0000000000000000e0,2.0000000000000000e0,0\n"));
    }

    #[test]
    fn stride_keeps_final_state() {
        let cfg = config("paths=1\nsteps=7\nstride=3\nrefinement=1");
        let mut sink = MemorySink::default();
        render(Command::Simulate, &cfg, &mut sink).unwrap();
        let ks: Vec<&str> = sink
            .text("trajectories.csv")
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap())
            .collect();
        assert_eq!(ks, ["0", "3", "6", "7"]);
    }

    #[test]
    fn manifest_reproduces_config() {
        let cfg = config("model=linear\nmu=-1\nsigma=0.5\ndelta=1e-3\nsteps=50\npaths=4\nworkers=3");
        let mut sink = MemorySink::default();
        render(Command::Simulate, &cfg, &mut sink).unwrap();
        let manifest = sink.text("manifest.txt").unwrap();
        assert!(manifest.starts_with("# mtem "));
        let again = parse_config(Some(manifest), &[]).unwrap();
        assert_eq!(RunConfig { workers: 3, ..again }, cfg);
    }

    #[test]
    fn verify_example41_passes() {
        let cfg = config("trials=3000");
        let mut sink = MemorySink::default();
        let rendered = render(Command::Verify, &cfg, &mut sink).unwrap();
        assert!(rendered.failures.is_empty(), "{:?}", rendered.failures);
        let step = sink.text("step_condition.csv").unwrap();
        assert_eq!(step.lines().next(), Some("delta,h,L_h,product,verdict"));
        assert_eq!(step.lines().count(), 5);
        assert!(sink.text("lemma_lipschitz.csv").unwrap().lines().skip(1).all(|l| l.ends_with("pass")));
        assert!(sink.text("lemma_lambda.csv").unwrap().lines().skip(1).all(|l| l.ends_with("pass")));
    }

    #[test]
    fn verify_reports_overstated_lambda() {
        let cfg = config("model=linear\nmu=-1.25\nsigma=1\ndelta=1e-3\nlambda=2\ntrials=300");
        let mut sink = MemorySink::default();
        let rendered = render(Command::Verify, &cfg, &mut sink).unwrap();
        assert!(!rendered.failures.is_empty());
    }

    #[test]
    fn exponent_emits_fit() {
        let cfg = config("model=linear\nmu=-1\nsigma=0.5\ndelta=1e-2\nsteps=200\npaths=50\nrefinement=1");
        let mut sink = MemorySink::default();
        render(Command::Exponent, &cfg, &mut sink).unwrap();
        let fit = sink.text("fit.csv").unwrap();
        assert!(fit.starts_with("slope,"));
        assert_eq!(fit.lines().count(), 2);
        assert_eq!(sink.text("moments.csv").unwrap().lines().count(), 202);
        assert!(sink.text("as_exponent.csv").is_some());
    }

    #[test]
    fn compare_tallies_both_schemes() {
        let cfg = config("paths=5\nsteps=40\nrefinement=1\nstride=10");
        let mut sink = MemorySink::default();
        render(Command::Compare, &cfg, &mut sink).unwrap();
        let summary = sink.text("compare_summary.csv").unwrap();
        assert!(summary.starts_with("scheme,paths,diverged\nmtem,5,"));
        let csv = sink.text("compare.csv").unwrap();
        assert_eq!(csv.lines().next(), Some("path_index,k,t,mtem,em"));
    }
}
