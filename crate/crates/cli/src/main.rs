use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use voltreg_core::analysis::validate_gain;
use voltreg_core::config::{BuiltScenario, ScenarioConfig};
use voltreg_core::report::{
    check_outputs, create_output, write_json, write_trace_csv, write_trajectory_csv, CompareSummary, RunSummary,
};
use voltreg_core::sim::{compare_controllers, run_scenario, Injections};
use voltreg_core::verify::{run_verification, VerifyOptions};
use voltreg_core::Error;

/// Volt-VAR droop simulation with fixed and switching voltage references.
#[derive(Parser, Debug)]
#[command(name = "voltreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Print progress to stderr (also enabled by VOLTREG_VERBOSE=1).
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one scenario; writes trajectory.csv and metrics.json.
    Run(ScenarioArgs),
    /// Run a scenario under both references; writes fixed.csv, switching.csv, compare.json.
    Compare(ScenarioArgs),
    /// Numerical checks of the stability and cancellation results; writes verify.json.
    Verify(VerifyArgs),
    /// Write the synthetic data-center traces of a scenario as CSV.
    GenTrace(GenTraceArgs),
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output directory, created if missing.
    #[arg(short, long)]
    out: PathBuf,

    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(short, long)]
    config: PathBuf,

    #[command(flatten)]
    output: OutputArgs,

    /// Override a config key, e.g. `--set controller=fixed` or `--set data_center.0.bus=25`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    output: OutputArgs,

    /// `gain=<k>` (uniform droop gain) or `seed=<n>`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct GenTraceArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Watts per p.u. of data-center power; defaults to the feeder base power.
    #[arg(long)]
    watts_per_pu: Option<f64>,
}

struct Ctx {
    verbose: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = cli.verbose || std::env::var("VOLTREG_VERBOSE").is_ok_and(|v| v == "1");
    let ctx = Ctx { verbose };
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(&ctx, &a),
        Command::Compare(a) => cmd_compare(&ctx, &a),
        Command::Verify(a) => cmd_verify(&ctx, &a),
        Command::GenTrace(a) => cmd_gen_trace(&ctx, &a),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let input = err
                .chain()
                .filter_map(|e| e.downcast_ref::<Error>())
                .any(Error::is_input_error);
            ExitCode::from(if input { 2 } else { 1 })
        }
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load(ctx: &Ctx, args: &ScenarioArgs) -> Result<(ScenarioConfig, BuiltScenario)> {
    let cfg = ScenarioConfig::load(&args.config, &args.overrides)?;
    let built = cfg.build(&config_dir(&args.config))?;
    ctx.note(format!(
        "{}: {} steps, control every {} steps, {} data center(s)",
        args.config.display(),
        built.scenario.steps,
        built.scenario.ctrl_every,
        cfg.data_center.len()
    ));
    Ok((cfg, built))
}

fn prepare_out(out: &OutputArgs, files: &[&str]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&out.out).with_context(|| format!("creating {}", out.out.display()))?;
    let paths: Vec<PathBuf> = files.iter().map(|f| out.out.join(f)).collect();
    check_outputs(&paths, out.force)?;
    Ok(paths)
}

fn cmd_run(ctx: &Ctx, args: &ScenarioArgs) -> Result<ExitCode> {
    let (cfg, built) = load(ctx, args)?;
    let paths = prepare_out(&args.output, &["trajectory.csv", "metrics.json"])?;
    let cert = validate_gain(built.scenario.feeder.x(), &built.scenario.gain)?;
    let t0 = Instant::now();
    let res = run_scenario(&built.scenario)?;
    ctx.note(format!("simulated in {:.3} s", t0.elapsed().as_secs_f64()));
    write_trajectory_csv(&res, create_output(&paths[0], args.output.force)?)?;
    write_json(
        &RunSummary::new(&res, Some(&cert), Some(&cfg)),
        create_output(&paths[1], args.output.force)?,
    )?;
    let m = &res.metrics;
    println!("controller       {}", res.controller);
    println!("max |v-1|        {:.5}", m.max_abs_deviation);
    println!("violations       {}", m.violations);
    println!("sum |dq|         {:.5}", m.total_effort);
    println!("epsilon          {:.6}", cert.epsilon);
    println!("wrote {} and {}", paths[0].display(), paths[1].display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(ctx: &Ctx, args: &ScenarioArgs) -> Result<ExitCode> {
    let (cfg, built) = load(ctx, args)?;
    let paths = prepare_out(&args.output, &["fixed.csv", "switching.csv", "compare.json"])?;
    let t0 = Instant::now();
    let mut cmp = compare_controllers(&built.scenario, built.adaptation)?;
    cmp.certificate = Some(validate_gain(built.scenario.feeder.x(), &built.scenario.gain)?);
    ctx.note(format!("simulated both controllers in {:.3} s", t0.elapsed().as_secs_f64()));
    write_trajectory_csv(&cmp.fixed, create_output(&paths[0], args.output.force)?)?;
    write_trajectory_csv(&cmp.switching, create_output(&paths[1], args.output.force)?)?;
    write_json(&CompareSummary::new(&cmp, Some(&cfg)), create_output(&paths[2], args.output.force)?)?;
    let (f, s, d) = (&cmp.fixed.metrics, &cmp.switching.metrics, &cmp.deltas);
    println!("{:<14}{:>12}{:>12}{:>12}", "", "fixed", "switching", "delta");
    println!(
        "{:<14}{:>12.5}{:>12.5}{:>12.5}",
        "max |v-1|", f.max_abs_deviation, s.max_abs_deviation, d.max_abs_deviation
    );
    println!("{:<14}{:>12}{:>12}{:>12}", "violations", f.violations, s.violations, d.violations);
    println!(
        "{:<14}{:>12.5}{:>12.5}{:>12.5}",
        "sum |dq|", f.total_effort, s.total_effort, d.total_effort
    );
    println!(
        "reduction: deviation {:.1}%, effort {:.1}%",
        100.0 * d.deviation_reduction,
        100.0 * d.effort_reduction
    );
    println!("wrote {}", args.output.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(ctx: &Ctx, args: &VerifyArgs) -> Result<ExitCode> {
    let mut opts = VerifyOptions::default();
    let mut problems = Vec::new();
    for ov in &args.overrides {
        match ov.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
            Some(("gain", v)) => match v.parse::<f64>() {
                Ok(k) if k.is_finite() && k >= 0.0 => opts.gain = Some(k),
                _ => problems.push(format!("gain must be a non-negative number, got `{v}`")),
            },
            Some(("seed", v)) => match v.parse() {
                Ok(s) => opts.seed = s,
                Err(_) => problems.push(format!("seed must be an unsigned integer, got `{v}`")),
            },
            _ => problems.push(format!("unknown verify override `{ov}` (expected gain=<k> or seed=<n>)")),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems).into());
    }
    let paths = prepare_out(&args.output, &["verify.json"])?;
    let t0 = Instant::now();
    let report = run_verification(&opts)?;
    ctx.note(format!("checks ran in {:.3} s", t0.elapsed().as_secs_f64()));
    write_json(&report, create_output(&paths[0], args.output.force)?)?;
    println!(
        "gain {:.6}  epsilon {:.6}  margin {:.3e}",
        report.gain, report.certificate.epsilon, report.certificate.margin
    );
    for c in &report.checks {
        println!(
            "{} {:<32} measured {:<12.4e} limit {:<10.3e} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance,
            c.detail
        );
    }
    println!("wrote {}", paths[0].display());
    if report.all_passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        let names: Vec<&str> = report.failing().map(|c| c.name.as_str()).collect();
        eprintln!("failing checks: {}", names.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn cmd_gen_trace(ctx: &Ctx, args: &GenTraceArgs) -> Result<ExitCode> {
    let (_, built) = load(ctx, &args.scenario)?;
    let sc = &built.scenario;
    let Injections::Workload { data_centers, .. } = &sc.injections else {
        unreachable!("configs always describe data-center workloads")
    };
    let names: Vec<String> = (0..data_centers.len()).map(|k| format!("trace_dc{k}.csv")).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let paths = prepare_out(&args.scenario.output, &name_refs)?;
    let watts_per_pu = args.watts_per_pu.unwrap_or(sc.feeder.base().power_mva * 1e6);
    for (dc, path) in data_centers.iter().zip(&paths) {
        write_trace_csv(dc, sc.dt_sim, watts_per_pu, create_output(path, args.scenario.output.force)?)?;
        println!("bus {:>3} -> {}", sc.feeder.bus_at(dc.bus_index), path.display());
    }
    Ok(ExitCode::SUCCESS)
}
