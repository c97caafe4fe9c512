//! `elsg`: barrier synthesis, closed-loop simulation and property verification from a YAML
//! run configuration.
//!
//! Exit codes: 0 ok, 1 usage/parse/configuration, 2 assumption failure, 3 safety violation
//! in a filtered run, 4 property failure.

mod config;
mod svg;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use elsg_core::barrier::{BarrierConfig, ConstraintSpec};
use elsg_core::sim::{ControllerMode, Scenario, SimSettings, SimTrace};
use elsg_core::synthesis::{SamplingConstants, SynthesisReport};
use elsg_core::verify::{run_suite, SuiteOptions};
use elsg_core::Error;
use serde::Serialize;

use config::{ConfigError, ParamSource, RunConfig};

const EXIT_PARSE: u8 = 1;
const EXIT_ASSUMPTION: u8 = 2;
const EXIT_SAFETY: u8 = 3;
const EXIT_PROPERTY: u8 = 4;

#[derive(Parser)]
#[command(name = "elsg", version, about = "Barrier-function safety filters for box-constrained manipulators")]
struct Cli {
    /// Worker threads for the verification sweeps.
    #[arg(long, env = "ELSG_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the parameter design procedure and write the report.
    Synth {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Simulate the closed loop and write the CSV trace.
    Simulate {
        #[arg(short, long)]
        config: PathBuf,
        /// Also write SVG plots of q, v and u.
        #[arg(long)]
        plots: bool,
        /// Override the configured controller mode.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ControllerMode>,
    },
    /// Run the property suite on the synthesized parameters.
    Verify {
        #[arg(short, long)]
        config: PathBuf,
        /// Grid points per joint along each of q and v.
        #[arg(long, default_value_t = 50)]
        grid: usize,
        /// Random states for the sampled barrier checks.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

fn parse_mode(s: &str) -> Result<ControllerMode, String> {
    match s {
        "nominal-only" => Ok(ControllerMode::NominalOnly),
        "zcbf-continuous" => Ok(ControllerMode::ZcbfContinuous),
        "zcbf-sampled" => Ok(ControllerMode::ZcbfSampled),
        _ => Err(format!("unknown mode '{s}' (nominal-only, zcbf-continuous, zcbf-sampled)")),
    }
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure { code: EXIT_PARSE, message: e.0 }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Assumption { .. } | Error::Synthesis(_) => EXIT_ASSUMPTION,
            _ => EXIT_PARSE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_PARSE, message: format!("{}: {e}", path.display()) }
}

/// Writes through a temporary file in the target directory, then renames it into place.
fn write_atomic(path: &Path, write: impl FnOnce(&mut fs::File) -> std::io::Result<()>) -> Result<(), Failure> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_failure(dir, e))?;
    write(tmp.as_file_mut()).map_err(|e| io_failure(path, e))?;
    tmp.as_file_mut().sync_all().map_err(|e| io_failure(path, e))?;
    tmp.persist(path).map_err(|e| io_failure(path, e.error))?;
    Ok(())
}

fn write_yaml<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_yaml::to_string(value).map_err(|e| io_failure(path, e))?;
    write_atomic(path, |f| f.write_all(text.as_bytes()))
}

struct Loaded {
    cfg: RunConfig,
    base: PathBuf,
    run: Scenario,
}

fn load(path: &Path) -> Result<Loaded, Failure> {
    let cfg = config::load(path)?;
    let run = cfg.resolve().map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { cfg, base, run })
}

fn print_report(r: &SynthesisReport) {
    let [g1, g2, g3] = r.gamma_stars;
    println!("eps = {:.6} (sup {:.6})", r.epsilon, r.authority.epsilon_sup);
    println!("gamma* = [{g1:.6}, {g2:.6}, {g3:.6}]");
    println!("delta* = {:.6}", r.delta_star);
    println!("nu in [{:.6e}, {:.6e}]", r.nu_interval[0], r.nu_interval[1]);
    println!("eta* = {:.6e}", r.eta_star);
    let c = &r.chosen;
    println!("chosen: gamma = {:.6}, delta = {:.6}, nu = {:.6e}, eta_bar = {:.6}", c.gamma, c.delta, c.nu, c.eta_bar);
    if let Some(s) = r.sampling_check {
        println!(
            "sampling: eta({}) = {:.6}, largest period with eta(T) <= eta_bar: {:.6e} s{}",
            s.period,
            s.eta_of_period,
            s.t_max,
            if s.admissible { "" } else { " (requested period not certified)" }
        );
    }
}

fn cmd_synth(path: &Path) -> Result<u8, Failure> {
    let l = load(path)?;
    let report = l.run.synthesize()?;
    let out = l.cfg.report_path(&l.base, &l.run.id);
    write_yaml(&out, &report)?;
    print_report(&report);
    println!("report: {}", out.display());
    Ok(0)
}

fn barrier_params(l: &Loaded) -> Result<(BarrierConfig, Option<SamplingConstants>, Option<SynthesisReport>), Failure> {
    match l.cfg.params(&l.base, &l.run.id)? {
        ParamSource::Explicit(cfg, sampling) => Ok((cfg, sampling, None)),
        ParamSource::Report(p, r) => {
            println!("parameters: {}", p.display());
            Ok((r.chosen.clone(), Some(r.sampling), Some(*r)))
        }
        ParamSource::Missing(p) => Err(Failure {
            code: EXIT_PARSE,
            message: format!(
                "no barrier parameters: {} does not exist; run `elsg synth -c <config>` first or set params.barrier",
                p.display()
            ),
        }),
    }
}

#[derive(Serialize)]
struct TraceFile<'a> {
    meta: &'a elsg_core::sim::TraceMeta,
    summary: &'a elsg_core::sim::SimSummary,
}

fn write_plots(trace: &SimTrace, spec: &ConstraintSpec, stem: &Path) -> Result<Vec<PathBuf>, Failure> {
    let t: Vec<f64> = trace.records.iter().map(|r| r.t).collect();
    let n = spec.dof();
    let m = spec.u_max.len();
    let pick = |f: &dyn Fn(&elsg_core::sim::TickRecord) -> f64| trace.records.iter().map(f).collect::<Vec<f64>>();
    let mut written = Vec::new();
    let plots: [(&str, &str, usize, Vec<f64>); 3] = [
        ("q", "position", n, spec.q_min.iter().chain(&spec.q_max).copied().collect()),
        ("v", "velocity", n, spec.v_max.iter().flat_map(|v| [-v, *v]).collect()),
        ("u", "input", m, spec.u_max.iter().flat_map(|u| [-u, *u]).collect()),
    ];
    for (name, label, count, bounds) in plots {
        let series: Vec<svg::Series> = (0..count)
            .map(|i| svg::Series {
                label: format!("{name}{}", i + 1),
                values: match name {
                    "q" => pick(&|r| r.q[i]),
                    "v" => pick(&|r| r.v[i]),
                    _ => pick(&|r| r.u[i]),
                },
            })
            .collect();
        let text = svg::line_chart(&format!("{} {}", trace.meta.scenario, name), label, &t, &series, &bounds);
        let path = PathBuf::from(format!("{}.{name}.svg", stem.display()));
        write_atomic(&path, |f| f.write_all(text.as_bytes()))?;
        written.push(path);
    }
    Ok(written)
}

fn cmd_simulate(path: &Path, plots: bool, mode: Option<ControllerMode>) -> Result<u8, Failure> {
    let l = load(path)?;
    let settings = SimSettings { mode: mode.unwrap_or(l.run.settings.mode), ..l.run.settings.clone() };
    let (cfg, sampling) = if settings.mode == ControllerMode::NominalOnly {
        (None, None)
    } else {
        let (c, s, _) = barrier_params(&l)?;
        (Some(c), s)
    };
    let trace = l.run.simulate(cfg.as_ref(), sampling.as_ref(), Some(&settings))?;
    let stem = l.cfg.output_dir(&l.base).join(format!("{}.{}", l.run.id, settings.mode.as_str()));
    let csv_path = PathBuf::from(format!("{}.csv", stem.display()));
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    write_atomic(&csv_path, |f| f.write_all(&buf))?;
    let summary_path = PathBuf::from(format!("{}.summary.yaml", stem.display()));
    write_yaml(&summary_path, &TraceFile { meta: &trace.meta, summary: &trace.summary })?;
    println!("trace: {}", csv_path.display());
    if plots {
        for p in write_plots(&trace, &l.run.spec, &stem)? {
            println!("plot: {}", p.display());
        }
    }
    let s = &trace.summary;
    println!(
        "{} ticks; worst violations q {:.3e}, v {:.3e}, u {:.3e}; {} flagged substeps, {} outside H^delta, {} fallbacks",
        trace.records.len(),
        s.worst.q,
        s.worst.v,
        s.worst.u,
        s.flagged_substeps,
        s.outside_substeps,
        s.fallbacks
    );
    if let (ControllerMode::ZcbfSampled, Some(eta_t), false) = (settings.mode, trace.meta.eta_of_period, trace.meta.certified) {
        println!(
            "note: margin eta = {} is below the certified eta(T) = {eta_t:.6}; the run is not covered by the sampling bound",
            trace.meta.eta_used
        );
    }
    if let Some(a) = &s.aborted {
        eprintln!("error: integration aborted: {a}");
    }
    let unsafe_run = s.failed || s.flagged_substeps > 0 || s.aborted.is_some();
    if settings.mode != ControllerMode::NominalOnly && unsafe_run {
        eprintln!("error: safety violation in a filtered run");
        return Ok(EXIT_SAFETY);
    }
    Ok(0)
}

fn cmd_verify(path: &Path, grid: usize, samples: usize) -> Result<u8, Failure> {
    let l = load(path)?;
    let (cfg, _, report) = barrier_params(&l)?;
    let model = l.run.model.build()?;
    let opts = SuiteOptions { per_joint: grid, samples, ..SuiteOptions::default() };
    let period = (l.run.settings.mode == ControllerMode::ZcbfSampled).then_some(l.run.settings.period);
    let results = run_suite(&model, &l.run.spec, &cfg, report.as_ref(), period, &opts)?;
    for r in &results {
        println!("{r}");
    }
    let out = l.cfg.output_dir(&l.base).join(format!("{}.verify.yaml", l.run.id));
    write_yaml(&out, &results)?;
    println!("results: {}", out.display());
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        eprintln!("error: {failed} of {} properties failed", results.len());
        return Ok(EXIT_PROPERTY);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_PARSE } else { 0 });
        }
    };
    if let Some(n) = cli.threads.filter(|n| *n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Synth { config } => cmd_synth(config),
        Command::Simulate { config, plots, mode } => cmd_simulate(config, *plots, *mode),
        Command::Verify { config, grid, samples } => cmd_verify(config, *grid, *samples),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
