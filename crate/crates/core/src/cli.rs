//! Command-line front end. Exit codes: 0 success, 1 usage or validation error, 2 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{read_config, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::{gamma_conv, quant_curve};
use crate::io::{mesh_to_varifold, read_mesh, read_varifold, write_json, write_trajectory, write_varifold};
use crate::quantization::{quantize, BoxSpec, QuantizeConfig, QuantizeSummary, DEFAULT_RESTARTS};
use crate::registration::{register, RegistrationSummary};
use crate::varifold::inner_triple;

pub const THREADS_ENV: &str = "VARIMATCH_THREADS";

#[derive(Parser, Debug)]
#[command(name = "varimatch", version, about = "Oriented varifold distances, quantization and registration")]
struct Cli {
    /// Worker threads (default: VARIMATCH_THREADS, else all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the kernel distance and inner product of two varifolds
    Dist {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Approximate a varifold by at most N Diracs
    Quantize {
        target: PathBuf,
        #[arg(short = 'N', long = "atoms")]
        atoms: usize,
        #[arg(long, default_value_t = DEFAULT_RESTARTS)]
        restarts: usize,
        /// `auto` or `x0,y0,...:x1,y1,...`
        #[arg(long = "box", allow_hyphen_values = true)]
        bbox: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short = 'o', long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Register a source varifold onto a target by geodesic shooting
    Register {
        source: PathBuf,
        target: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for deformed.json, trajectory.json and report.json
        #[arg(short = 'o', long)]
        output: PathBuf,
    },
    /// Convert an OBJ triangle mesh or CSV polyline into a varifold file
    Convert {
        mesh: PathBuf,
        #[arg(short = 'o', long)]
        output: PathBuf,
    },
    /// Run a study and write its CSV
    #[command(subcommand)]
    Experiment(Experiment),
}

#[derive(Subcommand, Debug)]
enum Experiment {
    /// Quantization error against subsampling, per N
    QuantCurve {
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        common: StudyArgs,
    },
    /// Registration energy gaps of reduced sources, per N
    GammaConv {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        common: StudyArgs,
    },
}

#[derive(Args, Debug)]
struct StudyArgs {
    /// Comma-separated atom counts
    #[arg(long, value_delimiter = ',', required = true)]
    ns: Vec<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(short = 'o', long)]
    output: PathBuf,
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => read_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_box(text: &str) -> Result<BoxSpec> {
    if text == "auto" {
        return Ok(BoxSpec::auto());
    }
    let bad = || Error::Validation(format!("box must be `auto` or `lo,...:hi,...`, got `{text}`"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    let parse = |s: &str| -> Result<Vec<f64>> { s.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| bad())).collect() };
    Ok(BoxSpec::Explicit { lower: parse(lo)?, upper: parse(hi)? })
}

fn quantize_config(cfg: &RunConfig, restarts: usize, seed: Option<u64>) -> QuantizeConfig {
    let mut q = QuantizeConfig::new(1);
    q.restarts = restarts;
    q.seed = seed.unwrap_or(cfg.seed);
    q.optimizer = cfg.optimizer.lbfgs();
    q
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

#[derive(Serialize)]
struct RegisterReportFile<'a> {
    #[serde(flatten)]
    summary: RegistrationSummary,
    p0: &'a [f64],
}

#[derive(Serialize)]
struct QuantizeReportFile {
    #[serde(flatten)]
    summary: QuantizeSummary,
    seed: u64,
}

fn execute(command: Command, out: &mut dyn std::io::Write) -> Result<()> {
    match command {
        Command::Dist { a, b, config } => {
            let cfg = load_config(&config)?;
            let (a, b) = (read_varifold(a)?, read_varifold(b)?);
            let (aa, ab, bb) = inner_triple(&a, &b, &cfg.varifold_kernel()?)?;
            let dist = (aa - 2.0 * ab + bb).max(0.0).sqrt();
            writeln!(out, "distance {dist:e}\ninner {ab:e}").expect("stdout");
        }
        Command::Quantize { target, atoms, restarts, bbox, config, seed, output, report } => {
            let cfg = load_config(&config)?;
            let tar = read_varifold(target)?;
            let mut q = quantize_config(&cfg, restarts, seed);
            q.atoms = atoms;
            q.bbox = bbox.as_deref().map(parse_box).transpose()?;
            let rep = quantize(&tar, &q, &cfg.varifold_kernel()?)?;
            write_varifold(&rep.result, &output)?;
            if let Some(path) = report {
                write_json(&QuantizeReportFile { summary: rep.summary(), seed: q.seed }, path)?;
            }
            writeln!(out, "atoms {}\nrel_error {:e}\nstationarity_gap {:e}", rep.result.len(), rep.rel_error, rep.stationarity_gap)
                .expect("stdout");
        }
        Command::Register { source, target, config, output } => {
            let cfg = load_config(&config)?.registration()?;
            let (src, tar) = (read_varifold(source)?, read_varifold(target)?);
            let rep = register(&src, &tar, &cfg)?;
            fs::create_dir_all(&output).map_err(|source| Error::Io { path: output.clone(), source })?;
            write_varifold(&rep.deformed, output.join("deformed.json"))?;
            write_trajectory(&rep.trajectory, output.join("trajectory.json"))?;
            write_json(&RegisterReportFile { summary: rep.summary(), p0: &rep.p0 }, output.join("report.json"))?;
            writeln!(out, "energy {:e}\ngrad_norm {:e}\nstatus {:?}", rep.energy, rep.grad_norm, rep.status).expect("stdout");
        }
        Command::Convert { mesh, output } => {
            let mu = mesh_to_varifold(&read_mesh(mesh)?)?;
            write_varifold(&mu, &output)?;
            writeln!(out, "atoms {}", mu.len()).expect("stdout");
        }
        Command::Experiment(Experiment::QuantCurve { target, common }) => {
            let cfg = load_config(&common.config)?;
            let tar = read_varifold(target)?;
            let res = quant_curve(&tar, &common.ns, &cfg.varifold_kernel()?, &quantize_config(&cfg, common.restarts, None))?;
            write_text(&common.output, &res.to_csv())?;
        }
        Command::Experiment(Experiment::GammaConv { source, target, common }) => {
            let cfg = load_config(&common.config)?;
            let (src, tar) = (read_varifold(source)?, read_varifold(target)?);
            let res = gamma_conv(&src, &tar, &common.ns, &cfg.registration()?, &quantize_config(&cfg, common.restarts, None))?;
            write_text(&common.output, &res.to_csv())?;
        }
    }
    Ok(())
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(t) = flag {
        return Ok(Some(t));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Validation(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        _ => Ok(None),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = thread_count(cli.threads).and_then(|threads| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = threads {
            if t == 0 {
                return Err(Error::Validation("thread count must be positive".into()));
            }
            builder = builder.num_threads(t);
        }
        let pool = builder.build().map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
        let stdout = std::io::stdout();
        pool.install(|| execute(cli.command, &mut stdout.lock()))
    });
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() { 2 } else { 1 }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_syntax() {
        assert_eq!(parse_box("auto").unwrap(), BoxSpec::auto());
        assert_eq!(
            parse_box("0,1:2,3").unwrap(),
            BoxSpec::Explicit { lower: vec![0.0, 1.0], upper: vec![2.0, 3.0] }
        );
        assert!(parse_box("0,1").is_err());
        assert!(parse_box("a:b").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["varimatch", "frobnicate"]), 1);
        assert_eq!(run(["varimatch", "dist", "--bogus"]), 1);
        assert_eq!(run(["varimatch", "--help"]), 0);
    }
}
