use std::fmt;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dfx_core::cluster::{emit_programs, run_generation, run_timing, ClusterConfig, RunOptions, RunStats, CSV_COLUMNS};
use dfx_core::codegen::CodegenOptions;
use dfx_core::isa::format;
use dfx_core::memory::file;
use dfx_core::model::{GPTConfig, ModelWeights, TokenSeq};

mod overrides;

use overrides::Overrides;

#[derive(Parser)]
#[command(name = "dfx", version, about = "Multi-device GPT-2 appliance simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write seeded random FP16 weights.
    Genweights(GenArgs),
    /// Generate tokens on a simulated cluster.
    Run(RunArgs),
    /// Modeled throughput over a grid of (n_in, n_out, n_cores).
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Preset (345M, 774M, 1.5B, tiny, tiny4) or `emb=..,n_head=..,n_layer=..,vocab=..`.
    #[arg(long, default_value = "tiny")]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of the normal initializer.
    #[arg(long, default_value_t = 0.02)]
    std: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = 1)]
    cores: usize,
    /// Comma-separated token ids.
    #[arg(long)]
    input_ids: String,
    #[arg(long)]
    n_out: usize,
    /// Directory for per-core assembly (`core<i>.asm`).
    #[arg(long)]
    emit_asm: Option<PathBuf>,
    /// CSV file for the run's statistics.
    #[arg(long)]
    stats_out: Option<PathBuf>,
    /// TOML file overriding hardware constants.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Step cores one after another instead of on a thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Model shape for cycle-only runs.
    #[arg(long, default_value = "345M")]
    model: String,
    /// Run functionally on these weights instead of cycle-only.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Seed for the input tokens of functional runs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Points as `n_in:n_out:n_cores`, comma-separated.
    #[arg(long)]
    grid: String,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// A path the user named does not exist. Exit code 2.
#[derive(Debug)]
struct MissingFile(PathBuf);

impl fmt::Display for MissingFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no such file: {}", self.0.display())
    }
}

impl std::error::Error for MissingFile {}

fn existing(p: &Path) -> Result<&Path> {
    if !p.exists() {
        return Err(MissingFile(p.to_path_buf()).into());
    }
    Ok(p)
}

fn cluster_config(model: GPTConfig, cores: usize, config: Option<&Path>) -> Result<ClusterConfig> {
    let mut c = ClusterConfig::new(model, cores);
    if let Some(p) = config {
        Overrides::load(existing(p)?)?.apply(&mut c);
    }
    c.validate()?;
    Ok(c)
}

fn parse_ids(s: &str, vocab: usize) -> Result<TokenSeq> {
    let ids = s
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u32>().with_context(|| format!("bad token id {t:?}")))
        .collect::<Result<Vec<_>>>()?;
    if ids.is_empty() {
        bail!("--input-ids is empty");
    }
    Ok(TokenSeq::new(ids, vocab)?)
}

fn parse_grid(s: &str) -> Result<Vec<(usize, usize, usize)>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let f: Vec<usize> = t
                .trim()
                .split(':')
                .map(|x| x.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("bad grid point {t:?}"))?;
            match f[..] {
                [a, b, c] => Ok((a, b, c)),
                _ => bail!("grid point {t:?} is not n_in:n_out:n_cores"),
            }
        })
        .collect()
}

fn genweights(a: &GenArgs) -> Result<()> {
    let cfg = GPTConfig::for_name(&a.model)?;
    cfg.validate()?;
    if !(a.std.is_finite() && a.std > 0.0) {
        bail!("--std must be positive, got {}", a.std);
    }
    let w = ModelWeights::random(cfg, a.seed, a.std)?;
    file::save(&a.out, &w).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} ({} parameters)", a.out.display(), cfg.param_count());
    Ok(())
}

fn write_stats(path: &Path, runs: &[RunStats]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    RunStats::write_csv(f, runs)?;
    Ok(())
}

fn run(a: &RunArgs) -> Result<()> {
    let w = file::load(existing(&a.weights)?).with_context(|| format!("loading {}", a.weights.display()))?;
    let c = cluster_config(w.cfg, a.cores, a.config.as_deref())?;
    let input = parse_ids(&a.input_ids, w.cfg.vocab)?;
    if let Some(dir) = &a.emit_asm {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, p) in emit_programs(&c, input.len(), a.n_out, &CodegenOptions::default())?.iter().enumerate() {
            let path = dir.join(format!("core{i}.asm"));
            std::fs::write(&path, format(p)).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    let opts = RunOptions { parallel: !a.sequential, ..Default::default() };
    let out = run_generation(&c, &w, &input, a.n_out, opts)?;
    let ids: Vec<String> = out.tokens.ids().iter().map(u32::to_string).collect();
    println!("{}", ids.join(" "));
    eprint!("{}", out.stats.table());
    if let Some(p) = &a.stats_out {
        write_stats(p, &[out.stats])?;
    }
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let grid = parse_grid(&a.grid)?;
    let weights = match &a.weights {
        Some(p) => Some(file::load(existing(p)?).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let model = match &weights {
        Some(w) => w.cfg,
        None => GPTConfig::for_name(&a.model)?,
    };
    let overrides = match &a.config {
        Some(p) => Overrides::load(existing(p)?)?,
        None => Overrides::default(),
    };
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("writing {}", p.display()))?),
        None => Box::new(io::stdout()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    csv.write_record(CSV_COLUMNS)?;
    csv.flush()?;
    for &(n_in, n_out, n_cores) in &grid {
        let point = || -> Result<RunStats> {
            let mut c = ClusterConfig::new(model, n_cores);
            overrides.apply(&mut c);
            c.validate()?;
            match &weights {
                Some(w) => {
                    let ids = (0..n_in as u64)
                        .map(|i| {
                            ((a.seed.wrapping_mul(0x9E37_79B9).wrapping_add(i * 7919)) % model.vocab as u64) as u32
                        })
                        .collect();
                    let input = TokenSeq::new(ids, model.vocab)?;
                    Ok(run_generation(&c, w, &input, n_out, RunOptions { parallel: true, ..Default::default() })?.stats)
                }
                None => Ok(run_timing(&c, n_in, n_out, RunOptions { parallel: true, ..Default::default() })?),
            }
        };
        match point() {
            Ok(s) => {
                csv.write_record(s.csv_record())?;
                csv.flush()?;
            }
            Err(e) => {
                let mut row = vec!["error".to_string(), n_in.to_string(), n_out.to_string(), n_cores.to_string()];
                row.resize(CSV_COLUMNS.len(), String::new());
                csv.write_record(&row)?;
                csv.flush()?;
                return Err(e.context(format!("grid point {n_in}:{n_out}:{n_cores}")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Genweights(a) => genweights(a),
        Cmd::Run(a) => run(a),
        Cmd::Sweep(a) => sweep(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<MissingFile>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
