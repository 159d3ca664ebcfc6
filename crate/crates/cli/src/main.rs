//! `superbunch` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 fit did not converge.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use superbunch::config::RunConfig;
use superbunch::plot::{gnuplot_script, read_series};
use superbunch::run::{self, Analysis};
use superbunch::Error;

#[derive(Parser, Debug)]
#[command(
    name = "superbunch",
    version,
    about = "Simulate and analyze superbunching pseudothermal light"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Photon timestamp file format.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Binary,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run signal, speckle, detection, correlation and fit; write all artifacts.
    Simulate,
    /// Correlate and fit a recorded photon file.
    Analyze {
        /// Photon file (`.bin` for binary, otherwise text).
        photons: PathBuf,
    },
    /// Run the config's [sweep] and write sweep.csv plus one directory per point.
    Sweep,
    /// Write a gnuplot script overlaying a g2 CSV and an optional theory CSV.
    Plot {
        g2: PathBuf,
        theory: Option<PathBuf>,
        /// Script path (default: plot.gp beside the g2 CSV).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Resolution(_) => 2,
        Error::Numerical(_) => 4,
        Error::Domain(_) | Error::Degenerate(_) | Error::Parse { .. } | Error::Io(_) => 3,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config {
        field: "--config".into(),
        message: "this command needs a config file".into(),
    })?;
    let mut cfg = RunConfig::load(path)?;
    apply_overrides(cli, &mut cfg);
    Ok(cfg)
}

fn apply_overrides(cli: &Cli, cfg: &mut RunConfig) {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let mut out = cfg.output();
    if let Some(dir) = &cli.out {
        out.dir = dir.clone();
    }
    if let Some(f) = cli.format {
        out.format = match f {
            Format::Text => "text",
            Format::Binary => "binary",
        }
        .into();
    }
    cfg.output = Some(out);
}

fn report(a: &Analysis, dir: &Path) -> Result<(), Error> {
    println!(
        "g2(0) = {:.4} +/- {:.4}  ({} coincidences) -> {}",
        a.zero_lag.value,
        a.zero_lag.stderr,
        a.histogram.total(),
        dir.display()
    );
    if let Some(fit) = &a.fit {
        println!(
            "fit {}: g2(0) = {:.4} +/- {:.4}",
            fit.model.name(),
            fit.g2_zero,
            fit.g2_zero_sigma
        );
    }
    if !a.converged() {
        return Err(Error::Numerical(
            "fit did not converge; parameters in fit.txt are unreliable".into(),
        ));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Simulate => {
            let cfg = load_config(cli)?;
            let dir = cfg.output().dir;
            let sim = run::simulate_to_dir(&cfg, &dir)?;
            report(&sim.analysis, &dir)
        }
        Command::Analyze { photons } => {
            let mut cfg = match (&cli.config, run::sibling_manifest(photons)) {
                (Some(_), _) => load_config(cli)?,
                (None, Some(m)) => {
                    let mut cfg = RunConfig::load(&m)?;
                    apply_overrides(cli, &mut cfg);
                    cfg
                }
                (None, None) => {
                    return Err(Error::Config {
                        field: "--config".into(),
                        message: "no config given and no manifest.toml beside the photon file".into(),
                    })
                }
            };
            if run::manifest_duration_ns(&cfg).is_none() {
                if let Some(m) = run::sibling_manifest(photons) {
                    cfg.provenance = RunConfig::load(&m)?.provenance;
                }
            }
            let dir = cli
                .out
                .clone()
                .unwrap_or_else(|| photons.parent().unwrap_or(Path::new(".")).join("analysis"));
            let analysis = run::analyze_file(photons, &cfg)?;
            run::write_analysis(&analysis, cfg.seed, &dir)?;
            report(&analysis, &dir)
        }
        Command::Sweep => {
            let path = cli.config.as_ref().ok_or_else(|| Error::Config {
                field: "--config".into(),
                message: "sweep needs a config file".into(),
            })?;
            let text = std::fs::read_to_string(path)?;
            let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
                field: "config".into(),
                message: e.to_string(),
            })?;
            let mut cfg = RunConfig::from_table(table.clone())?;
            apply_overrides(cli, &mut cfg);
            if let Some(f) = cli.format {
                let mut out = toml::Table::new();
                out.insert("format".into(), format!("{f:?}").to_lowercase().into());
                if let Some(toml::Value::Table(existing)) = table.get("output") {
                    for (k, v) in existing {
                        out.entry(k.clone()).or_insert_with(|| v.clone());
                    }
                }
                table.insert("output".into(), toml::Value::Table(out));
            }
            let dir = cfg.output().dir;
            let rows = run::sweep(&table, cfg.seed, &dir)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            println!(
                "{} points, {failed} failed -> {}",
                rows.len(),
                dir.join("sweep.csv").display()
            );
            Ok(())
        }
        Command::Plot { g2, theory, output } => {
            let data = read_series(g2)?;
            let theory = theory.as_deref().map(read_series).transpose()?;
            let path = output
                .clone()
                .unwrap_or_else(|| g2.parent().unwrap_or(Path::new(".")).join("plot.gp"));
            std::fs::write(&path, gnuplot_script(&data, theory.as_ref()))?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
