use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use gravlab::experiments::{run, Mode, ResultRecord, ScenarioConfig};

#[derive(Parser, Debug)]
#[command(name = "gravlab", version, about = "Error-mitigated lattice gravimetry scenarios")]
struct Cli {
    /// scaling-scan, mode-scan, pulse-fmin, echo-infer or haar-validate
    mode: Mode,
    /// JSON scenario file
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overrides the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; the JSON sidecar is written next to it
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(cli: &Cli) -> gravlab::Result<ResultRecord> {
    let mut config = ScenarioConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output = Some(out.clone());
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.threads {
        pool = pool.num_threads(k);
    }
    let pool = pool
        .build()
        .map_err(|e| gravlab::Error::InvalidArgument(e.to_string()))?;
    let record = pool.install(|| run(cli.mode, &config))?;
    match &config.output {
        Some(path) => record.save(path)?,
        None => record.write_csv(std::io::stdout().lock())?,
    }
    Ok(record)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(record) => {
            for c in &record.checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                eprintln!("{tag} {}: {} (target {})", c.name, c.value, c.target);
            }
            for n in &record.notices {
                eprintln!("note: {n}");
            }
            eprintln!("{} finished in {:.2}s", record.mode, record.elapsed_seconds);
            if record.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
