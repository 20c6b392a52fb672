use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use agmh::config::{parse_entries, parse_override, Entry};
use agmh::{run, Error, Result, RunConfig};
use clap::{Args, Parser, Subcommand};

/// Attribute grouping and mining hashing on synthetic fine-grained data.
#[derive(Parser)]
#[command(name = "agmh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature file.
    Synth(Common),
    /// Train one model per (variant, code length) on the retrieval split.
    Train(Common),
    /// mAP and precision@k of every trained model and a random baseline.
    Eval(Common),
    /// Top-k neighbours of one item.
    Query(Common),
    /// Write the attention maps of one item as PGM images.
    ExportAttn(Common),
    /// Encode-and-rank timing at batch sizes 1, 4, 16, 64.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// key = value config file.
    #[arg(long, visible_alias = "spec")]
    config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output location: the feature file for `synth`, `out_dir` otherwise.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    features: Option<String>,
    /// on | off
    #[arg(long)]
    adl: Option<String>,
    /// on | off
    #[arg(long)]
    siea: Option<String>,
    /// Comma-separated code lengths.
    #[arg(long)]
    bits: Option<String>,
    /// Comma-separated list of base, adl, adl_siea.
    #[arg(long)]
    variants: Option<String>,
    /// Training and data seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    item: Option<u64>,
    /// Number of results (top_k).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
}

impl Common {
    fn resolve(&self, synth: bool) -> Result<RunConfig> {
        let file = match &self.config {
            None => Vec::new(),
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    if e.kind() == io::ErrorKind::NotFound {
                        Error::Usage(format!("config file not found: {}", path.display()))
                    } else {
                        Error::Io { path: path.clone(), source: e }
                    }
                })?;
                parse_entries(&text)?
            }
        };
        let mut overrides = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
        let mut flag = |key: &str, value: Option<String>| {
            if let Some(value) = value {
                overrides.push(Entry { key: key.into(), value, line: 0 });
            }
        };
        flag(if synth { "features" } else { "out_dir" }, self.out.clone());
        flag("features", self.features.clone());
        flag("adl", self.adl.clone());
        flag("siea", self.siea.clone());
        flag("bits", self.bits.clone());
        flag("variants", self.variants.clone());
        flag("seed", self.seed.map(|s| s.to_string()));
        flag("data_seed", self.seed.map(|s| s.to_string()));
        flag("item", self.item.map(|s| s.to_string()));
        flag("top_k", self.k.map(|s| s.to_string()));
        flag("repeats", self.repeats.map(|s| s.to_string()));
        RunConfig::resolve(&file, &overrides)
    }
}

fn execute(cli: Cli, log: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth(c) => run::synth(&c.resolve(true)?, log),
        Command::Train(c) => run::train(&c.resolve(false)?, log),
        Command::Eval(c) => run::eval(&c.resolve(false)?, log).map(drop),
        Command::Query(c) => run::query(&c.resolve(false)?, log).map(drop),
        Command::ExportAttn(c) => run::export_attn(&c.resolve(false)?, log).map(drop),
        Command::Bench(c) => run::bench(&c.resolve(false)?, log).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut log = stdout.lock();
    match execute(cli, &mut log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = log.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
