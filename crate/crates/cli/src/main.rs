use std::path::PathBuf;
use std::io::IsTerminal;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use h2r_cli::config::{resolve_path, CONFIG_ENV};
use h2r_cli::{run, Command, Outcome, RunConfig};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "h2r", version, about = "Human-to-robot video translation pipeline")]
struct Cli {
    /// Run config (.toml or .json)
    #[arg(long, short, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.steps=50`
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Skip stages already complete for this config; continue interrupted training
    #[arg(long, global = true)]
    resume: bool,
    /// Override `seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override `out_dir`
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render robot and human-proxy scenes
    GenData,
    /// Build the paired dataset manifest from rendered robot clips
    BuildPairs,
    /// Train the generator
    Train {
        /// `full` or `lora-only`
        #[arg(long)]
        mode: Option<String>,
        /// Initialize from this checkpoint
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Translate human videos into generated robot videos
    Translate {
        /// Frame directory (00000.png, 00001.png, ...) of a raw video
        #[arg(long)]
        input: Option<PathBuf>,
        /// Frame rate of --input
        #[arg(long)]
        input_fps: Option<f64>,
        /// Feed the input as is (frame count must be 1 mod 4)
        #[arg(long)]
        no_preprocess: bool,
    },
    /// Score translations and reconstructions
    Eval,
    /// gen-data, build-pairs, train, translate and eval in sequence
    Pipeline,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    let mut overrides = cli.set.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = &cli.out {
        overrides.push(format!("out_dir={}", o.display()));
    }
    let command = match &cli.command {
        Cmd::GenData => Command::GenData,
        Cmd::BuildPairs => Command::BuildPairs,
        Cmd::Train { mode, base } => {
            if let Some(m) = mode {
                overrides.push(format!("train.mode={m}"));
            }
            if let Some(b) = base {
                overrides.push(format!("base_checkpoint={}", b.display()));
            }
            Command::Train
        }
        Cmd::Translate { input, input_fps, no_preprocess } => {
            if let Some(i) = input {
                overrides.push(format!("translate.input={}", i.display()));
            }
            if let Some(f) = input_fps {
                overrides.push(format!("translate.input_fps={f}"));
            }
            if *no_preprocess {
                overrides.push("translate.preprocess=false".into());
            }
            Command::Translate
        }
        Cmd::Eval => Command::Eval,
        Cmd::Pipeline => Command::Pipeline,
    };
    let result = RunConfig::load(resolve_path(cli.config).as_deref(), &overrides).and_then(|cfg| run(&cfg, command, cli.resume));
    match result {
        Ok(stages) => {
            for (c, o) in stages {
                let what = if o == Outcome::Skipped { "skipped (complete)" } else { "done" };
                println!("{}: {what}", c.name());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
