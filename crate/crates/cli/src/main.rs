use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualseg_cli::run_config::{build, load_file, KEYS};
use dualseg_cli::{exit_code, run, Command};

#[derive(Parser)]
#[command(name = "dualseg", version, about = "Dual-branch spectral/SAR segmentation: data, training and experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (`[section]` / `key = value`).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic patches and a manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train and write a checkpoint and loss log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Predict a label file for one patch.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        patch: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report parameter and FLOP counts per module.
    Count {
        #[command(flatten)]
        common: Common,
        /// desk or full
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
    },
    /// Finite-difference gradient checks of ops, modules and the network.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Component and channel-split ablation table.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// List every configuration key with its default.
    Keys,
}

fn pair(key: &str, v: impl ToString) -> (String, String) {
    (key.to_owned(), v.to_string())
}

fn path_pair(key: &str, p: Option<PathBuf>) -> Option<(String, String)> {
    p.map(|p| pair(key, p.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common, flags): (Command, Common, Vec<Option<(String, String)>>) = match cli.cmd {
        Cmd::Keys => {
            for (k, doc) in KEYS {
                println!("{k}: {doc}");
            }
            return ExitCode::SUCCESS;
        }
        Cmd::Synth { common, out, count, size } => (
            Command::Synth,
            common,
            vec![
                path_pair("data.dir", out),
                count.map(|v| pair("data.count", v)),
                size.map(|v| pair("data.size", v)),
            ],
        ),
        Cmd::Train { common, manifest, out, epochs } => (
            Command::Train,
            common,
            vec![
                path_pair("data.manifest", manifest),
                path_pair("train.out", out),
                epochs.map(|v| pair("train.epochs", v)),
            ],
        ),
        Cmd::Eval { common, checkpoint, manifest } => (
            Command::Eval,
            common,
            vec![path_pair("eval.checkpoint", checkpoint), path_pair("data.eval_manifest", manifest)],
        ),
        Cmd::Infer { common, checkpoint, patch, out } => (
            Command::Infer,
            common,
            vec![
                path_pair("eval.checkpoint", checkpoint),
                path_pair("infer.patch", patch),
                path_pair("infer.out", out),
            ],
        ),
        Cmd::Count { common, preset, height, width } => (
            Command::Count,
            common,
            vec![
                preset.map(|v| pair("model.preset", v)),
                height.map(|v| pair("count.height", v)),
                width.map(|v| pair("count.width", v)),
            ],
        ),
        Cmd::Gradcheck { common } => (Command::Gradcheck, common, vec![]),
        Cmd::Ablate { common } => (Command::Ablate, common, vec![]),
    };

    let result = (|| {
        let file = match &common.config {
            Some(p) => load_file(p)?,
            None => Vec::new(),
        };
        let mut overrides = Vec::new();
        for s in &common.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| dualseg_core::Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
            overrides.push(pair(k.trim(), v.trim()));
        }
        overrides.extend(common.seed.map(|s| pair("run.seed", s)));
        overrides.extend(flags.into_iter().flatten());
        let cfg = build(&file, &overrides)?;
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        run(cmd, &cfg, &mut lock)?;
        lock.flush().map_err(|e| dualseg_core::Error::io("<stdout>", e))
    })();

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
