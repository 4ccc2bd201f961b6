//! Library side of the `dualseg` command-line tool: run configuration and
//! the command implementations, so tests can drive them in-process.

pub mod commands;
pub mod run_config;

use std::io::Write;

use dualseg_core::{Error, Result};
use dualseg_tensor::TensorError;

pub use run_config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Eval,
    Infer,
    Count,
    Gradcheck,
    Ablate,
}

pub fn run(cmd: Command, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Synth => commands::synth(cfg, out),
        Command::Train => commands::train(cfg, out),
        Command::Eval => commands::eval(cfg, out),
        Command::Infer => commands::infer(cfg, out),
        Command::Count => commands::count_cmd(cfg, out),
        Command::Gradcheck => commands::gradcheck(cfg, out),
        Command::Ablate => commands::ablate(cfg, out),
    }
}

/// 2 configuration, 3 data, format or IO, 4 numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Format { .. } | Error::Io { .. } => 3,
        Error::Numerical(_) => 4,
        Error::Tensor(t) => match t {
            TensorError::Io(_) | TensorError::Format { .. } => 3,
            _ => 2,
        },
    }
}
