//! `tsgan`: synthesize data, train progressive WGANs, evaluate and inspect.

mod commands;
mod manifest;
mod plots;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tsgan_core::Error;

#[derive(Parser)]
#[command(
    name = "tsgan",
    version,
    about = "Progressive Wasserstein GANs for 1-D signals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a labeled synthetic two-class dataset.
    Synth(commands::SynthArgs),
    /// Train a progressive GAN.
    Train(commands::TrainArgs),
    /// Train the surrogate classifier used for IS and FID.
    Classifier(commands::ClassifierArgs),
    /// Compare generated (or given) signals against real data.
    Eval(commands::EvalArgs),
    /// Train critics alone on two 1-D Gaussians.
    Criticlab(commands::CriticlabArgs),
    /// Mean spectra or the resampling aliasing experiment.
    Spectra(commands::SpectraArgs),
    /// Sample signals from a checkpoint's generator.
    Generate(commands::GenerateArgs),
}

/// Exit codes: 2 argument error, 3 data error, 4 numeric failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::InvalidArgument(_) => 2,
                Error::NonFinite { .. } | Error::Numeric(_) | Error::Gradient(_) => 4,
                Error::Shape { .. } | Error::Data(_) | Error::Format { .. } | Error::Io(_) => 3,
            };
        }
    }
    3
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("TSG_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            Error::InvalidArgument(format!("TSG_THREADS must be a count, got `{v}`"))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Classifier(a) => commands::classifier(a),
        Command::Eval(a) => commands::eval(a),
        Command::Criticlab(a) => commands::criticlab(a),
        Command::Spectra(a) => commands::spectra(a),
        Command::Generate(a) => commands::generate(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
