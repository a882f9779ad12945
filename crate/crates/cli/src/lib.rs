//! Command-line front end for thin-plate-spline undistortion.

// Negated comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod io;
pub mod manifest;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "tpsu", version, about = "Thin-plate-spline image undistortion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic distorted dataset from clean images.
    GenDataset(commands::GenDatasetArgs),
    /// Estimate and apply the undistortion of one image.
    Undistort(commands::UndistortArgs),
    /// Pooled residual distortion between estimated and true grids.
    Eval(commands::EvalArgs),
    /// Distort one image with a given control-point file.
    Distort(commands::DistortArgs),
}

/// Runs a parsed command, printing its summary on stdout.
pub fn run(cli: &Cli) -> commands::CliResult<()> {
    match &cli.command {
        Command::GenDataset(args) => {
            let m = commands::gen_dataset(args)?;
            println!(
                "wrote {} images to {} (sigma {:.4}, mean displacement {:.3} px)",
                m.images,
                m.root.display(),
                m.spec.sigma_cp,
                m.mean_displacement_px
            );
        }
        Command::Undistort(args) => {
            let r = commands::undistort(args)?;
            print!("iterations {} loss {:.6}", r.iterations, r.loss);
            if let Some(res) = &r.residual {
                print!(" residual {:.4} ± {:.4} px", res.mean_px, res.std_px);
            }
            println!();
        }
        Command::Eval(args) => {
            let r = commands::eval(args)?;
            println!("{}", serde_json::to_string_pretty(&r).map_err(anyhow::Error::from)?);
        }
        Command::Distort(args) => {
            commands::distort(args)?;
        }
    }
    Ok(())
}
