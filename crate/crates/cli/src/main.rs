use clap::Parser;
use tps_undistort_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("tpsu: {err}");
        std::process::exit(err.exit_code());
    }
}
