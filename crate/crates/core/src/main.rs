use clap::Parser;

use lexhaz::cli::{run, Cli};
use lexhaz::Error;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        if let Error::NonConvergence { iterations, score_norm, .. } = &e {
            eprintln!("diagnostics: iterations={iterations} relative_score_norm={score_norm:.6e}");
        }
        std::process::exit(e.exit_code());
    }
}
