use std::process::ExitCode;

use clap::Parser;
use morphon::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MORPHON_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
