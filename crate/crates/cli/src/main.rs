use std::io;

use clap::Parser;
use tracing_subscriber::filter::LevelFilter;

fn main() {
    let args: Vec<_> = std::env::args_os().collect();
    // Peek at the verbosity before the full parse so logging is ready for it.
    let level = match roundtable_cli::Cli::try_parse_from(&args).map(|c| c.verbose) {
        Ok(0) | Err(_) => LevelFilter::WARN,
        Ok(1) => LevelFilter::INFO,
        Ok(2) => LevelFilter::DEBUG,
        Ok(_) => LevelFilter::TRACE,
    };
    tracing_subscriber::fmt().with_max_level(level).with_writer(io::stderr).init();
    let code = roundtable_cli::run_cli(args, &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
