use clap::Parser;
use dalign_cli::{configure_threads, run, Cli, ExitCode};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| run(&cli.command));
    let code = match result {
        Ok(()) => ExitCode::Success,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    };
    std::process::exit(code as i32);
}
