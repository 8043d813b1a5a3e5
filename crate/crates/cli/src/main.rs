use clap::Parser;

fn main() {
    let cli = autohall_cli::Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = autohall_cli::run(cli) {
        eprintln!("{e}");
        std::process::exit(e.code);
    }
}
