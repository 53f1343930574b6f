use clap::Parser;

use confluent_susy::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SUSY_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
