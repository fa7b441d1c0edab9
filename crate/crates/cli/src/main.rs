use clap::Parser;
use hsi_cli::{init_workers, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_workers().and_then(|()| run(cli));
    if let Err(e) = result {
        eprintln!("hsi: {e}");
        std::process::exit(e.exit_code());
    }
}
