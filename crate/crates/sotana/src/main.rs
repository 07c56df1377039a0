use clap::Parser;
use sotana::cli::{effective_config, run, Cli};

fn main() {
    let cli = Cli::parse();
    let cfg = effective_config(&cli);
    let level = cfg.as_ref().map_or("info", |c| c.str("log_level")).to_string();
    env_logger::Builder::new().parse_filters(&level).format_timestamp_millis().init();
    let result = cfg.and_then(|c| run(cli, &c));
    if let Err(e) = result {
        log::error!("{e:#}");
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
