use clap::Parser;
use forge_cli::commands::{exit_code, resolve_config, run_command, Cli};

fn main() {
    let cli = Cli::parse();
    let result = resolve_config(&cli).and_then(|cfg| {
        if cfg.workers > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build_global()
                .map_err(|e| forge_core::ForgeError::Config(format!("worker pool: {e}")))?;
        }
        run_command(&cfg, &cli.command, cli.json_logs)
    });
    if let Err(e) = result {
        eprintln!("forge {}: {e}", cli.command.name());
        std::process::exit(exit_code(&e));
    }
}
