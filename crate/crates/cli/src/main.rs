use std::process::ExitCode;

use clap::Parser;
use ebm3d_cli::{resolve_config, run, Cli};

fn exit_code(category: &str) -> u8 {
    match category {
        "config" => 2,
        "input" | "parse" | "format" => 3,
        "io" => 4,
        "numeric" => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Ok(cfg) = resolve_config(&cli.common) {
        println!("# resolved config ({})", cli.command.name());
        print!("{}", cfg.render());
    }
    match run(cli.command, &cli.common) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::from(exit_code(e.category()))
        }
    }
}
