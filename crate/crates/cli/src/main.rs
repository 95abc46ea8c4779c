use std::process::ExitCode;

use clap::{Arg, ArgAction, Command};
use outtree_cli::commands::{run, COMMANDS};
use outtree_cli::config::KEYS;
use outtree_cli::{CliError, RunConfig};

fn cli() -> Command {
    let mut cmd = Command::new("outtree")
        .about("Latent out-tree likelihoods: fitting, scoring, sampling and experiments")
        .subcommand_required(true)
        .arg(Arg::new("config").long("config").global(true).help("flat key = value file; flags override it"));
    for (key, _, help) in KEYS {
        cmd = cmd.arg(Arg::new(*key).long(*key).global(true).action(ArgAction::Set).help(*help));
    }
    for (name, about) in COMMANDS {
        cmd = cmd.subcommand(Command::new(*name).about(*about));
    }
    cmd
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.kind().to_string());
            let _ = e.print();
            eprintln!("{}", err.record());
            return ExitCode::from(2);
        }
    };
    let (command, sub) = matches.subcommand().expect("subcommand is required");
    let flags: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|(k, _, _)| sub.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    let config = sub.get_one::<String>("config").map(std::path::PathBuf::from);
    let result = RunConfig::resolve(command, config.as_deref(), &flags).and_then(|cfg| run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
