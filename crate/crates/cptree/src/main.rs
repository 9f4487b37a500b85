use std::path::PathBuf;
use std::process::ExitCode;

use cptree::runner::{self, Overrides, EXIT_USAGE, SUBCOMMANDS};

const USAGE: &str = "usage: cptree <subcommand> --config <file.json> \
[--seed N] [--out-dir DIR] [--threads K]

subcommands:
  gate         classify preference parameters as well- or ill-posed
  construct-q  build the dual martingale measure of a scenario tree
  na-check     certify the robust no-arbitrage condition
  evaluate     evaluate the distorted objective of one strategy
  optimize     search for an optimal predictable strategy
  probe        probe the objective along leverage rays
  lemmas       run the distorted-moment inequality harness
  rosenblatt   extract independent innovations from a joint density";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(subcommand) = args.first().cloned() else {
        eprintln!("{USAGE}");
        return ExitCode::from(EXIT_USAGE as u8);
    };
    if subcommand == "--help" || subcommand == "-h" || subcommand == "help" {
        println!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    if !SUBCOMMANDS.contains(&subcommand.as_str()) {
        eprintln!("unknown subcommand '{subcommand}'\n{USAGE}");
        return ExitCode::from(EXIT_USAGE as u8);
    }
    let mut config: Option<PathBuf> = None;
    let mut overrides = Overrides::default();
    let mut it = args[1..].iter();
    while let Some(flag) = it.next() {
        let mut value = |name: &str| {
            it.next()
                .cloned()
                .ok_or_else(|| format!("flag {name} needs a value"))
        };
        let parsed = match flag.as_str() {
            "--config" => value("--config").map(|v| config = Some(PathBuf::from(v))),
            "--seed" => value("--seed").and_then(|v| {
                v.parse::<u64>()
                    .map(|s| overrides.seed = Some(s))
                    .map_err(|_| format!("bad seed '{v}'"))
            }),
            "--out-dir" => value("--out-dir").map(|v| overrides.out_dir = Some(PathBuf::from(v))),
            "--threads" => value("--threads").and_then(|v| {
                v.parse::<usize>()
                    .map(|t| overrides.threads = Some(t))
                    .map_err(|_| format!("bad thread count '{v}'"))
            }),
            other => Err(format!("unknown flag '{other}'")),
        };
        if let Err(msg) = parsed {
            eprintln!("{msg}\n{USAGE}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    }
    let Some(config) = config else {
        eprintln!("missing --config\n{USAGE}");
        return ExitCode::from(EXIT_USAGE as u8);
    };
    let outcome = match overrides.threads {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build();
            match pool {
                Ok(pool) => pool.install(|| runner::run(&subcommand, &config, &overrides)),
                Err(e) => {
                    eprintln!("cannot build a {threads}-thread pool: {e}");
                    return ExitCode::from(EXIT_USAGE as u8);
                }
            }
        }
        None => runner::run(&subcommand, &config, &overrides),
    };
    ExitCode::from(outcome.exit_code as u8)
}
