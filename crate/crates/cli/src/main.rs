//! `scpnet` command-line tool.
//!
//! Every subcommand takes `--config FILE` (flat `key = value` lines) and one
//! `--key value` flag per config key; flags override the file. The resolved
//! configuration is printed before anything runs.
//!
//! Exit status: 0 on success, 1 on I/O or numeric failure, 2 on usage errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};

use config::{command_keys, registry, Settings, UsageError};

const COMMANDS: [(&str, &str); 5] = [
    ("synth", "Generate a synthetic dataset with planted label clusters"),
    ("build-prior", "Build the label prior graph from an embedding file"),
    ("inspect-graph", "Summarise a prior graph and optionally export it"),
    ("train", "Train the label model and write a checkpoint and training log"),
    ("eval", "Per-class AP and mAP of a checkpoint on a test set"),
];

fn cli() -> Command {
    let registry = registry();
    let mut cmd = Command::new("scpnet")
        .about("Label-prior graphs and self-supervised training for incomplete multi-label data")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in COMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("flat `key = value` config file"),
        );
        for k in command_keys(name) {
            let entry = registry.iter().find(|r| r.name == k).expect("registered key");
            let help = match &entry.default {
                Some(d) => format!("{} [default: {d}]", entry.help),
                None => entry.help.to_string(),
            };
            sub = sub.arg(Arg::new(k).long(k).value_name("VALUE").help(help));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn run(name: &str, matches: &ArgMatches) -> anyhow::Result<()> {
    let file = matches.get_one::<String>("config").map(PathBuf::from);
    let flags: Vec<(&'static str, String)> = command_keys(name)
        .into_iter()
        .filter_map(|k| matches.get_one::<String>(k).map(|v| (k, v.clone())))
        .collect();
    let settings = Settings::resolve(name, file.as_deref(), flags)?;
    println!("# scpnet {name}");
    print!("{}", settings.render());
    println!();
    match name {
        "synth" => commands::synth(&settings),
        "build-prior" => commands::build_prior_cmd(&settings),
        "inspect-graph" => commands::inspect_graph(&settings),
        "train" => commands::train_cmd(&settings),
        "eval" => commands::eval_cmd(&settings),
        other => unreachable!("unknown subcommand {other}"),
    }
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<UsageError>() || matches!(e.downcast_ref::<scpnet::Error>(), Some(scpnet::Error::Parameter(_)))
    })
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match run(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_usage(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
