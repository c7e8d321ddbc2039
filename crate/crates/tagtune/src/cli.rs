//! Command-line front end. Every settings key is a global `--key VALUE` flag.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command};

use crate::commands;
use crate::config::{Settings, KEYS};

fn out_arg(help: &'static str) -> Arg {
    Arg::new("out").long("out").short('o').value_name("PATH").value_parser(clap::value_parser!(PathBuf)).required(true).help(help)
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("PATH").value_parser(clap::value_parser!(PathBuf)).help(help)
}

pub fn command() -> Command {
    let mut cmd = Command::new("tagtune")
        .about("Graph instruction tuning with confidence-filtered self-training")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .global(true)
                .help("key = value settings file; flags override it"),
        )
        .subcommand(Command::new("gen-data").about("Write a synthetic graph as JSON").arg(out_arg("graph JSON to write")))
        .subcommand(
            Command::new("convert-cora")
                .about("Convert a Cora dump (cora.content, cora.cites) to graph JSON")
                .arg(path_arg("content", "cora.content").required(true))
                .arg(path_arg("cites", "cora.cites").required(true))
                .arg(out_arg("graph JSON to write")),
        )
        .subcommand(
            Command::new("pretrain-decoder").about("Pretrain and freeze the decoder").arg(out_arg("decoder checkpoint to write")),
        )
        .subcommand(
            Command::new("train")
                .about("Supervised fit on the labeled split only")
                .arg(out_arg("model checkpoint to write"))
                .arg(path_arg("resume", "continue from this model checkpoint")),
        )
        .subcommand(Command::new("selftrain").about("Run one self-training pipeline").arg(out_arg("output directory")))
        .subcommand(
            Command::new("eval")
                .about("Accuracy of a model checkpoint on the split's unlabeled nodes")
                .arg(path_arg("model", "model checkpoint").required(true))
                .arg(path_arg("predictions", "also write per-node predictions as CSV")),
        )
        .subcommand(Command::new("sweep").about("Label-ratio sweep over seeds, ratios and variants").arg(out_arg("output directory")))
        .subcommand(Command::new("ablate").about("All variants at one ratio").arg(out_arg("output directory")))
        .subcommand(Command::new("show-config").about("Print the effective settings as a config file"));
    for (key, help) in KEYS {
        cmd = cmd.arg(Arg::new(*key).long(*key).value_name("VALUE").global(true).allow_hyphen_values(true).help(*help));
    }
    cmd
}

/// Defaults, then the config file, then flags given on the command line.
pub fn settings_from(matches: &ArgMatches) -> Result<Settings> {
    let mut settings = Settings::default();
    if let Some(path) = matches.get_one::<PathBuf>("config") {
        settings.apply_file(path)?;
    }
    for (key, _) in KEYS {
        if matches.value_source(key) == Some(ValueSource::CommandLine) {
            let value = matches.get_one::<String>(key).expect("flag has a value");
            settings.apply(key, value).with_context(|| format!("--{key}"))?;
        }
    }
    Ok(settings)
}

pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().get_matches_from(args);
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let settings = settings_from(sub)?;
    let path = |name: &str| sub.get_one::<PathBuf>(name).cloned();
    let out = || path("out").expect("--out is required");
    match name {
        "gen-data" => commands::gen_data(&settings, &out()),
        "convert-cora" => commands::convert_cora(&path("content").unwrap(), &path("cites").unwrap(), &out()),
        "pretrain-decoder" => commands::pretrain(&settings, &out()),
        "train" => commands::train(&settings, &out(), path("resume").as_deref()),
        "selftrain" => commands::selftrain(&settings, &out()),
        "eval" => commands::eval(&settings, &path("model").unwrap(), path("predictions").as_deref()),
        "sweep" => commands::sweep(&settings, &out(), false),
        "ablate" => commands::sweep(&settings, &out(), true),
        "show-config" => {
            print!("{}", settings.to_config_text());
            Ok(())
        }
        _ => unreachable!("unknown subcommand {name}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("a.conf");
        std::fs::write(&conf, "epochs = 7\nlr = 0.5\n").unwrap();
        let m = command()
            .try_get_matches_from(["tagtune", "show-config", "--config", conf.to_str().unwrap(), "--lr", "0.25", "--threshold", "-inf"])
            .unwrap();
        let s = settings_from(m.subcommand().unwrap().1).unwrap();
        assert_eq!(s.selftrain.train.epochs, 7);
        assert_eq!(s.selftrain.train.optimizer.learning_rate, 0.25);
        assert_eq!(s.selftrain.threshold, f64::NEG_INFINITY);
    }

    #[test]
    fn every_key_is_a_flag() {
        let cmd = command();
        for (key, _) in KEYS {
            assert!(cmd.get_arguments().any(|a| a.get_long() == Some(*key)), "{key}");
        }
    }
}
