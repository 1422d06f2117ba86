//! `grounder` binary: training-free spatial action grounding.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use grounder_cli::commands::{cmd_eval, cmd_ground, cmd_sweep, resolve_out_dir, CliError};
use grounder_cli::config::RunConfig;
use grounder_core::eval::SweepMode;

const USAGE: &str = "\
usage: grounder <command> [flags]

commands:
  ground  --media PATH --frame N --label TEXT   ground one labeled frame
  eval    --annotations PATH                    pointing-game accuracy over a JSONL set
  sweep   --annotations PATH --mode M --range A..B
                                                layer ablations (mode: depth | remove_layer)

flags:
  --config PATH   run configuration file (defaults apply when omitted)
  --out DIR       output directory (default: config output_dir)
  --media PATH    frame directory or single image
  --frame N       labeled frame index within the media
  --label TEXT    action label to ground
  --annotations PATH
  --mode M        sweep mode
  --range A..B    inclusive sweep range

environment:
  GROUNDER_FIXTURE_ROOT   search root for relative toy fixture paths
";

struct Flags {
    config: Option<String>,
    media: Option<String>,
    frame: Option<String>,
    label: Option<String>,
    annotations: Option<String>,
    mode: Option<String>,
    range: Option<String>,
    out: Option<String>,
}

fn parse_flags(args: &[String]) -> Result<Flags, CliError> {
    let mut flags = Flags {
        config: None,
        media: None,
        frame: None,
        label: None,
        annotations: None,
        mode: None,
        range: None,
        out: None,
    };
    let mut i = 0;
    while i < args.len() {
        let name = args[i].as_str();
        let slot = match name {
            "--config" => &mut flags.config,
            "--media" => &mut flags.media,
            "--frame" => &mut flags.frame,
            "--label" => &mut flags.label,
            "--annotations" => &mut flags.annotations,
            "--mode" => &mut flags.mode,
            "--range" => &mut flags.range,
            "--out" => &mut flags.out,
            _ => return Err(CliError::Usage(format!("unknown flag `{name}`"))),
        };
        let value = args.get(i + 1).ok_or_else(|| {
            CliError::Usage(format!("flag `{name}` needs a value"))
        })?;
        *slot = Some(value.clone());
        i += 2;
    }
    Ok(flags)
}

fn require<'a>(value: &'a Option<String>, name: &str) -> Result<&'a str, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required flag `{name}`")))
}

fn load_config(flags: &Flags) -> Result<RunConfig, CliError> {
    match &flags.config {
        Some(path) => Ok(RunConfig::load(Path::new(path)).map_err(|e| CliError::Usage(e.to_string()))?),
        None => Ok(RunConfig::default()),
    }
}

/// Write to stdout, ignoring a closed pipe (e.g. `grounder help | head`).
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn parse_range(value: &str) -> Result<(usize, usize), CliError> {
    let (a, b) = value
        .split_once("..")
        .ok_or_else(|| CliError::Usage(format!("range must look like A..B, got `{value}`")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("range bound `{v}` is not an integer")))
    };
    Ok((parse(a)?, parse(b)?))
}

fn run() -> Result<(), CliError> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let command = args
        .first()
        .ok_or_else(|| CliError::Usage(USAGE.to_string()))?;
    if command == "--help" || command == "-h" || command == "help" {
        emit(USAGE);
        emit("\n");
        return Ok(());
    }
    let flags = parse_flags(&args[1..])?;
    let config = load_config(&flags)?;
    let out_dir: PathBuf = resolve_out_dir(&config, flags.out.as_deref());

    match command.as_str() {
        "ground" => {
            let media = require(&flags.media, "--media")?;
            let frame: usize = require(&flags.frame, "--frame")?
                .parse()
                .map_err(|_| CliError::Usage("`--frame` must be a non-negative integer".into()))?;
            let label = require(&flags.label, "--label")?;
            let record = cmd_ground(&config, Path::new(media), frame, label, &out_dir)?;
            let json = serde_json::to_string_pretty(&record)
                .map_err(|e| CliError::Data(e.to_string()))?;
            emit(&json);
            emit("\n");
            Ok(())
        }
        "eval" => {
            let annotations = require(&flags.annotations, "--annotations")?;
            let record = cmd_eval(&config, Path::new(annotations), &out_dir)?;
            emit(&format!("accuracy {:.6}\n", record.report.accuracy));
            Ok(())
        }
        "sweep" => {
            let annotations = require(&flags.annotations, "--annotations")?;
            let mode = SweepMode::parse(require(&flags.mode, "--mode")?).ok_or_else(|| {
                CliError::Usage("`--mode` must be `depth` or `remove_layer`".into())
            })?;
            let range = parse_range(require(&flags.range, "--range")?)?;
            let table = cmd_sweep(&config, Path::new(annotations), mode, range, &out_dir)?;
            emit(&table.to_csv());
            Ok(())
        }
        other => Err(CliError::Usage(format!(
            "unknown command `{other}`\n\n{USAGE}"
        ))),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
