use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::Utc;
use feskit::scenarios::AssertionResult;
use feskit::{certify as certify_scenario, dense_csv, run_scenario, trace_csv, ScenarioConfig, ScenarioRun, TrackingSummary};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::{content_hash, display_path, sha256, OutputFile, RunManifest, MANIFEST_SCHEMA_VERSION};
use crate::{CliError, Status};

type CliResult<T> = Result<T, CliError>;

/// Contents of `summary.json`.
#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    scenario: &'a str,
    seed: u64,
    passed: bool,
    faulted: bool,
    #[serde(flatten)]
    tracking: &'a TrackingSummary,
    metrics: &'a BTreeMap<String, f64>,
    assertions: &'a [AssertionResult],
}

struct LoadedConfig {
    config: ScenarioConfig,
    source: Vec<u8>,
}

fn load(path: &Path) -> CliResult<LoadedConfig> {
    let source = fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&source).map_err(|_| CliError::config(format!("{} is not UTF-8", path.display())))?;
    let config = ScenarioConfig::from_toml(text).map_err(CliError::from_core)?;
    Ok(LoadedConfig { config, source })
}

fn effective_hash(cfg: &ScenarioConfig) -> CliResult<String> {
    let text = cfg.to_toml().map_err(CliError::from_core)?;
    Ok(content_hash(text.as_bytes()))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map(|mut s| {
        s.push('\n');
        s
    }).map_err(|e| CliError { status: Status::NumericalFault, message: format!("serialization failed: {e}") })
}

/// Writes `files` and a manifest listing them. Everything is rendered
/// before this is called, so failures earlier leave no output behind.
fn write_outputs(dir: &Path, files: &[(&str, String)], mut manifest: RunManifest) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    manifest.outputs = files.iter().map(|(name, body)| OutputFile { name: name.to_string(), sha256: sha256(body.as_bytes()) }).collect();
    manifest.finished_at = Utc::now();
    let manifest_json = to_json(&manifest)?;
    for (name, body) in files.iter().map(|(n, b)| (*n, b.as_str())).chain([("manifest.json", manifest_json.as_str())]) {
        fs::write(dir.join(name), body).map_err(|e| CliError::config(format!("cannot write {name}: {e}")))?;
    }
    Ok(())
}

fn manifest_for(command: &str, path: &Path, out: &Path, cfg: &ScenarioConfig, source: &[u8]) -> CliResult<RunManifest> {
    let now = Utc::now();
    Ok(RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        command: command.into(),
        scenario: cfg.name().into(),
        config_path: display_path(path),
        seed: cfg.seed(),
        output_dir: display_path(out),
        config_hash: effective_hash(cfg)?,
        source_hash: content_hash(source),
        feskit_version: env!("CARGO_PKG_VERSION").into(),
        started_at: now,
        finished_at: now,
        outputs: Vec::new(),
    })
}

fn run_status(run: &ScenarioRun) -> Status {
    if run.faulted() {
        Status::NumericalFault
    } else if !run.passed() {
        Status::AssertionFailure
    } else {
        Status::Ok
    }
}

pub fn run(path: &Path, out: &Path, seed: Option<u64>, substeps: Option<usize>) -> CliResult<Status> {
    let LoadedConfig { mut config, source } = load(path)?;
    if let Some(s) = seed {
        config.set_seed(s);
    }
    if let Some(n) = substeps {
        config.set_substeps(n);
    }
    config.validate().map_err(CliError::from_core)?;
    let manifest = manifest_for("run", path, out, &config, &source)?;

    let run = run_scenario(&config).map_err(CliError::from_core)?;
    let report = certify_scenario(&config).map_err(CliError::from_core)?;
    let summary = RunSummary {
        scenario: config.name(),
        seed: config.seed(),
        passed: run.passed(),
        faulted: run.faulted(),
        tracking: &run.summary,
        metrics: &run.metrics,
        assertions: &run.assertions,
    };
    let files = [
        ("trace.csv", trace_csv(&run.trace)),
        ("dense.csv", dense_csv(&run.trace)),
        ("summary.json", to_json(&summary)?),
        ("certificate.json", to_json(&report)?),
    ];
    write_outputs(out, &files, manifest)?;

    for a in &run.assertions {
        eprintln!("{} {}: {}", if a.passed { "ok  " } else { "FAIL" }, a.name, a.detail);
    }
    if let Some(f) = &run.trace.failure {
        eprintln!("numerical fault at k = {} (t = {}): {}", f.k, f.t, f.message);
    }
    Ok(run_status(&run))
}

/// Threads for sweeps: `FESKIT_THREADS` if set, else rayon's default.
fn sweep_threads() -> CliResult<Option<usize>> {
    match std::env::var("FESKIT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::config(format!("FESKIT_THREADS must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

pub const SWEEP_HEADER: &str =
    "param,value,status,passed,converged,diverged,terminal_e,sup_e_after_burn_in,median_e_after_burn_in,blow_up_time,error";

fn sweep_row(param: &str, value: f64, cell: &Result<ScenarioRun, feskit::FesError>) -> String {
    let mut row = String::new();
    match cell {
        Ok(run) => {
            let s = &run.summary;
            let status = match run_status(run) {
                Status::Ok => "ok",
                Status::AssertionFailure => "assertion_failed",
                _ => "fault",
            };
            let _ = write!(
                row,
                "{param},{value},{status},{},{},{},{:e},{:e},{:e},{},",
                run.passed(),
                s.converged,
                s.diverged,
                s.terminal_e,
                s.sup_e_after_burn_in,
                s.median_e_after_burn_in,
                s.blow_up_time.map_or(String::new(), |t| format!("{t:e}"))
            );
            if let Some(f) = &s.failure {
                row.push_str(&csv_escape(&f.message));
            }
        }
        Err(e) => {
            let _ = write!(row, "{param},{value},fault,false,false,false,,,,,{}", csv_escape(&e.to_string()));
        }
    }
    row
}

fn csv_escape(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub fn sweep(path: &Path, param: &str, values: &[f64], out: Option<&Path>) -> CliResult<Status> {
    let LoadedConfig { config, source } = load(path)?;
    let cells: Vec<ScenarioConfig> = values
        .iter()
        .map(|&v| {
            let mut c = config.clone();
            c.set_param(param, v)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_, feskit::FesError>>()
        .map_err(CliError::from_core)?;
    let threads = sweep_threads()?;
    let manifest = match out {
        Some(dir) => Some(manifest_for("sweep", path, dir, &config, &source)?),
        None => None,
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    let results: Vec<Result<ScenarioRun, feskit::FesError>> = pool.install(|| cells.par_iter().map(run_scenario).collect());

    let mut table = String::from(SWEEP_HEADER);
    table.push('\n');
    for (v, cell) in values.iter().zip(&results) {
        table.push_str(&sweep_row(param, *v, cell));
        table.push('\n');
    }
    print!("{table}");
    if let (Some(dir), Some(manifest)) = (out, manifest) {
        write_outputs(dir, &[("sweep.csv", table)], manifest)?;
    }

    let status = results.iter().fold(Status::Ok, |acc, r| {
        let s = match r {
            Ok(run) => run_status(run),
            Err(_) => Status::NumericalFault,
        };
        if s as u8 > acc as u8 {
            s
        } else {
            acc
        }
    });
    Ok(status)
}

pub fn certify(path: &Path, out: Option<&Path>) -> CliResult<Status> {
    let LoadedConfig { config, source } = load(path)?;
    let report = certify_scenario(&config).map_err(CliError::from_core)?;
    let json = to_json(&report)?;
    print!("{json}");
    if let Some(dir) = out {
        let manifest = manifest_for("certify", path, dir, &config, &source)?;
        write_outputs(dir, &[("certificate.json", json)], manifest)?;
    }
    Ok(Status::Ok)
}
