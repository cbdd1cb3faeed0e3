use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pump_core::api::{self, ApiError, Kind};
use serde_json::{json, Map, Value};

#[derive(Debug, Parser)]
#[command(name = "pump", version, about = "Power, MDES and sample size under multiple testing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Power table for a fixed design.
    Power(RunArgs),
    /// Minimum detectable effect size for a target power.
    Mdes(RunArgs),
    /// Sample size at one level for a target power.
    Sample(RunArgs),
    /// Power over a cartesian grid of parameter values.
    Grid(RunArgs),
    /// Engine versus full-simulation oracle.
    Validate(RunArgs),
    /// One generated dataset as CSV.
    Dgp(RunArgs),
    /// Engine version, designs and procedures.
    Info(InfoArgs),
    /// JSON schema of every accepted key.
    Schema(InfoArgs),
    /// Stateless HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON request file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Parameter override NAME=VALUE; VALUE is parsed as JSON when possible.
    /// For grids, `base` keys are set unless NAME is `vary` or `budget_ms`.
    #[arg(long = "set", short = 's', value_name = "NAME=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write to this file instead of stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutFormat>,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let (kind, args) = match cli.command {
        Command::Power(a) => (Kind::Power, a),
        Command::Mdes(a) => (Kind::Mdes, a),
        Command::Sample(a) => (Kind::Sample, a),
        Command::Grid(a) => (Kind::Grid, a),
        Command::Validate(a) => (Kind::Validate, a),
        Command::Dgp(a) => (Kind::Dgp, a),
        Command::Info(a) => return emit_value(&api::info(), a.out.as_deref()),
        Command::Schema(a) => return emit_value(&api::schema(), a.out.as_deref()),
        Command::Serve(a) => return crate::server::serve_blocking(a.addr),
    };
    let body = match build_body(kind, &args) {
        Ok(b) => b,
        Err(e) => return report(&e),
    };
    match api::run(kind, &body) {
        Ok(resp) => match write_out(&resp.render(), args.out.as_deref()) {
            Ok(()) => resp.exit_code(),
            Err(e) => io_failure(&e, args.out.as_deref()),
        },
        Err(e) => report(&e),
    }
}

/// Merges the config file, `--set` overrides and control flags into one
/// request body.
pub fn build_body(kind: Kind, args: &RunArgs) -> Result<Value, ApiError> {
    let mut body = match &args.config {
        None => Map::new(),
        Some(path) => read_config(path)?,
    };
    for s in &args.set {
        let (k, v) = api::parse_assignment(s)?;
        let grid_base = kind == Kind::Grid && k != "vary" && k != "budget_ms" && k != "seed" && k != "format";
        if grid_base {
            let base = body.entry("base").or_insert_with(|| json!({}));
            let Some(base) = base.as_object_mut() else {
                return Err(usage("base", "grid `base` must be an object"));
            };
            base.insert(k, v);
        } else {
            body.insert(k, v);
        }
    }
    if let Some(seed) = args.seed {
        body.insert("seed".into(), json!(seed));
    }
    if let Some(f) = args.format {
        let f = match f {
            OutFormat::Json => "json",
            OutFormat::Csv => "csv",
        };
        body.insert("format".into(), json!(f));
    }
    Ok(Value::Object(body))
}

fn read_config(path: &Path) -> Result<Map<String, Value>, ApiError> {
    let text = fs::read_to_string(path).map_err(|e| usage("config", &format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| api::malformed(&e))?;
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(usage("config", "config file must hold a JSON object")),
    }
}

fn usage(field: &str, message: &str) -> ApiError {
    pump_core::PumpError::field(field, message.to_string()).into()
}

fn report(e: &ApiError) -> i32 {
    eprintln!("{}", serde_json::to_string_pretty(&e.body).expect("json renders"));
    e.exit_code()
}

fn io_failure(e: &std::io::Error, out: Option<&Path>) -> i32 {
    let target = out.map(|p| p.display().to_string()).unwrap_or_else(|| "stdout".into());
    eprintln!("cannot write {target}: {e}");
    2
}

fn emit_value(v: &Value, out: Option<&Path>) -> i32 {
    let text = serde_json::to_string_pretty(v).expect("json renders");
    match write_out(&text, out) {
        Ok(()) => 0,
        Err(e) => io_failure(&e, out),
    }
}

fn write_out(text: &str, out: Option<&Path>) -> std::io::Result<()> {
    match out {
        Some(p) => fs::write(p, ensure_newline(text)),
        None => std::io::stdout().lock().write_all(ensure_newline(text).as_bytes()),
    }
}

fn ensure_newline(s: &str) -> String {
    if s.ends_with('\n') {
        s.to_string()
    } else {
        format!("{s}\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(set: &[&str]) -> RunArgs {
        RunArgs { config: None, set: set.iter().map(|s| s.to_string()).collect(), seed: None, out: None, format: None }
    }

    #[test]
    fn set_values_are_json_or_strings() {
        let body = build_body(Kind::Power, &args(&["d_m=d2.1_m2fc", "MDES=[0.1,0.2]", "J=20"])).unwrap();
        assert_eq!(body, json!({"d_m": "d2.1_m2fc", "MDES": [0.1, 0.2], "J": 20}));
    }

    #[test]
    fn grid_overrides_land_in_base() {
        let body = build_body(Kind::Grid, &args(&["J=20", "vary={\"K\":[1,2]}", "budget_ms=10"])).unwrap();
        assert_eq!(body, json!({"base": {"J": 20}, "vary": {"K": [1, 2]}, "budget_ms": 10}));
    }

    #[test]
    fn flags_win_over_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"J": 10, "seed": 1, "format": "json"}"#).unwrap();
        let a = RunArgs { config: Some(path), set: vec!["J=30".into()], seed: Some(9), out: None, format: Some(OutFormat::Csv) };
        let body = build_body(Kind::Power, &a).unwrap();
        assert_eq!(body, json!({"J": 30, "seed": 9, "format": "csv"}));
    }

    #[test]
    fn bad_assignment_is_a_validation_error() {
        let e = build_body(Kind::Power, &args(&["J"])).unwrap_err();
        assert_eq!(e.status, 400);
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn non_object_config_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, "[1, 2]").unwrap();
        let a = RunArgs { config: Some(path), set: vec![], seed: None, out: None, format: None };
        assert_eq!(build_body(Kind::Power, &a).unwrap_err().status, 400);
    }
}
