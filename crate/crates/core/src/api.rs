//! Request/response layer shared by the command line and the HTTP service.
//!
//! A body is a JSON object in wire spelling. Two control keys ride along
//! with the parameters: `seed` (defaults to [`DEFAULT_SEED`]) and `format`
//! (`json` or `csv`). Every response echoes the engine version, the seed,
//! the simulation sizes and the fully resolved request.

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::design::{design_listing, SizeLevel};
use crate::dgp::{
    assign_treatment, empirical_moments, generate_dataset, oracle::validate_against_oracle, oracle::OracleConfig,
    scheme_for, solve_model_params, DgpControl,
};
use crate::engine::{pump_power, PowerDefinition};
use crate::error::{FieldError, PumpError, Result};
use crate::explore::{csv_err, into_string, run_grid, GridSpec};
use crate::mtp::MtpId;
use crate::request::{serde_field_error, CheckedRequest, PowerRequest, Searched, POWER_KEYS};
use crate::search::{pump_mdes, pump_sample, SearchGoal, SearchQuantity, SearchResult};
use crate::seed::{rng_for, STREAM_ASSIGN, STREAM_DGP};
use crate::ENGINE_VERSION;

pub const DEFAULT_SEED: u64 = 20_240_501;

/// Search keys accepted next to the power parameters.
pub const GOAL_KEYS: [&str; 7] = [
    "target.power",
    "power.definition",
    "tol",
    "start.tnum",
    "final.tnum",
    "max.steps",
    "typesample",
];

/// Full-simulation keys accepted next to the power parameters.
pub const VALIDATE_KEYS: [&str; 2] = ["S", "B.perm"];

const CONTROL_KEYS: [&str; 2] = ["seed", "format"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Power,
    Mdes,
    Sample,
    Grid,
    Validate,
    Dgp,
}

impl Kind {
    pub fn parse(s: &str) -> Option<Kind> {
        Some(match s {
            "power" => Kind::Power,
            "mdes" => Kind::Mdes,
            "sample" => Kind::Sample,
            "grid" => Kind::Grid,
            "validate" => Kind::Validate,
            "dgp" => Kind::Dgp,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Power => "power",
            Kind::Mdes => "mdes",
            Kind::Sample => "sample",
            Kind::Grid => "grid",
            Kind::Validate => "validate",
            Kind::Dgp => "dgp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub json: Value,
    pub csv: String,
    pub format: Format,
    /// False when a search ran out of steps without certifying the target.
    pub converged: bool,
}

impl ApiResponse {
    /// Body in the requested format.
    pub fn render(&self) -> String {
        match self.format {
            Format::Json => serde_json::to_string_pretty(&self.json).expect("json renders"),
            Format::Csv => self.csv.clone(),
        }
    }

    pub fn content_type(&self) -> &'static str {
        match self.format {
            Format::Json => "application/json",
            Format::Csv => "text/csv",
        }
    }

    /// 0 on success, 3 when a search did not converge.
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            0
        } else {
            3
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    /// 400 for schema and validation problems, 422 for valid input the
    /// engine cannot compute.
    pub status: u16,
    pub body: Value,
}

impl ApiError {
    pub fn exit_code(&self) -> i32 {
        2
    }
}

impl From<PumpError> for ApiError {
    fn from(e: PumpError) -> Self {
        let (status, kind) = match &e {
            PumpError::Validation(_) => (400, "validation"),
            PumpError::DegreesOfFreedom { .. } => (422, "degrees_of_freedom"),
            PumpError::Infeasible { .. } => (422, "infeasible"),
            PumpError::NotPositiveSemiDefinite { .. } => (422, "not_positive_semidefinite"),
            PumpError::MissingNulls => (422, "missing_nulls"),
            PumpError::Unsupported(_) => (422, "unsupported"),
            PumpError::ExtendBracket { .. } => (422, "extend_bracket"),
            PumpError::Degenerate(_) => (422, "degenerate"),
        };
        let fields: Vec<FieldError> = match &e {
            PumpError::Validation(f) => f.clone(),
            _ => Vec::new(),
        };
        ApiError {
            status,
            body: json!({
                "engine_version": ENGINE_VERSION,
                "error": { "kind": kind, "message": e.to_string(), "fields": fields },
            }),
        }
    }
}

struct Control {
    seed: u64,
    format: Format,
}

/// Splits the control keys off a body.
fn split_control(body: &Value) -> Result<(Map<String, Value>, Control)> {
    let Some(obj) = body.as_object() else {
        return Err(PumpError::field("body", "request must be a JSON object"));
    };
    let mut params = obj.clone();
    let seed = match params.remove("seed") {
        None | Some(Value::Null) => DEFAULT_SEED,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| PumpError::field("seed", "seed must be a non-negative integer"))?,
    };
    let format = match params.remove("format") {
        None | Some(Value::Null) => Format::Json,
        Some(v) => match v.as_str() {
            Some("json") => Format::Json,
            Some("csv") => Format::Csv,
            _ => return Err(PumpError::field("format", "format must be `json` or `csv`")),
        },
    };
    Ok((params, Control { seed, format }))
}

/// Removes `keys` from `params`, returning them.
fn take(params: &mut Map<String, Value>, keys: &[&str]) -> Map<String, Value> {
    keys.iter()
        .filter_map(|k| params.remove(*k).map(|v| (k.to_string(), v)))
        .collect()
}

fn get_f64(m: &Map<String, Value>, key: &str, default: f64) -> Result<f64> {
    match m.get(key) {
        None => Ok(default),
        Some(v) => v.as_f64().ok_or_else(|| PumpError::field(key, format!("{key} must be a number"))),
    }
}

fn get_usize(m: &Map<String, Value>, key: &str, default: usize) -> Result<usize> {
    match m.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| PumpError::field(key, format!("{key} must be a non-negative integer"))),
    }
}

fn envelope(kind: Kind, c: &Control, request: Value, tnum: Value, b: Value, result: Value) -> Value {
    json!({
        "engine_version": ENGINE_VERSION,
        "kind": kind.name(),
        "seed": c.seed,
        "tnum": tnum,
        "B": b,
        "request": request,
        "result": result,
    })
}

/// Runs one request of the given kind.
pub fn run(kind: Kind, body: &Value) -> std::result::Result<ApiResponse, ApiError> {
    Ok(run_inner(kind, body)?)
}

fn run_inner(kind: Kind, body: &Value) -> Result<ApiResponse> {
    let (params, control) = split_control(body)?;
    match kind {
        Kind::Power => run_power(params, control),
        Kind::Mdes => run_search(params, control, true),
        Kind::Sample => run_search(params, control, false),
        Kind::Grid => run_grid_kind(params, control),
        Kind::Validate => run_validate(params, control),
        Kind::Dgp => run_dgp(params, control),
    }
}

fn run_power(params: Map<String, Value>, c: Control) -> Result<ApiResponse> {
    let req = PowerRequest::from_value(&Value::Object(params))?.check()?;
    let table = pump_power(&req, c.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["MTP", "definition", "value", "mc_se"]).map_err(csv_err)?;
    for r in &table.rows {
        for (def, cell) in r.cells() {
            w.write_record([r.mtp.code().to_string(), def.label(), cell.value.to_string(), cell.mc_se.to_string()])
                .map_err(csv_err)?;
        }
    }
    let b = if req.needs_nulls() { json!(req.b) } else { Value::Null };
    Ok(ApiResponse {
        json: envelope(Kind::Power, &c, req.to_wire(), json!(req.tnum), b, table.to_json()),
        csv: into_string(w)?,
        format: c.format,
        converged: true,
    })
}

/// Parses a search body into its goal and the request with the searched
/// quantity left open.
pub fn parse_search(body: &Value, mdes: bool) -> Result<(SearchGoal, CheckedRequest)> {
    let mut params = body
        .as_object()
        .cloned()
        .ok_or_else(|| PumpError::field("body", "request must be a JSON object"))?;
    let goal_keys = take(&mut params, &GOAL_KEYS);
    let explicit_tnum = params.get("tnum").is_some();
    let pr = PowerRequest::from_value(&Value::Object(params))?;
    let design = pr
        .d_m
        .as_deref()
        .map(crate::design::DesignModelId::parse)
        .transpose()?;
    let quantity = if mdes {
        if let Some(v) = goal_keys.get("typesample") {
            return Err(PumpError::field("typesample", format!("typesample ({v}) only applies to sample-size searches")));
        }
        SearchQuantity::Mdes
    } else {
        let level = match goal_keys.get("typesample") {
            Some(v) => v
                .as_str()
                .and_then(SizeLevel::parse)
                .ok_or_else(|| PumpError::field("typesample", "typesample must be one of nbar, J, K"))?,
            None => design
                .map(|d| d.top_level())
                .ok_or_else(|| PumpError::field("d_m", "design/model code is required"))?,
        };
        if let Some(d) = design {
            if !d.size_levels().contains(&level) {
                return Err(PumpError::field(
                    "typesample",
                    format!("{} has no {} level to search", d.code(), level.name()),
                ));
            }
        }
        SearchQuantity::Size(level)
    };
    let searched = match quantity {
        SearchQuantity::Mdes => Searched::Mdes,
        SearchQuantity::Size(l) => Searched::Size(l),
    };
    let req = pr.check_for(searched)?;
    if req.mtps.len() > 1 {
        return Err(PumpError::field("MTP", "a search takes a single procedure"));
    }
    let mtp = req.mtps.first().copied().unwrap_or(MtpId::None);
    let def_text = match goal_keys.get("power.definition") {
        None => "D1indiv".to_string(),
        Some(v) => v
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| PumpError::field("power.definition", "power.definition must be a string"))?,
    };
    let definition = PowerDefinition::parse(&def_text, req.params.m)?;
    let mut goal = SearchGoal::new(quantity, definition, mtp, get_f64(&goal_keys, "target.power", 0.8)?);
    goal.tol = get_f64(&goal_keys, "tol", goal.tol)?;
    goal.start_tnum = get_usize(&goal_keys, "start.tnum", goal.start_tnum)?;
    goal.final_tnum = get_usize(&goal_keys, "final.tnum", goal.final_tnum)?;
    goal.max_steps = get_usize(&goal_keys, "max.steps", goal.max_steps)?;
    if explicit_tnum {
        goal.tnum = req.tnum;
    }
    goal.check(&req)?;
    Ok((goal, req))
}

fn search_csv(r: &SearchResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "phase", "x", "tnum", "power", "mc_se"]).map_err(csv_err)?;
    for p in &r.trace {
        let phase = serde_json::to_value(p.phase).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        w.write_record([
            p.step.to_string(),
            phase,
            p.x.to_string(),
            p.tnum.to_string(),
            p.power.to_string(),
            p.mc_se.to_string(),
        ])
        .map_err(csv_err)?;
    }
    into_string(w)
}

fn run_search(params: Map<String, Value>, c: Control, mdes: bool) -> Result<ApiResponse> {
    let (goal, req) = parse_search(&Value::Object(params), mdes)?;
    let result = if mdes { pump_mdes(&goal, &req, c.seed)? } else { pump_sample(&goal, &req, c.seed)? };
    let mut wire = req.to_wire();
    let obj = wire.as_object_mut().expect("wire is an object");
    obj.remove(goal.quantity.label());
    obj.remove("tnum");
    let mut goal_json = serde_json::to_value(&goal).expect("goal serializes");
    goal_json["power.definition"] = json!(goal.definition.label());
    if !mdes {
        goal_json["typesample"] = json!(goal.quantity.label());
    }
    let b = if req.needs_nulls() { json!(req.b) } else { Value::Null };
    let kind = if mdes { Kind::Mdes } else { Kind::Sample };
    let mut env = envelope(
        kind,
        &c,
        wire,
        json!({"start": goal.start_tnum, "step": goal.tnum, "final": goal.final_tnum}),
        b,
        result.to_json(),
    );
    env["goal"] = goal_json;
    Ok(ApiResponse { json: env, csv: search_csv(&result)?, format: c.format, converged: result.converged })
}

fn run_grid_kind(params: Map<String, Value>, c: Control) -> Result<ApiResponse> {
    let spec = GridSpec::from_value(&Value::Object(params))?;
    let grid = run_grid(&spec, c.seed)?;
    let spec_json = serde_json::to_value(&spec).expect("grid spec serializes");
    let tnum = spec.base.get("tnum").cloned().unwrap_or(json!(crate::explore::GRID_DEFAULT_TNUM));
    let b = spec.base.get("B").cloned().unwrap_or(Value::Null);
    Ok(ApiResponse {
        json: envelope(Kind::Grid, &c, spec_json, tnum, b, grid.to_json()),
        csv: grid.to_csv()?,
        format: c.format,
        converged: true,
    })
}

/// The single correlation the data generator uses for every matrix.
fn uniform_rho(req: &CheckedRequest) -> Result<f64> {
    let m = req.params.m;
    if m == 1 {
        return Ok(0.0);
    }
    let r = req.rho[1];
    let uniform = (0..m).all(|a| (0..m).all(|b| a == b || (req.rho[a * m + b] - r).abs() < 1e-12));
    if !uniform {
        return Err(PumpError::field("rho", "simulated data use one correlation for every pair; give rho as a scalar"));
    }
    Ok(r)
}

fn run_validate(mut params: Map<String, Value>, c: Control) -> Result<ApiResponse> {
    let extra = take(&mut params, &VALIDATE_KEYS);
    let req = PowerRequest::from_value(&Value::Object(params))?.check()?;
    let s = get_usize(&extra, "S", 2000)?;
    let b_perm = get_usize(&extra, "B.perm", req.b)?;
    let cfg = OracleConfig { rho: uniform_rho(&req)?, s, b_perm, req: req.clone() };
    let report = validate_against_oracle(&cfg, c.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["MTP", "definition", "engine", "engine_mc_se", "oracle", "ci_half_width", "inside"]).map_err(csv_err)?;
    let half = report["ci_half_width"].as_f64().unwrap_or(0.0);
    for cmp in report["comparisons"].as_array().into_iter().flatten() {
        w.write_record([
            cmp["MTP"].as_str().unwrap_or_default().to_string(),
            cmp["definition"].as_str().unwrap_or_default().to_string(),
            cmp["engine"]["value"].to_string(),
            cmp["engine"]["mc_se"].to_string(),
            cmp["oracle"].to_string(),
            half.to_string(),
            cmp["inside"].to_string(),
        ])
        .map_err(csv_err)?;
    }
    let mut wire = req.to_wire();
    wire["S"] = json!(s);
    wire["B.perm"] = json!(b_perm);
    let b = if req.needs_nulls() { json!(req.b) } else { Value::Null };
    Ok(ApiResponse {
        json: envelope(Kind::Validate, &c, wire, json!(req.tnum), b, report),
        csv: into_string(w)?,
        format: c.format,
        converged: true,
    })
}

fn run_dgp(params: Map<String, Value>, c: Control) -> Result<ApiResponse> {
    let req = PowerRequest::from_value(&Value::Object(params))?.check()?;
    let control = DgpControl::from_request(&req, uniform_rho(&req)?);
    let model = solve_model_params(&control)?;
    let mut ds = generate_dataset(&model, &control, &mut rng_for(c.seed, STREAM_DGP, 0))?;
    ds.t = assign_treatment(scheme_for(req.design), &ds, req.params.tbar, &mut rng_for(c.seed, STREAM_ASSIGN, 0))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["K.id", "J.id", "i", "T"].map(String::from).to_vec();
    for m in 1..=ds.m {
        for col in ["V", "X", "C", "Y0", "Y1", "Yobs"] {
            header.push(format!("{col}.{m}"));
        }
    }
    w.write_record(&header).map_err(csv_err)?;
    let y_obs: Vec<Vec<f64>> = (0..ds.m).map(|m| ds.y_obs(m)).collect();
    for i in 0..ds.len() {
        let mut rec = vec![
            (ds.k_id[i] + 1).to_string(),
            (ds.j_id[i] + 1).to_string(),
            (ds.i_id[i] + 1).to_string(),
            ds.t[i].to_string(),
        ];
        for (m, o) in ds.outcomes.iter().enumerate() {
            for v in [o.v[i], o.x[i], o.c[i], o.y0[i], o.y1[i], y_obs[m][i]] {
                rec.push(v.to_string());
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let result = json!({
        "scheme": scheme_for(req.design),
        "rows": ds.len(),
        "treated": ds.t.iter().map(|&t| t as usize).sum::<usize>(),
        "model": model,
        "empirical": empirical_moments(&ds),
    });
    Ok(ApiResponse {
        json: envelope(Kind::Dgp, &c, req.to_wire(), Value::Null, Value::Null, result),
        csv: into_string(w)?,
        format: c.format,
        converged: true,
    })
}

/// Engine version, designs, procedures and power definitions.
pub fn info() -> Value {
    json!({
        "engine_version": ENGINE_VERSION,
        "designs": design_listing(),
        "MTP": MtpId::ALL.iter().map(|m| m.code()).collect::<Vec<_>>(),
        "power_definitions": ["D<m>indiv", "indiv.mean", "min<d>", "complete", "<a>/<b>-minimal"],
        "search_quantities": ["MDES", "nbar", "J", "K"],
        "kinds": ["power", "mdes", "sample", "grid", "validate", "dgp"],
        "default_seed": DEFAULT_SEED,
    })
}

fn param(kind: &str, per_outcome: bool, default: Value, doc: &str) -> Value {
    json!({ "type": kind, "per_outcome": per_outcome, "default": default, "description": doc })
}

/// Machine-readable description of every accepted key.
pub fn schema() -> Value {
    let mut power = Map::new();
    let entries: [(&str, Value); 24] = [
        ("d_m", param("string", false, Value::Null, "design/model code, e.g. d3.2_m3fc2rc")),
        ("MTP", param("string | string[]", false, json!([]), "procedures: BF, HO, BH, WY-SS, WY-SD (None is always reported)")),
        ("M", param("integer", false, json!(1), "number of outcomes")),
        ("MDES", param("number | number[]", true, Value::Null, "effect sizes; scalar broadcasts to the M - numZero non-null outcomes")),
        ("numZero", param("integer", false, json!(0), "outcomes with zero effect, placed last")),
        ("nbar", param("integer", false, Value::Null, "harmonic mean individuals per school")),
        ("J", param("integer", false, Value::Null, "schools per district (schools for two-level designs)")),
        ("K", param("integer", false, json!(1), "districts")),
        ("Tbar", param("number", false, json!(0.5), "treated proportion")),
        ("numCovar.1", param("integer", false, json!(0), "level-1 covariates")),
        ("numCovar.2", param("integer", false, json!(0), "level-2 covariates")),
        ("numCovar.3", param("integer", false, json!(0), "level-3 covariates")),
        ("R2.1", param("number | number[]", true, json!(0), "level-1 variance explained by covariates")),
        ("R2.2", param("number | number[]", true, json!(0), "level-2 variance explained by covariates")),
        ("R2.3", param("number | number[]", true, json!(0), "level-3 variance explained by covariates")),
        ("ICC.2", param("number | number[]", true, json!(0), "school intraclass correlation")),
        ("ICC.3", param("number | number[]", true, json!(0), "district intraclass correlation")),
        ("omega.2", param("number | number[]", true, json!(0), "school impact variation relative to school variance")),
        ("omega.3", param("number | number[]", true, json!(0), "district impact variation relative to district variance")),
        ("rho", param("number | number[][]", false, Value::Null, "test-statistic correlation; required when M > 1")),
        ("alpha", param("number", false, json!(0.05), "familywise or false discovery level")),
        ("two.tailed", param("boolean", false, json!(true), "two-sided tests")),
        ("tnum", param("integer", false, json!(crate::request::DEFAULT_TNUM), "simulated trials")),
        ("B", param("integer", false, json!(crate::request::DEFAULT_B), "null draws for Westfall-Young")),
    ];
    for (k, v) in entries {
        power.insert(k.into(), v);
    }
    debug_assert!(POWER_KEYS.iter().all(|k| power.contains_key(*k)));
    json!({
        "engine_version": ENGINE_VERSION,
        "control": {
            "seed": param("integer", false, json!(DEFAULT_SEED), "random seed"),
            "format": param("string", false, json!("json"), "json or csv"),
        },
        "power": power,
        "search": {
            "target.power": param("number", false, json!(0.8), "power to reach"),
            "power.definition": param("string", false, json!("D1indiv"), "definition the target refers to"),
            "tol": param("number", false, json!(0.01), "accepted distance from the target"),
            "start.tnum": param("integer", false, json!(1000), "trials per initial probe"),
            "tnum": param("integer", false, json!(3000), "trials per refinement step; doubles after repeated misses"),
            "final.tnum": param("integer", false, json!(20000), "trials for certification"),
            "max.steps": param("integer", false, json!(20), "refinement steps before giving up"),
            "typesample": param("string", false, Value::Null, "sample searches: nbar, J or K (default: top level)"),
        },
        "grid": {
            "base": param("object", false, Value::Null, "power request shared by every cell"),
            "vary": param("object", false, Value::Null, "parameter to list of values; first key varies slowest"),
            "budget_ms": param("integer", false, Value::Null, "soft time cap; later cells are skipped"),
        },
        "validate": {
            "S": param("integer", false, json!(2000), "simulated datasets"),
            "B.perm": param("integer", false, json!("B"), "re-randomizations per dataset for Westfall-Young"),
        },
        "designs": design_listing(),
    })
}

/// Parses `NAME=VALUE`; the value is read as JSON when it parses, as a bare
/// string otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| PumpError::field("set", format!("expected NAME=VALUE, got `{s}`")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(PumpError::field("set", format!("empty parameter name in `{s}`")));
    }
    let v = v.trim();
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Keys accepted by a request kind, for early typo reporting.
pub fn accepted_keys(kind: Kind) -> Vec<&'static str> {
    let mut keys: Vec<&'static str> = match kind {
        Kind::Grid => vec!["base", "vary", "budget_ms"],
        _ => POWER_KEYS.to_vec(),
    };
    match kind {
        Kind::Mdes | Kind::Sample => keys.extend(GOAL_KEYS),
        Kind::Validate => keys.extend(VALIDATE_KEYS),
        _ => {}
    }
    keys.extend(CONTROL_KEYS);
    keys
}

/// Error for a body that is not JSON at all.
pub fn malformed(err: &serde_json::Error) -> ApiError {
    let mut e = ApiError::from(serde_field_error(err));
    e.body["error"]["kind"] = json!("malformed");
    e
}
