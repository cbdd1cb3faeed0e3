//! Wire format of a power question and its validated, broadcast form.
//!
//! Field spellings follow the published parameter table (`nbar`, `ICC.2`,
//! `numCovar.1`, ...). Per-outcome fields accept a scalar or a length-M list.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::design::{self, DesignModelId, DesignParams, EffectSpec, SizeLevel};
use crate::error::{FieldError, PumpError, Result};
use crate::mtp::MtpId;
use crate::sampler::{exchangeable, CorrFactor};

pub const DEFAULT_TNUM: usize = 10_000;
pub const DEFAULT_B: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerOutcome {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_m: Option<String>,
    #[serde(rename = "MTP", default, skip_serializing_if = "Option::is_none")]
    pub mtp: Option<OneOrMany>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(rename = "MDES", default, skip_serializing_if = "Option::is_none")]
    pub mdes: Option<PerOutcome>,
    #[serde(rename = "numZero", default, skip_serializing_if = "Option::is_none")]
    pub num_zero: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nbar: Option<u32>,
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub j: Option<u32>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(rename = "Tbar", default, skip_serializing_if = "Option::is_none")]
    pub tbar: Option<f64>,
    #[serde(rename = "numCovar.1", default, skip_serializing_if = "Option::is_none")]
    pub num_covar_1: Option<u32>,
    #[serde(rename = "numCovar.2", default, skip_serializing_if = "Option::is_none")]
    pub num_covar_2: Option<u32>,
    #[serde(rename = "numCovar.3", default, skip_serializing_if = "Option::is_none")]
    pub num_covar_3: Option<u32>,
    #[serde(rename = "R2.1", default, skip_serializing_if = "Option::is_none")]
    pub r2_1: Option<PerOutcome>,
    #[serde(rename = "R2.2", default, skip_serializing_if = "Option::is_none")]
    pub r2_2: Option<PerOutcome>,
    #[serde(rename = "R2.3", default, skip_serializing_if = "Option::is_none")]
    pub r2_3: Option<PerOutcome>,
    #[serde(rename = "ICC.2", default, skip_serializing_if = "Option::is_none")]
    pub icc_2: Option<PerOutcome>,
    #[serde(rename = "ICC.3", default, skip_serializing_if = "Option::is_none")]
    pub icc_3: Option<PerOutcome>,
    #[serde(rename = "omega.2", default, skip_serializing_if = "Option::is_none")]
    pub omega_2: Option<PerOutcome>,
    #[serde(rename = "omega.3", default, skip_serializing_if = "Option::is_none")]
    pub omega_3: Option<PerOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<RhoSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(rename = "two.tailed", default, skip_serializing_if = "Option::is_none")]
    pub two_tailed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tnum: Option<usize>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
}

/// Every key a power request accepts, in canonical order.
pub const POWER_KEYS: [&str; 24] = [
    "d_m", "MTP", "M", "MDES", "numZero", "nbar", "J", "K", "Tbar", "numCovar.1", "numCovar.2",
    "numCovar.3", "R2.1", "R2.2", "R2.3", "ICC.2", "ICC.3", "omega.2", "omega.3", "rho", "alpha",
    "two.tailed", "tnum", "B",
];

/// Which quantity a request leaves open for a search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Searched {
    Nothing,
    Mdes,
    Size(SizeLevel),
}

/// Validated request with every per-outcome field broadcast to length M.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckedRequest {
    pub design: DesignModelId,
    pub params: DesignParams,
    pub effect: EffectSpec,
    /// Requested procedures in request order, without duplicates or `None`.
    pub mtps: Vec<MtpId>,
    /// Row-major M x M test-statistic correlation.
    pub rho: Vec<f64>,
    pub tnum: usize,
    pub b: usize,
}

/// Maps a serde error onto a field-level validation error.
pub(crate) fn serde_field_error(err: &serde_json::Error) -> PumpError {
    let msg = err.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.starts_with("unknown field"))
        .map(|f| f.to_string())
        .unwrap_or_else(|| "body".to_string());
    let message = if msg.starts_with("unknown field") {
        format!("unknown parameter `{field}`")
    } else {
        msg
    };
    PumpError::Validation(vec![FieldError::new(field, message)])
}

impl PowerRequest {
    pub fn from_value(v: &Value) -> Result<PowerRequest> {
        if !v.is_object() {
            return Err(PumpError::field("body", "request must be a JSON object"));
        }
        serde_json::from_value(v.clone()).map_err(|e| serde_field_error(&e))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("request serializes")
    }

    pub fn check(&self) -> Result<CheckedRequest> {
        self.check_for(Searched::Nothing)
    }

    /// Validates the request, leaving `searched` to be filled in by a search.
    pub fn check_for(&self, searched: Searched) -> Result<CheckedRequest> {
        let mut errs: Vec<FieldError> = Vec::new();
        let design = match &self.d_m {
            None => {
                errs.push(FieldError::new("d_m", "design/model code is required"));
                None
            }
            Some(code) => match DesignModelId::parse(code) {
                Ok(d) => Some(d),
                Err(PumpError::Validation(mut e)) => {
                    errs.append(&mut e);
                    None
                }
                Err(e) => return Err(e),
            },
        };
        let m = self.m.unwrap_or(1);
        if m == 0 {
            return Err(PumpError::field("M", "M must be at least 1"));
        }
        let num_zero = self.num_zero.unwrap_or(0);
        if num_zero > m {
            errs.push(FieldError::new("numZero", format!("numZero must be in [0, {m}]")));
        }

        let mut broadcast = |name: &str, v: &Option<PerOutcome>| -> Vec<f64> {
            match v {
                None => vec![0.0; m],
                Some(PerOutcome::Scalar(x)) => vec![*x; m],
                Some(PerOutcome::Vector(xs)) if xs.len() == m => xs.clone(),
                Some(PerOutcome::Vector(xs)) => {
                    errs.push(FieldError::new(
                        name,
                        format!("expected a scalar or {m} values (one per outcome), got {}", xs.len()),
                    ));
                    vec![0.0; m]
                }
            }
        };
        let r2_1 = broadcast("R2.1", &self.r2_1);
        let r2_2 = broadcast("R2.2", &self.r2_2);
        let r2_3 = broadcast("R2.3", &self.r2_3);
        let icc_2 = broadcast("ICC.2", &self.icc_2);
        let icc_3 = broadcast("ICC.3", &self.icc_3);
        let omega_2 = broadcast("omega.2", &self.omega_2);
        let omega_3 = broadcast("omega.3", &self.omega_3);

        let nonzero = m.saturating_sub(num_zero);
        let mdes = match (searched, &self.mdes) {
            (Searched::Mdes, Some(_)) => {
                errs.push(FieldError::new("MDES", "MDES is the searched quantity and must be absent"));
                vec![0.0; m]
            }
            (Searched::Mdes, None) => placeholder_mdes(m, nonzero),
            (_, None) => {
                errs.push(FieldError::new("MDES", "MDES is required"));
                vec![0.0; m]
            }
            (_, Some(PerOutcome::Scalar(x))) => placeholder_mdes(m, nonzero).iter().map(|v| v * x).collect(),
            (_, Some(PerOutcome::Vector(xs))) if xs.len() == m => {
                if xs[nonzero..].iter().any(|v| *v != 0.0) {
                    errs.push(FieldError::new(
                        "MDES",
                        format!("the last numZero = {num_zero} entries must be zero (or give {nonzero} values)"),
                    ));
                }
                xs.clone()
            }
            (_, Some(PerOutcome::Vector(xs))) if num_zero > 0 && xs.len() == nonzero => {
                let mut v = xs.clone();
                v.resize(m, 0.0);
                v
            }
            (_, Some(PerOutcome::Vector(xs))) => {
                errs.push(FieldError::new(
                    "MDES",
                    format!("expected a scalar, {m} values, or M - numZero = {nonzero} values; got {}", xs.len()),
                ));
                vec![0.0; m]
            }
        };

        let mtps = match &self.mtp {
            None => Vec::new(),
            Some(spec) => {
                let names: Vec<&String> = match spec {
                    OneOrMany::One(s) => vec![s],
                    OneOrMany::Many(v) => v.iter().collect(),
                };
                let mut out = Vec::new();
                for n in names {
                    match MtpId::parse(n) {
                        Some(MtpId::None) => {}
                        Some(id) if !out.contains(&id) => out.push(id),
                        Some(_) => {}
                        None => errs.push(FieldError::new(
                            "MTP",
                            format!("unknown procedure `{n}` (expected None, BF, HO, BH, WY-SS, WY-SD)"),
                        )),
                    }
                }
                out
            }
        };

        let rho = match &self.rho {
            None if m > 1 => {
                errs.push(FieldError::new("rho", "rho is required when M > 1"));
                exchangeable(m, 0.0)
            }
            None => exchangeable(m, 0.0),
            Some(RhoSpec::Scalar(r)) => {
                if !(-1.0..=1.0).contains(r) {
                    errs.push(FieldError::new("rho", "rho must be in [-1, 1]"));
                }
                exchangeable(m, *r)
            }
            Some(RhoSpec::Matrix(rows)) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    errs.push(FieldError::new("rho", format!("rho matrix must be {m}x{m}")));
                    exchangeable(m, 0.0)
                } else {
                    rows.concat()
                }
            }
        };
        if errs.iter().all(|e| e.field != "rho") {
            match CorrFactor::new(&rho, m) {
                Ok(_) => {}
                Err(PumpError::Validation(mut e)) => errs.append(&mut e),
                Err(e) => errs.push(FieldError::new("rho", e.to_string())),
            }
        }

        let levels = design.map_or(3, |d| d.levels());
        let size = |name: &str, v: Option<u32>, needed: bool, errs: &mut Vec<FieldError>| -> u32 {
            let is_searched = matches!(searched, Searched::Size(l) if l.name() == name);
            match v {
                _ if is_searched => PLACEHOLDER_SIZE,
                Some(x) => x,
                None if needed => {
                    errs.push(FieldError::new(name, format!("{name} is required for this design")));
                    1
                }
                None => 1,
            }
        };
        let nbar = size("nbar", self.nbar, true, &mut errs);
        let j = size("J", self.j, levels >= 2, &mut errs);
        let k = size("K", self.k, levels >= 3, &mut errs);
        if let (Searched::Size(level), Some(d)) = (searched, design) {
            if !d.size_levels().contains(&level) {
                errs.push(FieldError::new(
                    "typesample",
                    format!("{} is not a sample-size dimension of {}", level.name(), d.code()),
                ));
            }
        }

        let tnum = self.tnum.unwrap_or(DEFAULT_TNUM);
        if tnum == 0 {
            errs.push(FieldError::new("tnum", "tnum must be at least 1"));
        }
        let b = self.b.unwrap_or(DEFAULT_B);
        if b == 0 {
            errs.push(FieldError::new("B", "B must be at least 1"));
        }

        let params = DesignParams {
            m,
            nbar,
            j,
            k,
            tbar: self.tbar.unwrap_or(0.5),
            num_covar_1: self.num_covar_1.unwrap_or(0),
            num_covar_2: self.num_covar_2.unwrap_or(0),
            num_covar_3: self.num_covar_3.unwrap_or(0),
            r2_1,
            r2_2,
            r2_3,
            icc_2,
            icc_3,
            omega_2,
            omega_3,
            alpha: self.alpha.unwrap_or(0.05),
            two_sided: self.two_tailed.unwrap_or(true),
        };
        let effect = EffectSpec { mdes, num_zero };
        if let Some(d) = design {
            if let Err(mut e) = design::validate(d, &params, &effect) {
                errs.retain(|x| !e.contains(x));
                errs.append(&mut e);
            }
        }
        if !errs.is_empty() {
            return Err(PumpError::Validation(errs));
        }
        Ok(CheckedRequest {
            design: design.expect("no errors implies a design"),
            params,
            effect,
            mtps,
            rho,
            tnum,
            b,
        })
    }
}

/// Stand-in for the searched size during validation.
const PLACEHOLDER_SIZE: u32 = 10_000;

fn placeholder_mdes(m: usize, nonzero: usize) -> Vec<f64> {
    (0..m).map(|i| if i < nonzero { 1.0 } else { 0.0 }).collect()
}

impl CheckedRequest {
    /// The resolved request in wire spelling, every default made explicit.
    pub fn to_wire(&self) -> Value {
        let p = &self.params;
        let m = p.m;
        let rho: Vec<Vec<f64>> = self.rho.chunks(m).map(<[f64]>::to_vec).collect();
        let mut mtp: Vec<&str> = vec!["None"];
        mtp.extend(self.mtps.iter().map(|x| x.code()));
        let mut out = Map::new();
        out.insert("d_m".into(), json!(self.design.code()));
        out.insert("MTP".into(), json!(mtp));
        out.insert("M".into(), json!(m));
        out.insert("MDES".into(), json!(self.effect.mdes));
        out.insert("numZero".into(), json!(self.effect.num_zero));
        out.insert("nbar".into(), json!(p.nbar));
        out.insert("J".into(), json!(p.j));
        out.insert("K".into(), json!(p.k));
        out.insert("Tbar".into(), json!(p.tbar));
        out.insert("numCovar.1".into(), json!(p.num_covar_1));
        out.insert("numCovar.2".into(), json!(p.num_covar_2));
        out.insert("numCovar.3".into(), json!(p.num_covar_3));
        out.insert("R2.1".into(), json!(p.r2_1));
        out.insert("R2.2".into(), json!(p.r2_2));
        out.insert("R2.3".into(), json!(p.r2_3));
        out.insert("ICC.2".into(), json!(p.icc_2));
        out.insert("ICC.3".into(), json!(p.icc_3));
        out.insert("omega.2".into(), json!(p.omega_2));
        out.insert("omega.3".into(), json!(p.omega_3));
        out.insert("rho".into(), json!(rho));
        out.insert("alpha".into(), json!(p.alpha));
        out.insert("two.tailed".into(), json!(p.two_sided));
        out.insert("tnum".into(), json!(self.tnum));
        out.insert("B".into(), json!(self.b));
        Value::Object(out)
    }

    /// Procedures in table order: `None` first, then the request order.
    pub fn table_mtps(&self) -> Vec<MtpId> {
        let mut v = vec![MtpId::None];
        v.extend(self.mtps.iter().copied());
        v
    }

    pub fn needs_nulls(&self) -> bool {
        self.mtps.iter().any(|m| m.needs_nulls())
    }

    /// MDES vector with `value` on every non-zeroed outcome.
    pub fn with_mdes(&self, value: f64) -> CheckedRequest {
        let mut out = self.clone();
        let nonzero = self.params.m - self.effect.num_zero;
        for (i, v) in out.effect.mdes.iter_mut().enumerate() {
            *v = if i < nonzero { value } else { 0.0 };
        }
        out
    }

    pub fn with_size(&self, level: SizeLevel, value: u32) -> CheckedRequest {
        let mut out = self.clone();
        out.params.set_size(level, value);
        out
    }
}
