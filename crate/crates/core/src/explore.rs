//! Parameter updates and grid sweeps over power requests.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::engine::{pump_power, PowerTable};
use crate::error::{FieldError, PumpError, Result};
use crate::request::{serde_field_error, PowerRequest};
use crate::seed::{derive, fnv1a};

/// Cell tnum used by grids whose base request does not set one.
pub const GRID_DEFAULT_TNUM: usize = 1000;
const STREAM_GRID: u64 = 0x6772_6964;

/// Applies `changes` on top of `base`, key by key. A `null` change removes
/// the key. Keys outside `allowed` are rejected.
pub fn update_object(base: &Value, changes: &Value, allowed: &[&str]) -> Result<Value> {
    let (Some(b), Some(c)) = (base.as_object(), changes.as_object()) else {
        return Err(PumpError::field("body", "request and changes must be JSON objects"));
    };
    let unknown: Vec<FieldError> = c
        .keys()
        .filter(|k| !allowed.contains(&k.as_str()))
        .map(|k| FieldError::new(k.clone(), format!("unknown parameter `{k}`")))
        .collect();
    if !unknown.is_empty() {
        return Err(PumpError::Validation(unknown));
    }
    let mut out = b.clone();
    for (k, v) in c {
        if v.is_null() {
            out.remove(k);
        } else {
            out.insert(k.clone(), v.clone());
        }
    }
    Ok(Value::Object(out))
}

/// A new power request equal to `base` with `changes` applied.
pub fn update_request(base: &PowerRequest, changes: &Value) -> Result<PowerRequest> {
    let merged = update_object(&base.to_value(), changes, &crate::request::POWER_KEYS)?;
    PowerRequest::from_value(&merged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub base: Value,
    /// Parameter name to the list of values it takes; declaration order is
    /// kept, the first parameter varies slowest.
    pub vary: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_ms: Option<u64>,
}

impl GridSpec {
    pub fn from_value(v: &Value) -> Result<GridSpec> {
        serde_json::from_value(v.clone()).map_err(|e| serde_field_error(&e))
    }

    pub fn params(&self) -> Vec<String> {
        self.vary.keys().cloned().collect()
    }

    fn axes(&self) -> Result<Vec<(String, Vec<Value>)>> {
        let mut errs = Vec::new();
        let mut axes = Vec::new();
        for (k, v) in &self.vary {
            if !crate::request::POWER_KEYS.contains(&k.as_str()) {
                errs.push(FieldError::new(k.clone(), format!("unknown parameter `{k}`")));
                continue;
            }
            match v.as_array() {
                Some(vals) if !vals.is_empty() => axes.push((k.clone(), vals.clone())),
                _ => errs.push(FieldError::new(k.clone(), "grid values must be a non-empty list")),
            }
        }
        if errs.is_empty() {
            Ok(axes)
        } else {
            Err(PumpError::Validation(errs))
        }
    }
}

/// Every combination of the varied values, row-major.
pub fn expand_grid(spec: &GridSpec) -> Result<Vec<Vec<Value>>> {
    let axes = spec.axes()?;
    let mut cells: Vec<Vec<Value>> = vec![Vec::new()];
    for (_, vals) in &axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                vals.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Invalid,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub coords: Vec<Value>,
    pub status: CellStatus,
    pub message: Option<String>,
    pub seed: u64,
    pub table: Option<PowerTable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub params: Vec<String>,
    pub cells: Vec<GridCell>,
}

/// One long-format row: a cell, a procedure, a power definition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongRow {
    pub coords: Vec<Value>,
    #[serde(rename = "MTP")]
    pub mtp: Option<String>,
    pub definition: Option<String>,
    pub value: Option<f64>,
    pub mc_se: Option<f64>,
    pub status: CellStatus,
}

fn cell_seed(seed: u64, coords: &[Value], singleton: bool) -> u64 {
    if singleton {
        return seed;
    }
    let key = serde_json::to_string(coords).expect("coordinates serialize");
    derive(seed, STREAM_GRID, fnv1a(key.as_bytes()))
}

/// Runs the power engine on every grid cell.
///
/// Invalid combinations become `invalid` cells rather than failing the grid.
/// Once `budget_ms` has elapsed the remaining cells are marked `skipped`.
pub fn run_grid(spec: &GridSpec, seed: u64) -> Result<GridResult> {
    let params = spec.params();
    let cells = expand_grid(spec)?;
    let mut base = spec.base.clone();
    let Some(obj) = base.as_object_mut() else {
        return Err(PumpError::field("base", "base must be a JSON object"));
    };
    obj.entry("tnum").or_insert(Value::from(GRID_DEFAULT_TNUM));
    // a bad base is an error for the whole grid, not per cell
    PowerRequest::from_value(&base)?;

    // only read the clock under a budget
    let deadline = spec.budget_ms.map(|ms| (Instant::now(), Duration::from_millis(ms)));
    let singleton = cells.len() == 1;
    let mut out = Vec::with_capacity(cells.len());
    for coords in cells {
        let seed = cell_seed(seed, &coords, singleton);
        if deadline.is_some_and(|(start, b)| start.elapsed() >= b) {
            out.push(GridCell { coords, status: CellStatus::Skipped, message: Some("time budget exhausted".into()), seed, table: None });
            continue;
        }
        let changes: Map<String, Value> = params.iter().cloned().zip(coords.iter().cloned()).collect();
        let result = update_object(&base, &Value::Object(changes), &crate::request::POWER_KEYS)
            .and_then(|v| PowerRequest::from_value(&v))
            .and_then(|r| r.check())
            .and_then(|r| pump_power(&r, seed));
        out.push(match result {
            Ok(table) => GridCell { coords, status: CellStatus::Ok, message: None, seed, table: Some(table) },
            Err(e) => GridCell { coords, status: CellStatus::Invalid, message: Some(e.to_string()), seed, table: None },
        });
    }
    Ok(GridResult { params, cells: out })
}

impl GridResult {
    pub fn long_rows(&self) -> Vec<LongRow> {
        let mut rows = Vec::new();
        for cell in &self.cells {
            match &cell.table {
                Some(t) => {
                    for r in &t.rows {
                        for (def, c) in r.cells() {
                            rows.push(LongRow {
                                coords: cell.coords.clone(),
                                mtp: Some(r.mtp.code().to_string()),
                                definition: Some(def.label()),
                                value: Some(c.value),
                                mc_se: Some(c.mc_se),
                                status: cell.status,
                            });
                        }
                    }
                }
                None => rows.push(LongRow {
                    coords: cell.coords.clone(),
                    mtp: None,
                    definition: None,
                    value: None,
                    mc_se: None,
                    status: cell.status,
                }),
            }
        }
        rows
    }

    pub fn to_json(&self) -> Value {
        let cells: Vec<Value> = self
            .cells
            .iter()
            .map(|c| {
                serde_json::json!({
                    "coords": c.coords,
                    "status": c.status,
                    "message": c.message,
                    "seed": c.seed,
                    "result": c.table.as_ref().map(PowerTable::to_json),
                })
            })
            .collect();
        serde_json::json!({ "params": self.params, "cells": cells })
    }

    /// Long-format CSV: one column per varied parameter, then
    /// `MTP,definition,value,mc_se,status`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.params.clone();
        header.extend(["MTP", "definition", "value", "mc_se", "status"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for r in self.long_rows() {
            let mut rec: Vec<String> = r.coords.iter().map(scalar_text).collect();
            rec.push(r.mtp.unwrap_or_default());
            rec.push(r.definition.unwrap_or_default());
            rec.push(r.value.map(|v| v.to_string()).unwrap_or_default());
            rec.push(r.mc_se.map(|v| v.to_string()).unwrap_or_default());
            rec.push(serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
            w.write_record(&rec).map_err(csv_err)?;
        }
        into_string(w)
    }
}

/// Cell text for a JSON value: bare strings and numbers, JSON for the rest.
pub fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub(crate) fn csv_err(e: csv::Error) -> PumpError {
    PumpError::Degenerate(format!("csv output failed: {e}"))
}

pub(crate) fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| PumpError::Degenerate(format!("csv output failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({"d_m": "d2.1_m2fc", "MTP": "BF", "M": 2, "MDES": 0.2, "nbar": 30, "J": 20,
               "R2.1": 0.1, "ICC.2": 0.1, "rho": 0.3, "tnum": 400})
    }

    #[test]
    fn update_replaces_and_removes() {
        let r = PowerRequest::from_value(&base()).unwrap();
        let u = update_request(&r, &json!({"J": 40, "R2.1": null})).unwrap();
        assert_eq!(u.j, Some(40));
        assert_eq!(u.r2_1, None);
        assert_eq!(u.nbar, Some(30));
        assert!(update_request(&r, &json!({"Jay": 3})).unwrap_err().is_validation());
    }

    #[test]
    fn grid_is_row_major() {
        let spec = GridSpec::from_value(&json!({"base": base(), "vary": {"J": [10, 20], "MDES": [0.1, 0.2, 0.3]}})).unwrap();
        let cells = expand_grid(&spec).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0], vec![json!(10), json!(0.1)]);
        assert_eq!(cells[1], vec![json!(10), json!(0.2)]);
        assert_eq!(cells[3], vec![json!(20), json!(0.1)]);
    }

    #[test]
    fn invalid_cells_do_not_fail_the_grid() {
        let spec = GridSpec::from_value(&json!({"base": base(), "vary": {"ICC.2": [0.1, 1.5]}})).unwrap();
        let g = run_grid(&spec, 3).unwrap();
        assert_eq!(g.cells[0].status, CellStatus::Ok);
        assert_eq!(g.cells[1].status, CellStatus::Invalid);
        let csv = g.to_csv().unwrap();
        let first = csv.lines().next().unwrap();
        assert_eq!(first, "ICC.2,MTP,definition,value,mc_se,status");
        assert!(csv.lines().last().unwrap().ends_with(",invalid"));
    }

    #[test]
    fn singleton_grid_matches_direct_call() {
        let spec = GridSpec::from_value(&json!({"base": base(), "vary": {"J": [20]}})).unwrap();
        let g = run_grid(&spec, 11).unwrap();
        let direct = pump_power(&PowerRequest::from_value(&base()).unwrap().check().unwrap(), 11).unwrap();
        assert_eq!(g.cells[0].table.as_ref().unwrap(), &direct);
    }

    #[test]
    fn grid_default_tnum_applies_only_when_unset() {
        let mut b = base();
        b.as_object_mut().unwrap().remove("tnum");
        let spec = GridSpec::from_value(&json!({"base": b, "vary": {"J": [20]}})).unwrap();
        assert_eq!(run_grid(&spec, 1).unwrap().cells[0].table.as_ref().unwrap().tnum, GRID_DEFAULT_TNUM);
    }

    #[test]
    fn zero_budget_skips_everything() {
        let spec = GridSpec::from_value(&json!({"base": base(), "vary": {"J": [10, 20]}, "budget_ms": 0})).unwrap();
        let g = run_grid(&spec, 1).unwrap();
        assert!(g.cells.iter().all(|c| c.status == CellStatus::Skipped));
    }

    #[test]
    fn unknown_grid_parameter_rejected() {
        let spec = GridSpec::from_value(&json!({"base": base(), "vary": {"ICC2": [0.1]}})).unwrap();
        assert_eq!(run_grid(&spec, 1).unwrap_err().to_string().contains("ICC2"), true);
    }
}
