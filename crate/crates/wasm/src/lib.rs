//! Browser bindings. Each export takes and returns JSON text; the plain
//! functions underneath are what the tests exercise.

use pump_core::api::{self, ApiError, Kind};
use pump_core::explore::{run_grid, GridSpec};
use pump_core::{MtpId, PowerDefinition};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn parse(text: &str) -> Result<Value, String> {
    serde_json::from_str(text).map_err(|e| api::malformed(&e).body.to_string())
}

/// Runs one request kind and returns the response document.
pub fn run_kind(kind: &str, body: &str) -> Result<String, String> {
    let kind = Kind::parse(kind).ok_or_else(|| json!({"error": {"kind": "unknown_kind", "message": kind}}).to_string())?;
    let body = parse(body)?;
    api::run(kind, &body).map(|r| r.json.to_string()).map_err(|e| e.body.to_string())
}

/// Grid over ICC.2 x ICC.3 reshaped for a heatmap: `values[i][j]` is the
/// power at `icc2[i]`, `icc3[j]`, or null for an invalid cell.
pub fn heatmap(base: &str, icc2: &[f64], icc3: &[f64], mtp: &str, definition: &str) -> Result<String, String> {
    let mut base = parse(base)?;
    let obj = base.as_object_mut().ok_or_else(|| "base must be a JSON object".to_string())?;
    let seed = obj.remove("seed").and_then(|v| v.as_u64()).unwrap_or(api::DEFAULT_SEED);
    let m = obj.get("M").and_then(Value::as_u64).unwrap_or(1) as usize;
    let mtp_id = MtpId::parse(mtp).ok_or_else(|| format!("unknown MTP `{mtp}`"))?;
    let def = PowerDefinition::parse(definition, m).map_err(|e| e.to_string())?;
    let spec = GridSpec::from_value(&json!({"base": base, "vary": {"ICC.2": icc2, "ICC.3": icc3}}))
        .map_err(|e| ApiError::from(e).body.to_string())?;
    let grid = run_grid(&spec, seed).map_err(|e| ApiError::from(e).body.to_string())?;
    let mut values = vec![vec![Value::Null; icc3.len()]; icc2.len()];
    for (idx, cell) in grid.cells.iter().enumerate() {
        if let Some(c) = cell.table.as_ref().and_then(|t| t.get(mtp_id, def)) {
            values[idx / icc3.len()][idx % icc3.len()] = json!(c.value);
        }
    }
    Ok(json!({
        "icc2": icc2, "icc3": icc3, "MTP": mtp_id.code(), "definition": def.label(), "seed": seed, "values": values
    })
    .to_string())
}

#[wasm_bindgen(js_name = powerTable)]
pub fn power_table(body: &str) -> Result<String, JsError> {
    run_kind("power", body).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = mdesSearch)]
pub fn mdes_search(body: &str) -> Result<String, JsError> {
    run_kind("mdes", body).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = iccHeatmap)]
pub fn icc_heatmap(base: &str, icc2: Vec<f64>, icc3: Vec<f64>, mtp: &str, definition: &str) -> Result<String, JsError> {
    heatmap(base, &icc2, &icc3, mtp, definition).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = engineVersion)]
pub fn engine_version() -> String {
    pump_core::ENGINE_VERSION.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Value {
        json!({"d_m": "d2.1_m2fc", "M": 3, "MDES": 0.125, "J": 30, "nbar": 50, "rho": 0.5, "MTP": "HO", "tnum": 400})
    }

    #[test]
    fn power_table_matches_api() {
        let text = run_kind("power", &base().to_string()).unwrap();
        let direct = api::run(Kind::Power, &base()).unwrap().json;
        assert_eq!(serde_json::from_str::<Value>(&text).unwrap(), direct);
    }

    #[test]
    fn errors_are_json() {
        let e = run_kind("power", r#"{"d_m": "d2.1_m2fc", "Tbar": 1.3}"#).unwrap_err();
        let v: Value = serde_json::from_str(&e).unwrap();
        assert_eq!(v["error"]["kind"], "validation");
        assert!(run_kind("plot", "{}").is_err());
        assert!(run_kind("power", "{oops").is_err());
    }

    #[test]
    fn heatmap_shape_and_invalid_cells() {
        let out = heatmap(&base().to_string(), &[0.0, 0.3, 0.6], &[0.0, 0.5], "HO", "D1indiv").unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        let values = v["values"].as_array().unwrap();
        assert_eq!(values.len(), 3);
        assert!(values.iter().all(|r| r.as_array().unwrap().len() == 2));
        // d2.1 has no district level, so any nonzero ICC.3 is rejected
        assert!(values.iter().all(|r| r[1].is_null()));
        // school fixed effects absorb ICC.2, leaving less level-1 noise
        assert!(values[2][0].as_f64().unwrap() > values[0][0].as_f64().unwrap());
    }

    #[test]
    fn heatmap_cell_equals_direct_power() {
        let out = heatmap(&base().to_string(), &[0.2], &[0.0], "HO", "min1").unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        let mut b = base();
        b["ICC.2"] = json!(0.2);
        b["ICC.3"] = json!(0.0);
        let direct = api::run(Kind::Power, &b).unwrap().json;
        assert_eq!(v["values"][0][0], direct["result"]["rows"][1]["min1"]["value"]);
    }
}
