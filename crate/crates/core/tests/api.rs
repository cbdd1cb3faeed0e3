use pump_core::api::{run, Kind};
use serde_json::{json, Value};

fn table_body() -> Value {
    json!({
        "d_m": "d3.2_m3fc2rc", "MTP": "HO", "M": 5, "MDES": 0.125, "J": 3, "K": 21, "nbar": 258,
        "numCovar.1": 5, "numCovar.2": 3, "R2.1": 0.1, "R2.2": 0.7, "ICC.2": 0.05, "ICC.3": 0.4,
        "rho": 0.4, "tnum": 2000
    })
}

#[test]
fn identical_envelopes_give_identical_bytes() {
    let a = run(Kind::Power, &table_body()).unwrap().render();
    let b = run(Kind::Power, &table_body()).unwrap().render();
    assert_eq!(a, b);
}

#[test]
fn response_replays_from_echoed_request() {
    let first = run(Kind::Power, &table_body()).unwrap().json;
    let mut replay = first["request"].clone();
    replay["seed"] = first["seed"].clone();
    let second = run(Kind::Power, &replay).unwrap().json;
    assert_eq!(first, second);
}

#[test]
fn power_table_has_none_and_ho_rows() {
    let v = run(Kind::Power, &table_body()).unwrap().json;
    let rows = v["result"]["rows"].as_array().unwrap();
    assert_eq!(rows[0]["MTP"], "None");
    assert_eq!(rows[1]["MTP"], "HO");
    assert!(rows[0].get("min1").is_none());
    assert!(rows[1]["complete"]["value"].as_f64().unwrap() < rows[1]["min1"]["value"].as_f64().unwrap());
}

#[test]
fn seed_changes_results() {
    let mut b = table_body();
    b["seed"] = json!(1);
    let a = run(Kind::Power, &b).unwrap().json;
    b["seed"] = json!(2);
    let c = run(Kind::Power, &b).unwrap().json;
    assert_ne!(a["result"], c["result"]);
}

#[test]
fn sample_search_reports_integer_size() {
    let mut b = table_body();
    b.as_object_mut().unwrap().remove("K");
    b["typesample"] = json!("K");
    b["start.tnum"] = json!(500);
    b["tnum"] = json!(1000);
    b["final.tnum"] = json!(2000);
    let r = run(Kind::Sample, &b).unwrap();
    let k = &r.json["result"]["value"];
    assert!(k.is_u64(), "{k}");
    assert_eq!(r.json["goal"]["typesample"], "K");
}

#[test]
fn unknown_key_is_rejected_with_field() {
    let mut b = table_body();
    b["ICC2"] = json!(0.1);
    let e = run(Kind::Power, &b).unwrap_err();
    assert_eq!(e.status, 400);
    assert!(e.body["error"]["fields"].as_array().unwrap().iter().any(|f| f["field"] == "ICC2"));
}

#[test]
fn validate_report_is_json() {
    let body = json!({"d_m": "d2.1_m2fc", "M": 2, "MDES": 0.2, "J": 20, "nbar": 30, "rho": 0.3,
        "MTP": "HO", "S": 60, "tnum": 2000});
    let v = run(Kind::Validate, &body).unwrap().json;
    assert_eq!(v["result"]["S"], 60);
    assert!(v["result"]["comparisons"].as_array().unwrap().len() > 2);
}
