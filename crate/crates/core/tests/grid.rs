use pump_core::explore::{expand_grid, run_grid, CellStatus, GridSpec};
use pump_core::{MtpId, PowerDefinition};
use serde_json::{json, Value};

fn base() -> Value {
    json!({
        "d_m": "d3.2_m3fc2rc", "MTP": ["BF", "WY-SD"], "M": 5, "MDES": 0.125, "J": 3, "K": 15,
        "nbar": 258, "R2.1": 0.1, "R2.2": 0.7, "ICC.2": 0.05, "ICC.3": 0.4, "rho": 0.4,
        "numCovar.1": 5, "numCovar.2": 3, "tnum": 2000, "B": 2000
    })
}

fn spec(base: Value, vary: Value) -> GridSpec {
    GridSpec::from_value(&json!({"base": base, "vary": vary})).unwrap()
}

fn steps(from: f64, to: f64, by: f64) -> Vec<f64> {
    let n = ((to - from) / by).round() as usize;
    (0..=n).map(|i| ((from + i as f64 * by) * 1e6).round() / 1e6).collect()
}

#[test]
fn icc_grid_has_28_cells_with_invalid_corner_flagged() {
    let mut b = base();
    b["MTP"] = json!("HO");
    b["tnum"] = json!(300);
    let g = spec(b, json!({"ICC.2": steps(0.0, 0.3, 0.05), "ICC.3": steps(0.0, 0.6, 0.2)}));
    assert_eq!(expand_grid(&g).unwrap().len(), 28);
    let res = run_grid(&g, 1).unwrap();
    assert_eq!(res.cells.len(), 28);
    for c in &res.cells {
        let sum = c.coords[0].as_f64().unwrap() + c.coords[1].as_f64().unwrap();
        let expect = if sum >= 1.0 { CellStatus::Invalid } else { CellStatus::Ok };
        assert_eq!(c.status, expect, "{:?}", c.coords);
    }
    let rows = res.long_rows();
    let ok_cells = res.cells.iter().filter(|c| c.status == CellStatus::Ok).count();
    let d1 = rows.iter().filter(|r| r.mtp.as_deref() == Some("HO") && r.definition.as_deref() == Some("D1indiv")).count();
    assert_eq!(d1, ok_cells);
}

#[test]
fn complete_power_rises_with_rho() {
    let g = spec(base(), json!({"rho": steps(0.0, 0.9, 0.15)}));
    let res = run_grid(&g, 2).unwrap();
    for mtp in [MtpId::Bonferroni, MtpId::WestfallYoungStepDown] {
        let series: Vec<_> = res
            .cells
            .iter()
            .map(|c| c.table.as_ref().unwrap().get(mtp, PowerDefinition::Complete).unwrap())
            .collect();
        for w in series.windows(2) {
            let slack = 3.0 * (w[0].mc_se.powi(2) + w[1].mc_se.powi(2)).sqrt();
            assert!(w[1].value >= w[0].value - slack, "{mtp:?}: {} then {}", w[0].value, w[1].value);
        }
        assert!(series.last().unwrap().value > series[0].value);
    }
}

#[test]
fn complete_power_only_without_null_outcomes() {
    let g = spec(base(), json!({"numZero": [0, 1, 2, 3, 4]}));
    let res = run_grid(&g, 3).unwrap();
    for (i, c) in res.cells.iter().enumerate() {
        let t = c.table.as_ref().unwrap();
        let complete = t.get(MtpId::Bonferroni, PowerDefinition::Complete);
        assert_eq!(complete.is_some(), i == 0, "numZero {i}");
    }
}

#[test]
fn same_seed_same_table_and_cells_independent_of_siblings() {
    let a = run_grid(&spec(base(), json!({"J": [3, 4]})), 9).unwrap();
    let b = run_grid(&spec(base(), json!({"J": [3, 4]})), 9).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let wider = run_grid(&spec(base(), json!({"J": [2, 3, 4]})), 9).unwrap();
    assert_eq!(a.cells[0].table, wider.cells[1].table);
    assert_eq!(a.cells[1].table, wider.cells[2].table);
}
