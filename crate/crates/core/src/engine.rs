//! Power by direct sampling of test statistics: draw correlated t statistics
//! under the alternative, convert to raw p-values, adjust, count rejections.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};

use crate::design::{degrees_of_freedom, standard_error, DesignModelId};
use crate::error::{PumpError, Result};
use crate::mtp::{adjust_matrix, MtpId, NullBatch, NullStatisticSource};
use crate::request::CheckedRequest;
use crate::sampler::{raw_pvalues, rejections, sample_alternative, AlternativeSpec, StatMatrix};
use crate::seed::{derive, STREAM_NULL};

/// A power definition. Outcome and `d` indices are 1-based, as spelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PowerDefinition {
    Indiv(usize),
    IndivMean,
    Min(usize),
    Complete,
}

impl PowerDefinition {
    /// Parses `D<m>indiv`, `indiv.mean` (or `mean`), `min<d>`, `complete`, and
    /// fractional `<a>/<b>-minimal`, which maps to `d = ceil(a/b * M)`.
    pub fn parse(s: &str, m: usize) -> Result<PowerDefinition> {
        let bad = || {
            PumpError::field(
                "power.definition",
                format!("unknown power definition `{s}` (expected D<m>indiv, indiv.mean, min<d>, complete, or a/b-minimal)"),
            )
        };
        let def = if s == "complete" {
            PowerDefinition::Complete
        } else if s == "indiv.mean" || s == "mean" {
            PowerDefinition::IndivMean
        } else if let Some(rest) = s.strip_prefix('D').and_then(|r| r.strip_suffix("indiv")) {
            PowerDefinition::Indiv(rest.parse().map_err(|_| bad())?)
        } else if let Some(rest) = s.strip_prefix("min") {
            PowerDefinition::Min(rest.parse().map_err(|_| bad())?)
        } else if let Some(frac) = s.strip_suffix("-minimal") {
            let (a, b) = frac.split_once('/').ok_or_else(bad)?;
            let a: f64 = a.parse().map_err(|_| bad())?;
            let b: f64 = b.parse().map_err(|_| bad())?;
            if !(b > 0.0 && a > 0.0 && a <= b) {
                return Err(bad());
            }
            PowerDefinition::Min(((a / b * m as f64) - 1e-9).ceil().max(1.0) as usize)
        } else {
            return Err(bad());
        };
        match def {
            PowerDefinition::Indiv(i) if i == 0 || i > m => Err(PumpError::field(
                "power.definition",
                format!("outcome index in `{s}` must be in 1..={m}"),
            )),
            PowerDefinition::Min(d) if d == 0 || d > m => Err(PumpError::field(
                "power.definition",
                format!("d in `{s}` must be in 1..={m}"),
            )),
            // at-least-M is the complete definition computed from adjusted p-values;
            // reported as complete only when M = 1
            PowerDefinition::Min(d) if d == m && m > 1 => Err(PumpError::field(
                "power.definition",
                format!("min{m} with M = {m}: use `complete`"),
            )),
            other => Ok(other),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PowerDefinition::Indiv(i) => format!("D{i}indiv"),
            PowerDefinition::IndivMean => "indiv.mean".to_string(),
            PowerDefinition::Min(d) => format!("min{d}"),
            PowerDefinition::Complete => "complete".to_string(),
        }
    }
}

impl Serialize for PowerDefinition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for PowerDefinition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PowerDefinition::parse(&s, usize::MAX).map_err(serde::de::Error::custom)
    }
}

/// A Monte Carlo proportion with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub value: f64,
    pub mc_se: f64,
}

impl Cell {
    pub fn proportion(p: f64, tnum: usize) -> Cell {
        Cell {
            value: p,
            mc_se: (p * (1.0 - p) / tnum as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerRow {
    pub mtp: MtpId,
    pub indiv: Vec<Cell>,
    pub indiv_mean: Cell,
    /// `min[d-1]` is the d-minimal power for d = 1..M-1.
    pub min: Vec<Cell>,
    pub complete: Option<Cell>,
}

impl Serialize for PowerRow {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl PowerRow {
    pub fn get(&self, def: PowerDefinition) -> Option<Cell> {
        match def {
            PowerDefinition::Indiv(i) => self.indiv.get(i.checked_sub(1)?).copied(),
            PowerDefinition::IndivMean => Some(self.indiv_mean),
            PowerDefinition::Min(d) => self.min.get(d.checked_sub(1)?).copied(),
            PowerDefinition::Complete => self.complete,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("MTP".into(), json!(self.mtp.code()));
        for (def, c) in self.cells() {
            obj.insert(def.label(), json!(c));
        }
        Value::Object(obj)
    }

    /// Present cells in column order.
    pub fn cells(&self) -> Vec<(PowerDefinition, Cell)> {
        let mut out: Vec<(PowerDefinition, Cell)> = self
            .indiv
            .iter()
            .enumerate()
            .map(|(i, c)| (PowerDefinition::Indiv(i + 1), *c))
            .collect();
        out.push((PowerDefinition::IndivMean, self.indiv_mean));
        out.extend(self.min.iter().enumerate().map(|(d, c)| (PowerDefinition::Min(d + 1), *c)));
        if let Some(c) = self.complete {
            out.push((PowerDefinition::Complete, c));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerTable {
    pub design: DesignModelId,
    pub rows: Vec<PowerRow>,
    pub tnum: usize,
    /// Null draw count, when a Westfall-Young procedure was run.
    pub b: Option<usize>,
    pub df: u64,
    pub se: Vec<f64>,
    pub shift: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PowerTable {
    pub fn row(&self, mtp: MtpId) -> Option<&PowerRow> {
        self.rows.iter().find(|r| r.mtp == mtp)
    }

    pub fn get(&self, mtp: MtpId, def: PowerDefinition) -> Option<Cell> {
        self.row(mtp)?.get(def)
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self.rows.iter().map(PowerRow::to_json).collect();
        json!({
            "d_m": self.design.code(),
            "df": self.df,
            "SE": self.se,
            "shift": self.shift,
            "tnum": self.tnum,
            "B": self.b,
            "rows": rows,
            "warnings": self.warnings,
        })
    }
}

/// Counts rejections into one table row.
///
/// `complete` comes from the raw indicators and is only present when
/// `with_multi` is set and no outcome is zeroed.
pub fn summarize(h_adj: &StatMatrix, h_raw: &StatMatrix, num_zero: usize, mtp: MtpId, with_multi: bool) -> PowerRow {
    let (tnum, m) = (h_adj.rows, h_adj.cols);
    let indiv: Vec<Cell> = (0..m).map(|c| Cell::proportion(h_adj.column_mean(c), tnum)).collect();
    let indiv_mean = Cell::proportion(indiv.iter().map(|c| c.value).sum::<f64>() / m as f64, tnum);
    let mut min = Vec::new();
    let mut complete = None;
    if with_multi {
        let mut at_least = vec![0usize; m + 1];
        for r in 0..tnum {
            let k = h_adj.row(r).iter().filter(|&&v| v > 0.5).count();
            at_least[k] += 1;
        }
        // cumulative from the top: rows with at least d rejections
        let mut acc = 0;
        let mut ge = vec![0usize; m + 1];
        for d in (0..=m).rev() {
            acc += at_least[d];
            ge[d] = acc;
        }
        min = (1..m).map(|d| Cell::proportion(ge[d] as f64 / tnum as f64, tnum)).collect();
        if num_zero == 0 {
            let all = (0..tnum).filter(|&r| h_raw.row(r).iter().all(|&v| v > 0.5)).count();
            complete = Some(Cell::proportion(all as f64 / tnum as f64, tnum));
        }
    }
    PowerRow {
        mtp,
        indiv,
        indiv_mean,
        min,
        complete,
    }
}

/// Noncentralities `MDES_m / Q_m`.
pub fn shifts(req: &CheckedRequest) -> Vec<f64> {
    (0..req.params.m)
        .map(|m| req.effect.mdes[m] / standard_error(req.design, &req.params, m))
        .collect()
}

/// Full power table for every requested procedure from one shared draw.
pub fn pump_power(req: &CheckedRequest, seed: u64) -> Result<PowerTable> {
    pump_power_with(req, seed, req.tnum)
}

pub fn pump_power_with(req: &CheckedRequest, seed: u64, tnum: usize) -> Result<PowerTable> {
    let p = &req.params;
    let df = degrees_of_freedom(req.design, p)?;
    let dff = df as f64;
    let se: Vec<f64> = (0..p.m).map(|m| standard_error(req.design, p, m)).collect();
    let shift = shifts(req);
    let e = sample_alternative(&AlternativeSpec {
        shift: shift.clone(),
        df: dff,
        rho: req.rho.clone(),
        tnum,
        seed,
    })?;
    let f = raw_pvalues(&e, dff, p.two_sided);
    drop(e);
    let h_raw = rejections(&f, p.alpha);

    let mut warnings = Vec::new();
    let nulls = if req.needs_nulls() {
        if 1.0 / (req.b as f64 + 1.0) > p.alpha {
            warnings.push(format!(
                "B = {} cannot resolve alpha = {}: smallest Westfall-Young p-value is {:.4}",
                req.b,
                p.alpha,
                1.0 / (req.b as f64 + 1.0)
            ));
        }
        Some(NullBatch::draw(&NullStatisticSource {
            df: dff,
            rho: req.rho.clone(),
            b: req.b,
            seed: derive(seed, STREAM_NULL, 0),
            two_sided: p.two_sided,
        })?)
    } else {
        None
    };

    let multi = p.m > 1;
    let mut rows = Vec::new();
    for mtp in req.table_mtps() {
        let row = if mtp == MtpId::None {
            summarize(&h_raw, &h_raw, p.m, mtp, !multi)
        } else {
            let g = adjust_matrix(mtp, &f, nulls.as_ref())?;
            let h = rejections(&g, p.alpha);
            summarize(&h, &h_raw, req.effect.num_zero, mtp, true)
        };
        rows.push(row);
    }
    Ok(PowerTable {
        design: req.design,
        rows,
        tnum,
        b: nulls.as_ref().map(|n| n.b),
        df,
        se,
        shift,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::request::PowerRequest;

    #[test]
    fn summarize_direct_counts() {
        let h = StatMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 0.0]]);
        let row = summarize(&h, &h, 0, MtpId::Holm, true);
        assert!((row.indiv[0].value - 2.0 / 3.0).abs() < 1e-15);
        assert!((row.indiv[1].value - 1.0 / 3.0).abs() < 1e-15);
        assert!((row.min[0].value - 2.0 / 3.0).abs() < 1e-15);
        assert!((row.complete.unwrap().value - 1.0 / 3.0).abs() < 1e-15);
        assert!((row.indiv_mean.value - 0.5).abs() < 1e-15);

        let ones = StatMatrix::from_rows(&[vec![1.0; 3], vec![1.0; 3]]);
        let row = summarize(&ones, &ones, 0, MtpId::Bonferroni, true);
        assert!(row.cells().iter().all(|(_, c)| c.value == 1.0 && c.mc_se == 0.0));
        let row = summarize(&ones, &ones, 1, MtpId::Bonferroni, true);
        assert!(row.complete.is_none());
    }

    #[test]
    fn definitions_parse() {
        assert_eq!(PowerDefinition::parse("D3indiv", 5).unwrap(), PowerDefinition::Indiv(3));
        assert_eq!(PowerDefinition::parse("min2", 5).unwrap(), PowerDefinition::Min(2));
        assert_eq!(PowerDefinition::parse("1/2-minimal", 5).unwrap(), PowerDefinition::Min(3));
        assert_eq!(PowerDefinition::parse("1/2-minimal", 4).unwrap(), PowerDefinition::Min(2));
        assert_eq!(PowerDefinition::parse("mean", 5).unwrap(), PowerDefinition::IndivMean);
        assert!(PowerDefinition::parse("D6indiv", 5).is_err());
        assert!(PowerDefinition::parse("min5", 5).is_err());
        assert!(PowerDefinition::parse("maximal", 5).is_err());
    }

    fn req(v: serde_json::Value) -> CheckedRequest {
        PowerRequest::from_value(&v).unwrap().check().unwrap()
    }

    #[test]
    fn size_under_the_null() {
        let r = req(serde_json::json!({
            "d_m": "d2.1_m2fc", "M": 1, "MDES": 0.0, "nbar": 20, "J": 20, "tnum": 40000
        }));
        let t = pump_power(&r, 3).unwrap();
        let c = t.get(MtpId::None, PowerDefinition::Indiv(1)).unwrap();
        assert!((c.value - 0.05).abs() < 0.01, "{c:?}");
    }

    #[test]
    fn deterministic_and_ordered() {
        let r = req(serde_json::json!({
            "d_m": "d2.2_m2rc", "M": 3, "MDES": 0.2, "nbar": 30, "J": 40, "ICC.2": 0.2,
            "rho": 0.3, "MTP": ["BH", "HO", "WY-SD"], "tnum": 4000, "B": 300
        }));
        let a = pump_power(&r, 17).unwrap();
        let b = pump_power(&r, 17).unwrap();
        assert_eq!(a, b);
        let order: Vec<MtpId> = a.rows.iter().map(|r| r.mtp).collect();
        assert_eq!(order, vec![MtpId::None, MtpId::BenjaminiHochberg, MtpId::Holm, MtpId::WestfallYoungStepDown]);
        let none = a.row(MtpId::None).unwrap();
        assert!(none.min.is_empty() && none.complete.is_none());
        for row in &a.rows[1..] {
            for w in row.min.windows(2) {
                assert!(w[0].value >= w[1].value);
            }
            for (i, c) in row.indiv.iter().enumerate() {
                assert!(c.value <= none.indiv[i].value + 1e-12);
                assert!(row.min[0].value >= c.value);
            }
        }
        let json = a.to_json();
        assert_eq!(json["rows"][0]["MTP"], "None");
        assert!(json["rows"][1]["complete"]["value"].is_number());
    }

    #[test]
    fn single_outcome_procedures_are_identities() {
        let r = req(serde_json::json!({
            "d_m": "d1.1_m1c", "M": 1, "MDES": 0.25, "nbar": 200,
            "MTP": ["BF", "HO", "BH"], "tnum": 5000
        }));
        let t = pump_power(&r, 8).unwrap();
        let base = t.get(MtpId::None, PowerDefinition::Indiv(1)).unwrap();
        for m in [MtpId::Bonferroni, MtpId::Holm, MtpId::BenjaminiHochberg] {
            assert_eq!(t.get(m, PowerDefinition::Indiv(1)).unwrap(), base);
        }
    }
}
