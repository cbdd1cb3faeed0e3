//! Stochastic root finding for the MDES and sample-size calculators.
//!
//! Bracket the answer with closed-form bounds, probe it, fit a scaled
//! logistic to the noisy power estimates, and step toward the target with
//! growing `tnum` until a final high-precision evaluation lands within `tol`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use crate::design::{
    closed_form_sample_size, degrees_of_freedom, mdes_multiplier, raw_degrees_of_freedom, standard_error, SizeLevel,
};
use crate::engine::{pump_power_with, PowerDefinition};
use crate::error::{PumpError, Result};
use crate::mtp::MtpId;
use crate::request::CheckedRequest;
use crate::seed::derive;

const STREAM_SEARCH: u64 = 0x7365_6172_6368;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SearchQuantity {
    #[serde(rename = "MDES")]
    Mdes,
    #[serde(untagged)]
    Size(SizeLevel),
}

impl SearchQuantity {
    pub fn label(self) -> &'static str {
        match self {
            SearchQuantity::Mdes => "MDES",
            SearchQuantity::Size(l) => l.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchGoal {
    pub quantity: SearchQuantity,
    #[serde(rename = "power.definition")]
    pub definition: PowerDefinition,
    #[serde(rename = "MTP")]
    pub mtp: MtpId,
    #[serde(rename = "target.power")]
    pub target: f64,
    pub tol: f64,
    #[serde(rename = "start.tnum")]
    pub start_tnum: usize,
    pub tnum: usize,
    #[serde(rename = "final.tnum")]
    pub final_tnum: usize,
    #[serde(rename = "max.steps")]
    pub max_steps: usize,
}

impl SearchGoal {
    pub fn new(quantity: SearchQuantity, definition: PowerDefinition, mtp: MtpId, target: f64) -> Self {
        SearchGoal {
            quantity,
            definition,
            mtp,
            target,
            tol: 0.01,
            start_tnum: 1000,
            tnum: 3000,
            final_tnum: 20_000,
            max_steps: 20,
        }
    }

    pub fn check(&self, req: &CheckedRequest) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.target > 0.0 && self.target < 1.0) {
            errs.push(crate::error::FieldError::new("target.power", "target.power must be in (0,1)"));
        }
        if !(self.tol > 0.0 && self.tol < 0.5) {
            errs.push(crate::error::FieldError::new("tol", "tol must be in (0, 0.5)"));
        }
        if !(self.start_tnum >= 1 && self.start_tnum <= self.tnum && self.tnum <= self.final_tnum) {
            errs.push(crate::error::FieldError::new(
                "start.tnum",
                "need 1 <= start.tnum <= tnum <= final.tnum",
            ));
        }
        if self.max_steps == 0 {
            errs.push(crate::error::FieldError::new("max.steps", "max.steps must be at least 1"));
        }
        let m = req.params.m;
        let nz = req.effect.num_zero;
        match self.definition {
            PowerDefinition::Complete if nz > 0 => errs.push(crate::error::FieldError::new(
                "power.definition",
                "complete power is undefined when numZero > 0 (some nulls are true)",
            )),
            PowerDefinition::Indiv(i) if i > m - nz => errs.push(crate::error::FieldError::new(
                "power.definition",
                format!("outcome {i} has zero effect (numZero = {nz}); its power cannot reach the target"),
            )),
            PowerDefinition::Min(_) | PowerDefinition::Complete if m > 1 && self.mtp == MtpId::None => {
                errs.push(crate::error::FieldError::new(
                    "MTP",
                    "multi-outcome power definitions need an adjustment procedure",
                ))
            }
            _ => {}
        }
        if m - nz == 0 {
            errs.push(crate::error::FieldError::new("numZero", "at least one outcome must have an effect"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PumpError::Validation(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Phase {
    #[serde(rename = "probe")]
    Probe,
    #[serde(rename = "step")]
    Step,
    #[serde(rename = "certify")]
    Certify,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    pub step: usize,
    pub x: f64,
    pub tnum: usize,
    pub power: f64,
    pub mc_se: f64,
    pub weight: f64,
    pub phase: Phase,
}

/// `p(x) = L / (1 + exp(-k (x - x0)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogisticCurve {
    #[serde(rename = "L")]
    pub l: f64,
    pub k: f64,
    pub x0: f64,
}

impl LogisticCurve {
    pub fn eval(&self, x: f64) -> f64 {
        self.l / (1.0 + (-self.k * (x - self.x0)).exp())
    }

    /// The `x` with `p(x) = target`, extrapolating freely; `None` when the
    /// curve never reaches the target.
    pub fn invert(&self, target: f64) -> Option<f64> {
        if !(target > 0.0 && target < self.l) || !(self.k > 0.0) {
            return None;
        }
        Some(self.x0 - (self.l / target - 1.0).ln() / self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub quantity: SearchQuantity,
    pub value: f64,
    pub achieved_power: f64,
    pub mc_se: f64,
    pub steps: usize,
    pub converged: bool,
    pub bracket: (f64, f64),
    pub trace: Vec<TracePoint>,
    pub curve: Option<LogisticCurve>,
    pub warnings: Vec<String>,
}

impl SearchResult {
    /// Sample sizes are written as integers.
    pub fn to_json(&self) -> Value {
        let value = match self.quantity {
            SearchQuantity::Mdes => json!(self.value),
            _ => json!(self.value.round() as u64),
        };
        json!({
            "quantity": self.quantity.label(),
            "value": value,
            "achieved_power": self.achieved_power,
            "mc_se": self.mc_se,
            "steps": self.steps,
            "converged": self.converged,
            "bracket": [self.bracket.0, self.bracket.1],
            "trace": self.trace,
            "curve": self.curve,
            "warnings": self.warnings,
        })
    }
}

/// Weighted least-squares logistic fit.
///
/// `L` is fixed at 1 unless `fit_l` is set. Needs at least two distinct `x`.
pub fn fit_power_curve(points: &[(f64, f64, f64)], fit_l: bool) -> Result<LogisticCurve> {
    let pts: Vec<(f64, f64, f64)> = points
        .iter()
        .copied()
        .filter(|(x, p, w)| x.is_finite() && p.is_finite() && *w > 0.0)
        .collect();
    let xmin = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let xmax = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if pts.len() < 2 || !(xmax > xmin) {
        return Err(PumpError::Degenerate("curve fit needs at least two distinct x values".into()));
    }
    let span = xmax - xmin;
    let u: Vec<f64> = pts.iter().map(|p| (p.0 - xmin) / span).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let w: Vec<f64> = pts.iter().map(|p| p.2).collect();
    let wsum: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|v| v / wsum).collect();

    let mut l = if fit_l {
        (y.iter().copied().fold(0.0, f64::max) * 1.02).clamp(0.05, 1.0)
    } else {
        1.0
    };

    // start from a weighted regression of logit(p / L) on u
    let logit = |p: f64, l: f64| {
        let q = (p / l).clamp(0.02, 0.98);
        (q / (1.0 - q)).ln()
    };
    let (mut sw, mut su, mut sy, mut suu, mut suy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..u.len() {
        let z = logit(y[i], l);
        sw += w[i];
        su += w[i] * u[i];
        sy += w[i] * z;
        suu += w[i] * u[i] * u[i];
        suy += w[i] * u[i] * z;
    }
    let var = suu - su * su / sw;
    let mut slope = if var > 1e-12 { (suy - su * sy / sw) / var } else { 1.0 };
    if !(slope > 0.1) {
        slope = 1.0;
    }
    let intercept = (sy - slope * su) / sw;
    let mut x0 = -intercept / slope;
    let mut lk = slope.ln();

    let np = if fit_l { 3 } else { 2 };
    let sse = |x0: f64, lk: f64, l: f64| -> f64 {
        let k = lk.exp();
        (0..u.len())
            .map(|i| {
                let r = y[i] - l / (1.0 + (-k * (u[i] - x0)).exp());
                w[i] * r * r
            })
            .sum()
    };
    let mut lambda = 1e-3;
    let mut cur = sse(x0, lk, l);
    for _ in 0..500 {
        let k = lk.exp();
        let mut jtj = DMatrix::<f64>::zeros(np, np);
        let mut jtr = DVector::<f64>::zeros(np);
        for i in 0..u.len() {
            let s = 1.0 / (1.0 + (-k * (u[i] - x0)).exp());
            let r = y[i] - l * s;
            let ds = s * (1.0 - s);
            let mut g = [-l * ds * k, l * ds * k * (u[i] - x0), s];
            if !fit_l {
                g[2] = 0.0;
            }
            for a in 0..np {
                jtr[a] += w[i] * g[a] * r;
                for b in 0..np {
                    jtj[(a, b)] += w[i] * g[a] * g[b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for d in 0..np {
                a[(d, d)] += lambda * (jtj[(d, d)] + 1e-12);
            }
            let Some(delta) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let nx0 = x0 + delta[0];
            let nlk = (lk + delta[1]).clamp(-10.0, 10.0);
            let nl = if fit_l { (l + delta[2]).clamp(1e-3, 1.0) } else { l };
            let next = sse(nx0, nlk, nl);
            if next <= cur {
                let gain = cur - next;
                x0 = nx0;
                lk = nlk;
                l = nl;
                cur = next;
                lambda = (lambda / 3.0).max(1e-12);
                improved = gain > 1e-20;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    Ok(LogisticCurve {
        l,
        k: lk.exp() / span,
        x0: xmin + x0 * span,
    })
}

/// Per-outcome power each bound is computed at.
fn bound_powers(def: PowerDefinition, target: f64, m_eff: usize) -> (f64, f64) {
    let m = m_eff as f64;
    let at_least_one = 1.0 - (1.0 - target).powf(1.0 / m);
    let all = target.powf(1.0 / m);
    match def {
        PowerDefinition::Indiv(_) | PowerDefinition::IndivMean => (target, target),
        PowerDefinition::Min(1) => (at_least_one, target),
        PowerDefinition::Min(_) => (at_least_one, all),
        PowerDefinition::Complete => (target, all),
    }
}

/// Outcomes the bound calculation looks at.
fn bound_outcomes(goal: &SearchGoal, req: &CheckedRequest) -> Vec<usize> {
    match goal.definition {
        PowerDefinition::Indiv(i) => vec![i - 1],
        _ => (0..req.params.m - req.effect.num_zero).collect(),
    }
}

/// Smallest size along `level` whose degrees of freedom are at least 1.
fn min_size(req: &CheckedRequest, level: SizeLevel) -> u32 {
    let df_at = |v: u32| raw_degrees_of_freedom(req.design, &req.with_size(level, v).params);
    let mut hi = 1u32;
    while df_at(hi) < 1 {
        if hi >= 1 << 30 {
            return hi;
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    if lo == 0 || df_at(lo) >= 1 {
        return lo.max(1);
    }
    // df_at(lo) < 1 <= df_at(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if df_at(mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Closed-form bracket `(lo, hi)` ignoring correlation: the lower end from
/// unadjusted tests at the weakest per-outcome power, the upper end from
/// Bonferroni at the strongest.
pub fn initial_bounds(goal: &SearchGoal, req: &CheckedRequest) -> Result<(f64, f64)> {
    let p = &req.params;
    let m_eff = p.m - req.effect.num_zero;
    let (pow_lo, pow_hi) = bound_powers(goal.definition, goal.target, m_eff);
    let alpha_hi = if goal.mtp == MtpId::None { p.alpha } else { p.alpha / p.m as f64 };
    let outcomes = bound_outcomes(goal, req);
    match goal.quantity {
        SearchQuantity::Mdes => {
            let df = degrees_of_freedom(req.design, p)? as f64;
            let mt_lo = mdes_multiplier(df, p.alpha, 1.0 - pow_lo, p.two_sided)?;
            let mt_hi = mdes_multiplier(df, alpha_hi, 1.0 - pow_hi, p.two_sided)?;
            let q: Vec<f64> = outcomes.iter().map(|&m| standard_error(req.design, p, m)).collect();
            let qmin = q.iter().copied().fold(f64::INFINITY, f64::min);
            let qmax = q.iter().copied().fold(0.0, f64::max);
            Ok((mt_lo * qmin, mt_hi * qmax))
        }
        SearchQuantity::Size(level) => {
            let floor = min_size(req, level) as f64;
            let solve = |alpha: f64, power: f64, pick_max: bool| -> Result<f64> {
                let mut best: Option<f64> = None;
                for &m in &outcomes {
                    let mdes = req.effect.mdes[m];
                    // df depends on the size being solved for
                    let mut size = floor.max(2.0);
                    for _ in 0..50 {
                        let cand = req.with_size(level, size.ceil().min(u32::MAX as f64 / 4.0) as u32);
                        let df = raw_degrees_of_freedom(req.design, &cand.params).max(1) as f64;
                        let mt = mdes_multiplier(df, alpha, 1.0 - power, p.two_sided)?;
                        let next = closed_form_sample_size(req.design, &cand.params, m, mdes, mt, level)?.max(floor);
                        if (next - size).abs() < 1e-9 * size.max(1.0) {
                            size = next;
                            break;
                        }
                        size = next;
                    }
                    best = Some(match best {
                        None => size,
                        Some(b) if pick_max => b.max(size),
                        Some(b) => b.min(size),
                    });
                }
                Ok(best.expect("at least one outcome"))
            };
            let lo = solve(p.alpha, pow_lo, false)?;
            let hi = solve(alpha_hi, pow_hi, true)?;
            Ok((lo, hi))
        }
    }
}

struct Evaluator<'a> {
    goal: &'a SearchGoal,
    base: CheckedRequest,
    seed: u64,
    count: u64,
    trace: Vec<TracePoint>,
}

impl Evaluator<'_> {
    fn power(&mut self, x: f64, tnum: usize, step: usize, phase: Phase) -> Result<(f64, f64)> {
        let req = match self.goal.quantity {
            SearchQuantity::Mdes => self.base.with_mdes(x),
            SearchQuantity::Size(level) => self.base.with_size(level, x as u32),
        };
        let seed = derive(self.seed, STREAM_SEARCH, self.count);
        self.count += 1;
        let table = pump_power_with(&req, seed, tnum)?;
        let cell = table
            .get(self.goal.mtp, self.goal.definition)
            .or_else(|| match self.goal.definition {
                // a single outcome's complete power is its individual power
                PowerDefinition::Complete => table.get(self.goal.mtp, PowerDefinition::Indiv(1)),
                _ => None,
            })
            .ok_or_else(|| {
                PumpError::Unsupported(format!(
                    "{} is not reported for {}",
                    self.goal.definition.label(),
                    self.goal.mtp
                ))
            })?;
        self.trace.push(TracePoint {
            step,
            x,
            tnum,
            power: cell.value,
            mc_se: cell.mc_se,
            weight: tnum as f64,
            phase,
        });
        Ok((cell.value, cell.mc_se))
    }

    fn points(&self) -> Vec<(f64, f64, f64)> {
        self.trace.iter().map(|t| (t.x, t.power, t.weight)).collect()
    }
}

/// Fits a curve to everything seen so far, fitting `L` only when the power
/// at the largest probed value has stalled below 0.95.
fn fit_trace(points: &[(f64, f64, f64)]) -> Option<LogisticCurve> {
    let mut by_x = points.to_vec();
    by_x.sort_by(|a, b| a.0.total_cmp(&b.0));
    let top = by_x.last()?;
    let plateau = top.1 < 0.95
        && by_x
            .iter()
            .rev()
            .find(|p| p.0 < top.0)
            .is_some_and(|prev| (top.1 - prev.1).abs() < 0.02);
    fit_power_curve(points, plateau).ok()
}

pub fn pump_mdes(goal: &SearchGoal, req: &CheckedRequest, seed: u64) -> Result<SearchResult> {
    if goal.quantity != SearchQuantity::Mdes {
        return Err(PumpError::field("quantity", "pump_mdes searches MDES"));
    }
    run_search(goal, req, seed)
}

pub fn pump_sample(goal: &SearchGoal, req: &CheckedRequest, seed: u64) -> Result<SearchResult> {
    if !matches!(goal.quantity, SearchQuantity::Size(_)) {
        return Err(PumpError::field("typesample", "pump_sample searches nbar, J, or K"));
    }
    run_search(goal, req, seed)
}

fn run_search(goal: &SearchGoal, req: &CheckedRequest, seed: u64) -> Result<SearchResult> {
    goal.check(req)?;
    let mut base = req.clone();
    base.mtps = if goal.mtp == MtpId::None { vec![] } else { vec![goal.mtp] };
    let (lo, hi) = initial_bounds(goal, &base)?;
    let is_size = matches!(goal.quantity, SearchQuantity::Size(_));
    let floor = match goal.quantity {
        SearchQuantity::Size(level) => min_size(&base, level) as f64,
        SearchQuantity::Mdes => 0.0,
    };
    let snap = |x: f64| -> f64 {
        if is_size {
            x.ceil().clamp(floor, (u32::MAX / 2) as f64)
        } else {
            x.max(1e-6)
        }
    };
    let mut ev = Evaluator {
        goal,
        base,
        seed,
        count: 0,
        trace: Vec::new(),
    };
    let mut warnings = Vec::new();

    // probe five equally spaced points, widening a degenerate bracket
    let (mut plo, mut phi) = (lo.min(hi), lo.max(hi));
    if phi - plo < 0.2 * phi.abs().max(1e-9) {
        plo *= 0.8;
        phi *= 1.2;
    }
    if is_size {
        plo = plo.floor().max(floor);
        phi = phi.ceil().max(plo + 4.0);
    }
    let mut probes: Vec<f64> = (0..5).map(|i| snap(plo + (phi - plo) * i as f64 / 4.0)).collect();
    probes.dedup();
    for &x in &probes {
        ev.power(x, goal.start_tnum, 0, Phase::Probe)?;
    }

    let mut tnum = goal.tnum;
    let mut misses = 0usize;
    let mut best: Option<(f64, f64, f64)> = None;
    let mut curve = None;
    let mut converged = false;
    let mut steps = 0;
    let (mut reach_lo, mut reach_hi) = (plo, phi);
    for step in 1..=goal.max_steps {
        steps = step;
        curve = fit_trace(&ev.points());
        let target = goal.target;
        let candidate = match curve.and_then(|c| c.invert(target)) {
            Some(x) if x.is_finite() => x,
            _ => {
                // the curve does not reach the target here: move outward
                let all_below = ev.trace.iter().all(|t| t.power < target);
                if all_below {
                    reach_hi += (reach_hi - reach_lo).max(1.0);
                    reach_hi
                } else {
                    reach_lo = (reach_lo / 2.0).max(floor);
                    reach_lo
                }
            }
        };
        // keep extrapolation from running away in one step
        let width = (reach_hi - reach_lo).max(if is_size { 2.0 } else { 1e-3 });
        let x = snap(candidate.clamp(reach_lo - width, reach_hi + 2.0 * width));
        reach_lo = reach_lo.min(x);
        reach_hi = reach_hi.max(x);

        let (pw, _) = ev.power(x, tnum, step, Phase::Step)?;
        if (pw - target).abs() > goal.tol {
            misses += 1;
            if misses % 2 == 0 {
                tnum = (tnum * 2).min(goal.final_tnum);
            }
            continue;
        }
        let (pc, se) = ev.power(x, goal.final_tnum, step, Phase::Certify)?;
        let gap = (pc - target).abs();
        if best.is_none_or(|b| gap < (b.1 - target).abs()) {
            best = Some((x, pc, se));
        }
        if gap <= goal.tol {
            converged = true;
            break;
        }
        misses += 1;
        if misses % 2 == 0 {
            tnum = (tnum * 2).min(goal.final_tnum);
        }
    }

    let (mut value, mut achieved, mut mc_se) = match best {
        Some(b) => b,
        None => {
            // nothing certified: report the closest evaluation seen
            let t = ev
                .trace
                .iter()
                .max_by(|a, b| {
                    a.tnum
                        .cmp(&b.tnum)
                        .then((b.power - goal.target).abs().total_cmp(&(a.power - goal.target).abs()))
                })
                .expect("probes were evaluated");
            (t.x, t.power, t.mc_se)
        }
    };

    if converged && is_size {
        // smallest integer still certified at target - tol; gallop down then bisect
        let ok = |ev: &mut Evaluator, x: f64| -> Result<Option<(f64, f64)>> {
            let (p, s) = ev.power(x, goal.final_tnum, steps, Phase::Certify)?;
            Ok((p >= goal.target - goal.tol).then_some((p, s)))
        };
        let mut good = value;
        let mut stride = 1.0;
        let mut bad = None;
        while good - stride >= floor {
            let x = good - stride;
            match ok(&mut ev, x)? {
                Some((p, s)) => {
                    good = x;
                    achieved = p;
                    mc_se = s;
                    stride *= 2.0;
                }
                None => {
                    bad = Some(x);
                    break;
                }
            }
        }
        if let Some(mut b) = bad {
            while good - b > 1.0 {
                let mid = ((good + b) / 2.0).floor();
                match ok(&mut ev, mid)? {
                    Some((p, s)) => {
                        good = mid;
                        achieved = p;
                        mc_se = s;
                    }
                    None => b = mid,
                }
            }
        }
        if good < value - 2.0 {
            warnings.push(format!(
                "power is flat in {}: sizes {good}..{value} all reach target - tol; reporting the lower edge",
                goal.quantity.label()
            ));
        }
        value = good;
        if achieved > goal.target + goal.tol {
            warnings.push(format!(
                "certified power {achieved:.4} exceeds target + tol at the smallest qualifying size (integer granularity)"
            ));
        }
    }
    if !converged {
        warnings.push(format!(
            "search did not converge in {} steps; returning the closest candidate",
            goal.max_steps
        ));
    }
    Ok(SearchResult {
        quantity: goal.quantity,
        value,
        achieved_power: achieved,
        mc_se,
        steps,
        converged,
        bracket: (lo, hi),
        trace: ev.trace,
        curve,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::request::{PowerRequest, Searched};
    use serde_json::json;

    #[test]
    fn logistic_recovered_from_exact_points() {
        let truth = LogisticCurve { l: 1.0, k: 0.15, x0: 30.0 };
        let pts: Vec<(f64, f64, f64)> = (0..8).map(|i| {
            let x = 5.0 + 8.0 * i as f64;
            (x, truth.eval(x), 1.0)
        }).collect();
        let fit = fit_power_curve(&pts, false).unwrap();
        assert!((fit.x0 - 30.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.k - 0.15).abs() < 1e-6, "{fit:?}");

        let truth = LogisticCurve { l: 0.7, k: 0.2, x0: 20.0 };
        let pts: Vec<(f64, f64, f64)> = (0..10).map(|i| {
            let x = 2.0 + 6.0 * i as f64;
            (x, truth.eval(x), 1.0 + i as f64)
        }).collect();
        let fit = fit_power_curve(&pts, true).unwrap();
        assert!((fit.l - 0.7).abs() < 1e-6 && (fit.x0 - 20.0).abs() < 1e-5, "{fit:?}");
    }

    #[test]
    fn two_point_inversion_is_between() {
        let fit = fit_power_curve(&[(10.0, 0.2, 1.0), (50.0, 0.9, 1.0)], false).unwrap();
        let x = fit.invert(0.8).unwrap();
        assert!(x > 10.0 && x < 50.0, "{x}");
    }

    #[test]
    fn weighted_duplicates() {
        let pts = [(10.0, 0.1, 1.0), (20.0, 0.40, 10.0), (20.0, 0.60, 1.0), (30.0, 0.9, 1.0)];
        let fit = fit_power_curve(&pts, false).unwrap();
        let v = fit.eval(20.0);
        assert!(v > 0.40 && v < 0.60 && (v - 0.40) < (0.60 - v), "{v}");
    }

    #[test]
    fn non_invertible_curve() {
        let c = LogisticCurve { l: 0.6, k: 1.0, x0: 0.0 };
        assert!(c.invert(0.8).is_none());
        assert!(fit_power_curve(&[(1.0, 0.5, 1.0)], false).is_err());
    }

    fn base() -> serde_json::Value {
        json!({
            "d_m": "d3.2_m3fc2rc", "MTP": "HO", "M": 5, "K": 21,
            "nbar": 258, "J": 3, "Tbar": 0.5, "numCovar.1": 5, "numCovar.2": 3,
            "R2.1": 0.1, "R2.2": 0.7, "ICC.2": 0.05, "ICC.3": 0.4, "rho": 0.4
        })
    }

    #[test]
    fn bound_transforms() {
        let (lo, _) = bound_powers(PowerDefinition::Min(1), 0.8, 5);
        assert!((lo - (1.0 - 0.2f64.powf(0.2))).abs() < 1e-15);
        assert!((lo - 0.275).abs() < 1e-3);
        let (_, hi) = bound_powers(PowerDefinition::Complete, 0.8, 5);
        assert!((hi - 0.956).abs() < 1e-3);
    }

    #[test]
    fn single_outcome_bracket_contains_analytic_mdes() {
        let mut v = base();
        v["M"] = json!(1);
        v["MTP"] = json!("None");
        let req = PowerRequest::from_value(&v).unwrap().check_for(Searched::Mdes).unwrap();
        let goal = SearchGoal::new(SearchQuantity::Mdes, PowerDefinition::Indiv(1), MtpId::None, 0.8);
        let (lo, hi) = initial_bounds(&goal, &req).unwrap();
        let df = degrees_of_freedom(req.design, &req.params).unwrap() as f64;
        let analytic = mdes_multiplier(df, 0.05, 0.2, true).unwrap() * standard_error(req.design, &req.params, 0);
        assert!((lo - analytic).abs() < 1e-12 && (hi - analytic).abs() < 1e-12);
    }

    #[test]
    fn size_search_single_outcome_matches_closed_form() {
        let req = PowerRequest::from_value(&json!({
            "d_m": "d2.1_m2fc", "M": 1, "MDES": 0.25, "nbar": 20, "ICC.2": 0.1
        }))
        .unwrap()
        .check_for(Searched::Size(SizeLevel::J))
        .unwrap();
        let goal = SearchGoal::new(SearchQuantity::Size(SizeLevel::J), PowerDefinition::Indiv(1), MtpId::None, 0.8);
        let (lo, _) = initial_bounds(&goal, &req).unwrap();
        let res = pump_sample(&goal, &req, 4).unwrap();
        assert!(res.converged, "{res:?}");
        assert!((res.value - lo.ceil()).abs() <= 1.0, "{} vs {}", res.value, lo);
    }

    #[test]
    fn complete_goal_rejected_with_zero_effects() {
        let mut v = base();
        v["numZero"] = json!(2);
        let req = PowerRequest::from_value(&v).unwrap().check_for(Searched::Mdes).unwrap();
        let goal = SearchGoal::new(SearchQuantity::Mdes, PowerDefinition::Complete, MtpId::Holm, 0.8);
        let err = pump_mdes(&goal, &req, 1).unwrap_err();
        assert!(err.to_string().contains("complete power is undefined"), "{err}");
    }
}
