//! Full-simulation power: generate data, randomize, estimate each impact
//! with a block- or cluster-level estimator, test, adjust, count.
//!
//! Westfall-Young adjustments here use genuine re-randomizations of the
//! generated data, independent of the engine's simulated null statistics.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::{assign_treatment, generate_dataset, scheme_for, solve_model_params, DgpControl, GeneratedDataset, Scheme};
use crate::design::{degrees_of_freedom, DesignModelId};
use crate::dist::{noncentral_t_power, shifted_t_power, t_pvalue};
use crate::engine::{pump_power, shifts, summarize, Cell, PowerDefinition, PowerRow};
use crate::error::{PumpError, Result};
use crate::mtp::{adjust, MtpId, NullBatch};
use crate::request::CheckedRequest;
use crate::sampler::{rejections, StatMatrix};
use crate::seed::{rng_for, STREAM_ASSIGN, STREAM_DGP, STREAM_PERMUTE};

/// Designs the analytic estimators cover.
pub fn oracle_supports(d: DesignModelId) -> bool {
    matches!(
        d,
        DesignModelId::D1_1M1c
            | DesignModelId::D2_1M2fc
            | DesignModelId::D2_1M2ff
            | DesignModelId::D2_1M2fr
            | DesignModelId::D2_1M2rr
            | DesignModelId::D2_2M2rc
    )
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub req: CheckedRequest,
    /// Correlation used for every covariate, effect and residual matrix.
    pub rho: f64,
    /// Simulated trials.
    pub s: usize,
    /// Re-randomizations per trial for Westfall-Young.
    pub b_perm: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub s: usize,
    pub b_perm: Option<usize>,
    pub ci_half_width: f64,
    pub rows: Vec<PowerRow>,
}

struct Prepared {
    design: DesignModelId,
    schools: usize,
    nbar: usize,
    g1: u32,
    /// Observed outcome, individual covariate, school covariate per outcome.
    y: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
}

fn prepare(design: DesignModelId, ds: &GeneratedDataset, g1: u32) -> Prepared {
    let schools = ds.schools();
    Prepared {
        design,
        schools,
        nbar: ds.nbar,
        g1,
        y: (0..ds.m).map(|m| ds.y_obs(m)).collect(),
        c: ds.outcomes.iter().map(|o| o.c.clone()).collect(),
        x: ds
            .outcomes
            .iter()
            .map(|o| (0..schools).map(|s| o.x[s * ds.nbar]).collect())
            .collect(),
    }
}

/// (estimate, standard error) of outcome `m` under assignment `t`.
fn estimate(p: &Prepared, m: usize, t: &[u8]) -> Result<(f64, f64)> {
    let (y, c, n, s) = (&p.y[m], &p.c[m], p.nbar, p.schools);
    let use_c = p.g1 > 0;
    match p.design {
        DesignModelId::D1_1M1c | DesignModelId::D2_1M2fc => {
            // school fixed effects: demean within school, regress on T and C
            let (mut stt, mut stc, mut scc, mut sty, mut scy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for sc in 0..s {
                let r = sc * n..(sc + 1) * n;
                let mean = |v: &dyn Fn(usize) -> f64| r.clone().map(v).sum::<f64>() / n as f64;
                let (my, mc, mt) = (mean(&|i| y[i]), mean(&|i| c[i]), mean(&|i| t[i] as f64));
                for i in r.clone() {
                    let (yy, cc, tt) = (y[i] - my, if use_c { c[i] - mc } else { 0.0 }, t[i] as f64 - mt);
                    stt += tt * tt;
                    stc += tt * cc;
                    scc += cc * cc;
                    sty += tt * yy;
                    scy += cc * yy;
                    syy += yy * yy;
                }
            }
            let df = (s * n) as f64 - s as f64 - p.g1 as f64 - 1.0;
            let (beta, ssr, vfac) = if use_c {
                let det = stt * scc - stc * stc;
                let bt = (scc * sty - stc * scy) / det;
                let bc = (stt * scy - stc * sty) / det;
                (bt, syy - bt * sty - bc * scy, scc / det)
            } else {
                let bt = sty / stt;
                (bt, syy - bt * sty, 1.0 / stt)
            };
            check_df(df)?;
            Ok((beta, (ssr / df * vfac).sqrt()))
        }
        DesignModelId::D2_1M2ff | DesignModelId::D2_1M2fr | DesignModelId::D2_1M2rr => {
            // pooled covariate slope from within school-by-arm deviations
            let mut cell = vec![[0.0f64; 3]; 2 * s]; // (sum y, sum c, count)
            for i in 0..s * n {
                let k = 2 * (i / n) + t[i] as usize;
                cell[k][0] += y[i];
                cell[k][1] += c[i];
                cell[k][2] += 1.0;
            }
            if cell.iter().any(|v| v[2] == 0.0) {
                return Err(PumpError::Degenerate("a school has an empty arm".into()));
            }
            let (mut scc, mut scy, mut syy) = (0.0, 0.0, 0.0);
            for i in 0..s * n {
                let k = 2 * (i / n) + t[i] as usize;
                let yy = y[i] - cell[k][0] / cell[k][2];
                let cc = if use_c { c[i] - cell[k][1] / cell[k][2] } else { 0.0 };
                scc += cc * cc;
                scy += cc * yy;
                syy += yy * yy;
            }
            let gamma = if use_c { scy / scc } else { 0.0 };
            let ssr = syy - gamma * scy;
            let diffs: Vec<f64> = (0..s)
                .map(|sc| {
                    let adj = |k: usize| (cell[k][0] - gamma * cell[k][1]) / cell[k][2];
                    adj(2 * sc + 1) - adj(2 * sc)
                })
                .collect();
            let est = diffs.iter().sum::<f64>() / s as f64;
            let se = if p.design == DesignModelId::D2_1M2ff {
                let df = (s * n) as f64 - 2.0 * s as f64 - p.g1 as f64;
                check_df(df)?;
                let inv: f64 = (0..s).map(|sc| 1.0 / cell[2 * sc + 1][2] + 1.0 / cell[2 * sc][2]).sum();
                (ssr / df * inv).sqrt() / s as f64
            } else {
                check_df(s as f64 - 1.0)?;
                let var = diffs.iter().map(|d| (d - est).powi(2)).sum::<f64>() / (s as f64 - 1.0);
                (var / s as f64).sqrt()
            };
            Ok((est, se))
        }
        DesignModelId::D2_2M2rc => {
            // covariate-adjusted school means regressed on treatment and the school covariate
            let (mut scc, mut scy) = (0.0, 0.0);
            let mut means = vec![(0.0, 0.0); s];
            for sc in 0..s {
                let r = sc * n..(sc + 1) * n;
                let my = r.clone().map(|i| y[i]).sum::<f64>() / n as f64;
                let mc = r.clone().map(|i| c[i]).sum::<f64>() / n as f64;
                means[sc] = (my, mc);
                if use_c {
                    for i in r {
                        scc += (c[i] - mc) * (c[i] - mc);
                        scy += (c[i] - mc) * (y[i] - my);
                    }
                }
            }
            let gamma = if use_c { scy / scc } else { 0.0 };
            let cols = 3;
            let mut xm = DMatrix::<f64>::zeros(s, cols);
            let mut yv = DVector::<f64>::zeros(s);
            for sc in 0..s {
                xm[(sc, 0)] = 1.0;
                xm[(sc, 1)] = t[sc * n] as f64;
                xm[(sc, 2)] = p.x[m][sc];
                yv[sc] = means[sc].0 - gamma * means[sc].1;
            }
            let df = s as f64 - cols as f64;
            check_df(df)?;
            let xtx = xm.transpose() * &xm;
            let inv = xtx
                .try_inverse()
                .ok_or_else(|| PumpError::Degenerate("singular cluster-level design".into()))?;
            let beta = &inv * xm.transpose() * &yv;
            let resid = &yv - &xm * &beta;
            let sigma2 = resid.norm_squared() / df;
            Ok((beta[1], (sigma2 * inv[(1, 1)]).sqrt()))
        }
        other => Err(PumpError::Unsupported(format!("no full-simulation estimator for {other}"))),
    }
}

fn check_df(df: f64) -> Result<()> {
    if df < 1.0 {
        return Err(PumpError::Degenerate(format!("estimator has {df} residual degrees of freedom")));
    }
    Ok(())
}

fn pvalues(p: &Prepared, t: &[u8], m: usize, df: f64, two_sided: bool) -> Result<Vec<f64>> {
    (0..m)
        .map(|k| {
            let (est, se) = estimate(p, k, t)?;
            Ok(t_pvalue(est / se, df, two_sided))
        })
        .collect()
}

struct Trial {
    raw: Vec<f64>,
    adjusted: Vec<Vec<f64>>,
}

fn run_trial(cfg: &OracleConfig, control: &DgpControl, model: &super::DgpModelParams, idx: usize, seed: u64) -> Result<Trial> {
    let req = &cfg.req;
    let p = &req.params;
    let df = degrees_of_freedom(req.design, p)? as f64;
    let mut gen_rng: ChaCha8Rng = rng_for(seed, STREAM_DGP, idx as u64);
    let mut ds = generate_dataset(model, control, &mut gen_rng)?;
    let scheme: Scheme = scheme_for(req.design);
    let mut arng = rng_for(seed, STREAM_ASSIGN, idx as u64);
    ds.t = assign_treatment(scheme, &ds, p.tbar, &mut arng)?;
    let prep = prepare(req.design, &ds, p.num_covar_1);
    let raw = pvalues(&prep, &ds.t, p.m, df, p.two_sided)?;
    let nulls = if req.needs_nulls() {
        let mut prng = rng_for(seed, STREAM_PERMUTE, idx as u64);
        let mut rows = Vec::with_capacity(cfg.b_perm);
        for _ in 0..cfg.b_perm {
            let t = assign_treatment(scheme, &ds, p.tbar, &mut prng)?;
            rows.push(pvalues(&prep, &t, p.m, df, p.two_sided)?);
        }
        Some(NullBatch::from_pvalues(StatMatrix::from_rows(&rows)))
    } else {
        None
    };
    let adjusted = req
        .mtps
        .iter()
        .map(|&mtp| adjust(mtp, &raw, nulls.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trial { raw, adjusted })
}

/// Power from `cfg.s` full simulations, with `1.96 sqrt(0.25 / S)` as the
/// conservative interval half-width.
pub fn oracle_power(cfg: &OracleConfig, seed: u64) -> Result<OracleReport> {
    let req = &cfg.req;
    if !oracle_supports(req.design) {
        return Err(PumpError::Unsupported(format!(
            "full-simulation oracle supports d1.1_m1c, d2.1_m2fc/ff/fr/rr and d2.2_m2rc, not {}",
            req.design
        )));
    }
    if cfg.s == 0 {
        return Err(PumpError::field("S", "S must be at least 1"));
    }
    if req.needs_nulls() && cfg.b_perm == 0 {
        return Err(PumpError::field("B", "B must be at least 1"));
    }
    let control = DgpControl::from_request(req, cfg.rho);
    let model = solve_model_params(&control)?;
    let trial = |i: usize| run_trial(cfg, &control, &model, i, seed);
    #[cfg(feature = "parallel")]
    let trials: Vec<Result<Trial>> = {
        use rayon::prelude::*;
        (0..cfg.s).into_par_iter().map(trial).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let trials: Vec<Result<Trial>> = (0..cfg.s).map(trial).collect();
    let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;

    let m = req.params.m;
    let alpha = req.params.alpha;
    let raw = StatMatrix::from_rows(&trials.iter().map(|t| t.raw.clone()).collect::<Vec<_>>());
    let h_raw = rejections(&raw, alpha);
    let mut rows = vec![summarize(&h_raw, &h_raw, m, MtpId::None, m == 1)];
    for (k, &mtp) in req.mtps.iter().enumerate() {
        let adj = StatMatrix::from_rows(&trials.iter().map(|t| t.adjusted[k].clone()).collect::<Vec<_>>());
        rows.push(summarize(&rejections(&adj, alpha), &h_raw, req.effect.num_zero, mtp, true));
    }
    Ok(OracleReport {
        s: cfg.s,
        b_perm: req.needs_nulls().then_some(cfg.b_perm),
        ci_half_width: 1.96 * (0.25 / cfg.s as f64).sqrt(),
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    #[serde(rename = "MTP")]
    pub mtp: MtpId,
    pub definition: PowerDefinition,
    pub engine: Cell,
    pub oracle: f64,
    pub inside: bool,
}

/// Engine versus full simulation for one request, with the exact single-test
/// power per outcome under the sampled law and under a noncentral t.
pub fn validate_against_oracle(cfg: &OracleConfig, seed: u64) -> Result<Value> {
    let engine = pump_power(&cfg.req, seed)?;
    let oracle = oracle_power(cfg, seed ^ 0x9e37_79b9)?;
    let mut comparisons = Vec::new();
    for row in &oracle.rows {
        for (def, cell) in row.cells() {
            if let Some(e) = engine.get(row.mtp, def) {
                comparisons.push(Comparison {
                    mtp: row.mtp,
                    definition: def,
                    engine: e,
                    oracle: cell.value,
                    inside: (e.value - cell.value).abs() <= oracle.ci_half_width,
                });
            }
        }
    }
    let p = &cfg.req.params;
    let df = engine.df as f64;
    let closed_form: Vec<f64> = shifts(&cfg.req)
        .iter()
        .map(|&s| shifted_t_power(s, df, p.alpha, p.two_sided))
        .collect::<Result<_>>()?;
    let noncentral: Vec<f64> = shifts(&cfg.req)
        .iter()
        .map(|&s| noncentral_t_power(s, df, p.alpha, p.two_sided))
        .collect::<Result<_>>()?;
    let all_inside = comparisons.iter().all(|c| c.inside);
    Ok(json!({
        "d_m": cfg.req.design.code(),
        "S": cfg.s,
        "B.perm": oracle.b_perm,
        "rho.all": cfg.rho,
        "ci_half_width": oracle.ci_half_width,
        "engine": engine.to_json(),
        "oracle": oracle,
        "closed_form_indiv": closed_form,
        "noncentral_indiv": noncentral,
        "comparisons": comparisons,
        "all_inside": all_inside,
    }))
}
