//! Multilevel potential-outcomes data-generating process.
//!
//! Control parameters (ICC, R², ω, effect size) are translated into the
//! structural coefficients of a three-level model with district covariate
//! `V`, school covariate `X`, individual covariate `C`, random intercepts and
//! impacts at the district (`w0`, `w1`) and school (`u0`, `u1`) levels, and an
//! individual residual `r`. The residual variance is normalized to 1 and the
//! control grand mean to 0.

mod assign;
mod generate;
mod moments;
pub mod oracle;

pub use assign::{assign_treatment, scheme_for, Scheme};
pub use generate::{generate_dataset, GeneratedDataset, OutcomeColumns};
pub use moments::{empirical_moments, EmpiricalMoments};

use serde::Serialize;

use crate::error::{FieldError, PumpError, Result};
use crate::request::CheckedRequest;
use crate::sampler::{check_correlation, exchangeable};

/// Correlations across outcomes for every random component.
///
/// Matrices are row-major M x M. `kappa_w[m][m']` is the correlation between
/// the district intercept of outcome m and the district impact of outcome m'
/// (likewise `kappa_u` at the school level); these need not be symmetric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlations {
    pub rho_v: Vec<f64>,
    pub rho_x: Vec<f64>,
    pub rho_c: Vec<f64>,
    pub rho_w0: Vec<f64>,
    pub rho_w1: Vec<f64>,
    pub rho_u0: Vec<f64>,
    pub rho_u1: Vec<f64>,
    pub rho_r: Vec<f64>,
    pub kappa_w: Vec<f64>,
    pub kappa_u: Vec<f64>,
}

impl Correlations {
    /// One correlation for every matrix, no intercept-impact correlation.
    pub fn uniform(m: usize, rho: f64) -> Self {
        let e = exchangeable(m, rho);
        Correlations {
            rho_v: e.clone(),
            rho_x: e.clone(),
            rho_c: e.clone(),
            rho_w0: e.clone(),
            rho_w1: e.clone(),
            rho_u0: e.clone(),
            rho_u1: e.clone(),
            rho_r: e,
            kappa_w: vec![0.0; m * m],
            kappa_u: vec![0.0; m * m],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpControl {
    pub m: usize,
    pub k: usize,
    pub j: usize,
    pub nbar: usize,
    pub tbar: f64,
    pub es: Vec<f64>,
    pub icc_2: Vec<f64>,
    pub icc_3: Vec<f64>,
    pub omega_2: Vec<f64>,
    pub omega_3: Vec<f64>,
    pub r2_1: Vec<f64>,
    pub r2_2: Vec<f64>,
    pub r2_3: Vec<f64>,
    pub corr: Correlations,
}

impl DgpControl {
    /// Control parameters matching a power request, with `rho` filling every
    /// correlation matrix.
    pub fn from_request(req: &CheckedRequest, rho: f64) -> Self {
        let p = &req.params;
        DgpControl {
            m: p.m,
            k: p.k as usize,
            j: p.j as usize,
            nbar: p.nbar as usize,
            tbar: p.tbar,
            es: req.effect.mdes.clone(),
            icc_2: p.icc_2.clone(),
            icc_3: p.icc_3.clone(),
            omega_2: p.omega_2.clone(),
            omega_3: p.omega_3.clone(),
            r2_1: p.r2_1.clone(),
            r2_2: p.r2_2.clone(),
            r2_3: p.r2_3.clone(),
            corr: Correlations::uniform(p.m, rho),
        }
    }

    pub fn check(&self) -> Result<()> {
        let mut errs = Vec::new();
        let m = self.m;
        for (name, v) in [
            ("MDES", &self.es),
            ("ICC.2", &self.icc_2),
            ("ICC.3", &self.icc_3),
            ("omega.2", &self.omega_2),
            ("omega.3", &self.omega_3),
            ("R2.1", &self.r2_1),
            ("R2.2", &self.r2_2),
            ("R2.3", &self.r2_3),
        ] {
            if v.len() != m {
                errs.push(FieldError::new(name, format!("expected {m} values")));
            }
        }
        if !errs.is_empty() {
            return Err(PumpError::Validation(errs));
        }
        for i in 0..m {
            if !(self.icc_2[i] >= 0.0 && self.icc_3[i] >= 0.0 && self.icc_2[i] + self.icc_3[i] < 1.0) {
                errs.push(FieldError::new("ICC.2", "ICC values must be >= 0 with ICC.2 + ICC.3 < 1"));
            }
            for (name, r) in [("R2.1", self.r2_1[i]), ("R2.2", self.r2_2[i]), ("R2.3", self.r2_3[i])] {
                if !(0.0..1.0).contains(&r) {
                    errs.push(FieldError::new(name, "must be in [0,1)"));
                }
            }
            if self.omega_2[i] < 0.0 || self.omega_3[i] < 0.0 {
                errs.push(FieldError::new("omega.2", "omega values must be >= 0"));
            }
        }
        if !(self.tbar > 0.0 && self.tbar < 1.0) {
            errs.push(FieldError::new("Tbar", "Tbar must be in (0,1)"));
        }
        if self.k == 0 || self.j == 0 || self.nbar == 0 {
            errs.push(FieldError::new("nbar", "group sizes must be positive"));
        }
        let c = &self.corr;
        for (name, mat) in [
            ("rho.V", &c.rho_v),
            ("rho.X", &c.rho_x),
            ("rho.C", &c.rho_c),
            ("rho.w0", &c.rho_w0),
            ("rho.w1", &c.rho_w1),
            ("rho.u0", &c.rho_u0),
            ("rho.u1", &c.rho_u1),
            ("rho.r", &c.rho_r),
        ] {
            if let Err(e) = check_correlation(mat, m) {
                errs.push(FieldError::new(name, e.to_string()));
            }
        }
        for (name, mat) in [("kappa.w", &c.kappa_w), ("kappa.u", &c.kappa_u)] {
            if mat.len() != m * m || mat.iter().any(|v| !(v.abs() <= 1.0)) {
                errs.push(FieldError::new(name, format!("must be {m}x{m} with entries in [-1,1]")));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PumpError::Validation(errs))
        }
    }
}

/// Structural coefficients of one outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutcomeModel {
    pub gamma: f64,
    pub delta: f64,
    pub xi: f64,
    pub tau0_sq: f64,
    pub tau1_sq: f64,
    pub eta0_sq: f64,
    pub eta1_sq: f64,
    pub sigma_sq: f64,
    /// Control grand mean.
    pub grand_control: f64,
    /// Grand mean impact.
    pub grand_impact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpModelParams {
    pub outcomes: Vec<OutcomeModel>,
}

/// ICC, R² and ω as defined from the structural coefficients; `None` where a
/// defining ratio is 0/0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImpliedControl {
    pub icc_2: f64,
    pub icc_3: f64,
    pub r2_1: f64,
    pub r2_2: Option<f64>,
    pub r2_3: Option<f64>,
    pub omega_2: Option<f64>,
    pub omega_3: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

impl OutcomeModel {
    pub fn total_control_variance(&self) -> f64 {
        self.xi * self.xi + self.eta0_sq + self.delta * self.delta + self.tau0_sq + self.gamma * self.gamma + self.sigma_sq
    }

    pub fn implied(&self) -> ImpliedControl {
        let total = self.total_control_variance();
        let level3 = self.xi * self.xi + self.eta0_sq;
        let level2 = self.delta * self.delta + self.tau0_sq;
        let level1 = self.gamma * self.gamma + self.sigma_sq;
        ImpliedControl {
            icc_2: level2 / total,
            icc_3: level3 / total,
            r2_1: 1.0 - self.sigma_sq / level1,
            r2_2: ratio(self.tau0_sq, level2).map(|v| 1.0 - v),
            r2_3: ratio(self.eta0_sq, level3).map(|v| 1.0 - v),
            omega_2: ratio(self.tau1_sq, level2),
            omega_3: ratio(self.eta1_sq, level3),
        }
    }
}

pub fn solve_model_params(c: &DgpControl) -> Result<DgpModelParams> {
    c.check()?;
    let outcomes = (0..c.m)
        .map(|m| {
            let r1 = c.r2_1[m];
            let (i2, i3) = (c.icc_2[m], c.icc_3[m]);
            let rest = 1.0 - i3 - i2;
            let gamma_sq = r1 / (1.0 - r1);
            let delta_sq = c.r2_2[m] / (1.0 - r1) * i2 / rest;
            let xi_sq = c.r2_3[m] / (1.0 - r1) * i3 / rest;
            let tau0_sq = (1.0 - c.r2_2[m]) / (1.0 - r1) * i2 / rest;
            let eta0_sq = (1.0 - c.r2_3[m]) / (1.0 - r1) * i3 / rest;
            let eta1_sq = c.omega_3[m] * (eta0_sq + xi_sq);
            let tau1_sq = c.omega_2[m] * (tau0_sq + delta_sq);
            let total = xi_sq + eta0_sq + delta_sq + tau0_sq + gamma_sq + 1.0;
            OutcomeModel {
                gamma: gamma_sq.sqrt(),
                delta: delta_sq.sqrt(),
                xi: xi_sq.sqrt(),
                tau0_sq,
                tau1_sq,
                eta0_sq,
                eta1_sq,
                sigma_sq: 1.0,
                grand_control: 0.0,
                grand_impact: c.es[m] * total.sqrt(),
            }
        })
        .collect();
    Ok(DgpModelParams { outcomes })
}

/// Joint 2M x 2M covariance of (intercepts, impacts) at one level.
pub(crate) fn joint_effect_covariance(
    rho0: &[f64],
    rho1: &[f64],
    kappa: &[f64],
    sd0: &[f64],
    sd1: &[f64],
) -> Vec<f64> {
    let m = sd0.len();
    let n = 2 * m;
    let mut out = vec![0.0; n * n];
    for a in 0..m {
        for b in 0..m {
            out[a * n + b] = rho0[a * m + b] * sd0[a] * sd0[b];
            out[(m + a) * n + (m + b)] = rho1[a * m + b] * sd1[a] * sd1[b];
            let cross = kappa[a * m + b] * sd0[a] * sd1[b];
            out[a * n + (m + b)] = cross;
            out[(m + b) * n + a] = cross;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn control(m: usize) -> DgpControl {
        DgpControl {
            m,
            k: 10,
            j: 5,
            nbar: 10,
            tbar: 0.5,
            es: vec![0.2; m],
            icc_2: vec![0.2; m],
            icc_3: vec![0.2; m],
            omega_2: vec![0.0; m],
            omega_3: vec![0.0; m],
            r2_1: vec![0.0; m],
            r2_2: vec![0.0; m],
            r2_3: vec![0.0; m],
            corr: Correlations::uniform(m, 0.0),
        }
    }

    #[test]
    fn zero_r2_symmetric_case() {
        let mp = solve_model_params(&control(1)).unwrap();
        let o = mp.outcomes[0];
        assert_eq!((o.gamma, o.delta, o.xi), (0.0, 0.0, 0.0));
        assert_abs_diff_eq!(o.tau0_sq, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.eta0_sq, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.total_control_variance(), 5.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn two_level_round_trip() {
        let mut c = control(1);
        c.r2_1 = vec![0.1];
        c.icc_3 = vec![0.0];
        let o = solve_model_params(&c).unwrap().outcomes[0];
        assert_abs_diff_eq!(o.gamma * o.gamma, 1.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.delta * o.delta + o.tau0_sq, 0.2 / (0.9 * 0.8), epsilon = 1e-15);
        assert_abs_diff_eq!(o.implied().icc_2, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn joint_covariance_layout() {
        let cov = joint_effect_covariance(&[1.0, 0.5, 0.5, 1.0], &[1.0, 0.2, 0.2, 1.0], &[0.1, 0.3, 0.0, 0.4], &[1.0, 2.0], &[3.0, 4.0]);
        // [w0_1, w0_2, w1_1, w1_2]
        assert_eq!(cov[1], 0.5 * 2.0);
        assert_eq!(cov[2 * 4 + 3], 0.2 * 12.0);
        assert_eq!(cov[3], 0.3 * 1.0 * 4.0);
        assert_eq!(cov[3 * 4], 0.3 * 4.0);
        assert_eq!(cov[4 + 2], 0.0);
    }

    proptest! {
        #[test]
        fn total_variance_identity(i2 in 0.0f64..0.49, i3 in 0.0f64..0.49, r1 in 0.0f64..0.95, r2 in 0.0f64..0.95) {
            let mut c = control(1);
            c.icc_2 = vec![i2];
            c.icc_3 = vec![i3];
            c.r2_1 = vec![r1];
            c.r2_2 = vec![r2];
            let o = solve_model_params(&c).unwrap().outcomes[0];
            let expected = 1.0 / ((1.0 - r1) * (1.0 - i2 - i3));
            prop_assert!((o.total_control_variance() - expected).abs() < 1e-12 * expected);
        }
    }
}
