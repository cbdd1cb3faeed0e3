//! Design/model taxonomy and the closed-form quantities attached to each
//! scenario: the standard error of the effect-size estimate, its degrees of
//! freedom, the MDES multiplier, and the sample-size inversions.

use serde::{Deserialize, Serialize};

use crate::dist::t_upper_quantile;
use crate::error::{FieldError, PumpError, Result};

/// Supported design/model combinations.
///
/// The code concatenates the design (`d<levels>.<randomization level>`) with
/// the model (`m<level><intercept><impact>...`), e.g. `d3.2_m3fc2rc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum DesignModelId {
    #[serde(rename = "d1.1_m1c")]
    D1_1M1c,
    #[serde(rename = "d2.1_m2fc")]
    D2_1M2fc,
    #[serde(rename = "d2.1_m2ff")]
    D2_1M2ff,
    #[serde(rename = "d2.1_m2fr")]
    D2_1M2fr,
    #[serde(rename = "d2.1_m2rr")]
    D2_1M2rr,
    #[serde(rename = "d2.2_m2rc")]
    D2_2M2rc,
    #[serde(rename = "d3.1_m3rr2rr")]
    D3_1M3rr2rr,
    #[serde(rename = "d3.2_m3ff2rc")]
    D3_2M3ff2rc,
    #[serde(rename = "d3.2_m3fc2rc")]
    D3_2M3fc2rc,
    #[serde(rename = "d3.2_m3rr2rc")]
    D3_2M3rr2rc,
    #[serde(rename = "d3.3_m3rc2rc")]
    D3_3M3rc2rc,
}

/// Per-outcome parameters that may or may not enter a scenario's formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelParam {
    R2_1,
    R2_2,
    R2_3,
    Icc2,
    Icc3,
    Omega2,
    Omega3,
}

impl ModelParam {
    pub const ALL: [ModelParam; 7] = [
        ModelParam::R2_1,
        ModelParam::R2_2,
        ModelParam::R2_3,
        ModelParam::Icc2,
        ModelParam::Icc3,
        ModelParam::Omega2,
        ModelParam::Omega3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelParam::R2_1 => "R2.1",
            ModelParam::R2_2 => "R2.2",
            ModelParam::R2_3 => "R2.3",
            ModelParam::Icc2 => "ICC.2",
            ModelParam::Icc3 => "ICC.3",
            ModelParam::Omega2 => "omega.2",
            ModelParam::Omega3 => "omega.3",
        }
    }
}

/// Sample-size dimension a search or inversion acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SizeLevel {
    #[serde(rename = "nbar")]
    Nbar,
    J,
    K,
}

impl SizeLevel {
    pub fn name(self) -> &'static str {
        match self {
            SizeLevel::Nbar => "nbar",
            SizeLevel::J => "J",
            SizeLevel::K => "K",
        }
    }

    pub fn parse(s: &str) -> Option<SizeLevel> {
        match s {
            "nbar" => Some(SizeLevel::Nbar),
            "J" => Some(SizeLevel::J),
            "K" => Some(SizeLevel::K),
            _ => None,
        }
    }
}

impl DesignModelId {
    pub const ALL: [DesignModelId; 11] = [
        DesignModelId::D1_1M1c,
        DesignModelId::D2_1M2fc,
        DesignModelId::D2_1M2ff,
        DesignModelId::D2_1M2fr,
        DesignModelId::D2_1M2rr,
        DesignModelId::D2_2M2rc,
        DesignModelId::D3_1M3rr2rr,
        DesignModelId::D3_2M3ff2rc,
        DesignModelId::D3_2M3fc2rc,
        DesignModelId::D3_2M3rr2rc,
        DesignModelId::D3_3M3rc2rc,
    ];

    pub fn code(self) -> &'static str {
        match self {
            DesignModelId::D1_1M1c => "d1.1_m1c",
            DesignModelId::D2_1M2fc => "d2.1_m2fc",
            DesignModelId::D2_1M2ff => "d2.1_m2ff",
            DesignModelId::D2_1M2fr => "d2.1_m2fr",
            DesignModelId::D2_1M2rr => "d2.1_m2rr",
            DesignModelId::D2_2M2rc => "d2.2_m2rc",
            DesignModelId::D3_1M3rr2rr => "d3.1_m3rr2rr",
            DesignModelId::D3_2M3ff2rc => "d3.2_m3ff2rc",
            DesignModelId::D3_2M3fc2rc => "d3.2_m3fc2rc",
            DesignModelId::D3_2M3rr2rc => "d3.2_m3rr2rc",
            DesignModelId::D3_3M3rc2rc => "d3.3_m3rc2rc",
        }
    }

    pub fn parse(code: &str) -> Result<DesignModelId> {
        Self::ALL
            .into_iter()
            .find(|d| d.code() == code)
            .ok_or_else(|| PumpError::field("d_m", format!("unknown design/model code `{code}`")))
    }

    /// Number of levels in the hierarchy.
    pub fn levels(self) -> u8 {
        match self {
            DesignModelId::D1_1M1c => 1,
            DesignModelId::D2_1M2fc
            | DesignModelId::D2_1M2ff
            | DesignModelId::D2_1M2fr
            | DesignModelId::D2_1M2rr
            | DesignModelId::D2_2M2rc => 2,
            _ => 3,
        }
    }

    /// Level at which treatment is assigned.
    pub fn randomization_level(self) -> u8 {
        match self {
            DesignModelId::D1_1M1c
            | DesignModelId::D2_1M2fc
            | DesignModelId::D2_1M2ff
            | DesignModelId::D2_1M2fr
            | DesignModelId::D2_1M2rr
            | DesignModelId::D3_1M3rr2rr => 1,
            DesignModelId::D2_2M2rc
            | DesignModelId::D3_2M3ff2rc
            | DesignModelId::D3_2M3fc2rc
            | DesignModelId::D3_2M3rr2rc => 2,
            DesignModelId::D3_3M3rc2rc => 3,
        }
    }

    /// Name of the matching PowerUp! scenario, where one exists.
    pub fn powerup_name(self) -> Option<&'static str> {
        match self {
            DesignModelId::D1_1M1c => None,
            DesignModelId::D2_1M2fc => Some("bira2_1c"),
            DesignModelId::D2_1M2ff => Some("bira2_1f"),
            DesignModelId::D2_1M2fr => Some("bira2_1r"),
            DesignModelId::D2_1M2rr => None,
            DesignModelId::D2_2M2rc => Some("cra2_2r"),
            DesignModelId::D3_1M3rr2rr => Some("bira3_1r"),
            DesignModelId::D3_2M3ff2rc => Some("bcra3_2f"),
            DesignModelId::D3_2M3fc2rc => None,
            DesignModelId::D3_2M3rr2rc => Some("bcra3_2r"),
            DesignModelId::D3_3M3rc2rc => Some("cra3_3r"),
        }
    }

    /// Per-outcome parameters that enter this scenario's standard error.
    pub fn relevant_params(self) -> &'static [ModelParam] {
        use ModelParam::*;
        match self {
            DesignModelId::D1_1M1c => &[R2_1],
            DesignModelId::D2_1M2fc | DesignModelId::D2_1M2ff => &[R2_1, Icc2],
            DesignModelId::D2_1M2fr | DesignModelId::D2_1M2rr => &[R2_1, Icc2, Omega2],
            DesignModelId::D2_2M2rc => &[R2_1, R2_2, Icc2],
            DesignModelId::D3_1M3rr2rr => &[R2_1, Icc2, Omega2, Icc3, Omega3],
            DesignModelId::D3_2M3ff2rc | DesignModelId::D3_2M3fc2rc => &[R2_1, R2_2, Icc2, Icc3],
            DesignModelId::D3_2M3rr2rc => &[R2_1, R2_2, Icc2, Icc3, Omega3],
            DesignModelId::D3_3M3rc2rc => &[R2_1, R2_2, Icc2, R2_3, Icc3],
        }
    }

    pub fn is_relevant(self, param: ModelParam) -> bool {
        self.relevant_params().contains(&param)
    }

    /// Sample-size dimensions that exist for this design.
    pub fn size_levels(self) -> &'static [SizeLevel] {
        match self.levels() {
            1 => &[SizeLevel::Nbar],
            2 => &[SizeLevel::Nbar, SizeLevel::J],
            _ => &[SizeLevel::Nbar, SizeLevel::J, SizeLevel::K],
        }
    }

    /// The top-level sample size; searches over it never hit the flat-curve regime.
    pub fn top_level(self) -> SizeLevel {
        match self.levels() {
            1 => SizeLevel::Nbar,
            2 => SizeLevel::J,
            _ => SizeLevel::K,
        }
    }
}

impl std::fmt::Display for DesignModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// Fully resolved design parameters: every per-outcome vector has length `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    #[serde(rename = "M")]
    pub m: usize,
    pub nbar: u32,
    #[serde(rename = "J")]
    pub j: u32,
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "Tbar")]
    pub tbar: f64,
    #[serde(rename = "numCovar.1")]
    pub num_covar_1: u32,
    #[serde(rename = "numCovar.2")]
    pub num_covar_2: u32,
    #[serde(rename = "numCovar.3")]
    pub num_covar_3: u32,
    #[serde(rename = "R2.1")]
    pub r2_1: Vec<f64>,
    #[serde(rename = "R2.2")]
    pub r2_2: Vec<f64>,
    #[serde(rename = "R2.3")]
    pub r2_3: Vec<f64>,
    #[serde(rename = "ICC.2")]
    pub icc_2: Vec<f64>,
    #[serde(rename = "ICC.3")]
    pub icc_3: Vec<f64>,
    #[serde(rename = "omega.2")]
    pub omega_2: Vec<f64>,
    #[serde(rename = "omega.3")]
    pub omega_3: Vec<f64>,
    pub alpha: f64,
    pub two_sided: bool,
}

impl DesignParams {
    /// All-zero variance parameters for `m` outcomes with unit sizes.
    pub fn zeros(m: usize) -> Self {
        DesignParams {
            m,
            nbar: 1,
            j: 1,
            k: 1,
            tbar: 0.5,
            num_covar_1: 0,
            num_covar_2: 0,
            num_covar_3: 0,
            r2_1: vec![0.0; m],
            r2_2: vec![0.0; m],
            r2_3: vec![0.0; m],
            icc_2: vec![0.0; m],
            icc_3: vec![0.0; m],
            omega_2: vec![0.0; m],
            omega_3: vec![0.0; m],
            alpha: 0.05,
            two_sided: true,
        }
    }

    pub fn values(&self, param: ModelParam) -> &[f64] {
        match param {
            ModelParam::R2_1 => &self.r2_1,
            ModelParam::R2_2 => &self.r2_2,
            ModelParam::R2_3 => &self.r2_3,
            ModelParam::Icc2 => &self.icc_2,
            ModelParam::Icc3 => &self.icc_3,
            ModelParam::Omega2 => &self.omega_2,
            ModelParam::Omega3 => &self.omega_3,
        }
    }

    pub fn size(&self, level: SizeLevel) -> u32 {
        match level {
            SizeLevel::Nbar => self.nbar,
            SizeLevel::J => self.j,
            SizeLevel::K => self.k,
        }
    }

    pub fn set_size(&mut self, level: SizeLevel, value: u32) {
        match level {
            SizeLevel::Nbar => self.nbar = value,
            SizeLevel::J => self.j = value,
            SizeLevel::K => self.k = value,
        }
    }
}

/// Effect sizes after broadcasting; the last `num_zero` entries are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSpec {
    #[serde(rename = "MDES")]
    pub mdes: Vec<f64>,
    #[serde(rename = "numZero")]
    pub num_zero: usize,
}

/// Standard error of the estimated effect size for outcome `m` (0-based).
pub fn standard_error(d: DesignModelId, p: &DesignParams, m: usize) -> f64 {
    variance_of_estimate(d, p, m, p.nbar as f64, p.j as f64, p.k as f64).sqrt()
}

/// `Q_m^2` evaluated at real-valued sizes; the search uses this between integers.
pub(crate) fn variance_of_estimate(
    d: DesignModelId,
    p: &DesignParams,
    m: usize,
    nbar: f64,
    j: f64,
    k: f64,
) -> f64 {
    let tt = p.tbar * (1.0 - p.tbar);
    let r1 = 1.0 - p.r2_1[m];
    let r2 = 1.0 - p.r2_2[m];
    let r3 = 1.0 - p.r2_3[m];
    let icc2 = p.icc_2[m];
    let icc3 = p.icc_3[m];
    let w2 = p.omega_2[m];
    let w3 = p.omega_3[m];
    let within3 = (1.0 - icc2 - icc3) * r1;
    match d {
        DesignModelId::D1_1M1c => r1 / (tt * j * nbar),
        DesignModelId::D2_1M2fc | DesignModelId::D2_1M2ff => (1.0 - icc2) * r1 / (tt * j * nbar),
        DesignModelId::D2_1M2fr | DesignModelId::D2_1M2rr => {
            icc2 * w2 / j + (1.0 - icc2) * r1 / (tt * j * nbar)
        }
        DesignModelId::D2_2M2rc => icc2 * r2 / (tt * j) + (1.0 - icc2) * r1 / (tt * j * nbar),
        DesignModelId::D3_1M3rr2rr => {
            icc3 * w3 / k + icc2 * w2 / (j * k) + within3 / (tt * j * k * nbar)
        }
        DesignModelId::D3_2M3ff2rc | DesignModelId::D3_2M3fc2rc => {
            icc2 * r2 / (tt * j * k) + within3 / (tt * j * k * nbar)
        }
        DesignModelId::D3_2M3rr2rc => {
            icc3 * w3 / k + icc2 * r2 / (tt * j * k) + within3 / (tt * j * k * nbar)
        }
        DesignModelId::D3_3M3rc2rc => {
            icc3 * r3 / (tt * k) + icc2 * r2 / (tt * j * k) + within3 / (tt * j * k * nbar)
        }
    }
}

/// Degrees of freedom as a signed value, before the `df >= 1` check.
pub(crate) fn raw_degrees_of_freedom(d: DesignModelId, p: &DesignParams) -> i64 {
    let n = p.nbar as i64;
    let j = p.j as i64;
    let k = p.k as i64;
    let g1 = p.num_covar_1 as i64;
    let g2 = p.num_covar_2 as i64;
    let g3 = p.num_covar_3 as i64;
    match d {
        DesignModelId::D1_1M1c => j * n - g1 - 1,
        DesignModelId::D2_1M2fc => j * n - g1 - j - 1,
        DesignModelId::D2_1M2ff => j * n - g1 - 2 * j,
        // g1 here reproduces the published formula even though it counts level-1 covariates
        DesignModelId::D2_1M2fr | DesignModelId::D2_1M2rr => j - g1 - 1,
        DesignModelId::D2_2M2rc => j - g1 - 2,
        DesignModelId::D3_1M3rr2rr => k - 1,
        DesignModelId::D3_2M3ff2rc => k * (j - 2) - g2,
        DesignModelId::D3_2M3fc2rc => fixed_block_constant_df(j, k, g2),
        DesignModelId::D3_2M3rr2rc => k - 1,
        DesignModelId::D3_3M3rc2rc => k - g3 - 2,
    }
}

/// Degrees of freedom for blocked cluster designs with block fixed effects and
/// a single treatment coefficient: JK schools minus K block intercepts, one
/// treatment coefficient and the school covariates.
fn fixed_block_constant_df(j: i64, k: i64, g2: i64) -> i64 {
    j * k - k - g2 - 1
}

pub fn degrees_of_freedom(d: DesignModelId, p: &DesignParams) -> Result<u64> {
    let df = raw_degrees_of_freedom(d, p);
    if df < 1 {
        return Err(PumpError::DegreesOfFreedom {
            design: d.code().to_string(),
            df,
        });
    }
    Ok(df as u64)
}

/// MDES multiplier `t*_alpha + t*_{1-beta}` (or `t*_{alpha/2}` when two-sided).
///
/// `beta` is the type II error rate, i.e. one minus the targeted power.
pub fn mdes_multiplier(df: f64, alpha: f64, beta: f64, two_sided: bool) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PumpError::field("alpha", "must be in (0,1)"));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(PumpError::field("beta", "must be in (0,1)"));
    }
    if !(df > 0.0) {
        return Err(PumpError::Degenerate(format!("df must be positive, got {df}")));
    }
    let a = if two_sided { alpha / 2.0 } else { alpha };
    Ok(t_upper_quantile(a, df) + t_upper_quantile(beta, df))
}

/// Real-valued size at which outcome `m` reaches `mdes` with multiplier `mt`.
///
/// Each arm is the scenario's published inversion of its `Q_m` formula. The
/// result is not rounded.
pub fn closed_form_sample_size(
    d: DesignModelId,
    p: &DesignParams,
    m: usize,
    mdes: f64,
    mt: f64,
    level: SizeLevel,
) -> Result<f64> {
    if !d.size_levels().contains(&level) {
        return Err(PumpError::field(
            level.name(),
            format!("{} is not a sample-size dimension of {}", level.name(), d.code()),
        ));
    }
    if !(mdes > 0.0) || !(mt > 0.0) {
        return Err(PumpError::field("MDES", "MDES and multiplier must be positive"));
    }
    let ratio2 = (mt / mdes).powi(2);
    let inv2 = 1.0 / ratio2;
    let tt = p.tbar * (1.0 - p.tbar);
    let n = p.nbar as f64;
    let j = p.j as f64;
    let k = p.k as f64;
    let r1 = 1.0 - p.r2_1[m];
    let r2 = 1.0 - p.r2_2[m];
    let r3 = 1.0 - p.r2_3[m];
    let icc2 = p.icc_2[m];
    let icc3 = p.icc_3[m];
    let w2 = p.omega_2[m];
    let w3 = p.omega_3[m];
    let within3 = (1.0 - icc2 - icc3) * r1;

    use DesignModelId::*;
    use SizeLevel::*;
    // (numerator, denominator)
    let (num, den) = match (d, level) {
        (D1_1M1c, Nbar) => (ratio2 * r1, tt * j),
        (D2_1M2fc | D2_1M2ff, J) => (ratio2 * (1.0 - icc2) * r1, n * tt),
        (D2_1M2fc | D2_1M2ff, Nbar) => (ratio2 * (1.0 - icc2) * r1, j * tt),
        (D2_1M2fr | D2_1M2rr, J) => (ratio2 * (icc2 * w2 + (1.0 - icc2) * r1 / (tt * n)), 1.0),
        (D2_1M2fr | D2_1M2rr, Nbar) => ((1.0 - icc2) * r1, tt * (j * inv2 - icc2 * w2)),
        (D2_2M2rc, J) => (ratio2 * (n * icc2 * r2 + (1.0 - icc2) * r1), tt * n),
        (D2_2M2rc, Nbar) => ((1.0 - icc2) * r1, tt * j * inv2 - icc2 * r2),
        (D3_1M3rr2rr, K) => (
            ratio2 * (icc3 * w3 + icc2 * w2 / j + within3 / (tt * j * n)),
            1.0,
        ),
        (D3_1M3rr2rr, J) => (within3 + tt * n * icc2 * w2, tt * n * (k * inv2 - icc3 * w3)),
        (D3_1M3rr2rr, Nbar) => (within3, tt * (j * k * inv2 - j * icc3 * w3 - icc2 * w2)),
        (D3_2M3ff2rc | D3_2M3fc2rc, K) => (
            ratio2 * (icc2 * r2 / (tt * j) + within3 / (tt * j * n)),
            1.0,
        ),
        (D3_2M3ff2rc | D3_2M3fc2rc, J) => (n * icc2 * r2 + within3, n * tt * k * inv2),
        (D3_2M3ff2rc | D3_2M3fc2rc, Nbar) => (within3, tt * j * k * inv2 - icc2 * r2),
        (D3_2M3rr2rc, K) => (
            ratio2 * (icc3 * w3 + icc2 * r2 / (tt * j) + within3 / (tt * j * n)),
            1.0,
        ),
        (D3_2M3rr2rc, J) => (n * icc2 * r2 + within3, n * tt * (k * inv2 - icc3 * w3)),
        (D3_2M3rr2rc, Nbar) => (within3, tt * j * (k * inv2 - icc3 * w3) - icc2 * r2),
        (D3_3M3rc2rc, K) => (
            ratio2 * (icc3 * r3 / tt + icc2 * r2 / (tt * j) + within3 / (tt * j * n)),
            1.0,
        ),
        (D3_3M3rc2rc, J) => (n * icc2 * r2 + within3, n * (tt * k * inv2 - icc3 * r3)),
        (D3_3M3rc2rc, Nbar) => (within3, tt * j * k * inv2 - j * icc3 * r3 - icc2 * r2),
        _ => unreachable!("size level checked above"),
    };
    if !(den > 0.0) {
        return Err(PumpError::Infeasible {
            level: level.name().to_string(),
            detail: format!(
                "{} outcome {}: MDES {mdes} with multiplier {mt:.4} needs a non-positive denominator {den:.4e}",
                d.code(),
                m + 1
            ),
        });
    }
    Ok(num / den)
}

/// Domain checks on resolved parameters. Every violation is reported.
pub fn validate(d: DesignModelId, p: &DesignParams, e: &EffectSpec) -> std::result::Result<(), Vec<FieldError>> {
    let mut errs = Vec::new();
    if p.m == 0 {
        errs.push(FieldError::new("M", "M must be at least 1"));
    }
    if !(p.tbar > 0.0 && p.tbar < 1.0) {
        errs.push(FieldError::new("Tbar", "Tbar must be in (0,1)"));
    }
    if !(p.alpha > 0.0 && p.alpha < 1.0) {
        errs.push(FieldError::new("alpha", "alpha must be in (0,1)"));
    }
    if p.nbar == 0 {
        errs.push(FieldError::new("nbar", "nbar must be at least 1"));
    }
    if p.j == 0 {
        errs.push(FieldError::new("J", "J must be at least 1"));
    }
    if p.k == 0 {
        errs.push(FieldError::new("K", "K must be at least 1"));
    }
    if d.levels() < 3 && p.k != 1 {
        errs.push(FieldError::new("K", format!("K is not a parameter of {} (must be absent or 1)", d.code())));
    }
    if d.levels() < 3 && p.num_covar_3 != 0 {
        errs.push(FieldError::new("numCovar.3", format!("not a parameter of {}", d.code())));
    }
    for param in ModelParam::ALL {
        let vals = p.values(param);
        if vals.len() != p.m {
            errs.push(FieldError::new(
                param.name(),
                format!("expected {} values (one per outcome), got {}", p.m, vals.len()),
            ));
            continue;
        }
        let is_r2 = matches!(param, ModelParam::R2_1 | ModelParam::R2_2 | ModelParam::R2_3);
        let is_icc = matches!(param, ModelParam::Icc2 | ModelParam::Icc3);
        for &v in vals {
            if !v.is_finite() {
                errs.push(FieldError::new(param.name(), "must be finite"));
            } else if (is_r2 || is_icc) && !(0.0..1.0).contains(&v) {
                errs.push(FieldError::new(param.name(), format!("{v} outside [0,1)")));
            } else if !(is_r2 || is_icc) && v < 0.0 {
                errs.push(FieldError::new(param.name(), format!("{v} must be >= 0")));
            } else if v != 0.0 && !d.is_relevant(param) {
                errs.push(FieldError::new(
                    param.name(),
                    format!("{} is not a parameter of {} (must be absent or zero)", param.name(), d.code()),
                ));
            } else {
                continue;
            }
            break;
        }
    }
    if p.icc_2.len() == p.m && p.icc_3.len() == p.m {
        if let Some(m) = (0..p.m).find(|&m| p.icc_2[m] + p.icc_3[m] >= 1.0) {
            errs.push(FieldError::new(
                "ICC.2",
                format!("ICC sum >= 1 for outcome {} (ICC.2 + ICC.3 must be < 1)", m + 1),
            ));
        }
    }
    if e.mdes.len() != p.m {
        errs.push(FieldError::new("MDES", format!("expected {} values, got {}", p.m, e.mdes.len())));
    }
    if e.mdes.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        errs.push(FieldError::new("MDES", "MDES entries must be finite and >= 0"));
    }
    if e.num_zero > p.m {
        errs.push(FieldError::new("numZero", format!("numZero must be in [0, {}]", p.m)));
    }
    if errs.is_empty() {
        if let Err(PumpError::DegreesOfFreedom { df, .. }) = degrees_of_freedom(d, p) {
            errs.push(FieldError::new(
                "df",
                format!("degrees of freedom {df} < 1 for {} at these sample sizes and covariate counts", d.code()),
            ));
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

/// One row of the design listing.
#[derive(Debug, Clone, Serialize)]
pub struct DesignInfo {
    pub d_m: &'static str,
    pub design: &'static str,
    pub model: &'static str,
    pub powerup: Option<&'static str>,
    pub params: Vec<&'static str>,
    pub sample_sizes: Vec<&'static str>,
}

pub fn design_listing() -> Vec<DesignInfo> {
    DesignModelId::ALL
        .into_iter()
        .map(|d| {
            let (design, model) = d.code().split_once('_').expect("codes contain an underscore");
            DesignInfo {
                d_m: d.code(),
                design,
                model,
                powerup: d.powerup_name(),
                params: d.relevant_params().iter().map(|p| p.name()).collect(),
                sample_sizes: d.size_levels().iter().map(|l| l.name()).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn diplomas_now() -> DesignParams {
        let mut p = DesignParams::zeros(5);
        p.nbar = 258;
        p.j = 3;
        p.k = 15;
        p.num_covar_1 = 5;
        p.num_covar_2 = 3;
        p.r2_1 = vec![0.1; 5];
        p.r2_2 = vec![0.7; 5];
        p.icc_2 = vec![0.05; 5];
        p.icc_3 = vec![0.4; 5];
        p
    }

    #[test]
    fn codes_round_trip() {
        assert_eq!(DesignModelId::ALL.len(), 11);
        for d in DesignModelId::ALL {
            assert_eq!(DesignModelId::parse(d.code()).unwrap(), d);
            let json = serde_json::to_string(&d).unwrap();
            assert_eq!(json, format!("\"{}\"", d.code()));
        }
        assert!(DesignModelId::parse("d2.1_m2xx").is_err());
    }

    #[test]
    fn se_two_level_constant_zero_icc() {
        let mut p = DesignParams::zeros(1);
        p.j = 10;
        p.nbar = 10;
        assert_abs_diff_eq!(standard_error(DesignModelId::D2_1M2fc, &p, 0), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn se_single_level() {
        let mut p = DesignParams::zeros(1);
        p.nbar = 400;
        assert_abs_diff_eq!(standard_error(DesignModelId::D1_1M1c, &p, 0), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn se_diplomas_now_blocked_cluster() {
        let p = diplomas_now();
        let q = standard_error(DesignModelId::D3_2M3fc2rc, &p, 0);
        let expected = (0.05f64 * 0.3 / (0.25 * 45.0) + 0.55 * 0.9 / (0.25 * 45.0 * 258.0)).sqrt();
        assert_relative_eq!(q, expected, max_relative = 1e-12);
    }

    #[test]
    fn fixed_and_constant_share_se_but_not_df() {
        let mut p = DesignParams::zeros(2);
        p.j = 20;
        p.nbar = 50;
        p.num_covar_1 = 1;
        p.icc_2 = vec![0.2, 0.3];
        p.r2_1 = vec![0.1, 0.4];
        for m in 0..2 {
            assert_eq!(
                standard_error(DesignModelId::D2_1M2fc, &p, m),
                standard_error(DesignModelId::D2_1M2ff, &p, m)
            );
        }
        assert_eq!(degrees_of_freedom(DesignModelId::D2_1M2fc, &p).unwrap(), 1000 - 1 - 20 - 1);
        assert_eq!(degrees_of_freedom(DesignModelId::D2_1M2ff, &p).unwrap(), 1000 - 1 - 40);
    }

    #[test]
    fn df_examples() {
        let mut p = DesignParams::zeros(1);
        p.k = 21;
        p.j = 3;
        p.num_covar_2 = 3;
        assert_eq!(degrees_of_freedom(DesignModelId::D3_2M3ff2rc, &p).unwrap(), 18);
        assert_eq!(degrees_of_freedom(DesignModelId::D3_2M3rr2rc, &p).unwrap(), 20);
        assert_eq!(degrees_of_freedom(DesignModelId::D3_2M3fc2rc, &p).unwrap(), 63 - 21 - 3 - 1);

        let mut p = DesignParams::zeros(1);
        p.j = 2;
        p.nbar = 2;
        p.num_covar_1 = 5;
        match degrees_of_freedom(DesignModelId::D2_1M2fc, &p) {
            Err(PumpError::DegreesOfFreedom { design, df }) => {
                assert_eq!(design, "d2.1_m2fc");
                assert_eq!(df, 4 - 5 - 2 - 1);
            }
            other => panic!("expected df error, got {other:?}"),
        }
    }

    #[test]
    fn multiplier_examples() {
        let mt = mdes_multiplier(18.0, 0.05, 0.2, true).unwrap();
        assert_abs_diff_eq!(mt, 2.100922 + 0.862049, epsilon = 1e-5);
        let mt = mdes_multiplier(18.0, 0.05, 0.2, false).unwrap();
        assert_abs_diff_eq!(mt, 1.734064 + 0.862049, epsilon = 1e-5);
        let mt = mdes_multiplier(1e7, 0.05, 0.5, true).unwrap();
        assert_abs_diff_eq!(mt, 1.959964, epsilon = 1e-4);
        assert!(mdes_multiplier(18.0, 0.0, 0.2, true).is_err());
        assert!(mdes_multiplier(18.0, 0.05, 1.0, true).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let mut p = DesignParams::zeros(1);
        p.nbar = 10;
        p.j = 10;
        let j = closed_form_sample_size(DesignModelId::D2_1M2fc, &p, 0, 0.2, 2.8, SizeLevel::J).unwrap();
        assert_relative_eq!(j, 78.4, max_relative = 1e-12);

        let mut p = DesignParams::zeros(1);
        p.j = 10;
        p.icc_2 = vec![0.3];
        p.omega_2 = vec![0.5];
        // J (MDES/MT)^2 = 10 * (0.1/2.8)^2 < ICC.2 * omega.2
        let err = closed_form_sample_size(DesignModelId::D2_1M2fr, &p, 0, 0.1, 2.8, SizeLevel::Nbar).unwrap_err();
        assert!(matches!(err, PumpError::Infeasible { .. }), "{err}");

        let p = DesignParams::zeros(1);
        assert!(closed_form_sample_size(DesignModelId::D2_1M2fc, &p, 0, 0.2, 2.8, SizeLevel::K).is_err());
    }

    #[test]
    fn diplomas_now_closed_form_k_brackets_fifteen() {
        let p = diplomas_now();
        let d = DesignModelId::D3_2M3fc2rc;
        let m = 5.0;
        let target: f64 = 0.8;
        // individual unadjusted at the min1 per-outcome power, and Bonferroni at the target
        let lo_power = 1.0 - (1.0 - target).powf(1.0 / m);
        let df = degrees_of_freedom(d, &p).unwrap() as f64;
        let mt_lo = mdes_multiplier(df, 0.05, 1.0 - lo_power, true).unwrap();
        let mt_hi = mdes_multiplier(df, 0.05 / m, 1.0 - target, true).unwrap();
        let lo = closed_form_sample_size(d, &p, 0, 0.10, mt_lo, SizeLevel::K).unwrap();
        let hi = closed_form_sample_size(d, &p, 0, 0.10, mt_hi, SizeLevel::K).unwrap();
        assert!(lo < 15.0 && 15.0 < hi, "bracket ({lo}, {hi})");
    }

    #[test]
    fn validation_collects_errors() {
        let mut p = DesignParams::zeros(1);
        p.icc_2 = vec![0.7];
        p.icc_3 = vec![0.4];
        p.j = 5;
        p.k = 5;
        p.nbar = 10;
        let e = EffectSpec { mdes: vec![0.1], num_zero: 0 };
        let errs = validate(DesignModelId::D3_2M3fc2rc, &p, &e).unwrap_err();
        assert!(errs.iter().any(|f| f.message.contains("ICC sum")), "{errs:?}");

        let mut p = DesignParams::zeros(1);
        p.tbar = 1.3;
        p.omega_2 = vec![0.2];
        p.nbar = 10;
        let errs = validate(DesignModelId::D1_1M1c, &p, &e).unwrap_err();
        assert!(errs.iter().any(|f| f.field == "Tbar" && f.message == "Tbar must be in (0,1)"));
        assert!(errs.iter().any(|f| f.field == "omega.2"));
    }

    #[test]
    fn listing_has_every_code() {
        let rows = design_listing();
        assert_eq!(rows.len(), 11);
        let dn = rows.iter().find(|r| r.d_m == "d3.2_m3fc2rc").unwrap();
        assert_eq!(dn.params, vec!["R2.1", "R2.2", "ICC.2", "ICC.3"]);
        assert_eq!(dn.powerup, None);
    }

    fn arb_params() -> impl Strategy<Value = DesignParams> {
        (
            2u32..200,
            2u32..30,
            2u32..40,
            0.1f64..0.9,
            0.0f64..0.9,
            0.0f64..0.9,
            0.0f64..0.9,
            0.0f64..0.45,
            0.0f64..0.45,
            0.0f64..2.0,
            0.0f64..2.0,
        )
            .prop_map(|(n, j, k, t, r1, r2, r3, i2, i3, w2, w3)| {
                let mut p = DesignParams::zeros(1);
                p.nbar = n;
                p.j = j;
                p.k = k;
                p.tbar = t;
                p.r2_1 = vec![r1];
                p.r2_2 = vec![r2];
                p.r2_3 = vec![r3];
                p.icc_2 = vec![i2];
                p.icc_3 = vec![i3];
                p.omega_2 = vec![w2];
                p.omega_3 = vec![w3];
                p
            })
    }

    fn restrict(d: DesignModelId, p: &DesignParams) -> DesignParams {
        let mut p = p.clone();
        if d.levels() < 3 {
            p.k = 1;
        }
        for param in ModelParam::ALL {
            if !d.is_relevant(param) {
                let v = match param {
                    ModelParam::R2_1 => &mut p.r2_1,
                    ModelParam::R2_2 => &mut p.r2_2,
                    ModelParam::R2_3 => &mut p.r2_3,
                    ModelParam::Icc2 => &mut p.icc_2,
                    ModelParam::Icc3 => &mut p.icc_3,
                    ModelParam::Omega2 => &mut p.omega_2,
                    ModelParam::Omega3 => &mut p.omega_3,
                };
                v[0] = 0.0;
            }
        }
        p
    }

    proptest! {
        #[test]
        fn se_decreasing_in_sizes_and_minimized_at_half(p in arb_params()) {
            for d in DesignModelId::ALL {
                let p = restrict(d, &p);
                let q = standard_error(d, &p, 0);
                for &level in d.size_levels() {
                    let mut bigger = p.clone();
                    bigger.set_size(level, p.size(level) + 1);
                    prop_assert!(standard_error(d, &bigger, 0) < q, "{} {}", d, level.name());
                }
                let mut half = p.clone();
                half.tbar = 0.5;
                prop_assert!(standard_error(d, &half, 0) <= q * (1.0 + 1e-12));
            }
        }

        #[test]
        fn closed_form_inverts_standard_error(p in arb_params(), mdes in 0.05f64..0.5, mt in 1.5f64..4.0) {
            for d in DesignModelId::ALL {
                let p = restrict(d, &p);
                for &level in d.size_levels() {
                    match closed_form_sample_size(d, &p, 0, mdes, mt, level) {
                        Ok(size) => {
                            let (mut n, mut j, mut k) = (p.nbar as f64, p.j as f64, p.k as f64);
                            match level {
                                SizeLevel::Nbar => n = size,
                                SizeLevel::J => j = size,
                                SizeLevel::K => k = size,
                            }
                            let q = variance_of_estimate(d, &p, 0, n, j, k).sqrt();
                            prop_assert!(((q - mdes / mt) / (mdes / mt)).abs() < 1e-10,
                                "{} {} size {} q {} target {}", d, level.name(), size, q, mdes / mt);
                        }
                        Err(PumpError::Infeasible { .. }) => {
                            // the other dimensions already exceed the target precision floor
                            let (mut n, mut j, mut k) = (p.nbar as f64, p.j as f64, p.k as f64);
                            match level {
                                SizeLevel::Nbar => n = 1e12,
                                SizeLevel::J => j = 1e12,
                                SizeLevel::K => k = 1e12,
                            }
                            let floor = variance_of_estimate(d, &p, 0, n, j, k).sqrt();
                            prop_assert!(floor >= mdes / mt * (1.0 - 1e-6));
                        }
                        Err(e) => prop_assert!(false, "unexpected error {e}"),
                    }
                }
            }
        }

        #[test]
        fn zero_icc_collapses_to_single_level(p in arb_params()) {
            for d in DesignModelId::ALL {
                let mut p = restrict(d, &p);
                p.icc_2 = vec![0.0];
                p.icc_3 = vec![0.0];
                p.r2_1 = vec![0.0];
                p.r2_2 = vec![0.0];
                p.r2_3 = vec![0.0];
                let n_total = (p.nbar * p.j * p.k) as f64;
                let expected = 1.0 / (p.tbar * (1.0 - p.tbar) * n_total).sqrt();
                prop_assert!((standard_error(d, &p, 0) - expected).abs() < 1e-12 * expected.max(1.0));
            }
        }
    }
}
