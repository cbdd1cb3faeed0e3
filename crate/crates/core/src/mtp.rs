//! Multiple testing procedures, applied row-wise to raw p-values.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{PumpError, Result};
use crate::sampler::{raw_pvalues, sample_statistics, CorrFactor, StatMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum MtpId {
    None,
    #[serde(rename = "BF")]
    Bonferroni,
    #[serde(rename = "HO")]
    Holm,
    #[serde(rename = "BH")]
    BenjaminiHochberg,
    #[serde(rename = "WY-SS")]
    WestfallYoungSingleStep,
    #[serde(rename = "WY-SD")]
    WestfallYoungStepDown,
}

impl MtpId {
    pub const ALL: [MtpId; 6] = [
        MtpId::None,
        MtpId::Bonferroni,
        MtpId::Holm,
        MtpId::BenjaminiHochberg,
        MtpId::WestfallYoungSingleStep,
        MtpId::WestfallYoungStepDown,
    ];

    pub fn code(self) -> &'static str {
        match self {
            MtpId::None => "None",
            MtpId::Bonferroni => "BF",
            MtpId::Holm => "HO",
            MtpId::BenjaminiHochberg => "BH",
            MtpId::WestfallYoungSingleStep => "WY-SS",
            MtpId::WestfallYoungStepDown => "WY-SD",
        }
    }

    pub fn parse(s: &str) -> Option<MtpId> {
        Self::ALL.into_iter().find(|m| m.code() == s)
    }

    pub fn needs_nulls(self) -> bool {
        matches!(self, MtpId::WestfallYoungSingleStep | MtpId::WestfallYoungStepDown)
    }
}

impl std::fmt::Display for MtpId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// Indices that sort `p` ascending, ties kept in input order.
fn ascending_order(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    idx
}

pub fn adjust_bonferroni(raw: &[f64]) -> Vec<f64> {
    let m = raw.len() as f64;
    raw.iter().map(|p| (p * m).min(1.0)).collect()
}

pub fn adjust_holm(raw: &[f64]) -> Vec<f64> {
    let m = raw.len();
    let order = ascending_order(raw);
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (i, &idx) in order.iter().enumerate() {
        let v = (raw[idx] * (m - i) as f64).min(1.0);
        running = running.max(v);
        out[idx] = running;
    }
    out
}

pub fn adjust_bh(raw: &[f64]) -> Vec<f64> {
    let m = raw.len();
    let order = ascending_order(raw);
    let mut out = vec![0.0; m];
    let mut running = 1.0f64;
    for i in (0..m).rev() {
        let idx = order[i];
        let v = (raw[idx] * m as f64 / (i + 1) as f64).min(1.0);
        running = running.min(v);
        out[idx] = running;
    }
    out
}

/// Largest M for which per-subset minima are cached (2^M sorted arrays).
const MAX_SUBSET_M: usize = 12;

/// Where null statistics for the Westfall-Young procedures come from.
#[derive(Debug, Clone)]
pub struct NullStatisticSource {
    pub df: f64,
    /// Row-major M x M correlation matrix.
    pub rho: Vec<f64>,
    pub b: usize,
    pub seed: u64,
    pub two_sided: bool,
}

/// One batch of `B` null p-value vectors, shared by every alternative row.
#[derive(Debug, Clone)]
pub struct NullBatch {
    pub m: usize,
    pub b: usize,
    /// B x M null p-values, row-major.
    pvalues: Vec<f64>,
    /// Row minima sorted ascending, for the single-step lookup.
    sorted_min: Vec<f64>,
    /// Sorted row minima over each subset of outcomes (bit mask), filled on
    /// first use by the step-down procedure. Empty for large M.
    subset_min: Vec<OnceLock<Vec<f64>>>,
}

impl NullBatch {
    pub fn draw(src: &NullStatisticSource) -> Result<NullBatch> {
        if src.b == 0 {
            return Err(PumpError::field("B", "B must be at least 1"));
        }
        let m = (src.rho.len() as f64).sqrt().round() as usize;
        let factor = CorrFactor::new(&src.rho, m)?;
        let stats = sample_statistics(
            &factor,
            &vec![0.0; m],
            src.df,
            src.b,
            src.seed,
            crate::seed::STREAM_NULL,
        );
        let pv = raw_pvalues(&stats, src.df, src.two_sided);
        Ok(Self::from_pvalues(pv))
    }

    pub fn from_pvalues(pv: StatMatrix) -> NullBatch {
        let (b, m) = (pv.rows, pv.cols);
        let mut sorted_min: Vec<f64> = (0..b)
            .map(|r| pv.row(r).iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        sorted_min.sort_by(f64::total_cmp);
        let subsets = if m <= MAX_SUBSET_M { 1usize << m } else { 0 };
        NullBatch {
            m,
            b,
            pvalues: pv.data,
            sorted_min,
            subset_min: (0..subsets).map(|_| OnceLock::new()).collect(),
        }
    }

    fn subset_minima(&self, mask: usize) -> Option<&[f64]> {
        let cell = self.subset_min.get(mask)?;
        Some(cell.get_or_init(|| {
            let mut v: Vec<f64> = self
                .pvalues
                .chunks_exact(self.m)
                .map(|row| {
                    (0..self.m)
                        .filter(|k| mask >> k & 1 == 1)
                        .map(|k| row[k])
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            v.sort_by(f64::total_cmp);
            v
        }))
    }

    fn estimate(&self, count: usize) -> f64 {
        (1 + count) as f64 / (self.b + 1) as f64
    }
}

pub fn adjust_wy_ss(raw: &[f64], nulls: &NullBatch) -> Vec<f64> {
    debug_assert_eq!(raw.len(), nulls.m);
    raw.iter()
        .map(|&p| {
            let count = nulls.sorted_min.partition_point(|&v| v <= p);
            nulls.estimate(count)
        })
        .collect()
}

pub fn adjust_wy_sd(raw: &[f64], nulls: &NullBatch) -> Vec<f64> {
    let m = raw.len();
    debug_assert_eq!(m, nulls.m);
    let order = ascending_order(raw);
    let counts = if nulls.subset_min.is_empty() {
        wy_sd_counts_scan(raw, &order, nulls)
    } else {
        let mut mask = 0usize;
        let mut counts = vec![0usize; m];
        for i in (0..m).rev() {
            mask |= 1 << order[i];
            let minima = nulls.subset_minima(mask).expect("mask within range");
            counts[i] = minima.partition_point(|&v| v <= raw[order[i]]);
        }
        counts
    };
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for i in 0..m {
        running = running.max(nulls.estimate(counts[i]));
        out[order[i]] = running;
    }
    out
}

/// Step-down exceedance counts by direct pass over the null rows.
fn wy_sd_counts_scan(raw: &[f64], order: &[usize], nulls: &NullBatch) -> Vec<usize> {
    let m = raw.len();
    let mut counts = vec![0usize; m];
    let mut suffix = vec![0.0; m];
    for row in nulls.pvalues.chunks_exact(m) {
        // suffix[i] = min over the not-yet-rejected set {order[i..]}
        let mut acc = f64::INFINITY;
        for i in (0..m).rev() {
            acc = acc.min(row[order[i]]);
            suffix[i] = acc;
        }
        for i in 0..m {
            if suffix[i] <= raw[order[i]] {
                counts[i] += 1;
            }
        }
    }
    counts
}

/// Adjusted p-values for a single vector.
pub fn adjust(mtp: MtpId, raw: &[f64], nulls: Option<&NullBatch>) -> Result<Vec<f64>> {
    Ok(match mtp {
        MtpId::None => raw.to_vec(),
        MtpId::Bonferroni => adjust_bonferroni(raw),
        MtpId::Holm => adjust_holm(raw),
        MtpId::BenjaminiHochberg => adjust_bh(raw),
        MtpId::WestfallYoungSingleStep => adjust_wy_ss(raw, nulls.ok_or(PumpError::MissingNulls)?),
        MtpId::WestfallYoungStepDown => adjust_wy_sd(raw, nulls.ok_or(PumpError::MissingNulls)?),
    })
}

/// Row-wise adjustment of a p-value matrix. WY variants reuse `nulls` for every row.
pub fn adjust_matrix(mtp: MtpId, f: &StatMatrix, nulls: Option<&NullBatch>) -> Result<StatMatrix> {
    if mtp.needs_nulls() && nulls.is_none() {
        return Err(PumpError::MissingNulls);
    }
    if mtp == MtpId::None {
        return Ok(f.clone());
    }
    let m = f.cols;
    let mut out = f.clone();
    let work = |(src, dst): (&[f64], &mut [f64])| {
        let adj = adjust(mtp, src, nulls).expect("nulls checked above");
        dst.copy_from_slice(&adj);
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        f.data
            .par_chunks(m)
            .zip(out.data.par_chunks_mut(m))
            .for_each(work);
    }
    #[cfg(not(feature = "parallel"))]
    f.data.chunks(m).zip(out.data.chunks_mut(m)).for_each(work);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn cached_step_down_counts_match_scan() {
        let src = NullStatisticSource { df: 15.0, rho: crate::sampler::exchangeable(4, 0.3), b: 500, seed: 8, two_sided: true };
        let nulls = NullBatch::draw(&src).unwrap();
        for raw in [vec![0.01, 0.2, 0.003, 0.04], vec![0.5, 0.5, 0.01, 0.9], vec![1e-4, 0.06, 0.06, 0.3]] {
            let order = ascending_order(&raw);
            let scan = wy_sd_counts_scan(&raw, &order, &nulls);
            let mut mask = 0usize;
            for i in (0..4).rev() {
                mask |= 1 << order[i];
                let cached = nulls.subset_minima(mask).unwrap().partition_point(|&v| v <= raw[order[i]]);
                assert_eq!(cached, scan[i]);
            }
        }
    }

    #[test]
    fn bonferroni_examples() {
        close(&adjust_bonferroni(&[0.01, 0.02, 0.04]), &[0.03, 0.06, 0.12]);
        close(&adjust_bonferroni(&[0.5, 0.6]), &[1.0, 1.0]);
        close(&adjust_bonferroni(&[0.04]), &[0.04]);
    }

    #[test]
    fn holm_examples() {
        close(&adjust_holm(&[0.01, 0.02, 0.04]), &[0.03, 0.04, 0.04]);
        close(&adjust_holm(&[0.04, 0.02, 0.01]), &[0.04, 0.04, 0.03]);
        close(&adjust_holm(&[0.04]), &[0.04]);
    }

    #[test]
    fn bh_examples() {
        close(&adjust_bh(&[0.01, 0.02, 0.04]), &[0.03, 0.03, 0.04]);
        close(&adjust_bh(&[0.05, 0.05, 0.05]), &[0.05, 0.05, 0.05]);
        close(&adjust_bh(&[0.2]), &[0.2]);
    }

    #[test]
    fn matrix_bonferroni_and_passthrough() {
        let f = StatMatrix::from_rows(&[vec![0.01, 0.5], vec![0.03, 0.9]]);
        let bf = adjust_matrix(MtpId::Bonferroni, &f, None).unwrap();
        close(&bf.data, &[0.02, 1.0, 0.06, 1.0]);
        assert_eq!(adjust_matrix(MtpId::None, &f, None).unwrap(), f);
        assert!(matches!(
            adjust_matrix(MtpId::WestfallYoungSingleStep, &f, None),
            Err(PumpError::MissingNulls)
        ));
    }

    #[test]
    fn wy_floor_and_single_outcome_agreement() {
        let nulls = NullBatch::from_pvalues(StatMatrix::from_rows(&[vec![0.3], vec![0.01], vec![0.7], vec![0.05]]));
        assert_abs_diff_eq!(adjust_wy_ss(&[0.0], &nulls)[0], 1.0 / 5.0);
        assert_abs_diff_eq!(adjust_wy_ss(&[0.05], &nulls)[0], 3.0 / 5.0);
        assert_eq!(adjust_wy_ss(&[0.2], &nulls), adjust_wy_sd(&[0.2], &nulls));
    }

    #[test]
    fn wy_step_down_hand_example() {
        // two null rows, M = 2
        let nulls = NullBatch::from_pvalues(StatMatrix::from_rows(&[vec![0.02, 0.5], vec![0.6, 0.04]]));
        let raw = [0.03, 0.45];
        // single step: min row values are 0.02 and 0.04
        close(&adjust_wy_ss(&raw, &nulls), &[2.0 / 3.0, 1.0]);
        // step down: first over both (count 1), then only outcome 2 (0.5 > 0.45, 0.04 <= 0.45)
        close(&adjust_wy_sd(&raw, &nulls), &[2.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn mtp_codes_round_trip() {
        for m in MtpId::ALL {
            assert_eq!(MtpId::parse(m.code()), Some(m));
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.code()));
        }
    }

    fn pvec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![0.0f64..=1.0, Just(0.05), Just(0.0), Just(1.0)], 1..8)
    }

    proptest! {
        #[test]
        fn dominance_chain(raw in pvec()) {
            let bf = adjust_bonferroni(&raw);
            let ho = adjust_holm(&raw);
            let bh = adjust_bh(&raw);
            for i in 0..raw.len() {
                prop_assert!(raw[i] <= bh[i] + 1e-15);
                prop_assert!(bh[i] <= ho[i] + 1e-15);
                prop_assert!(ho[i] <= bf[i] + 1e-15);
                prop_assert!(bf[i] <= 1.0);
            }
        }

        #[test]
        fn order_preserved(raw in pvec()) {
            for adj in [adjust_bonferroni(&raw), adjust_holm(&raw), adjust_bh(&raw)] {
                for i in 0..raw.len() {
                    for j in 0..raw.len() {
                        if raw[i] < raw[j] {
                            prop_assert!(adj[i] <= adj[j]);
                        }
                    }
                }
            }
        }

        #[test]
        fn permutation_equivariant(raw in pvec(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..raw.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<f64> = perm.iter().map(|&i| raw[i]).collect();
            for f in [adjust_bonferroni, adjust_holm, adjust_bh] {
                let a = f(&raw);
                let b = f(&permuted);
                for (k, &i) in perm.iter().enumerate() {
                    prop_assert_eq!(a[i], b[k]);
                }
            }
        }

        #[test]
        fn wy_step_down_below_single_step(raw in prop::collection::vec(0.0f64..=1.0, 3), seed in any::<u64>()) {
            let src = NullStatisticSource {
                df: 50.0,
                rho: vec![1.0, 0.3, 0.3, 0.3, 1.0, 0.3, 0.3, 0.3, 1.0],
                b: 200,
                seed,
                two_sided: true,
            };
            let nulls = NullBatch::draw(&src).unwrap();
            let ss = adjust_wy_ss(&raw, &nulls);
            let sd = adjust_wy_sd(&raw, &nulls);
            for i in 0..3 {
                prop_assert!(sd[i] <= ss[i] + 1e-15);
                prop_assert!(ss[i] >= 1.0 / 201.0);
            }
        }
    }
}
