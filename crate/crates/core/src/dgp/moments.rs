use serde::Serialize;

use super::GeneratedDataset;

/// Plug-in variance decomposition of one outcome's control potential outcome.
/// Ratios whose denominator is zero are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalMoments {
    pub icc_2: Option<f64>,
    pub icc_3: Option<f64>,
    pub r2_1: Option<f64>,
    pub r2_2: Option<f64>,
    pub r2_3: Option<f64>,
    pub omega_2: Option<f64>,
    pub omega_3: Option<f64>,
}

fn variance(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    v.map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 1e-300).then(|| num / den)
}

/// Decomposes each outcome from the retained latent columns: level-3 terms
/// are read once per district, level-2 terms once per school.
pub fn empirical_moments(ds: &GeneratedDataset) -> Vec<EmpiricalMoments> {
    let per_school = ds.nbar;
    let per_district = ds.j * ds.nbar;
    let districts: Vec<usize> = (0..ds.k).map(|d| d * per_district).collect();
    let schools: Vec<usize> = (0..ds.k * ds.j).map(|s| s * per_school).collect();
    ds.outcomes
        .iter()
        .zip(&ds.models)
        .map(|(col, model)| {
            let at = |idx: &[usize], f: &dyn Fn(usize) -> f64| variance(idx.iter().map(|&i| f(i)).collect::<Vec<_>>().into_iter());
            let l3_cov = at(&districts, &|i| model.xi * col.v[i]);
            let l3 = at(&districts, &|i| model.xi * col.v[i] + col.w0[i]);
            let l3_impact = at(&districts, &|i| col.w1[i]);
            let l2_cov = at(&schools, &|i| model.delta * col.x[i]);
            let l2 = at(&schools, &|i| model.delta * col.x[i] + col.u0[i]);
            let l2_impact = at(&schools, &|i| col.u1[i]);
            let all: Vec<usize> = (0..ds.len()).collect();
            let l1_cov = at(&all, &|i| model.gamma * col.c[i]);
            let l1 = at(&all, &|i| model.gamma * col.c[i] + col.r[i]);
            let total = l1 + l2 + l3;
            EmpiricalMoments {
                icc_2: ratio(l2, total),
                icc_3: ratio(l3, total),
                r2_1: ratio(l1_cov, l1),
                r2_2: ratio(l2_cov, l2),
                r2_3: ratio(l3_cov, l3),
                omega_2: ratio(l2_impact, l2),
                omega_3: ratio(l3_impact, l3),
            }
        })
        .collect()
}
