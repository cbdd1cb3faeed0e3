use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{joint_effect_covariance, DgpControl, DgpModelParams, OutcomeModel};
use crate::error::Result;
use crate::sampler::CorrFactor;

/// Per-outcome columns, one entry per individual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeColumns {
    pub v: Vec<f64>,
    pub x: Vec<f64>,
    pub c: Vec<f64>,
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
    pub r: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl OutcomeColumns {
    fn with_capacity(n: usize) -> Self {
        let v = || Vec::with_capacity(n);
        OutcomeColumns {
            v: v(),
            x: v(),
            c: v(),
            w0: v(),
            w1: v(),
            u0: v(),
            u1: v(),
            r: v(),
            y0: v(),
            y1: v(),
        }
    }
}

/// Individuals are stored district-major, then school, then individual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedDataset {
    pub m: usize,
    pub k: usize,
    pub j: usize,
    pub nbar: usize,
    pub k_id: Vec<u32>,
    /// School index within its district.
    pub j_id: Vec<u32>,
    pub i_id: Vec<u32>,
    pub t: Vec<u8>,
    pub outcomes: Vec<OutcomeColumns>,
    /// Coefficients the data were drawn from.
    pub models: Vec<OutcomeModel>,
}

impl GeneratedDataset {
    pub fn len(&self) -> usize {
        self.k_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_id.is_empty()
    }

    pub fn schools(&self) -> usize {
        self.k * self.j
    }

    pub fn y_obs(&self, m: usize) -> Vec<f64> {
        let o = &self.outcomes[m];
        self.t
            .iter()
            .enumerate()
            .map(|(i, &t)| if t == 1 { o.y1[i] } else { o.y0[i] })
            .collect()
    }
}

fn draw(factor: &CorrFactor, rng: &mut ChaCha8Rng, e: &mut [f64], out: &mut [f64]) {
    for v in e.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    factor.apply(e, out);
}

/// Draws one dataset with every unit in control (`t` all zero).
pub fn generate_dataset(mp: &DgpModelParams, c: &DgpControl, rng: &mut ChaCha8Rng) -> Result<GeneratedDataset> {
    let m = c.m;
    let outs = &mp.outcomes;
    let eta0: Vec<f64> = outs.iter().map(|o| o.eta0_sq.sqrt()).collect();
    let eta1: Vec<f64> = outs.iter().map(|o| o.eta1_sq.sqrt()).collect();
    let tau0: Vec<f64> = outs.iter().map(|o| o.tau0_sq.sqrt()).collect();
    let tau1: Vec<f64> = outs.iter().map(|o| o.tau1_sq.sqrt()).collect();
    let sigma: Vec<f64> = outs.iter().map(|o| o.sigma_sq.sqrt()).collect();
    let cr = &c.corr;
    let f_v = CorrFactor::new(&cr.rho_v, m)?;
    let f_x = CorrFactor::new(&cr.rho_x, m)?;
    let f_c = CorrFactor::new(&cr.rho_c, m)?;
    let mut r_cov = cr.rho_r.clone();
    for a in 0..m {
        for b in 0..m {
            r_cov[a * m + b] *= sigma[a] * sigma[b];
        }
    }
    let f_r = CorrFactor::from_covariance(&r_cov, m)?;
    let f_w = CorrFactor::from_covariance(&joint_effect_covariance(&cr.rho_w0, &cr.rho_w1, &cr.kappa_w, &eta0, &eta1), 2 * m)?;
    let f_u = CorrFactor::from_covariance(&joint_effect_covariance(&cr.rho_u0, &cr.rho_u1, &cr.kappa_u, &tau0, &tau1), 2 * m)?;

    let n = c.k * c.j * c.nbar;
    let mut ds = GeneratedDataset {
        m,
        k: c.k,
        j: c.j,
        nbar: c.nbar,
        k_id: Vec::with_capacity(n),
        j_id: Vec::with_capacity(n),
        i_id: Vec::with_capacity(n),
        t: vec![0; n],
        outcomes: (0..m).map(|_| OutcomeColumns::with_capacity(n)).collect(),
        models: outs.clone(),
    };
    let (mut e, mut e2) = (vec![0.0; m], vec![0.0; 2 * m]);
    let (mut v, mut w, mut x, mut u, mut ci, mut r) =
        (vec![0.0; m], vec![0.0; 2 * m], vec![0.0; m], vec![0.0; 2 * m], vec![0.0; m], vec![0.0; m]);
    for k in 0..c.k {
        draw(&f_v, rng, &mut e, &mut v);
        draw(&f_w, rng, &mut e2, &mut w);
        for j in 0..c.j {
            draw(&f_x, rng, &mut e, &mut x);
            draw(&f_u, rng, &mut e2, &mut u);
            for i in 0..c.nbar {
                draw(&f_c, rng, &mut e, &mut ci);
                draw(&f_r, rng, &mut e, &mut r);
                ds.k_id.push(k as u32);
                ds.j_id.push(j as u32);
                ds.i_id.push(i as u32);
                for (mm, col) in ds.outcomes.iter_mut().enumerate() {
                    let o = &outs[mm];
                    let y0 = o.grand_control + o.xi * v[mm] + o.delta * x[mm] + o.gamma * ci[mm] + w[mm] + u[mm] + r[mm];
                    let y1 = y0 + o.grand_impact + w[m + mm] + u[m + mm];
                    col.v.push(v[mm]);
                    col.x.push(x[mm]);
                    col.c.push(ci[mm]);
                    col.w0.push(w[mm]);
                    col.w1.push(w[m + mm]);
                    col.u0.push(u[mm]);
                    col.u1.push(u[m + mm]);
                    col.r.push(r[mm]);
                    col.y0.push(y0);
                    col.y1.push(y1);
                }
            }
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::super::{solve_model_params, Correlations};
    use super::*;
    use rand::SeedableRng;

    fn control() -> DgpControl {
        DgpControl {
            m: 1,
            k: 4,
            j: 3,
            nbar: 5,
            tbar: 0.5,
            es: vec![0.3],
            icc_2: vec![0.0],
            icc_3: vec![0.0],
            omega_2: vec![0.0],
            omega_3: vec![0.0],
            r2_1: vec![0.0],
            r2_2: vec![0.0],
            r2_3: vec![0.0],
            corr: Correlations::uniform(1, 0.0),
        }
    }

    #[test]
    fn constant_impact_without_variance_components() {
        let c = control();
        let mut mp = solve_model_params(&c).unwrap();
        mp.outcomes[0].sigma_sq = 0.0;
        let ds = generate_dataset(&mp, &c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(ds.len(), 60);
        for (a, b) in ds.outcomes[0].y1.iter().zip(&ds.outcomes[0].y0) {
            assert!((a - b - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn ids_are_nested() {
        let c = control();
        let mp = solve_model_params(&c).unwrap();
        let ds = generate_dataset(&mp, &c, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(ds.k_id[15], 1);
        assert_eq!(ds.j_id[5], 1);
        assert_eq!(ds.i_id[7], 2);
        assert!(ds.t.iter().all(|&t| t == 0));
    }
}
