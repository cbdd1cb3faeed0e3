//! Correlated t statistics: `t_bm = z_bm / s_bm + shift_m` with
//! `z_b ~ N(0, rho)` and `s_bm = sqrt(W_mm / df)` for an independent
//! `W ~ Wishart(df, rho)`, so each marginal is a central t centered at its
//! shift and the scale estimates are correlated like residual variances.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::Serialize;

use crate::dist::t_pvalue;
use crate::error::{PumpError, Result};
use crate::seed::rng_for;

/// Rows simulated per independently seeded chunk.
pub const CHUNK_ROWS: usize = 1024;

const PSD_TOLERANCE: f64 = 1e-10;

/// Dense row-major matrix of statistics, p-values, or indicators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl StatMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        StatMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        StatMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column_mean(&self, c: usize) -> f64 {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).sum::<f64>() / self.rows as f64
    }
}

/// Symmetric square root of a correlation matrix.
#[derive(Debug, Clone)]
pub struct CorrFactor {
    m: usize,
    l: Vec<f64>,
}

impl CorrFactor {
    pub fn new(rho: &[f64], m: usize) -> Result<CorrFactor> {
        check_correlation(rho, m)?;
        Self::from_covariance(rho, m)
    }

    /// Factor of any symmetric PSD matrix (no unit-diagonal requirement).
    pub fn from_covariance(cov: &[f64], m: usize) -> Result<CorrFactor> {
        let a = DMatrix::from_row_slice(m, m, cov);
        let eig = SymmetricEigen::new(a);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = eig.eigenvalues.iter().copied().fold(1.0, |a: f64, b| a.max(b.abs()));
        if min < -PSD_TOLERANCE * scale {
            return Err(PumpError::NotPositiveSemiDefinite { min_eigenvalue: min });
        }
        let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let l = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
        let mut flat = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                flat.push(l[(i, j)]);
            }
        }
        Ok(CorrFactor { m, l: flat })
    }

    pub fn identity(m: usize) -> CorrFactor {
        let mut l = vec![0.0; m * m];
        for i in 0..m {
            l[i * m + i] = 1.0;
        }
        CorrFactor { m, l }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    /// `out = L e`.
    pub fn apply(&self, e: &[f64], out: &mut [f64]) {
        let m = self.m;
        for i in 0..m {
            out[i] = self.l[i * m..(i + 1) * m].iter().zip(e).map(|(a, b)| a * b).sum();
        }
    }
}

/// Shape checks: square, symmetric, unit diagonal, entries in [-1, 1].
pub fn check_correlation(rho: &[f64], m: usize) -> Result<()> {
    if rho.len() != m * m {
        return Err(PumpError::field("rho", format!("expected a {m}x{m} matrix")));
    }
    for i in 0..m {
        if (rho[i * m + i] - 1.0).abs() > 1e-12 {
            return Err(PumpError::field("rho", "diagonal entries must be 1"));
        }
        for j in 0..m {
            let v = rho[i * m + j];
            if !v.is_finite() || v.abs() > 1.0 {
                return Err(PumpError::field("rho", "entries must lie in [-1, 1]"));
            }
            if (v - rho[j * m + i]).abs() > 1e-12 {
                return Err(PumpError::field("rho", "matrix must be symmetric"));
            }
        }
    }
    Ok(())
}

/// Exchangeable correlation matrix with off-diagonal `r`.
pub fn exchangeable(m: usize, r: f64) -> Vec<f64> {
    let mut out = vec![r; m * m];
    for i in 0..m {
        out[i * m + i] = 1.0;
    }
    out
}

/// Draws `rows` statistic vectors. Chunk `c` uses its own derived stream, so
/// the matrix is identical for any thread count.
pub fn sample_statistics(
    factor: &CorrFactor,
    shift: &[f64],
    df: f64,
    rows: usize,
    seed: u64,
    stream: u64,
) -> StatMatrix {
    let m = factor.dim();
    assert_eq!(shift.len(), m);
    let mut out = StatMatrix::zeros(rows, m);
    let scales = ScaleDraw::new(df, m);
    let fill = |(c, block): (usize, &mut [f64])| {
        let mut rng = rng_for(seed, stream, c as u64);
        let mut e = vec![0.0; m];
        let mut z = vec![0.0; m];
        let mut work = ScaleWork::new(m, &scales);
        for row in block.chunks_exact_mut(m) {
            for v in e.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            factor.apply(&e, &mut z);
            let s = scales.draw(factor, &mut rng, &mut work);
            for k in 0..m {
                row[k] = z[k] / s[k] + shift[k];
            }
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.data.par_chunks_mut(CHUNK_ROWS * m).enumerate().for_each(fill);
    }
    #[cfg(not(feature = "parallel"))]
    out.data.chunks_mut(CHUNK_ROWS * m).enumerate().for_each(fill);
    out
}

/// Per-outcome scale factors `sqrt(W_mm / df)` with `W ~ Wishart(df, rho)`:
/// each is a chi-square over its df, jointly correlated the way residual
/// variances of correlated outcomes are.
struct ScaleDraw {
    df: f64,
    /// Bartlett diagonal laws, one per row of the triangular factor; empty
    /// when `df < m` and the Wishart is built from `df` explicit draws.
    bartlett: Vec<ChiSquared<f64>>,
}

struct ScaleWork {
    b: Vec<f64>,
    s: Vec<f64>,
}

impl ScaleWork {
    fn new(m: usize, _d: &ScaleDraw) -> Self {
        ScaleWork { b: vec![0.0; m * m], s: vec![0.0; m] }
    }
}

impl ScaleDraw {
    fn new(df: f64, m: usize) -> Self {
        let bartlett = if df >= m as f64 {
            (0..m).map(|i| ChiSquared::new(df - i as f64).expect("df validated positive")).collect()
        } else {
            Vec::new()
        };
        ScaleDraw { df, bartlett }
    }

    fn draw<'w>(&self, factor: &CorrFactor, rng: &mut impl Rng, w: &'w mut ScaleWork) -> &'w [f64] {
        let m = factor.m;
        let l = &factor.l;
        if self.bartlett.is_empty() {
            // df < m: W = sum over df columns of (L y)(L y)^T
            w.s.iter_mut().for_each(|v| *v = 0.0);
            let cols = self.df.round() as usize;
            for _ in 0..cols {
                for v in w.b[..m].iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                for i in 0..m {
                    let x: f64 = (0..m).map(|k| l[i * m + k] * w.b[k]).sum();
                    w.s[i] += x * x;
                }
            }
        } else {
            // Bartlett: B lower triangular, B_ii^2 ~ chi2(df - i), B_ij ~ N(0,1) below
            for i in 0..m {
                for j in 0..i {
                    w.b[i * m + j] = rng.sample(StandardNormal);
                }
                w.b[i * m + i] = self.bartlett[i].sample(rng).sqrt();
            }
            for i in 0..m {
                let mut acc = 0.0;
                for j in 0..m {
                    let c: f64 = (j..m).map(|k| l[i * m + k] * w.b[k * m + j]).sum();
                    acc += c * c;
                }
                w.s[i] = acc;
            }
        }
        for v in w.s.iter_mut() {
            *v = (*v / self.df).sqrt();
        }
        &w.s
    }
}

/// Alternative-hypothesis draw specification.
#[derive(Debug, Clone)]
pub struct AlternativeSpec {
    pub shift: Vec<f64>,
    pub df: f64,
    pub rho: Vec<f64>,
    pub tnum: usize,
    pub seed: u64,
}

pub fn sample_alternative(spec: &AlternativeSpec) -> Result<StatMatrix> {
    if spec.tnum == 0 {
        return Err(PumpError::field("tnum", "tnum must be at least 1"));
    }
    let factor = CorrFactor::new(&spec.rho, spec.shift.len())?;
    Ok(sample_statistics(
        &factor,
        &spec.shift,
        spec.df,
        spec.tnum,
        spec.seed,
        crate::seed::STREAM_ALTERNATIVE,
    ))
}

pub fn raw_pvalues(e: &StatMatrix, df: f64, two_sided: bool) -> StatMatrix {
    let mut out = e.clone();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.data.par_chunks_mut(4096).for_each(|c| {
            for v in c {
                *v = t_pvalue(*v, df, two_sided);
            }
        });
    }
    #[cfg(not(feature = "parallel"))]
    for v in out.data.iter_mut() {
        *v = t_pvalue(*v, df, two_sided);
    }
    out
}

/// 1 where `p < alpha`.
pub fn rejections(g: &StatMatrix, alpha: f64) -> StatMatrix {
    StatMatrix {
        rows: g.rows,
        cols: g.cols,
        data: g.data.iter().map(|&p| if p < alpha { 1.0 } else { 0.0 }).collect(),
    }
}
