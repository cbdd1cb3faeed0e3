use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::GeneratedDataset;
use crate::design::DesignModelId;
use crate::error::{PumpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Simple,
    BlockedIndividual,
    Cluster2,
    BlockedCluster2,
    Cluster3,
}

/// Randomization scheme implied by a design's randomization level and blocking.
pub fn scheme_for(d: DesignModelId) -> Scheme {
    match d {
        DesignModelId::D1_1M1c
        | DesignModelId::D2_1M2fc
        | DesignModelId::D2_1M2ff
        | DesignModelId::D2_1M2fr
        | DesignModelId::D2_1M2rr
        | DesignModelId::D3_1M3rr2rr => Scheme::BlockedIndividual,
        DesignModelId::D2_2M2rc => Scheme::Cluster2,
        DesignModelId::D3_2M3ff2rc | DesignModelId::D3_2M3fc2rc | DesignModelId::D3_2M3rr2rc => Scheme::BlockedCluster2,
        DesignModelId::D3_3M3rc2rc => Scheme::Cluster3,
    }
}

/// Exactly `floor(size * tbar)` treated members, chosen uniformly.
fn pick(rng: &mut ChaCha8Rng, size: usize, tbar: f64, what: &str) -> Result<Vec<bool>> {
    if size == 0 {
        return Err(PumpError::Degenerate(format!("empty {what}")));
    }
    let treated = (size as f64 * tbar + 1e-9).floor() as usize;
    if treated == 0 || treated == size {
        return Err(PumpError::Degenerate(format!(
            "{what} of size {size} with Tbar {tbar} leaves no {} units",
            if treated == 0 { "treated" } else { "control" }
        )));
    }
    let mut out = vec![false; size];
    for i in sample(rng, size, treated).iter() {
        out[i] = true;
    }
    Ok(out)
}

/// Treatment vector over the dataset's individuals.
///
/// Fixed-count schemes treat `floor(T̄ · group size)` units per randomized
/// group; `Simple` flips an independent coin per individual.
pub fn assign_treatment(scheme: Scheme, ds: &GeneratedDataset, tbar: f64, rng: &mut ChaCha8Rng) -> Result<Vec<u8>> {
    let (k, j, n) = (ds.k, ds.j, ds.nbar);
    let mut t = vec![0u8; ds.len()];
    match scheme {
        Scheme::Simple => {
            for v in t.iter_mut() {
                *v = rng.random_bool(tbar) as u8;
            }
        }
        Scheme::BlockedIndividual => {
            for s in 0..k * j {
                let chosen = pick(rng, n, tbar, "school")?;
                for (i, c) in chosen.into_iter().enumerate() {
                    t[s * n + i] = c as u8;
                }
            }
        }
        Scheme::Cluster2 => {
            let chosen = pick(rng, k * j, tbar, "school population")?;
            for (s, c) in chosen.into_iter().enumerate() {
                t[s * n..(s + 1) * n].fill(c as u8);
            }
        }
        Scheme::BlockedCluster2 => {
            for d in 0..k {
                let chosen = pick(rng, j, tbar, "district")?;
                for (jj, c) in chosen.into_iter().enumerate() {
                    let s = d * j + jj;
                    t[s * n..(s + 1) * n].fill(c as u8);
                }
            }
        }
        Scheme::Cluster3 => {
            let chosen = pick(rng, k, tbar, "district population")?;
            let per = j * n;
            for (d, c) in chosen.into_iter().enumerate() {
                t[d * per..(d + 1) * per].fill(c as u8);
            }
        }
    }
    Ok(t)
}
