use serde::Serialize;

use crate::error::{Error, Result};

/// `1 - cos(u, v)`, clamped to `[0, 2]` against rounding.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine distance between {} and {} dims", u.len(), v.len())));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((1.0 - dot / (nu * nv)).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CmcCurve {
    /// `rank_rates[k - 1]` is the rank-k identification rate.
    pub rank_rates: Vec<f64>,
}

impl CmcCurve {
    pub fn rank(&self, k: usize) -> f64 {
        match k {
            0 => 0.0,
            k => self.rank_rates[(k - 1).min(self.rank_rates.len() - 1)],
        }
    }
}

/// A feature vector tagged with its identity.
#[derive(Debug, Clone)]
pub struct Labeled {
    pub identity: String,
    pub features: Vec<f64>,
}

/// Rank (1-based) of each probe's true match. Gallery entries closer than the
/// true match, or equally close with a lower gallery index, rank ahead of it.
pub fn match_ranks(probes: &[Labeled], gallery: &[Labeled]) -> Result<Vec<usize>> {
    probes
        .iter()
        .map(|p| {
            let mut hits = gallery.iter().enumerate().filter(|(_, g)| g.identity == p.identity);
            let (true_idx, _) = match (hits.next(), hits.next()) {
                (Some(hit), None) => hit,
                _ => return Err(Error::GalleryIdentity(p.identity.clone())),
            };
            let dists = gallery
                .iter()
                .map(|g| cosine_distance(&p.features, &g.features))
                .collect::<Result<Vec<_>>>()?;
            let d_true = dists[true_idx];
            let ahead = dists
                .iter()
                .enumerate()
                .filter(|&(j, &d)| d < d_true || (d == d_true && j < true_idx))
                .count();
            Ok(ahead + 1)
        })
        .collect()
}

pub fn cmc(probes: &[Labeled], gallery: &[Labeled]) -> Result<CmcCurve> {
    let ranks = match_ranks(probes, gallery)?;
    let n = probes.len().max(1) as f64;
    let rank_rates = (1..=gallery.len())
        .map(|k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n)
        .collect();
    Ok(CmcCurve { rank_rates })
}
