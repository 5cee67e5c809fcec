use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::AlignmentError;

pub const BANDWIDTH_FLOOR: f64 = 1e-3;
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Product-Gaussian kernel density estimate over fixed-width points.
///
/// There is no mutation API; a fitted model is frozen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KdeModel {
    centers: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
    #[serde(skip)]
    log_normalizer: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KdeWire {
    centers: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
}

impl<'de> Deserialize<'de> for KdeModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = KdeWire::deserialize(d)?;
        KdeModel::from_parts(w.centers, w.bandwidths).map_err(serde::de::Error::custom)
    }
}

impl KdeModel {
    pub fn from_parts(centers: Vec<Vec<f64>>, bandwidths: Vec<f64>) -> Result<Self, AlignmentError> {
        if centers.is_empty() {
            return Err(AlignmentError::Precondition("KDE needs at least one center".into()));
        }
        let d = bandwidths.len();
        if d == 0 || centers.iter().any(|c| c.len() != d) {
            return Err(AlignmentError::Precondition(format!(
                "every center must have {d} coordinates"
            )));
        }
        if bandwidths.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(AlignmentError::Precondition("bandwidths must be positive".into()));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(AlignmentError::Precondition("KDE centers must be finite".into()));
        }
        let log_normalizer = -(centers.len() as f64).ln()
            - 0.5 * d as f64 * (2.0 * PI).ln()
            - bandwidths.iter().map(|h| h.ln()).sum::<f64>();
        Ok(Self { centers, bandwidths, log_normalizer })
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn dim(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }
}

/// Scott's rule per dimension: `n^(-1/(d+4)) · std`, floored.
pub fn fit_kde<P: AsRef<[f64]>>(points: &[P]) -> Result<KdeModel, AlignmentError> {
    if points.is_empty() {
        return Err(AlignmentError::Precondition("cannot fit a KDE to zero points".into()));
    }
    let d = points[0].as_ref().len();
    let n = points.len() as f64;
    let factor = n.powf(-1.0 / (d as f64 + 4.0));
    let mut bandwidths = Vec::with_capacity(d);
    for k in 0..d {
        let mean = points.iter().map(|p| p.as_ref()[k]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p.as_ref()[k] - mean).powi(2)).sum::<f64>()
            / (n - 1.0).max(1.0);
        bandwidths.push((factor * var.sqrt()).max(BANDWIDTH_FLOOR));
    }
    let centers = points.iter().map(|p| p.as_ref().to_vec()).collect();
    KdeModel::from_parts(centers, bandwidths)
}

/// Mixture density at `x`, floored at [`DENSITY_FLOOR`].
pub fn kde_density(model: &KdeModel, x: &[f64]) -> f64 {
    assert_eq!(x.len(), model.dim(), "KDE query dimension");
    let inv: Vec<f64> = model.bandwidths.iter().map(|h| 1.0 / h).collect();
    // log-sum-exp over centers keeps tight bandwidths from underflowing early
    let mut exps = Vec::with_capacity(model.centers.len());
    let mut best = f64::NEG_INFINITY;
    for c in &model.centers {
        let mut q = 0.0;
        for k in 0..x.len() {
            let z = (x[k] - c[k]) * inv[k];
            q += z * z;
        }
        let e = -0.5 * q;
        best = best.max(e);
        exps.push(e);
    }
    let s: f64 = exps.iter().map(|e| (e - best).exp()).sum();
    let log_p = model.log_normalizer + best + s.ln();
    log_p.exp().max(DENSITY_FLOOR)
}
