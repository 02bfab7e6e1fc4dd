//! Fuzzy membership of samples to cluster centers and hard routing to
//! subnetworks.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Default Gaussian denominator for fuzzy membership.
pub const DEFAULT_MEMBERSHIP_DENOM: f64 = 0.02;

/// G x N membership matrix: g[k][i] is the membership of sample i to
/// center k, in (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix {
    pub g: Array2<f64>,
    pub denom: f64,
}

impl MembershipMatrix {
    pub fn center_count(&self) -> usize {
        self.g.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.g.ncols()
    }
}

/// g[k][i] = exp(-||u_i - z_k||^2 / denom), in the same feature space the
/// centers were found in.
pub fn fuzzy_membership(
    features: &Array2<f64>,
    centers: &Array2<f64>,
    denom: f64,
) -> Result<MembershipMatrix> {
    if centers.nrows() == 0 {
        return Err(Error::Data("fuzzy membership: no centers".into()));
    }
    if centers.ncols() != features.ncols() {
        return Err(Error::Shape(format!(
            "center dim {} vs feature dim {}",
            centers.ncols(),
            features.ncols()
        )));
    }
    if !(denom.is_finite() && denom > 0.0) {
        return Err(Error::Config(format!("membership denom {denom} must be > 0")));
    }
    let mut g = Array2::zeros((centers.nrows(), features.nrows()));
    for k in 0..centers.nrows() {
        for i in 0..features.nrows() {
            let sq: f64 = features
                .row(i)
                .iter()
                .zip(centers.row(k).iter())
                .map(|(u, z)| (u - z) * (u - z))
                .sum();
            g[[k, i]] = (-sq / denom).exp();
        }
    }
    Ok(MembershipMatrix { g, denom })
}

/// Hard routing: each sample goes to the center with maximal membership,
/// ties to the lowest center index.
pub fn route(m: &MembershipMatrix) -> Vec<usize> {
    let (centers, samples) = (m.center_count(), m.sample_count());
    (0..samples)
        .map(|i| {
            let mut best = 0;
            for k in 1..centers {
                if m.g[[k, i]] > m.g[[best, i]] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
