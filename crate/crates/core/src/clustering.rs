//! Density-peak clustering: pairwise distances, cutoff selection, local
//! density, delta distance, center selection, and cluster assignment.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Default spread multiplier for automatic center selection
/// (gamma > mean + spread * std).
pub const DEFAULT_CENTER_SPREAD: f64 = 3.0;

/// Symmetric Euclidean distance matrix with an optional kernel cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub d: Array2<f64>,
    pub cutoff: Option<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    /// Computes and stores the cutoff distance.
    pub fn with_cutoff(mut self) -> Result<Self> {
        self.cutoff = Some(cutoff_distance(&self)?);
        Ok(self)
    }
}

/// Dense Euclidean distances between all rows. The cutoff is left unset.
pub fn pairwise_distances(features: &Array2<f64>) -> Result<DistanceMatrix> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::Data(format!("pairwise distances need >= 2 points, got {n}")));
    }
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = features
                .row(i)
                .iter()
                .zip(features.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[[i, j]] = dist;
            d[[j, i]] = dist;
        }
    }
    Ok(DistanceMatrix { d, cutoff: None })
}

/// Cutoff rule applied to a bag of off-diagonal distances: sort ascending and
/// take the value at 1-based position ceil(0.98 * M), the boundary of the
/// largest 2%. If that value is 0 (duplicate-heavy data) the first strictly
/// positive distance is used instead, keeping the required cutoff > 0.
pub fn cutoff_from_distances(mut distances: Vec<f64>) -> Result<f64> {
    let m = distances.len();
    if m == 0 {
        return Err(Error::Data("cutoff: no off-diagonal distances".into()));
    }
    distances.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = ((0.98 * m as f64).ceil() as usize).clamp(1, m);
    let mut value = distances[pos - 1];
    if value <= 0.0 {
        match distances.iter().copied().find(|&v| v > 0.0) {
            Some(first_positive) => value = first_positive,
            None => return Err(Error::Degenerate("zero spread: all pairwise distances are 0".into())),
        }
    }
    Ok(value)
}

/// 98th-percentile off-diagonal distance of the matrix.
pub fn cutoff_distance(dm: &DistanceMatrix) -> Result<f64> {
    let n = dm.n();
    let mut distances = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            distances.push(dm.d[[i, j]]);
        }
    }
    cutoff_from_distances(distances)
}

/// Local density: alpha_i = sum over j != i of exp(-(l_ij / l_z)^2).
pub fn local_density(dm: &DistanceMatrix) -> Result<Vec<f64>> {
    let cutoff = dm
        .cutoff
        .ok_or_else(|| Error::Data("local density: cutoff unset".into()))?;
    if !(cutoff.is_finite() && cutoff > 0.0) {
        return Err(Error::Data(format!("local density: invalid cutoff {cutoff}")));
    }
    let n = dm.n();
    let mut alpha = vec![0.0; n];
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            if j != i {
                let ratio = dm.d[[i, j]] / cutoff;
                sum += (-(ratio * ratio)).exp();
            }
        }
        alpha[i] = sum;
    }
    Ok(alpha)
}

/// True when j counts as "denser" than i: higher alpha, or equal alpha with a
/// lower index. The index tie-break makes the relation a strict total order.
fn denser(alpha: &[f64], j: usize, i: usize) -> bool {
    alpha[j] > alpha[i] || (alpha[j] == alpha[i] && j < i)
}

/// Delta distance: beta_i = min distance to any denser point; the globally
/// densest point takes its maximum distance to anyone instead.
pub fn delta_distance(dm: &DistanceMatrix, alpha: &[f64]) -> Result<Vec<f64>> {
    let n = dm.n();
    if alpha.len() != n {
        return Err(Error::Shape(format!("alpha length {} for {} points", alpha.len(), n)));
    }
    let mut beta = vec![0.0; n];
    for i in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..n {
            if j != i && denser(alpha, j, i) && dm.d[[i, j]] < best {
                best = dm.d[[i, j]];
            }
        }
        if best.is_finite() {
            beta[i] = best;
        } else {
            beta[i] = (0..n).map(|j| dm.d[[i, j]]).fold(0.0, f64::max);
        }
    }
    Ok(beta)
}

/// Center-selection policy: a fixed center count, or every point whose
/// gamma = alpha * beta exceeds mean + spread * std (floor of one center).
#[derive(Debug, Clone, PartialEq)]
pub enum CenterPolicy {
    Fixed(usize),
    Auto(f64),
}

/// Selected center point indices, in ascending index order.
pub fn select_centers(alpha: &[f64], beta: &[f64], policy: &CenterPolicy) -> Result<Vec<usize>> {
    let n = alpha.len();
    if beta.len() != n || n == 0 {
        return Err(Error::Shape("select_centers: alpha/beta length mismatch or empty".into()));
    }
    let gamma: Vec<f64> = alpha.iter().zip(beta.iter()).map(|(a, b)| a * b).collect();
    let mut centers = match policy {
        CenterPolicy::Fixed(g) => {
            if *g == 0 || *g > n {
                return Err(Error::Config(format!("fixed center count {g} outside 1..={n}")));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| gamma[b].partial_cmp(&gamma[a]).unwrap().then(a.cmp(&b)));
            order.truncate(*g);
            order
        }
        CenterPolicy::Auto(spread) => {
            if !spread.is_finite() {
                return Err(Error::Config(format!("auto center spread {spread} must be finite")));
            }
            let mean = gamma.iter().sum::<f64>() / n as f64;
            let var = gamma.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n as f64;
            let threshold = mean + spread * var.sqrt();
            (0..n).filter(|&i| gamma[i] > threshold).collect()
        }
    };
    if centers.is_empty() {
        let argmax = (0..n)
            .max_by(|&a, &b| gamma[a].partial_cmp(&gamma[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        centers.push(argmax);
    }
    centers.sort_unstable();
    Ok(centers)
}

/// Completes the clustering: each center claims itself, and every other point
/// joins the cluster of its nearest denser point, processed in decreasing
/// density order so the referenced point is always assigned first.
pub fn assign_points(dm: &DistanceMatrix, alpha: &[f64], centers: &[usize]) -> Result<Vec<usize>> {
    let n = dm.n();
    if alpha.len() != n {
        return Err(Error::Shape(format!("alpha length {} for {} points", alpha.len(), n)));
    }
    if centers.is_empty() {
        return Err(Error::Data("assign_points: no centers".into()));
    }
    let mut assignment = vec![usize::MAX; n];
    for (cluster, &point) in centers.iter().enumerate() {
        if point >= n {
            return Err(Error::Data(format!("center index {point} out of range")));
        }
        if assignment[point] != usize::MAX {
            return Err(Error::Data(format!("duplicate center index {point}")));
        }
        assignment[point] = cluster;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| alpha[b].partial_cmp(&alpha[a]).unwrap().then(a.cmp(&b)));
    for &i in &order {
        if assignment[i] != usize::MAX {
            continue;
        }
        let mut nearest: Option<usize> = None;
        for j in 0..n {
            if j != i && denser(alpha, j, i) {
                match nearest {
                    Some(b) if dm.d[[i, j]] >= dm.d[[i, b]] => {}
                    _ => nearest = Some(j),
                }
            }
        }
        assignment[i] = match nearest {
            Some(j) => assignment[j],
            // The globally densest point was not selected as a center:
            // fall back to its nearest center.
            None => {
                let best = centers
                    .iter()
                    .enumerate()
                    .min_by(|(_, &a), (_, &b)| dm.d[[i, a]].partial_cmp(&dm.d[[i, b]]).unwrap())
                    .map(|(cluster, _)| cluster)
                    .unwrap();
                best
            }
        };
    }
    Ok(assignment)
}

/// Cluster centers and per-point assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centers: Vec<usize>,
    pub assignments: Vec<usize>,
}

/// The (alpha, beta, gamma) profile behind a clustering, for offline
/// inspection of the decision graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionGraph {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// End-to-end density-peak clustering of the given feature rows.
pub fn dpc(features: &Array2<f64>, policy: &CenterPolicy) -> Result<(ClusterModel, DecisionGraph)> {
    let dm = pairwise_distances(features)?.with_cutoff()?;
    let alpha = local_density(&dm)?;
    let beta = delta_distance(&dm, &alpha)?;
    let centers = select_centers(&alpha, &beta, policy)?;
    let assignments = assign_points(&dm, &alpha, &centers)?;
    let gamma = alpha.iter().zip(beta.iter()).map(|(a, b)| a * b).collect();
    Ok((
        ClusterModel { centers, assignments },
        DecisionGraph { alpha, beta, gamma },
    ))
}
