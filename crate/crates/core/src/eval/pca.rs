use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Two-component principal projection of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// `[dim, 2]`, orthonormal columns.
    pub components: Tensor,
    /// `[n, 2]`.
    pub points: Tensor,
    /// Share of the covariance trace captured by each component.
    pub ratios: [f64; 2],
    /// Set when the data has no variance; ratios are then 0.
    pub degenerate: bool,
}

impl PcaProjection {
    pub fn explained_variance(&self) -> f64 {
        self.ratios[0] + self.ratios[1]
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the columns of a row-major `n × n` matrix.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(Error::invalid(format!("expected {n}x{n} matrix, got {} values", a.len())));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = m.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * n + j].powi(2)).sum();
        if off.sqrt() <= 1e-15 * scale || scale == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &i) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + col] = v[k * n + i];
        }
    }
    Ok((values, vectors))
}

/// Projects `[n, dim]` points onto the two leading principal axes of their
/// sample covariance. Each axis is signed so its largest entry is positive.
pub fn pca_project(latents: &Tensor) -> Result<PcaProjection> {
    if latents.rank() != 2 {
        return Err(Error::invalid(format!("pca expects [n, dim] points, got {:?}", latents.shape())));
    }
    let (n, d) = (latents.rows(), latents.cols());
    if n < 3 {
        return Err(Error::invalid(format!("pca needs at least 3 points, got {n}")));
    }
    if d < 2 {
        return Err(Error::invalid("pca needs at least 2 dimensions"));
    }
    if !latents.all_finite() {
        return Err(Error::NonFinite { op: "pca" });
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(latents.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let r = latents.row(i);
        for a in 0..d {
            let da = r[a] - mean[a];
            for b in a..d {
                cov[a * d + b] += da * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= (n - 1) as f64;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    let trace: f64 = (0..d).map(|a| cov[a * d + a]).sum();

    let (values, vectors) = symmetric_eigen(&cov, d)?;
    let degenerate = !(trace > 1e-300);
    let mut comp = vec![0.0; d * 2];
    for c in 0..2 {
        let col: Vec<f64> = if degenerate { (0..d).map(|k| f64::from(k == c)).collect() } else { (0..d).map(|k| vectors[k * d + c]).collect() };
        let pivot = col.iter().fold(0.0f64, |best, &x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for k in 0..d {
            comp[k * 2 + c] = sign * col[k];
        }
    }
    let ratios = if degenerate {
        [0.0, 0.0]
    } else {
        [(values[0] / trace).clamp(0.0, 1.0), (values[1] / trace).clamp(0.0, 1.0)]
    };
    let mut points = Vec::with_capacity(n * 2);
    for i in 0..n {
        let r = latents.row(i);
        for c in 0..2 {
            points.push((0..d).map(|k| (r[k] - mean[k]) * comp[k * 2 + c]).sum());
        }
    }
    Ok(PcaProjection {
        mean,
        components: Tensor::matrix(d, 2, comp)?,
        points: Tensor::matrix(n, 2, points)?,
        ratios,
        degenerate,
    })
}

/// Spread of labelled 2-D points around their class centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSeparation {
    pub classes: Vec<String>,
    pub centroids: Vec<[f64; 2]>,
    /// Smallest distance between two class centroids.
    pub min_centroid_distance: f64,
    /// Mean over classes of the RMS distance to the class centroid.
    pub mean_intra_std: f64,
}

impl ClusterSeparation {
    pub fn separated(&self) -> bool {
        self.min_centroid_distance > self.mean_intra_std
    }
}

pub fn cluster_separation(points: &Tensor, labels: &[String]) -> Result<ClusterSeparation> {
    if points.rank() != 2 || points.cols() != 2 || points.rows() != labels.len() {
        return Err(Error::invalid("cluster separation expects [n, 2] points with one label each"));
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("cluster separation needs at least two classes"));
    }
    let mut centroids = Vec::with_capacity(classes.len());
    let mut stds = Vec::with_capacity(classes.len());
    for class in &classes {
        let members: Vec<&[f64]> = (0..labels.len()).filter(|&i| &labels[i] == class).map(|i| points.row(i)).collect();
        let k = members.len() as f64;
        let c = [members.iter().map(|p| p[0]).sum::<f64>() / k, members.iter().map(|p| p[1]).sum::<f64>() / k];
        let ms = members.iter().map(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sum::<f64>() / k;
        centroids.push(c);
        stds.push(ms.sqrt());
    }
    let mut min_dist = f64::INFINITY;
    for i in 0..centroids.len() {
        for j in 0..i {
            min_dist = min_dist.min(((centroids[i][0] - centroids[j][0]).powi(2) + (centroids[i][1] - centroids[j][1]).powi(2)).sqrt());
        }
    }
    Ok(ClusterSeparation {
        mean_intra_std: stds.iter().sum::<f64>() / stds.len() as f64,
        classes,
        centroids,
        min_centroid_distance: min_dist,
    })
}
