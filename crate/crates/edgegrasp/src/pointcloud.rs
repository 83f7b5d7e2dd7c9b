//! Point-cloud ingestion and geometry: voxel downsampling, PCA normal
//! estimation, exact k-NN graphs, radius crops, farthest point sampling and
//! sensor-style noise injection.
//!
//! All operations are pure: they take the cloud by reference and return new
//! data. Randomised operations take an explicit rng. Units are meters.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kdtree::KdTree;

/// A point cloud with optional unit normals and an optional camera origin.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Unit normals, parallel to `points`, when known.
    pub normals: Option<Vec<Vector3<f64>>>,
    /// Camera origin the cloud was observed from, when known.
    pub viewpoint: Option<Vector3<f64>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        PointCloud {
            points,
            normals: None,
            viewpoint: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Normals, or an error if they have not been computed or loaded.
    pub fn normals(&self) -> Result<&[Vector3<f64>]> {
        self.normals.as_deref().ok_or(Error::MissingNormals)
    }
}

/// Exact k-nearest-neighbour graph.
///
/// `neighbors[i]` lists the `min(k, n-1)` nearest points to point `i`
/// (excluding `i`), ordered by ascending distance with ties broken by
/// ascending index.
#[derive(Debug, Clone)]
pub struct KnnGraph {
    pub k: usize,
    pub neighbors: Vec<Vec<usize>>,
}

/// Downsample to one point per occupied voxel.
///
/// Each output point is the centroid of its voxel's members; normals (when
/// present) are the normalised mean of member normals. Output order is
/// ascending integer voxel key `floor(p / voxel_size)`, compared z-major,
/// then y, then x. An empty cloud downsamples to an empty cloud.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if voxel_size <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "voxel_size must be > 0, got {voxel_size}"
        )));
    }
    let n = cloud.len();
    let mut cells: Vec<((i64, i64, i64), usize)> = Vec::with_capacity(n);
    for (i, p) in cloud.points.iter().enumerate() {
        let key = (
            (p.z / voxel_size).floor() as i64,
            (p.y / voxel_size).floor() as i64,
            (p.x / voxel_size).floor() as i64,
        );
        cells.push((key, i));
    }
    cells.sort();

    let mut points = Vec::new();
    let mut normals = cloud.normals.as_ref().map(|_| Vec::new());
    let mut start = 0;
    while start < cells.len() {
        let key = cells[start].0;
        let mut end = start;
        while end < cells.len() && cells[end].0 == key {
            end += 1;
        }
        let members = &cells[start..end];
        let count = members.len() as f64;
        let centroid = members
            .iter()
            .fold(Vector3::zeros(), |acc, &(_, i)| acc + cloud.points[i])
            / count;
        points.push(centroid);
        if let (Some(out), Some(input)) = (normals.as_mut(), cloud.normals.as_ref()) {
            let mean: Vector3<f64> = members
                .iter()
                .fold(Vector3::zeros(), |acc, &(_, i)| acc + input[i])
                / count;
            let norm = mean.norm();
            if norm > 1e-12 {
                out.push(mean / norm);
            } else {
                // Opposing normals cancelled out; keep the first member's.
                out.push(input[members[0].1]);
            }
        }
        start = end;
    }
    Ok(PointCloud {
        points,
        normals,
        viewpoint: cloud.viewpoint,
    })
}

/// Estimate unit normals by PCA over each point's k-nearest neighbourhood.
///
/// The normal at `p_i` is the eigenvector of the smallest eigenvalue of the
/// covariance of `N(i) ∪ {i}`. When the cloud has a viewpoint, signs are
/// flipped so every normal faces it. `k` is clamped to `n - 1`.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    let n = cloud.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    let k = k.min(n - 1).max(2);
    let tree = KdTree::build(&cloud.points);
    let normals: Vec<Vector3<f64>> = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nbrs = tree.knn(p, k, Some(i));
            let mut centroid = *p;
            for &j in &nbrs {
                centroid += cloud.points[j];
            }
            centroid /= (nbrs.len() + 1) as f64;
            let mut cov = Matrix3::zeros();
            let d0 = p - centroid;
            cov += d0 * d0.transpose();
            for &j in &nbrs {
                let d = cloud.points[j] - centroid;
                cov += d * d.transpose();
            }
            let eig = cov.symmetric_eigen();
            let mut min_idx = 0;
            for a in 1..3 {
                if eig.eigenvalues[a] < eig.eigenvalues[min_idx] {
                    min_idx = a;
                }
            }
            let mut normal: Vector3<f64> = eig.eigenvectors.column(min_idx).into_owned();
            let norm = normal.norm();
            if norm > 1e-12 {
                normal /= norm;
            } else {
                normal = Vector3::z();
            }
            if let Some(vp) = cloud.viewpoint {
                if normal.dot(&(vp - p)) < 0.0 {
                    normal = -normal;
                }
            }
            normal
        })
        .collect();
    Ok(PointCloud {
        points: cloud.points.clone(),
        normals: Some(normals),
        viewpoint: cloud.viewpoint,
    })
}

/// Exact k-NN graph over `points`.
pub fn knn_graph(points: &[Vector3<f64>], k: usize) -> Result<KnnGraph> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewForKnn(n));
    }
    let k_eff = k.min(n - 1);
    let tree = KdTree::build(points);
    let neighbors = points
        .iter()
        .enumerate()
        .map(|(i, p)| tree.knn(p, k_eff, Some(i)))
        .collect();
    Ok(KnnGraph { k, neighbors })
}

/// Indices of all points within `radius` of `center` (inclusive), ascending.
pub fn radius_crop(cloud: &PointCloud, center: &Vector3<f64>, radius: f64) -> Result<Vec<usize>> {
    if radius < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "radius must be >= 0, got {radius}"
        )));
    }
    let r2 = radius * radius;
    Ok(cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| (*p - center).norm_squared() <= r2)
        .map(|(i, _)| i)
        .collect())
}

/// Greedy max-min farthest point sampling.
///
/// The first selected index is `seed_index`; each subsequent pick maximises
/// the minimum distance to the already-selected set, ties broken by lower
/// index.
pub fn farthest_point_sampling(
    points: &[Vector3<f64>],
    m: usize,
    seed_index: usize,
) -> Result<Vec<usize>> {
    let n = points.len();
    if m > n {
        return Err(Error::SampleTooLarge {
            requested: m,
            available: n,
        });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if seed_index >= n {
        return Err(Error::InvalidArgument(format!(
            "seed_index {seed_index} out of range for {n} points"
        )));
    }
    let mut selected = Vec::with_capacity(m);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = seed_index;
    selected.push(current);
    for _ in 1..m {
        let cp = points[current];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            let d2 = (p - cp).norm_squared();
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if min_d2[i] > best.0 && !selected.contains(&i) {
                best = (min_d2[i], i);
            }
        }
        current = best.1;
        selected.push(current);
    }
    Ok(selected)
}

/// Perturb each point by `N(0, sigma^2)` along the ray from the viewpoint to
/// the point (or along +z when the cloud has no viewpoint). Normals are left
/// unchanged.
pub fn add_noise<R: Rng>(cloud: &PointCloud, sigma: f64, rng: &mut R) -> Result<PointCloud> {
    if sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    let mut out = cloud.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    for p in out.points.iter_mut() {
        let dir = match cloud.viewpoint {
            Some(vp) => {
                let d = *p - vp;
                let norm = d.norm();
                if norm > 1e-12 {
                    d / norm
                } else {
                    Vector3::z()
                }
            }
            None => Vector3::z(),
        };
        let eps: f64 = rng.sample(StandardNormal);
        *p += dir * (sigma * eps);
    }
    Ok(out)
}
