//! Approach-point sampling, local-region construction and batch assembly.
//!
//! A *region* is the ball of radius `G_w/2` around an approach point,
//! translated so the approach point sits at the origin (local index 0).
//! Every other region point whose (approach, contact) pair yields a valid
//! grasp frame is a contact candidate; the flattened candidate list across
//! regions forms the batch scored by the network.

use nalgebra::Vector3;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grasp::{compute_edge_frame, EdgeGrasp, GraspScorePose, GripperSpec};
use crate::pointcloud::{radius_crop, PointCloud};

/// How approach points are drawn from the cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproachStrategy {
    /// Without-replacement uniform sampling.
    Uniform,
    /// Farthest point sampling from an rng-chosen seed index.
    Fps,
}

/// Region construction knobs.
#[derive(Debug, Clone, Copy)]
pub struct RegionOptions {
    /// Reject candidate contacts whose δ falls outside [0, G_d], keeping the
    /// contact on the finger.
    pub enforce_delta_range: bool,
    /// Regions with fewer points than this are rejected outright.
    pub min_points: usize,
}

impl Default for RegionOptions {
    fn default() -> Self {
        RegionOptions {
            enforce_delta_range: true,
            min_points: 4,
        }
    }
}

/// A cropped, approach-centered neighbourhood with its contact candidates.
#[derive(Debug, Clone)]
pub struct LocalRegion {
    /// Index of the approach point in the parent cloud.
    pub approach_index: usize,
    /// Parent-cloud index of each region point; entry 0 is the approach
    /// point itself.
    pub point_indices: Vec<usize>,
    /// Region points translated by −p_a; entry 0 is the origin.
    pub centered_points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    /// Local indices of points that form a valid grasp with the approach
    /// point.
    pub contact_candidates: Vec<usize>,
}

impl LocalRegion {
    pub fn len(&self) -> usize {
        self.centered_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centered_points.is_empty()
    }
}

/// One scored unit: a set of regions plus the flattened candidate edges.
#[derive(Debug, Clone)]
pub struct GraspBatch {
    pub regions: Vec<LocalRegion>,
    /// (region id, contact local index) pairs, capped at `max_edges`.
    pub edges: Vec<(usize, usize)>,
}

impl GraspBatch {
    /// Materialise the world-frame grasp for one edge.
    pub fn edge_grasp(
        &self,
        cloud: &PointCloud,
        gripper: &GripperSpec,
        edge: (usize, usize),
    ) -> Result<EdgeGrasp> {
        let region = &self.regions[edge.0];
        let contact_world = region.point_indices[edge.1];
        let normals = cloud.normals()?;
        let mut grasp = compute_edge_frame(
            &cloud.points[region.approach_index],
            &cloud.points[contact_world],
            &normals[contact_world],
            gripper,
        )
        .map_err(|r| Error::InvalidArgument(format!("edge is not a valid candidate: {r:?}")))?;
        grasp.approach_index = region.approach_index;
        grasp.contact_index = contact_world;
        Ok(grasp)
    }
}

/// Draw `m` distinct approach-point indices.
pub fn sample_approach_points<R: Rng>(
    cloud: &PointCloud,
    m: usize,
    strategy: ApproachStrategy,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m > n {
        return Err(Error::SampleTooLarge {
            requested: m,
            available: n,
        });
    }
    match strategy {
        ApproachStrategy::Uniform => Ok(sample_indices(rng, n, m).into_vec()),
        ApproachStrategy::Fps => {
            let seed = rng.gen_range(0..n);
            crate::pointcloud::farthest_point_sampling(&cloud.points, m, seed)
        }
    }
}

/// Crop, centre and enumerate contact candidates around one approach point.
///
/// Returns `Ok(None)` when the region is rejected (fewer than
/// `opts.min_points` points). Requires normals on the cloud.
pub fn build_region(
    cloud: &PointCloud,
    approach_index: usize,
    gripper: &GripperSpec,
    opts: &RegionOptions,
) -> Result<Option<LocalRegion>> {
    let normals = cloud.normals()?;
    if approach_index >= cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "approach index {approach_index} out of range"
        )));
    }
    let p_a = cloud.points[approach_index];
    let crop = radius_crop(cloud, &p_a, gripper.half_aperture())?;
    if crop.len() < opts.min_points {
        return Ok(None);
    }
    // Approach point first, remaining crop members in ascending index order.
    let mut point_indices = Vec::with_capacity(crop.len());
    point_indices.push(approach_index);
    point_indices.extend(crop.into_iter().filter(|&i| i != approach_index));

    let centered_points: Vec<Vector3<f64>> = point_indices
        .iter()
        .map(|&i| cloud.points[i] - p_a)
        .collect();
    let region_normals: Vec<Vector3<f64>> = point_indices.iter().map(|&i| normals[i]).collect();

    let mut contact_candidates = Vec::new();
    for local in 1..point_indices.len() {
        let world = point_indices[local];
        match compute_edge_frame(&p_a, &cloud.points[world], &normals[world], gripper) {
            Ok(grasp) => {
                if opts.enforce_delta_range && (grasp.delta < 0.0 || grasp.delta > gripper.depth) {
                    continue;
                }
                contact_candidates.push(local);
            }
            Err(_) => continue,
        }
    }
    Ok(Some(LocalRegion {
        approach_index,
        point_indices,
        centered_points,
        normals: region_normals,
        contact_candidates,
    }))
}

/// Build regions for the given approach points and assemble the edge list,
/// uniformly subsampled down to `max_edges` when over the cap.
///
/// Regions are constructed in parallel and merged in ascending approach-index
/// order, so the output is deterministic for a fixed rng.
pub fn build_batch<R: Rng>(
    cloud: &PointCloud,
    approach_indices: &[usize],
    gripper: &GripperSpec,
    max_edges: usize,
    opts: &RegionOptions,
    rng: &mut R,
) -> Result<GraspBatch> {
    let mut sorted: Vec<usize> = approach_indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let built: Vec<Option<LocalRegion>> = sorted
        .par_iter()
        .map(|&a| build_region(cloud, a, gripper, opts))
        .collect::<Result<_>>()?;
    let regions: Vec<LocalRegion> = built.into_iter().flatten().collect();
    if regions.is_empty() {
        return Err(Error::NoValidApproachPoints);
    }

    let mut edges = Vec::new();
    for (rid, region) in regions.iter().enumerate() {
        for &c in &region.contact_candidates {
            edges.push((rid, c));
        }
    }
    if edges.len() > max_edges {
        let mut keep = sample_indices(rng, edges.len(), max_edges).into_vec();
        keep.sort_unstable();
        edges = keep.into_iter().map(|i| edges[i]).collect();
    }
    Ok(GraspBatch { regions, edges })
}

/// Final-selection policy over scored grasps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectPolicy {
    /// The single above-threshold grasp with the largest centre z
    /// (ties: higher score, then lower input index).
    HighestZ,
    /// The `k` best above-threshold grasps by score.
    TopK(usize),
}

/// Filter by score threshold and apply the selection policy.
///
/// An empty result is not an error; the caller decides what to do.
pub fn select_grasps(
    scored: &[GraspScorePose],
    threshold: f64,
    policy: SelectPolicy,
) -> Vec<GraspScorePose> {
    let passing: Vec<(usize, &GraspScorePose)> = scored
        .iter()
        .enumerate()
        .filter(|(_, s)| s.score >= threshold)
        .collect();
    if passing.is_empty() {
        return Vec::new();
    }
    match policy {
        SelectPolicy::HighestZ => {
            let best = passing
                .iter()
                .max_by(|(ia, a), (ib, b)| {
                    (a.grasp.center.z, a.score, std::cmp::Reverse(*ia))
                        .partial_cmp(&(b.grasp.center.z, b.score, std::cmp::Reverse(*ib)))
                        .unwrap()
                })
                .unwrap();
            vec![best.1.clone()]
        }
        SelectPolicy::TopK(k) => {
            let mut ranked = passing;
            ranked.sort_by(|(ia, a), (ib, b)| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap()
                    .then_with(|| ia.cmp(ib))
            });
            ranked.into_iter().take(k).map(|(_, s)| s.clone()).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grasp::{GraspScorePose, GripperSpec};
    use nalgebra::Rotation3;
    use rand::Rng;

    /// A sphere-surface cloud with exact radial normals.
    fn sphere_cloud(n: usize, radius: f64, seed: u64) -> PointCloud {
        let mut rng = crate::rng::master(seed);
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for _ in 0..n {
            let dir = crate::rng::random_unit_vector(&mut rng).into_inner();
            points.push(dir * radius);
            normals.push(dir);
        }
        PointCloud {
            points,
            normals: Some(normals),
            viewpoint: None,
        }
    }

    fn scored(z: f64, score: f64) -> GraspScorePose {
        let g = EdgeGrasp {
            approach_index: 0,
            contact_index: 0,
            approach_point: Vector3::zeros(),
            contact_point: Vector3::zeros(),
            contact_normal: Vector3::x(),
            approach_dir: Vector3::z(),
            delta: 0.0,
            center: Vector3::new(0.0, 0.0, z),
            rotation: Rotation3::identity(),
        };
        GraspScorePose { grasp: g, score }
    }

    #[test]
    fn sampling_full_cloud_returns_all_indices() {
        let cloud = sphere_cloud(20, 0.03, 1);
        for strategy in [ApproachStrategy::Uniform, ApproachStrategy::Fps] {
            let mut rng = crate::rng::master(2);
            let mut got = sample_approach_points(&cloud, 20, strategy, &mut rng).unwrap();
            got.sort_unstable();
            assert_eq!(got, (0..20).collect::<Vec<_>>());
        }
    }

    #[test]
    fn fps_on_collinear_points_picks_extremes() {
        let cloud = PointCloud {
            points: vec![
                Vector3::zeros(),
                Vector3::new(0.5, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
            ],
            normals: Some(vec![Vector3::z(); 3]),
            viewpoint: None,
        };
        // Drive the rng until it seeds at index 0.
        let mut rng = crate::rng::master(0);
        loop {
            let mut probe = rng.clone();
            if probe.gen_range(0..3usize) == 0 {
                break;
            }
            let _: u64 = rng.gen();
        }
        let got = sample_approach_points(&cloud, 2, ApproachStrategy::Fps, &mut rng).unwrap();
        assert_eq!(got, vec![0, 2]);
    }

    #[test]
    fn uniform_sampling_is_reproducible_and_unbiased() {
        let cloud = sphere_cloud(10, 0.03, 3);
        let a = sample_approach_points(&cloud, 3, ApproachStrategy::Uniform, &mut crate::rng::master(4)).unwrap();
        let b = sample_approach_points(&cloud, 3, ApproachStrategy::Uniform, &mut crate::rng::master(4)).unwrap();
        assert_eq!(a, b);

        // Chi-squared uniformity over 10,000 single draws, alpha = 0.01,
        // 9 dof -> critical value 21.67.
        let mut counts = [0usize; 10];
        let mut rng = crate::rng::master(5);
        for _ in 0..10_000 {
            let idx = sample_approach_points(&cloud, 1, ApproachStrategy::Uniform, &mut rng).unwrap()[0];
            counts[idx] += 1;
        }
        let expected = 1000.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 21.67, "chi2 = {chi2}");
    }

    #[test]
    fn oversampling_errors() {
        let cloud = sphere_cloud(5, 0.03, 6);
        let mut rng = crate::rng::master(7);
        assert!(sample_approach_points(&cloud, 6, ApproachStrategy::Uniform, &mut rng).is_err());
    }

    #[test]
    fn isolated_point_region_is_rejected() {
        let mut cloud = sphere_cloud(8, 0.01, 8);
        cloud.points.push(Vector3::new(10.0, 0.0, 0.0));
        cloud.normals.as_mut().unwrap().push(Vector3::z());
        let gripper = GripperSpec::default();
        let region = build_region(&cloud, 8, &gripper, &RegionOptions::default()).unwrap();
        assert!(region.is_none());
    }

    #[test]
    fn region_centering_puts_approach_at_origin() {
        let cloud = sphere_cloud(200, 0.03, 9);
        let gripper = GripperSpec::default();
        let region = build_region(&cloud, 5, &gripper, &RegionOptions::default())
            .unwrap()
            .expect("dense sphere region");
        assert_eq!(region.point_indices[0], 5);
        assert_eq!(region.centered_points[0], Vector3::zeros());
        for p in &region.centered_points {
            assert!(p.norm() <= gripper.half_aperture() + 1e-9);
        }
    }

    #[test]
    fn region_centering_cancels_translation() {
        let cloud = sphere_cloud(200, 0.03, 10);
        let gripper = GripperSpec::default();
        let region = build_region(&cloud, 3, &gripper, &RegionOptions::default())
            .unwrap()
            .unwrap();
        let mut moved = cloud.clone();
        let t = Vector3::new(1.0, -2.0, 0.5);
        moved.points.iter_mut().for_each(|p| *p += t);
        let region2 = build_region(&moved, 3, &gripper, &RegionOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(region.point_indices, region2.point_indices);
        for (a, b) in region.centered_points.iter().zip(&region2.centered_points) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn contact_candidates_match_brute_force_filter() {
        let gripper = GripperSpec::default();
        let opts = RegionOptions::default();
        for seed in 0..20 {
            let cloud = sphere_cloud(150, 0.025, 100 + seed);
            let Some(region) = build_region(&cloud, 0, &gripper, &opts).unwrap() else {
                continue;
            };
            let normals = cloud.normals.as_ref().unwrap();
            let p_a = cloud.points[region.approach_index];
            let mut want = Vec::new();
            for local in 1..region.point_indices.len() {
                let w = region.point_indices[local];
                if let Ok(g) = compute_edge_frame(&p_a, &cloud.points[w], &normals[w], &gripper) {
                    if g.delta >= 0.0 && g.delta <= gripper.depth {
                        want.push(local);
                    }
                }
            }
            assert_eq!(region.contact_candidates, want);
        }
    }

    #[test]
    fn batch_keeps_all_edges_under_cap() {
        let cloud = sphere_cloud(300, 0.03, 11);
        let gripper = GripperSpec::default();
        let mut rng = crate::rng::master(12);
        let approaches =
            sample_approach_points(&cloud, 2, ApproachStrategy::Uniform, &mut rng).unwrap();
        let batch = build_batch(
            &cloud,
            &approaches,
            &gripper,
            2000,
            &RegionOptions::default(),
            &mut rng,
        )
        .unwrap();
        let total: usize = batch.regions.iter().map(|r| r.contact_candidates.len()).sum();
        assert_eq!(batch.edges.len(), total.min(2000));
        for &(rid, c) in &batch.edges {
            assert!(batch.regions[rid].contact_candidates.contains(&c));
        }
    }

    #[test]
    fn batch_cap_subsamples_distinct_edges() {
        let cloud = sphere_cloud(800, 0.03, 13);
        let gripper = GripperSpec::default();
        let mut rng = crate::rng::master(14);
        let approaches =
            sample_approach_points(&cloud, 32, ApproachStrategy::Fps, &mut rng).unwrap();
        let batch = build_batch(
            &cloud,
            &approaches,
            &gripper,
            500,
            &RegionOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(batch.edges.len(), 500);
        let mut dedup = batch.edges.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 500);
    }

    #[test]
    fn batch_is_deterministic_under_fixed_seed() {
        let cloud = sphere_cloud(500, 0.03, 15);
        let gripper = GripperSpec::default();
        let run = || {
            let mut rng = crate::rng::master(16);
            let approaches =
                sample_approach_points(&cloud, 16, ApproachStrategy::Uniform, &mut rng).unwrap();
            build_batch(&cloud, &approaches, &gripper, 300, &RegionOptions::default(), &mut rng)
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.edges, b.edges);
    }

    #[test]
    fn batch_indices_commute_with_rigid_transform() {
        let cloud = sphere_cloud(400, 0.03, 17);
        let gripper = GripperSpec::default();
        let mut rot_rng = crate::rng::master(18);
        let rot = crate::rng::random_rotation(&mut rot_rng);
        let t = Vector3::new(0.2, 0.1, -0.4);
        let moved = PointCloud {
            points: cloud.points.iter().map(|p| rot * p + t).collect(),
            normals: Some(
                cloud
                    .normals
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|n| rot * n)
                    .collect(),
            ),
            viewpoint: None,
        };
        let run = |c: &PointCloud| {
            let mut rng = crate::rng::master(19);
            let approaches =
                sample_approach_points(c, 8, ApproachStrategy::Uniform, &mut rng).unwrap();
            build_batch(c, &approaches, &gripper, 200, &RegionOptions::default(), &mut rng).unwrap()
        };
        let a = run(&cloud);
        let b = run(&moved);
        assert_eq!(a.edges, b.edges);
        let ia: Vec<usize> = a.regions.iter().map(|r| r.approach_index).collect();
        let ib: Vec<usize> = b.regions.iter().map(|r| r.approach_index).collect();
        assert_eq!(ia, ib);
    }

    #[test]
    fn all_rejected_regions_error() {
        // Points spread far apart: every region is a singleton.
        let cloud = PointCloud {
            points: (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect(),
            normals: Some(vec![Vector3::z(); 5]),
            viewpoint: None,
        };
        let gripper = GripperSpec::default();
        let mut rng = crate::rng::master(20);
        let err = build_batch(
            &cloud,
            &[0, 1, 2],
            &gripper,
            100,
            &RegionOptions::default(),
            &mut rng,
        );
        assert!(matches!(err, Err(Error::NoValidApproachPoints)));
    }

    #[test]
    fn select_highest_z_follows_paper_rule() {
        let grasps = vec![scored(0.1, 0.95), scored(0.05, 0.99)];
        let out = select_grasps(&grasps, 0.9, SelectPolicy::HighestZ);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].grasp.center.z, 0.1);
    }

    #[test]
    fn select_empty_when_all_below_threshold() {
        let grasps = vec![scored(0.1, 0.5), scored(0.2, 0.89)];
        assert!(select_grasps(&grasps, 0.9, SelectPolicy::HighestZ).is_empty());
    }

    #[test]
    fn select_top_k_matches_full_sort() {
        let mut rng = crate::rng::master(21);
        let grasps: Vec<GraspScorePose> =
            (0..10).map(|_| scored(rng.gen(), rng.gen())).collect();
        let out = select_grasps(&grasps, 0.0, SelectPolicy::TopK(3));
        let mut sorted: Vec<f64> = grasps.iter().map(|g| g.score).collect();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let got: Vec<f64> = out.iter().map(|g| g.score).collect();
        assert_eq!(got, sorted[..3].to_vec());
    }

    #[test]
    fn select_highest_z_breaks_ties_by_score() {
        let grasps = vec![scored(0.1, 0.91), scored(0.1, 0.95), scored(0.1, 0.93)];
        let out = select_grasps(&grasps, 0.9, SelectPolicy::HighestZ);
        assert_eq!(out[0].score, 0.95);
    }

    #[test]
    fn every_edge_respects_half_aperture_bound() {
        let cloud = sphere_cloud(400, 0.03, 22);
        let gripper = GripperSpec::default();
        let mut rng = crate::rng::master(23);
        let approaches =
            sample_approach_points(&cloud, 16, ApproachStrategy::Fps, &mut rng).unwrap();
        let batch = build_batch(
            &cloud,
            &approaches,
            &gripper,
            1000,
            &RegionOptions::default(),
            &mut rng,
        )
        .unwrap();
        for &edge in &batch.edges {
            let g = batch.edge_grasp(&cloud, &gripper, edge).unwrap();
            assert!((g.approach_point - g.contact_point).norm() <= gripper.half_aperture() + 1e-12);
        }
    }
}
