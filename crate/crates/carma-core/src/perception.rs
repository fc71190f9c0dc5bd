//! Geometry kernels: support-plane removal, Euclidean cluster extraction,
//! pinhole projection, pose-based crop regions and person track association.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::InstanceId;

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("degenerate point cloud: {0}")]
    DegenerateInput(String),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    /// 640x480 tabletop defaults used by the replay harness.
    pub fn default_vga() -> Self {
        CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

/// Integer pixel rectangle, always inside image bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRegion {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Plane in Hessian form `n . p + d = 0` with unit normal, oriented so the
/// camera origin is on the positive side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: [f64; 3],
    pub d: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        dot(self.normal, p) + self.d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub centroid: [f64; 3],
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectCandidate {
    pub centroid: [f64; 3],
    pub indices: Vec<usize>,
    pub crop: CropRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    pub intrinsics: CameraIntrinsics,
    pub plane_tolerance: f64,
    pub plane_iterations: u32,
    pub cluster_tolerance: f64,
    pub min_points: usize,
    pub max_points: usize,
    pub seed: u64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            intrinsics: CameraIntrinsics::default_vga(),
            plane_tolerance: 0.01,
            plane_iterations: 200,
            cluster_tolerance: 0.03,
            min_points: 30,
            max_points: 50_000,
            seed: 0,
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm(sub(a, b))
}

/// Fit the dominant plane by randomized consensus and split it off.
///
/// The remainder keeps the points farther than `inlier_tol` from the plane
/// on the camera-facing side; points on or below the plane are discarded.
/// Deterministic for a fixed seed.
pub fn remove_support_plane(
    cloud: &PointCloud,
    inlier_tol: f64,
    iterations: u32,
    seed: u64,
) -> Result<(Plane, PointCloud), PerceptionError> {
    if cloud.len() < 3 {
        return Err(PerceptionError::DegenerateInput(format!(
            "need at least 3 points, got {}",
            cloud.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..cloud.len()).collect();
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..iterations {
        let picks: Vec<usize> = idx.choose_multiple(&mut rng, 3).copied().collect();
        let (a, b, c) = (cloud.points[picks[0]], cloud.points[picks[1]], cloud.points[picks[2]]);
        let n = cross(sub(b, a), sub(c, a));
        let len = norm(n);
        if len < 1e-12 {
            continue; // collinear sample
        }
        let normal = [n[0] / len, n[1] / len, n[2] / len];
        let plane = orient_toward_origin(Plane { normal, d: -dot(normal, a) });
        let inliers = cloud
            .points
            .iter()
            .filter(|p| plane.signed_distance(**p).abs() <= inlier_tol)
            .count();
        if best.as_ref().map_or(true, |(n, _)| inliers > *n) {
            best = Some((inliers, plane));
        }
    }
    let (_, plane) = best.ok_or_else(|| {
        PerceptionError::DegenerateInput("all consensus samples were collinear".into())
    })?;
    let remainder = PointCloud::new(
        cloud
            .points
            .iter()
            .copied()
            .filter(|p| plane.signed_distance(*p) > inlier_tol)
            .collect(),
    );
    Ok((plane, remainder))
}

/// Flip the plane so the camera origin sits on the positive side.
fn orient_toward_origin(plane: Plane) -> Plane {
    if plane.d < 0.0 {
        Plane {
            normal: [-plane.normal[0], -plane.normal[1], -plane.normal[2]],
            d: -plane.d,
        }
    } else {
        plane
    }
}

/// Euclidean single-linkage clustering over a voxel hash grid with cell
/// size equal to the tolerance. Two points share a cluster iff they are
/// connected by a chain of steps each within the tolerance. Clusters
/// outside `[min_points, max_points]` are dropped; output is sorted by
/// centroid (x, then y, then z).
pub fn cluster_objects(
    cloud: &PointCloud,
    tolerance: f64,
    min_points: usize,
    max_points: usize,
) -> Vec<Cluster> {
    assert!(tolerance > 0.0);
    if cloud.is_empty() {
        return Vec::new();
    }
    let cell = |p: [f64; 3]| -> (i64, i64, i64) {
        (
            (p[0] / tolerance).floor() as i64,
            (p[1] / tolerance).floor() as i64,
            (p[2] / tolerance).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        grid.entry(cell(*p)).or_default().push(i);
    }

    let mut visited = vec![false; cloud.len()];
    let mut clusters = Vec::new();
    for start in 0..cloud.len() {
        if visited[start] {
            continue;
        }
        // flood fill through neighboring cells
        let mut members = Vec::new();
        let mut stack = vec![start];
        visited[start] = true;
        while let Some(i) = stack.pop() {
            members.push(i);
            let (cx, cy, cz) = cell(cloud.points[i]);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                            continue;
                        };
                        for &j in bucket {
                            if !visited[j] && dist(cloud.points[i], cloud.points[j]) <= tolerance {
                                visited[j] = true;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
        }
        if members.len() < min_points || members.len() > max_points {
            continue;
        }
        members.sort_unstable();
        let mut centroid = [0.0; 3];
        for &i in &members {
            for k in 0..3 {
                centroid[k] += cloud.points[i][k];
            }
        }
        for c in &mut centroid {
            *c /= members.len() as f64;
        }
        clusters.push(Cluster { centroid, indices: members });
    }
    clusters.sort_by(|a, b| {
        a.centroid
            .partial_cmp(&b.centroid)
            .expect("finite centroids")
    });
    clusters
}

/// Pinhole projection without distortion.
pub fn project_point(p: [f64; 3], intr: &CameraIntrinsics) -> Result<(f64, f64), PerceptionError> {
    if p[2] <= 0.0 {
        return Err(PerceptionError::BehindCamera(p[2]));
    }
    Ok((intr.fx * p[0] / p[2] + intr.cx, intr.fy * p[1] / p[2] + intr.cy))
}

/// Axis-aligned bounding box of the projected joints, expanded by
/// `margin_frac` per side and clamped to the image.
pub fn compute_crop_region(
    joints: &[[f64; 3]],
    intr: &CameraIntrinsics,
    margin_frac: f64,
) -> Result<CropRegion, PerceptionError> {
    let mut projected = Vec::new();
    let mut last_z = 0.0;
    for &j in joints {
        match project_point(j, intr) {
            Ok(uv) => projected.push(uv),
            Err(PerceptionError::BehindCamera(z)) => last_z = z,
            Err(e) => return Err(e),
        }
    }
    if projected.is_empty() {
        return Err(PerceptionError::BehindCamera(last_z));
    }
    let (mut min_u, mut min_v) = projected[0];
    let (mut max_u, mut max_v) = projected[0];
    for &(u, v) in &projected[1..] {
        min_u = min_u.min(u);
        min_v = min_v.min(v);
        max_u = max_u.max(u);
        max_v = max_v.max(v);
    }
    let margin_u = (max_u - min_u) * margin_frac;
    let margin_v = (max_v - min_v) * margin_frac;
    Ok(clamp_region(
        min_u - margin_u,
        min_v - margin_v,
        max_u + margin_u,
        max_v + margin_v,
        intr.width,
        intr.height,
    ))
}

fn clamp_region(min_u: f64, min_v: f64, max_u: f64, max_v: f64, width: u32, height: u32) -> CropRegion {
    let x0 = min_u.floor().clamp(0.0, (width - 1) as f64) as u32;
    let y0 = min_v.floor().clamp(0.0, (height - 1) as f64) as u32;
    let x1 = max_u.ceil().clamp(0.0, (width - 1) as f64) as u32;
    let y1 = max_v.ceil().clamp(0.0, (height - 1) as f64) as u32;
    CropRegion {
        x: x0,
        y: y0,
        w: (x1 - x0).max(1).min(width - x0),
        h: (y1 - y0).max(1).min(height - y0),
    }
}

/// Plane removal, clustering, then a projected bounding rectangle per
/// cluster. Clusters that do not project (centroid behind the camera) are
/// dropped with a warning.
pub fn segment_workspace(
    cloud: &PointCloud,
    params: &SegmentationParams,
) -> Result<Vec<ObjectCandidate>, PerceptionError> {
    let (_, remainder) =
        remove_support_plane(cloud, params.plane_tolerance, params.plane_iterations, params.seed)?;
    let clusters = cluster_objects(
        &remainder,
        params.cluster_tolerance,
        params.min_points,
        params.max_points,
    );
    let mut candidates = Vec::new();
    for cluster in clusters {
        let points: Vec<[f64; 3]> =
            cluster.indices.iter().map(|&i| remainder.points[i]).collect();
        match compute_crop_region(&points, &params.intrinsics, 0.0) {
            Ok(crop) => candidates.push(ObjectCandidate {
                centroid: cluster.centroid,
                indices: cluster.indices,
                crop,
            }),
            Err(PerceptionError::BehindCamera(_)) => {
                log::warn!(
                    "dropping unprojectable cluster at centroid {:?}",
                    cluster.centroid
                );
            }
            Err(e) => return Err(e),
        }
    }
    Ok(candidates)
}

/// Per-person track state: last centroid and last-seen time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackState {
    tracks: BTreeMap<InstanceId, ([f64; 3], f64)>,
}

impl TrackState {
    pub fn new() -> Self {
        TrackState::default()
    }

    pub fn tracks(&self) -> impl Iterator<Item = (&InstanceId, &([f64; 3], f64))> {
        self.tracks.iter()
    }

    pub fn live_ids(&self) -> Vec<InstanceId> {
        self.tracks.keys().copied().collect()
    }
}

/// Greedy nearest-neighbor association of person detections to tracks.
///
/// Candidate (track, detection) pairs within the gate are taken in
/// ascending (distance, track ordinal, detection index) order; leftovers
/// become fresh ids via `register`. Tracks unseen longer than `timeout`
/// are retired first.
pub fn associate_person_tracks<F>(
    state: &mut TrackState,
    detections: &[[f64; 3]],
    t: f64,
    gate: f64,
    timeout: f64,
    mut register: F,
) -> Vec<(InstanceId, [f64; 3])>
where
    F: FnMut() -> InstanceId,
{
    assert!(gate > 0.0);
    state.tracks.retain(|_, (_, last_seen)| t - *last_seen <= timeout);

    let track_ids: Vec<InstanceId> = state.tracks.keys().copied().collect();
    let mut candidates: Vec<(f64, InstanceId, usize)> = Vec::new();
    for id in &track_ids {
        let (centroid, _) = state.tracks[id];
        for (di, det) in detections.iter().enumerate() {
            let d = dist(centroid, *det);
            if d <= gate {
                candidates.push((d, *id, di));
            }
        }
    }
    // ascending (distance, track ordinal, detection index)
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite distances")
            .then(a.1.ordinal.cmp(&b.1.ordinal))
            .then(a.2.cmp(&b.2))
    });

    let mut track_taken: std::collections::HashSet<InstanceId> = std::collections::HashSet::new();
    let mut det_assigned: Vec<Option<InstanceId>> = vec![None; detections.len()];
    for (_, id, di) in candidates {
        if det_assigned[di].is_some() || track_taken.contains(&id) {
            continue;
        }
        track_taken.insert(id);
        det_assigned[di] = Some(id);
    }

    let mut out = Vec::with_capacity(detections.len());
    for (di, det) in detections.iter().enumerate() {
        let id = match det_assigned[di] {
            Some(id) => id,
            None => register(),
        };
        state.tracks.insert(id, (*det, t));
        out.push((id, *det));
    }
    out
}
