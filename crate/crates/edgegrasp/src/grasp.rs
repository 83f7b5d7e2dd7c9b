//! Gripper pose construction from (approach point, contact point, contact
//! normal) triples, plus geometric filters and grasp-record serialization.
//!
//! Frame convention for a grasp rotation `R` (columns, right-handed):
//! `x̂` = closing direction (the contact normal), `ẑ` = approach direction,
//! `ŷ = ẑ × x̂`. The gripper centre `C` sits behind the approach point:
//! `C = p_a − δ·ẑ` with `δ = G_d + (p_a − p_c)ᵀ·ẑ`.

use nalgebra::{Isometry3, Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parallel-jaw gripper dimensions (meters).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct GripperSpec {
    /// Finger-to-finger open width `G_w`.
    pub aperture: f64,
    /// Palm-to-fingertip length along the approach axis `G_d`.
    pub depth: f64,
    /// Finger cross-section (both lateral directions).
    pub finger_thickness: f64,
    /// Palm half-extent along the closing axis.
    pub palm_halfwidth: f64,
}

impl Default for GripperSpec {
    fn default() -> Self {
        GripperSpec {
            aperture: 0.08,
            depth: 0.05,
            finger_thickness: 0.01,
            palm_halfwidth: 0.05,
        }
    }
}

impl GripperSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("aperture", self.aperture),
            ("depth", self.depth),
            ("finger_thickness", self.finger_thickness),
            ("palm_halfwidth", self.palm_halfwidth),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "gripper {name} must be > 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Half the aperture: the contact-candidate crop radius.
    pub fn half_aperture(&self) -> f64 {
        self.aperture / 2.0
    }

    /// The two open fingers and the palm as oriented boxes in the grasp
    /// frame placed at (`rotation`, `center`).
    ///
    /// In gripper-local coordinates the palm face is the plane z = 0 through
    /// the centre; fingers span z ∈ [0, G_d] with inner faces at
    /// x = ±G_w/2, and the palm body sits behind the palm face.
    pub fn body_boxes(&self, rotation: &Rotation3<f64>, center: &Vector3<f64>) -> [Obb; 3] {
        let ft = self.finger_thickness;
        let finger_half = Vector3::new(ft / 2.0, ft / 2.0, self.depth / 2.0);
        let finger_x = self.aperture / 2.0 + ft / 2.0;
        let palm_half = Vector3::new(self.palm_halfwidth, ft / 2.0, ft / 2.0);
        let place = |local_center: Vector3<f64>, half: Vector3<f64>| Obb {
            half,
            rotation: *rotation,
            center: center + rotation * local_center,
        };
        [
            place(Vector3::new(finger_x, 0.0, self.depth / 2.0), finger_half),
            place(Vector3::new(-finger_x, 0.0, self.depth / 2.0), finger_half),
            place(Vector3::new(0.0, 0.0, -ft / 2.0), palm_half),
        ]
    }
}

/// An oriented box: rotation and centre in world coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Obb {
    pub half: Vector3<f64>,
    pub rotation: Rotation3<f64>,
    pub center: Vector3<f64>,
}

impl Obb {
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let mut out = [Vector3::zeros(); 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let s = Vector3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *corner = self.center + self.rotation * s.component_mul(&self.half);
        }
        out
    }

    pub fn min_z(&self) -> f64 {
        self.corners()
            .iter()
            .map(|c| c.z)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Why a candidate (approach, contact) pair did not form a grasp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameRejection {
    /// `p_a − p_c` is parallel to the contact normal; the approach direction
    /// is undefined.
    DegenerateDirection,
    /// The contact lies farther than half the gripper aperture from the
    /// approach point.
    ApertureExceeded,
    /// The contact would sit outside the finger (δ ∉ [0, G_d]); applied at
    /// sampling time when enabled.
    DeltaOutOfRange,
}

/// A 6-DoF grasp defined by an approach point and a contact point.
#[derive(Debug, Clone)]
pub struct EdgeGrasp {
    pub approach_index: usize,
    pub contact_index: usize,
    pub approach_point: Vector3<f64>,
    pub contact_point: Vector3<f64>,
    pub contact_normal: Vector3<f64>,
    /// Unit approach direction (the rotation's z column).
    pub approach_dir: Vector3<f64>,
    /// Distance from the gripper centre to the approach point along the
    /// approach direction.
    pub delta: f64,
    pub center: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

impl EdgeGrasp {
    pub fn closing_dir(&self) -> Vector3<f64> {
        self.rotation.matrix().column(0).into_owned()
    }

    /// The grasp moved by a rigid transform.
    pub fn transformed(&self, iso: &Isometry3<f64>) -> EdgeGrasp {
        let rot = iso.rotation.to_rotation_matrix();
        EdgeGrasp {
            approach_index: self.approach_index,
            contact_index: self.contact_index,
            approach_point: iso * self.approach_point,
            contact_point: iso * self.contact_point,
            contact_normal: rot * self.contact_normal,
            approach_dir: rot * self.approach_dir,
            delta: self.delta,
            center: iso * self.center,
            rotation: rot * self.rotation,
        }
    }
}

/// A grasp with a predicted quality in [0, 1].
#[derive(Debug, Clone)]
pub struct GraspScorePose {
    pub grasp: EdgeGrasp,
    pub score: f64,
}

/// Build the grasp frame for an (approach, contact) pair.
///
/// The approach direction is `normalize(n_c × (n_c × (p_a − p_c)))` and is
/// orthogonal to the contact normal by construction. Rejects pairs whose
/// displacement is parallel to the normal or wider than half the aperture.
pub fn compute_edge_frame(
    approach_point: &Vector3<f64>,
    contact_point: &Vector3<f64>,
    contact_normal: &Vector3<f64>,
    gripper: &GripperSpec,
) -> std::result::Result<EdgeGrasp, FrameRejection> {
    let norm = contact_normal.norm();
    debug_assert!(
        (norm - 1.0).abs() < 1e-6,
        "contact normal must be unit length"
    );
    let n = contact_normal / norm;
    let v = approach_point - contact_point;
    if v.norm() > gripper.half_aperture() {
        return Err(FrameRejection::ApertureExceeded);
    }
    if n.cross(&v).norm() < 1e-8 {
        return Err(FrameRejection::DegenerateDirection);
    }
    let approach_dir = n.cross(&n.cross(&v)).normalize();
    let delta = gripper.depth + v.dot(&approach_dir);
    let center = approach_point - delta * approach_dir;
    let x = n;
    let z = approach_dir;
    let y = z.cross(&x);
    let rotation = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Ok(EdgeGrasp {
        approach_index: 0,
        contact_index: 0,
        approach_point: *approach_point,
        contact_point: *contact_point,
        contact_normal: n,
        approach_dir,
        delta,
        center,
        rotation,
    })
}

/// The same grasp built from the flipped contact normal: identical centre
/// and approach direction, gripper rotated 180° about the approach axis.
pub fn flip_normal_grasp(grasp: &EdgeGrasp, gripper: &GripperSpec) -> EdgeGrasp {
    let flipped = compute_edge_frame(
        &grasp.approach_point,
        &grasp.contact_point,
        &(-grasp.contact_normal),
        gripper,
    )
    .expect("flipping the normal preserves frame validity");
    EdgeGrasp {
        approach_index: grasp.approach_index,
        contact_index: grasp.contact_index,
        ..flipped
    }
}

/// Keep a grasp only if every corner of the posed gripper bodies clears the
/// table plane.
pub fn table_collision_filter(grasp: &EdgeGrasp, gripper: &GripperSpec, table_z: f64) -> bool {
    gripper
        .body_boxes(&grasp.rotation, &grasp.center)
        .iter()
        .all(|b| b.min_z() > table_z)
}

/// One grasp as written to JSON-lines output.
///
/// Rotation is a unit quaternion `[w, x, y, z]` normalised to `w ≥ 0`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraspRecord {
    pub center: [f64; 3],
    pub quat: [f64; 4],
    pub delta: f64,
    pub approach_index: usize,
    pub contact_index: usize,
    pub score: f64,
}

impl GraspRecord {
    pub fn from_pose(scored: &GraspScorePose) -> GraspRecord {
        let g = &scored.grasp;
        let q = UnitQuaternion::from_rotation_matrix(&g.rotation);
        let q = if q.w < 0.0 {
            UnitQuaternion::from_quaternion(-q.into_inner())
        } else {
            q
        };
        GraspRecord {
            center: [g.center.x, g.center.y, g.center.z],
            quat: [q.w, q.i, q.j, q.k],
            delta: g.delta,
            approach_index: g.approach_index,
            contact_index: g.contact_index,
            score: scored.score,
        }
    }

    pub fn center_vec(&self) -> Vector3<f64> {
        Vector3::new(self.center[0], self.center[1], self.center[2])
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            self.quat[0],
            self.quat[1],
            self.quat[2],
            self.quat[3],
        ))
        .to_rotation_matrix()
    }
}
