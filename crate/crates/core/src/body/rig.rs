//! Skeleton rig, pose parameters, and forward kinematics.

use crate::body::shape::ShapeParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BONE_COUNT: usize = 12;

pub const BONE_NAMES: [&str; BONE_COUNT] = [
    "pelvis",
    "spine",
    "chest",
    "head",
    "upper_arm_l",
    "forearm_l",
    "upper_arm_r",
    "forearm_r",
    "thigh_l",
    "shin_l",
    "thigh_r",
    "shin_r",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bone {
    /// Parent bone index; -1 for the single root. Parents always precede
    /// children (forward-kinematic order).
    pub parent: i32,
    pub rest_head: [f32; 3],
    pub rest_tail: [f32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonRig {
    pub bones: Vec<Bone>,
}

#[derive(Debug, thiserror::Error)]
pub enum RigError {
    #[error("bone {0}: parent {1} does not precede it")]
    BadParentOrder(usize, i32),
    #[error("rig must have exactly one root, found {0}")]
    BadRootCount(usize),
}

impl SkeletonRig {
    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn validate(&self) -> Result<(), RigError> {
        let mut roots = 0usize;
        for (i, b) in self.bones.iter().enumerate() {
            if b.parent < 0 {
                roots += 1;
            } else if b.parent as usize >= i {
                return Err(RigError::BadParentOrder(i, b.parent));
            }
        }
        if roots != 1 {
            return Err(RigError::BadRootCount(roots));
        }
        Ok(())
    }
}

/// Baseline 12-bone humanoid rig for a given body shape.
///
/// Rest pose is a T-pose facing +Z, arms along +/-X, approximately 1.7 units
/// tall and centered near the origin.
pub fn skeleton_rig(shape: &ShapeParams) -> SkeletonRig {
    let f = shape.factors();
    let (h, arm, leg, torso, shoulder) = (f.height, f.arm_len, f.leg_len, f.torso_len, f.shoulder_w);
    let b = |parent: i32, head: [f32; 3], tail: [f32; 3]| Bone {
        parent,
        rest_head: head,
        rest_tail: tail,
    };
    let sh_y = 0.38 * torso * h; // shoulder height
    let sh_x = 0.10 * shoulder;
    let arm_seg = 0.24 * arm * h;
    let hip_y = -0.05 * h;
    let hip_x = 0.09 * shoulder;
    let thigh = 0.40 * leg * h;
    let shin = 0.38 * leg * h;
    let bones = vec![
        // pelvis (root)
        b(-1, [0.0, -0.05 * h, 0.0], [0.0, 0.05 * h, 0.0]),
        // spine -> chest -> head
        b(0, [0.0, 0.05 * h, 0.0], [0.0, 0.22 * torso * h, 0.0]),
        b(1, [0.0, 0.22 * torso * h, 0.0], [0.0, sh_y + 0.04 * h, 0.0]),
        b(2, [0.0, sh_y + 0.06 * h, 0.0], [0.0, sh_y + 0.30 * h * f.head, 0.0]),
        // left arm
        b(2, [sh_x, sh_y, 0.0], [sh_x + arm_seg, sh_y, 0.0]),
        b(4, [sh_x + arm_seg, sh_y, 0.0], [sh_x + 2.0 * arm_seg, sh_y, 0.0]),
        // right arm
        b(2, [-sh_x, sh_y, 0.0], [-(sh_x + arm_seg), sh_y, 0.0]),
        b(6, [-(sh_x + arm_seg), sh_y, 0.0], [-(sh_x + 2.0 * arm_seg), sh_y, 0.0]),
        // left leg
        b(0, [hip_x, hip_y, 0.0], [hip_x, hip_y - thigh, 0.0]),
        b(8, [hip_x, hip_y - thigh, 0.0], [hip_x, hip_y - thigh - shin, 0.0]),
        // right leg
        b(0, [-hip_x, hip_y, 0.0], [-hip_x, hip_y - thigh, 0.0]),
        b(10, [-hip_x, hip_y - thigh, 0.0], [-hip_x, hip_y - thigh - shin, 0.0]),
    ];
    SkeletonRig { bones }
}

/// Per-bone axis-angle rotations (radians) relative to rest, plus a root
/// translation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseParams {
    pub joint_rotations: Vec<[f32; 3]>,
    pub root_translation: [f32; 3],
}

impl PoseParams {
    pub fn identity(bone_count: usize) -> Self {
        PoseParams {
            joint_rotations: vec![[0.0; 3]; bone_count],
            root_translation: [0.0; 3],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.root_translation == [0.0; 3]
            && self.joint_rotations.iter().all(|r| *r == [0.0; 3])
    }

    pub fn flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.joint_rotations.len() * 3 + 3);
        for r in &self.joint_rotations {
            out.extend_from_slice(r);
        }
        out.extend_from_slice(&self.root_translation);
        out
    }

    pub fn from_flat(vals: &[f32]) -> Self {
        assert!(vals.len() >= 3 && (vals.len() - 3) % 3 == 0);
        let n = (vals.len() - 3) / 3;
        PoseParams {
            joint_rotations: (0..n).map(|i| [vals[3 * i], vals[3 * i + 1], vals[3 * i + 2]]).collect(),
            root_translation: [vals[3 * n], vals[3 * n + 1], vals[3 * n + 2]],
        }
    }
}

/// Per-bone per-axis rotation limits (radians) plus the root translation
/// bound. Forearm twist is deliberately generous: extreme twists are what
/// make plain skinning exhibit its characteristic pinch.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLimits {
    pub rotation: Vec<[f32; 3]>,
    pub translation: [f32; 3],
}

impl JointLimits {
    pub fn default_table() -> Self {
        JointLimits {
            rotation: vec![
                [0.15, 0.30, 0.15], // pelvis
                [0.25, 0.25, 0.15], // spine
                [0.25, 0.25, 0.15], // chest
                [0.40, 0.60, 0.25], // head
                [1.00, 0.80, 1.10], // upper_arm_l
                [2.60, 1.00, 0.30], // forearm_l (twist about the bone axis)
                [1.00, 0.80, 1.10], // upper_arm_r
                [2.60, 1.00, 0.30], // forearm_r
                [0.80, 0.30, 0.40], // thigh_l
                [1.20, 0.15, 0.10], // shin_l
                [0.80, 0.30, 0.40], // thigh_r
                [1.20, 0.15, 0.10], // shin_r
            ],
            translation: [0.05, 0.05, 0.05],
        }
    }

    pub fn zero(bone_count: usize) -> Self {
        JointLimits {
            rotation: vec![[0.0; 3]; bone_count],
            translation: [0.0; 3],
        }
    }
}

/// Uniform pose draw within the joint-limit table, deterministic per seed.
pub fn sample_pose(limits: &JointLimits, seed: u64) -> PoseParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let joint_rotations = limits
        .rotation
        .iter()
        .map(|lim| {
            let mut r = [0.0f32; 3];
            for (k, v) in r.iter_mut().enumerate() {
                if lim[k] > 0.0 {
                    *v = rng.gen_range(-lim[k]..lim[k]);
                }
            }
            r
        })
        .collect();
    let mut root_translation = [0.0f32; 3];
    for (k, v) in root_translation.iter_mut().enumerate() {
        if limits.translation[k] > 0.0 {
            *v = rng.gen_range(-limits.translation[k]..limits.translation[k]);
        }
    }
    PoseParams {
        joint_rotations,
        root_translation,
    }
}

/// Maxed-out forearm twist; the pose used to demonstrate skinning distortion.
pub fn extreme_twist_pose(limits: &JointLimits, bone_count: usize) -> PoseParams {
    let mut pose = PoseParams::identity(bone_count);
    if bone_count > 7 {
        pose.joint_rotations[5] = [limits.rotation[5][0], 0.0, 0.0];
        pose.joint_rotations[7] = [-limits.rotation[7][0], 0.0, 0.0];
    }
    pose
}

pub fn axis_angle_to_rot(aa: [f64; 3]) -> [[f64; 3]; 3] {
    let angle = (aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]).sqrt();
    if angle < 1e-12 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let (x, y, z) = (aa[0] / angle, aa[1] / angle, aa[2] / angle);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Global bone transforms (rotation, translation) from forward kinematics,
/// composed with the inverse rest transform: x' = R_j x + t_j deforms a
/// rest-space point rigidly bound to bone j.
pub fn bone_transforms(rig: &SkeletonRig, pose: &PoseParams) -> Vec<([[f64; 3]; 3], [f64; 3])> {
    assert_eq!(pose.joint_rotations.len(), rig.bones.len());
    // global pose transforms G_j acting on bone-local coordinates
    let mut globals: Vec<([[f64; 3]; 3], [f64; 3])> = Vec::with_capacity(rig.bones.len());
    for (j, bone) in rig.bones.iter().enumerate() {
        let local_rot = axis_angle_to_rot([
            pose.joint_rotations[j][0] as f64,
            pose.joint_rotations[j][1] as f64,
            pose.joint_rotations[j][2] as f64,
        ]);
        let head = [
            bone.rest_head[0] as f64,
            bone.rest_head[1] as f64,
            bone.rest_head[2] as f64,
        ];
        if bone.parent < 0 {
            let t = [
                head[0] + pose.root_translation[0] as f64,
                head[1] + pose.root_translation[1] as f64,
                head[2] + pose.root_translation[2] as f64,
            ];
            globals.push((local_rot, t));
        } else {
            let (pr, pt) = globals[bone.parent as usize];
            let parent_head = rig.bones[bone.parent as usize].rest_head;
            let offset = [
                head[0] - parent_head[0] as f64,
                head[1] - parent_head[1] as f64,
                head[2] - parent_head[2] as f64,
            ];
            // pivot position = G_parent applied to the rest offset
            let t = [
                pr[0][0] * offset[0] + pr[0][1] * offset[1] + pr[0][2] * offset[2] + pt[0],
                pr[1][0] * offset[0] + pr[1][1] * offset[1] + pr[1][2] * offset[2] + pt[1],
                pr[2][0] * offset[0] + pr[2][1] * offset[1] + pr[2][2] * offset[2] + pt[2],
            ];
            let rot = mat_mul(&pr, &local_rot);
            globals.push((rot, t));
        }
    }
    // compose with inverse rest transform T(-head): x' = G_j (x - head_j)
    globals
        .iter()
        .zip(&rig.bones)
        .map(|((rot, t), bone)| {
            let head = [
                bone.rest_head[0] as f64,
                bone.rest_head[1] as f64,
                bone.rest_head[2] as f64,
            ];
            let trans = [
                t[0] - (rot[0][0] * head[0] + rot[0][1] * head[1] + rot[0][2] * head[2]),
                t[1] - (rot[1][0] * head[0] + rot[1][1] * head[1] + rot[1][2] * head[2]),
                t[2] - (rot[2][0] * head[0] + rot[2][1] * head[1] + rot[2][2] * head[2]),
            ];
            (*rot, trans)
        })
        .collect()
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rig_is_valid() {
        let rig = skeleton_rig(&ShapeParams::zero());
        rig.validate().unwrap();
        assert_eq!(rig.bone_count(), BONE_COUNT);
    }

    #[test]
    fn identity_pose_transforms_are_identity() {
        let rig = skeleton_rig(&ShapeParams::zero());
        let pose = PoseParams::identity(rig.bone_count());
        for (rot, t) in bone_transforms(&rig, &pose) {
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((rot[i][j] - want).abs() < 1e-12);
                }
                assert!(t[i].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pose_sampling_is_deterministic_and_bounded() {
        let limits = JointLimits::default_table();
        let a = sample_pose(&limits, 42);
        let b = sample_pose(&limits, 42);
        assert_eq!(a, b);
        for seed in 0..1000u64 {
            let p = sample_pose(&limits, seed);
            for (r, lim) in p.joint_rotations.iter().zip(&limits.rotation) {
                for k in 0..3 {
                    assert!(r[k].abs() <= lim[k] + 1e-7);
                }
            }
            for k in 0..3 {
                assert!(p.root_translation[k].abs() <= limits.translation[k] + 1e-7);
            }
        }
    }

    #[test]
    fn zero_limits_give_identity_pose() {
        let limits = JointLimits::zero(BONE_COUNT);
        let p = sample_pose(&limits, 123);
        assert!(p.is_identity());
    }

    #[test]
    fn pose_flat_round_trip() {
        let limits = JointLimits::default_table();
        let p = sample_pose(&limits, 9);
        assert_eq!(PoseParams::from_flat(&p.flat()), p);
    }
}
