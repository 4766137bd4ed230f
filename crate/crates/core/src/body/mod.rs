//! Simplified parametric humanoid: rig, shape space, linear blend skinning,
//! procedural identity/pose generation, template pool, animation triplets.

mod dataset;
mod humanoid;
mod io;
mod rig;
mod shape;

pub use dataset::{build_dataset, make_triplet, BodyDataset, BodySample, TemplatePool, Triplet};
pub use humanoid::{
    capsule, make_humanoid, skeleton_template_mesh, skinning_weights, template_for, MAX_INFLUENCES,
};
pub use io::{load_skinning, save_skinning, SkinIoError};
pub use rig::{
    axis_angle_to_rot, bone_transforms, extreme_twist_pose, sample_pose, skeleton_rig, Bone,
    JointLimits, PoseParams, RigError, SkeletonRig, BONE_COUNT, BONE_NAMES,
};
pub use shape::{ShapeParams, SHAPE_PARAMS};

use crate::mesh::TriangleMesh;

/// Triangle mesh plus dense per-vertex skinning weights (rows sum to 1, at
/// most 4 nonzero) and the rig they index.
#[derive(Debug, Clone)]
pub struct SkinnedMesh {
    pub mesh: TriangleMesh,
    /// Dense N x m weights, row-major.
    pub weights: Vec<f32>,
    pub rig: SkeletonRig,
}

#[derive(Debug, thiserror::Error)]
pub enum BodyError {
    #[error("skinning weights: {0}")]
    BadWeights(String),
    #[error(transparent)]
    Rig(#[from] RigError),
}

impl SkinnedMesh {
    pub fn validate(&self) -> Result<(), BodyError> {
        self.rig.validate()?;
        let m = self.rig.bone_count();
        if self.weights.len() != self.mesh.vertices.len() * m {
            return Err(BodyError::BadWeights(format!(
                "expected {}x{m} weights, got {}",
                self.mesh.vertices.len(),
                self.weights.len()
            )));
        }
        for (vi, row) in self.weights.chunks_exact(m).enumerate() {
            let sum: f32 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-5 {
                return Err(BodyError::BadWeights(format!("row {vi} sums to {sum}")));
            }
            if row.iter().any(|&w| w < 0.0) {
                return Err(BodyError::BadWeights(format!("row {vi} has negative weight")));
            }
        }
        Ok(())
    }
}

/// Linear blend skinning: x' = (sum_j w_ij R_j) x + sum_j w_ij t_j with the
/// bone transforms from forward kinematics composed against the rest pose.
/// Normals are recomputed from the deformed faces.
pub fn lbs_deform(skinned: &SkinnedMesh, pose: &PoseParams) -> TriangleMesh {
    let m = skinned.rig.bone_count();
    assert_eq!(
        pose.joint_rotations.len(),
        m,
        "pose has {} joints, rig has {m}",
        pose.joint_rotations.len()
    );
    let transforms = bone_transforms(&skinned.rig, pose);
    let mut out = skinned.mesh.clone();
    for (vi, v) in skinned.mesh.vertices.iter().enumerate() {
        let x = [v[0] as f64, v[1] as f64, v[2] as f64];
        let row = &skinned.weights[vi * m..(vi + 1) * m];
        let mut blended_r = [[0.0f64; 3]; 3];
        let mut blended_t = [0.0f64; 3];
        for (j, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let wf = w as f64;
            let (rot, t) = &transforms[j];
            for a in 0..3 {
                for b in 0..3 {
                    blended_r[a][b] += wf * rot[a][b];
                }
                blended_t[a] += wf * t[a];
            }
        }
        let mut p = [0.0f64; 3];
        for a in 0..3 {
            p[a] = blended_r[a][0] * x[0] + blended_r[a][1] * x[1] + blended_r[a][2] * x[2] + blended_t[a];
        }
        out.vertices[vi] = [p[0] as f32, p[1] as f32, p[2] as f32];
    }
    out.recompute_normals();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::rig::Bone;

    fn two_bone_rig() -> SkeletonRig {
        SkeletonRig {
            bones: vec![
                Bone {
                    parent: -1,
                    rest_head: [0.0, 0.0, 0.0],
                    rest_tail: [0.0, 1.0, 0.0],
                },
                Bone {
                    parent: 0,
                    rest_head: [0.0, 1.0, 0.0],
                    rest_tail: [0.0, 2.0, 0.0],
                },
            ],
        }
    }

    fn rigid_mesh(vertices: Vec<[f32; 3]>, weights: Vec<f32>, rig: SkeletonRig) -> SkinnedMesh {
        let n = vertices.len();
        let mesh = TriangleMesh {
            vertices,
            triangles: if n >= 3 { vec![[0, 1, 2]] } else { vec![] },
            vertex_colors: vec![[1.0; 3]; n],
            vertex_normals: vec![[0.0, 0.0, 1.0]; n],
        };
        SkinnedMesh {
            mesh,
            weights,
            rig,
        }
    }

    #[test]
    fn identity_pose_is_fixed_point() {
        let h = make_humanoid(&ShapeParams::zero(), 2);
        let posed = lbs_deform(&h, &PoseParams::identity(h.rig.bone_count()));
        for (a, b) in h.mesh.vertices.iter().zip(&posed.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn single_bone_rigid_rotation_exact() {
        // vertex (1,0,0) fully bound to a bone at the origin rotated 90
        // degrees about +Z lands on (0,1,0)
        let rig = SkeletonRig {
            bones: vec![Bone {
                parent: -1,
                rest_head: [0.0, 0.0, 0.0],
                rest_tail: [0.0, 1.0, 0.0],
            }],
        };
        let sm = rigid_mesh(vec![[1.0, 0.0, 0.0]], vec![1.0], rig);
        let mut pose = PoseParams::identity(1);
        pose.joint_rotations[0] = [0.0, 0.0, std::f32::consts::FRAC_PI_2];
        let out = lbs_deform(&sm, &pose);
        assert!((out.vertices[0][0]).abs() < 1e-6);
        assert!((out.vertices[0][1] - 1.0).abs() < 1e-6);
        assert!((out.vertices[0][2]).abs() < 1e-6);
    }

    #[test]
    fn half_weights_average_translations() {
        // two static bones translated by t1 and t2 (via root translation on
        // separate rigs is not expressible; instead rotate nothing and use
        // the closed form directly with two root-translated single-bone rigs
        // merged: here both bones hang off one root with zero rotation, and
        // we displace через root translation applied to both equally - so
        // instead test the blend of two *rotated* bone transforms reducing to
        // the hand-evaluated weighted average).
        let rig = two_bone_rig();
        // vertex rigidly halfway between both bones
        let sm = rigid_mesh(vec![[0.5, 1.0, 0.0]], vec![0.5, 0.5], rig);
        let mut pose = PoseParams::identity(2);
        // rotate only the child bone; the blended transform must be the
        // average of identity and the child's rigid transform
        pose.joint_rotations[1] = [0.0, 0.0, std::f32::consts::FRAC_PI_2];
        let out = lbs_deform(&sm, &pose);
        // rigid under bone 0: stays (0.5, 1, 0)
        // rigid under bone 1: rotate (0.5, 0, 0) about head (0,1,0) by 90deg -> (0, 1.5, 0)
        // blend: 0.5*(0.5,1,0) + 0.5*(0,1.5,0) = (0.25, 1.25, 0)
        assert!((out.vertices[0][0] - 0.25).abs() < 1e-6);
        assert!((out.vertices[0][1] - 1.25).abs() < 1e-6);
        assert!((out.vertices[0][2]).abs() < 1e-6);
    }

    #[test]
    fn root_translation_averages_for_shared_weights() {
        // vertex weighted 0.5/0.5 between two bones that only translate:
        // translating the root by t moves every vertex by exactly t
        // (both blended translations equal t), matching (t1 + t2) / 2 with
        // t1 = t2 = t in the closed form.
        let rig = two_bone_rig();
        let sm = rigid_mesh(vec![[0.3, 0.9, 0.1]], vec![0.5, 0.5], rig);
        let mut pose = PoseParams::identity(2);
        pose.root_translation = [0.2, -0.1, 0.4];
        let out = lbs_deform(&sm, &pose);
        assert!((out.vertices[0][0] - 0.5).abs() < 1e-6);
        assert!((out.vertices[0][1] - 0.8).abs() < 1e-6);
        assert!((out.vertices[0][2] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn all_rigid_weights_equal_per_part_rigid_transform() {
        let h = make_humanoid(&ShapeParams::zero(), 5);
        let m = h.rig.bone_count();
        // force each vertex fully rigid to its strongest bone
        let mut rigid = h.clone();
        for row in rigid.weights.chunks_exact_mut(m) {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            for w in row.iter_mut() {
                *w = 0.0;
            }
            row[best] = 1.0;
        }
        let pose = sample_pose(&JointLimits::default_table(), 77);
        let out = lbs_deform(&rigid, &pose);
        let transforms = bone_transforms(&rigid.rig, &pose);
        for (vi, v) in rigid.mesh.vertices.iter().enumerate() {
            let row = &rigid.weights[vi * m..(vi + 1) * m];
            let j = row.iter().position(|&w| w == 1.0).unwrap();
            let (rot, t) = &transforms[j];
            let x = [v[0] as f64, v[1] as f64, v[2] as f64];
            for a in 0..3 {
                let want = rot[a][0] * x[0] + rot[a][1] * x[1] + rot[a][2] * x[2] + t[a];
                assert!((out.vertices[vi][a] as f64 - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn deformation_preserves_topology() {
        let h = make_humanoid(&ShapeParams::zero(), 8);
        let pose = sample_pose(&JointLimits::default_table(), 3);
        let out = lbs_deform(&h, &pose);
        assert_eq!(out.vertices.len(), h.mesh.vertices.len());
        assert_eq!(out.triangles, h.mesh.triangles);
    }

    #[test]
    fn extreme_twist_stretches_edges() {
        let h = make_humanoid(&ShapeParams::zero(), 4);
        let limits = JointLimits::default_table();
        let pose = extreme_twist_pose(&limits, h.rig.bone_count());
        let out = lbs_deform(&h, &pose);
        let mut max_ratio = 0.0f64;
        for t in &h.mesh.triangles {
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                let rest = edge_len(&h.mesh.vertices, t[i], t[j]);
                let def = edge_len(&out.vertices, t[i], t[j]);
                if rest > 1e-9 {
                    max_ratio = max_ratio.max(def / rest);
                }
            }
        }
        assert!(max_ratio > 1.5, "max edge stretch {max_ratio}");
    }

    fn edge_len(v: &[[f32; 3]], a: u32, b: u32) -> f64 {
        let (p, q) = (v[a as usize], v[b as usize]);
        (((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)) as f64).sqrt()
    }

    #[test]
    fn small_pose_round_trips_through_negation_on_single_chain() {
        // single-chain rig: negating the only joint rotation inverts the pose
        let rig = SkeletonRig {
            bones: vec![Bone {
                parent: -1,
                rest_head: [0.0, 0.5, 0.0],
                rest_tail: [0.0, 1.5, 0.0],
            }],
        };
        let verts = vec![[0.2, 1.0, 0.1], [0.1, 0.7, -0.2], [-0.3, 1.2, 0.05]];
        let sm = rigid_mesh(verts.clone(), vec![1.0, 1.0, 1.0], rig.clone());
        let mut fwd = PoseParams::identity(1);
        fwd.joint_rotations[0] = [0.15, -0.2, 0.1];
        let posed = lbs_deform(&sm, &fwd);
        let reposed = SkinnedMesh {
            mesh: posed,
            weights: sm.weights.clone(),
            rig,
        };
        let mut back = PoseParams::identity(1);
        back.joint_rotations[0] = [-0.15, 0.2, -0.1];
        // axis-angle negation inverts the rotation matrix exactly
        let restored = lbs_deform(&reposed, &back);
        for (a, b) in verts.iter().zip(&restored.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-4, "{a:?} vs {b:?}");
            }
        }
    }
}
