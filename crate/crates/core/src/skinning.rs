//! Skinning-weight transfer between meshes and linear blend skinning.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{forward_kinematics, GeometryError, Pose, Skeleton, Transform};
use crate::mesh::TriMesh;

#[derive(Debug, Error)]
pub enum SkinningError {
    #[error("source mesh has no vertices")]
    EmptySource,
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Mesh with per-vertex convex skinning weights and rest-frame offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinnedMesh {
    pub vertices: Vec<Vector3<f64>>,
    /// One row of `J` weights per vertex.
    pub weights: Vec<Vec<f64>>,
    pub offsets: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

pub const DEFAULT_NEIGHBORS: usize = 16;
pub const DEFAULT_SIGMA: f64 = 0.05;

impl SkinnedMesh {
    pub fn joint_count(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), SkinningError> {
        let n = self.vertices.len();
        if self.weights.len() != n || self.offsets.len() != n {
            return Err(SkinningError::ShapeMismatch("weights/offsets must have one row per vertex".into()));
        }
        let j = self.joint_count();
        for (i, w) in self.weights.iter().enumerate() {
            if w.len() != j {
                return Err(SkinningError::ShapeMismatch(format!("vertex {i} has {} weights, expected {j}", w.len())));
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&x| x < 0.0 || !x.is_finite()) || (sum - 1.0).abs() > 1e-6 {
                return Err(SkinningError::InvalidParameter(format!("vertex {i} weights are not convex")));
            }
        }
        TriMesh { vertices: self.vertices.clone(), faces: self.faces.clone() }
            .validate()
            .map_err(|e| SkinningError::ShapeMismatch(e.to_string()))
    }

    pub fn mesh(&self) -> TriMesh {
        TriMesh { vertices: self.vertices.clone(), faces: self.faces.clone() }
    }

    /// Sidecar text: `format-version 1`, `skin N J`, then per vertex `w_0 .. w_{J-1} ox oy oz`.
    pub fn sidecar_string(&self) -> String {
        let mut s = format!("format-version 1\nskin {} {}\n", self.vertices.len(), self.joint_count());
        for (w, o) in self.weights.iter().zip(&self.offsets) {
            for x in w {
                let _ = write!(s, "{x:.17e} ");
            }
            let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", o.x, o.y, o.z);
        }
        s
    }

    pub fn from_parts(mesh: TriMesh, sidecar: &str) -> Result<Self, SkinningError> {
        let mut lines = sidecar.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad = |line: usize, reason: &str| SkinningError::Parse { line: line + 1, reason: reason.into() };
        match lines.next() {
            Some((_, l)) if l.trim() == "format-version 1" => {}
            Some((i, _)) => return Err(bad(i, "expected `format-version 1`")),
            None => return Err(bad(0, "empty sidecar")),
        }
        let (hi, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 || h[0] != "skin" {
            return Err(bad(hi, "expected `skin N J`"));
        }
        let n: usize = h[1].parse().map_err(|_| bad(hi, "bad vertex count"))?;
        let j: usize = h[2].parse().map_err(|_| bad(hi, "bad joint count"))?;
        if n != mesh.vertices.len() {
            return Err(SkinningError::ShapeMismatch(format!("sidecar has {n} rows, mesh has {} vertices", mesh.vertices.len())));
        }
        let mut weights = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for _ in 0..n {
            let (li, line) = lines.next().ok_or_else(|| bad(0, "missing rows"))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| bad(li, "bad number"))?;
            if vals.len() != j + 3 {
                return Err(bad(li, "wrong column count"));
            }
            weights.push(vals[..j].to_vec());
            offsets.push(Vector3::new(vals[j], vals[j + 1], vals[j + 2]));
        }
        let out = SkinnedMesh { vertices: mesh.vertices, weights, offsets, faces: mesh.faces };
        out.validate()?;
        Ok(out)
    }

    pub fn write(&self, obj: &Path, sidecar: &Path) -> Result<(), SkinningError> {
        std::fs::write(obj, self.mesh().to_obj_string())?;
        std::fs::write(sidecar, self.sidecar_string())?;
        Ok(())
    }

    pub fn read(obj: &Path, sidecar: &Path) -> Result<Self, SkinningError> {
        let mesh = TriMesh::read_obj(obj).map_err(|e| SkinningError::Parse { line: 0, reason: e.to_string() })?;
        Self::from_parts(mesh, &std::fs::read_to_string(sidecar)?)
    }
}

/// Indices of the `k` nearest points (ties broken by lower index), nearest first.
fn k_nearest(p: &Vector3<f64>, set: &[Vector3<f64>], k: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = set.iter().enumerate().map(|(i, q)| (i, (p - q).norm_squared())).collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d
}

/// Blends source skinning data onto `target` with a softmax over Gaussian-kernel scores of the
/// `k` nearest source vertices. Output weights are renormalized to sum to one.
pub fn transfer_skinning(
    target: &TriMesh,
    source: &[Vector3<f64>],
    source_weights: &[Vec<f64>],
    source_offsets: &[Vector3<f64>],
    k: usize,
    sigma: f64,
) -> Result<SkinnedMesh, SkinningError> {
    if source.is_empty() {
        return Err(SkinningError::EmptySource);
    }
    if k == 0 || k > source.len() {
        return Err(SkinningError::InvalidParameter(format!("k = {k} must be in [1, {}]", source.len())));
    }
    if !(sigma > 0.0) {
        return Err(SkinningError::InvalidParameter(format!("sigma = {sigma} must be positive")));
    }
    if source_weights.len() != source.len() || source_offsets.len() != source.len() {
        return Err(SkinningError::ShapeMismatch("source weights/offsets must match source vertices".into()));
    }
    let j = source_weights[0].len();
    if source_weights.iter().any(|w| w.len() != j) {
        return Err(SkinningError::ShapeMismatch("ragged source weights".into()));
    }
    let finite = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
    if !target.vertices.iter().all(finite) {
        return Err(SkinningError::NonFiniteInput("target vertices"));
    }
    if !source.iter().all(finite) || !source_offsets.iter().all(finite) {
        return Err(SkinningError::NonFiniteInput("source vertices"));
    }
    if source_weights.iter().flatten().any(|x| !x.is_finite()) {
        return Err(SkinningError::NonFiniteInput("source weights"));
    }

    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut weights = Vec::with_capacity(target.vertices.len());
    let mut offsets = Vec::with_capacity(target.vertices.len());
    for x in &target.vertices {
        let nn = k_nearest(x, source, k);
        // nn is sorted, so the first score is the largest
        let s_max = -nn[0].1 * inv;
        let e: Vec<f64> = nn.iter().map(|&(_, d)| (-d * inv - s_max).exp()).collect();
        let z: f64 = e.iter().sum();
        let mut w = vec![0.0; j];
        let mut o = Vector3::zeros();
        for (&(idx, _), &ei) in nn.iter().zip(&e) {
            let a = ei / z;
            for (wj, sj) in w.iter_mut().zip(&source_weights[idx]) {
                *wj += a * sj;
            }
            o += source_offsets[idx] * a;
        }
        for wj in w.iter_mut() {
            *wj = wj.max(0.0);
        }
        let sum: f64 = w.iter().sum();
        if sum > 0.0 {
            w.iter_mut().for_each(|wj| *wj /= sum);
        }
        weights.push(w);
        offsets.push(o);
    }
    Ok(SkinnedMesh { vertices: target.vertices.clone(), weights, offsets, faces: target.faces.clone() })
}

/// Deforms `mesh` to `pose`: each vertex (plus its offset) is expressed in every joint's rest
/// frame, carried by that joint's posed transform, and blended by the skinning weights.
pub fn lbs_deform(mesh: &SkinnedMesh, skel: &Skeleton, pose: &Pose) -> Result<Vec<Vector3<f64>>, SkinningError> {
    let j = skel.joint_count();
    if mesh.joint_count() != j {
        return Err(SkinningError::ShapeMismatch(format!("mesh has {} weights per vertex, skeleton has {j} joints", mesh.joint_count())));
    }
    let rest = forward_kinematics(skel, &skel.rest_pose())?;
    let posed = forward_kinematics(skel, pose)?;
    let blend: Vec<Transform> = rest.iter().zip(&posed).map(|(r, p)| p.compose(&r.inverse())).collect();
    Ok(mesh
        .vertices
        .iter()
        .zip(&mesh.weights)
        .zip(&mesh.offsets)
        .map(|((x, w), o)| {
            let p = x + o;
            w.iter().zip(&blend).filter(|(wj, _)| **wj != 0.0).map(|(wj, t)| t.apply(&p) * *wj).sum()
        })
        .collect())
}

/// Tube mesh around every bone of `skel` in its rest pose, with weights from a Gaussian falloff
/// of the distance to each bone segment. Offsets are zero.
pub fn procedural_body(skel: &Skeleton, ring: usize, rings_per_bone: usize) -> SkinnedMesh {
    let rest = forward_kinematics(skel, &skel.rest_pose()).expect("rest pose matches skeleton");
    let pos: Vec<Vector3<f64>> = rest.iter().map(|t| t.position).collect();
    let bones: Vec<(usize, usize)> = (1..skel.joint_count()).map(|c| (skel.parent(c).unwrap(), c)).collect();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let ring = ring.max(3);
    let rings = rings_per_bone.max(2);
    for &(p, c) in &bones {
        let a = pos[p];
        let b = pos[c];
        let axis = b - a;
        let len = axis.norm();
        if len < 1e-9 {
            continue;
        }
        let dir = axis / len;
        let helper = if dir.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = dir.cross(&helper).normalize();
        let v = dir.cross(&u);
        let radius = match skel.joint(c).kind {
            crate::geometry::JointKind::Hand => 0.008,
            crate::geometry::JointKind::Body => 0.03,
        };
        let base = vertices.len();
        for r in 0..rings {
            let t = (r as f64 + 0.5) / rings as f64;
            for s in 0..ring {
                let ang = 2.0 * std::f64::consts::PI * s as f64 / ring as f64;
                vertices.push(a + axis * t + (u * ang.cos() + v * ang.sin()) * radius);
            }
        }
        for r in 0..rings - 1 {
            for s in 0..ring {
                let i0 = base + r * ring + s;
                let i1 = base + r * ring + (s + 1) % ring;
                let j0 = i0 + ring;
                let j1 = i1 + ring;
                faces.push([i0, i1, j1]);
                faces.push([i0, j1, j0]);
            }
        }
    }
    let falloff = 0.04f64;
    let weights = vertices
        .iter()
        .map(|x| {
            let mut w = vec![0.0; skel.joint_count()];
            for &(p, c) in &bones {
                let d = segment_distance(x, &pos[p], &pos[c]);
                w[p] += (-d * d / (2.0 * falloff * falloff)).exp();
            }
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            w
        })
        .collect();
    let offsets = vec![Vector3::zeros(); vertices.len()];
    SkinnedMesh { vertices, weights, offsets, faces }
}

fn segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared().max(1e-18)).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Axis, Rotation};
    use approx::assert_relative_eq;

    fn two_source() -> (Vec<Vector3<f64>>, Vec<Vec<f64>>, Vec<Vector3<f64>>) {
        (
            vec![Vector3::new(-1.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(5.0, 5.0, 5.0)],
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![Vector3::new(0.1, 0.0, 0.0), Vector3::new(0.3, 0.0, 0.0), Vector3::zeros()],
        )
    }

    #[test]
    fn single_neighbor_copies() {
        let (src, w, o) = two_source();
        let target = TriMesh { vertices: vec![Vector3::new(-0.9, 0.1, 0.0), Vector3::new(4.0, 5.0, 5.0)], faces: vec![] };
        let out = transfer_skinning(&target, &src, &w, &o, 1, 0.05).unwrap();
        assert_eq!(out.weights[0], w[0]);
        assert_eq!(out.weights[1], w[2]);
        assert_eq!(out.offsets[0], o[0]);
    }

    #[test]
    fn equidistant_pair_averages() {
        let (src, w, o) = two_source();
        let target = TriMesh { vertices: vec![Vector3::new(0.0, 0.3, 0.0)], faces: vec![] };
        let out = transfer_skinning(&target, &src, &w, &o, 2, 0.5).unwrap();
        assert_relative_eq!(out.weights[0][0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(out.weights[0][1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(out.offsets[0].x, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn transfer_errors() {
        let (src, w, o) = two_source();
        let target = TriMesh { vertices: vec![Vector3::zeros()], faces: vec![] };
        assert!(matches!(transfer_skinning(&target, &[], &[], &[], 1, 0.1), Err(SkinningError::EmptySource)));
        assert!(matches!(transfer_skinning(&target, &src, &w, &o, 0, 0.1), Err(SkinningError::InvalidParameter(_))));
        assert!(matches!(transfer_skinning(&target, &src, &w, &o, 4, 0.1), Err(SkinningError::InvalidParameter(_))));
        assert!(matches!(transfer_skinning(&target, &src, &w, &o, 1, 0.0), Err(SkinningError::InvalidParameter(_))));
        let nan = TriMesh { vertices: vec![Vector3::new(f64::NAN, 0.0, 0.0)], faces: vec![] };
        assert!(matches!(transfer_skinning(&nan, &src, &w, &o, 1, 0.1), Err(SkinningError::NonFiniteInput(_))));
    }

    #[test]
    fn lbs_rest_pose_is_identity() {
        let skel = Skeleton::desk();
        let mesh = procedural_body(&skel, 6, 3);
        mesh.validate().unwrap();
        let out = lbs_deform(&mesh, &skel, &skel.rest_pose()).unwrap();
        for (a, b) in out.iter().zip(&mesh.vertices) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn lbs_root_only_is_rigid() {
        let skel = Skeleton::desk();
        let mut mesh = procedural_body(&skel, 6, 2);
        for w in mesh.weights.iter_mut() {
            w.iter_mut().for_each(|x| *x = 0.0);
            w[0] = 1.0;
        }
        let mut pose = skel.rest_pose();
        let r = Rotation::from_axis_angle(&Vector3::new(0.2, -0.7, 0.4));
        pose.root_orientation = r;
        // bend a limb too: it must not matter when all weight sits on the root
        pose.local[7] = Rotation::about(Axis::X, 1.0);
        let out = lbs_deform(&mesh, &skel, &pose).unwrap();
        for (a, b) in out.iter().zip(&mesh.vertices) {
            assert_relative_eq!(*a, r.rotate(b), epsilon = 1e-12);
        }
    }

    #[test]
    fn lbs_shape_mismatch() {
        let skel = Skeleton::desk();
        let mesh = SkinnedMesh { vertices: vec![Vector3::zeros()], weights: vec![vec![1.0]], offsets: vec![Vector3::zeros()], faces: vec![] };
        assert!(matches!(lbs_deform(&mesh, &skel, &skel.rest_pose()), Err(SkinningError::ShapeMismatch(_))));
    }

    #[test]
    fn sidecar_roundtrip() {
        let skel = Skeleton::desk();
        let mesh = procedural_body(&skel, 4, 2);
        let back = SkinnedMesh::from_parts(mesh.mesh(), &mesh.sidecar_string()).unwrap();
        assert_eq!(back, mesh);
        assert!(SkinnedMesh::from_parts(mesh.mesh(), "format-version 1\nskin 1 2\n0.5 0.5 0 0 0\n").is_err());
    }
}
