//! Triangle meshes: procedural primitives and Wavefront-style text I/O.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("face {face} references vertex {vertex} but the mesh has {count} vertices")]
    BadFace { face: usize, vertex: usize, count: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mesh = TriMesh { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let count = self.vertices.len();
        for (face, f) in self.faces.iter().enumerate() {
            if let Some(&vertex) = f.iter().find(|&&v| v >= count) {
                return Err(MeshError::BadFace { face, vertex, count });
            }
        }
        Ok(())
    }

    /// Axis-aligned box centered at the origin, each face split into an `n × n` grid.
    /// Faces wind counter-clockwise seen from outside.
    pub fn subdivided_box(half_extents: Vector3<f64>, n: usize) -> Self {
        let n = n.max(1);
        let mut index: HashMap<[i64; 3], usize> = HashMap::new();
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        // Integer lattice keys keep shared edge vertices welded.
        let mut vid = |key: [i64; 3]| -> usize {
            *index.entry(key).or_insert_with(|| {
                let p = Vector3::new(
                    half_extents.x * (2.0 * key[0] as f64 / n as f64 - 1.0),
                    half_extents.y * (2.0 * key[1] as f64 / n as f64 - 1.0),
                    half_extents.z * (2.0 * key[2] as f64 / n as f64 - 1.0),
                );
                vertices.push(p);
                vertices.len() - 1
            })
        };
        let ni = n as i64;
        for axis in 0..3 {
            for side in [0i64, ni] {
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                for a in 0..ni {
                    for b in 0..ni {
                        let key = |da: i64, db: i64| {
                            let mut k = [0i64; 3];
                            k[axis] = side;
                            k[u] = a + da;
                            k[v] = b + db;
                            k
                        };
                        let (p00, p10, p11, p01) = (vid(key(0, 0)), vid(key(1, 0)), vid(key(1, 1)), vid(key(0, 1)));
                        if side == ni {
                            faces.push([p00, p10, p11]);
                            faces.push([p00, p11, p01]);
                        } else {
                            faces.push([p00, p11, p10]);
                            faces.push([p00, p01, p11]);
                        }
                    }
                }
            }
        }
        TriMesh { vertices, faces }
    }

    /// Icosphere of the given radius after `levels` rounds of subdivision.
    pub fn icosphere(radius: f64, levels: usize) -> Self {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Vector3<f64>> = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ]
        .iter()
        .map(|v| Vector3::from(*v).normalize())
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..levels {
            let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
                let key = (a.min(b), a.max(b));
                *mid.entry(key).or_insert_with(|| {
                    verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                    verts.len() - 1
                })
            };
            for [a, b, c] in faces {
                let ab = midpoint(a, b, &mut vertices);
                let bc = midpoint(b, c, &mut vertices);
                let ca = midpoint(c, a, &mut vertices);
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        for v in &mut vertices {
            *v *= radius;
        }
        TriMesh { vertices, faces }
    }

    pub fn to_obj_string(&self) -> String {
        let mut s = String::from("# format-version 1\n");
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.17e} {:.17e} {:.17e}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    /// Reads `v` and `f` lines; other records are ignored. Polygons are fan-triangulated.
    pub fn from_obj_str(text: &str) -> Result<Self, MeshError> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|t| t.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| MeshError::Parse { line: line_no, reason: e.to_string() })?;
                    if c.len() != 3 {
                        return Err(MeshError::Parse { line: line_no, reason: "vertex needs 3 coordinates".into() });
                    }
                    vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|t| {
                            let first = t.split('/').next().unwrap_or("");
                            first.parse::<usize>().ok().filter(|&v| v >= 1).map(|v| v - 1)
                        })
                        .collect::<Option<_>>()
                        .ok_or_else(|| MeshError::Parse { line: line_no, reason: "bad face index".into() })?;
                    if idx.len() < 3 {
                        return Err(MeshError::Parse { line: line_no, reason: "face needs at least 3 vertices".into() });
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        TriMesh::new(vertices, faces)
    }

    pub fn read_obj(path: &Path) -> Result<Self, MeshError> {
        Self::from_obj_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_obj(&self, path: &Path) -> Result<(), MeshError> {
        std::fs::write(path, self.to_obj_string())?;
        Ok(())
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len().max(1) as f64
    }

    /// Outward face normal (unnormalized cross product).
    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[f];
        (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]))
    }
}
