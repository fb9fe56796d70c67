use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{BoundaryOrigin, ChartedDomain, Grid, ScalarField, Slot};

use super::{embed, slot_value};

/// Triangles with smaller area are dropped.
pub const MIN_TRIANGLE_AREA: f64 = 1e-14;

/// Triangulated surface in R³. Vertex normals point inward (⟨N, X⟩ < 0)
/// and faces are counterclockwise about them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

impl SurfaceMesh {
    /// Clips every lattice cell to the domain and fan-triangulates the
    /// resulting polygon. Boundary vertices lie on the unit sphere.
    pub fn build(u: &ScalarField, grid: &Grid, domain: &ChartedDomain) -> Result<SurfaceMesh> {
        if grid.dim() != 2 {
            return Err(Error::Domain(format!("mesh export needs dimension 2, got {}", grid.dim())));
        }
        if u.len() != grid.len() {
            return Err(Error::FieldLength { expected: grid.len(), got: u.len() });
        }
        // Crossing point of arm `arm` of node `i`, keyed by (node, arm).
        let mut crossings: HashMap<(usize, usize), usize> = HashMap::new();
        for (j, b) in grid.boundary().iter().enumerate() {
            if let BoundaryOrigin::Crossing { node, arm } = b.origin {
                crossings.insert((node, arm), j);
            }
        }
        let (mut lo, mut hi) = ([i64::MAX; 2], [i64::MIN; 2]);
        for n in grid.nodes() {
            for k in 0..2 {
                lo[k] = lo[k].min(n.index[k] - 1);
                hi[k] = hi[k].max(n.index[k] + 1);
            }
        }
        let mut mesh = SurfaceMesh::default();
        let mut vertex_of: HashMap<Slot, usize> = HashMap::new();
        let mut vertex = |mesh: &mut SurfaceMesh, slot: Slot| -> usize {
            *vertex_of.entry(slot).or_insert_with(|| {
                let x = embed(domain, grid.position(slot), slot_value(u, slot));
                mesh.vertices.push([x[0], x[1], x[2]]);
                mesh.vertices.len() - 1
            })
        };
        // Corner offsets counterclockwise, and the arm from one corner toward the next.
        const CORNERS: [[i64; 2]; 4] = [[0, 0], [1, 0], [1, 1], [0, 1]];
        const ARM_TO_NEXT: [usize; 4] = [0, 2, 1, 3];
        const ARM_TO_PREV: [usize; 4] = [2, 1, 3, 0];
        for i in lo[0]..hi[0] {
            for j in lo[1]..hi[1] {
                let slots: Vec<Option<Slot>> = CORNERS.iter().map(|c| grid.slot(&[i + c[0], j + c[1]])).collect();
                if slots.iter().all(Option::is_none) {
                    continue;
                }
                let mut poly: Vec<Slot> = Vec::new();
                for c in 0..4 {
                    let next = (c + 1) % 4;
                    if let Some(s) = slots[c] {
                        poly.push(s);
                        if slots[next].is_none() {
                            if let Slot::Unknown(node) = s {
                                if let Some(&b) = crossings.get(&(node, ARM_TO_NEXT[c])) {
                                    poly.push(Slot::Boundary(b));
                                }
                            }
                        }
                    } else if let Some(Slot::Unknown(node)) = slots[next] {
                        if let Some(&b) = crossings.get(&(node, ARM_TO_PREV[next])) {
                            poly.push(Slot::Boundary(b));
                        }
                    }
                }
                poly.dedup();
                if poly.len() > 1 && poly.first() == poly.last() {
                    poly.pop();
                }
                if poly.len() < 3 {
                    continue;
                }
                let ids: Vec<usize> = poly.iter().map(|&s| vertex(&mut mesh, s)).collect();
                for k in 1..ids.len() - 1 {
                    mesh.push_face([ids[0], ids[k], ids[k + 1]]);
                }
            }
        }
        mesh.compute_normals();
        Ok(mesh)
    }

    /// Area-weighted vertex normals from the (inward) face normals.
    fn compute_normals(&mut self) {
        let mut acc = vec![[0.0; 3]; self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i]);
            let n = cross(&sub(&b, &a), &sub(&c, &a));
            for &i in f {
                for k in 0..3 {
                    acc[i][k] += n[k];
                }
            }
        }
        self.normals = acc
            .into_iter()
            .zip(&self.vertices)
            .map(|(n, x)| {
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                if len > 0.0 {
                    n.map(|v| v / len)
                } else {
                    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                    x.map(|v| -v / r)
                }
            })
            .collect();
    }

    fn push_face(&mut self, f: [usize; 3]) {
        let [a, b, c] = f.map(|i| self.vertices[i]);
        let nrm = cross(&sub(&b, &a), &sub(&c, &a));
        let area = 0.5 * (nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]).sqrt();
        if !(area >= MIN_TRIANGLE_AREA) {
            return;
        }
        let centroid = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0, (a[2] + b[2] + c[2]) / 3.0];
        let inward = nrm[0] * centroid[0] + nrm[1] * centroid[1] + nrm[2] * centroid[2] < 0.0;
        self.faces.push(if inward { f } else { [f[0], f[2], f[1]] });
    }

    pub fn triangle_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        let n = cross(&sub(&b, &a), &sub(&c, &a));
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.triangle_area(f)).sum()
    }

    /// Writes the OBJ text atomically.
    pub fn export(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_obj().as_bytes())
    }

    /// Wavefront OBJ text with 1-based face indices.
    pub fn to_obj(&self) -> String {
        let mut s = String::with_capacity(64 * (self.vertices.len() + self.faces.len()));
        s.push_str("# radial-bump surface\n");
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.16e} {:.16e} {:.16e}", v[0], v[1], v[2]);
        }
        for n in &self.normals {
            let _ = writeln!(s, "vn {:.16e} {:.16e} {:.16e}", n[0], n[1], n[2]);
        }
        for f in &self.faces {
            let [a, b, c] = f.map(|i| i + 1);
            let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
        }
        s
    }
}

/// Parses the vertex, normal and triangle records of an OBJ file.
pub fn parse_obj(text: &str) -> Result<SurfaceMesh> {
    let bad = |line: usize, msg: &str| Error::SolutionFile(format!("OBJ line {line}: {msg}"));
    let mut mesh = SurfaceMesh::default();
    for (ln, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(tag @ ("v" | "vn")) => {
                let v: Vec<f64> = parts.map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad(ln + 1, "bad vector"))?;
                if v.len() != 3 {
                    return Err(bad(ln + 1, "vector needs 3 coordinates"));
                }
                let target = if tag == "v" { &mut mesh.vertices } else { &mut mesh.normals };
                target.push([v[0], v[1], v[2]]);
            }
            Some("f") => {
                let f: Vec<usize> = parts
                    .map(|p| p.split('/').next().unwrap_or("").parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(ln + 1, "bad face"))?;
                if f.len() != 3 || f.iter().any(|&i| i == 0 || i > mesh.vertices.len()) {
                    return Err(bad(ln + 1, "face needs 3 valid vertex indices"));
                }
                mesh.faces.push([f[0] - 1, f[1] - 1, f[2] - 1]);
            }
            _ => {}
        }
    }
    Ok(mesh)
}
