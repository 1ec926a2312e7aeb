//! Programmatic test shapes: closed planar curves and icospheres.

use std::collections::HashMap;
use std::f64::consts::TAU;

use crate::error::Result;
use crate::io::{mesh_to_varifold, Mesh};
use crate::varifold::DiscreteVarifold;

/// Closed polygon through `points` (implicitly closed), one Dirac per edge.
pub fn closed_polygon(points: &[Vec<f64>]) -> Result<DiscreteVarifold> {
    let dim = points.first().map_or(2, |p| p.len());
    let mut cycle = points.to_vec();
    if let Some(first) = points.first() {
        cycle.push(first.clone());
    }
    mesh_to_varifold(&Mesh::Polylines { dim, components: vec![cycle] })
}

/// Radial perturbation of a circle with parameters for the shape of the wobble.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wobble {
    pub radius: f64,
    pub amplitude: f64,
    pub frequency: u32,
    pub phase: f64,
    pub center: [f64; 2],
}

impl Default for Wobble {
    fn default() -> Self {
        Wobble { radius: 1.0, amplitude: 0.2, frequency: 3, phase: 0.0, center: [0.0, 0.0] }
    }
}

impl Wobble {
    pub fn point(&self, theta: f64) -> Vec<f64> {
        let r = self.radius * (1.0 + self.amplitude * (self.frequency as f64 * theta + self.phase).sin());
        vec![self.center[0] + r * theta.cos(), self.center[1] + r * theta.sin()]
    }

    /// Counter-clockwise polygon with `atoms` edges.
    pub fn curve(&self, atoms: usize) -> Result<DiscreteVarifold> {
        let pts: Vec<Vec<f64>> = (0..atoms).map(|k| self.point(TAU * k as f64 / atoms as f64)).collect();
        closed_polygon(&pts)
    }
}

/// Splits every triangle into four through its edge midpoints.
pub fn subdivide(mesh: &Mesh) -> Mesh {
    let Mesh::Triangles { vertices, faces } = mesh else { return mesh.clone() };
    let mut vertices = vertices.clone();
    let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, vs: &mut Vec<[f64; 3]>| -> usize {
        let key = (a.min(b), a.max(b));
        *mids.entry(key).or_insert_with(|| {
            let (p, q) = (vs[a], vs[b]);
            vs.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])]);
            vs.len() - 1
        })
    };
    let mut out = Vec::with_capacity(faces.len() * 4);
    for &[a, b, c] in faces {
        let ab = mid(a, b, &mut vertices);
        let bc = mid(b, c, &mut vertices);
        let ca = mid(c, a, &mut vertices);
        out.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    Mesh::Triangles { vertices, faces: out }
}

/// Outward-oriented icosphere: an icosahedron subdivided `level` times, vertices on the unit sphere.
pub fn icosphere(level: usize) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<[f64; 3]> = [
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
    .to_vec();
    let faces = vec![
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
    let normalize = |v: &mut [f64; 3]| {
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.iter_mut().for_each(|c| *c /= r);
    };
    vertices.iter_mut().for_each(normalize);
    let mut mesh = Mesh::Triangles { vertices, faces };
    for _ in 0..level {
        mesh = subdivide(&mesh);
        if let Mesh::Triangles { vertices, .. } = &mut mesh {
            vertices.iter_mut().for_each(normalize);
        }
    }
    mesh
}
