//! Low-order PEEC on flat triangles with one constant `1/area` unknown per
//! triangle, used as the conventional baseline.
//!
//! Touching triangle pairs are split into three bilinear quadrilaterals each
//! (vertex, edge midpoint, centroid, edge midpoint) so the quadrilateral
//! singular rules apply unchanged. Separated pairs use a collapsed Gauss
//! product rule on each triangle.

use std::collections::HashMap;

use nalgebra::Vector3;
use thiserror::Error;

use crate::assembly::{assemble_dense, AssemblyError, PotentialMatrix};
use crate::nurbs::Vec3;
use crate::quadrature::{self, LocalMap, QuadConfig, QuadratureError};
use crate::solver::{concentric_capacitance, two_terminal_capacitance, ConvergenceRow, SolverError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TriMeshError {
    #[error("triangle {0} references a missing vertex")]
    Index(usize),
    #[error("triangle {triangle} has non-positive area {area}")]
    Area { triangle: usize, area: f64 },
    #[error("{tags} tags for {triangles} triangles")]
    TagCount { tags: usize, triangles: usize },
    #[error("radius must be positive and finite, got {0}")]
    Radius(f64),
    #[error("radii must satisfy 0 < r_in < r_out, got {0} and {1}")]
    Radii(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    tags: Vec<u32>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>, tags: Vec<u32>) -> Result<Self, TriMeshError> {
        if tags.len() != triangles.len() {
            return Err(TriMeshError::TagCount {
                tags: tags.len(),
                triangles: triangles.len(),
            });
        }
        let mesh = Self { vertices, triangles, tags };
        for (t, tri) in mesh.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= mesh.vertices.len()) {
                return Err(TriMeshError::Index(t));
            }
            let area = mesh.area(t);
            if !(area > 0.0) {
                return Err(TriMeshError::Area { triangle: t, area });
            }
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn domain_tags(&self) -> &[u32] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    pub fn area(&self, t: usize) -> f64 {
        0.5 * self.normal(t).norm()
    }

    pub fn areas(&self) -> Vec<f64> {
        (0..self.len()).map(|t| self.area(t)).collect()
    }

    pub fn total_area(&self) -> f64 {
        self.areas().iter().sum()
    }

    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        (a - b).norm().max((b - c).norm()).max((c - a).norm())
    }

    /// Disjoint union; vertices are not merged.
    pub fn merged(&self, other: &TriMesh) -> TriMesh {
        let offset = self.vertices.len();
        let mut out = self.clone();
        out.vertices.extend_from_slice(&other.vertices);
        out.triangles.extend(other.triangles.iter().map(|t| t.map(|v| v + offset)));
        out.tags.extend_from_slice(&other.tags);
        out
    }

    /// Replaces every tag by `tag`.
    pub fn with_tag(mut self, tag: u32) -> TriMesh {
        self.tags.iter_mut().for_each(|t| *t = tag);
        self
    }
}

/// Icosahedron refined `subdivisions` times by edge-midpoint quadrisection,
/// vertices projected onto the sphere; `20 · 4^s` outward-oriented triangles.
pub fn icosphere(subdivisions: u32, radius: f64, center: Vec3) -> Result<TriMesh, TriMeshError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(TriMeshError::Radius(radius));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut dirs: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
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
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, dirs: &mut Vec<Vec3>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                dirs.push(((dirs[a] + dirs[b]) * 0.5).normalize());
                dirs.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut dirs);
            let bc = midpoint(b, c, &mut dirs);
            let ca = midpoint(c, a, &mut dirs);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for f in &mut faces {
        let [a, b, c] = f.map(|v| dirs[v]);
        if (b - a).cross(&(c - a)).dot(&(a + b + c)) < 0.0 {
            f.swap(1, 2);
        }
    }
    let vertices = dirs.iter().map(|d| center + d * radius).collect();
    let tags = vec![1; faces.len()];
    TriMesh::new(vertices, faces, tags)
}

/// Two concentric icospheres: inner tagged 1, outer tagged 2.
pub fn concentric_icospheres(subdivisions: u32, r_in: f64, r_out: f64) -> Result<TriMesh, TriMeshError> {
    if !(r_in > 0.0 && r_in < r_out && r_out.is_finite()) {
        return Err(TriMeshError::Radii(r_in, r_out));
    }
    let inner = icosphere(subdivisions, r_in, Vec3::zeros())?;
    let outer = icosphere(subdivisions, r_out, Vec3::zeros())?.with_tag(2);
    Ok(inner.merged(&outer))
}

/// Bilinear quadrilateral through four coplanar corners in unit-square corner order.
#[derive(Debug, Clone, Copy)]
struct Quad([Vec3; 4]);

impl LocalMap for Quad {
    #[inline]
    fn eval(&self, x: f64, y: f64) -> (Vec3, f64) {
        let [p0, p1, p2, p3] = self.0;
        let point = p0 * ((1.0 - x) * (1.0 - y)) + p1 * (x * (1.0 - y)) + p2 * (x * y) + p3 * ((1.0 - x) * y);
        let du = (p1 - p0) * (1.0 - y) + (p2 - p3) * y;
        let dv = (p3 - p0) * (1.0 - x) + (p2 - p1) * x;
        (point, du.cross(&dv).norm())
    }
}

/// Unit-square symmetry applied before a quad map.
struct Oriented<'a> {
    quad: &'a Quad,
    orientation: quadrature::Orientation,
}

impl LocalMap for Oriented<'_> {
    #[inline]
    fn eval(&self, x: f64, y: f64) -> (Vec3, f64) {
        let (a, b) = self.orientation.apply(x, y);
        self.quad.eval(a, b)
    }
}

fn sub_quads(corners: [Vec3; 3]) -> [Quad; 3] {
    let [a, b, c] = corners;
    let centroid = (a + b + c) / 3.0;
    let (ab, bc, ca) = ((a + b) * 0.5, (b + c) * 0.5, (c + a) * 0.5);
    [
        Quad([a, ab, centroid, ca]),
        Quad([b, bc, centroid, ab]),
        Quad([c, ca, centroid, bc]),
    ]
}

/// Collapsed map of the unit square onto a triangle.
struct Collapsed([Vec3; 3]);

impl LocalMap for Collapsed {
    #[inline]
    fn eval(&self, x: f64, y: f64) -> (Vec3, f64) {
        let [a, b, c] = self.0;
        let point = a + (b - a) * x + (c - b) * (x * y);
        (point, (b - a).cross(&(c - b)).norm() * x)
    }
}

fn orientation_for(first: usize, second: Option<usize>) -> quadrature::Orientation {
    quadrature::Orientation::all()
        .find(|o| o.corner(0) == first && second.is_none_or(|s| o.corner(1) == s))
        .expect("every corner pair of a square is reachable")
}

fn quad_pair_integral(a: &Quad, b: &Quad, tol: f64, config: &QuadConfig) -> Result<f64, QuadratureError> {
    let n = config.singular_order;
    let mut shared = Vec::new();
    let mut min_dist = f64::INFINITY;
    for (ka, pa) in a.0.iter().enumerate() {
        for (kb, pb) in b.0.iter().enumerate() {
            let d = (pa - pb).norm();
            min_dist = min_dist.min(d);
            if d <= tol {
                shared.push((ka, kb));
            }
        }
    }
    match shared.len() {
        0 => {
            let diam = [a, b]
                .iter()
                .flat_map(|q| [(q.0[0] - q.0[2]).norm(), (q.0[1] - q.0[3]).norm()])
                .fold(0.0, f64::max);
            let order = config.far_field_order(diam, min_dist);
            Ok(quadrature::regular_sum(&quadrature::tensor_points(a, order)?, &quadrature::tensor_points(b, order)?))
        }
        1 => {
            let (ka, kb) = shared[0];
            let oa = Oriented { quad: a, orientation: orientation_for(ka, None) };
            let ob = Oriented { quad: b, orientation: orientation_for(kb, None) };
            quadrature::common_vertex_integral(&oa, &ob, n)
        }
        2 => {
            let oa = Oriented { quad: a, orientation: orientation_for(shared[0].0, Some(shared[1].0)) };
            let ob = Oriented { quad: b, orientation: orientation_for(shared[0].1, Some(shared[1].1)) };
            quadrature::common_edge_integral(&oa, &ob, n)
        }
        4 => quadrature::identical_integral(a, n),
        _ => Err(QuadratureError::Config(format!("quadrilaterals share {} corners", shared.len()))),
    }
}

/// Kernel integral `∬_Ti ∬_Tj dΓ' dΓ / |r - r'|` for a triangle pair (m³).
pub fn tri_pair_integral(mesh: &TriMesh, i: usize, j: usize, config: &QuadConfig) -> Result<f64, QuadratureError> {
    let tol = 1e-10 * mesh.diameter(i).max(mesh.diameter(j));
    let (ci, cj) = (mesh.corners(i), mesh.corners(j));
    let touching = i == j || ci.iter().any(|p| cj.iter().any(|q| (p - q).norm() <= tol));
    let value = if touching {
        let (qi, qj) = (sub_quads(ci), sub_quads(cj));
        let mut total = 0.0;
        for a in &qi {
            for b in &qj {
                total += quad_pair_integral(a, b, tol, config)?;
            }
        }
        total
    } else {
        let distance = ci.iter().flat_map(|p| cj.iter().map(move |q| (p - q).norm())).fold(f64::INFINITY, f64::min);
        let order = config.far_field_order(mesh.diameter(i).max(mesh.diameter(j)), distance);
        let pi = quadrature::tensor_points(&Collapsed(ci), order)?;
        let pj = quadrature::tensor_points(&Collapsed(cj), order)?;
        quadrature::regular_sum(&pi, &pj)
    };
    if !value.is_finite() || value <= 0.0 {
        return Err(QuadratureError::NonFinite { i, j, value });
    }
    Ok(value)
}

/// Galerkin potential matrix of the triangle mesh.
pub fn assemble_tri(mesh: &TriMesh, config: &QuadConfig) -> Result<PotentialMatrix, AssemblyError> {
    config.validate()?;
    assemble_dense(&mesh.areas(), |i, j| tri_pair_integral(mesh, i, j, config))
}

/// Capacitance error of two concentric icospheres per subdivision level.
pub fn convergence_tri(
    r_in: f64,
    r_out: f64,
    levels: &[u32],
    config: &QuadConfig,
) -> Result<Vec<ConvergenceRow>, ConvergenceError> {
    let exact = concentric_capacitance(r_in, r_out);
    levels
        .iter()
        .map(|&level| {
            let mesh = concentric_icospheres(level, r_in, r_out)?;
            let p = assemble_tri(&mesh, config)?;
            let capacitance = two_terminal_capacitance(&p, mesh.domain_tags(), 1)?;
            Ok(ConvergenceRow {
                level,
                dof: mesh.len(),
                capacitance,
                rel_error: ((capacitance - exact) / exact).abs(),
            })
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum ConvergenceError {
    #[error(transparent)]
    Mesh(#[from] TriMeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Unit-square corners of the three sub-quadrilaterals, for tests.
pub fn sub_quad_corners(corners: [Vec3; 3]) -> [[Vec3; 4]; 3] {
    sub_quads(corners).map(|q| q.0)
}

/// Points of the collapsed rule on a triangle: `(point, weight)` with weights
/// summing to the triangle area.
pub fn triangle_points(corners: [Vec3; 3], order: usize) -> Result<Vec<(Vec3, f64)>, QuadratureError> {
    quadrature::tensor_points(&Collapsed(corners), order)
}

/// Maximum `| |v - center| - r | / r` over the mesh vertices.
pub fn radius_error(mesh: &TriMesh, radius: f64, center: Vec3) -> f64 {
    mesh.vertices()
        .iter()
        .map(|v| ((v - center).norm() - radius).abs() / radius)
        .fold(0.0, f64::max)
}
