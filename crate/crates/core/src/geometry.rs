//! Multipatch conductor geometry, built-in exact spheres, dyadic element
//! meshes and the JSON geometry file format.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::nurbs::{KnotVector, NurbsError, NurbsSurfacePatch, Vec3};
use crate::quadrature::{self, QuadratureError, CORNER_COORDS};

/// Relative tolerance (of the bounding-box diagonal) for matching mapped corners.
pub const CORNER_TOLERANCE: f64 = 1e-10;

/// Gauss order per direction used for element areas.
const AREA_ORDER: usize = 12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("patch {patch}: {source}")]
    Patch {
        patch: usize,
        #[source]
        source: NurbsError,
    },
    #[error("{patches} patches but {tags} domain tags")]
    TagCount { patches: usize, tags: usize },
    #[error("domain tags must form the contiguous range 1..=D; missing domain {missing}")]
    TagRange { missing: u32 },
    #[error("domain {domain} is not connected: patch {patch} shares no corner with the rest")]
    Disconnected { domain: u32, patch: usize },
    #[error("geometry has no patches")]
    Empty,
    #[error("inner radius {r_in} must be positive and smaller than outer radius {r_out}")]
    Radii { r_in: f64, r_out: f64 },
    #[error("radius must be positive, got {0}")]
    Radius(f64),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("patch {patch}: field `{field}` {message}")]
    Field {
        patch: usize,
        field: &'static str,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Conductor surfaces as a list of NURBS patches, each tagged with its electrode.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPatchGeometry {
    patches: Vec<NurbsSurfacePatch>,
    domain_tags: Vec<u32>,
    tolerance: f64,
}

impl MultiPatchGeometry {
    pub fn new(patches: Vec<NurbsSurfacePatch>, domain_tags: Vec<u32>) -> Result<Self, GeometryError> {
        if patches.is_empty() {
            return Err(GeometryError::Empty);
        }
        if patches.len() != domain_tags.len() {
            return Err(GeometryError::TagCount {
                patches: patches.len(),
                tags: domain_tags.len(),
            });
        }
        let max_tag = *domain_tags.iter().max().expect("non-empty");
        for d in 1..=max_tag {
            if !domain_tags.contains(&d) {
                return Err(GeometryError::TagRange { missing: d });
            }
        }
        if domain_tags.contains(&0) {
            return Err(GeometryError::TagRange { missing: 0 });
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in patches.iter().flat_map(|p| p.control_net()) {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let tolerance = CORNER_TOLERANCE * (hi - lo).norm();
        let geometry = Self {
            patches,
            domain_tags,
            tolerance,
        };
        geometry.check_connectivity()?;
        Ok(geometry)
    }

    fn check_connectivity(&self) -> Result<(), GeometryError> {
        let corners: Vec<[Vec3; 4]> = self
            .patches
            .iter()
            .map(|p| CORNER_COORDS.map(|(u, v)| p.point(u, v)))
            .collect();
        let touches = |a: usize, b: usize| {
            corners[a]
                .iter()
                .any(|pa| corners[b].iter().any(|pb| (pa - pb).norm() <= self.tolerance))
        };
        for domain in 1..=self.num_domains() {
            let members: Vec<usize> = (0..self.patches.len()).filter(|&k| self.domain_tags[k] == domain).collect();
            let mut reached = vec![false; members.len()];
            reached[0] = true;
            let mut stack = vec![0];
            while let Some(a) = stack.pop() {
                for b in 0..members.len() {
                    if !reached[b] && touches(members[a], members[b]) {
                        reached[b] = true;
                        stack.push(b);
                    }
                }
            }
            if let Some(k) = reached.iter().position(|r| !r) {
                return Err(GeometryError::Disconnected {
                    domain,
                    patch: members[k],
                });
            }
        }
        Ok(())
    }

    pub fn patches(&self) -> &[NurbsSurfacePatch] {
        &self.patches
    }

    pub fn domain_tags(&self) -> &[u32] {
        &self.domain_tags
    }

    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn num_domains(&self) -> u32 {
        self.domain_tags.iter().copied().max().unwrap_or(0)
    }

    /// Absolute tolerance for coincident points.
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Area of one patch by tensor Gauss quadrature of the surface measure.
    pub fn patch_area(&self, patch: usize) -> f64 {
        let rule = quadrature::rule(AREA_ORDER).expect("static order");
        let p = &self.patches[patch];
        rule.iter()
            .map(|(u, wu)| rule.iter().map(|(v, wv)| wv * p.eval(u, v).measure).sum::<f64>() * wu)
            .sum()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.patches.len()).map(|k| self.patch_area(k)).sum()
    }

    /// Uniformly scaled copy (control points multiplied by `factor`).
    pub fn scaled(&self, factor: f64) -> Self {
        let patches = self.patches.iter().map(|p| p.map_points(|x| x * factor)).collect();
        Self::new(patches, self.domain_tags.clone()).expect("scaling preserves validity")
    }

    /// Concatenates two geometries, shifting the second one's domain tags.
    pub fn merged(&self, other: &Self) -> Result<Self, GeometryError> {
        let shift = self.num_domains();
        let patches = self.patches.iter().chain(&other.patches).cloned().collect();
        let tags = self
            .domain_tags
            .iter()
            .copied()
            .chain(other.domain_tags.iter().map(|t| t + shift))
            .collect();
        Self::new(patches, tags)
    }
}

const BINOM2: [f64; 3] = [1.0, 2.0, 1.0];
const BINOM4: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];

/// Product of two biquadratic Bernstein polynomials as a biquartic one.
fn bernstein_product(f: &[[f64; 3]; 3], g: &[[f64; 3]; 3]) -> [[f64; 5]; 5] {
    let mut out = [[0.0; 5]; 5];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let cu = BINOM2[i] * BINOM2[k] / BINOM4[i + k];
                    let cv = BINOM2[j] * BINOM2[l] / BINOM4[j + l];
                    out[i + k][j + l] += cu * cv * f[i][j] * g[k][l];
                }
            }
        }
    }
    out
}

/// Biquartic rational patch covering the cube face `z >= max(|x|, |y|)` of the
/// unit sphere.
///
/// The face is the image of a curvilinear square under inverse stereographic
/// projection from the south pole. Its four sides are circular arcs, given
/// exactly by a biquadratic rational Bézier patch; composing with the degree-two
/// projection yields a biquartic patch that lies on the sphere identically and
/// whose boundary curves are great-circle arcs.
fn unit_sphere_top_face() -> NurbsSurfacePatch {
    let sqrt3 = 3f64.sqrt();
    let corner = 0.5 * (sqrt3 - 1.0);
    let mid = 2.0 * sqrt3 - 3.0;
    let w_edge = (6f64.sqrt() + 2f64.sqrt()) / 4.0; // cos 15°
    let w_center = w_edge * w_edge;

    let mut a = [[0.0; 3]; 3];
    let mut b = [[0.0; 3]; 3];
    let mut w = [[0.0; 3]; 3];
    let coord = [-1.0, 0.0, 1.0];
    for i in 0..3 {
        for j in 0..3 {
            let (ci, cj) = (coord[i], coord[j]);
            let (x, y, weight) = match (i == 1, j == 1) {
                (false, false) => (ci * corner, cj * corner, 1.0),
                (true, false) => (0.0, cj * mid, w_edge),
                (false, true) => (ci * mid, 0.0, w_edge),
                (true, true) => (0.0, 0.0, w_center),
            };
            a[i][j] = weight * x;
            b[i][j] = weight * y;
            w[i][j] = weight;
        }
    }
    let aw = bernstein_product(&a, &w);
    let bw = bernstein_product(&b, &w);
    let ww = bernstein_product(&w, &w);
    let aa = bernstein_product(&a, &a);
    let bb = bernstein_product(&b, &b);

    let mut points = Vec::with_capacity(25);
    let mut weights = Vec::with_capacity(25);
    for i in 0..5 {
        for j in 0..5 {
            let h = ww[i][j] + aa[i][j] + bb[i][j];
            let x = 2.0 * aw[i][j];
            let y = 2.0 * bw[i][j];
            let z = ww[i][j] - aa[i][j] - bb[i][j];
            points.push(Vec3::new(x / h, y / h, z / h));
            weights.push(h);
        }
    }
    NurbsSurfacePatch::new(KnotVector::bezier(4), KnotVector::bezier(4), points, weights)
        .expect("sphere face construction has positive weights")
}

/// Rotations taking the `+z` face to the faces `+x, -x, +y, -y, +z, -z`.
fn face_rotations() -> [fn(&Vec3) -> Vec3; 6] {
    [
        |p| Vec3::new(p.z, p.y, -p.x),
        |p| Vec3::new(-p.z, p.y, p.x),
        |p| Vec3::new(p.x, p.z, -p.y),
        |p| Vec3::new(p.x, -p.z, p.y),
        |p| *p,
        |p| Vec3::new(p.x, -p.y, -p.z),
    ]
}

fn sphere_patches(radius: f64, center: Vec3) -> Vec<NurbsSurfacePatch> {
    let top = unit_sphere_top_face();
    face_rotations()
        .iter()
        .map(|rotate| top.map_points(|p| center + rotate(p) * radius))
        .collect()
}

/// Exact sphere as six rational patches (cube-face partition), one domain.
pub fn make_sphere(radius: f64, center: Vec3) -> Result<MultiPatchGeometry, GeometryError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(GeometryError::Radius(radius));
    }
    MultiPatchGeometry::new(sphere_patches(radius, center), vec![1; 6])
}

/// Two concentric spheres at the origin: patches 1-6 inner (domain 1), 7-12 outer (domain 2).
pub fn make_concentric_spheres(r_in: f64, r_out: f64) -> Result<MultiPatchGeometry, GeometryError> {
    if !(r_in > 0.0 && r_in < r_out && r_out.is_finite()) {
        return Err(GeometryError::Radii { r_in, r_out });
    }
    let mut patches = sphere_patches(r_in, Vec3::zeros());
    patches.extend(sphere_patches(r_out, Vec3::zeros()));
    let mut tags = vec![1; 6];
    tags.extend([2; 6]);
    MultiPatchGeometry::new(patches, tags)
}

/// One degree of freedom: a dyadic sub-square of a patch's reference domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub patch: usize,
    pub domain: u32,
    /// Sub-square indices along `u` and `v` at the mesh level.
    pub ix: u32,
    pub iy: u32,
    /// Physical area (m²).
    pub area: f64,
}

/// Uniform refinement of a [`MultiPatchGeometry`]: `4^level` elements per patch.
#[derive(Debug, Clone)]
pub struct ElementMesh {
    geometry: Arc<MultiPatchGeometry>,
    elements: Vec<Element>,
    level: u32,
    corners: Vec<[Vec3; 4]>,
    diameters: Vec<f64>,
}

/// Uniform dyadic refinement into `2^level × 2^level` sub-squares per patch.
pub fn refine(geometry: &MultiPatchGeometry, level: u32) -> ElementMesh {
    ElementMesh::new(Arc::new(geometry.clone()), level)
}

impl ElementMesh {
    pub fn new(geometry: Arc<MultiPatchGeometry>, level: u32) -> Self {
        let per_side = 1u32 << level;
        let size = 1.0 / per_side as f64;
        let rule = quadrature::rule(AREA_ORDER).expect("static order");
        let mut elements = Vec::with_capacity(geometry.num_patches() * (per_side * per_side) as usize);
        let mut corners = Vec::with_capacity(elements.capacity());
        for (patch_index, patch) in geometry.patches().iter().enumerate() {
            let domain = geometry.domain_tags()[patch_index];
            for ix in 0..per_side {
                for iy in 0..per_side {
                    let u0 = ix as f64 * size;
                    let v0 = iy as f64 * size;
                    let mut area = 0.0;
                    for (s, ws) in rule.iter() {
                        let mut row = 0.0;
                        for (t, wt) in rule.iter() {
                            row += wt * patch.eval(u0 + s * size, v0 + t * size).measure;
                        }
                        area += ws * row;
                    }
                    area *= size * size;
                    elements.push(Element {
                        patch: patch_index,
                        domain,
                        ix,
                        iy,
                        area,
                    });
                    corners.push(CORNER_COORDS.map(|(a, b)| patch.point(u0 + a * size, v0 + b * size)));
                }
            }
        }
        let diameters = corners
            .iter()
            .map(|c| {
                let mut d: f64 = 0.0;
                for a in 0..4 {
                    for b in a + 1..4 {
                        d = d.max((c[a] - c[b]).norm());
                    }
                }
                d
            })
            .collect();
        Self {
            geometry,
            elements,
            level,
            corners,
            diameters,
        }
    }

    pub fn geometry(&self) -> &MultiPatchGeometry {
        &self.geometry
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &Element {
        &self.elements[i]
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Mesh size `h = 2^-level` in the reference domain.
    pub fn h(&self) -> f64 {
        1.0 / (1u64 << self.level) as f64
    }

    pub fn areas(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.area).collect()
    }

    pub fn domain_tags(&self) -> Vec<u32> {
        self.elements.iter().map(|e| e.domain).collect()
    }

    pub fn num_domains(&self) -> u32 {
        self.geometry.num_domains()
    }

    pub fn tolerance(&self) -> f64 {
        self.geometry.tolerance()
    }

    /// Reference rectangle `(u0, u1, v0, v1)` of element `i`.
    pub fn rect(&self, i: usize) -> (f64, f64, f64, f64) {
        let e = &self.elements[i];
        let size = self.h();
        let u0 = e.ix as f64 * size;
        let v0 = e.iy as f64 * size;
        (u0, u0 + size, v0, v0 + size)
    }

    /// Mapped corners in the order of [`CORNER_COORDS`].
    pub fn corners(&self, i: usize) -> &[Vec3; 4] {
        &self.corners[i]
    }

    /// Largest corner-to-corner distance.
    pub fn diameter(&self, i: usize) -> f64 {
        self.diameters[i]
    }

    /// Point and area element of element `i` at local coordinates in `[0,1]^2`.
    #[inline]
    pub fn eval_local(&self, i: usize, s: f64, t: f64) -> (Vec3, f64) {
        let e = &self.elements[i];
        let size = self.h();
        let u = (e.ix as f64 + s) * size;
        let v = (e.iy as f64 + t) * size;
        let sp = self.geometry.patches()[e.patch].eval(u, v);
        (sp.point, sp.measure * size * size)
    }

    /// Gauss points of order `order` per direction on element `i`.
    pub fn far_field_points(&self, i: usize, order: usize) -> Result<Vec<(Vec3, f64)>, QuadratureError> {
        quadrature::tensor_points(&|s: f64, t: f64| self.eval_local(i, s, t), order)
    }
}

#[derive(Deserialize)]
struct PatchRecord {
    degree_u: usize,
    degree_v: usize,
    knots_u: Vec<f64>,
    knots_v: Vec<f64>,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct GeometryRecord {
    patches: Vec<PatchRecord>,
    domain_tags: Vec<u32>,
}

fn push_numbers(out: &mut String, values: impl IntoIterator<Item = f64>) {
    out.push('[');
    for (k, v) in values.into_iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{v:.16e}");
    }
    out.push(']');
}

/// JSON text of a geometry; reals carry 17 significant digits.
pub fn geometry_to_string(geometry: &MultiPatchGeometry) -> String {
    let mut out = String::from("{\n  \"patches\": [\n");
    for (k, patch) in geometry.patches().iter().enumerate() {
        out.push_str("    {\n");
        let _ = writeln!(out, "      \"degree_u\": {},", patch.knots_u().degree());
        let _ = writeln!(out, "      \"degree_v\": {},", patch.knots_v().degree());
        out.push_str("      \"knots_u\": ");
        push_numbers(&mut out, patch.knots_u().values().iter().copied());
        out.push_str(",\n      \"knots_v\": ");
        push_numbers(&mut out, patch.knots_v().values().iter().copied());
        out.push_str(",\n      \"points\": [");
        for (n, p) in patch.control_net().iter().enumerate() {
            if n > 0 {
                out.push_str(", ");
            }
            push_numbers(&mut out, p.iter().copied());
        }
        out.push_str("],\n      \"weights\": ");
        push_numbers(&mut out, patch.weights().iter().copied());
        out.push_str("\n    }");
        if k + 1 < geometry.num_patches() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("  ],\n  \"domain_tags\": [");
    let tags: Vec<String> = geometry.domain_tags().iter().map(|t| t.to_string()).collect();
    out.push_str(&tags.join(", "));
    out.push_str("]\n}\n");
    out
}

pub fn geometry_from_str(text: &str) -> Result<MultiPatchGeometry, GeometryError> {
    let record: GeometryRecord = serde_json::from_str(text).map_err(|e| GeometryError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut patches = Vec::with_capacity(record.patches.len());
    for (index, p) in record.patches.into_iter().enumerate() {
        let field_err = |field: &'static str, source: NurbsError| match source {
            NurbsError::NonPositiveWeight { .. } | NurbsError::WeightCountMismatch { .. } => GeometryError::Field {
                patch: index,
                field: "weights",
                message: source.to_string(),
            },
            other => GeometryError::Field {
                patch: index,
                field,
                message: other.to_string(),
            },
        };
        let ku = KnotVector::new(p.knots_u, p.degree_u).map_err(|e| field_err("knots_u", e))?;
        let kv = KnotVector::new(p.knots_v, p.degree_v).map_err(|e| field_err("knots_v", e))?;
        let points = p.points.iter().map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        let patch = NurbsSurfacePatch::new(ku, kv, points, p.weights).map_err(|e| field_err("points", e))?;
        patches.push(patch);
    }
    MultiPatchGeometry::new(patches, record.domain_tags)
}

pub fn save_geometry(geometry: &MultiPatchGeometry, path: impl AsRef<Path>) -> Result<(), GeometryError> {
    let path = path.as_ref();
    std::fs::write(path, geometry_to_string(geometry)).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_geometry(path: impl AsRef<Path>) -> Result<MultiPatchGeometry, GeometryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    geometry_from_str(&text)
}
