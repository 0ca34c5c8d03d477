#![allow(dead_code)]

use std::sync::Arc;

use iga_peec::geometry::{ElementMesh, MultiPatchGeometry};
use iga_peec::nurbs::{KnotVector, NurbsSurfacePatch, Vec3};
use iga_peec::quadrature::gauss_legendre;

pub fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

/// Bilinear patch through corners given in unit-square order
/// (0,0), (1,0), (1,1), (0,1).
pub fn flat_patch(c: [Vec3; 4]) -> NurbsSurfacePatch {
    let k = KnotVector::bezier(1);
    NurbsSurfacePatch::new(k.clone(), k, vec![c[0], c[3], c[1], c[2]], vec![1.0; 4]).unwrap()
}

pub fn flat_mesh(quads: &[[Vec3; 4]], tags: Vec<u32>) -> ElementMesh {
    let patches = quads.iter().map(|&c| flat_patch(c)).collect();
    ElementMesh::new(Arc::new(MultiPatchGeometry::new(patches, tags).unwrap()), 0)
}

/// `∫_S dS' / |r - r'|` over a planar convex polygon with unit density,
/// vertices ordered counter-clockwise about `normal`.
pub fn polygon_potential(poly: &[Vec3], normal: Vec3, r: Vec3) -> f64 {
    let n = normal.normalize();
    let d = (r - poly[0]).dot(&n);
    let rho = r - n * d;
    let ad = d.abs();
    let mut sum = 0.0;
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        let l = (b - a).normalize();
        let u = l.cross(&n);
        let t0 = (a - rho).dot(&u);
        let lm = (a - rho).dot(&l);
        let lp = (b - rho).dot(&l);
        let r0sq = t0 * t0 + d * d;
        let rp = (lp * lp + r0sq).sqrt();
        let rm = (lm * lm + r0sq).sqrt();
        if t0 != 0.0 {
            // Equivalent forms; the second avoids cancellation behind the foot point.
            let log = if lp + lm >= 0.0 { ((rp + lp) / (rm + lm)).ln() } else { ((rm - lm) / (rp - lp)).ln() };
            sum += t0 * log;
            if ad > 0.0 {
                sum -= ad * ((t0 * lp) / (r0sq + ad * rp)).atan() - ad * ((t0 * lm) / (r0sq + ad * rm)).atan();
            }
        }
    }
    sum
}

/// Adaptive dyadic Gauss quadrature of `f` over `[0,1]^2`.
pub fn adaptive_square(f: &dyn Fn(f64, f64) -> f64, tol: f64) -> f64 {
    let rule = gauss_legendre(7).unwrap();
    let panel = |x0: f64, y0: f64, h: f64| -> f64 {
        let mut s = 0.0;
        for (a, wa) in rule.iter() {
            for (b, wb) in rule.iter() {
                s += wa * wb * f(x0 + a * h, y0 + b * h);
            }
        }
        s * h * h
    };
    fn recurse(panel: &dyn Fn(f64, f64, f64) -> f64, x0: f64, y0: f64, h: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let g = h / 2.0;
        let parts = [(x0, y0), (x0 + g, y0), (x0, y0 + g), (x0 + g, y0 + g)].map(|(x, y)| (x, y, panel(x, y, g)));
        let sum: f64 = parts.iter().map(|p| p.2).sum();
        if (sum - whole).abs() <= tol || depth >= 14 {
            return sum;
        }
        parts.iter().map(|&(x, y, w)| recurse(panel, x, y, g, w, tol / 4.0, depth + 1)).sum()
    }
    let whole = panel(0.0, 0.0, 1.0);
    recurse(&panel, 0.0, 0.0, 1.0, whole, tol, 0)
}

/// Reference four-fold integral between planar convex polygon `target`
/// (parameterized by the bilinear `map`) and polygon `source`.
pub fn oracle_quad_polygon(target: [Vec3; 4], source: &[Vec3], source_normal: Vec3, tol: f64) -> f64 {
    let [p0, p1, p2, p3] = target;
    let f = |x: f64, y: f64| {
        let point = p0 * ((1.0 - x) * (1.0 - y)) + p1 * (x * (1.0 - y)) + p2 * (x * y) + p3 * ((1.0 - x) * y);
        let du = (p1 - p0) * (1.0 - y) + (p2 - p3) * y;
        let dv = (p3 - p0) * (1.0 - x) + (p2 - p1) * x;
        polygon_potential(source, source_normal, point) * du.cross(&dv).norm()
    };
    adaptive_square(&f, tol)
}

/// Same as [`oracle_quad_polygon`] with a triangle target (collapsed map).
pub fn oracle_tri_polygon(target: [Vec3; 3], source: &[Vec3], source_normal: Vec3, tol: f64) -> f64 {
    let [a, b, c] = target;
    let jac = (b - a).cross(&(c - b)).norm();
    let f = |x: f64, y: f64| {
        let point = a + (b - a) * x + (c - b) * (x * y);
        polygon_potential(source, source_normal, point) * jac * x
    };
    adaptive_square(&f, tol)
}

pub fn normal_of(poly: &[Vec3]) -> Vec3 {
    (poly[1] - poly[0]).cross(&(poly[2] - poly[0])).normalize()
}

/// `∫∫ 1/|x - y|` over the unit square with itself.
pub fn unit_square_self() -> f64 {
    let s2 = 2f64.sqrt();
    4.0 * (1.0 + s2).ln() + 4.0 / 3.0 * (1.0 - s2)
}
