//! Gauss-Legendre rules and Galerkin double-surface integrals of `1/|r - r'|`.
//!
//! Coincident, edge-adjacent and vertex-adjacent element pairs are integrated
//! after regularizing coordinate transforms on the unit square: relative
//! coordinates along the directions in which the elements overlap, followed by
//! a Duffy split of the remaining cube around the singular point. The Jacobian
//! of each transform cancels the `1/r` blow-up so every sub-integral is smooth
//! and is evaluated by tensor Gauss rules.

use std::sync::OnceLock;

use thiserror::Error;

use crate::geometry::ElementMesh;
use crate::nurbs::Vec3;

pub const MAX_RULE_ORDER: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("Gauss-Legendre order {0} is outside 1..={MAX_RULE_ORDER}")]
    OrderOutOfRange(usize),
    #[error("non-finite integral {value} for element pair ({i}, {j})")]
    NonFinite { i: usize, j: usize, value: f64 },
    #[error("elements {i} and {j} share corners in a non-conforming arrangement")]
    Topology { i: usize, j: usize },
    #[error("invalid quadrature configuration: {0}")]
    Config(String),
}

/// Gauss-Legendre rule normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

fn compute_rule(n: usize) -> QuadratureRule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Newton iteration on P_n starting from the Chebyshev-like guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x is descending in i; map [-1,1] -> [0,1].
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.5;
    }
    QuadratureRule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn rule_table() -> &'static [QuadratureRule] {
    static TABLE: OnceLock<Vec<QuadratureRule>> = OnceLock::new();
    TABLE.get_or_init(|| (1..=MAX_RULE_ORDER).map(compute_rule).collect())
}

/// Cached `n`-point rule on `[0, 1]` with ascending nodes.
pub fn rule(n: usize) -> Result<&'static QuadratureRule, QuadratureError> {
    if n == 0 || n > MAX_RULE_ORDER {
        return Err(QuadratureError::OrderOutOfRange(n));
    }
    Ok(&rule_table()[n - 1])
}

/// `n`-point Gauss-Legendre rule on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Result<QuadratureRule, QuadratureError> {
    rule(n).cloned()
}

/// Quadrature orders used for element-pair integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadConfig {
    /// Per-direction Gauss order for well separated pairs.
    pub base_order: usize,
    /// Maximum number of extra points added for near pairs.
    pub near_increment_cap: usize,
    /// Per-direction order inside the regularized singular integrals.
    pub singular_order: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            base_order: 4,
            near_increment_cap: 6,
            singular_order: 8,
        }
    }
}

impl QuadConfig {
    pub fn validate(&self) -> Result<(), QuadratureError> {
        if self.base_order < 3 {
            return Err(QuadratureError::Config(format!(
                "base order must be at least 3, got {}",
                self.base_order
            )));
        }
        if self.near_increment_cap == 0 || self.singular_order == 0 {
            return Err(QuadratureError::Config(
                "near increment cap and singular order must be positive".into(),
            ));
        }
        let top = self.base_order + self.near_increment_cap;
        if top > MAX_RULE_ORDER || self.singular_order > MAX_RULE_ORDER {
            return Err(QuadratureError::OrderOutOfRange(top.max(self.singular_order)));
        }
        Ok(())
    }

    /// Per-direction order for a separated pair: grows with `log2(diam / distance)`.
    pub fn far_field_order(&self, diam_max: f64, distance: f64) -> usize {
        let increment = if distance > 0.0 {
            (diam_max / distance).log2().ceil().max(0.0)
        } else {
            f64::INFINITY
        };
        let increment = increment.min(self.near_increment_cap as f64) as usize;
        self.base_order + increment
    }
}

/// Relationship between two elements that selects the integration scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairClass {
    Identical,
    CommonEdge,
    CommonVertex,
    /// Carries the minimal corner-to-corner distance.
    Separated(f64),
}

/// Local map of an element from the unit square: returns the physical point and
/// the area element per unit local area.
pub trait LocalMap {
    fn eval(&self, x: f64, y: f64) -> (Vec3, f64);
}

impl<F: Fn(f64, f64) -> (Vec3, f64)> LocalMap for F {
    fn eval(&self, x: f64, y: f64) -> (Vec3, f64) {
        self(x, y)
    }
}

#[inline]
fn kernel(a: &Vec3, b: &Vec3) -> f64 {
    1.0 / (a - b).norm()
}

/// Sub-interval split of `[0,1]^2` into relative coordinate `z` and offset `t`:
/// returns `(x, y)` with `|y - x| = z` and the sign selecting which is larger.
#[inline]
fn split(z: f64, t: f64, forward: bool) -> (f64, f64) {
    let base = (1.0 - z) * t;
    if forward {
        (base, base + z)
    } else {
        (base + z, base)
    }
}

/// Coincident-element integral `∫∫ μ(x) μ(y) / |γ(x) - γ(y)|` over the unit square.
pub fn identical_integral<M: LocalMap + ?Sized>(map: &M, order: usize) -> Result<f64, QuadratureError> {
    let rule = rule(order)?;
    let mut total = 0.0;
    for (xi, w_xi) in rule.iter() {
        for (eta, w_eta) in rule.iter() {
            for region in 0..2 {
                let (z1, z2) = if region == 0 { (xi, xi * eta) } else { (xi * eta, xi) };
                let jac = w_xi * w_eta * xi * (1.0 - z1) * (1.0 - z2);
                let mut acc = 0.0;
                for (t1, w1) in rule.iter() {
                    for (t2, w2) in rule.iter() {
                        let w = w1 * w2;
                        for &f1 in &[true, false] {
                            let (x1, y1) = split(z1, t1, f1);
                            for &f2 in &[true, false] {
                                let (x2, y2) = split(z2, t2, f2);
                                let (p, mp) = map.eval(x1, x2);
                                let (q, mq) = map.eval(y1, y2);
                                acc += w * mp * mq * kernel(&p, &q);
                            }
                        }
                    }
                }
                total += jac * acc;
            }
        }
    }
    Ok(total)
}

/// Edge-adjacent pair: both maps share the edge `x2 = 0`, with `γ1(s, 0) = γ2(s, 0)`.
pub fn common_edge_integral<A: LocalMap + ?Sized, B: LocalMap + ?Sized>(
    first: &A,
    second: &B,
    order: usize,
) -> Result<f64, QuadratureError> {
    let rule = rule(order)?;
    let mut total = 0.0;
    for (xi, w_xi) in rule.iter() {
        let jac_xi = w_xi * xi * xi;
        for (e1, w1) in rule.iter() {
            for (e2, w2) in rule.iter() {
                let w12 = jac_xi * w1 * w2;
                for region in 0..3 {
                    let (z1, x2, y2) = match region {
                        0 => (xi, xi * e1, xi * e2),
                        1 => (xi * e1, xi, xi * e2),
                        _ => (xi * e1, xi * e2, xi),
                    };
                    let w_region = w12 * (1.0 - z1);
                    let mut acc = 0.0;
                    for (t1, wt) in rule.iter() {
                        for &forward in &[true, false] {
                            let (x1, y1) = split(z1, t1, forward);
                            let (p, mp) = first.eval(x1, x2);
                            let (q, mq) = second.eval(y1, y2);
                            acc += wt * mp * mq * kernel(&p, &q);
                        }
                    }
                    total += w_region * acc;
                }
            }
        }
    }
    Ok(total)
}

/// Vertex-adjacent pair: both maps share the point at local coordinate `(0, 0)`.
pub fn common_vertex_integral<A: LocalMap + ?Sized, B: LocalMap + ?Sized>(
    first: &A,
    second: &B,
    order: usize,
) -> Result<f64, QuadratureError> {
    let rule = rule(order)?;
    let mut total = 0.0;
    for (xi, w_xi) in rule.iter() {
        let jac_xi = w_xi * xi * xi * xi;
        for (e1, w1) in rule.iter() {
            for (e2, w2) in rule.iter() {
                for (e3, w3) in rule.iter() {
                    let w = jac_xi * w1 * w2 * w3;
                    let (a, b, c) = (xi * e1, xi * e2, xi * e3);
                    let coords = [[xi, a, b, c], [a, xi, b, c], [a, b, xi, c], [a, b, c, xi]];
                    let mut acc = 0.0;
                    for x in &coords {
                        let (p, mp) = first.eval(x[0], x[1]);
                        let (q, mq) = second.eval(x[2], x[3]);
                        acc += mp * mq * kernel(&p, &q);
                    }
                    total += w * acc;
                }
            }
        }
    }
    Ok(total)
}

/// Physical points and weights (`Gauss weight × area element`) of one element.
pub fn tensor_points<M: LocalMap + ?Sized>(map: &M, order: usize) -> Result<Vec<(Vec3, f64)>, QuadratureError> {
    let rule = rule(order)?;
    let mut out = Vec::with_capacity(order * order);
    for (x, wx) in rule.iter() {
        for (y, wy) in rule.iter() {
            let (p, m) = map.eval(x, y);
            out.push((p, wx * wy * m));
        }
    }
    Ok(out)
}

/// Product-rule sum of the kernel over two precomputed point sets.
pub fn regular_sum(first: &[(Vec3, f64)], second: &[(Vec3, f64)]) -> f64 {
    let mut total = 0.0;
    for (p, wp) in first {
        let mut acc = 0.0;
        for (q, wq) in second {
            acc += wq * kernel(p, q);
        }
        total += wp * acc;
    }
    total
}

/// One of the eight symmetries of the unit square applied before the element's
/// affine map into its patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Orientation {
    pub swap: bool,
    pub flip_x: bool,
    pub flip_y: bool,
}

impl Orientation {
    pub fn all() -> impl Iterator<Item = Orientation> {
        (0..8).map(|k| Orientation {
            swap: k & 1 != 0,
            flip_x: k & 2 != 0,
            flip_y: k & 4 != 0,
        })
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (a, b) = if self.swap { (y, x) } else { (x, y) };
        (if self.flip_x { 1.0 - a } else { a }, if self.flip_y { 1.0 - b } else { b })
    }

    /// Canonical corner index (see [`ElementMesh::corners`]) reached from a local corner.
    pub fn corner(&self, local: usize) -> usize {
        let (x, y) = CORNER_COORDS[local];
        let (a, b) = self.apply(x, y);
        CORNER_COORDS
            .iter()
            .position(|&(cx, cy)| cx == a && cy == b)
            .expect("square symmetries permute corners")
    }
}

/// Unit-square corners in canonical order.
pub const CORNER_COORDS: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];

/// Element of a mesh seen through an [`Orientation`].
pub struct OrientedElement<'a> {
    mesh: &'a ElementMesh,
    element: usize,
    orientation: Orientation,
}

impl<'a> OrientedElement<'a> {
    pub fn new(mesh: &'a ElementMesh, element: usize, orientation: Orientation) -> Self {
        Self {
            mesh,
            element,
            orientation,
        }
    }
}

impl LocalMap for OrientedElement<'_> {
    #[inline]
    fn eval(&self, x: f64, y: f64) -> (Vec3, f64) {
        let (a, b) = self.orientation.apply(x, y);
        self.mesh.eval_local(self.element, a, b)
    }
}

/// Pairs of canonical corner indices `(corner of i, corner of j)` that coincide.
pub fn shared_corners(mesh: &ElementMesh, i: usize, j: usize) -> Vec<(usize, usize)> {
    let tol = mesh.tolerance();
    let ci = mesh.corners(i);
    let cj = mesh.corners(j);
    let mut shared = Vec::new();
    for (a, pa) in ci.iter().enumerate() {
        for (b, pb) in cj.iter().enumerate() {
            if (pa - pb).norm() <= tol {
                shared.push((a, b));
            }
        }
    }
    shared
}

fn min_corner_distance(mesh: &ElementMesh, i: usize, j: usize) -> f64 {
    let ci = mesh.corners(i);
    let cj = mesh.corners(j);
    let mut best = f64::INFINITY;
    for pa in ci {
        for pb in cj {
            best = best.min((pa - pb).norm());
        }
    }
    best
}

pub fn classify_pair(mesh: &ElementMesh, i: usize, j: usize) -> PairClass {
    if i == j {
        return PairClass::Identical;
    }
    match shared_corners(mesh, i, j).len() {
        0 => PairClass::Separated(min_corner_distance(mesh, i, j)),
        1 => PairClass::CommonVertex,
        _ => PairClass::CommonEdge,
    }
}

fn orientation_for(first: usize, second: Option<usize>) -> Option<Orientation> {
    Orientation::all().find(|o| o.corner(0) == first && second.is_none_or(|s| o.corner(1) == s))
}

/// Per-direction Gauss order chosen for a separated pair.
pub fn separated_order(mesh: &ElementMesh, i: usize, j: usize, distance: f64, config: &QuadConfig) -> usize {
    let diam = mesh.diameter(i).max(mesh.diameter(j));
    config.far_field_order(diam, distance)
}

/// Kernel integral `∬_Γi ∬_Γj dΓ' dΓ / |r - r'|` for an element pair (m³).
pub fn pair_integral(
    mesh: &ElementMesh,
    i: usize,
    j: usize,
    class: PairClass,
    config: &QuadConfig,
) -> Result<f64, QuadratureError> {
    let n = config.singular_order;
    let value = match class {
        PairClass::Identical => {
            let e = OrientedElement::new(mesh, i, Orientation::default());
            identical_integral(&e, n)?
        }
        PairClass::CommonVertex => {
            let shared = shared_corners(mesh, i, j);
            let &(a, b) = shared.first().ok_or(QuadratureError::Topology { i, j })?;
            let oi = orientation_for(a, None).ok_or(QuadratureError::Topology { i, j })?;
            let oj = orientation_for(b, None).ok_or(QuadratureError::Topology { i, j })?;
            common_vertex_integral(&OrientedElement::new(mesh, i, oi), &OrientedElement::new(mesh, j, oj), n)?
        }
        PairClass::CommonEdge => {
            let shared = shared_corners(mesh, i, j);
            if shared.len() != 2 {
                return Err(QuadratureError::Topology { i, j });
            }
            let (a0, b0) = shared[0];
            let (a1, b1) = shared[1];
            let oi = orientation_for(a0, Some(a1)).ok_or(QuadratureError::Topology { i, j })?;
            let oj = orientation_for(b0, Some(b1)).ok_or(QuadratureError::Topology { i, j })?;
            common_edge_integral(&OrientedElement::new(mesh, i, oi), &OrientedElement::new(mesh, j, oj), n)?
        }
        PairClass::Separated(distance) => {
            let order = separated_order(mesh, i, j, distance, config);
            let pi = mesh.far_field_points(i, order)?;
            let pj = mesh.far_field_points(j, order)?;
            regular_sum(&pi, &pj)
        }
    };
    if !value.is_finite() || value <= 0.0 {
        return Err(QuadratureError::NonFinite { i, j, value });
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn low_order_rules_closed_form() {
        let r1 = gauss_legendre(1).unwrap();
        assert_eq!(r1.nodes, vec![0.5]);
        assert_relative_eq!(r1.weights[0], 1.0, epsilon = 1e-15);
        let r2 = gauss_legendre(2).unwrap();
        let d = 1.0 / (2.0 * 3f64.sqrt());
        assert_relative_eq!(r2.nodes[0], 0.5 - d, epsilon = 1e-15);
        assert_relative_eq!(r2.nodes[1], 0.5 + d, epsilon = 1e-15);
        assert_relative_eq!(r2.weights[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(r2.weights[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn exactness_and_normalization() {
        let r5 = gauss_legendre(5).unwrap();
        assert!((r5.integrate(|x| x.powi(9)) - 0.1).abs() < 1e-14);
        for n in 1..=MAX_RULE_ORDER {
            let r = rule(n).unwrap();
            let sum: f64 = r.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-14, "n={n} sum={sum}");
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(r.weights.iter().all(|&w| w > 0.0));
            let deg = 2 * n - 1;
            let exact = 1.0 / (deg as f64 + 1.0);
            assert!((r.integrate(|x| x.powi(deg as i32)) - exact).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn order_bounds() {
        assert_eq!(gauss_legendre(0), Err(QuadratureError::OrderOutOfRange(0)));
        assert_eq!(gauss_legendre(65), Err(QuadratureError::OrderOutOfRange(65)));
    }

    #[test]
    fn far_field_order_rule() {
        let c = QuadConfig::default();
        assert_eq!(c.far_field_order(1.0, 10.0), 4);
        assert_eq!(c.far_field_order(1.0, 1.0), 4);
        assert_eq!(c.far_field_order(1.0, 0.5), 5);
        assert_eq!(c.far_field_order(1.0, 0.3), 6);
        assert_eq!(c.far_field_order(1.0, 1e-9), 10);
        let mut last = 0;
        for k in (1..200).rev() {
            let order = c.far_field_order(1.0, k as f64 * 0.01);
            assert!(order >= last);
            last = order;
        }
    }

    #[test]
    fn orientation_corners_are_permutations() {
        for o in Orientation::all() {
            let mut seen: Vec<usize> = (0..4).map(|k| o.corner(k)).collect();
            seen.sort();
            assert_eq!(seen, vec![0, 1, 2, 3]);
        }
        assert!(orientation_for(2, Some(1)).is_some());
        assert!(orientation_for(0, Some(2)).is_none());
    }
}
