//! B-spline bases, NURBS curves and NURBS surface patches.
//!
//! Knot vectors are clamped (open): the first and last knots are repeated
//! `degree + 1` times. The half-open basis intervals are closed at the right
//! end of the parameter range so every map is defined on all of `[0, 1]`.

use nalgebra::Vector3;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Relative threshold below which a surface Jacobian is reported as degenerate.
pub const DEGENERATE_MEASURE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NurbsError {
    #[error("knot vector must contain at least {needed} values for degree {degree}, got {got}")]
    TooFewKnots {
        degree: usize,
        needed: usize,
        got: usize,
    },
    #[error("degree {0} exceeds the supported maximum {MAX_DEGREE}")]
    DegreeTooHigh(usize),
    #[error("knot {index} = {value} is outside [0, 1]")]
    KnotOutOfRange { index: usize, value: f64 },
    #[error("knots are not non-decreasing at index {index}")]
    UnsortedKnots { index: usize },
    #[error("knot vector is not clamped: end knots must repeat exactly {multiplicity} times")]
    NotClamped { multiplicity: usize },
    #[error("basis index {index} of degree {degree} is invalid for {knots} knots")]
    InvalidIndex {
        index: usize,
        degree: usize,
        knots: usize,
    },
    #[error("parameter {0} is outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("expected {expected} control points, got {got}")]
    ControlCountMismatch { expected: usize, got: usize },
    #[error("expected {expected} weights, got {got}")]
    WeightCountMismatch { expected: usize, got: usize },
    #[error("weight {index} = {value} is not strictly positive")]
    NonPositiveWeight { index: usize, value: f64 },
}

/// Clamped knot vector with its polynomial degree.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    values: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    pub fn new(values: Vec<f64>, degree: usize) -> Result<Self, NurbsError> {
        if degree > MAX_DEGREE {
            return Err(NurbsError::DegreeTooHigh(degree));
        }
        let needed = 2 * (degree + 1);
        if values.len() < needed {
            return Err(NurbsError::TooFewKnots {
                degree,
                needed,
                got: values.len(),
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(NurbsError::KnotOutOfRange { index, value });
            }
        }
        if let Some(index) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(NurbsError::UnsortedKnots { index: index + 1 });
        }
        let m = values.len();
        let first = values[0];
        let last = values[m - 1];
        let clamped = first < last
            && values[..=degree].iter().all(|&k| k == first)
            && values[m - degree - 1..].iter().all(|&k| k == last)
            && values[degree + 1] > first
            && values[m - degree - 2] < last;
        if !clamped {
            return Err(NurbsError::NotClamped {
                multiplicity: degree + 1,
            });
        }
        Ok(Self { values, degree })
    }

    /// Bézier knot vector `(0,..,0,1,..,1)` of the given degree.
    pub fn bezier(degree: usize) -> Self {
        let mut values = vec![0.0; degree + 1];
        values.extend(std::iter::repeat_n(1.0, degree + 1));
        Self { values, degree }
    }

    /// Clamped knot vector with `spans` uniform spans on `[0, 1]`.
    pub fn uniform(degree: usize, spans: usize) -> Self {
        let spans = spans.max(1);
        let mut values = vec![0.0; degree + 1];
        values.extend((1..spans).map(|k| k as f64 / spans as f64));
        values.extend(std::iter::repeat_n(1.0, degree + 1));
        Self { values, degree }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Dimension of the spline space, `len - degree - 1`.
    pub fn num_basis(&self) -> usize {
        self.values.len() - self.degree - 1
    }

    fn lower(&self) -> f64 {
        self.values[0]
    }

    fn upper(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Index `s` of the knot span with `values[s] <= xi < values[s + 1]`; the
    /// last non-empty span also owns the right end point.
    pub fn find_span(&self, xi: f64) -> usize {
        let p = self.degree;
        let n = self.num_basis();
        if xi >= self.values[n] {
            return n - 1;
        }
        if xi <= self.values[p] {
            return p;
        }
        let (mut lo, mut hi) = (p, n);
        let mut mid = (lo + hi) / 2;
        while xi < self.values[mid] || xi >= self.values[mid + 1] {
            if xi < self.values[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
            mid = (lo + hi) / 2;
        }
        mid
    }

    /// Values and first derivatives of the `degree + 1` basis functions that
    /// are non-zero on `span`. Writes into the caller's buffers.
    pub fn basis_and_derivative(&self, span: usize, xi: f64, values: &mut [f64], derivs: &mut [f64]) {
        let p = self.degree;
        let knots = &self.values;
        // ndu[j][r]: triangular table of the inverted-triangle algorithm.
        let mut ndu = [[0.0f64; MAX_DEGREE + 1]; MAX_DEGREE + 1];
        let mut left = [0.0f64; MAX_DEGREE + 1];
        let mut right = [0.0f64; MAX_DEGREE + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = xi - knots[span + 1 - j];
            right[j] = knots[span + j] - xi;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        for j in 0..=p {
            values[j] = ndu[j][p];
        }
        if p == 0 {
            derivs[0] = 0.0;
            return;
        }
        for r in 0..=p {
            let mut d = 0.0;
            if r >= 1 {
                d += ndu[r - 1][p - 1] / ndu[p][r - 1];
            }
            if r < p {
                d -= ndu[r][p - 1] / ndu[p][r];
            }
            derivs[r] = d * p as f64;
        }
    }
}

/// Largest degree supported by the fixed-size evaluation buffers.
pub const MAX_DEGREE: usize = 15;

/// Cox-de Boor value of `B_{index,degree}(xi)` on `knots`, with `0/0 := 0`.
pub fn bspline_eval(knots: &KnotVector, index: usize, degree: usize, xi: f64) -> Result<f64, NurbsError> {
    let values = knots.values();
    if index + degree + 1 >= values.len() {
        return Err(NurbsError::InvalidIndex {
            index,
            degree,
            knots: values.len(),
        });
    }
    if !(knots.lower()..=knots.upper()).contains(&xi) || xi.is_nan() {
        return Err(NurbsError::ParameterOutOfRange(xi));
    }
    Ok(cox_de_boor(values, index, degree, xi))
}

fn cox_de_boor(knots: &[f64], i: usize, p: usize, xi: f64) -> f64 {
    if p == 0 {
        let (a, b) = (knots[i], knots[i + 1]);
        let upper = knots[knots.len() - 1];
        if a <= xi && xi < b {
            return 1.0;
        }
        // Right-endpoint closure: the last non-empty interval includes `upper`.
        if xi == upper && b == upper && a < b {
            return 1.0;
        }
        return 0.0;
    }
    let mut value = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 != 0.0 {
        value += (xi - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, xi);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 != 0.0 {
        value += (knots[i + p + 1] - xi) / d2 * cox_de_boor(knots, i + 1, p - 1, xi);
    }
    value
}

fn check_weights(weights: &[f64]) -> Result<(), NurbsError> {
    match weights.iter().position(|&w| !(w > 0.0) || !w.is_finite()) {
        Some(index) => Err(NurbsError::NonPositiveWeight {
            index,
            value: weights[index],
        }),
        None => Ok(()),
    }
}

fn check_parameter(xi: f64) -> Result<(), NurbsError> {
    if (0.0..=1.0).contains(&xi) {
        Ok(())
    } else {
        Err(NurbsError::ParameterOutOfRange(xi))
    }
}

/// Rational B-spline curve in 3-space.
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsCurve {
    knots: KnotVector,
    control_points: Vec<Vec3>,
    weights: Vec<f64>,
}

impl NurbsCurve {
    pub fn new(knots: KnotVector, control_points: Vec<Vec3>, weights: Vec<f64>) -> Result<Self, NurbsError> {
        let expected = knots.num_basis();
        if control_points.len() != expected {
            return Err(NurbsError::ControlCountMismatch {
                expected,
                got: control_points.len(),
            });
        }
        if weights.len() != expected {
            return Err(NurbsError::WeightCountMismatch {
                expected,
                got: weights.len(),
            });
        }
        check_weights(&weights)?;
        Ok(Self {
            knots,
            control_points,
            weights,
        })
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn control_points(&self) -> &[Vec3] {
        &self.control_points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, xi: f64) -> Result<Vec3, NurbsError> {
        check_parameter(xi)?;
        let p = self.knots.degree();
        let span = self.knots.find_span(xi);
        let mut n = [0.0; MAX_DEGREE + 1];
        let mut dn = [0.0; MAX_DEGREE + 1];
        self.knots.basis_and_derivative(span, xi, &mut n, &mut dn);
        let mut numerator = Vec3::zeros();
        let mut denominator = 0.0;
        for (r, &b) in n.iter().enumerate().take(p + 1) {
            let k = span - p + r;
            let bw = b * self.weights[k];
            numerator += self.control_points[k] * bw;
            denominator += bw;
        }
        Ok(numerator / denominator)
    }
}

/// Point, tangents and surface measure of a patch at a reference coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub point: Vec3,
    pub du: Vec3,
    pub dv: Vec3,
    /// Unit normal `du x dv / |du x dv|`; zero where the Jacobian degenerates.
    pub normal: Vec3,
    /// `|du x dv|`, the area element per unit reference area.
    pub measure: f64,
    /// Set when `measure` falls below [`DEGENERATE_MEASURE`] of the patch scale.
    pub degenerate: bool,
}

/// Tensor-product NURBS map from `[0,1]^2` into 3-space.
///
/// Control points are stored row-major: index `i * count_v + j` holds the
/// point for basis `i` along `u` and basis `j` along `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsSurfacePatch {
    knots_u: KnotVector,
    knots_v: KnotVector,
    control_net: Vec<Vec3>,
    weights: Vec<f64>,
    /// Weighted control points `w * p` followed by `w`.
    homogeneous: Vec<[f64; 4]>,
    scale: f64,
}

impl NurbsSurfacePatch {
    pub fn new(
        knots_u: KnotVector,
        knots_v: KnotVector,
        control_net: Vec<Vec3>,
        weights: Vec<f64>,
    ) -> Result<Self, NurbsError> {
        let expected = knots_u.num_basis() * knots_v.num_basis();
        if control_net.len() != expected {
            return Err(NurbsError::ControlCountMismatch {
                expected,
                got: control_net.len(),
            });
        }
        if weights.len() != expected {
            return Err(NurbsError::WeightCountMismatch {
                expected,
                got: weights.len(),
            });
        }
        check_weights(&weights)?;
        let homogeneous = control_net
            .iter()
            .zip(&weights)
            .map(|(p, &w)| [p.x * w, p.y * w, p.z * w, w])
            .collect();
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &control_net {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let scale = (hi - lo).norm().max(f64::MIN_POSITIVE);
        Ok(Self {
            knots_u,
            knots_v,
            control_net,
            weights,
            homogeneous,
            scale,
        })
    }

    pub fn knots_u(&self) -> &KnotVector {
        &self.knots_u
    }

    pub fn knots_v(&self) -> &KnotVector {
        &self.knots_v
    }

    pub fn control_net(&self) -> &[Vec3] {
        &self.control_net
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of control points along `u` and `v`.
    pub fn grid_size(&self) -> (usize, usize) {
        (self.knots_u.num_basis(), self.knots_v.num_basis())
    }

    /// Bounding-box diagonal of the control net.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Applies `f` to every control point, keeping knots and weights.
    pub fn map_points(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        let net = self.control_net.iter().map(f).collect();
        Self::new(self.knots_u.clone(), self.knots_v.clone(), net, self.weights.clone())
            .expect("mapping control points preserves patch invariants")
    }

    /// Evaluates the map, its partial derivatives and the surface measure.
    ///
    /// Parameters are clamped to `[0, 1]`; use [`Self::try_eval`] for a checked call.
    pub fn eval(&self, u: f64, v: f64) -> SurfacePoint {
        let u = u.clamp(0.0, 1.0);
        let v = v.clamp(0.0, 1.0);
        let pu = self.knots_u.degree();
        let pv = self.knots_v.degree();
        let nv = self.knots_v.num_basis();
        let su = self.knots_u.find_span(u);
        let sv = self.knots_v.find_span(v);
        let mut bu = [0.0; MAX_DEGREE + 1];
        let mut dbu = [0.0; MAX_DEGREE + 1];
        let mut bv = [0.0; MAX_DEGREE + 1];
        let mut dbv = [0.0; MAX_DEGREE + 1];
        self.knots_u.basis_and_derivative(su, u, &mut bu, &mut dbu);
        self.knots_v.basis_and_derivative(sv, v, &mut bv, &mut dbv);

        let mut s = [0.0f64; 4];
        let mut s_u = [0.0f64; 4];
        let mut s_v = [0.0f64; 4];
        for a in 0..=pu {
            let row = (su - pu + a) * nv;
            let mut t = [0.0f64; 4];
            let mut t_v = [0.0f64; 4];
            for b in 0..=pv {
                let h = &self.homogeneous[row + sv - pv + b];
                for c in 0..4 {
                    t[c] += bv[b] * h[c];
                    t_v[c] += dbv[b] * h[c];
                }
            }
            for c in 0..4 {
                s[c] += bu[a] * t[c];
                s_u[c] += dbu[a] * t[c];
                s_v[c] += bu[a] * t_v[c];
            }
        }
        let w = s[3];
        let point = Vec3::new(s[0], s[1], s[2]) / w;
        let du = (Vec3::new(s_u[0], s_u[1], s_u[2]) - point * s_u[3]) / w;
        let dv = (Vec3::new(s_v[0], s_v[1], s_v[2]) - point * s_v[3]) / w;
        let cross = du.cross(&dv);
        let measure = cross.norm();
        let degenerate = measure < DEGENERATE_MEASURE * self.scale * self.scale;
        let normal = if degenerate { Vec3::zeros() } else { cross / measure };
        SurfacePoint {
            point,
            du,
            dv,
            normal,
            measure,
            degenerate,
        }
    }

    pub fn try_eval(&self, u: f64, v: f64) -> Result<SurfacePoint, NurbsError> {
        check_parameter(u)?;
        check_parameter(v)?;
        Ok(self.eval(u, v))
    }

    /// Mapped point only.
    pub fn point(&self, u: f64, v: f64) -> Vec3 {
        self.eval(u, v).point
    }
}
