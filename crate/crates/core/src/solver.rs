//! Direct solution of `P q = φ` and capacitance extraction.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, LU, Dyn};
use thiserror::Error;

use crate::assembly::{PotentialMatrix, RhsVector};
use crate::geometry::ElementMesh;

/// Pivots smaller than this fraction of the largest pivot are rejected.
pub const PIVOT_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("matrix is singular or ill-conditioned: pivot {pivot:e} at row {row} (largest {largest:e})")]
    Singular { row: usize, pivot: f64, largest: f64 },
    #[error("dimension mismatch: matrix {matrix}, vector {vector}")]
    Dimension { matrix: usize, vector: usize },
    #[error("matrix is empty")]
    Empty,
    #[error("unknown domain {0}")]
    UnknownDomain(u32),
}

/// Element charges (C); entry `i` is the total charge on element `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeVector(pub DVector<f64>);

impl ChargeVector {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// LU factorization with partial pivoting, reusable across right-hand sides.
pub struct DirectSolver {
    lu: LU<f64, Dyn, Dyn>,
}

impl DirectSolver {
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self, SolverError> {
        if matrix.is_empty() {
            return Err(SolverError::Empty);
        }
        let lu = matrix.clone().lu();
        let diag = lu.u().diagonal();
        let largest = diag.amax();
        for (row, &pivot) in diag.iter().enumerate() {
            if !(pivot.abs() > PIVOT_TOLERANCE * largest) {
                return Err(SolverError::Singular { row, pivot, largest });
            }
        }
        Ok(Self { lu })
    }

    pub fn dim(&self) -> usize {
        self.lu.u().nrows()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
        if rhs.len() != self.dim() {
            return Err(SolverError::Dimension {
                matrix: self.dim(),
                vector: rhs.len(),
            });
        }
        self.lu.solve(rhs).ok_or(SolverError::Singular {
            row: 0,
            pivot: 0.0,
            largest: 0.0,
        })
    }
}

/// Solves `P q = φ` by dense LU.
pub fn solve_direct(p: &PotentialMatrix, rhs: &RhsVector) -> Result<ChargeVector, SolverError> {
    let solver = DirectSolver::new(p.matrix())?;
    Ok(ChargeVector(solver.solve(&rhs.0)?))
}

/// Sum of element charges per domain tag.
pub fn charges_by_tag(q: &ChargeVector, tags: &[u32]) -> BTreeMap<u32, f64> {
    let mut out = BTreeMap::new();
    for (&d, &qi) in tags.iter().zip(q.as_slice()) {
        *out.entry(d).or_insert(0.0) += qi;
    }
    out
}

/// Total charge per electrode, `Q_d = Σ_{i in d} q_i`.
pub fn electrode_charges(q: &ChargeVector, mesh: &ElementMesh) -> BTreeMap<u32, f64> {
    charges_by_tag(q, &mesh.domain_tags())
}

/// Square capacitance matrix (F), electrode- or patch-level.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacitanceMatrix(pub DMatrix<f64>);

impl CapacitanceMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.0[(k, l)]
    }

    /// `max|C - Cᵀ| / max|C|`.
    pub fn asymmetry(&self) -> f64 {
        let max = self.0.amax();
        if max == 0.0 {
            0.0
        } else {
            (&self.0 - self.0.transpose()).amax() / max
        }
    }

    /// Number of two-terminal capacitors in the network: self terms plus
    /// non-zero mutual terms above the diagonal.
    pub fn partial_capacitance_count(&self) -> usize {
        let n = self.dim();
        let mutual = (0..n).flat_map(|k| (k + 1..n).map(move |l| (k, l))).filter(|&(k, l)| self.get(k, l) != 0.0).count();
        n + mutual
    }
}

/// Electrode-level Maxwell matrix: column `d` holds the electrode charges for
/// unit potential on domain `d + 1` and zero elsewhere.
pub fn maxwell_capacitance_by_tags(p: &PotentialMatrix, tags: &[u32]) -> Result<CapacitanceMatrix, SolverError> {
    if tags.len() != p.dim() {
        return Err(SolverError::Dimension {
            matrix: p.dim(),
            vector: tags.len(),
        });
    }
    let domains = tags.iter().copied().max().unwrap_or(0) as usize;
    let solver = DirectSolver::new(p.matrix())?;
    let mut c = DMatrix::zeros(domains, domains);
    for d in 1..=domains {
        let rhs = DVector::from_iterator(tags.len(), tags.iter().map(|&t| if t as usize == d { 1.0 } else { 0.0 }));
        let q = ChargeVector(solver.solve(&rhs)?);
        for (k, qk) in charges_by_tag(&q, tags) {
            c[(k as usize - 1, d - 1)] = qk;
        }
    }
    Ok(CapacitanceMatrix(c))
}

pub fn maxwell_capacitance_electrodes(p: &PotentialMatrix, mesh: &ElementMesh) -> Result<CapacitanceMatrix, SolverError> {
    maxwell_capacitance_by_tags(p, &mesh.domain_tags())
}

/// Patch-level Maxwell matrix `C_M = P⁻¹`.
pub fn maxwell_capacitance_patches(p: &PotentialMatrix) -> Result<CapacitanceMatrix, SolverError> {
    let solver = DirectSolver::new(p.matrix())?;
    let n = p.dim();
    let mut c = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        c.set_column(k, &solver.solve(&e)?);
    }
    Ok(CapacitanceMatrix(c))
}

/// Short-circuit matrix: `C_kl = -C_M,kl` off the diagonal, `C_kk = Σ_l C_M,kl`.
pub fn short_circuit_matrix(maxwell: &CapacitanceMatrix) -> CapacitanceMatrix {
    let n = maxwell.dim();
    let mut c = DMatrix::zeros(n, n);
    for k in 0..n {
        for l in 0..n {
            c[(k, l)] = if k == l { maxwell.0.row(k).sum() } else { -maxwell.get(k, l) };
        }
    }
    CapacitanceMatrix(c)
}

/// Charge on `driven` per volt with `driven` at 1 V and all other domains at 0 V.
pub fn two_terminal_capacitance(p: &PotentialMatrix, tags: &[u32], driven: u32) -> Result<f64, SolverError> {
    if !tags.contains(&driven) {
        return Err(SolverError::UnknownDomain(driven));
    }
    let solver = DirectSolver::new(p.matrix())?;
    let rhs = DVector::from_iterator(tags.len(), tags.iter().map(|&t| if t == driven { 1.0 } else { 0.0 }));
    let q = ChargeVector(solver.solve(&rhs)?);
    Ok(charges_by_tag(&q, tags)[&driven])
}

/// `4πε0 / (1/r_in − 1/r_out)` for concentric spheres.
pub fn concentric_capacitance(r_in: f64, r_out: f64) -> f64 {
    4.0 * std::f64::consts::PI * crate::assembly::EPSILON_0 / (1.0 / r_in - 1.0 / r_out)
}

/// `4πε0 r` for an isolated sphere.
pub fn sphere_capacitance(radius: f64) -> f64 {
    4.0 * std::f64::consts::PI * crate::assembly::EPSILON_0 * radius
}

/// One refinement level of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub level: u32,
    pub dof: usize,
    pub capacitance: f64,
    pub rel_error: f64,
}

/// Least-squares slope of `−log(err)` against `log(dof)`.
///
/// Multiply by 2 for the rate in `h` on a surface (`dof ∝ h⁻²`).
pub fn fitted_slope(rows: &[ConvergenceRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.rel_error > 0.0)
        .map(|r| ((r.dof as f64).ln(), r.rel_error.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -sxy / sxx
}

/// Error at `dof` by log-log interpolation between the bracketing rows
/// (extrapolation from the nearest two outside the range).
pub fn error_at_dof(rows: &[ConvergenceRow], dof: f64) -> f64 {
    if rows.len() < 2 {
        return rows.first().map_or(f64::NAN, |r| r.rel_error);
    }
    let k = rows.windows(2).position(|w| (w[1].dof as f64) >= dof).unwrap_or(rows.len() - 2);
    let (a, b) = (rows[k], rows[k + 1]);
    let t = (dof.ln() - (a.dof as f64).ln()) / ((b.dof as f64).ln() - (a.dof as f64).ln());
    (a.rel_error.ln() + t * (b.rel_error.ln() - a.rel_error.ln())).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn scalar_system() {
        let p = PotentialMatrix::from_matrix(DMatrix::from_element(1, 1, 4.0));
        let q = solve_direct(&p, &RhsVector(DVector::from_element(1, 2.0))).unwrap();
        assert_eq!(q.as_slice(), &[0.5]);
    }

    #[test]
    fn manufactured_spd_solution() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = DMatrix::from_fn(10, 10, |_, _| rng.gen_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(10, 10) * 10.0;
        let q_true = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
        let p = PotentialMatrix::from_matrix(spd);
        let phi = p.matrix() * &q_true;
        let q = solve_direct(&p, &RhsVector(phi)).unwrap();
        for (a, b) in q.as_slice().iter().zip(q_true.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let p = PotentialMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
        let err = solve_direct(&p, &RhsVector(DVector::from_vec(vec![1.0, 1.0]))).unwrap_err();
        assert!(matches!(err, SolverError::Singular { .. }));
    }

    #[test]
    fn short_circuit_of_single_electrode_is_identity_transform() {
        let cm = CapacitanceMatrix(DMatrix::from_element(1, 1, 3.0e-12));
        assert_eq!(short_circuit_matrix(&cm), cm);
    }

    #[test]
    fn slope_and_interpolation() {
        let rows: Vec<ConvergenceRow> = [(10usize, 1e-2), (40, 2.5e-3), (160, 6.25e-4)]
            .iter()
            .enumerate()
            .map(|(k, &(dof, e))| ConvergenceRow { level: k as u32, dof, capacitance: 0.0, rel_error: e })
            .collect();
        assert_relative_eq!(fitted_slope(&rows), 1.0, epsilon = 1e-12);
        assert_relative_eq!(error_at_dof(&rows, 20.0), 5e-3, epsilon = 1e-15);
        assert_relative_eq!(error_at_dof(&rows, 320.0), 3.125e-4, epsilon = 1e-15);
    }

    #[test]
    fn analytic_references() {
        assert_relative_eq!(concentric_capacitance(0.1, 0.2), 22.25e-12, max_relative = 1e-3);
        assert_relative_eq!(sphere_capacitance(1.0), 1.1126500560e-10, max_relative = 1e-9);
    }

    #[test]
    fn short_circuit_signs() {
        let cm = CapacitanceMatrix(DMatrix::from_row_slice(2, 2, &[5.0, -2.0, -2.0, 4.0]));
        let c = short_circuit_matrix(&cm);
        assert_eq!(c.0, DMatrix::from_row_slice(2, 2, &[3.0, 2.0, 2.0, 2.0]));
        assert_eq!(c.partial_capacitance_count(), 3);
    }
}
