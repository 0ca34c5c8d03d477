//! Galerkin potential matrix and right-hand side for element-wise constant
//! basis functions scaled by `1 / element area`.
//!
//! With that scaling each unknown is the total charge on its element and
//! `P_ij = 1/(4 π ε0) ∬_Γi ∬_Γj 1/|r - r'| / (|Γi| |Γj|)`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::ElementMesh;
use crate::quadrature::{self, PairClass, QuadConfig, QuadratureError};

/// Vacuum permittivity (F/m).
pub const EPSILON_0: f64 = 8.8541878128e-12;

/// `1 / (4 π ε0)` in m/F.
pub fn coulomb_constant() -> f64 {
    1.0 / (4.0 * std::f64::consts::PI * EPSILON_0)
}

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("element {element} has non-positive area {area}")]
    Area { element: usize, area: f64 },
    #[error("no potential prescribed for domain {0}")]
    MissingPotential(u32),
    #[error("failed to build worker pool: {0}")]
    ThreadPool(String),
    #[error("{path}: {message}")]
    Dump { path: String, message: String },
}

/// Dense symmetric potential-coefficient matrix (1/F).
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialMatrix {
    entries: DMatrix<f64>,
    asymmetry: f64,
}

impl PotentialMatrix {
    /// Wraps raw entries; the matrix is symmetrized as `(P + Pᵀ)/2`.
    pub fn from_matrix(raw: DMatrix<f64>) -> Self {
        assert!(raw.is_square(), "potential matrix must be square");
        let max = raw.amax();
        let diff = (&raw - raw.transpose()).amax();
        let asymmetry = if max > 0.0 { diff / max } else { 0.0 };
        let entries = (&raw + raw.transpose()) * 0.5;
        Self { entries, asymmetry }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// `max|P - Pᵀ| / max|P|` of the raw assembled entries.
    pub fn asymmetry_before_symmetrization(&self) -> f64 {
        self.asymmetry
    }

    /// Row-major dump: little-endian `u64` dimension followed by `f64` entries.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<(), AssemblyError> {
        let path = path.as_ref();
        let n = self.dim();
        let mut bytes = Vec::with_capacity(8 + 8 * n * n);
        bytes.extend_from_slice(&(n as u64).to_le_bytes());
        for i in 0..n {
            for j in 0..n {
                bytes.extend_from_slice(&self.entries[(i, j)].to_le_bytes());
            }
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| AssemblyError::Dump {
                path: path.display().to_string(),
                message: e.to_string(),
            })
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self, AssemblyError> {
        let path = path.as_ref();
        let err = |message: String| AssemblyError::Dump {
            path: path.display().to_string(),
            message,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| err(e.to_string()))?;
        if bytes.len() < 8 {
            return Err(err("missing dimension header".into()));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let expected = n.checked_mul(n).and_then(|m| m.checked_mul(8)).map(|m| m + 8);
        if expected != Some(bytes.len()) {
            return Err(err(format!("expected {n}x{n} entries, file has {} bytes", bytes.len())));
        }
        let values: Vec<f64> = bytes[8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self::from_matrix(DMatrix::from_row_slice(n, n, &values)))
    }
}

/// Prescribed potential of each element's domain (V).
#[derive(Debug, Clone, PartialEq)]
pub struct RhsVector(pub DVector<f64>);

impl RhsVector {
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

/// Runs `f` inside a pool of `threads` workers, or on the global pool for `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, AssemblyError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| AssemblyError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Dense assembly of `scale * integral(i, j) / (area_i area_j)`, rows in parallel.
///
/// Every entry is computed independently, so the result does not depend on
/// the number of workers.
pub fn assemble_dense<F>(areas: &[f64], integral: F) -> Result<PotentialMatrix, AssemblyError>
where
    F: Fn(usize, usize) -> Result<f64, QuadratureError> + Sync,
{
    if let Some(element) = areas.iter().position(|&a| !(a > 0.0)) {
        return Err(AssemblyError::Area {
            element,
            area: areas[element],
        });
    }
    let n = areas.len();
    let k = coulomb_constant();
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n.max(1))
        .enumerate()
        .try_for_each(|(i, row)| -> Result<(), QuadratureError> {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = k * integral(i, j)? / (areas[i] * areas[j]);
            }
            Ok(())
        })?;
    Ok(PotentialMatrix::from_matrix(DMatrix::from_row_slice(n, n, &data)))
}

/// Precomputed far-field points per element and order.
struct FarFieldCache {
    base: usize,
    points: Vec<Vec<Vec<(crate::nurbs::Vec3, f64)>>>,
}

impl FarFieldCache {
    fn build(mesh: &ElementMesh, config: &QuadConfig) -> Result<Self, QuadratureError> {
        let base = config.base_order;
        let top = base + config.near_increment_cap;
        let points = (0..mesh.len())
            .into_par_iter()
            .map(|e| (base..=top).map(|order| mesh.far_field_points(e, order)).collect())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { base, points })
    }

    fn get(&self, element: usize, order: usize) -> &[(crate::nurbs::Vec3, f64)] {
        &self.points[element][order - self.base]
    }
}

/// Assembles the full matrix and symmetrizes it.
pub fn assemble_potential_matrix(mesh: &ElementMesh, config: &QuadConfig) -> Result<PotentialMatrix, AssemblyError> {
    config.validate()?;
    let cache = FarFieldCache::build(mesh, config)?;
    assemble_dense(&mesh.areas(), |i, j| {
        let class = quadrature::classify_pair(mesh, i, j);
        match class {
            PairClass::Separated(distance) => {
                let order = quadrature::separated_order(mesh, i, j, distance, config);
                let value = quadrature::regular_sum(cache.get(i, order), cache.get(j, order));
                if value.is_finite() && value > 0.0 {
                    Ok(value)
                } else {
                    Err(QuadratureError::NonFinite { i, j, value })
                }
            }
            _ => quadrature::pair_integral(mesh, i, j, class, config),
        }
    })
}

/// Same as [`assemble_potential_matrix`] on a dedicated pool of `threads` workers.
pub fn assemble_potential_matrix_threads(
    mesh: &ElementMesh,
    config: &QuadConfig,
    threads: usize,
) -> Result<PotentialMatrix, AssemblyError> {
    with_threads(Some(threads), || assemble_potential_matrix(mesh, config))?
}

/// Right-hand side from per-element domain tags.
pub fn assemble_rhs_from_tags(tags: &[u32], potentials: &BTreeMap<u32, f64>) -> Result<RhsVector, AssemblyError> {
    let values = tags
        .iter()
        .map(|d| potentials.get(d).copied().ok_or(AssemblyError::MissingPotential(*d)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RhsVector(DVector::from_vec(values)))
}

/// Entry `j` is the prescribed potential of element `j`'s domain.
pub fn assemble_rhs(mesh: &ElementMesh, potentials: &BTreeMap<u32, f64>) -> Result<RhsVector, AssemblyError> {
    for d in 1..=mesh.num_domains() {
        if !potentials.contains_key(&d) {
            return Err(AssemblyError::MissingPotential(d));
        }
    }
    assemble_rhs_from_tags(&mesh.domain_tags(), potentials)
}
