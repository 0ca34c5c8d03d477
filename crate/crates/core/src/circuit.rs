//! Netlist parser and a small AC modified-nodal-analysis solver used to check
//! that the stamped circuit reproduces the direct solution.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::assembly::{assemble_rhs_from_tags, AssemblyError, PotentialMatrix};
use crate::netlist::{self, Capacitor, Cccs, Netlist, NetlistError, VoltageSource};
use crate::solver::{self, SolverError};

type C64 = Complex<f64>;

/// Relative backward error accepted for the MNA solution.
pub const MNA_RESIDUAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CircuitError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown card `{card}`")]
    UnknownCard { line: usize, card: String },
    #[error("line {line}: `{name}` refers to missing source `{reference}`")]
    DanglingReference { line: usize, name: String, reference: String },
    #[error("no components")]
    Empty,
    #[error("angular frequency must be positive and finite, got {0}")]
    Omega(f64),
    #[error("domain {0} has no node in this netlist")]
    UnknownDomain(u32),
    #[error("MNA matrix is singular (floating subcircuit?)")]
    Singular,
    #[error("MNA residual {0:e} exceeds tolerance")]
    Residual(f64),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{0}")]
    Assembly(String),
}

impl From<AssemblyError> for CircuitError {
    fn from(e: AssemblyError) -> Self {
        CircuitError::Assembly(e.to_string())
    }
}

fn parse_node(token: &str, line: usize) -> Result<u32, CircuitError> {
    token.parse().map_err(|_| CircuitError::Parse {
        line,
        message: format!("invalid node `{token}`"),
    })
}

fn parse_value(token: &str, line: usize) -> Result<f64, CircuitError> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CircuitError::Parse {
            line,
            message: format!("invalid value `{token}`"),
        }),
    }
}

fn expect_fields<'a>(fields: &'a [&'a str], count: usize, line: usize) -> Result<&'a [&'a str], CircuitError> {
    if fields.len() == count {
        Ok(fields)
    } else {
        Err(CircuitError::Parse {
            line,
            message: format!("`{}` needs {} fields, found {}", fields[0], count, fields.len()),
        })
    }
}

/// Parses netlist text: `C`, `V`, `F` and `Vsrc_<d>` cards, `*` comment lines,
/// trailing `;` comments and an optional `.end`.
pub fn parse_netlist_str(text: &str) -> Result<Netlist, CircuitError> {
    let mut out = Netlist::default();
    let mut control_lines = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split(';').next().unwrap_or("").trim();
        if body.is_empty() || body.starts_with('*') {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        let name = fields[0];
        if name.eq_ignore_ascii_case(".end") {
            break;
        }
        let kind = name.chars().next().map(|c| c.to_ascii_uppercase());
        match kind {
            Some('C') => {
                let f = expect_fields(&fields, 4, line)?;
                out.capacitors.push(Capacitor {
                    name: name.into(),
                    pos: parse_node(f[1], line)?,
                    neg: parse_node(f[2], line)?,
                    farad: parse_value(f[3], line)?,
                });
            }
            Some('V') => {
                let f = expect_fields(&fields, 4, line)?;
                let source = VoltageSource {
                    name: name.into(),
                    pos: parse_node(f[1], line)?,
                    neg: parse_node(f[2], line)?,
                    volt: parse_value(f[3], line)?,
                };
                if name.to_ascii_lowercase().starts_with("vsrc_") {
                    out.excitations.push(source);
                } else {
                    out.vsources.push(source);
                }
            }
            Some('F') => {
                let f = expect_fields(&fields, 5, line)?;
                out.cccs.push(Cccs {
                    name: name.into(),
                    pos: parse_node(f[1], line)?,
                    neg: parse_node(f[2], line)?,
                    control: f[3].into(),
                    gain: parse_value(f[4], line)?,
                });
                control_lines.push(line);
            }
            _ => {
                return Err(CircuitError::UnknownCard {
                    line,
                    card: name.into(),
                })
            }
        }
    }
    if out.component_count() == 0 {
        return Err(CircuitError::Empty);
    }
    for (f, &line) in out.cccs.iter().zip(&control_lines) {
        if !out.vsources.iter().chain(&out.excitations).any(|v| v.name == f.control) {
            return Err(CircuitError::DanglingReference {
                line,
                name: f.name.clone(),
                reference: f.control.clone(),
            });
        }
    }
    out.n_patches = out.capacitors.len();
    out.n_domains = out.max_node().saturating_sub(out.n_patches as u32) as usize;
    Ok(out)
}

pub fn parse_netlist(path: impl AsRef<Path>) -> Result<Netlist, CircuitError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CircuitError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_netlist_str(&text)
}

/// Excitations declared in the file as `Vsrc_<d>` cards, keyed by domain.
pub fn excitation_map(netlist: &Netlist) -> BTreeMap<u32, f64> {
    netlist
        .excitations
        .iter()
        .filter(|v| v.neg == 0 && v.pos as usize > netlist.n_patches)
        .map(|v| (v.pos - netlist.n_patches as u32, v.volt))
        .collect()
}

/// Solution of the MNA system.
#[derive(Debug, Clone, PartialEq)]
pub struct MnaSolution {
    pub omega: f64,
    /// Node voltages; index 0 is ground.
    pub node_voltages: Vec<C64>,
    /// Branch current of every voltage source, from `pos` through the source to `neg`.
    pub source_currents: BTreeMap<String, C64>,
    /// `‖A x − b‖∞ / (‖A‖∞ ‖x‖∞ + ‖b‖∞)`.
    pub residual: f64,
}

/// Assembles and solves the complex MNA system with every domain in
/// `excitations` driven by an ideal source to ground. `Vsrc_` cards stored in
/// the netlist are ignored; pass them through [`excitation_map`].
pub fn mna_solve(netlist: &Netlist, excitations: &BTreeMap<u32, f64>, omega: f64) -> Result<MnaSolution, CircuitError> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(CircuitError::Omega(omega));
    }
    let drives: Vec<VoltageSource> = excitations
        .iter()
        .map(|(&d, &volt)| {
            if d == 0 || d as usize > netlist.n_domains {
                return Err(CircuitError::UnknownDomain(d));
            }
            Ok(VoltageSource {
                name: format!("Vsrc_{d}"),
                pos: netlist.domain_node(d),
                neg: 0,
                volt,
            })
        })
        .collect::<Result<_, _>>()?;
    let sources: Vec<&VoltageSource> = netlist.vsources.iter().chain(&drives).collect();
    let nodes = netlist.max_node() as usize;
    let dim = nodes + sources.len();
    let source_index: HashMap<&str, usize> = sources.iter().enumerate().map(|(k, v)| (v.name.as_str(), nodes + k)).collect();

    let mut a = DMatrix::<C64>::zeros(dim, dim);
    let mut b = DVector::<C64>::zeros(dim);
    // Row/column of a node, or None for ground.
    let row = |node: u32| (node as usize).checked_sub(1);

    for c in &netlist.capacitors {
        let y = C64::new(0.0, omega * c.farad);
        let (p, n) = (row(c.pos), row(c.neg));
        if let Some(p) = p {
            a[(p, p)] += y;
        }
        if let Some(n) = n {
            a[(n, n)] += y;
        }
        if let (Some(p), Some(n)) = (p, n) {
            a[(p, n)] -= y;
            a[(n, p)] -= y;
        }
    }
    for (k, v) in sources.iter().enumerate() {
        let col = nodes + k;
        if let Some(p) = row(v.pos) {
            a[(p, col)] += C64::new(1.0, 0.0);
            a[(col, p)] += C64::new(1.0, 0.0);
        }
        if let Some(n) = row(v.neg) {
            a[(n, col)] -= C64::new(1.0, 0.0);
            a[(col, n)] -= C64::new(1.0, 0.0);
        }
        b[col] = C64::new(v.volt, 0.0);
    }
    for f in &netlist.cccs {
        let col = *source_index.get(f.control.as_str()).ok_or_else(|| CircuitError::DanglingReference {
            line: 0,
            name: f.name.clone(),
            reference: f.control.clone(),
        })?;
        if let Some(p) = row(f.pos) {
            a[(p, col)] += C64::new(f.gain, 0.0);
        }
        if let Some(n) = row(f.neg) {
            a[(n, col)] -= C64::new(f.gain, 0.0);
        }
    }

    let x = a.clone().lu().solve(&b).ok_or(CircuitError::Singular)?;
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(CircuitError::Singular);
    }
    let inf_norm = |m: &DMatrix<C64>| m.row_iter().map(|r| r.iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max);
    let vec_norm = |v: &DVector<C64>| v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let denom = inf_norm(&a) * vec_norm(&x) + vec_norm(&b);
    let residual = if denom > 0.0 { vec_norm(&(&a * &x - &b)) / denom } else { 0.0 };
    if residual > MNA_RESIDUAL_TOLERANCE {
        return Err(CircuitError::Residual(residual));
    }

    let mut node_voltages = vec![C64::new(0.0, 0.0)];
    node_voltages.extend(x.iter().take(nodes));
    let source_currents = sources.iter().enumerate().map(|(k, v)| (v.name.clone(), x[nodes + k])).collect();
    Ok(MnaSolution {
        omega,
        node_voltages,
        source_currents,
        residual,
    })
}

/// Largest net current into any non-ground node, relative to the largest branch current.
pub fn kcl_residual(netlist: &Netlist, solution: &MnaSolution) -> f64 {
    let v = &solution.node_voltages;
    let mut net = vec![C64::new(0.0, 0.0); v.len()];
    let mut scale: f64 = 0.0;
    let mut flow = |from: u32, to: u32, i: C64| {
        net[from as usize] -= i;
        net[to as usize] += i;
        scale = scale.max(i.norm());
    };
    for c in &netlist.capacitors {
        let i = C64::new(0.0, solution.omega * c.farad) * (v[c.pos as usize] - v[c.neg as usize]);
        flow(c.pos, c.neg, i);
    }
    for (name, &i) in &solution.source_currents {
        let source = netlist.vsources.iter().find(|s| &s.name == name);
        let (pos, neg) = match source {
            Some(s) => (s.pos, s.neg),
            None => {
                let d: u32 = name.trim_start_matches("Vsrc_").parse().expect("drive name");
                (netlist.domain_node(d), 0)
            }
        };
        flow(pos, neg, i);
    }
    for f in &netlist.cccs {
        flow(f.pos, f.neg, solution.source_currents[&f.control] * f.gain);
    }
    if scale == 0.0 {
        return 0.0;
    }
    net.iter().skip(1).map(|c| c.norm()).fold(0.0, f64::max) / scale
}

/// Element charges `q_i = I(V_i) / (i ω)` read from the sense sources, and the
/// largest imaginary part relative to the largest charge.
pub fn extract_charges(netlist: &Netlist, solution: &MnaSolution) -> (Vec<f64>, f64) {
    let mut q = vec![C64::new(0.0, 0.0); netlist.n_patches];
    for v in &netlist.vsources {
        if let Some(slot) = (v.neg as usize).checked_sub(1).and_then(|i| q.get_mut(i)) {
            *slot = solution.source_currents[&v.name] / C64::new(0.0, solution.omega);
        }
    }
    let max_re = q.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
    let max_im = q.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    let contamination = if max_re > 0.0 { max_im / max_re } else { max_im };
    (q.iter().map(|c| c.re).collect(), contamination)
}

/// `max_i |a_i − b_i| / max_i |b_i|`, zero when both vectors vanish.
pub fn relative_mismatch(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    /// Mismatch of the full-precision in-memory netlist.
    pub mismatch: f64,
    /// Mismatch after writing and re-reading the 5-digit netlist text.
    pub file_mismatch: f64,
    pub n: usize,
    pub omega: f64,
}

/// Limit on the in-memory mismatch.
pub const VERIFY_TOLERANCE: f64 = 1e-8;
/// Limit on the mismatch through the 5-digit text.
pub const VERIFY_FILE_TOLERANCE: f64 = 5e-5;

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.mismatch <= VERIFY_TOLERANCE && self.file_mismatch <= VERIFY_FILE_TOLERANCE
    }
}

/// Stamps `P`, solves the circuit by MNA both in memory and through the
/// rendered text (written to `file` when given), and compares the charges with
/// the direct LU solution.
pub fn verify_netlist(
    p: &PotentialMatrix,
    tags: &[u32],
    excitations: &BTreeMap<u32, f64>,
    omega: f64,
    file: Option<&Path>,
) -> Result<VerifyReport, CircuitError> {
    let reference = solver::solve_direct(p, &assemble_rhs_from_tags(tags, excitations)?)?;
    let stamped = netlist::stamp_with_tags(p, tags)?;
    let from_text = match file {
        Some(path) => {
            netlist::write_netlist(&stamped, path)?;
            parse_netlist(path)?
        }
        None => parse_netlist_str(&netlist::render(&stamped))?,
    };
    let charges = |n: &Netlist| -> Result<Vec<f64>, CircuitError> {
        let sol = mna_solve(n, excitations, omega)?;
        Ok(extract_charges(n, &sol).0)
    };
    Ok(VerifyReport {
        mismatch: relative_mismatch(&charges(&stamped)?, reference.as_slice()),
        file_mismatch: relative_mismatch(&charges(&from_text)?, reference.as_slice()),
        n: p.dim(),
        omega,
    })
}
