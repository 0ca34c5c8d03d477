//! Equivalent-circuit stamping and SPICE netlist output.
//!
//! Node map: ground is 0, element `i` is node `i`, domain `d` is node `N + d`.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::assembly::PotentialMatrix;
use crate::geometry::ElementMesh;

pub const HEADER: &str = "* iga-peec netlist";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetlistError {
    #[error("diagonal entry P[{index}][{index}] = {value} is not positive")]
    Diagonal { index: usize, value: f64 },
    #[error("{tags} domain tags for a {dim}x{dim} matrix")]
    TagCount { tags: usize, dim: usize },
    #[error("domain tags must be numbered from 1, found {0}")]
    TagValue(u32),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capacitor {
    pub name: String,
    pub pos: u32,
    pub neg: u32,
    pub farad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSource {
    pub name: String,
    pub pos: u32,
    pub neg: u32,
    pub volt: f64,
}

/// Current-controlled current source: `gain * I(control)` flows from `pos`
/// through the source to `neg`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cccs {
    pub name: String,
    pub pos: u32,
    pub neg: u32,
    pub control: String,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Netlist {
    pub n_patches: usize,
    pub n_domains: usize,
    pub capacitors: Vec<Capacitor>,
    pub vsources: Vec<VoltageSource>,
    pub cccs: Vec<Cccs>,
    /// `Vsrc_<d>` cards driving domain nodes; never produced by [`stamp`].
    pub excitations: Vec<VoltageSource>,
}

impl Netlist {
    pub fn domain_node(&self, domain: u32) -> u32 {
        self.n_patches as u32 + domain
    }

    pub fn component_count(&self) -> usize {
        self.capacitors.len() + self.vsources.len() + self.cccs.len() + self.excitations.len()
    }

    /// Highest node number referenced by any card.
    pub fn max_node(&self) -> u32 {
        let caps = self.capacitors.iter().flat_map(|c| [c.pos, c.neg]);
        let vs = self.vsources.iter().chain(&self.excitations).flat_map(|v| [v.pos, v.neg]);
        let fs = self.cccs.iter().flat_map(|f| [f.pos, f.neg]);
        caps.chain(vs).chain(fs).max().unwrap_or(0)
    }
}

/// Stamps the circuit of `P q = φ` with explicit per-element domain tags.
pub fn stamp_with_tags(p: &PotentialMatrix, tags: &[u32]) -> Result<Netlist, NetlistError> {
    let n = p.dim();
    if tags.len() != n {
        return Err(NetlistError::TagCount { tags: tags.len(), dim: n });
    }
    if let Some(&t) = tags.iter().find(|&&t| t == 0) {
        return Err(NetlistError::TagValue(t));
    }
    for i in 0..n {
        let value = p.get(i, i);
        if !(value > 0.0) {
            return Err(NetlistError::Diagonal { index: i, value });
        }
    }
    let node = |i: usize| i as u32 + 1;
    let capacitors = (0..n)
        .map(|i| Capacitor {
            name: format!("C_{}", i + 1),
            pos: 0,
            neg: node(i),
            farad: 1.0 / p.get(i, i),
        })
        .collect();
    let vsources = (0..n)
        .map(|i| VoltageSource {
            name: format!("V_{}", i + 1),
            pos: n as u32 + tags[i],
            neg: node(i),
            volt: 0.0,
        })
        .collect();
    let mut cccs = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            cccs.push(Cccs {
                name: format!("F_{}_{}", i + 1, j + 1),
                pos: 0,
                neg: node(i),
                control: format!("V_{}", j + 1),
                gain: p.get(i, j) / p.get(i, i),
            });
        }
    }
    Ok(Netlist {
        n_patches: n,
        n_domains: tags.iter().copied().max().unwrap_or(0) as usize,
        capacitors,
        vsources,
        cccs,
        excitations: Vec::new(),
    })
}

pub fn stamp(p: &PotentialMatrix, mesh: &ElementMesh) -> Result<Netlist, NetlistError> {
    stamp_with_tags(p, &mesh.domain_tags())
}

/// Five significant digits in the style of C's `%.5g`.
pub fn format_value(value: f64) -> String {
    if value == 0.0 {
        return "0".into();
    }
    if !value.is_finite() {
        return value.to_string();
    }
    let sci = format!("{value:.4e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..5).contains(&exp) {
        let fixed = format!("{:.*}", (4 - exp) as usize, value);
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Text of the netlist file.
pub fn render(netlist: &Netlist) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for c in &netlist.capacitors {
        let _ = writeln!(out, "{} {} {} {}", c.name, c.pos, c.neg, format_value(c.farad));
    }
    for v in &netlist.vsources {
        let _ = writeln!(out, "{} {} {} {}", v.name, v.pos, v.neg, format_value(v.volt));
    }
    for f in &netlist.cccs {
        let _ = writeln!(out, "{} {} {} {} {}", f.name, f.pos, f.neg, f.control, format_value(f.gain));
    }
    for v in &netlist.excitations {
        let _ = writeln!(out, "{} {} {} {}", v.name, v.pos, v.neg, format_value(v.volt));
    }
    out
}

pub fn write_netlist(netlist: &Netlist, path: impl AsRef<Path>) -> Result<(), NetlistError> {
    let path = path.as_ref();
    std::fs::write(path, render(netlist)).map_err(|e| NetlistError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
