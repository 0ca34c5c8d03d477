//! Command-line front end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::assembly::{self, PotentialMatrix};
use crate::baseline_tri;
use crate::circuit;
use crate::geometry::{self, ElementMesh, MultiPatchGeometry};
use crate::netlist;
use crate::nurbs::Vec3;
use crate::quadrature::QuadConfig;
use crate::solver::{self, ConvergenceRow};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn numerical_err(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

impl From<assembly::AssemblyError> for CliError {
    fn from(e: assembly::AssemblyError) -> Self {
        match e {
            assembly::AssemblyError::MissingPotential(_) | assembly::AssemblyError::ThreadPool(_) | assembly::AssemblyError::Dump { .. } => {
                config_err(e)
            }
            _ => numerical_err(e),
        }
    }
}

impl From<solver::SolverError> for CliError {
    fn from(e: solver::SolverError) -> Self {
        match e {
            solver::SolverError::UnknownDomain(_) | solver::SolverError::Dimension { .. } => config_err(e),
            _ => numerical_err(e),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "iga-peec", version, about = "Spline-based PEEC capacitance extraction and netlist generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the electrode charges and print the capacitance report (JSON).
    Capacitance(SolveArgs),
    /// Capacitance error against the analytic value over refinement levels (CSV).
    Convergence(ConvergenceArgs),
    /// Write the equivalent-circuit netlist, optionally checking it by MNA.
    Netlist(NetlistArgs),
    /// Per-element charges and surface charge densities (CSV).
    Charges(SolveArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// `spheres:<r_in>,<r_out>`, `sphere:<r>` or a geometry JSON file.
    #[arg(long)]
    pub geometry: Option<String>,
    /// Uniform refinement level L (4^L elements per patch).
    #[arg(long, default_value_t = 0)]
    pub level: u32,
    #[arg(long, default_value_t = QuadConfig::default().base_order)]
    pub quad_base: usize,
    #[arg(long, default_value_t = QuadConfig::default().near_increment_cap)]
    pub quad_near_cap: usize,
    #[arg(long, default_value_t = QuadConfig::default().singular_order)]
    pub quad_singular: usize,
    /// Assembly worker threads.
    #[arg(long, env = "IGA_PEEC_THREADS")]
    pub threads: Option<usize>,
}

impl CommonArgs {
    pub fn quad_config(&self) -> Result<QuadConfig, CliError> {
        let config = QuadConfig {
            base_order: self.quad_base,
            near_increment_cap: self.quad_near_cap,
            singular_order: self.quad_singular,
        };
        config.validate().map_err(config_err)?;
        Ok(config)
    }

    fn source(&self) -> Result<GeometrySource, CliError> {
        let spec = self.geometry.as_deref().ok_or_else(|| config_err("--geometry is required"))?;
        GeometrySource::parse(spec)
    }

    fn threads(&self) -> Result<Option<usize>, CliError> {
        match self.threads {
            Some(0) => Err(config_err("--threads must be at least 1")),
            t => Ok(t),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Domain potential as `<domain>=<volt>`; repeatable. Without any, domain 1
    /// is at 1 V and all others at 0 V.
    #[arg(long = "potential", value_parser = parse_potential)]
    pub potentials: Vec<(u32, f64)>,
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated refinement levels.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    pub levels: Vec<u32>,
    /// Flat-triangle baseline on icospheres; levels are subdivision counts.
    #[arg(long)]
    pub triangles: bool,
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct NetlistArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long = "potential", value_parser = parse_potential)]
    pub potentials: Vec<(u32, f64)>,
    #[arg(long)]
    pub netlist_out: Option<PathBuf>,
    /// Stamp from a binary matrix dump instead of assembling.
    #[arg(long, requires = "tags")]
    pub p_matrix: Option<PathBuf>,
    /// Per-element domain tags (whitespace or comma separated) for `--p-matrix`.
    #[arg(long)]
    pub tags: Option<PathBuf>,
    /// Write the assembled matrix as a binary dump.
    #[arg(long)]
    pub p_matrix_out: Option<PathBuf>,
    /// Check the netlist against the direct solution by MNA.
    #[arg(long)]
    pub verify: bool,
    /// Angular frequencies (rad/s) for `--verify`; defaults to 2π·50 and 2π·10⁶.
    #[arg(long, value_delimiter = ',')]
    pub omega: Vec<f64>,
}

fn parse_potential(s: &str) -> Result<(u32, f64), String> {
    let (d, v) = s.split_once('=').ok_or_else(|| format!("expected <domain>=<volt>, got `{s}`"))?;
    let d: u32 = d.trim().parse().map_err(|_| format!("invalid domain `{d}`"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("invalid voltage `{v}`"))?;
    if d == 0 || !v.is_finite() {
        return Err(format!("invalid potential `{s}`"));
    }
    Ok((d, v))
}

/// Geometry selected by `--geometry`.
#[derive(Debug, Clone, PartialEq)]
pub enum GeometrySource {
    Spheres { r_in: f64, r_out: f64 },
    Sphere { radius: f64 },
    File(PathBuf),
}

impl GeometrySource {
    pub fn parse(spec: &str) -> Result<Self, CliError> {
        let numbers = |rest: &str| -> Result<Vec<f64>, CliError> {
            rest.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| config_err(format!("invalid number `{t}` in `{spec}`"))))
                .collect()
        };
        if let Some(rest) = spec.strip_prefix("spheres:") {
            match numbers(rest)?[..] {
                [r_in, r_out] => Ok(GeometrySource::Spheres { r_in, r_out }),
                _ => Err(config_err(format!("`{spec}`: expected spheres:<r_in>,<r_out>"))),
            }
        } else if let Some(rest) = spec.strip_prefix("sphere:") {
            match numbers(rest)?[..] {
                [radius] => Ok(GeometrySource::Sphere { radius }),
                _ => Err(config_err(format!("`{spec}`: expected sphere:<r>"))),
            }
        } else {
            Ok(GeometrySource::File(PathBuf::from(spec)))
        }
    }

    pub fn build(&self) -> Result<MultiPatchGeometry, CliError> {
        match self {
            GeometrySource::Spheres { r_in, r_out } => geometry::make_concentric_spheres(*r_in, *r_out),
            GeometrySource::Sphere { radius } => geometry::make_sphere(*radius, Vec3::zeros()),
            GeometrySource::File(path) => geometry::load_geometry(path),
        }
        .map_err(config_err)
    }

    /// Analytic two-terminal capacitance for the built-in geometries.
    pub fn analytic_capacitance(&self) -> Option<f64> {
        match self {
            GeometrySource::Spheres { r_in, r_out } => Some(solver::concentric_capacitance(*r_in, *r_out)),
            GeometrySource::Sphere { radius } => Some(solver::sphere_capacitance(*radius)),
            GeometrySource::File(_) => None,
        }
    }
}

/// Domain potentials: the given ones, all of which must be present, or the
/// default drive (domain 1 at 1 V, the rest at 0 V) when none are given.
pub fn resolve_potentials(given: &[(u32, f64)], domains: u32) -> Result<BTreeMap<u32, f64>, CliError> {
    if given.is_empty() {
        return Ok((1..=domains).map(|d| (d, if d == 1 { 1.0 } else { 0.0 })).collect());
    }
    let map: BTreeMap<u32, f64> = given.iter().copied().collect();
    if let Some(&d) = map.keys().find(|&&d| d > domains) {
        return Err(config_err(format!("domain {d} does not exist (geometry has {domains})")));
    }
    if let Some(d) = (1..=domains).find(|d| !map.contains_key(d)) {
        return Err(config_err(format!("no potential given for domain {d}; add --potential {d}=<volt>")));
    }
    Ok(map)
}

fn build_mesh(common: &CommonArgs) -> Result<(GeometrySource, ElementMesh), CliError> {
    let source = common.source()?;
    let geometry = source.build()?;
    Ok((source, geometry::refine(&geometry, common.level)))
}

fn assemble(mesh: &ElementMesh, common: &CommonArgs) -> Result<PotentialMatrix, CliError> {
    let config = common.quad_config()?;
    Ok(assembly::with_threads(common.threads()?, || assembly::assemble_potential_matrix(mesh, &config))??)
}

/// Capacitance report of `capacitance`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CapacitanceReport {
    #[serde(rename = "C_total_farad")]
    pub c_total_farad: f64,
    #[serde(rename = "Q_per_domain")]
    pub q_per_domain: BTreeMap<String, f64>,
    pub dof: usize,
}

/// Charge on domain 1 divided by its potential difference to the lowest
/// other domain potential (to 0 V for a single domain).
pub fn total_capacitance(charges: &BTreeMap<u32, f64>, potentials: &BTreeMap<u32, f64>) -> Result<f64, CliError> {
    let driven = potentials[&1];
    let reference = potentials.iter().filter(|(&d, _)| d != 1).map(|(_, &v)| v).reduce(f64::min).unwrap_or(0.0);
    let dv = driven - reference;
    if dv == 0.0 {
        return Err(config_err("domain 1 must be at a different potential than the reference"));
    }
    Ok(charges[&1] / dv)
}

pub fn cmd_capacitance(args: &SolveArgs) -> Result<CapacitanceReport, CliError> {
    let (_, mesh) = build_mesh(&args.common)?;
    let potentials = resolve_potentials(&args.potentials, mesh.num_domains())?;
    let p = assemble(&mesh, &args.common)?;
    let q = solver::solve_direct(&p, &assembly::assemble_rhs(&mesh, &potentials)?)?;
    let charges = solver::electrode_charges(&q, &mesh);
    Ok(CapacitanceReport {
        c_total_farad: total_capacitance(&charges, &potentials)?,
        q_per_domain: charges.iter().map(|(d, v)| (d.to_string(), *v)).collect(),
        dof: mesh.len(),
    })
}

/// Spline convergence rows for a built-in sphere geometry.
pub fn spline_convergence(source: &GeometrySource, levels: &[u32], config: &QuadConfig, threads: Option<usize>) -> Result<Vec<ConvergenceRow>, CliError> {
    let exact = source
        .analytic_capacitance()
        .ok_or_else(|| config_err("convergence needs a built-in geometry (spheres:… or sphere:…)"))?;
    let geometry = source.build()?;
    let mut rows = Vec::new();
    for &level in levels {
        let mesh = geometry::refine(&geometry, level);
        let p = assembly::with_threads(threads, || assembly::assemble_potential_matrix(&mesh, config))??;
        let capacitance = solver::two_terminal_capacitance(&p, &mesh.domain_tags(), 1)?;
        rows.push(ConvergenceRow {
            level,
            dof: mesh.len(),
            capacitance,
            rel_error: ((capacitance - exact) / exact).abs(),
        });
    }
    Ok(rows)
}

pub fn cmd_convergence(args: &ConvergenceArgs) -> Result<Vec<ConvergenceRow>, CliError> {
    let source = args.common.source()?;
    let config = args.common.quad_config()?;
    let threads = args.common.threads()?;
    if args.triangles {
        let GeometrySource::Spheres { r_in, r_out } = source else {
            return Err(config_err("--triangles needs --geometry spheres:<r_in>,<r_out>"));
        };
        if !(r_in > 0.0 && r_in < r_out) {
            return Err(config_err(format!("radii must satisfy 0 < r_in < r_out, got {r_in} and {r_out}")));
        }
        assembly::with_threads(threads, || baseline_tri::convergence_tri(r_in, r_out, &args.levels, &config))?
            .map_err(numerical_err)
    } else {
        spline_convergence(&source, &args.levels, &config, threads)
    }
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("level,dof,C_farad,rel_error\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.16e},{:.16e}", r.level, r.dof, r.capacitance, r.rel_error);
    }
    out
}

/// Rows of `charges`: element id, patch, domain, area, charge, density.
pub fn cmd_charges(args: &SolveArgs) -> Result<String, CliError> {
    let (_, mesh) = build_mesh(&args.common)?;
    let potentials = resolve_potentials(&args.potentials, mesh.num_domains())?;
    let p = assemble(&mesh, &args.common)?;
    let q = solver::solve_direct(&p, &assembly::assemble_rhs(&mesh, &potentials)?)?;
    let mut out = String::from("element,patch,domain,area_m2,charge_c,density_c_per_m2\n");
    for (i, (e, &qi)) in mesh.elements().iter().zip(q.as_slice()).enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{:.16e},{:.16e},{:.16e}",
            i + 1,
            e.patch + 1,
            e.domain,
            e.area,
            qi,
            qi / e.area
        );
    }
    Ok(out)
}

fn read_tags(path: &Path) -> Result<Vec<u32>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u32>().map_err(|_| config_err(format!("{}: invalid tag `{t}`", path.display()))))
        .collect()
}

/// Outcome of `netlist`: the stamped circuit and, with `--verify`, one report
/// per frequency.
pub struct NetlistOutcome {
    pub netlist: netlist::Netlist,
    pub reports: Vec<circuit::VerifyReport>,
}

pub fn cmd_netlist(args: &NetlistArgs) -> Result<NetlistOutcome, CliError> {
    let (p, tags) = match &args.p_matrix {
        Some(path) => {
            let p = PotentialMatrix::read_binary(path)?;
            let tags = read_tags(args.tags.as_deref().expect("clap enforces --tags"))?;
            (p, tags)
        }
        None => {
            let (_, mesh) = build_mesh(&args.common)?;
            (assemble(&mesh, &args.common)?, mesh.domain_tags())
        }
    };
    if let Some(path) = &args.p_matrix_out {
        p.write_binary(path)?;
    }
    let stamped = netlist::stamp_with_tags(&p, &tags).map_err(config_err)?;
    if let Some(path) = &args.netlist_out {
        netlist::write_netlist(&stamped, path).map_err(config_err)?;
    }
    let mut reports = Vec::new();
    if args.verify {
        let domains = tags.iter().copied().max().unwrap_or(0);
        let potentials = resolve_potentials(&args.potentials, domains)?;
        let omegas = if args.omega.is_empty() {
            vec![2.0 * std::f64::consts::PI * 50.0, 2.0 * std::f64::consts::PI * 1e6]
        } else {
            args.omega.clone()
        };
        for omega in omegas {
            let report = circuit::verify_netlist(&p, &tags, &potentials, omega, args.netlist_out.as_deref()).map_err(|e| match e {
                circuit::CircuitError::Omega(_) => config_err(e),
                _ => numerical_err(e),
            })?;
            reports.push(report);
        }
    }
    Ok(NetlistOutcome {
        netlist: stamped,
        reports,
    })
}

fn emit(text: &str, path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(path) => std::fs::write(path, text).map_err(|e| config_err(format!("{}: {e}", path.display()))),
        None => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            Ok(())
        }
    }
}

/// Runs a parsed command line, printing results to stdout.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Capacitance(args) => {
            let report = cmd_capacitance(args)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            println!("{json}");
            if let Some(path) = &args.csv_out {
                let mut csv = String::from("domain,charge_c\n");
                for (d, q) in &report.q_per_domain {
                    let _ = writeln!(csv, "{d},{q:.16e}");
                }
                emit(&csv, Some(path))?;
            }
        }
        Command::Convergence(args) => {
            let rows = cmd_convergence(args)?;
            emit(&convergence_csv(&rows), args.csv_out.as_deref())?;
            let slope = solver::fitted_slope(&rows);
            eprintln!("fitted slope: {slope:.3} vs dof, {:.3} vs h", 2.0 * slope);
        }
        Command::Netlist(args) => {
            let outcome = cmd_netlist(args)?;
            if args.netlist_out.is_none() {
                print!("{}", netlist::render(&outcome.netlist));
            } else {
                eprintln!("wrote {} components", outcome.netlist.component_count());
            }
            for report in &outcome.reports {
                println!("{}", serde_json::to_string(report).expect("report serializes"));
            }
            if let Some(bad) = outcome.reports.iter().find(|r| !r.passed()) {
                return Err(numerical_err(format!(
                    "netlist verification failed: mismatch {:e} (file {:e}) at omega {}",
                    bad.mismatch, bad.file_mismatch, bad.omega
                )));
            }
        }
        Command::Charges(args) => {
            let csv = cmd_charges(args)?;
            emit(&csv, args.csv_out.as_deref())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_specs() {
        assert_eq!(
            GeometrySource::parse("spheres:0.1,0.2").unwrap(),
            GeometrySource::Spheres { r_in: 0.1, r_out: 0.2 }
        );
        assert_eq!(GeometrySource::parse("sphere:1").unwrap(), GeometrySource::Sphere { radius: 1.0 });
        assert_eq!(GeometrySource::parse("a.json").unwrap(), GeometrySource::File("a.json".into()));
        assert!(GeometrySource::parse("spheres:0.1").is_err());
        assert!(GeometrySource::parse("sphere:x").is_err());
    }

    #[test]
    fn potentials() {
        assert_eq!(parse_potential("2=1.5").unwrap(), (2, 1.5));
        assert!(parse_potential("0=1").is_err());
        assert!(parse_potential("1").is_err());
        assert_eq!(resolve_potentials(&[], 2).unwrap(), BTreeMap::from([(1, 1.0), (2, 0.0)]));
        let err = resolve_potentials(&[(1, 1.0)], 2).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("domain 2"));
        assert!(resolve_potentials(&[(1, 1.0), (3, 0.0)], 2).is_err());
    }

    #[test]
    fn total_capacitance_definition() {
        let q = BTreeMap::from([(1, 2.0), (2, -2.0)]);
        let c = total_capacitance(&q, &BTreeMap::from([(1, 2.0), (2, 1.0)])).unwrap();
        assert_eq!(c, 2.0);
        assert!(total_capacitance(&q, &BTreeMap::from([(1, 1.0), (2, 1.0)])).is_err());
        let single = total_capacitance(&BTreeMap::from([(1, 3.0)]), &BTreeMap::from([(1, 1.5)])).unwrap();
        assert_eq!(single, 2.0);
    }

    #[test]
    fn csv_has_full_precision() {
        let rows = [ConvergenceRow { level: 0, dof: 12, capacitance: 1.0 / 3.0, rel_error: 0.1 }];
        let csv = convergence_csv(&rows);
        assert_eq!(csv.lines().nth(1).unwrap(), "0,12,3.3333333333333331e-1,1.0000000000000001e-1");
    }
}
