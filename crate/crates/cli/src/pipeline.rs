//! What each subcommand computes. Nothing here touches the filesystem; the
//! caller writes the returned [`Output`] once everything has succeeded.

use serde::Serialize;

use condenser_core::balayage::balayage_project;
use condenser_core::kernel::{equilibrium_measure, KernelSpec};
use condenser_core::model::{Condenser, Node};
use condenser_core::solver::{
    green_domain_for, green_matrix_for, lift_green_to_riesz, solve_green_reduced, solve_riesz, solve_sigma_variant, Diagnostics, Formulation, ProblemSpec, SolveResult, TraceRow,
};
use condenser_core::verify;
use condenser_core::Error;

use crate::config::{Config, PointCharge};

#[derive(Debug)]
pub enum Failure {
    /// unreadable or invalid config
    Config(String),
    Module(Error),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Module(e)
    }
}

pub struct AtomRow {
    pub plate: usize,
    pub position: Vec<f64>,
    pub weight: f64,
    pub cap: f64,
}

pub struct Output {
    pub dim: usize,
    pub results: toml::Table,
    pub atoms: Option<Vec<AtomRow>>,
    pub trace: Option<Vec<TraceRow>>,
    /// false when the solver stopped before meeting its tolerances
    pub converged: bool,
}

impl Output {
    fn new(dim: usize) -> Self {
        Output { dim, results: toml::Table::new(), atoms: None, trace: None, converged: true }
    }

    fn put<T: Serialize>(&mut self, key: &str, value: &T) -> Result<(), Failure> {
        let v = toml::Value::try_from(value).map_err(|e| Failure::Internal(format!("cannot serialize {key}: {e}")))?;
        self.results.insert(key.to_string(), v);
        Ok(())
    }
}

#[derive(Serialize)]
struct PlateSummary {
    plate: usize,
    sign: f64,
    nodes: usize,
    mass: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    constant: Option<f64>,
    at_cap: usize,
    at_zero: usize,
    /// radius at which an unbounded plate was cut off
    #[serde(skip_serializing_if = "Option::is_none")]
    truncation: Option<f64>,
}

#[derive(Serialize)]
struct SolveSummary {
    formulation: Formulation,
    energy: f64,
    converged: bool,
    iterations: usize,
    kkt_residual: f64,
    constants: Vec<f64>,
    plates: Vec<PlateSummary>,
    diagnostics: Diagnostics,
}

fn summary(r: &SolveResult, c: &Condenser) -> SolveSummary {
    let plates = c
        .plates
        .iter()
        .map(|p| {
            let active = r.active_sets.get(p.id);
            PlateSummary {
                plate: p.id,
                sign: p.sign.value(),
                nodes: p.len(),
                mass: r.solution.components[p.id].total_mass(),
                constant: r.kkt[p.id].map(|k| k.constant),
                at_cap: active.map_or(0, |a| a.at_cap.len()),
                at_zero: active.map_or(0, |a| a.at_zero.len()),
                truncation: p.truncation(),
            }
        })
        .collect();
    let constants = c.i_plus().iter().filter_map(|&j| r.kkt[j].map(|k| k.constant)).collect();
    SolveSummary { formulation: r.formulation, energy: r.energy, converged: r.converged, iterations: r.iterations, kkt_residual: r.kkt_residual, constants, plates, diagnostics: r.diagnostics.clone() }
}

fn atoms_of(r: &SolveResult, c: &Condenser) -> Vec<AtomRow> {
    let mut rows = Vec::new();
    for p in &c.plates {
        let w = &r.solution.components[p.id].weights;
        for (k, nd) in p.nodes.iter().enumerate() {
            let cap = r.caps.get(p.id).and_then(|v| v.get(k)).copied().unwrap_or(f64::INFINITY);
            rows.push(AtomRow { plate: p.id, position: nd.position.clone(), weight: w[k], cap });
        }
    }
    rows
}

fn solved(out: &mut Output, key: &str, r: &SolveResult, spec: &ProblemSpec) -> Result<(), Failure> {
    out.put(key, &summary(r, &spec.condenser))?;
    out.atoms = Some(atoms_of(r, &spec.condenser));
    out.trace = Some(r.trace.clone());
    out.converged &= r.converged;
    Ok(())
}

pub fn solve(cfg: &Config) -> Result<Output, Failure> {
    let spec = cfg.problem_spec()?;
    let mut out = Output::new(spec.condenser.n);
    let r = solve_riesz(&spec)?;
    solved(&mut out, "solution", &r, &spec)?;
    out.put("kkt", &verify::kkt_report(&r, &spec, None, &cfg.tolerances)?)?;
    Ok(out)
}

#[derive(Serialize)]
struct GreenSummary {
    nodes: usize,
    asymmetry: f64,
    max_sweep_residual: f64,
    lift_residual: f64,
    lift_mass_ratio: f64,
}

pub fn solve_green(cfg: &Config) -> Result<Output, Failure> {
    let spec = cfg.problem_spec()?;
    let mut out = Output::new(spec.condenser.n);
    let domain = green_domain_for(&spec)?;
    let g = green_matrix_for(&spec, &domain)?;
    let green = solve_green_reduced(&spec, &g)?;
    let lifted = lift_green_to_riesz(&green, &spec, &domain)?;
    out.put("green_matrix", &GreenSummary { nodes: g.matrix.len(), asymmetry: g.asymmetry, max_sweep_residual: g.max_residual, lift_residual: lifted.sweep.potential_residual, lift_mass_ratio: lifted.sweep.mass_ratio })?;
    out.put("green_solution", &summary(&green, &spec.condenser))?;
    out.put("green_kkt", &verify::kkt_report(&green, &spec, Some(&g), &cfg.tolerances)?)?;
    solved(&mut out, "lifted_solution", &lifted.result, &spec)?;
    out.trace = Some(green.trace.clone());
    out.converged &= green.converged;
    out.put("lifted_kkt", &verify::kkt_report(&lifted.result, &spec, None, &cfg.tolerances)?)?;
    Ok(out)
}

#[derive(Serialize)]
struct Skipped<'a> {
    name: &'a str,
    reason: String,
}

/// Solve, then run every check that applies to the scenario.
pub fn verify(cfg: &Config) -> Result<Output, Failure> {
    let spec = cfg.problem_spec()?;
    let tol = &cfg.tolerances;
    let v = &cfg.verify;
    let mut out = Output::new(spec.condenser.n);
    let riesz = solve_riesz(&spec)?;
    solved(&mut out, "solution", &riesz, &spec)?;

    let mut passes = Vec::new();
    let mut skipped = Vec::new();
    let mut record = |out: &mut Output, name: &str, pass: bool, report: toml::Value| -> Result<(), Failure> {
        passes.push((name.to_string(), pass));
        out.put(name, &report)
    };

    let kkt = verify::kkt_report(&riesz, &spec, None, tol)?;
    record(&mut out, "kkt", kkt.pass, value_of(&kkt)?)?;
    let tr = verify::transfer_check(&riesz, &spec, v.transfer_trials, spec.options.seed.unwrap_or(0), tol)?;
    record(&mut out, "transfer", tr.pass, value_of(&tr)?)?;
    let sup = verify::support_report(&riesz, &spec, tol)?;
    record(&mut out, "support", sup.pass, value_of(&sup)?)?;

    let second = solve_riesz(&spec.clone().with_options(condenser_core::solver::SolverOptions { seed: Some(v.second_seed), ..spec.options }))?;
    let ag = verify::agreement(&riesz, &second, &spec, tol.uniqueness, tol.uniqueness)?;
    record(&mut out, "uniqueness", ag.pass, value_of(&ag)?)?;

    let p = spec.negative_plate();
    let has_domain = spec.condenser.plates[p].geometry.swept_domain().is_some();
    if v.green && has_domain {
        let domain = green_domain_for(&spec)?;
        let g = green_matrix_for(&spec, &domain)?;
        let green = solve_green_reduced(&spec, &g)?;
        let lifted = lift_green_to_riesz(&green, &spec, &domain)?;
        let eq = verify::equivalence_check(&riesz, &green, &lifted, &spec, tol)?;
        record(&mut out, "equivalence", eq.pass, value_of(&eq)?)?;
        // the lift carries the sweep residual, so this is reported but not judged
        out.put("lifted_kkt", &verify::kkt_report(&lifted.result, &spec, None, tol)?)?;

        if spec.positive_plates().iter().all(|&j| spec.constraint.caps[j].is_capped()) {
            match verify::with_sigma_cap(&spec, &domain, v.sigma_factor).and_then(|s| solve_sigma_variant(&s, &domain)) {
                Ok(res) => {
                    let ag = verify::agreement(&riesz, &res, &spec, tol.sigma_energy, tol.sigma_distance)?;
                    record(&mut out, "sigma_variant", ag.pass, value_of(&ag)?)?;
                }
                Err(e @ Error::SigmaDomination { .. }) => skipped.push(Skipped { name: "sigma_variant", reason: e.to_string() }),
                Err(e) => return Err(e.into()),
            }
        } else {
            skipped.push(Skipped { name: "sigma_variant", reason: "a positive plate is unbounded".into() });
        }

        match verify::scalar_zone_checks(&riesz, &spec, &domain, v.zone_grid, tol) {
            Ok(z) => record(&mut out, "zones", z.pass, value_of(&z)?)?,
            Err(e @ Error::WrongScenario(_)) => skipped.push(Skipped { name: "zones", reason: e.to_string() }),
            Err(e) => return Err(e.into()),
        }
    } else {
        let reason = if v.green { "the negative plate is not the complement of a domain" } else { "disabled in [verify]" };
        for name in ["equivalence", "sigma_variant", "zones"] {
            skipped.push(Skipped { name, reason: reason.into() });
        }
    }

    let all = passes.iter().all(|(_, ok)| *ok);
    let failed: Vec<&str> = passes.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect();
    out.put("all_pass", &all)?;
    out.put("failed_checks", &failed)?;
    out.put("skipped_checks", &skipped)?;
    Ok(out)
}

fn value_of<T: Serialize>(x: &T) -> Result<toml::Value, Failure> {
    toml::Value::try_from(x).map_err(|e| Failure::Internal(format!("cannot serialize report: {e}")))
}

#[derive(Serialize)]
struct CapacitySummary {
    nodes: usize,
    alpha: f64,
    capacity: f64,
    energy: f64,
    /// closed form when known (Newtonian sphere: its radius)
    #[serde(skip_serializing_if = "Option::is_none")]
    analytic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative_error: Option<f64>,
}

pub fn capacity(cfg: &Config) -> Result<Output, Failure> {
    let c = cfg.capacity.as_ref().ok_or_else(|| Failure::Config("config has no [capacity] table".into()))?;
    let kernel = KernelSpec::riesz(c.n, c.alpha)?;
    let nodes = c.geometry.discretize(c.n, c.resolution)?;
    let eq = equilibrium_measure(&nodes, &kernel, 1.0, cfg.solver.exec)?;
    let analytic = match &c.geometry {
        condenser_core::model::PlateGeometry::Sphere { radius, .. } if c.n == 3 && c.alpha == 2.0 => Some(*radius),
        _ => None,
    };
    let mut out = Output::new(c.n);
    out.put(
        "capacity",
        &CapacitySummary { nodes: nodes.len(), alpha: c.alpha, capacity: eq.capacity, energy: eq.energy, analytic, relative_error: analytic.map(|a| (eq.capacity - a).abs() / a) },
    )?;
    out.atoms = Some(point_rows(&nodes, &eq.weights));
    Ok(out)
}

fn point_rows(nodes: &[Node], weights: &[f64]) -> Vec<AtomRow> {
    nodes.iter().zip(weights).map(|(n, &w)| AtomRow { plate: 0, position: n.position.clone(), weight: w, cap: f64::INFINITY }).collect()
}

#[derive(Serialize)]
struct BalayageSummary {
    source_atoms: usize,
    source_mass: f64,
    exterior_nodes: usize,
    swept_mass: f64,
    mass_ratio: f64,
    potential_residual: f64,
    orthogonality: f64,
    pivot_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    truncation: Option<f64>,
}

pub fn balayage(cfg: &Config) -> Result<Output, Failure> {
    let b = cfg.balayage.as_ref().ok_or_else(|| Failure::Config("config has no [balayage] table".into()))?;
    let kernel = KernelSpec::riesz(b.n, b.alpha)?;
    let exterior = b.exterior.discretize(b.n, b.resolution)?;
    let source: Vec<Node> = b.source.iter().map(|s| Node::volume(s.position.clone(), s.volume, 0)).collect();
    if let Some(z) = source.iter().find(|z| z.dim() != b.n) {
        return Err(Failure::Config(format!("source atom at {:?} is not in R^{}", z.position, b.n)));
    }
    let weights: Vec<f64> = b.source.iter().map(|s: &PointCharge| s.weight).collect();
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidSpec("source weights must be nonnegative".into()).into());
    }
    let r = balayage_project(&source, &weights, exterior.clone(), &kernel, cfg.solver.exec)?;
    let mut out = Output::new(b.n);
    out.put(
        "balayage",
        &BalayageSummary {
            source_atoms: source.len(),
            source_mass: weights.iter().sum(),
            exterior_nodes: exterior.len(),
            swept_mass: r.swept.iter().sum(),
            mass_ratio: r.mass_ratio,
            potential_residual: r.potential_residual,
            orthogonality: r.orthogonality,
            pivot_iterations: r.pivot_iterations,
            truncation: b.exterior.truncation(),
        },
    )?;
    out.atoms = Some(point_rows(&exterior, &r.swept));
    Ok(out)
}

pub fn sweep(cfg: &Config) -> Result<Output, Failure> {
    let s = cfg.sweep.clone().unwrap_or_default();
    if s.stages.is_empty() || s.stages.contains(&0) {
        return Err(Failure::Config("sweep stages must be positive integers".into()));
    }
    let mut out = Output::new(3);
    let table = verify::unsolvability_sweep(&s.stages, &cfg.tolerances, cfg.solver.exec)?;
    out.put("sweep", &table)?;
    if s.cap_sweep {
        out.put("cap_sweep", &verify::cap_sweep(&s.stages, cfg.solver.exec)?)?;
    }
    Ok(out)
}
