//! Scenario files.
//!
//! A config is a TOML document. Every table rejects unknown keys so a typo
//! fails at parse time rather than silently falling back to a default. The
//! annotated files under `configs/` document each key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use condenser_core::geometry::Domain;
use condenser_core::kernel::{equilibrium_measure, Charge, ExternalField, KernelSpec};
use condenser_core::model::{build_condenser, Node, PlateGeometry, PlateSpec};
use condenser_core::scenarios::{BallScenario, DiskStackScenario};
use condenser_core::solver::{Constraint, PlateCap, ProblemSpec, SolverOptions};
use condenser_core::verify::Tolerances;
use condenser_core::{Error, Execution};

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub problem: Option<Problem>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub capacity: Option<CapacityConfig>,
    #[serde(default)]
    pub balayage: Option<BalayageConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Problem {
    /// ball against its truncated complement, equilibrium-shaped cap
    Ball(BallScenario),
    /// stacked disks over the half-space boundary plane
    DiskStack(DiskStackScenario),
    Custom(CustomProblem),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomProblem {
    #[serde(default = "default_dim")]
    pub n: usize,
    pub alpha: f64,
    pub resolution: f64,
    /// the last plate must be the only negative one
    pub plates: Vec<PlateSpec>,
    pub totals: Vec<f64>,
    /// one entry per plate; empty means every plate is unbounded
    #[serde(default)]
    pub caps: Vec<CapSpec>,
    #[serde(default)]
    pub field: FieldSpec,
}

fn default_dim() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CapSpec {
    Unbounded,
    /// one weight per node, in discretization order
    Explicit { weights: Vec<f64> },
    /// `q` times the unit equilibrium measure of the plate's own nodes
    ScaledEquilibrium { q: f64 },
    /// `Σ k⁻² λ_k` over the disks of a `disk-stack` plate
    DiskSeries,
}

/// A point charge; `volume` sets the cell used for its self-energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointCharge {
    pub position: Vec<f64>,
    pub weight: f64,
    #[serde(default = "default_cell")]
    pub volume: f64,
}

fn default_cell() -> f64 {
    1e-3
}

impl PointCharge {
    fn node(&self) -> Node {
        Node::volume(self.position.clone(), self.volume, 0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    #[default]
    Zero,
    /// values at every node of every plate; `inf` freezes a node at zero
    NodeValues { values: Vec<Vec<f64>> },
    /// charge inside the swept domain; its sweep onto the negative plate is computed
    SweptCharge { charges: Vec<PointCharge> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub transfer_trials: usize,
    /// seed of the second solve used for the uniqueness check
    pub second_seed: u64,
    pub zone_grid: usize,
    /// multiple of the swept constraint used as the σ cap
    pub sigma_factor: f64,
    pub green: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { transfer_trials: 50, second_seed: 97, zone_grid: 24, sigma_factor: 1.0, green: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityConfig {
    #[serde(default = "default_dim")]
    pub n: usize,
    #[serde(default = "newtonian")]
    pub alpha: f64,
    pub geometry: PlateGeometry,
    pub resolution: f64,
}

fn newtonian() -> f64 {
    2.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalayageConfig {
    #[serde(default = "default_dim")]
    pub n: usize,
    pub alpha: f64,
    pub resolution: f64,
    pub source: Vec<PointCharge>,
    /// node set the source is swept onto
    pub exterior: PlateGeometry,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub stages: Vec<usize>,
    pub cap_sweep: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { stages: (1..=6).collect(), cap_sweep: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol_kkt: Option<f64>,
    pub truncation: Option<f64>,
    pub resolution: Option<f64>,
    pub max_iters: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub exec: Option<Execution>,
}

pub fn load(path: &Path) -> Result<Config, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Config, String> {
    let cfg: Config = toml::from_str(text).map_err(|e| e.to_string())?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", cfg.schema_version));
    }
    Ok(cfg)
}

fn truncate_geometry(g: &mut PlateGeometry, r: f64) {
    match g {
        PlateGeometry::BallComplement { truncation, .. } | PlateGeometry::HalfSpace { truncation, .. } => *truncation = r,
        _ => {}
    }
}

impl Config {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.solver.seed = Some(s);
        }
        if let Some(t) = o.tol_kkt {
            self.solver.tol_kkt = t;
            self.tolerances.kkt = t;
        }
        if let Some(m) = o.max_iters {
            self.solver.max_iters = m;
        }
        if let Some(e) = o.exec {
            self.solver.exec = e;
        }
        if let Some(d) = &o.out_dir {
            self.output.dir = d.clone();
        }
        if let Some(h) = o.resolution {
            match &mut self.problem {
                Some(Problem::Ball(b)) => b.resolution = h,
                Some(Problem::DiskStack(d)) => d.resolution = h,
                Some(Problem::Custom(c)) => c.resolution = h,
                None => {}
            }
            if let Some(c) = &mut self.capacity {
                c.resolution = h;
            }
            if let Some(b) = &mut self.balayage {
                b.resolution = h;
            }
        }
        if let Some(r) = o.truncation {
            match &mut self.problem {
                Some(Problem::Ball(b)) => b.truncation = r,
                Some(Problem::DiskStack(d)) => d.truncation = r,
                Some(Problem::Custom(c)) => c.plates.iter_mut().for_each(|p| truncate_geometry(&mut p.geometry, r)),
                None => {}
            }
            if let Some(b) = &mut self.balayage {
                truncate_geometry(&mut b.exterior, r);
            }
        }
    }

    /// Validated problem data, built before anything is solved.
    pub fn problem_spec(&self) -> Result<ProblemSpec, Error> {
        match &self.problem {
            None => Err(Error::InvalidSpec("config has no [problem] table".into())),
            Some(Problem::Ball(b)) => b.build(self.solver),
            Some(Problem::DiskStack(d)) => d.build(self.solver),
            Some(Problem::Custom(c)) => c.build(self.solver),
        }
    }
}

impl CustomProblem {
    fn build(&self, options: SolverOptions) -> Result<ProblemSpec, Error> {
        let condenser = build_condenser(self.n, &self.plates, self.resolution)?;
        let kernel = KernelSpec::riesz(self.n, self.alpha)?;
        let caps = if self.caps.is_empty() {
            vec![PlateCap::Unbounded; self.plates.len()]
        } else if self.caps.len() != self.plates.len() {
            return Err(Error::InvalidSpec(format!("{} caps given for {} plates", self.caps.len(), self.plates.len())));
        } else {
            self.caps
                .iter()
                .zip(&condenser.plates)
                .map(|(cap, plate)| match cap {
                    CapSpec::Unbounded => Ok(PlateCap::Unbounded),
                    CapSpec::Explicit { weights } => Ok(PlateCap::Capped { weights: weights.clone() }),
                    CapSpec::ScaledEquilibrium { q } => {
                        let eq = equilibrium_measure(&plate.nodes, &kernel, 1.0, options.exec)?;
                        Ok(PlateCap::Capped { weights: eq.weights.iter().map(|w| q * w).collect() })
                    }
                    CapSpec::DiskSeries => match plate.geometry {
                        PlateGeometry::DiskStack { count } => {
                            let weights = DiskStackScenario { disks: count, resolution: self.resolution, ..Default::default() }.cap()?;
                            Ok(PlateCap::Capped { weights })
                        }
                        _ => Err(Error::InvalidSpec(format!("disk-series cap on plate {} which is not a disk stack", plate.id))),
                    },
                })
                .collect::<Result<Vec<_>, Error>>()?
        };
        let field = match &self.field {
            FieldSpec::Zero => ExternalField::Zero,
            FieldSpec::NodeValues { values } => ExternalField::NodeValues { values: values.clone() },
            FieldSpec::SweptCharge { charges } => {
                let p = condenser.negative_plate()?;
                let plate = &condenser.plates[p];
                let domain = plate.geometry.swept_domain().ok_or_else(|| Error::InvalidSpec("a swept-charge field needs a ball-complement or half-space negative plate".into()))?;
                let charge = Charge { nodes: charges.iter().map(PointCharge::node).collect(), weights: charges.iter().map(|z| z.weight).collect() };
                if let Some(z) = charge.nodes.iter().find(|z| !inside(&domain, &z.position)) {
                    return Err(Error::InvalidSpec(format!("charge at {:?} lies outside the swept domain", z.position)));
                }
                let swept = condenser_core::balayage::balayage_project(&charge.nodes, &charge.weights, plate.nodes.clone(), &kernel, options.exec)?;
                ExternalField::SweptCharge { charge, charge_swept: Charge { nodes: plate.nodes.clone(), weights: swept.swept } }
            }
        };
        ProblemSpec::new(condenser, kernel, self.totals.clone(), field, Constraint { caps }, options)
    }
}

fn inside(domain: &Domain, x: &[f64]) -> bool {
    domain.contains(x) && domain.boundary_distance(x) > 0.0
}

/// Built-in scenarios behind `example`.
pub fn builtin(which: &str) -> Option<Config> {
    let problem = match which {
        "ex1" => Problem::Ball(BallScenario::default()),
        "ex2" => Problem::DiskStack(DiskStackScenario::default()),
        _ => return None,
    };
    Some(Config {
        schema_version: SCHEMA_VERSION,
        name: which.to_string(),
        problem: Some(problem),
        solver: SolverOptions::default(),
        tolerances: Tolerances::default(),
        verify: VerifyConfig::default(),
        capacity: None,
        balayage: None,
        sweep: None,
        output: OutputConfig { dir: PathBuf::from("out").join(which) },
    })
}
