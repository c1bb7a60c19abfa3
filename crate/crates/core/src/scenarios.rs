//! Built-in scenarios: the ball condenser with an equilibrium-shaped cap
//! (Riesz order below 2), the stacked-disk condenser over a half-space
//! (Newtonian), a Newtonian ball with a uniform volume cap, and a sphere
//! for capacity runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, ball_equilibrium_shell_mass, disk_equilibrium_ring_mass};
use crate::kernel::{ExternalField, KernelSpec};
use crate::model::{BallLayout, Condenser, PlateGeometry, Sign};
use crate::solver::{Constraint, PlateCap, ProblemSpec, SolverOptions};

/// Ball D = B(0, r) as the positive plate, D^c (truncated) as the negative one,
/// cap `q` times the α-equilibrium measure of the closed ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BallScenario {
    pub alpha: f64,
    pub radius: f64,
    pub q: f64,
    pub resolution: f64,
    pub truncation: f64,
    pub grading: f64,
    pub max_per_shell: Option<usize>,
}

impl Default for BallScenario {
    fn default() -> Self {
        BallScenario { alpha: 1.5, radius: 1.0, q: 1.1, resolution: 1.0 / 6.0, truncation: 64.0, grading: 1.4, max_per_shell: Some(120) }
    }
}

impl BallScenario {
    /// Newtonian variant with a uniform volume cap (the Newtonian equilibrium
    /// measure of a ball sits on its sphere, outside the open ball).
    pub fn newtonian() -> Self {
        BallScenario { alpha: 2.0, q: 2.0, truncation: 16.0, ..Default::default() }
    }

    pub fn condenser(&self) -> Result<Condenser> {
        let c = vec![0.0; 3];
        let (inner, _) = geometry::ball_shells(&c, self.radius, self.resolution)?;
        let outer_geom = PlateGeometry::BallComplement {
            center: c.clone(),
            radius: self.radius,
            truncation: self.truncation,
            grading: self.grading,
            max_per_shell: self.max_per_shell,
            surface_layer: true,
        };
        let outer = outer_geom.discretize(3, self.resolution)?;
        let inner_geom = PlateGeometry::Ball { center: c, radius: self.radius, layout: BallLayout::Shells };
        Condenser::from_plates(3, vec![(Sign::Positive, inner_geom, inner), (Sign::Negative, outer_geom, outer)])
    }

    /// Cap weights on the ball nodes.
    pub fn cap(&self) -> Result<Vec<f64>> {
        let (nodes, shells) = geometry::ball_shells(&[0.0; 3], self.radius, self.resolution)?;
        if self.alpha < 2.0 {
            let mut count = vec![0usize; shells.len()];
            for n in &nodes {
                count[n.layer] += 1;
            }
            nodes
                .iter()
                .map(|n| {
                    let s = shells[n.layer];
                    Ok(self.q * ball_equilibrium_shell_mass(3, self.alpha, self.radius, s.inner, s.outer)? / count[n.layer] as f64)
                })
                .collect()
        } else {
            let vol: f64 = nodes.iter().map(|n| n.quad_weight).sum();
            Ok(nodes.iter().map(|n| self.q * n.quad_weight / vol).collect())
        }
    }

    pub fn build(&self, options: SolverOptions) -> Result<ProblemSpec> {
        if !(self.q > 1.0) {
            return Err(Error::InvalidSpec("the cap factor q must exceed 1".into()));
        }
        let condenser = self.condenser()?;
        let kernel = KernelSpec::riesz(3, self.alpha)?;
        let constraint = Constraint { caps: vec![PlateCap::Capped { weights: self.cap()? }, PlateCap::Unbounded] };
        ProblemSpec::new(condenser, kernel, vec![1.0, 1.0], ExternalField::Zero, constraint, options)
    }
}

/// Disks `K_k = {x1 = 1/k, x2² + x3² <= k²}`, k = 1..=disks, in the half-space
/// `x1 > 0`; the negative plate is the boundary plane (Newtonian balayage onto
/// the closed half-space lives there). Cap `Σ k⁻² λ_k` with λ_k the unit
/// equilibrium measure of K_k.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiskStackScenario {
    pub disks: usize,
    pub resolution: f64,
    pub truncation: f64,
    pub inner_radius: f64,
    pub grading: f64,
    pub max_per_ring: Option<usize>,
}

impl Default for DiskStackScenario {
    fn default() -> Self {
        DiskStackScenario { disks: 3, resolution: 0.25, truncation: 200.0, inner_radius: 4.0, grading: 1.2, max_per_ring: Some(96) }
    }
}

impl DiskStackScenario {
    pub fn condenser(&self) -> Result<Condenser> {
        let stack = PlateGeometry::DiskStack { count: self.disks };
        let plane = PlateGeometry::HalfSpace { truncation: self.truncation, inner_radius: self.inner_radius, grading: self.grading, max_per_ring: self.max_per_ring };
        let a = stack.discretize(3, self.resolution)?;
        let b = plane.discretize(3, self.resolution)?;
        Condenser::from_plates(3, vec![(Sign::Positive, stack, a), (Sign::Negative, plane, b)])
    }

    pub fn cap(&self) -> Result<Vec<f64>> {
        let mut caps = Vec::new();
        for k in 1..=self.disks {
            let kf = k as f64;
            let layout = geometry::polar_layout([1.0 / kf, 0.0, 0.0], &geometry::RingPlan::uniform(kf, self.resolution))?;
            let mut per_ring = vec![0usize; layout.ring_edges.len()];
            for n in &layout.nodes {
                per_ring[n.layer] += 1;
            }
            for n in &layout.nodes {
                let (r0, r1) = (layout.ring_edges[n.layer], layout.ring_edges[n.layer + 1]);
                caps.push(disk_equilibrium_ring_mass(kf, r0, r1) / (kf * kf * per_ring[n.layer] as f64));
            }
        }
        Ok(caps)
    }

    pub fn build(&self, options: SolverOptions) -> Result<ProblemSpec> {
        if self.disks < 2 {
            return Err(Error::InvalidSpec("with fewer than two disks the cap mass does not exceed 1".into()));
        }
        let condenser = self.condenser()?;
        let kernel = KernelSpec::riesz(3, 2.0)?;
        let constraint = Constraint { caps: vec![PlateCap::Capped { weights: self.cap()? }, PlateCap::Unbounded] };
        ProblemSpec::new(condenser, kernel, vec![1.0, 1.0], ExternalField::Zero, constraint, options)
    }
}

/// Newtonian capacity of a sphere of radius r equals r (kernel 1/|x − y|).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereCapacity {
    pub radius: f64,
    pub count: usize,
}

impl SphereCapacity {
    pub fn analytic(&self) -> f64 {
        self.radius
    }

    pub fn compute(&self, exec: crate::Execution) -> Result<f64> {
        let nodes = geometry::sphere_nodes(&[0.0; 3], self.radius, self.count)?;
        Ok(crate::kernel::equilibrium_measure(&nodes, &KernelSpec::riesz(3, 2.0)?, 1.0, exec)?.capacity)
    }
}
