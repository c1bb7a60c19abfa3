//! Balayage onto D^c as a projection in the energy norm, closed-form oracles,
//! the α-Green kernel built from swept point masses, and mass diagnostics.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{Domain, PolarLayout};
use crate::kernel::{self, Charge, KernelMatrix, KernelSpec, KernelVariant};
use crate::linalg::{dot, norm_inf, Matrix};
use crate::model::Node;
use crate::nnls::ConeProjector;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BalayageResult {
    /// weights on the exterior nodes
    pub swept: Vec<f64>,
    /// max over exterior nodes of |κ(·,μ′) − κ(·,μ)|, divided by max |κ(·,μ)| there
    pub potential_residual: f64,
    /// swept mass / source mass
    pub mass_ratio: f64,
    /// ‖μ − μ′‖ (NaN when the source energy was not supplied)
    pub projection_gap: f64,
    /// complementarity κ(μ − μ′, μ′), relative to ‖μ′‖²
    pub orthogonality: f64,
    pub pivot_iterations: usize,
}

/// Projects measures onto nonnegative measures carried by a fixed exterior node set.
pub struct Sweeper {
    kernel: KernelSpec,
    exterior: Vec<Node>,
    projector: ConeProjector,
}

impl Sweeper {
    pub fn new(exterior: Vec<Node>, kernel: &KernelSpec, exec: Execution) -> Result<Self> {
        if exterior.is_empty() {
            return Err(Error::InvalidSpec("balayage needs a nonempty exterior node set".into()));
        }
        let kernel = kernel.as_riesz();
        let gram = kernel::assemble_matrix(&exterior, &kernel, exec)?;
        Ok(Sweeper { kernel, exterior, projector: ConeProjector::new(gram.entries)? })
    }

    pub fn exterior(&self) -> &[Node] {
        &self.exterior
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn gram(&self) -> &Matrix {
        self.projector.gram()
    }

    /// Potential of the source at every exterior node.
    pub fn source_potential(&self, nodes: &[Node], weights: &[f64], exec: Execution) -> Vec<f64> {
        let mut b = vec![0.0; self.exterior.len()];
        exec.fill_rows(&mut b, 1, |e, o| {
            let ext = &self.exterior[e];
            o[0] = nodes.iter().zip(weights).filter(|(_, w)| **w != 0.0).map(|(nd, w)| w * kernel::pair_value(ext, nd, &self.kernel)).sum();
        });
        b
    }

    /// Swept weights for a given exterior potential `b`.
    pub fn project_potential(&self, b: &[f64]) -> Result<(Vec<f64>, usize)> {
        let s = self.projector.solve(b)?;
        Ok((s.theta, s.iterations))
    }

    /// Sweep of the measure `Σ w_a δ_{x_a}` (weights ≥ 0).
    pub fn sweep(&self, nodes: &[Node], weights: &[f64], exec: Execution) -> Result<BalayageResult> {
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidSpec("balayage source must be a nonnegative measure".into()));
        }
        kernel::check_nodes(nodes, &self.kernel)?;
        let b = self.source_potential(nodes, weights, exec);
        let source_energy = kernel::mutual_energy(nodes, weights, nodes, weights, &self.kernel, exec);
        let mass: f64 = weights.iter().sum();
        self.finish(&b, mass, Some(source_energy), exec)
    }

    /// Sweep when only the exterior potential and the source mass are known.
    pub fn sweep_potential(&self, b: &[f64], source_mass: f64, source_energy: Option<f64>, exec: Execution) -> Result<BalayageResult> {
        self.finish(b, source_mass, source_energy, exec)
    }

    fn finish(&self, b: &[f64], mass: f64, source_energy: Option<f64>, exec: Execution) -> Result<BalayageResult> {
        let (theta, iters) = self.project_potential(b)?;
        let kt = self.gram().matvec(&theta, exec);
        let scale = norm_inf(b);
        let residual = if scale > 0.0 { kt.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale } else { 0.0 };
        let tkt = dot(&theta, &kt);
        let bt = dot(b, &theta);
        let gap = source_energy.map(|e| (e - 2.0 * bt + tkt).max(0.0).sqrt()).unwrap_or(f64::NAN);
        let swept_mass: f64 = theta.iter().sum();
        Ok(BalayageResult {
            mass_ratio: if mass > 0.0 { swept_mass / mass } else { 0.0 },
            potential_residual: residual,
            projection_gap: gap,
            orthogonality: if tkt > 0.0 { (bt - tkt) / tkt } else { 0.0 },
            pivot_iterations: iters,
            swept: theta,
        })
    }

    /// Sweep of a signed measure, done separately for the positive and negative parts.
    pub fn sweep_signed(&self, nodes: &[Node], weights: &[f64], exec: Execution) -> Result<Vec<f64>> {
        let pos: Vec<f64> = weights.iter().map(|w| w.max(0.0)).collect();
        let neg: Vec<f64> = weights.iter().map(|w| (-w).max(0.0)).collect();
        let p = self.sweep(nodes, &pos, exec)?.swept;
        let n = self.sweep(nodes, &neg, exec)?.swept;
        Ok(p.iter().zip(&n).map(|(a, b)| a - b).collect())
    }
}

/// One-shot balayage of `μ` onto `exterior`.
pub fn balayage_project(nodes: &[Node], weights: &[f64], exterior: Vec<Node>, kernel: &KernelSpec, exec: Execution) -> Result<BalayageResult> {
    Sweeper::new(exterior, kernel, exec)?.sweep(nodes, weights, exec)
}

fn gauss_legendre_6() -> ([f64; 6], [f64; 6]) {
    (
        [-0.932_469_514_203_152, -0.661_209_386_466_264_5, -0.238_619_186_083_196_9, 0.238_619_186_083_196_9, 0.661_209_386_466_264_5, 0.932_469_514_203_152],
        [0.171_324_492_379_170_3, 0.360_761_573_048_138_6, 0.467_913_934_572_691, 0.467_913_934_572_691, 0.360_761_573_048_138_6, 0.171_324_492_379_170_3],
    )
}

/// Harmonic measure of `{x1 > 0}` seen from `y`, integrated over each polar
/// cell of a layout on the plane `x1 = 0` (Newtonian kernel in R^3 only).
pub fn balayage_oracle_halfspace(y: &[f64], plane: &PolarLayout, kernel: &KernelSpec) -> Result<Vec<f64>> {
    if kernel.n != 3 || kernel.alpha != 2.0 {
        return Err(Error::UnsupportedKernel("the Poisson-kernel oracle needs n = 3 and α = 2".into()));
    }
    if y.len() != 3 || !(y[0] > 0.0) || plane.center[0] != 0.0 {
        return Err(Error::InvalidSpec("oracle needs a source with x1 > 0 and a layout on the plane x1 = 0".into()));
    }
    let h = y[0];
    let (c2, c3) = (plane.center[1], plane.center[2]);
    let density = |z2: f64, z3: f64| {
        let d2 = (z2 - y[1]).powi(2) + (z3 - y[2]).powi(2);
        h / (2.0 * PI * (h * h + d2).powf(1.5))
    };
    let (xs, ws) = gauss_legendre_6();
    let foot = ((y[1] - c2).powi(2) + (y[2] - c3).powi(2)).sqrt();
    Ok(plane
        .cells
        .iter()
        .map(|cell| {
            // subdivide so every piece is small against its distance to the foot
            let near = (foot - cell.r1).max(cell.r0 - foot).max(0.0);
            let scale = 0.25 * (h.max(near));
            let nr = (((cell.r1 - cell.r0) / scale).ceil() as usize).clamp(1, 64);
            let arc = (cell.phi1 - cell.phi0) * cell.r1;
            let np = ((arc / scale).ceil() as usize).clamp(1, 64);
            let dr = (cell.r1 - cell.r0) / nr as f64;
            let dp = (cell.phi1 - cell.phi0) / np as f64;
            let mut total = 0.0;
            for i in 0..nr {
                let ra = cell.r0 + i as f64 * dr;
                for j in 0..np {
                    let pa = cell.phi0 + j as f64 * dp;
                    for (xr, wr) in xs.iter().zip(&ws) {
                        let r = ra + 0.5 * dr * (xr + 1.0);
                        for (xp, wp) in xs.iter().zip(&ws) {
                            let p = pa + 0.5 * dp * (xp + 1.0);
                            total += wr * wp * density(c2 + r * p.cos(), c3 + r * p.sin()) * r;
                        }
                    }
                }
            }
            total * 0.25 * dr * dp
        })
        .collect())
}

/// Weights of the uniform unit measure on the sphere of radius `radius` around
/// `center` (the Newtonian sweep of a point mass at the centre), read off the
/// surface nodes lying on that sphere; all other exterior nodes get zero.
pub fn uniform_sphere_oracle(exterior: &[Node], center: &[f64], radius: f64) -> Vec<f64> {
    let on_sphere = |n: &Node| (crate::geometry::dist(&n.position, center) - radius).abs() <= 1e-12 * radius.max(1.0);
    let area: f64 = exterior.iter().filter(|n| on_sphere(n)).map(|n| n.quad_weight).sum();
    exterior.iter().map(|n| if on_sphere(n) { n.quad_weight / area } else { 0.0 }).collect()
}

/// α-Green kernel of a domain D, realised through sweeps onto a node set of D^c.
pub struct GreenDomain {
    pub id: usize,
    pub domain: Option<Domain>,
    sweeper: Sweeper,
    cache: Mutex<HashMap<Vec<u64>, Arc<Vec<f64>>>>,
}

/// Green matrix on a node set of D together with its quality metrics.
#[derive(Clone, Debug)]
pub struct GreenMatrix {
    /// symmetrized entries
    pub matrix: KernelMatrix,
    /// max |G − Gᵀ| / max |G| before symmetrization
    pub asymmetry: f64,
    /// largest potential residual among the per-node sweeps
    pub max_residual: f64,
}

impl GreenDomain {
    pub fn new(id: usize, exterior: Vec<Node>, kernel: &KernelSpec, domain: Option<Domain>, exec: Execution) -> Result<Self> {
        if let Some(d) = &domain {
            if let Some(bad) = exterior.iter().find(|n| d.contains(&n.position) && d.boundary_distance(&n.position) > 1e-9) {
                return Err(Error::InvalidSpec(format!("exterior node {:?} lies inside the domain", bad.position)));
            }
        }
        Ok(GreenDomain { id, domain, sweeper: Sweeper::new(exterior, kernel, exec)?, cache: Mutex::new(HashMap::new()) })
    }

    pub fn sweeper(&self) -> &Sweeper {
        &self.sweeper
    }

    pub fn riesz(&self) -> &KernelSpec {
        self.sweeper.kernel()
    }

    pub fn kernel(&self) -> KernelSpec {
        KernelSpec { variant: KernelVariant::Green { domain_id: self.id }, ..*self.sweeper.kernel() }
    }

    fn key(y: &[f64]) -> Vec<u64> {
        y.iter().map(|v| (v + 0.0).to_bits()).collect()
    }

    /// Sweep of the unit point mass at `y`, memoized per point.
    pub fn swept_atom(&self, y: &[f64]) -> Result<Arc<Vec<f64>>> {
        let key = Self::key(y);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let k = self.riesz();
        let b: Vec<f64> = self.sweeper.exterior().iter().map(|e| kernel::point_value(e, y, k)).collect();
        let (theta, _) = self.sweeper.project_potential(&b)?;
        let theta = Arc::new(theta);
        self.cache.lock().expect("cache lock").insert(key, Arc::clone(&theta));
        Ok(theta)
    }

    fn check_inside(&self, x: &[f64]) -> Result<()> {
        if let Some(d) = &self.domain {
            if !d.contains(x) {
                return Err(Error::InvalidSpec(format!("point {x:?} is not in the domain")));
            }
        }
        Ok(())
    }

    /// `g(x, y) = κ(x, y) − κ(x, ε_y′)`; infinite for x = y.
    pub fn green_kernel_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_inside(x)?;
        self.check_inside(y)?;
        if x == y {
            return Ok(f64::INFINITY);
        }
        let theta = self.swept_atom(y)?;
        let k = self.riesz();
        let swept: f64 = self.sweeper.exterior().iter().zip(theta.iter()).map(|(e, t)| t * kernel::point_value(e, x, k)).sum();
        Ok(kernel::riesz_eval(x, y, k) - swept)
    }

    /// Green matrix on distinct nodes of D, diagonal from the Riesz self-energy
    /// minus the swept self-potential.
    pub fn green_matrix(&self, nodes: &[Node], exec: Execution) -> Result<GreenMatrix> {
        for nd in nodes {
            self.check_inside(&nd.position)?;
        }
        let k = *self.riesz();
        let kdd = kernel::assemble_matrix(nodes, &k, exec)?;
        let kde = kernel::cross_matrix(nodes, self.sweeper.exterior(), &k, exec);
        let sweeps: Vec<Result<(Arc<Vec<f64>>, f64)>> = exec.map(nodes.len(), |b| {
            let theta = self.swept_atom(&nodes[b].position)?;
            // residual of this sweep: |K_EE θ − κ(·, y)| at exterior nodes
            let rhs = kde.row(b);
            let kt = self.sweeper.gram().matvec(&theta, Execution::Sequential);
            let scale = norm_inf(rhs);
            let res = kt.iter().zip(rhs).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max) / scale;
            Ok((theta, res))
        });
        let mut thetas = Vec::with_capacity(nodes.len());
        let mut max_residual = 0.0_f64;
        for s in sweeps {
            let (t, r) = s?;
            max_residual = max_residual.max(r);
            thetas.push(t);
        }
        let n = nodes.len();
        let mut g = Matrix::from_fn(n, n, exec, |a, b| kdd.entries[(a, b)] - dot(kde.row(a), &thetas[b]));
        let asymmetry = g.asymmetry() / g.max_abs().max(f64::MIN_POSITIVE);
        g.symmetrize();
        let diagonal = g.diagonal();
        Ok(GreenMatrix { matrix: KernelMatrix { entries: g, diagonal, kernel: self.kernel() }, asymmetry, max_residual })
    }

    /// Sweep of a nonnegative measure on D onto the exterior nodes.
    pub fn sweep(&self, nodes: &[Node], weights: &[f64], exec: Execution) -> Result<BalayageResult> {
        self.sweeper.sweep(nodes, weights, exec)
    }
}

/// Exact Newtonian Green matrix of the half-space `{x1 > 0}` in R^3 by
/// reflection, `g(x, y) = |x − y|⁻¹ − |x − y*|⁻¹` with `y* = (−y1, y2, y3)`.
pub fn halfspace_reflection_green(nodes: &[Node], kernel: &KernelSpec, exec: Execution) -> Result<GreenMatrix> {
    if kernel.n != 3 || kernel.alpha != 2.0 {
        return Err(Error::UnsupportedKernel("the reflection formula needs n = 3 and α = 2".into()));
    }
    if let Some(bad) = nodes.iter().find(|n| !(n.position[0] > 0.0)) {
        return Err(Error::InvalidSpec(format!("node {:?} is not in the half-space", bad.position)));
    }
    let k = kernel.as_riesz();
    let riesz = kernel::assemble_matrix(nodes, &k, exec)?;
    let n = nodes.len();
    let g = Matrix::from_fn(n, n, exec, |a, b| {
        let (x, y) = (&nodes[a].position, &nodes[b].position);
        let image = [-y[0], y[1], y[2]];
        riesz.entries[(a, b)] - kernel::riesz_eval(x, &image, &k)
    });
    let diagonal = g.diagonal();
    Ok(GreenMatrix { matrix: KernelMatrix { entries: g, diagonal, kernel: KernelSpec { variant: KernelVariant::Green { domain_id: 0 }, ..k } }, asymmetry: 0.0, max_residual: 0.0 })
}

/// The three expressions of the Green energy of μ and their pairwise deviations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreenEnergyReport {
    /// μᵀ G μ with the assembled Green matrix
    pub green_form: f64,
    /// ‖μ − μ′‖²
    pub projection_norm: f64,
    /// ‖μ‖² − ‖μ′‖²
    pub norm_difference: f64,
    /// ‖μ‖²
    pub riesz_energy: f64,
    pub potential_residual: f64,
    /// relative deviations: form vs projection, form vs difference, projection vs difference
    pub deviations: [f64; 3],
}

impl GreenEnergyReport {
    pub fn max_deviation(&self) -> f64 {
        self.deviations.iter().copied().fold(0.0, f64::max)
    }

    /// Tolerance `max(floor, 3 × residual)` used for these identities.
    pub fn tolerance(&self, floor: f64) -> f64 {
        floor.max(3.0 * self.potential_residual)
    }
}

fn rel_dev(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Compare the three expressions of ‖μ‖²_g for a measure on the nodes of `green`.
pub fn green_energy_identity_check(nodes: &[Node], weights: &[f64], domain: &GreenDomain, green: &GreenMatrix, exec: Execution) -> Result<GreenEnergyReport> {
    if green.matrix.len() != nodes.len() {
        return Err(Error::InvalidSpec("Green matrix and measure disagree in size".into()));
    }
    let green_form = green.matrix.entries.bilinear(weights, weights, exec);
    let k = domain.riesz();
    let sweep = domain.sweep(nodes, weights, exec)?;
    let riesz_energy = kernel::mutual_energy(nodes, weights, nodes, weights, k, exec);
    let swept_energy = domain.sweeper().gram().bilinear(&sweep.swept, &sweep.swept, exec);
    let projection_norm = sweep.projection_gap.powi(2);
    let norm_difference = riesz_energy - swept_energy;
    Ok(GreenEnergyReport {
        deviations: [rel_dev(green_form, projection_norm), rel_dev(green_form, norm_difference), rel_dev(projection_norm, norm_difference)],
        green_form,
        projection_norm,
        norm_difference,
        riesz_energy,
        potential_residual: sweep.potential_residual,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MassProbeRow {
    pub truncation: f64,
    pub exterior_nodes: usize,
    pub mass_ratio: f64,
    pub potential_residual: f64,
}

/// Swept mass ratio of a fixed source for each truncation radius of D^c.
/// `exterior_at(R)` builds the exterior node set truncated at R.
pub fn mass_conservation_probe<F>(source: &Charge, radii: &[f64], kernel: &KernelSpec, exec: Execution, exterior_at: F) -> Result<Vec<MassProbeRow>>
where
    F: Fn(f64) -> Result<Vec<Node>>,
{
    radii
        .iter()
        .map(|&r| {
            let ext = exterior_at(r)?;
            let count = ext.len();
            let res = Sweeper::new(ext, kernel, exec)?.sweep(&source.nodes, &source.weights, exec)?;
            Ok(MassProbeRow { truncation: r, exterior_nodes: count, mass_ratio: res.mass_ratio, potential_residual: res.potential_residual })
        })
        .collect()
}
