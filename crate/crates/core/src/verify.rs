//! Checks of solver outputs against the characterization of minimizers:
//! potential conditions per plate, the scalar zone relations, the support of
//! the negative component, Riesz/Green agreement, and the exhaustion sweeps
//! showing that an infimum of zero is approached but not attained.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::balayage::{halfspace_reflection_green, GreenDomain, GreenMatrix};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{self, polar_layout, sphere_nodes, RingPlan};
use crate::kernel::{self, equilibrium_from_matrix, ExternalField, KernelSpec};
use crate::linalg::dot;
use crate::model::{CellKind, Node, VectorMeasure};
use crate::solver::{plate_kkt, positive_pool, Constraint, Formulation, Lifted, PlateCap, ProblemSpec, SolveResult};

/// Every pass/fail threshold used by the checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// normalized b1/b2 residuals on positive plates
    pub kkt: f64,
    /// normalized potential identities (negative plate, zone checks)
    pub potential: f64,
    /// box and total-mass violations, relative to max(total, 1)
    pub feasibility: f64,
    pub eps_free: f64,
    /// per-node mass floor for support statements
    pub eps_supp: f64,
    /// relative R-distance between two solves
    pub uniqueness: f64,
    pub identity_floor: f64,
    pub equivalence_floor: f64,
    pub lifted_mass: f64,
    pub sigma_energy: f64,
    pub sigma_distance: f64,
    pub support_fraction: f64,
    /// energies at or below this count as having reached zero
    pub energy_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            kkt: 1e-6,
            potential: 1e-3,
            feasibility: 1e-10,
            eps_free: 1e-8,
            eps_supp: 1e-12,
            uniqueness: 1e-4,
            identity_floor: 1e-6,
            equivalence_floor: 1e-4,
            lifted_mass: 1e-2,
            sigma_energy: 1e-6,
            sigma_distance: 1e-4,
            support_fraction: 0.99,
            energy_floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateCheck {
    pub plate: usize,
    pub constant: f64,
    /// max (c − W)⁺ over nodes strictly below the cap
    pub below_cap: f64,
    /// max (W − c)⁺ over carried nodes
    pub carried: f64,
    pub free_nodes: usize,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativePlateCheck {
    pub plate: usize,
    pub constant: f64,
    /// max |W| over checked nodes, normalized
    pub max_potential: f64,
    pub checked_nodes: usize,
    /// zero-weight nodes within one cell radius of the boundary, skipped
    pub excluded_nodes: usize,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub formulation: Formulation,
    pub plates: Vec<PlateCheck>,
    pub negative: Option<NegativePlateCheck>,
    pub feasibility: f64,
    pub feasibility_tolerance: f64,
    /// max(|c_j|, 1) over positive plates
    pub normalization: f64,
    pub converged: bool,
    pub pass: bool,
}

fn finite_or_zero(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| if x.is_finite() { *x } else { 0.0 }).collect()
}

fn pool_points(nodes: &[Node]) -> Vec<Vec<f64>> {
    nodes.iter().map(|n| n.position.clone()).collect()
}

/// `W^i` at every node of every plate, recomputed from the measure.
pub fn fresh_potentials(mu: &VectorMeasure, spec: &ProblemSpec) -> Result<Vec<Vec<f64>>> {
    let c = &spec.condenser;
    let exec = spec.options.exec;
    let r = c.resultant_weights(mu)?;
    let pot = kernel::potential(&c.pool, &r, &pool_points(&c.pool), &spec.kernel, exec);
    Ok(c.plates
        .iter()
        .map(|p| {
            let s = p.sign.value();
            let f = finite_or_zero(&spec.field_values()[p.id]);
            p.pool_index.iter().zip(&f).map(|(&k, fi)| s * pot[k] + fi).collect()
        })
        .collect())
}

/// Green-form `W^j` on positive plates: `G·(Σ_j μ^j) + f_j`.
fn green_potentials(mu: &VectorMeasure, spec: &ProblemSpec, green: &GreenMatrix) -> Result<Vec<Option<Vec<f64>>>> {
    let pool = positive_pool(&spec.condenser);
    if green.matrix.len() != pool.nodes.len() {
        return Err(Error::InvalidSpec("Green matrix does not match the positive pool".into()));
    }
    let gw = green.matrix.entries.matvec(&pool.pooled(mu), spec.options.exec);
    let mut out = vec![None; spec.condenser.plates.len()];
    for (&j, idx) in pool.plates.iter().zip(&pool.index) {
        let f = finite_or_zero(&spec.field_values()[j]);
        out[j] = Some(idx.iter().zip(&f).map(|(&k, fi)| gw[k] + fi).collect());
    }
    Ok(out)
}

fn feasibility_violation(mu: &VectorMeasure, spec: &ProblemSpec, plates: &[usize]) -> f64 {
    plates
        .iter()
        .map(|&j| {
            let x = &mu.components[j].weights;
            let caps = spec.effective_caps(j);
            let scale = spec.totals[j].max(1.0);
            let mass = (x.iter().sum::<f64>() - spec.totals[j]).abs();
            let bx = x.iter().zip(&caps).map(|(v, c)| (-v).max(v - c).max(0.0)).fold(0.0, f64::max);
            mass.max(bx) / scale
        })
        .fold(0.0, f64::max)
}

/// Potential conditions per plate, recomputed from the solution. A Green-form
/// result needs the Green matrix it was solved with.
pub fn kkt_report(result: &SolveResult, spec: &ProblemSpec, green: Option<&GreenMatrix>, tol: &Tolerances) -> Result<KktReport> {
    let c = &spec.condenser;
    spec.condenser.check_aligned(&result.solution)?;
    let positive = spec.positive_plates();
    let p = spec.negative_plate();
    let potentials: Vec<Option<Vec<f64>>> = match result.formulation {
        Formulation::Green => {
            let g = green.ok_or_else(|| Error::InvalidSpec("a Green-form report needs the Green matrix".into()))?;
            green_potentials(&result.solution, spec, g)?
        }
        _ => fresh_potentials(&result.solution, spec)?.into_iter().map(Some).collect(),
    };
    let mut raw = Vec::new();
    for &j in &positive {
        let w = potentials[j].as_ref().expect("positive plate potential");
        raw.push((j, plate_kkt(&result.solution.components[j].weights, w, &spec.effective_caps(j), spec.totals[j], tol.eps_free)));
    }
    let norm = raw.iter().map(|(_, k)| k.constant.abs()).fold(1.0, f64::max);
    let plates: Vec<PlateCheck> = raw
        .into_iter()
        .map(|(j, k)| {
            let own = k.constant.abs().max(1.0) / norm;
            let (b1, b2) = (k.below_cap * own, k.carried * own);
            PlateCheck { plate: j, constant: k.constant, below_cap: b1, carried: b2, free_nodes: k.free_nodes, tolerance: tol.kkt, pass: b1.max(b2) <= tol.kkt }
        })
        .collect();

    // W^p vanishes only when the negative plate is the complement of a domain
    let negative = match (&potentials[p], result.formulation, c.plates[p].geometry.swept_domain()) {
        (Some(w), Formulation::Riesz | Formulation::Lifted, Some(domain)) => {
            let plate = &c.plates[p];
            let x = &result.solution.components[p].weights;
            let eps = tol.eps_free * spec.totals[p];
            let mut excluded = 0;
            let mut checked = 0;
            let mut worst = 0.0_f64;
            for ((nd, xi), wi) in plate.nodes.iter().zip(x).zip(w) {
                if *xi <= eps {
                    let near = domain.boundary_distance(&nd.position) <= nd.cell_radius;
                    if near {
                        excluded += 1;
                        continue;
                    }
                }
                checked += 1;
                worst = worst.max(wi.abs());
            }
            let k = plate_kkt(x, w, &spec.effective_caps(p), spec.totals[p], tol.eps_free);
            let value = worst / norm;
            Some(NegativePlateCheck { plate: p, constant: k.constant, max_potential: value, checked_nodes: checked, excluded_nodes: excluded, tolerance: tol.potential, pass: value <= tol.potential })
        }
        _ => None,
    };

    let checked_plates: Vec<usize> = match result.formulation {
        Formulation::Green => positive.clone(),
        _ => (0..c.plates.len()).collect(),
    };
    let feasibility = feasibility_violation(&result.solution, spec, &checked_plates);
    let all_finite = plates.iter().all(|pc| pc.below_cap.is_finite() && pc.carried.is_finite()) && negative.as_ref().is_none_or(|n| n.max_potential.is_finite());
    let pass = all_finite && plates.iter().all(|pc| pc.pass) && negative.as_ref().is_none_or(|n| n.pass) && feasibility <= tol.feasibility;
    Ok(KktReport { formulation: result.formulation, plates, negative, feasibility, feasibility_tolerance: tol.feasibility, normalization: norm, converged: result.converged, pass })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub trials: usize,
    /// trials where G strictly increased
    pub increased: usize,
    /// min over trials of ΔG / (2·moved mass·normalization)
    pub worst_slope: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Random feasible transfers of mass between two nodes of one plate. Each
/// change of G is exact for the quadratic: `2δ(W_k − W_i) + δ²(κ_kk + κ_ii − 2κ_ik)`.
/// Passes when no transfer lowers G by more than `tol.kkt` per unit moved.
pub fn transfer_check(result: &SolveResult, spec: &ProblemSpec, trials: usize, seed: u64, tol: &Tolerances) -> Result<TransferReport> {
    if result.formulation == Formulation::Green {
        return Err(Error::InvalidSpec("transfers are checked on the Riesz form; lift the Green result first".into()));
    }
    let c = &spec.condenser;
    let w = fresh_potentials(&result.solution, spec)?;
    let norm = spec.positive_plates().iter().filter_map(|&j| result.kkt[j].as_ref()).map(|k| k.constant.abs()).fold(1.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let movable: Vec<usize> = (0..c.plates.len()).filter(|&j| c.plates[j].len() >= 2).collect();
    if movable.is_empty() {
        return Err(Error::InvalidSpec("no plate has two nodes to move mass between".into()));
    }
    let mut increased = 0;
    let mut worst = f64::INFINITY;
    let mut done = 0;
    let mut attempts = 0;
    while done < trials && attempts < trials * 1000 {
        attempts += 1;
        let j = movable[rng.random_range(0..movable.len())];
        let x = &result.solution.components[j].weights;
        let caps = spec.effective_caps(j);
        // donors and receivers in the same sense as the KKT reading
        let eps = tol.eps_free * spec.totals[j];
        let donors: Vec<usize> = (0..x.len()).filter(|&i| x[i] > eps).collect();
        let i = donors[rng.random_range(0..donors.len())];
        let k = rng.random_range(0..x.len());
        if k == i || !(x[k] < caps[k] - eps) {
            continue;
        }
        let room = x[i].min(caps[k] - x[k]);
        let delta = rng.random_range(0.1..=1.0) * room;
        if !(delta > 0.0) {
            continue;
        }
        let plate = &c.plates[j];
        let (a, b) = (&c.pool[plate.pool_index[i]], &c.pool[plate.pool_index[k]]);
        let curv = kernel::pair_value(a, a, &spec.kernel) + kernel::pair_value(b, b, &spec.kernel) - 2.0 * kernel::pair_value(a, b, &spec.kernel);
        let change = 2.0 * delta * (w[j][k] - w[j][i]) + delta * delta * curv;
        if change > 0.0 {
            increased += 1;
        }
        worst = worst.min(change / (2.0 * delta * norm));
        done += 1;
    }
    let pass = done == trials && worst >= -tol.kkt;
    Ok(TransferReport { trials: done, increased, worst_slope: worst, tolerance: tol.kkt, pass })
}

/// Solution with mass moved from one free node to another of the first
/// positive plate, from the lower to the higher potential, and G before/after
/// by direct evaluation.
#[derive(Clone, Debug)]
pub struct HandPerturbation {
    pub perturbed: VectorMeasure,
    pub moved: f64,
    pub before: f64,
    pub after: f64,
}

pub fn hand_perturbation(result: &SolveResult, spec: &ProblemSpec, fraction: f64, tol: &Tolerances) -> Result<HandPerturbation> {
    let j = *spec.positive_plates().first().ok_or_else(|| Error::InvalidSpec("no positive plate".into()))?;
    let w = fresh_potentials(&result.solution, spec)?;
    let x = &result.solution.components[j].weights;
    let caps = spec.effective_caps(j);
    let eps = tol.eps_free * spec.totals[j];
    let free: Vec<usize> = (0..x.len()).filter(|&i| x[i] > eps && x[i] < caps[i] - eps).collect();
    if free.len() < 2 {
        return Err(Error::WrongScenario("the first positive plate has fewer than two free nodes".into()));
    }
    // donor: lowest potential; receiver: highest
    let donor = *free.iter().min_by(|a, b| w[j][**a].total_cmp(&w[j][**b])).expect("nonempty");
    let recv = *free.iter().filter(|&&i| i != donor).max_by(|a, b| w[j][**a].total_cmp(&w[j][**b])).expect("two free nodes");
    let moved = (fraction * spec.totals[j]).min(x[donor]).min(caps[recv] - x[recv]);
    let mut perturbed = result.solution.clone();
    perturbed.components[j].weights[donor] -= moved;
    perturbed.components[j].weights[recv] += moved;
    let before = crate::solver::gauss_value(spec, &result.solution)?;
    let after = crate::solver::gauss_value(spec, &perturbed)?;
    Ok(HandPerturbation { perturbed, moved, before, after })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub probes: usize,
    pub applicable: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneReport {
    pub constant: f64,
    pub normalization: f64,
    pub checks: Vec<ZoneCheck>,
    /// zero-weight negative-plate nodes carrying ξ-mass but no λ-mass (pg)
    pub unsupported_cap_nodes: usize,
    /// grid points kept after the distance filter
    pub grid_probes: usize,
    pub pass: bool,
}

/// Points of an axis-aligned grid around the first positive plate, kept at
/// least two cell radii from every atom.
pub fn probe_grid(spec: &ProblemSpec, per_axis: usize) -> Vec<Vec<f64>> {
    let c = &spec.condenser;
    let plate = &c.plates[spec.positive_plates()[0]];
    let n = c.n;
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for nd in &plate.nodes {
        for d in 0..n {
            lo[d] = lo[d].min(nd.position[d]);
            hi[d] = hi[d].max(nd.position[d]);
        }
    }
    for d in 0..n {
        let pad = (0.25 * (hi[d] - lo[d])).max(1.0);
        lo[d] -= pad;
        hi[d] += pad;
    }
    let m = per_axis.max(2);
    let total = m.pow(n as u32);
    let keep = |x: &[f64]| c.pool.iter().all(|a| geometry::dist(&a.position, x) >= 2.0 * a.cell_radius);
    let pts: Vec<Option<Vec<f64>>> = spec.options.exec.map(total, |mut idx| {
        let mut x = vec![0.0; n];
        for d in 0..n {
            let t = (idx % m) as f64 / (m - 1) as f64;
            idx /= m;
            x[d] = lo[d] + t * (hi[d] - lo[d]);
        }
        keep(&x).then_some(x)
    });
    pts.into_iter().flatten().collect()
}

fn check(name: &str, value: f64, tolerance: f64, probes: usize, pass: bool) -> ZoneCheck {
    ZoneCheck { name: name.into(), value, tolerance, probes, applicable: true, pass }
}

/// Scalar case (one positive plate, unit masses, no external field): (i) the
/// Riesz potential equals the Green potential of λ⁺ inside D, (ii) it equals
/// c₁ where the cap is slack, (iii) it never exceeds c₁, and (iv) for α < 2
/// with a fat complement, every cap-carried node carries mass and off the
/// cap's support the potential stays below c₁. `domain` must sweep onto the
/// negative plate's nodes.
pub fn scalar_zone_checks(result: &SolveResult, spec: &ProblemSpec, domain: &GreenDomain, grid_per_axis: usize, tol: &Tolerances) -> Result<ZoneReport> {
    let c = &spec.condenser;
    let positive = spec.positive_plates();
    if positive.len() != 1 || c.plates.len() != 2 {
        return Err(Error::WrongScenario("zone checks need exactly one positive and one negative plate".into()));
    }
    if spec.totals.iter().any(|t| *t != 1.0) {
        return Err(Error::WrongScenario("zone checks need unit masses".into()));
    }
    if !matches!(spec.field, ExternalField::Zero) {
        return Err(Error::WrongScenario("zone checks need a zero external field".into()));
    }
    if result.formulation == Formulation::Green {
        return Err(Error::InvalidSpec("zone checks read the Riesz potential; lift the Green result first".into()));
    }
    let (one, p) = (positive[0], spec.negative_plate());
    let plate = &c.plates[one];
    let lam = &result.solution.components[one].weights;
    let exec = spec.options.exec;
    let alpha_below_two = spec.kernel.alpha < 2.0;
    let fat_complement = c.plates[p].nodes.iter().any(|n| n.kind == CellKind::Volume);
    let names = ["potential equals Green potential in D", "potential equals c1 where cap slack", "potential at most c1 everywhere", "cap support carried, potential below c1 off it"];

    if !(lam.iter().sum::<f64>() > 0.0) || !(result.solution.components[p].total_mass() > 0.0) {
        let checks = names.iter().enumerate().map(|(i, n)| ZoneCheck { name: (*n).into(), value: f64::INFINITY, tolerance: tol.potential, probes: 0, applicable: i < 3 || (alpha_below_two && fat_complement), pass: false }).collect();
        return Ok(ZoneReport { constant: 0.0, normalization: 1.0, checks, unsupported_cap_nodes: 0, grid_probes: 0, pass: false });
    }

    let w = fresh_potentials(&result.solution, spec)?;
    let caps = spec.effective_caps(one);
    let k1 = plate_kkt(lam, &w[one], &caps, 1.0, tol.eps_free);
    let c1 = k1.constant;
    let norm = c1.abs().max(1.0);
    let eps = tol.eps_free;

    let r = c.resultant_weights(&result.solution)?;
    let riesz_at = |pts: &[Vec<f64>]| kernel::potential(&c.pool, &r, pts, &spec.kernel, exec);
    let grid = probe_grid(spec, grid_per_axis);
    let dom = c.plates[p].geometry.swept_domain();
    let inside: Vec<Vec<f64>> = grid.iter().filter(|x| dom.as_ref().is_none_or(|d| d.contains(x))).cloned().collect();

    // (i) κ(x,λ) − g(x,λ⁺) = κ(x,(λ⁺)′) − κ(x,λ^p)
    let swept = domain.sweep(&plate.nodes, lam, exec)?;
    let ext = domain.sweeper().exterior();
    let mut probes_i: Vec<Vec<f64>> = pool_points(&plate.nodes);
    probes_i.extend(inside.iter().cloned());
    let a = kernel::potential(ext, &swept.swept, &probes_i, &spec.kernel, exec);
    let b = kernel::potential(&c.plates[p].nodes, &result.solution.components[p].weights, &probes_i, &spec.kernel, exec);
    let v1 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / norm;

    // (ii) at nodes strictly below the cap
    let slack: Vec<usize> = (0..lam.len()).filter(|&i| lam[i] < caps[i] - eps).collect();
    let v2 = slack.iter().map(|&i| (w[one][i] - c1).abs()).fold(0.0, f64::max) / norm;

    // (iii) everywhere: all atoms plus the grid
    let mut probes_iii = pool_points(&c.pool);
    probes_iii.extend(grid.iter().cloned());
    let pot3 = riesz_at(&probes_iii);
    let v3 = pot3.iter().map(|u| (u - c1).max(0.0)).fold(0.0, f64::max) / norm;

    let mut checks = vec![
        check(names[0], v1, tol.potential, probes_i.len(), v1 <= tol.potential),
        check(names[1], v2, tol.potential, slack.len(), v2 <= tol.potential),
        check(names[2], v3, tol.potential, probes_iii.len(), v3 <= tol.potential),
    ];

    // (iv) cap-carried nodes carry λ⁺; off the cap's support the potential is below c₁
    let unsupported = (0..lam.len()).filter(|&i| caps[i] > 0.0 && !(lam[i] > tol.eps_supp)).count();
    let mut off: Vec<Vec<f64>> = plate.nodes.iter().zip(&caps).filter(|(_, cap)| **cap == 0.0).map(|(n, _)| n.position.clone()).collect();
    off.extend(inside.iter().cloned());
    // with no off-support probes the strict inequality is vacuous and reported as 0
    let v4 = if off.is_empty() { 0.0 } else { riesz_at(&off).iter().map(|u| (u - c1) / norm).fold(f64::NEG_INFINITY, f64::max) };
    let applicable = alpha_below_two && fat_complement;
    let below = off.is_empty() || v4 < 0.0;
    checks.push(ZoneCheck { name: names[3].into(), value: v4, tolerance: 0.0, probes: off.len(), applicable, pass: !applicable || (unsupported == 0 && below) });

    let pass = c1 > 0.0 && checks.iter().all(|ch| ch.pass);
    Ok(ZoneReport { constant: c1, normalization: norm, checks, unsupported_cap_nodes: unsupported, grid_probes: grid.len(), pass })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellMass {
    pub layer: usize,
    pub nodes: usize,
    pub mass: f64,
    pub carries: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub alpha: f64,
    pub total_mass: f64,
    /// fraction of mass within one cell radius of the boundary (α = 2)
    pub boundary_fraction: Option<f64>,
    /// mass per layer of the negative plate (α < 2)
    pub shells: Vec<ShellMass>,
    pub threshold: f64,
    pub pass: bool,
}

/// Where the negative component sits: on the boundary for α = 2, in every
/// radial shell of the complement for α < 2.
pub fn support_report(result: &SolveResult, spec: &ProblemSpec, tol: &Tolerances) -> Result<SupportReport> {
    let p = spec.negative_plate();
    let plate = &spec.condenser.plates[p];
    let x = &result.solution.components[p].weights;
    let total: f64 = x.iter().sum();
    let alpha = spec.kernel.alpha;
    if alpha >= 2.0 {
        let fraction = if plate.len() == 1 {
            1.0
        } else {
            let domain = plate.geometry.swept_domain().ok_or_else(|| Error::WrongScenario("the negative plate does not bound a domain".into()))?;
            let near: f64 = plate.nodes.iter().zip(x).filter(|(n, _)| domain.boundary_distance(&n.position) <= n.cell_radius * (1.0 + 1e-12)).map(|(_, w)| *w).sum();
            if total > 0.0 { near / total } else { 0.0 }
        };
        return Ok(SupportReport { alpha, total_mass: total, boundary_fraction: Some(fraction), shells: Vec::new(), threshold: tol.support_fraction, pass: fraction >= tol.support_fraction });
    }
    let layers = plate.nodes.iter().map(|n| n.layer).max().map_or(0, |m| m + 1);
    let mut shells: Vec<ShellMass> = (0..layers).map(|layer| ShellMass { layer, nodes: 0, mass: 0.0, carries: false }).collect();
    for (n, w) in plate.nodes.iter().zip(x) {
        shells[n.layer].nodes += 1;
        shells[n.layer].mass += w;
    }
    shells.retain(|s| s.nodes > 0);
    for s in &mut shells {
        s.carries = s.mass > tol.eps_supp * s.nodes as f64;
    }
    let pass = shells.iter().all(|s| s.carries);
    Ok(SupportReport { alpha, total_mass: total, boundary_fraction: None, shells, threshold: tol.eps_supp, pass })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub riesz_energy: f64,
    pub green_energy: f64,
    /// |G_α − G_g| / |G_g|
    pub relative_gap: f64,
    /// |G_α − G_g| / max(|G_g|, 1)
    pub normalized_gap: f64,
    pub semimetric_distance: f64,
    pub relative_distance: f64,
    pub lifted_mass_gap: f64,
    pub tolerance: f64,
    pub mass_tolerance: f64,
    pub pass: bool,
}

/// Riesz optimum against the Green optimum and its lift to the negative plate.
/// The tolerance scales with the potential residual of the sweep that built
/// the lifted negative component.
pub fn equivalence_check(riesz: &SolveResult, green: &SolveResult, lifted: &Lifted, spec: &ProblemSpec, tol: &Tolerances) -> Result<EquivalenceReport> {
    let (ga, gg) = (riesz.energy, green.energy);
    let diff = (ga - gg).abs();
    let relative_gap = if gg != 0.0 { diff / gg.abs() } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    let normalized_gap = diff / gg.abs().max(1.0);
    let distance = crate::model::semimetric_distance(&riesz.solution, &lifted.result.solution, &spec.condenser, &spec.kernel)?;
    let norm = r_norm(&riesz.solution, spec)?;
    let relative_distance = if norm > 0.0 { distance / norm } else { distance };
    let tolerance = tol.equivalence_floor.max(3.0 * lifted.sweep.potential_residual);
    let lifted_mass_gap = lifted.result.diagnostics.lifted_mass_gap.unwrap_or(0.0);
    let pass = relative_gap <= tolerance && lifted_mass_gap <= tol.lifted_mass;
    Ok(EquivalenceReport { riesz_energy: ga, green_energy: gg, relative_gap, normalized_gap, semimetric_distance: distance, relative_distance, lifted_mass_gap, tolerance, mass_tolerance: tol.lifted_mass, pass })
}

/// `‖Rμ‖_α`.
pub fn r_norm(mu: &VectorMeasure, spec: &ProblemSpec) -> Result<f64> {
    let r = spec.condenser.resultant_weights(mu)?;
    Ok(kernel::pool_energy(&spec.condenser.pool, &r, &spec.kernel, spec.options.exec)?.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub energy_gap: f64,
    pub distance: f64,
    pub relative_distance: f64,
    pub energy_tolerance: f64,
    pub distance_tolerance: f64,
    pub pass: bool,
}

/// Two solves of problems with the same optimum: relative energy gap and
/// relative R-distance.
pub fn agreement(a: &SolveResult, b: &SolveResult, spec: &ProblemSpec, energy_tol: f64, distance_tol: f64) -> Result<Agreement> {
    let energy_gap = (a.energy - b.energy).abs() / a.energy.abs().max(f64::MIN_POSITIVE);
    let distance = crate::model::semimetric_distance(&a.solution, &b.solution, &spec.condenser, &spec.kernel)?;
    let norm = r_norm(&a.solution, spec)?;
    let relative_distance = if norm > 0.0 { distance / norm } else { distance };
    Ok(Agreement { energy_gap, distance, relative_distance, energy_tolerance: energy_tol, distance_tolerance: distance_tol, pass: energy_gap <= energy_tol && relative_distance <= distance_tol })
}

/// The same problem with the negative plate capped by `factor` times the
/// sweep of the positive caps.
pub fn with_sigma_cap(spec: &ProblemSpec, domain: &GreenDomain, factor: f64) -> Result<ProblemSpec> {
    let swept = crate::solver::swept_constraint(spec, domain)?;
    let mut caps = spec.constraint.caps.clone();
    caps[spec.negative_plate()] = PlateCap::Capped { weights: swept.iter().map(|s| factor * s).collect() };
    ProblemSpec::new(spec.condenser.clone(), spec.kernel, spec.totals.clone(), spec.field.clone(), Constraint { caps }, spec.options)
}

/// One exhaustion stage: the disk of radius ℓ at height 1/ℓ over the plane x1 = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExhaustionStage {
    pub stage: usize,
    pub radius: f64,
    pub height: f64,
    pub spacing: f64,
    pub nodes: usize,
    pub capacity: f64,
    /// 1 / capacity: the minimal Green energy of a unit measure on the disk
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub stages: Vec<ExhaustionStage>,
    /// least-squares slope of log E against log ℓ
    pub slope: Option<f64>,
    pub strictly_decreasing: bool,
    pub floor: f64,
    pub above_floor: bool,
    pub pass: bool,
}

/// Nodes of stage ℓ; the ring width resolves both the disk and its height.
pub fn stage_nodes(stage: usize) -> Result<Vec<Node>> {
    if stage == 0 {
        return Err(Error::InvalidSpec("stages start at 1".into()));
    }
    let l = stage as f64;
    let spacing = (l / 8.0).min(1.0 / l);
    Ok(polar_layout([1.0 / l, 0.0, 0.0], &RingPlan::uniform(l, spacing))?.nodes)
}

fn newtonian() -> KernelSpec {
    KernelSpec::riesz(3, 2.0).expect("valid kernel")
}

/// Minimal Green energies over the stages, with the exact half-space Green
/// function. The plates are uncapped, so each stage is the Green
/// equilibrium problem on its disk.
pub fn unsolvability_sweep(stages: &[usize], tol: &Tolerances, exec: Execution) -> Result<SweepTable> {
    let mut rows = Vec::with_capacity(stages.len());
    for &s in stages {
        let nodes = stage_nodes(s)?;
        let g = halfspace_reflection_green(&nodes, &newtonian(), exec)?;
        let eq = equilibrium_from_matrix(&g.matrix.entries, 1.0, exec)?;
        let l = s as f64;
        rows.push(ExhaustionStage { stage: s, radius: l, height: 1.0 / l, spacing: (l / 8.0).min(1.0 / l), nodes: nodes.len(), capacity: eq.capacity, energy: eq.energy });
    }
    let strictly_decreasing = rows.windows(2).all(|w| w[1].energy < w[0].energy);
    let slope = (rows.len() >= 2).then(|| {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| ((r.stage as f64).ln(), r.energy.ln())).collect();
        let m = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / m, pts.iter().map(|p| p.1).sum::<f64>() / m);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    let above_floor = rows.iter().all(|r| r.energy > tol.energy_floor);
    let pass = !rows.is_empty() && strictly_decreasing && slope.is_none_or(|s| s < 0.0) && above_floor && rows.iter().all(|r| r.energy > 0.0);
    Ok(SweepTable { stages: rows, slope, strictly_decreasing, floor: tol.energy_floor, above_floor, pass })
}

/// Stage energy with the Green kernel realised by sweeping onto a truncated
/// polar grid of the plane, for cross-checking the reflection formula.
pub fn swept_stage_energy(stage: usize, plane: &RingPlan, exec: Execution) -> Result<f64> {
    let nodes = stage_nodes(stage)?;
    let ext = polar_layout([0.0; 3], plane)?.nodes;
    let domain = GreenDomain::new(0, ext, &newtonian(), Some(geometry::Domain::HalfSpace), exec)?;
    let g = domain.green_matrix(&nodes, exec)?;
    Ok(equilibrium_from_matrix(&g.matrix.entries, 1.0, exec)?.energy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapSweepRow {
    pub stage: usize,
    /// ‖λ_ℓ‖_g for the unit Green equilibrium measure of the stage disk
    pub piece_norm: f64,
    /// ‖λ_ℓ‖²_g + 2 g(ζ, λ_ℓ)
    pub value: f64,
    /// ‖λ_ℓ‖²_g + 2 ‖ζ‖_g ‖λ_ℓ‖_g
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapSweep {
    pub charge_norm: f64,
    pub rows: Vec<CapSweepRow>,
    pub bounded: bool,
    pub decreasing: bool,
}

/// Gauss values of the stage pieces against a nonnegative unit charge ζ
/// spread over a small sphere inside the half-space, with their
/// Cauchy–Schwarz bounds. Both tend to zero as the disks grow.
pub fn cap_sweep(stages: &[usize], exec: Execution) -> Result<CapSweep> {
    let k = newtonian();
    let zeta = sphere_nodes(&[2.0, 0.0, 0.0], 0.25, 64)?;
    let zw = vec![1.0 / zeta.len() as f64; zeta.len()];
    let gz = halfspace_reflection_green(&zeta, &k, exec)?;
    let charge_norm = gz.matrix.entries.bilinear(&zw, &zw, exec).max(0.0).sqrt();
    let mut rows = Vec::new();
    for &s in stages {
        let nodes = stage_nodes(s)?;
        let g = halfspace_reflection_green(&nodes, &k, exec)?;
        let eq = equilibrium_from_matrix(&g.matrix.entries, 1.0, exec)?;
        let piece_norm = eq.energy.max(0.0).sqrt();
        // g(ζ, λ) by reflection
        let pot = kernel::potential(&nodes, &eq.weights, &pool_points(&zeta), &k, exec);
        let images: Vec<Node> = nodes.iter().map(|n| Node { position: vec![-n.position[0], n.position[1], n.position[2]], ..n.clone() }).collect();
        let img = kernel::potential(&images, &eq.weights, &pool_points(&zeta), &k, exec);
        let mutual = dot(&zw, &pot) - dot(&zw, &img);
        rows.push(CapSweepRow { stage: s, piece_norm, value: eq.energy + 2.0 * mutual, bound: eq.energy + 2.0 * charge_norm * piece_norm });
    }
    let bounded = rows.iter().all(|r| r.value <= r.bound * (1.0 + 1e-12) && r.value >= 0.0);
    let decreasing = rows.windows(2).all(|w| w[1].bound < w[0].bound);
    Ok(CapSweep { charge_norm, rows, bounded, decreasing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sphere_nodes;
    use crate::model::{Condenser, PlateGeometry, Sign};
    use crate::solver::{solve_riesz, SolverOptions};
    use approx::assert_relative_eq;

    fn small_ball(alpha: f64) -> ProblemSpec {
        let s = crate::scenarios::BallScenario { alpha, resolution: 0.34, truncation: 8.0, max_per_shell: Some(60), ..Default::default() };
        s.build(SolverOptions::default()).unwrap()
    }

    #[test]
    fn equilibrium_potential_is_constant_on_carried_nodes() {
        let nodes = sphere_nodes(&[0.0; 3], 1.0, 80).unwrap();
        let far = vec![Node::volume(vec![50.0, 0.0, 0.0], 1.0, 0)];
        let cond = Condenser::from_plates(
            3,
            vec![
                (Sign::Positive, PlateGeometry::ExplicitCloud { nodes: nodes.clone() }, nodes.clone()),
                (Sign::Negative, PlateGeometry::ExplicitCloud { nodes: far.clone() }, far),
            ],
        )
        .unwrap();
        let spec = ProblemSpec::new(cond, newtonian(), vec![1.0, 1.0], ExternalField::Zero, Constraint { caps: vec![PlateCap::Unbounded, PlateCap::Unbounded] }, SolverOptions::default()).unwrap();
        let res = solve_riesz(&spec).unwrap();
        let rep = kkt_report(&res, &spec, None, &Tolerances::default()).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.plates[0].carried <= 1e-6);
    }

    #[test]
    fn small_ball_passes_and_perturbation_is_caught() {
        let spec = small_ball(1.5);
        let tol = Tolerances::default();
        let res = solve_riesz(&spec).unwrap();
        assert!(res.converged);
        let rep = kkt_report(&res, &spec, None, &tol).unwrap();
        assert!(rep.pass, "{rep:?}");
        let tr = transfer_check(&res, &spec, 50, 7, &tol).unwrap();
        assert_eq!(tr.trials, 50);
        assert!(tr.pass, "{tr:?}");
        let hp = hand_perturbation(&res, &spec, 0.01, &tol).unwrap();
        assert!(hp.after > hp.before);
        let mut moved = res.clone();
        moved.solution = hp.perturbed;
        let bad = kkt_report(&moved, &spec, None, &tol).unwrap();
        assert!(bad.plates[0].carried > tol.kkt);
        assert!(!bad.pass);
    }

    #[test]
    fn zone_checks_reject_zero_and_wrong_scenarios() {
        let spec = small_ball(1.5);
        let domain = crate::solver::green_domain_for(&spec).unwrap();
        let mut res = solve_riesz(&spec).unwrap();
        let ok = scalar_zone_checks(&res, &spec, &domain, 8, &Tolerances::default()).unwrap();
        assert!(ok.constant > 0.0);
        for w in res.solution.components.iter_mut() {
            w.weights.iter_mut().for_each(|x| *x = 0.0);
        }
        let z = scalar_zone_checks(&res, &spec, &domain, 8, &Tolerances::default()).unwrap();
        assert!(!z.pass);
        assert!(z.checks.iter().all(|c| !c.pass || !c.applicable));
        let bad = spec.clone().with_options(SolverOptions::default());
        let mut wrong = bad;
        wrong.totals = vec![2.0, 2.0];
        assert!(matches!(scalar_zone_checks(&res, &wrong, &domain, 8, &Tolerances::default()), Err(Error::WrongScenario(_))));
    }

    #[test]
    fn identical_inputs_have_zero_gap() {
        let spec = small_ball(1.5);
        let res = solve_riesz(&spec).unwrap();
        let a = agreement(&res, &res, &spec, 1e-12, 1e-12).unwrap();
        assert_eq!(a.energy_gap, 0.0);
        assert_eq!(a.distance, 0.0);
    }

    #[test]
    fn single_node_negative_plate_is_concentrated() {
        let nodes = sphere_nodes(&[0.0; 3], 1.0, 20).unwrap();
        let cond = Condenser::from_plates(
            3,
            vec![
                (Sign::Positive, PlateGeometry::ExplicitCloud { nodes: nodes.clone() }, nodes),
                (Sign::Negative, PlateGeometry::ExplicitCloud { nodes: vec![] }, vec![Node::volume(vec![5.0, 0.0, 0.0], 1.0, 0)]),
            ],
        )
        .unwrap();
        let spec = ProblemSpec::new(cond, newtonian(), vec![1.0, 1.0], ExternalField::Zero, Constraint { caps: vec![PlateCap::Unbounded, PlateCap::Unbounded] }, SolverOptions::default()).unwrap();
        let res = solve_riesz(&spec).unwrap();
        let rep = support_report(&res, &spec, &Tolerances::default()).unwrap();
        assert_eq!(rep.boundary_fraction, Some(1.0));
    }

    #[test]
    fn reflection_energy_matches_swept_green() {
        let direct = unsolvability_sweep(&[1], &Tolerances::default(), Execution::Parallel).unwrap();
        assert!(direct.slope.is_none());
        let plane = RingPlan { spacing: 0.125, inner_radius: 3.0, outer_radius: 400.0, grading: 1.15, max_per_ring: Some(96) };
        let swept = swept_stage_energy(1, &plane, Execution::Parallel).unwrap();
        assert_relative_eq!(swept, direct.stages[0].energy, max_relative = 1e-2);
    }

    #[test]
    fn cap_sweep_values_sit_below_their_bounds() {
        let cs = cap_sweep(&[1, 2, 3], Execution::Parallel).unwrap();
        assert!(cs.bounded, "{cs:?}");
        assert!(cs.decreasing);
    }
}
