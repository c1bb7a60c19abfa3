//! Constrained minimum-energy problem for vector measures on a condenser.
//!
//! The Gauss functional of a weight vector x (all plates stacked) is
//! `xᵀHx + 2fᵀx` with `H = S Pᵀ K P S` (P scatters plate nodes into the
//! shared pool, S holds the plate signs). Feasible points satisfy, per plate,
//! `0 <= x <= cap` and `Σ x = a_j`. The engine alternates a few projected
//! gradient steps (Barzilai-Borwein step, exact line search on the segment)
//! with conjugate gradients on the current free face, so the objective never
//! increases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::balayage::{BalayageResult, GreenDomain, GreenMatrix};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kernel::{self, ExternalField, KernelSpec, KernelVariant};
use crate::linalg::{dot, norm_inf, Matrix};
use crate::model::{Condenser, Node, VectorMeasure};

/// Euclidean projection of `w` onto `{0 <= v <= caps, Σ v = total}`.
/// Caps may be infinite.
pub fn project_capped_simplex(w: &[f64], caps: &[f64], total: f64) -> Result<Vec<f64>> {
    assert_eq!(w.len(), caps.len());
    if !(total > 0.0) {
        return Err(Error::InvalidSpec(format!("projection total must be positive, got {total}")));
    }
    let cap_sum: f64 = caps.iter().sum();
    if cap_sum < total || w.is_empty() {
        return Err(Error::Infeasible(format!("caps sum to {cap_sum:e}, below the required total {total:e}")));
    }
    let clamp = |tau: f64| -> Vec<f64> { w.iter().zip(caps).map(|(x, c)| (x - tau).max(0.0).min(*c)).collect() };
    let mass = |tau: f64| -> f64 { w.iter().zip(caps).map(|(x, c)| (x - tau).max(0.0).min(*c)).sum() };

    let wmax = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let wmin = w.iter().copied().fold(f64::INFINITY, f64::min);
    let fin_min = w.iter().zip(caps).filter(|(_, c)| c.is_finite()).map(|(x, c)| x - c).fold(f64::INFINITY, f64::min);
    // mass(lo) >= total and mass(hi) = 0
    let mut lo = fin_min.min(wmin - total) - 1.0;
    let mut hi = wmax;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) > total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // mass is piecewise linear in τ; solve exactly on the piece found
    let tau = 0.5 * (lo + hi);
    let mut fixed = 0.0;
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    for (x, c) in w.iter().zip(caps) {
        let v = x - tau;
        if v <= 0.0 {
        } else if v >= *c {
            fixed += c;
        } else {
            free_sum += x;
            free_count += 1;
        }
    }
    let tau = if free_count > 0 { (free_sum + fixed - total) / free_count as f64 } else { tau };
    let mut v = clamp(tau);
    // remove the last rounding residue on the free coordinates
    let resid = total - v.iter().sum::<f64>();
    if resid != 0.0 {
        let slack: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.0 && v[i] < caps[i]).collect();
        if !slack.is_empty() {
            let share = resid / slack.len() as f64;
            for i in slack {
                v[i] = (v[i] + share).max(0.0).min(caps[i]);
            }
        }
    }
    Ok(v)
}

/// Upper bound on one plate's measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlateCap {
    Unbounded,
    Capped { weights: Vec<f64> },
}

impl PlateCap {
    pub fn values(&self, len: usize) -> Vec<f64> {
        match self {
            PlateCap::Unbounded => vec![f64::INFINITY; len],
            PlateCap::Capped { weights } => weights.clone(),
        }
    }

    pub fn is_capped(&self) -> bool {
        matches!(self, PlateCap::Capped { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// one entry per plate
    pub caps: Vec<PlateCap>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// relative objective decrease over `patience` steps
    pub tol_obj: f64,
    pub patience: usize,
    /// normalized KKT violation
    pub tol_kkt: f64,
    pub max_iters: usize,
    /// a node is free when its weight is at least `eps_free · a_j` away from 0 and its cap
    pub eps_free: f64,
    /// random start when set, weights proportional to the caps otherwise
    pub seed: Option<u64>,
    pub pg_steps: usize,
    pub cg_max: usize,
    pub exec: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol_obj: 1e-10, patience: 20, tol_kkt: 1e-6, max_iters: 50_000, eps_free: 1e-8, seed: None, pg_steps: 5, cg_max: 200, exec: Execution::Parallel }
    }
}

/// Validated problem data. Field values are sampled at construction; nodes
/// with a +∞ field value are frozen at zero weight.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub condenser: Condenser,
    pub kernel: KernelSpec,
    pub totals: Vec<f64>,
    pub field: ExternalField,
    pub constraint: Constraint,
    pub options: SolverOptions,
    field_values: Vec<Vec<f64>>,
    negative: usize,
}

impl ProblemSpec {
    pub fn new(condenser: Condenser, kernel: KernelSpec, totals: Vec<f64>, field: ExternalField, constraint: Constraint, options: SolverOptions) -> Result<Self> {
        kernel.validate()?;
        if kernel.n != condenser.n {
            return Err(Error::InvalidSpec(format!("kernel dimension {} differs from condenser dimension {}", kernel.n, condenser.n)));
        }
        if kernel.variant != KernelVariant::Riesz {
            return Err(Error::InvalidSpec("the problem is stated with the Riesz kernel; the Green form is derived from it".into()));
        }
        let negative = condenser.negative_plate()?;
        let m = condenser.plates.len();
        if totals.len() != m {
            return Err(Error::Alignment { expected: m, got: totals.len() });
        }
        if constraint.caps.len() != m {
            return Err(Error::Alignment { expected: m, got: constraint.caps.len() });
        }
        if let Some(a) = totals.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidSpec(format!("plate totals must be positive and finite, got {a}")));
        }
        let positive_sum: f64 = condenser.i_plus().iter().map(|&j| totals[j]).sum();
        if (totals[negative] - positive_sum).abs() > 1e-12 * positive_sum.max(1.0) {
            return Err(Error::InvalidSpec(format!("negative plate total {} must equal the positive total {positive_sum}", totals[negative])));
        }
        if !(options.tol_kkt > 0.0 && options.tol_obj > 0.0 && options.eps_free >= 0.0 && options.patience > 0 && options.max_iters > 0) {
            return Err(Error::InvalidSpec("solver tolerances must be positive".into()));
        }
        let field_values = field.node_values(&condenser, &kernel, options.exec)?;
        for (plate, cap) in condenser.plates.iter().zip(&constraint.caps) {
            let values = &field_values[plate.id];
            let frozen = |i: usize| values[i] == f64::INFINITY;
            let available = match cap {
                PlateCap::Unbounded => {
                    if (0..plate.len()).all(frozen) {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                }
                PlateCap::Capped { weights } => {
                    if weights.len() != plate.len() {
                        return Err(Error::InvalidSpec(format!("cap of plate {} has {} weights, plate has {} nodes", plate.id, weights.len(), plate.len())));
                    }
                    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
                        return Err(Error::InvalidSpec(format!("cap weight {w} is not finite and nonnegative")));
                    }
                    weights.iter().enumerate().filter(|(i, _)| !frozen(*i)).map(|(_, w)| w).sum()
                }
            };
            // the constraint asks for strictly more cap mass than the plate must carry
            if !(available > totals[plate.id]) {
                return Err(Error::Infeasible(format!(
                    "plate {}: usable cap mass {available:e} does not exceed the required total {:e}",
                    plate.id, totals[plate.id]
                )));
            }
        }
        Ok(ProblemSpec { condenser, kernel, totals, field, constraint, options, field_values, negative })
    }

    /// Field values per plate, +∞ at frozen nodes.
    pub fn field_values(&self) -> &[Vec<f64>] {
        &self.field_values
    }

    pub fn negative_plate(&self) -> usize {
        self.negative
    }

    pub fn positive_plates(&self) -> Vec<usize> {
        self.condenser.i_plus()
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    /// Caps with frozen nodes set to zero.
    pub fn effective_caps(&self, plate: usize) -> Vec<f64> {
        let p = &self.condenser.plates[plate];
        let mut caps = self.constraint.caps[plate].values(p.len());
        for (c, f) in caps.iter_mut().zip(&self.field_values[plate]) {
            if *f == f64::INFINITY {
                *c = 0.0;
            }
        }
        caps
    }

    fn finite_field(&self, plate: usize) -> Vec<f64> {
        self.field_values[plate].iter().map(|&f| if f == f64::INFINITY { 0.0 } else { f }).collect()
    }

    pub fn frozen_count(&self) -> usize {
        self.field_values.iter().flatten().filter(|f| **f == f64::INFINITY).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    Riesz,
    Green,
    Lifted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    /// max-norm of the accepted update
    pub step: f64,
    pub kkt_residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub at_cap: Vec<usize>,
    pub at_zero: Vec<usize>,
}

/// Per-plate reading of the optimality conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateKkt {
    pub constant: f64,
    /// max of `c − W` over nodes strictly below the cap, normalized
    pub below_cap: f64,
    /// max of `W − c` over carried nodes, normalized
    pub carried: f64,
    pub free_nodes: usize,
}

impl PlateKkt {
    pub fn residual(&self) -> f64 {
        self.below_cap.max(self.carried)
    }
}

/// KKT reading of one plate from its weights, caps and weighted potential.
pub fn plate_kkt(x: &[f64], w: &[f64], caps: &[f64], total: f64, eps_free: f64) -> PlateKkt {
    let eps = eps_free * total;
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    let mut free = Vec::new();
    for i in 0..x.len() {
        let carried = x[i] > eps;
        let below = x[i] < caps[i] - eps;
        if carried {
            hi = hi.max(w[i]);
        }
        if below {
            lo = lo.min(w[i]);
        }
        if carried && below {
            free.push(w[i]);
        }
    }
    let constant = if !free.is_empty() {
        free.sort_by(f64::total_cmp);
        let m = free.len();
        if m % 2 == 1 {
            free[m / 2]
        } else {
            0.5 * (free[m / 2 - 1] + free[m / 2])
        }
    } else if hi.is_finite() && lo.is_finite() {
        0.5 * (hi + lo)
    } else if hi.is_finite() {
        hi
    } else {
        lo
    };
    let scale = constant.abs().max(1.0);
    PlateKkt {
        constant,
        below_cap: if lo.is_finite() { ((constant - lo) / scale).max(0.0) } else { 0.0 },
        carried: if hi.is_finite() { ((hi - constant) / scale).max(0.0) } else { 0.0 },
        free_nodes: free.len(),
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub frozen_nodes: usize,
    /// relative asymmetry of the Green matrix before symmetrization
    pub green_asymmetry: Option<f64>,
    /// worst potential residual of the sweeps behind the Green matrix or the lift
    pub balayage_residual: Option<f64>,
    /// |λ^p total − a_p| after lifting
    pub lifted_mass_gap: Option<f64>,
    /// smallest slack of the σ cap over the swept constraint
    pub sigma_margin: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub formulation: Formulation,
    pub solution: VectorMeasure,
    /// value of the Gauss functional
    pub energy: f64,
    /// `W^{λ,i} = s_i κ(·, Rλ) + f_i` at the nodes of each plate (Green form: g in place of κ, empty for plate p)
    pub potentials: Vec<Vec<f64>>,
    /// effective caps per plate (+∞ when unbounded)
    pub caps: Vec<Vec<f64>>,
    /// per plate; the negative plate's entry is only meaningful in the Riesz form
    pub kkt: Vec<Option<PlateKkt>>,
    pub trace: Vec<TraceRow>,
    pub active_sets: Vec<ActiveSet>,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub options: SolverOptions,
    pub diagnostics: Diagnostics,
}

impl SolveResult {
    /// Estimated constants c_j, positive plates in plate order.
    pub fn constants(&self, condenser: &Condenser) -> Vec<f64> {
        condenser.i_plus().iter().map(|&j| self.kkt[j].map(|k| k.constant).unwrap_or(f64::NAN)).collect()
    }
}

/// One quadratic program over stacked plate blocks.
struct Block {
    plate: usize,
    start: usize,
    caps: Vec<f64>,
    total: f64,
}

/// `H = S Pᵀ K P S` for a pooled Gram matrix.
struct PooledHessian<'a> {
    gram: &'a Matrix,
    map: Vec<usize>,
    sign: Vec<f64>,
    exec: Execution,
}

impl PooledHessian<'_> {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.gram.rows()];
        for ((&k, &s), &v) in self.map.iter().zip(&self.sign).zip(x) {
            r[k] += s * v;
        }
        let y = self.gram.matvec(&r, self.exec);
        self.map.iter().zip(&self.sign).map(|(&k, &s)| s * y[k]).collect()
    }

    fn diag_max(&self) -> f64 {
        self.map.iter().map(|&k| self.gram[(k, k)].abs()).fold(0.0, f64::max)
    }
}

struct EngineOutput {
    x: Vec<f64>,
    w: Vec<f64>,
    objective: f64,
    trace: Vec<TraceRow>,
    converged: bool,
}

struct Engine<'a> {
    h: &'a PooledHessian<'a>,
    f: Vec<f64>,
    blocks: Vec<Block>,
    opts: SolverOptions,
}

impl Engine<'_> {
    fn len(&self) -> usize {
        self.f.len()
    }

    fn range(&self, b: usize) -> std::ops::Range<usize> {
        let end = if b + 1 < self.blocks.len() { self.blocks[b + 1].start } else { self.len() };
        self.blocks[b].start..end
    }

    fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; y.len()];
        for (b, blk) in self.blocks.iter().enumerate() {
            let r = self.range(b);
            out[r.clone()].copy_from_slice(&project_capped_simplex(&y[r], &blk.caps, blk.total)?);
        }
        Ok(out)
    }

    fn kkt(&self, x: &[f64], w: &[f64]) -> Vec<PlateKkt> {
        (0..self.blocks.len())
            .map(|b| {
                let r = self.range(b);
                plate_kkt(&x[r.clone()], &w[r], &self.blocks[b].caps, self.blocks[b].total, self.opts.eps_free)
            })
            .collect()
    }

    fn kkt_max(&self, x: &[f64], w: &[f64]) -> f64 {
        self.kkt(x, w).iter().map(PlateKkt::residual).fold(0.0, f64::max)
    }

    fn start(&self) -> Result<Vec<f64>> {
        let mut rng = self.opts.seed.map(ChaCha8Rng::seed_from_u64);
        let mut x = vec![0.0; self.len()];
        for (b, blk) in self.blocks.iter().enumerate() {
            let r = self.range(b);
            let raw: Vec<f64> = blk
                .caps
                .iter()
                .map(|&c| {
                    let base = if c.is_finite() { c } else { 1.0 };
                    let u = rng.as_mut().map(|g| 0.05 + g.random::<f64>()).unwrap_or(1.0);
                    if c == 0.0 {
                        0.0
                    } else {
                        base * u
                    }
                })
                .collect();
            let s: f64 = raw.iter().sum();
            let scaled: Vec<f64> = raw.iter().map(|v| v * blk.total / s).collect();
            x[r].copy_from_slice(&project_capped_simplex(&scaled, &blk.caps, blk.total)?);
        }
        Ok(x)
    }

    fn objective(&self, x: &[f64], hx: &[f64]) -> f64 {
        dot(x, hx) + 2.0 * dot(&self.f, x)
    }

    fn run(&self) -> Result<EngineOutput> {
        let n = self.len();
        let mut x = self.start()?;
        let mut hx = self.h.apply(&x);
        let mut w: Vec<f64> = hx.iter().zip(&self.f).map(|(a, b)| a + b).collect();
        let mut g = self.objective(&x, &hx);
        let mut t = 1.0 / self.h.diag_max().max(f64::MIN_POSITIVE);
        let mut trace = vec![TraceRow { iter: 0, objective: g, step: 0.0, kkt_residual: self.kkt_max(&x, &w) }];
        let mut steps = 0usize;

        // exact minimization along x -> xn; returns the accepted fraction and the update
        let chord = |x: &mut Vec<f64>, hx: &mut Vec<f64>, w: &mut Vec<f64>, g: &mut f64, xn: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
            let d: Vec<f64> = xn.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            if d.iter().all(|v| *v == 0.0) {
                return (0.0, d, vec![0.0; n]);
            }
            let hd = self.h.apply(&d);
            let dhd = dot(&d, &hd);
            let slope = dot(w, &d);
            if !(dhd > 0.0) || !(slope < 0.0) {
                return (0.0, d, hd);
            }
            let st = (-slope / dhd).min(1.0);
            let change = 2.0 * st * slope + st * st * dhd;
            if !(change < 0.0) {
                return (0.0, d, hd);
            }
            for i in 0..n {
                x[i] += st * d[i];
                hx[i] += st * hd[i];
                w[i] = hx[i] + self.f[i];
            }
            *g += change;
            (st, d, hd)
        };

        let converged = loop {
            let g_outer = g;
            let mut done = None;
            let mut record = |trace: &mut Vec<TraceRow>, g: f64, step: f64, kkt: f64| -> Option<bool> {
                steps += 1;
                trace.push(TraceRow { iter: steps, objective: g, step, kkt_residual: kkt });
                let len = trace.len();
                if kkt < self.opts.tol_kkt && len > self.opts.patience {
                    let old = trace[len - 1 - self.opts.patience].objective;
                    if (old - g) / g.abs().max(f64::MIN_POSITIVE) < self.opts.tol_obj {
                        return Some(true);
                    }
                }
                if steps >= self.opts.max_iters {
                    return Some(false);
                }
                None
            };

            for _ in 0..self.opts.pg_steps {
                let y: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a - t * b).collect();
                let xn = self.project(&y)?;
                let (st, d, hd) = chord(&mut x, &mut hx, &mut w, &mut g, &xn);
                if st > 0.0 {
                    let sy = st * st * dot(&d, &hd);
                    let ss = st * st * dot(&d, &d);
                    if sy > 0.0 {
                        t = ss / sy;
                    }
                }
                let kkt = self.kkt_max(&x, &w);
                if let Some(c) = record(&mut trace, g, st * norm_inf(&d), kkt) {
                    done = Some(c);
                    break;
                }
            }
            if let Some(c) = done {
                break c;
            }

            // conjugate gradients on the face where no bound is active
            let mut free = vec![false; n];
            for (b, blk) in self.blocks.iter().enumerate() {
                for i in self.range(b) {
                    free[i] = x[i] > 0.0 && x[i] < blk.caps[i - blk.start];
                }
            }
            let face = |v: &mut [f64]| {
                for (b, _) in self.blocks.iter().enumerate() {
                    let r = self.range(b);
                    let m = r.clone().filter(|&i| free[i]).count();
                    let mean = if m > 0 { r.clone().filter(|&i| free[i]).map(|i| v[i]).sum::<f64>() / m as f64 } else { 0.0 };
                    for i in r {
                        v[i] = if free[i] { v[i] - mean } else { 0.0 };
                    }
                }
            };
            let mut r = w.clone();
            face(&mut r);
            let stop = 1e-3 * self.opts.tol_kkt * norm_inf(&w).max(1.0);
            if norm_inf(&r) > stop {
                let mut dx = vec![0.0; n];
                let mut p: Vec<f64> = r.iter().map(|v| -v).collect();
                let mut rr = dot(&r, &r);
                let r0 = rr.sqrt();
                for _ in 0..self.opts.cg_max {
                    let mut hp = self.h.apply(&p);
                    face(&mut hp);
                    let php = dot(&p, &hp);
                    if !(php > 0.0) {
                        break;
                    }
                    let a = rr / php;
                    for i in 0..n {
                        dx[i] += a * p[i];
                        r[i] += a * hp[i];
                    }
                    let rn = dot(&r, &r);
                    if rn.sqrt() < 1e-12 * r0 || norm_inf(&r) < stop {
                        break;
                    }
                    let beta = rn / rr;
                    for i in 0..n {
                        p[i] = -r[i] + beta * p[i];
                    }
                    rr = rn;
                }
                let target: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
                let xn = self.project(&target)?;
                let (st, d, _) = chord(&mut x, &mut hx, &mut w, &mut g, &xn);
                let kkt = self.kkt_max(&x, &w);
                if let Some(c) = record(&mut trace, g, st * norm_inf(&d), kkt) {
                    break c;
                }
            }

            // refresh the incrementally updated gradient
            hx = self.h.apply(&x);
            for i in 0..n {
                w[i] = hx[i] + self.f[i];
            }
            if g == g_outer {
                // no step was accepted in a whole round
                break self.kkt_max(&x, &w) < self.opts.tol_kkt;
            }
        };
        Ok(EngineOutput { objective: self.objective(&x, &hx), x, w, trace, converged })
    }
}

fn finish(
    formulation: Formulation,
    condenser: &Condenser,
    plates: &[usize],
    out: EngineOutput,
    engine: &Engine,
    diagnostics: Diagnostics,
) -> SolveResult {
    let mut weights: Vec<Vec<f64>> = condenser.plates.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut potentials: Vec<Vec<f64>> = vec![Vec::new(); condenser.plates.len()];
    let mut caps: Vec<Vec<f64>> = condenser.plates.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut kkt = vec![None; condenser.plates.len()];
    let mut active_sets = vec![ActiveSet::default(); condenser.plates.len()];
    let per_block = engine.kkt(&out.x, &out.w);
    for (b, &j) in plates.iter().enumerate() {
        let r = engine.range(b);
        let blk = &engine.blocks[b];
        weights[j] = out.x[r.clone()].to_vec();
        potentials[j] = out.w[r].to_vec();
        caps[j] = blk.caps.clone();
        kkt[j] = Some(per_block[b]);
        let eps = engine.opts.eps_free * blk.total;
        active_sets[j] = ActiveSet {
            at_cap: (0..blk.caps.len()).filter(|&i| weights[j][i] >= blk.caps[i] - eps).collect(),
            at_zero: (0..blk.caps.len()).filter(|&i| weights[j][i] <= eps).collect(),
        };
    }
    let components = weights.into_iter().enumerate().map(|(i, w)| crate::model::DiscreteMeasure { plate_id: i, weights: w }).collect();
    let kkt_residual = per_block.iter().map(PlateKkt::residual).fold(0.0, f64::max);
    SolveResult {
        formulation,
        solution: VectorMeasure { components },
        energy: out.objective,
        potentials,
        caps,
        kkt,
        iterations: out.trace.last().map(|r| r.iter).unwrap_or(0),
        trace: out.trace,
        active_sets,
        converged: out.converged,
        kkt_residual,
        options: engine.opts,
        diagnostics,
    }
}

/// Minimize the Gauss functional over all plates at once.
pub fn solve_riesz(spec: &ProblemSpec) -> Result<SolveResult> {
    let c = &spec.condenser;
    let exec = spec.options.exec;
    let gram = kernel::assemble_matrix(&c.pool, &spec.kernel, exec)?;
    let plates: Vec<usize> = (0..c.plates.len()).collect();
    let mut map = Vec::new();
    let mut sign = Vec::new();
    let mut f = Vec::new();
    let mut blocks = Vec::new();
    for &j in &plates {
        let p = &c.plates[j];
        blocks.push(Block { plate: j, start: map.len(), caps: spec.effective_caps(j), total: spec.totals[j] });
        map.extend_from_slice(&p.pool_index);
        sign.extend(std::iter::repeat_n(p.sign.value(), p.len()));
        f.extend(spec.finite_field(j));
    }
    let h = PooledHessian { gram: &gram.entries, map, sign, exec };
    let engine = Engine { h: &h, f, blocks, opts: spec.options };
    let out = engine.run()?;
    debug_assert!(engine.blocks.iter().all(|b| b.plate < c.plates.len()));
    let diagnostics = Diagnostics { frozen_nodes: spec.frozen_count(), ..Default::default() };
    Ok(finish(Formulation::Riesz, c, &plates, out, &engine, diagnostics))
}

/// Distinct nodes of the positive plates with, per positive plate, the local index of each node.
#[derive(Clone, Debug)]
pub struct PositivePool {
    pub nodes: Vec<Node>,
    pub plates: Vec<usize>,
    pub index: Vec<Vec<usize>>,
}

pub fn positive_pool(condenser: &Condenser) -> PositivePool {
    let mut local = std::collections::HashMap::new();
    let mut nodes = Vec::new();
    let plates = condenser.i_plus();
    let index = plates
        .iter()
        .map(|&j| {
            condenser.plates[j]
                .pool_index
                .iter()
                .map(|&k| {
                    *local.entry(k).or_insert_with(|| {
                        nodes.push(condenser.pool[k].clone());
                        nodes.len() - 1
                    })
                })
                .collect()
        })
        .collect();
    PositivePool { nodes, plates, index }
}

impl PositivePool {
    /// `Σ_j μ^j` on the pool.
    pub fn pooled(&self, mu: &VectorMeasure) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len()];
        for (&j, idx) in self.plates.iter().zip(&self.index) {
            for (&k, &w) in idx.iter().zip(&mu.components[j].weights) {
                out[k] += w;
            }
        }
        out
    }
}

/// Green domain whose exterior nodes are those of the negative plate.
pub fn green_domain_for(spec: &ProblemSpec) -> Result<GreenDomain> {
    let p = &spec.condenser.plates[spec.negative];
    GreenDomain::new(p.id, p.nodes.clone(), &spec.kernel, p.geometry.swept_domain(), spec.options.exec)
}

/// Green matrix on the positive pool.
pub fn green_matrix_for(spec: &ProblemSpec, domain: &GreenDomain) -> Result<GreenMatrix> {
    domain.green_matrix(&positive_pool(&spec.condenser).nodes, spec.options.exec)
}

/// Minimize `‖R_{A⁺}μ‖²_g + 2⟨f⁺, μ⟩` over the positive plates only.
/// `green` must be assembled on `positive_pool(&spec.condenser).nodes`.
pub fn solve_green_reduced(spec: &ProblemSpec, green: &GreenMatrix) -> Result<SolveResult> {
    let c = &spec.condenser;
    let pool = positive_pool(c);
    if green.matrix.len() != pool.nodes.len() {
        return Err(Error::InvalidSpec(format!("Green matrix has size {}, positive pool has {} nodes", green.matrix.len(), pool.nodes.len())));
    }
    let mut map = Vec::new();
    let mut f = Vec::new();
    let mut blocks = Vec::new();
    for (&j, idx) in pool.plates.iter().zip(&pool.index) {
        blocks.push(Block { plate: j, start: map.len(), caps: spec.effective_caps(j), total: spec.totals[j] });
        map.extend_from_slice(idx);
        f.extend(spec.finite_field(j));
    }
    let sign = vec![1.0; map.len()];
    let h = PooledHessian { gram: &green.matrix.entries, map, sign, exec: spec.options.exec };
    let engine = Engine { h: &h, f, blocks, opts: spec.options };
    let out = engine.run()?;
    let diagnostics = Diagnostics {
        frozen_nodes: spec.frozen_count(),
        green_asymmetry: Some(green.asymmetry),
        balayage_residual: Some(green.max_residual),
        ..Default::default()
    };
    Ok(finish(Formulation::Green, c, &pool.plates, out, &engine, diagnostics))
}

/// Outcome of lifting a Green solution to the full Riesz problem.
#[derive(Clone, Debug)]
pub struct Lifted {
    pub result: SolveResult,
    pub sweep: BalayageResult,
}

/// Put `λ^p := (Σ_j λ^j)′` on the negative plate and evaluate the Riesz problem there.
pub fn lift_green_to_riesz(green: &SolveResult, spec: &ProblemSpec, domain: &GreenDomain) -> Result<Lifted> {
    if green.formulation != Formulation::Green {
        return Err(Error::InvalidSpec("only a Green-form result can be lifted".into()));
    }
    let c = &spec.condenser;
    let p = spec.negative;
    let ext = domain.sweeper().exterior();
    if ext.len() != c.plates[p].len() || ext.iter().zip(&c.plates[p].nodes).any(|(a, b)| a.position != b.position) {
        return Err(Error::InvalidSpec("the Green domain's exterior nodes must be the negative plate's nodes".into()));
    }
    let exec = spec.options.exec;
    let pool = positive_pool(c);
    let pooled = pool.pooled(&green.solution);
    let sweep = if pooled.iter().all(|w| *w == 0.0) {
        BalayageResult { swept: vec![0.0; ext.len()], potential_residual: 0.0, mass_ratio: 0.0, projection_gap: 0.0, orthogonality: 0.0, pivot_iterations: 0 }
    } else {
        domain.sweep(&pool.nodes, &pooled, exec)?
    };
    let mut solution = green.solution.clone();
    solution.components[p].weights = sweep.swept.clone();

    // Riesz potentials and energy of the lifted measure
    let r = c.resultant_weights(&solution)?;
    let pts: Vec<Vec<f64>> = c.pool.iter().map(|n| n.position.clone()).collect();
    let pot_pool = pool_potential(&c.pool, &r, &pts, &spec.kernel, exec);
    let mut potentials = Vec::with_capacity(c.plates.len());
    let mut kkt = Vec::with_capacity(c.plates.len());
    let mut energy = 0.0;
    for plate in &c.plates {
        let s = plate.sign.value();
        let f = spec.finite_field(plate.id);
        let w: Vec<f64> = plate.pool_index.iter().zip(&f).map(|(&k, fi)| s * pot_pool[k] + fi).collect();
        let x = &solution.components[plate.id].weights;
        energy += dot(x, &w) + dot(&f, x);
        let caps = spec.effective_caps(plate.id);
        kkt.push(Some(plate_kkt(x, &w, &caps, spec.totals[plate.id], spec.options.eps_free)));
        potentials.push(w);
    }
    let mass_gap = (solution.components[p].total_mass() - spec.totals[p]).abs();
    let mut result = green.clone();
    result.formulation = Formulation::Lifted;
    result.energy = energy;
    result.kkt_residual = kkt.iter().flatten().map(PlateKkt::residual).fold(0.0, f64::max);
    result.kkt = kkt;
    result.potentials = potentials;
    result.caps[p] = spec.effective_caps(p);
    result.solution = solution;
    result.diagnostics.lifted_mass_gap = Some(mass_gap);
    result.diagnostics.balayage_residual = Some(result.diagnostics.balayage_residual.unwrap_or(0.0).max(sweep.potential_residual));
    Ok(Lifted { result, sweep })
}

/// Potential of pool weights (self-energy at coinciding points).
fn pool_potential(pool: &[Node], weights: &[f64], points: &[Vec<f64>], kernel: &KernelSpec, exec: Execution) -> Vec<f64> {
    let mut out = vec![0.0; points.len()];
    exec.fill_rows(&mut out, 1, |i, o| {
        o[0] = pool.iter().zip(weights).filter(|(_, w)| **w != 0.0).map(|(n, w)| w * kernel::point_value(n, &points[i], kernel)).sum();
    });
    out
}

/// Balayage of `Σ_j ξ^j` onto the negative plate.
pub fn swept_constraint(spec: &ProblemSpec, domain: &GreenDomain) -> Result<Vec<f64>> {
    let c = &spec.condenser;
    let pool = positive_pool(c);
    let mut total = vec![0.0; pool.nodes.len()];
    for (&j, idx) in pool.plates.iter().zip(&pool.index) {
        match &spec.constraint.caps[j] {
            PlateCap::Unbounded => return Err(Error::InvalidSpec(format!("plate {j} is uncapped; the swept constraint needs every positive plate capped"))),
            PlateCap::Capped { weights } => {
                for (&k, &w) in idx.iter().zip(weights) {
                    total[k] += w;
                }
            }
        }
    }
    Ok(domain.sweep(&pool.nodes, &total, spec.options.exec)?.swept)
}

/// Solve with an explicit cap σ on the negative plate after checking that it
/// dominates the swept constraint node by node.
pub fn solve_sigma_variant(spec: &ProblemSpec, domain: &GreenDomain) -> Result<SolveResult> {
    let p = spec.negative;
    let sigma = match &spec.constraint.caps[p] {
        PlateCap::Capped { weights } => weights.clone(),
        PlateCap::Unbounded => return Err(Error::InvalidSpec("the σ-variant needs an explicit cap on the negative plate".into())),
    };
    let swept = swept_constraint(spec, domain)?;
    let slack = 1e-9 * norm_inf(&swept);
    let shortfalls: Vec<f64> = sigma.iter().zip(&swept).map(|(s, b)| b - s).filter(|d| *d > slack).collect();
    if !shortfalls.is_empty() {
        return Err(Error::SigmaDomination { violations: shortfalls.len(), worst: shortfalls.iter().copied().fold(0.0, f64::max) });
    }
    let margin = sigma.iter().zip(&swept).map(|(s, b)| s - b).fold(f64::INFINITY, f64::min);
    let mut result = solve_riesz(spec)?;
    result.diagnostics.sigma_margin = Some(margin);
    Ok(result)
}

/// Gauss functional of an arbitrary feasible-shaped measure in the Riesz form.
pub fn gauss_value(spec: &ProblemSpec, mu: &VectorMeasure) -> Result<f64> {
    kernel::gauss_functional(mu, spec.field_values(), &spec.condenser, &spec.kernel, spec.options.exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PlateGeometry, Sign};
    use approx::assert_relative_eq;

    #[test]
    fn projection_examples() {
        let v = project_capped_simplex(&[3.0, 0.0], &[1.0, f64::INFINITY], 2.0).unwrap();
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(v[1], 1.0, epsilon = 1e-15);
        let u = project_capped_simplex(&[0.0; 4], &[f64::INFINITY; 4], 2.0).unwrap();
        assert!(u.iter().all(|x| (x - 0.5).abs() < 1e-15));
        let w = [0.2, 0.3, 0.5];
        assert_eq!(project_capped_simplex(&w, &[1.0, 1.0, 1.0], 1.0).unwrap(), w.to_vec());
        assert!(matches!(project_capped_simplex(&w, &[0.1, 0.1, 0.1], 1.0), Err(Error::Infeasible(_))));
    }

    fn cloud(points: &[[f64; 3]]) -> PlateGeometry {
        PlateGeometry::ExplicitCloud { nodes: points.iter().map(|p| Node::volume(p.to_vec(), 1e-3, 0)).collect() }
    }

    fn two_plate(pos: &[[f64; 3]], neg: &[[f64; 3]]) -> Condenser {
        let mk = |g: PlateGeometry| match &g {
            PlateGeometry::ExplicitCloud { nodes } => nodes.clone(),
            _ => unreachable!(),
        };
        let a = cloud(pos);
        let b = cloud(neg);
        Condenser::from_plates(3, vec![(Sign::Positive, a.clone(), mk(a)), (Sign::Negative, b.clone(), mk(b))]).unwrap()
    }

    #[test]
    fn single_pair_has_no_freedom() {
        let c = two_plate(&[[0.0, 0.0, 0.0]], &[[1.0, 0.0, 0.0]]);
        let k = KernelSpec::riesz(3, 1.5).unwrap();
        let spec = ProblemSpec::new(
            c,
            k,
            vec![1.0, 1.0],
            ExternalField::Zero,
            Constraint { caps: vec![PlateCap::Unbounded, PlateCap::Unbounded] },
            SolverOptions { exec: Execution::Sequential, ..Default::default() },
        )
        .unwrap();
        let res = solve_riesz(&spec).unwrap();
        let m = kernel::assemble_matrix(&spec.condenser.pool, &k, Execution::Sequential).unwrap();
        let want = m.entries[(0, 0)] + m.entries[(1, 1)] - 2.0 * m.entries[(0, 1)];
        assert_relative_eq!(res.energy, want, max_relative = 1e-14);
        assert!(res.converged);
    }

    #[test]
    fn rejects_unbalanced_totals_and_tight_caps() {
        let c = two_plate(&[[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]], &[[1.0, 0.0, 0.0]]);
        let k = KernelSpec::riesz(3, 1.5).unwrap();
        let unb = Constraint { caps: vec![PlateCap::Unbounded, PlateCap::Unbounded] };
        assert!(ProblemSpec::new(c.clone(), k, vec![1.0, 2.0], ExternalField::Zero, unb, SolverOptions::default()).is_err());
        let tight = Constraint { caps: vec![PlateCap::Capped { weights: vec![0.5, 0.5] }, PlateCap::Unbounded] };
        assert!(matches!(ProblemSpec::new(c, k, vec![1.0, 1.0], ExternalField::Zero, tight, SolverOptions::default()), Err(Error::Infeasible(_))));
    }

    #[test]
    fn infinite_field_nodes_are_frozen() {
        let c = two_plate(&[[0.0, 0.0, 0.0], [0.0, 0.3, 0.0], [0.0, 0.0, 0.3]], &[[1.0, 0.0, 0.0]]);
        let k = KernelSpec::riesz(3, 1.5).unwrap();
        let field = ExternalField::NodeValues { values: vec![vec![f64::INFINITY, 0.0, 0.1], vec![0.0]] };
        let caps = Constraint { caps: vec![PlateCap::Capped { weights: vec![5.0, 0.6, 0.6] }, PlateCap::Unbounded] };
        let spec = ProblemSpec::new(c.clone(), k, vec![1.0, 1.0], field.clone(), caps, SolverOptions { exec: Execution::Sequential, ..Default::default() }).unwrap();
        let res = solve_riesz(&spec).unwrap();
        assert_eq!(res.solution.components[0].weights[0], 0.0);
        assert!(res.energy.is_finite());
        // not enough cap left once the node is frozen
        let caps = Constraint { caps: vec![PlateCap::Capped { weights: vec![5.0, 0.4, 0.5] }, PlateCap::Unbounded] };
        assert!(matches!(ProblemSpec::new(c, k, vec![1.0, 1.0], field, caps, SolverOptions::default()), Err(Error::Infeasible(_))));
    }
}
