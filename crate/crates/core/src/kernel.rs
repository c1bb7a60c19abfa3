//! Riesz kernel evaluation, matrix assembly, energies, potentials, external
//! fields and equilibrium measures.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{dot, Matrix};
use crate::model::{CellKind, Condenser, Node, VectorMeasure};
use crate::nnls::ConeProjector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelVariant {
    Riesz,
    /// α-Green kernel of a registered domain
    Green { domain_id: usize },
}

/// How the diagonal (an atom interacting with itself) is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelfEnergyRule {
    /// mean of the kernel over the node's cell: a ball of radius `cell_radius`
    /// for volume cells, a flat disk of that radius for surface cells
    #[default]
    CellBall,
    /// self-interaction dropped (zero diagonal)
    Excluded,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub n: usize,
    pub alpha: f64,
    pub variant: KernelVariant,
    #[serde(default)]
    pub self_energy_rule: SelfEnergyRule,
}

impl KernelSpec {
    pub fn riesz(n: usize, alpha: f64) -> Result<Self> {
        let k = KernelSpec { n, alpha, variant: KernelVariant::Riesz, self_energy_rule: SelfEnergyRule::CellBall };
        k.validate()?;
        Ok(k)
    }

    pub fn with_rule(mut self, rule: SelfEnergyRule) -> Self {
        self.self_energy_rule = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::InvalidSpec(format!("dimension {} is below 3", self.n)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::UnsupportedKernel(format!("order {} outside (0, 2]", self.alpha)));
        }
        Ok(())
    }

    /// The Riesz kernel of the same order, whatever the variant.
    pub fn as_riesz(&self) -> KernelSpec {
        KernelSpec { variant: KernelVariant::Riesz, ..*self }
    }

    fn half_exponent(&self) -> f64 {
        0.5 * (self.alpha - self.n as f64)
    }

    /// `|x − y|^(α − n)` from the squared distance.
    #[inline]
    pub fn from_sq_dist(&self, r2: f64) -> f64 {
        if r2 == 0.0 {
            return f64::INFINITY;
        }
        let e = self.half_exponent();
        if e == -0.5 {
            1.0 / r2.sqrt()
        } else if e == -1.0 {
            1.0 / r2
        } else {
            r2.powf(e)
        }
    }
}

/// `|x − y|^(α − n)`, infinite on the diagonal.
pub fn riesz_eval(x: &[f64], y: &[f64], kernel: &KernelSpec) -> f64 {
    kernel.from_sq_dist(sq_dist(x, y))
}

#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Diagonal value for one node under the kernel's self-energy rule.
///
/// Volume cells use the mean of `|x|^(α−n)` over the ball of radius ρ,
/// `(n/α) ρ^(α−n)`; surface cells the mean over the flat (n−1)-disk of radius ρ,
/// `((n−1)/(α−1)) ρ^(α−n)`, which is finite only for α > 1.
pub fn self_energy(node: &Node, kernel: &KernelSpec) -> Result<f64> {
    if kernel.self_energy_rule == SelfEnergyRule::Excluded {
        return Ok(0.0);
    }
    if node.kind == CellKind::Surface && kernel.alpha <= 1.0 {
        return Err(Error::UnsupportedKernel(format!(
            "surface cells carry infinite self-energy for α = {} ≤ 1",
            kernel.alpha
        )));
    }
    Ok(self_value(node, kernel))
}

#[inline]
fn self_value(node: &Node, k: &KernelSpec) -> f64 {
    if k.self_energy_rule == SelfEnergyRule::Excluded {
        return 0.0;
    }
    let n = k.n as f64;
    let rho = node.cell_radius;
    match node.kind {
        CellKind::Volume => (n / k.alpha) * rho.powf(k.alpha - n),
        CellKind::Surface => ((n - 1.0) / (k.alpha - 1.0)) * rho.powf(k.alpha - n),
    }
}

/// Check that every node has a finite self-energy under `kernel`.
pub fn check_nodes(nodes: &[Node], kernel: &KernelSpec) -> Result<()> {
    kernel.validate()?;
    for nd in nodes {
        if nd.dim() != kernel.n {
            return Err(Error::InvalidSpec(format!("node of dimension {} for a kernel in R^{}", nd.dim(), kernel.n)));
        }
        self_energy(nd, kernel)?;
    }
    Ok(())
}

/// Kernel between two atoms; coinciding atoms use the self-energy of the first.
#[inline]
pub fn pair_value(a: &Node, b: &Node, kernel: &KernelSpec) -> f64 {
    let r2 = sq_dist(&a.position, &b.position);
    if r2 == 0.0 {
        self_value(a, kernel)
    } else {
        kernel.from_sq_dist(r2)
    }
}

/// Kernel between an atom and a query point; a coinciding point sees the atom's self-energy.
#[inline]
pub fn point_value(atom: &Node, x: &[f64], kernel: &KernelSpec) -> f64 {
    let r2 = sq_dist(&atom.position, x);
    if r2 == 0.0 {
        self_value(atom, kernel)
    } else {
        kernel.from_sq_dist(r2)
    }
}

/// Dense symmetric kernel matrix on a node set, with the diagonal rule recorded.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    pub entries: Matrix,
    pub diagonal: Vec<f64>,
    pub kernel: KernelSpec,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.entries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_eigenvalue(&self, exec: Execution) -> f64 {
        crate::linalg::min_eigenvalue(&self.entries, exec)
    }
}

fn check_distinct(nodes: &[Node]) -> Result<()> {
    let mut seen = HashSet::with_capacity(nodes.len());
    for nd in nodes {
        let key: Vec<u64> = nd.position.iter().map(|x| (x + 0.0).to_bits()).collect();
        if !seen.insert(key) {
            return Err(Error::DuplicateNode { position: nd.position.clone() });
        }
    }
    Ok(())
}

/// Riesz kernel matrix on pairwise distinct nodes.
pub fn assemble_matrix(nodes: &[Node], kernel: &KernelSpec, exec: Execution) -> Result<KernelMatrix> {
    if let KernelVariant::Green { .. } = kernel.variant {
        return Err(Error::UnsupportedKernel("Green matrices are assembled by their domain".into()));
    }
    check_nodes(nodes, kernel)?;
    check_distinct(nodes)?;
    let n = nodes.len();
    let entries = Matrix::from_fn(n, n, exec, |i, j| pair_value(&nodes[i], &nodes[j], kernel));
    let diagonal = entries.diagonal();
    Ok(KernelMatrix { entries, diagonal, kernel: *kernel })
}

/// Rectangular block `κ(row_i, col_j)` with the pair rule.
pub fn cross_matrix(rows: &[Node], cols: &[Node], kernel: &KernelSpec, exec: Execution) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), exec, |i, j| pair_value(&rows[i], &cols[j], kernel))
}

/// `κ(x, μ) = Σ w_a κ(x, x_a)` at each query point.
pub fn potential(nodes: &[Node], weights: &[f64], points: &[Vec<f64>], kernel: &KernelSpec, exec: Execution) -> Vec<f64> {
    assert_eq!(nodes.len(), weights.len());
    let mut out = vec![0.0; points.len()];
    exec.fill_rows(&mut out, 1, |i, o| {
        let x = &points[i];
        let mut s = 0.0;
        for (nd, &w) in nodes.iter().zip(weights) {
            if w != 0.0 {
                s += w * point_value(nd, x, kernel);
            }
        }
        o[0] = s;
    });
    out
}

/// `Σ_a Σ_b w_a v_b κ(x_a, y_b)`.
pub fn mutual_energy(a_nodes: &[Node], a_w: &[f64], b_nodes: &[Node], b_w: &[f64], kernel: &KernelSpec, exec: Execution) -> f64 {
    let rows = exec.map(a_nodes.len(), |i| {
        if a_w[i] == 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for (nd, &w) in b_nodes.iter().zip(b_w) {
            if w != 0.0 {
                s += w * pair_value(&a_nodes[i], nd, kernel);
            }
        }
        a_w[i] * s
    });
    rows.iter().sum()
}

/// Quadratic form `wᵀ K w` on a set of distinct nodes, without storing K.
pub fn pool_energy(pool: &[Node], weights: &[f64], kernel: &KernelSpec, exec: Execution) -> Result<f64> {
    check_nodes(pool, kernel)?;
    Ok(mutual_energy(pool, weights, pool, weights, kernel, exec))
}

/// `κ(𝝁, 𝝂) = Σ_i Σ_j s_i s_j κ(μ^i, ν^j)`, expanded plate by plate.
pub fn vector_mutual_energy(mu: &VectorMeasure, nu: &VectorMeasure, condenser: &Condenser, kernel: &KernelSpec, exec: Execution) -> Result<f64> {
    condenser.check_aligned(mu)?;
    condenser.check_aligned(nu)?;
    check_nodes(&condenser.pool, kernel)?;
    let mut total = 0.0;
    for (pi, mi) in condenser.plates.iter().zip(&mu.components) {
        for (pj, nj) in condenser.plates.iter().zip(&nu.components) {
            let s = pi.sign.value() * pj.sign.value();
            total += s * mutual_energy(&pi.nodes, &mi.weights, &pj.nodes, &nj.weights, kernel, exec);
        }
    }
    Ok(total)
}

/// Energy of resultants `κ(R𝝁, R𝝂)`, both gathered on the condenser pool.
pub fn resultant_mutual_energy(mu: &VectorMeasure, nu: &VectorMeasure, condenser: &Condenser, kernel: &KernelSpec, exec: Execution) -> Result<f64> {
    let r = condenser.resultant_weights(mu)?;
    let q = condenser.resultant_weights(nu)?;
    check_nodes(&condenser.pool, kernel)?;
    Ok(mutual_energy(&condenser.pool, &r, &condenser.pool, &q, kernel, exec))
}

/// Vector potential `κ^{𝝁,i}(x) = Σ_j s_i s_j κ(x, μ^j)` at the query points.
pub fn vector_potential(mu: &VectorMeasure, i: usize, points: &[Vec<f64>], condenser: &Condenser, kernel: &KernelSpec, exec: Execution) -> Result<Vec<f64>> {
    condenser.check_aligned(mu)?;
    let si = condenser.plates[i].sign.value();
    let mut out = vec![0.0; points.len()];
    for (pj, mj) in condenser.plates.iter().zip(&mu.components) {
        let s = si * pj.sign.value();
        let pot = potential(&pj.nodes, &mj.weights, points, kernel, exec);
        out.iter_mut().zip(pot).for_each(|(o, p)| *o += s * p);
    }
    Ok(out)
}

/// Atoms with real weights (a point charge and its sweep).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Charge {
    pub nodes: Vec<Node>,
    pub weights: Vec<f64>,
}

impl Charge {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `self − other` as one atom list.
    pub fn minus(&self, other: &Charge) -> Charge {
        let mut nodes = self.nodes.clone();
        nodes.extend(other.nodes.iter().cloned());
        let mut weights = self.weights.clone();
        weights.extend(other.weights.iter().map(|w| -w));
        Charge { nodes, weights }
    }
}

/// External field acting on the plates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExternalField {
    #[default]
    Zero,
    /// node values per plate, entries in (−∞, +∞]; zero on the negative plate
    NodeValues { values: Vec<Vec<f64>> },
    /// `f_i = s_i κ(·, ζ − ζ′)` with ζ a charge in D and ζ′ its sweep onto D^c
    SweptCharge { charge: Charge, charge_swept: Charge },
}

impl ExternalField {
    /// Field values at every node of every plate.
    pub fn node_values(&self, condenser: &Condenser, kernel: &KernelSpec, exec: Execution) -> Result<Vec<Vec<f64>>> {
        match self {
            ExternalField::Zero => Ok(condenser.plates.iter().map(|p| vec![0.0; p.len()]).collect()),
            ExternalField::NodeValues { values } => {
                if values.len() != condenser.plates.len() {
                    return Err(Error::Alignment { expected: condenser.plates.len(), got: values.len() });
                }
                for (p, v) in condenser.plates.iter().zip(values) {
                    if v.len() != p.len() {
                        return Err(Error::InvalidSpec(format!("field for plate {} has {} values, plate has {} nodes", p.id, v.len(), p.len())));
                    }
                    if v.iter().any(|x| x.is_nan() || *x == f64::NEG_INFINITY) {
                        return Err(Error::InvalidSpec("field values must lie in (-inf, +inf]".into()));
                    }
                    if p.sign == crate::model::Sign::Negative && v.iter().any(|&x| x != 0.0) {
                        return Err(Error::InvalidSpec("node-value fields must vanish on the negative plate".into()));
                    }
                }
                Ok(values.clone())
            }
            ExternalField::SweptCharge { charge, charge_swept } => {
                let diff = charge.minus(charge_swept);
                check_nodes(&diff.nodes, kernel)?;
                Ok(condenser
                    .plates
                    .iter()
                    .map(|p| {
                        let pts: Vec<Vec<f64>> = p.nodes.iter().map(|n| n.position.clone()).collect();
                        let s = p.sign.value();
                        potential(&diff.nodes, &diff.weights, &pts, kernel, exec).into_iter().map(|v| s * v).collect()
                    })
                    .collect())
            }
        }
    }
}

/// `⟨f, μ⟩` with the convention 0·∞ = 0.
pub fn field_pairing(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).filter(|(_, w)| **w != 0.0).map(|(f, w)| f * w).sum()
}

/// Gauss functional `κ(𝝁,𝝁) + 2 Σ_i ⟨f_i, μ^i⟩`. Infinite when a carried node sees +∞.
pub fn gauss_functional(mu: &VectorMeasure, field_values: &[Vec<f64>], condenser: &Condenser, kernel: &KernelSpec, exec: Execution) -> Result<f64> {
    let r = condenser.resultant_weights(mu)?;
    let energy = pool_energy(&condenser.pool, &r, kernel, exec)?;
    let linear: f64 = field_values.iter().zip(&mu.components).map(|(f, m)| field_pairing(f, &m.weights)).sum();
    Ok(energy + 2.0 * linear)
}

/// Equilibrium (capacitary) measure of total mass `total` on a node set.
#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub weights: Vec<f64>,
    pub capacity: f64,
    /// κ(λ, λ)
    pub energy: f64,
    /// potential of λ at every node
    pub potential: Vec<f64>,
}

/// Equilibrium measure for a given PD Gram matrix.
pub fn equilibrium_from_matrix(k: &Matrix, total: f64, exec: Execution) -> Result<Equilibrium> {
    if k.rows() == 0 {
        return Err(Error::InvalidSpec("equilibrium measure needs at least one node".into()));
    }
    if !(total > 0.0) {
        return Err(Error::InvalidSpec("total mass must be positive".into()));
    }
    // minimize ½θᵀKθ − 1ᵀθ over θ ≥ 0; at the optimum θᵀKθ = 1ᵀθ = capacity
    let ones = vec![1.0; k.rows()];
    let sol = ConeProjector::new(k.clone())?.solve(&ones)?;
    let mass: f64 = sol.theta.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::SolverDivergence("equilibrium problem returned zero mass".into()));
    }
    let weights: Vec<f64> = sol.theta.iter().map(|t| total * t / mass).collect();
    let potential = k.matvec(&weights, exec);
    let energy = dot(&weights, &potential);
    Ok(Equilibrium { capacity: total * total / energy, energy, weights, potential })
}

pub fn equilibrium_measure(nodes: &[Node], kernel: &KernelSpec, total: f64, exec: Execution) -> Result<Equilibrium> {
    let k = assemble_matrix(nodes, kernel, exec)?;
    equilibrium_from_matrix(&k.entries, total, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sphere_nodes;
    use crate::model::{PlateGeometry, Sign};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k3(alpha: f64) -> KernelSpec {
        KernelSpec::riesz(3, alpha).unwrap()
    }

    #[test]
    fn riesz_values() {
        assert_eq!(riesz_eval(&[0.0, 0.0, 0.0], &[0.5, 0.0, 0.0], &k3(2.0)), 2.0);
        let k4 = KernelSpec::riesz(4, 2.0).unwrap();
        assert_relative_eq!(riesz_eval(&[0.0; 4], &[2.0, 0.0, 0.0, 0.0], &k4), 0.25, epsilon = 1e-15);
        assert_eq!(riesz_eval(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &k3(1.5)), f64::INFINITY);
    }

    #[test]
    fn invalid_orders_are_rejected() {
        assert!(KernelSpec::riesz(3, 2.5).is_err());
        assert!(KernelSpec::riesz(3, 0.0).is_err());
        assert!(KernelSpec::riesz(2, 1.0).is_err());
    }

    #[test]
    fn two_node_matrix_by_hand() {
        let rho = 0.1;
        let a = Node { position: vec![0.0; 3], quad_weight: 1.0, cell_radius: rho, kind: CellKind::Volume, layer: 0 };
        let b = Node { position: vec![1.0, 0.0, 0.0], ..a.clone() };
        let m = assemble_matrix(&[a, b], &k3(2.0), Execution::Sequential).unwrap();
        assert_relative_eq!(m.entries[(0, 1)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.diagonal[0], 3.0 / (2.0 * rho), epsilon = 1e-12);
        assert_eq!(m.entries.asymmetry(), 0.0);
    }

    /// Monte Carlo mean of |x|^(α−n) over a ball and a flat disk. The radial
    /// variable is drawn as u = s^6 (with the Jacobian as weight) so the
    /// estimator has finite variance near the singularity.
    #[test]
    fn cell_means_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rho = 0.3;
        for alpha in [1.25, 1.5, 2.0] {
            let k = k3(alpha);
            let samples = 200_000;
            let mut ball = 0.0;
            let mut disk = 0.0;
            for _ in 0..samples {
                let s: f64 = rng.random();
                let u = s.powi(6);
                let jac = 6.0 * s.powi(5);
                // uniform point in the ball has radius ρ u^(1/3), in the disk ρ u^(1/2)
                ball += jac * (rho * u.cbrt()).powf(alpha - 3.0);
                disk += jac * (rho * u.sqrt()).powf(alpha - 3.0);
            }
            ball /= samples as f64;
            disk /= samples as f64;
            let vol = Node { position: vec![0.0; 3], quad_weight: 1.0, cell_radius: rho, kind: CellKind::Volume, layer: 0 };
            let surf = Node { kind: CellKind::Surface, ..vol.clone() };
            assert_relative_eq!(self_energy(&vol, &k).unwrap(), ball, max_relative = 0.01);
            assert_relative_eq!(self_energy(&surf, &k).unwrap(), disk, max_relative = 0.01);
        }
        let surf = Node { position: vec![0.0; 3], quad_weight: 1.0, cell_radius: rho, kind: CellKind::Surface, layer: 0 };
        assert!(self_energy(&surf, &k3(1.0)).is_err());
    }

    #[test]
    fn excluded_rule_zeroes_single_atom_energy() {
        let a = Node::volume(vec![0.0; 3], 1.0, 0);
        let k = k3(2.0).with_rule(SelfEnergyRule::Excluded);
        let m = assemble_matrix(std::slice::from_ref(&a), &k, Execution::Sequential).unwrap();
        assert_eq!(m.entries[(0, 0)], 0.0);
        assert_eq!(mutual_energy(std::slice::from_ref(&a), &[1.0], std::slice::from_ref(&a), &[1.0], &k, Execution::Sequential), 0.0);
    }

    #[test]
    fn duplicate_nodes_are_rejected() {
        let a = Node::volume(vec![0.0; 3], 1.0, 0);
        assert!(matches!(assemble_matrix(&[a.clone(), a], &k3(2.0), Execution::Sequential), Err(Error::DuplicateNode { .. })));
    }

    #[test]
    fn point_potential() {
        let a = Node::volume(vec![0.0; 3], 1.0, 0);
        let p = potential(std::slice::from_ref(&a), &[1.0], &[vec![2.0, 0.0, 0.0]], &k3(2.0), Execution::Sequential);
        assert_relative_eq!(p[0], 0.5, epsilon = 1e-15);
        let z = potential(&[a], &[0.0], &[vec![2.0, 0.0, 0.0]], &k3(2.0), Execution::Sequential);
        assert_eq!(z[0], 0.0);
    }

    #[test]
    fn gauss_functional_of_dipole_with_excluded_rule() {
        let d = 0.7;
        let a = Node::volume(vec![0.0; 3], 1.0, 0);
        let b = Node::volume(vec![d, 0.0, 0.0], 1.0, 0);
        let c = Condenser::from_plates(
            3,
            vec![
                (Sign::Positive, PlateGeometry::ExplicitCloud { nodes: vec![a.clone()] }, vec![a]),
                (Sign::Negative, PlateGeometry::ExplicitCloud { nodes: vec![b.clone()] }, vec![b]),
            ],
        )
        .unwrap();
        let k = k3(2.0).with_rule(SelfEnergyRule::Excluded);
        let mu = VectorMeasure::from_weights(vec![vec![1.0], vec![1.0]]).unwrap();
        let f = ExternalField::Zero.node_values(&c, &k, Execution::Sequential).unwrap();
        let g = gauss_functional(&mu, &f, &c, &k, Execution::Sequential).unwrap();
        assert_relative_eq!(g, -2.0 / d, epsilon = 1e-14);
        let zero = VectorMeasure::zeros(&c);
        assert_eq!(gauss_functional(&zero, &f, &c, &k, Execution::Sequential).unwrap(), 0.0);
    }

    #[test]
    fn single_node_equilibrium() {
        let a = Node::volume(vec![0.0; 3], 0.5, 0);
        let k = k3(1.5);
        let s = self_energy(&a, &k).unwrap();
        let eq = equilibrium_measure(&[a], &k, 1.0, Execution::Sequential).unwrap();
        assert_relative_eq!(eq.weights[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(eq.capacity, 1.0 / s, max_relative = 1e-14);
    }

    #[test]
    fn symmetric_pair_gets_equal_weights() {
        let a = Node::volume(vec![-1.0, 0.0, 0.0], 0.1, 0);
        let b = Node::volume(vec![1.0, 0.0, 0.0], 0.1, 0);
        let eq = equilibrium_measure(&[a, b], &k3(1.0), 2.0, Execution::Sequential).unwrap();
        assert_relative_eq!(eq.weights[0], eq.weights[1], max_relative = 1e-14);
        assert_relative_eq!(eq.weights[0], 1.0, max_relative = 1e-14);
    }

    /// Newtonian sphere: capacity equals the radius, the equilibrium measure is
    /// uniform and the exterior potential is that of a point charge.
    #[test]
    fn sphere_capacity_and_exterior_potential() {
        let r = 1.5;
        let nodes = sphere_nodes(&[0.0; 3], r, 1000).unwrap();
        let k = k3(2.0);
        let eq = equilibrium_measure(&nodes, &k, 1.0, Execution::Parallel).unwrap();
        assert!((eq.capacity - r).abs() / r < 0.02, "capacity {}", eq.capacity);
        let area: f64 = nodes.iter().map(|n| n.quad_weight).sum();
        let tv: f64 = 0.5 * nodes.iter().zip(&eq.weights).map(|(n, w)| (w - n.quad_weight / area).abs()).sum::<f64>();
        assert!(tv < 0.02, "total variation {tv}");
        for x in [[3.0, 0.0, 0.0], [0.0, 2.5, 2.5], [-1.0, -4.0, 2.0]] {
            let p = potential(&nodes, &eq.weights, &[x.to_vec()], &k, Execution::Sequential)[0];
            let exact = 1.0 / x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((p - exact).abs() / exact < 0.005, "potential {p} vs {exact}");
        }
    }
}
