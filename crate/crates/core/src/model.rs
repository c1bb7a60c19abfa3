//! Condensers, plates, nodes and discrete (vector) measures.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{self, Domain, RingPlan};
use crate::kernel::{self, KernelSpec};

/// Whether a node stands for a piece of volume or a piece of a hypersurface.
/// Decides which cell mean is used for its self-energy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Volume,
    Surface,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub position: Vec<f64>,
    /// cell volume (or area for surface cells)
    pub quad_weight: f64,
    /// radius of the ball (or flat disk) with the same volume (area)
    pub cell_radius: f64,
    pub kind: CellKind,
    /// shell or ring index inside its layout
    #[serde(default)]
    pub layer: usize,
}

impl Node {
    pub fn volume(position: Vec<f64>, volume: f64, layer: usize) -> Self {
        let d = position.len();
        Node { cell_radius: geometry::equivalent_radius(volume, d), position, quad_weight: volume, kind: CellKind::Volume, layer }
    }

    pub fn surface(position: Vec<f64>, area: f64, layer: usize) -> Self {
        let d = position.len() - 1;
        Node { cell_radius: geometry::equivalent_radius(area, d), position, quad_weight: area, kind: CellKind::Surface, layer }
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }

    fn key(&self) -> Vec<u64> {
        // +0.0 and -0.0 name the same point
        self.position.iter().map(|x| (x + 0.0).to_bits()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.quad_weight > 0.0 && self.cell_radius > 0.0) || self.position.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec(format!("node at {:?} needs finite position and positive cell size", self.position)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BallLayout {
    /// concentric shells (n = 3 only)
    #[default]
    Shells,
    /// regular grid, any dimension
    Grid,
}

fn default_grading() -> f64 {
    1.4
}

fn default_true() -> bool {
    true
}

fn default_plane_grading() -> f64 {
    1.2
}

/// Geometric description of a plate. Unbounded shapes carry their truncation radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlateGeometry {
    /// open ball
    Ball {
        center: Vec<f64>,
        radius: f64,
        #[serde(default)]
        layout: BallLayout,
    },
    /// `{|x - center| >= radius}` cut off at `truncation`
    BallComplement {
        center: Vec<f64>,
        radius: f64,
        truncation: f64,
        #[serde(default = "default_grading")]
        grading: f64,
        #[serde(default)]
        max_per_shell: Option<usize>,
        #[serde(default = "default_true")]
        surface_layer: bool,
    },
    /// closed half-space `{x1 <= 0}` represented by its boundary plane, fine
    /// rings out to `inner_radius` then graded rings out to `truncation`
    HalfSpace {
        truncation: f64,
        inner_radius: f64,
        #[serde(default = "default_plane_grading")]
        grading: f64,
        #[serde(default)]
        max_per_ring: Option<usize>,
    },
    /// flat disk orthogonal to the x1 axis
    Disk { center: Vec<f64>, radius: f64 },
    /// disks `{x1 = 1/k, x2² + x3² <= k²}` for k = 1..=count
    DiskStack { count: usize },
    Sphere {
        center: Vec<f64>,
        radius: f64,
        #[serde(default)]
        count: Option<usize>,
    },
    ExplicitCloud { nodes: Vec<Node> },
}

/// Short tag naming the geometry family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryTag {
    Ball,
    BallComplement,
    HalfSpace,
    Disk,
    DiskStack,
    Sphere,
    ExplicitCloud,
}

impl PlateGeometry {
    pub fn tag(&self) -> GeometryTag {
        match self {
            PlateGeometry::Ball { .. } => GeometryTag::Ball,
            PlateGeometry::BallComplement { .. } => GeometryTag::BallComplement,
            PlateGeometry::HalfSpace { .. } => GeometryTag::HalfSpace,
            PlateGeometry::Disk { .. } => GeometryTag::Disk,
            PlateGeometry::DiskStack { .. } => GeometryTag::DiskStack,
            PlateGeometry::Sphere { .. } => GeometryTag::Sphere,
            PlateGeometry::ExplicitCloud { .. } => GeometryTag::ExplicitCloud,
        }
    }

    pub fn truncation(&self) -> Option<f64> {
        match self {
            PlateGeometry::BallComplement { truncation, .. } | PlateGeometry::HalfSpace { truncation, .. } => Some(*truncation),
            _ => None,
        }
    }

    /// Ring plan of the boundary plane for a half-space at resolution `h`.
    pub fn plane_plan(&self, h: f64) -> Option<RingPlan> {
        match self {
            PlateGeometry::HalfSpace { truncation, inner_radius, grading, max_per_ring } => Some(RingPlan {
                spacing: h,
                inner_radius: *inner_radius,
                outer_radius: *truncation,
                grading: *grading,
                max_per_ring: *max_per_ring,
            }),
            _ => None,
        }
    }

    /// The open domain this plate bounds, when it is the complement of one.
    pub fn swept_domain(&self) -> Option<Domain> {
        match self {
            PlateGeometry::BallComplement { center, radius, .. } => Some(Domain::Ball { center: center.clone(), radius: *radius }),
            PlateGeometry::HalfSpace { .. } => Some(Domain::HalfSpace),
            _ => None,
        }
    }

    /// Nodes for this shape at resolution `h` in R^n.
    pub fn discretize(&self, n: usize, h: f64) -> Result<Vec<Node>> {
        if !(h > 0.0) {
            return Err(Error::InvalidSpec("resolution must be positive".into()));
        }
        let check_center = |c: &[f64]| -> Result<()> {
            if c.len() != n {
                return Err(Error::InvalidSpec(format!("centre has {} coordinates, expected {n}", c.len())));
            }
            Ok(())
        };
        let nodes = match self {
            PlateGeometry::Ball { center, radius, layout } => {
                check_center(center)?;
                if !(*radius > 0.0) {
                    return Ok(Vec::new());
                }
                match layout {
                    BallLayout::Shells => geometry::ball_shells(center, *radius, h)?.0,
                    BallLayout::Grid => geometry::ball_grid(center, *radius, h),
                }
            }
            PlateGeometry::BallComplement { center, radius, truncation, grading, max_per_shell, surface_layer } => {
                check_center(center)?;
                if !(*radius > 0.0) {
                    return Ok(Vec::new());
                }
                geometry::complement_shells(center, *radius, *truncation, h, *grading, *max_per_shell, *surface_layer)?.0
            }
            PlateGeometry::HalfSpace { .. } => {
                if n != 3 {
                    return Err(Error::InvalidSpec("half-space layout is only available for n = 3".into()));
                }
                let plan = self.plane_plan(h).expect("half-space has a plane plan");
                geometry::polar_layout([0.0; 3], &plan)?.nodes
            }
            PlateGeometry::Disk { center, radius } => {
                check_center(center)?;
                if n != 3 {
                    return Err(Error::InvalidSpec("disk layout is only available for n = 3".into()));
                }
                if !(*radius > 0.0) {
                    return Ok(Vec::new());
                }
                geometry::polar_layout([center[0], center[1], center[2]], &RingPlan::uniform(*radius, h))?.nodes
            }
            PlateGeometry::DiskStack { count } => {
                if n != 3 {
                    return Err(Error::InvalidSpec("disk stack is only available for n = 3".into()));
                }
                let mut all = Vec::new();
                for k in 1..=*count {
                    let kf = k as f64;
                    all.extend(geometry::polar_layout([1.0 / kf, 0.0, 0.0], &RingPlan::uniform(kf, h))?.nodes);
                }
                all
            }
            PlateGeometry::Sphere { center, radius, count } => {
                check_center(center)?;
                if !(*radius > 0.0) {
                    return Ok(Vec::new());
                }
                let m = count.unwrap_or(((4.0 * std::f64::consts::PI * radius * radius / (h * h)).round() as usize).max(1));
                geometry::sphere_nodes(center, *radius, m)?
            }
            PlateGeometry::ExplicitCloud { nodes } => {
                for nd in nodes {
                    if nd.dim() != n {
                        return Err(Error::InvalidSpec("explicit node has the wrong dimension".into()));
                    }
                }
                nodes.clone()
            }
        };
        Ok(nodes)
    }
}

/// One plate of a condenser, already discretized.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Plate {
    pub id: usize,
    pub sign: Sign,
    pub geometry: PlateGeometry,
    pub nodes: Vec<Node>,
    /// index of each node in the condenser's pool of distinct points
    pub pool_index: Vec<usize>,
}

impl Plate {
    pub fn geometry_tag(&self) -> GeometryTag {
        self.geometry.tag()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn truncation(&self) -> Option<f64> {
        self.geometry.truncation()
    }
}

/// Description of one plate before discretization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateSpec {
    pub sign: Sign,
    pub geometry: PlateGeometry,
}

/// Ordered signed plates sharing one pool of distinct points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Condenser {
    pub n: usize,
    pub plates: Vec<Plate>,
    /// distinct points; equally signed plates may share entries
    pub pool: Vec<Node>,
}

impl Condenser {
    /// Assemble a condenser from already discretized plates.
    pub fn from_plates(n: usize, plates: Vec<(Sign, PlateGeometry, Vec<Node>)>) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidSpec("dimension must be at least 3".into()));
        }
        let mut pool: Vec<Node> = Vec::new();
        let mut owner: HashMap<Vec<u64>, (usize, Sign)> = HashMap::new();
        let mut out = Vec::with_capacity(plates.len());
        for (id, (sign, geometry, nodes)) in plates.into_iter().enumerate() {
            if nodes.is_empty() {
                return Err(Error::EmptyPlate { plate: id });
            }
            let mut seen_here = std::collections::HashSet::new();
            let mut pool_index = Vec::with_capacity(nodes.len());
            for nd in &nodes {
                nd.validate()?;
                if nd.dim() != n {
                    return Err(Error::InvalidSpec(format!("plate {id} has a node of dimension {}", nd.dim())));
                }
                let key = nd.key();
                if !seen_here.insert(key.clone()) {
                    return Err(Error::DuplicateNode { position: nd.position.clone() });
                }
                match owner.get(&key) {
                    Some(&(k, s)) if s == sign => pool_index.push(k),
                    Some(_) => return Err(Error::ZeroSeparation { position: nd.position.clone() }),
                    None => {
                        owner.insert(key, (pool.len(), sign));
                        pool_index.push(pool.len());
                        pool.push(nd.clone());
                    }
                }
            }
            out.push(Plate { id, sign, geometry, nodes, pool_index });
        }
        if out.is_empty() {
            return Err(Error::InvalidSpec("condenser needs at least one plate".into()));
        }
        Ok(Condenser { n, plates: out, pool })
    }

    pub fn i_plus(&self) -> Vec<usize> {
        self.plates.iter().filter(|p| p.sign == Sign::Positive).map(|p| p.id).collect()
    }

    pub fn i_minus(&self) -> Vec<usize> {
        self.plates.iter().filter(|p| p.sign == Sign::Negative).map(|p| p.id).collect()
    }

    /// Index p of the unique negative plate, which must come last.
    pub fn negative_plate(&self) -> Result<usize> {
        let minus = self.i_minus();
        if minus.len() != 1 || minus[0] != self.plates.len() - 1 {
            return Err(Error::InvalidSpec("exactly one negative plate is supported and it must be the last one".into()));
        }
        Ok(minus[0])
    }

    pub fn signs(&self) -> Vec<f64> {
        self.plates.iter().map(|p| p.sign.value()).collect()
    }

    pub fn plate_sizes(&self) -> Vec<usize> {
        self.plates.iter().map(|p| p.len()).collect()
    }

    /// Truncation radii of the unbounded plates, by plate index.
    pub fn truncations(&self) -> Vec<Option<f64>> {
        self.plates.iter().map(|p| p.truncation()).collect()
    }

    /// Signed measure `Σ s_i μ^i` gathered on the pool.
    pub fn resultant_weights(&self, mu: &VectorMeasure) -> Result<Vec<f64>> {
        self.check_aligned(mu)?;
        let mut r = vec![0.0; self.pool.len()];
        for (plate, comp) in self.plates.iter().zip(&mu.components) {
            let s = plate.sign.value();
            for (&k, &w) in plate.pool_index.iter().zip(&comp.weights) {
                r[k] += s * w;
            }
        }
        Ok(r)
    }

    pub fn check_aligned(&self, mu: &VectorMeasure) -> Result<()> {
        if mu.components.len() != self.plates.len() {
            return Err(Error::Alignment { expected: self.plates.len(), got: mu.components.len() });
        }
        for (p, c) in self.plates.iter().zip(&mu.components) {
            if c.weights.len() != p.len() || c.plate_id != p.id {
                return Err(Error::InvalidSpec(format!("component for plate {} has {} weights, plate has {} nodes", p.id, c.weights.len(), p.len())));
            }
        }
        Ok(())
    }
}

/// Discretize plate specs at resolution `h` and assemble the condenser.
pub fn build_condenser(n: usize, plate_specs: &[PlateSpec], resolution: f64) -> Result<Condenser> {
    let mut plates = Vec::with_capacity(plate_specs.len());
    for (id, spec) in plate_specs.iter().enumerate() {
        let nodes = spec.geometry.discretize(n, resolution)?;
        if nodes.is_empty() {
            return Err(Error::EmptyPlate { plate: id });
        }
        plates.push((spec.sign, spec.geometry.clone(), nodes));
    }
    Condenser::from_plates(n, plates)
}

/// Nonnegative weights on the nodes of one plate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub plate_id: usize,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(plate_id: usize, weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidSpec(format!("measure weight {w} is not a finite nonnegative number")));
        }
        Ok(DiscreteMeasure { plate_id, weights })
    }

    pub fn zeros(plate_id: usize, len: usize) -> Self {
        DiscreteMeasure { plate_id, weights: vec![0.0; len] }
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// One component per plate, aligned with the condenser's plate order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorMeasure {
    pub components: Vec<DiscreteMeasure>,
}

impl VectorMeasure {
    pub fn zeros(condenser: &Condenser) -> Self {
        VectorMeasure { components: condenser.plates.iter().map(|p| DiscreteMeasure::zeros(p.id, p.len())).collect() }
    }

    pub fn from_weights(weights: Vec<Vec<f64>>) -> Result<Self> {
        let components = weights.into_iter().enumerate().map(|(i, w)| DiscreteMeasure::new(i, w)).collect::<Result<_>>()?;
        Ok(VectorMeasure { components })
    }

    /// `a self + b other` (a, b >= 0 keeps the result a measure).
    pub fn combine(&self, a: f64, other: &VectorMeasure, b: f64) -> VectorMeasure {
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(x, y)| DiscreteMeasure {
                plate_id: x.plate_id,
                weights: x.weights.iter().zip(&y.weights).map(|(u, v)| a * u + b * v).collect(),
            })
            .collect();
        VectorMeasure { components }
    }

    pub fn totals(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.total_mass()).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.components.iter().flat_map(|c| c.weights.iter().copied()).collect()
    }

    pub fn unflatten(condenser: &Condenser, flat: &[f64]) -> VectorMeasure {
        let mut at = 0;
        let components = condenser
            .plates
            .iter()
            .map(|p| {
                let w = flat[at..at + p.len()].to_vec();
                at += p.len();
                DiscreteMeasure { plate_id: p.id, weights: w }
            })
            .collect();
        VectorMeasure { components }
    }
}

/// Atom of a signed measure; `plates` lists the plates that contributed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub node: Node,
    pub weight: f64,
    pub plates: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SignedMeasure {
    pub atoms: Vec<Atom>,
}

impl SignedMeasure {
    pub fn nodes(&self) -> Vec<Node> {
        self.atoms.iter().map(|a| a.node.clone()).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.weight).collect()
    }

    pub fn positive_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight.max(0.0)).sum()
    }

    pub fn negative_mass(&self) -> f64 {
        self.atoms.iter().map(|a| (-a.weight).max(0.0)).sum()
    }
}

/// Resultant `Σ_i s_i μ^i`; atoms sharing a point are merged.
pub fn resultant(mu: &VectorMeasure, condenser: &Condenser) -> Result<SignedMeasure> {
    let r = condenser.resultant_weights(mu)?;
    let mut contributors: Vec<Vec<usize>> = vec![Vec::new(); condenser.pool.len()];
    for (plate, comp) in condenser.plates.iter().zip(&mu.components) {
        for (&k, &w) in plate.pool_index.iter().zip(&comp.weights) {
            if w != 0.0 && !contributors[k].contains(&plate.id) {
                contributors[k].push(plate.id);
            }
        }
    }
    let atoms = r
        .into_iter()
        .zip(contributors)
        .enumerate()
        .filter(|(_, (w, _))| *w != 0.0)
        .map(|(k, (weight, plates))| Atom { node: condenser.pool[k].clone(), weight, plates })
        .collect();
    Ok(SignedMeasure { atoms })
}

/// Energy norm of the difference of resultants, `‖Rμ − Rν‖`.
pub fn semimetric_distance(mu: &VectorMeasure, nu: &VectorMeasure, condenser: &Condenser, kernel: &KernelSpec) -> Result<f64> {
    condenser.check_aligned(nu)?;
    let diff = condenser.resultant_weights(mu)?.iter().zip(condenser.resultant_weights(nu)?).map(|(a, b)| a - b).collect::<Vec<_>>();
    let e = kernel::pool_energy(&condenser.pool, &diff, kernel, Execution::Sequential)?;
    Ok(e.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(sign: Sign, r: f64) -> PlateSpec {
        PlateSpec { sign, geometry: PlateGeometry::Ball { center: vec![0.0; 3], radius: r, layout: BallLayout::Shells } }
    }

    #[test]
    fn zero_radius_plate_is_empty() {
        let err = build_condenser(3, &[ball(Sign::Positive, 0.0)], 0.2).unwrap_err();
        assert_eq!(err, Error::EmptyPlate { plate: 0 });
    }

    #[test]
    fn touching_ball_and_complement_are_valid() {
        let specs = vec![
            ball(Sign::Positive, 1.0),
            PlateSpec {
                sign: Sign::Negative,
                geometry: PlateGeometry::BallComplement {
                    center: vec![0.0; 3],
                    radius: 1.0,
                    truncation: 4.0,
                    grading: 1.5,
                    max_per_shell: Some(60),
                    surface_layer: true,
                },
            },
        ];
        let c = build_condenser(3, &specs, 0.25).unwrap();
        assert_eq!(c.negative_plate().unwrap(), 1);
        assert_eq!(c.truncations(), vec![None, Some(4.0)]);
        let gap = c.plates[0]
            .nodes
            .iter()
            .flat_map(|a| c.plates[1].nodes.iter().map(move |b| geometry::dist(&a.position, &b.position)))
            .fold(f64::INFINITY, f64::min);
        assert!(gap > 0.0 && gap < 0.25);
    }

    #[test]
    fn coincident_opposite_nodes_are_rejected() {
        let nd = Node::volume(vec![0.0, 0.0, 0.0], 1.0, 0);
        let cloud = PlateGeometry::ExplicitCloud { nodes: vec![nd.clone()] };
        let err = Condenser::from_plates(3, vec![(Sign::Positive, cloud.clone(), vec![nd.clone()]), (Sign::Negative, cloud, vec![nd])]).unwrap_err();
        assert!(matches!(err, Error::ZeroSeparation { .. }));
    }

    #[test]
    fn equally_signed_plates_share_pool_nodes() {
        let a = Node::volume(vec![0.0, 0.0, 0.0], 1.0, 0);
        let b = Node::volume(vec![1.0, 0.0, 0.0], 1.0, 0);
        let cloud = |v: Vec<Node>| (Sign::Positive, PlateGeometry::ExplicitCloud { nodes: v.clone() }, v);
        let c = Condenser::from_plates(3, vec![cloud(vec![a.clone(), b.clone()]), cloud(vec![b])]).unwrap();
        assert_eq!(c.pool.len(), 2);
        assert_eq!(c.plates[1].pool_index, vec![1]);
    }

    #[test]
    fn zero_measure_has_empty_resultant() {
        let a = Node::volume(vec![0.0, 0.0, 0.0], 1.0, 0);
        let c = Condenser::from_plates(3, vec![(Sign::Positive, PlateGeometry::ExplicitCloud { nodes: vec![a.clone()] }, vec![a])]).unwrap();
        let r = resultant(&VectorMeasure::zeros(&c), &c).unwrap();
        assert!(r.atoms.is_empty());
    }

    #[test]
    fn misaligned_measure_is_rejected() {
        let a = Node::volume(vec![0.0, 0.0, 0.0], 1.0, 0);
        let c = Condenser::from_plates(3, vec![(Sign::Positive, PlateGeometry::ExplicitCloud { nodes: vec![a.clone()] }, vec![a])]).unwrap();
        let mu = VectorMeasure::from_weights(vec![vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(resultant(&mu, &c).unwrap_err(), Error::Alignment { expected: 1, got: 2 });
    }
}
