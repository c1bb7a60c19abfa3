//! Node layouts for the supported plate shapes.
//!
//! Volumes are filled by concentric shells (n = 3) or a regular grid (any n);
//! spheres use an equal-area polar-cap/collar partition; flat pieces (disks and
//! the boundary plane of a half-space) use polar rings.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Node;

/// Volume of the unit ball in R^d.
pub fn unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    PI.powf(h) / statrs::function::gamma::gamma(h + 1.0)
}

/// Radius of the d-ball with the given volume.
pub fn equivalent_radius(volume: f64, d: usize) -> f64 {
    (volume / unit_ball_volume(d)).powf(1.0 / d as f64)
}

/// Equal-area partition of the unit sphere in R^3: two polar caps plus collars
/// of equal-area cells. Returns cell centres and exact cell areas (summing to 4π).
pub fn equal_area_sphere(count: usize) -> Vec<([f64; 3], f64)> {
    match count {
        0 => return Vec::new(),
        1 => return vec![([0.0, 0.0, 1.0], 4.0 * PI)],
        2 => return vec![([0.0, 0.0, 1.0], 2.0 * PI), ([0.0, 0.0, -1.0], 2.0 * PI)],
        _ => {}
    }
    let area = 4.0 * PI / count as f64;
    let cap_angle = 2.0 * (area / (4.0 * PI)).sqrt().asin();
    let ideal = area.sqrt();
    let collars = (((PI - 2.0 * cap_angle) / ideal).round() as usize).max(1);
    let fit = (PI - 2.0 * cap_angle) / collars as f64;
    let edges: Vec<f64> = (0..=collars).map(|k| cap_angle + k as f64 * fit).collect();

    // round collar counts while carrying the remainder forward
    let mut counts = Vec::with_capacity(collars);
    let mut carry = 0.0;
    for k in 0..collars {
        let want = 2.0 * PI * (edges[k].cos() - edges[k + 1].cos()) / area + carry;
        let m = want.round();
        carry = want - m;
        counts.push((m as usize).max(1));
    }

    let mut out = vec![([0.0, 0.0, 1.0], area)];
    let mut z = 1.0 - area / (2.0 * PI);
    for (b, &m) in counts.iter().enumerate() {
        let mut z2 = z - m as f64 * area / (2.0 * PI);
        if b + 1 == counts.len() {
            z2 = -1.0 + area / (2.0 * PI);
        }
        let zm = ((z.acos() + z2.max(-1.0).acos()) / 2.0).cos();
        let s = (1.0 - zm * zm).max(0.0).sqrt();
        let offset = 0.5 * (b % 2) as f64;
        let cell = (z - z2) * 2.0 * PI / m as f64;
        for k in 0..m {
            let phi = 2.0 * PI * (k as f64 + offset) / m as f64;
            out.push(([s * phi.cos(), s * phi.sin(), zm], cell));
        }
        z = z2;
    }
    out.push(([0.0, 0.0, -1.0], area));
    out
}

fn require_3d(center: &[f64], what: &str) -> Result<()> {
    if center.len() != 3 {
        return Err(Error::InvalidSpec(format!("{what} layout is only available for n = 3")));
    }
    Ok(())
}

fn offset3(center: &[f64], p: [f64; 3], scale: f64) -> Vec<f64> {
    vec![center[0] + scale * p[0], center[1] + scale * p[1], center[2] + scale * p[2]]
}

/// Sphere S(center, radius) with `count` equal-area surface cells.
pub fn sphere_nodes(center: &[f64], radius: f64, count: usize) -> Result<Vec<Node>> {
    require_3d(center, "sphere")?;
    Ok(equal_area_sphere(count)
        .into_iter()
        .map(|(p, a)| Node::surface(offset3(center, p, radius), a * radius * radius, 0))
        .collect())
}

/// Radial band `[inner, outer]` of a shell layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub inner: f64,
    pub outer: f64,
}

/// Open ball filled with concentric shells of thickness ≈ h: one centre node for
/// [0, h], then shells whose node counts keep cells roughly h wide. Node `layer`
/// is the shell index.
pub fn ball_shells(center: &[f64], radius: f64, h: f64) -> Result<(Vec<Node>, Vec<Shell>)> {
    require_3d(center, "ball shell")?;
    let count = ((radius / h).round() as usize).max(1);
    let h = radius / count as f64;
    let mut nodes = Vec::new();
    let mut shells = Vec::with_capacity(count);
    for k in 0..count {
        let (lo, hi) = (k as f64 * h, (k + 1) as f64 * h);
        let vol = 4.0 / 3.0 * PI * (hi.powi(3) - lo.powi(3));
        shells.push(Shell { inner: lo, outer: hi });
        if k == 0 {
            nodes.push(Node::volume(center.to_vec(), vol, k));
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let m = ((4.0 * PI * mid * mid / (h * h)).round() as usize).max(1);
        let cells = equal_area_sphere(m);
        let m = cells.len() as f64;
        for (p, _) in cells {
            nodes.push(Node::volume(offset3(center, p, mid), vol / m, k));
        }
    }
    Ok((nodes, shells))
}

/// Regular grid with spacing h intersected with the open ball, any dimension.
pub fn ball_grid(center: &[f64], radius: f64, h: f64) -> Vec<Node> {
    let n = center.len();
    let m = (radius / h).ceil() as i64;
    let cell = h.powi(n as i32);
    let mut nodes = Vec::new();
    let mut idx = vec![-m; n];
    loop {
        let offs: Vec<f64> = idx.iter().map(|&k| k as f64 * h).collect();
        let r2: f64 = offs.iter().map(|x| x * x).sum();
        if r2 < radius * radius {
            let pos: Vec<f64> = center.iter().zip(&offs).map(|(c, o)| c + o).collect();
            nodes.push(Node::volume(pos, cell, (r2.sqrt() / h).round() as usize));
        }
        // odometer increment
        let mut d = 0;
        loop {
            if d == n {
                return nodes;
            }
            idx[d] += 1;
            if idx[d] <= m {
                break;
            }
            idx[d] = -m;
            d += 1;
        }
    }
}

/// Truncated complement of a ball: an optional surface layer on the sphere,
/// then shells whose thickness starts at h and grows by `grading`, up to the
/// truncation radius. Node `layer` is 0 on the surface and the shell number beyond.
pub fn complement_shells(
    center: &[f64],
    radius: f64,
    truncation: f64,
    h: f64,
    grading: f64,
    max_per_shell: Option<usize>,
    surface_layer: bool,
) -> Result<(Vec<Node>, Vec<Shell>)> {
    require_3d(center, "ball complement")?;
    if truncation <= radius {
        return Err(Error::InvalidSpec("truncation radius must exceed the ball radius".into()));
    }
    if grading < 1.0 {
        return Err(Error::InvalidSpec("shell grading must be at least 1".into()));
    }
    let mut nodes = Vec::new();
    let mut shells = Vec::new();
    if surface_layer {
        let m = ((4.0 * PI * radius * radius / (h * h)) as usize).max(1);
        nodes.extend(sphere_nodes(center, radius, m)?);
        shells.push(Shell { inner: radius, outer: radius });
    }
    let mut lo = radius;
    let mut t = h;
    let mut layer = 1;
    while lo < truncation {
        let hi = (lo + t).min(truncation);
        let vol = 4.0 / 3.0 * PI * (hi.powi(3) - lo.powi(3));
        let mid = 0.5 * (lo + hi);
        let mut m = ((4.0 * PI * mid * mid / (t * t)).round() as usize).max(1);
        if let Some(cap) = max_per_shell {
            m = m.min(cap.max(1));
        }
        let cells = equal_area_sphere(m);
        let m = cells.len() as f64;
        for (p, _) in cells {
            nodes.push(Node::volume(offset3(center, p, mid), vol / m, layer));
        }
        shells.push(Shell { inner: lo, outer: hi });
        lo = hi;
        t *= grading;
        layer += 1;
    }
    Ok((nodes, shells))
}

/// Polar cell of a flat layout, in the layout's own polar coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarCell {
    pub r0: f64,
    pub r1: f64,
    pub phi0: f64,
    pub phi1: f64,
}

impl PolarCell {
    pub fn area(&self) -> f64 {
        0.5 * (self.phi1 - self.phi0) * (self.r1 * self.r1 - self.r0 * self.r0)
    }
}

/// Flat polar-ring layout in the plane `x1 = level`, centred at `(level, c2, c3)`.
#[derive(Clone, Debug)]
pub struct PolarLayout {
    pub center: [f64; 3],
    pub nodes: Vec<Node>,
    pub cells: Vec<PolarCell>,
    /// ring boundaries, starting at 0
    pub ring_edges: Vec<f64>,
}

/// Parameters of a polar-ring layout: uniform rings of width ≈ `spacing` out to
/// `inner_radius`, then rings growing by `grading` out to `outer_radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingPlan {
    pub spacing: f64,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub grading: f64,
    pub max_per_ring: Option<usize>,
}

impl RingPlan {
    pub fn uniform(radius: f64, spacing: f64) -> Self {
        RingPlan { spacing, inner_radius: radius, outer_radius: radius, grading: 1.0, max_per_ring: None }
    }

    pub fn edges(&self) -> Result<Vec<f64>> {
        if !(self.spacing > 0.0) || !(self.inner_radius > 0.0) || self.outer_radius < self.inner_radius {
            return Err(Error::InvalidSpec("ring layout needs 0 < spacing, 0 < inner radius <= outer radius".into()));
        }
        let count = ((self.inner_radius / self.spacing).round() as usize).max(1);
        let w = self.inner_radius / count as f64;
        let mut edges: Vec<f64> = (0..=count).map(|k| k as f64 * w).collect();
        edges[count] = self.inner_radius;
        if self.outer_radius > self.inner_radius {
            if self.grading <= 1.0 {
                return Err(Error::InvalidSpec("ring grading must exceed 1 beyond the inner radius".into()));
            }
            let mut t = w;
            let mut r = self.inner_radius;
            while r < self.outer_radius {
                t *= self.grading;
                r = (r + t).min(self.outer_radius);
                edges.push(r);
            }
        }
        Ok(edges)
    }
}

pub fn polar_layout(center: [f64; 3], plan: &RingPlan) -> Result<PolarLayout> {
    let edges = plan.edges()?;
    let mut nodes = Vec::new();
    let mut cells = Vec::new();
    for k in 0..edges.len() - 1 {
        let (r0, r1) = (edges[k], edges[k + 1]);
        if k == 0 {
            let cell = PolarCell { r0, r1, phi0: 0.0, phi1: 2.0 * PI };
            nodes.push(Node::surface(center.to_vec(), cell.area(), 0));
            cells.push(cell);
            continue;
        }
        let mid = 0.5 * (r0 + r1);
        let mut m = ((2.0 * PI * mid / (r1 - r0)).round() as usize).max(3);
        if let Some(cap) = plan.max_per_ring {
            m = m.min(cap.max(3));
        }
        let offset = 0.5 * (k % 2) as f64;
        for j in 0..m {
            let phi = 2.0 * PI * (j as f64 + offset) / m as f64;
            let half = PI / m as f64;
            let cell = PolarCell { r0, r1, phi0: phi - half, phi1: phi + half };
            let pos = vec![center[0], center[1] + mid * phi.cos(), center[2] + mid * phi.sin()];
            nodes.push(Node::surface(pos, cell.area(), k));
            cells.push(cell);
        }
    }
    Ok(PolarLayout { center, nodes, cells, ring_edges: edges })
}

/// Mass that the equilibrium measure of a flat disk of radius `a` (α = 2, n = 3)
/// puts in the annulus `r0 <= ρ <= r1`; the density is `1/(2π a sqrt(a² − ρ²))`.
pub fn disk_equilibrium_ring_mass(a: f64, r0: f64, r1: f64) -> f64 {
    let s = |r: f64| (a * a - r.min(a) * r.min(a)).max(0.0).sqrt();
    (s(r0) - s(r1)) / a
}

/// Mass that the α-equilibrium measure of the ball B(0, r) in R^n puts in the
/// shell `lo <= |x| <= hi` (density ∝ (r² − |x|²)^{−α/2}), for α < 2.
pub fn ball_equilibrium_shell_mass(n: usize, alpha: f64, r: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(alpha < 2.0) {
        return Err(Error::UnsupportedKernel(
            "the α = 2 equilibrium measure of a ball lives on the sphere, not in the volume".into(),
        ));
    }
    let a = n as f64 / 2.0;
    let b = 1.0 - alpha / 2.0;
    let f = |s: f64| statrs::function::beta::beta_reg(a, b, (s * s / (r * r)).min(1.0));
    Ok(f(hi) - f(lo))
}

/// The open domain D whose complement is swept onto.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Domain {
    Ball { center: Vec<f64>, radius: f64 },
    /// `{x1 > 0}`
    HalfSpace,
    /// complement of a closed ball (the ball itself is then D^c)
    BallExterior { center: Vec<f64>, radius: f64 },
}

impl Domain {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Ball { center, radius } => dist(x, center) < *radius,
            Domain::HalfSpace => x[0] > 0.0,
            Domain::BallExterior { center, radius } => dist(x, center) > *radius,
        }
    }

    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Ball { center, radius } | Domain::BallExterior { center, radius } => (dist(x, center) - radius).abs(),
            Domain::HalfSpace => x[0].abs(),
        }
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
