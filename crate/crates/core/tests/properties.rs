use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use condenser_core::balayage::{GreenDomain, Sweeper};
use condenser_core::geometry::{ball_grid, ball_shells, complement_shells, dist, Domain};
use condenser_core::kernel::{self, assemble_matrix, equilibrium_measure, gauss_functional, mutual_energy, vector_potential, Charge, ExternalField, KernelSpec};
use condenser_core::linalg::{dot, min_eigenvalue};
use condenser_core::model::{resultant, semimetric_distance, Condenser, Node, PlateGeometry, Sign, VectorMeasure};
use condenser_core::solver::{self, project_capped_simplex, Constraint, PlateCap, ProblemSpec, SolverOptions};
use condenser_core::verify::{self, Tolerances};
use condenser_core::Execution;

const EXEC: Execution = Execution::Sequential;

fn k3(alpha: f64) -> KernelSpec {
    KernelSpec::riesz(3, alpha).unwrap()
}

/// `count` points in the shell `lo ≤ |x − c| ≤ hi`, as small volume cells.
fn cloud(rng: &mut ChaCha8Rng, count: usize, c: [f64; 3], lo: f64, hi: f64) -> Vec<Node> {
    (0..count)
        .map(|_| loop {
            let p: Vec<f64> = (0..3).map(|d| c[d] + hi * (2.0 * rng.random::<f64>() - 1.0)).collect();
            let r = dist(&p, &c);
            if r >= lo && r <= hi {
                break Node::volume(p, 1e-4, 0);
            }
        })
        .collect()
}

fn explicit(sign: Sign, nodes: Vec<Node>) -> (Sign, PlateGeometry, Vec<Node>) {
    (sign, PlateGeometry::ExplicitCloud { nodes: nodes.clone() }, nodes)
}

/// Two positive plates sharing `shared` nodes and one negative plate further out.
fn random_condenser(rng: &mut ChaCha8Rng, shared: usize) -> Condenser {
    let base = cloud(rng, 14, [0.0; 3], 0.0, 1.0);
    let a = base[..8].to_vec();
    let b = base[8 - shared..].to_vec();
    let neg = cloud(rng, 10, [0.0; 3], 2.0, 3.0);
    Condenser::from_plates(3, vec![explicit(Sign::Positive, a), explicit(Sign::Positive, b), explicit(Sign::Negative, neg)]).unwrap()
}

fn random_measure(rng: &mut ChaCha8Rng, c: &Condenser) -> VectorMeasure {
    VectorMeasure::from_weights(c.plate_sizes().iter().map(|&m| (0..m).map(|_| rng.random::<f64>()).collect()).collect()).unwrap()
}

fn alpha_of(i: usize) -> f64 {
    [0.5, 1.0, 1.5, 2.0][i % 4]
}

/// Small capped problem: positive plates get masses in [0.5, 1.5] and caps
/// 1.2–2 times those masses, the negative plate is uncapped.
fn small_problem(seed: u64, shared: usize, alpha: f64, options: SolverOptions) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = random_condenser(&mut rng, shared);
    let a: Vec<f64> = (0..2).map(|_| 0.5 + rng.random::<f64>()).collect();
    let mut caps = Vec::new();
    for (plate, mass) in c.plates.iter().zip(&a) {
        let raw: Vec<f64> = (0..plate.len()).map(|_| 0.2 + rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let factor = mass * (1.2 + 0.8 * rng.random::<f64>()) / s;
        caps.push(PlateCap::Capped { weights: raw.iter().map(|w| w * factor).collect() });
    }
    caps.push(PlateCap::Unbounded);
    ProblemSpec::new(c, k3(alpha), vec![a[0], a[1], a[0] + a[1]], ExternalField::Zero, Constraint { caps }, options).unwrap()
}

fn random_feasible(rng: &mut ChaCha8Rng, spec: &ProblemSpec) -> VectorMeasure {
    let w = (0..spec.condenser.plates.len())
        .map(|j| {
            let caps = spec.effective_caps(j);
            let v: Vec<f64> = (0..caps.len()).map(|_| 3.0 * rng.random::<f64>()).collect();
            project_capped_simplex(&v, &caps, spec.totals[j]).unwrap()
        })
        .collect();
    VectorMeasure::from_weights(w).unwrap()
}

fn exterior() -> &'static Vec<Node> {
    static EXT: OnceLock<Vec<Node>> = OnceLock::new();
    EXT.get_or_init(|| complement_shells(&[0.0; 3], 1.0, 4.0, 0.35, 1.5, Some(80), true).unwrap().0)
}

fn sweeper() -> &'static Sweeper {
    static SW: OnceLock<Sweeper> = OnceLock::new();
    SW.get_or_init(|| Sweeper::new(exterior().clone(), &k3(1.5), EXEC).unwrap())
}

fn interior_atoms(rng: &mut ChaCha8Rng, count: usize) -> Vec<Node> {
    cloud(rng, count, [0.0; 3], 0.0, 0.8)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn resultant_is_linear(seed in any::<u64>(), a in 0.0..3.0f64, b in 0.0..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_condenser(&mut rng, 3);
        let (mu, nu) = (random_measure(&mut rng, &c), random_measure(&mut rng, &c));
        let lhs = c.resultant_weights(&mu.combine(a, &nu, b)).unwrap();
        let (rm, rn) = (c.resultant_weights(&mu).unwrap(), c.resultant_weights(&nu).unwrap());
        for ((l, x), y) in lhs.iter().zip(&rm).zip(&rn) {
            prop_assert!((l - (a * x + b * y)).abs() <= 1e-14 * (1.0 + l.abs()));
        }
    }

    #[test]
    fn semimetric_is_symmetric_and_satisfies_the_triangle_inequality(seed in any::<u64>(), i in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_condenser(&mut rng, 2);
        let k = k3(alpha_of(i));
        let m: Vec<VectorMeasure> = (0..3).map(|_| random_measure(&mut rng, &c)).collect();
        let d = |x: &VectorMeasure, y: &VectorMeasure| semimetric_distance(x, y, &c, &k).unwrap();
        prop_assert!((d(&m[0], &m[1]) - d(&m[1], &m[0])).abs() <= 1e-12 * d(&m[0], &m[1]));
        prop_assert!(d(&m[0], &m[2]) <= d(&m[0], &m[1]) + d(&m[1], &m[2]) + 1e-12);
    }

    #[test]
    fn semimetric_vanishes_exactly_for_equal_resultants(seed in any::<u64>(), frac in 0.1..0.9f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_condenser(&mut rng, 3);
        let k = k3(1.5);
        let mu = random_measure(&mut rng, &c);
        // move mass at a node shared by both positive plates from one plate to the other
        let shared_pool = c.plates[0].pool_index[7];
        let ib = c.plates[1].pool_index.iter().position(|&q| q == shared_pool).unwrap();
        let mut nu = mu.clone();
        let delta = frac * nu.components[0].weights[7];
        nu.components[0].weights[7] -= delta;
        nu.components[1].weights[ib] += delta;
        let rm = resultant(&mu, &c).unwrap().weights();
        let rn = resultant(&nu, &c).unwrap().weights();
        prop_assert!(rm.iter().zip(&rn).all(|(a, b)| (a - b).abs() <= 1e-15 * (1.0 + a.abs())));
        let norm = semimetric_distance(&mu, &VectorMeasure::zeros(&c), &c, &k).unwrap();
        prop_assert!(semimetric_distance(&mu, &nu, &c, &k).unwrap() <= 1e-7 * norm);
        // a genuine change of the resultant is seen
        let mut other = mu.clone();
        other.components[2].weights[0] += 0.1;
        prop_assert!(semimetric_distance(&mu, &other, &c, &k).unwrap() > 0.0);
    }

    #[test]
    fn kernel_matrices_are_positive_definite(seed in any::<u64>(), count in 2usize..50, i in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = cloud(&mut rng, count, [0.0; 3], 0.0, 1.0);
        let k = assemble_matrix(&nodes, &k3(alpha_of(i)), EXEC).unwrap();
        prop_assert!(k.entries.asymmetry() == 0.0);
        prop_assert!(k.entries.data().iter().all(|v| *v > 0.0));
        prop_assert!(k.min_eigenvalue(EXEC) > 0.0);
    }

    #[test]
    fn mutual_energy_is_symmetric_and_bilinear(seed in any::<u64>(), s in -2.0..2.0f64, i in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = k3(alpha_of(i));
        let a = cloud(&mut rng, 6, [0.0; 3], 0.0, 1.0);
        let b = cloud(&mut rng, 5, [2.0, 0.0, 0.0], 0.0, 1.0);
        let wa: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let wb: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        let wb2: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        let ab = mutual_energy(&a, &wa, &b, &wb, &k, EXEC);
        prop_assert!((ab - mutual_energy(&b, &wb, &a, &wa, &k, EXEC)).abs() <= 1e-13 * ab);
        let comb: Vec<f64> = wb.iter().zip(&wb2).map(|(x, y)| x + s * y).collect();
        let lhs = mutual_energy(&a, &wa, &b, &comb, &k, EXEC);
        let rhs = ab + s * mutual_energy(&a, &wa, &b, &wb2, &k, EXEC);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (ab.abs() + rhs.abs()));
    }

    #[test]
    fn vector_potential_is_the_signed_resultant_potential(seed in any::<u64>(), i in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_condenser(&mut rng, 3);
        let k = k3(alpha_of(i));
        let mu = random_measure(&mut rng, &c);
        let pts: Vec<Vec<f64>> = c.pool.iter().map(|n| n.position.clone()).collect();
        let r = c.resultant_weights(&mu).unwrap();
        let abs_r: Vec<f64> = r.iter().map(|v| v.abs()).collect();
        let via_r = kernel::potential(&c.pool, &r, &pts, &k, EXEC);
        let scale = kernel::potential(&c.pool, &abs_r, &pts, &k, EXEC);
        for plate in &c.plates {
            let v = vector_potential(&mu, plate.id, &pts, &c, &k, EXEC).unwrap();
            let s = plate.sign.value();
            for ((a, b), sc) in v.iter().zip(&via_r).zip(&scale) {
                prop_assert!((a - s * b).abs() <= 1e-12 * sc);
            }
        }
    }

    #[test]
    fn swept_charge_gauss_functional_is_bounded_below(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_condenser(&mut rng, 2);
        let k = k3(1.5);
        let zeta = Charge { nodes: cloud(&mut rng, 4, [0.0; 3], 1.1, 1.5), weights: (0..4).map(|_| rng.random::<f64>()).collect() };
        let swept = Charge { nodes: cloud(&mut rng, 5, [0.0; 3], 3.5, 4.0), weights: (0..5).map(|_| rng.random::<f64>()).collect() };
        let diff = zeta.minus(&swept);
        let floor = -mutual_energy(&diff.nodes, &diff.weights, &diff.nodes, &diff.weights, &k, EXEC);
        let field = ExternalField::SweptCharge { charge: zeta, charge_swept: swept };
        let fv = field.node_values(&c, &k, EXEC).unwrap();
        for _ in 0..5 {
            let mu = random_measure(&mut rng, &c);
            let g = gauss_functional(&mu, &fv, &c, &k, EXEC).unwrap();
            prop_assert!(g >= floor - 1e-12 * floor.abs().max(1.0));
        }
    }

    #[test]
    fn equilibrium_potential_is_two_sided(seed in any::<u64>(), count in 2usize..40, i in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = cloud(&mut rng, count, [0.0; 3], 0.0, 1.0);
        let eq = equilibrium_measure(&nodes, &k3(alpha_of(i)), 1.0, EXEC).unwrap();
        let c = eq.energy;
        for (w, u) in eq.weights.iter().zip(&eq.potential) {
            prop_assert!(*u >= c * (1.0 - 1e-9));
            if *w > 1e-12 {
                prop_assert!(*u <= c * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn projection_beats_every_competitor(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sw = sweeper();
        let src = interior_atoms(&mut rng, 3);
        let w: Vec<f64> = (0..3).map(|_| 0.1 + rng.random::<f64>()).collect();
        let res = sw.sweep(&src, &w, EXEC).unwrap();
        prop_assert!(res.swept.iter().all(|t| *t >= 0.0));
        prop_assert!(res.orthogonality.abs() <= 1e-9);
        let b = sw.source_potential(&src, &w, EXEC);
        let e_src = mutual_energy(&src, &w, &src, &w, sw.kernel(), EXEC);
        for _ in 0..5 {
            let theta: Vec<f64> = res.swept.iter().map(|t| (t * (1.0 + 0.4 * (rng.random::<f64>() - 0.5)) + 1e-4 * rng.random::<f64>()).max(0.0)).collect();
            let gap = (e_src - 2.0 * dot(&b, &theta) + sw.gram().bilinear(&theta, &theta, EXEC)).max(0.0).sqrt();
            prop_assert!(gap >= res.projection_gap - 1e-9);
        }
    }

    #[test]
    fn balayage_is_linear_in_the_source(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sw = sweeper();
        let src = cloud(&mut rng, 2, [0.0; 3], 0.0, 0.5);
        let w = [0.2 + rng.random::<f64>(), 0.2 + rng.random::<f64>()];
        let both = sw.sweep(&src, &w, EXEC).unwrap().swept;
        let one = sw.sweep(&src[..1], &[1.0], EXEC).unwrap().swept;
        let two = sw.sweep(&src[1..], &[1.0], EXEC).unwrap().swept;
        // the projection is linear only while no nonnegativity bound is active
        prop_assume!(both.iter().chain(&one).chain(&two).all(|t| *t > 0.0));
        for ((x, a), b) in both.iter().zip(&one).zip(&two) {
            prop_assert!((x - (w[0] * a + w[1] * b)).abs() <= 1e-8);
        }
    }

    #[test]
    fn green_matrices_are_symmetric_and_positive_definite(seed in any::<u64>(), count in 2usize..12) {
        static DOMAIN: OnceLock<GreenDomain> = OnceLock::new();
        let domain = DOMAIN.get_or_init(|| GreenDomain::new(1, exterior().clone(), &k3(1.5), Some(Domain::Ball { center: vec![0.0; 3], radius: 1.0 }), EXEC).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = interior_atoms(&mut rng, count);
        let g = domain.green_matrix(&nodes, EXEC).unwrap();
        prop_assert!(g.asymmetry <= 1e-6, "asymmetry {}", g.asymmetry);
        prop_assert!(min_eigenvalue(&g.matrix.entries, EXEC) > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn solver_output_is_feasible_with_a_decreasing_trace(seed in any::<u64>(), i in 1usize..4) {
        let spec = small_problem(seed, 3, alpha_of(i), SolverOptions::default());
        let res = solver::solve_riesz(&spec).unwrap();
        prop_assert!(res.converged);
        for (j, comp) in res.solution.components.iter().enumerate() {
            let caps = spec.effective_caps(j);
            prop_assert!((comp.total_mass() - spec.totals[j]).abs() <= 1e-12 * spec.totals[j].max(1.0));
            prop_assert!(comp.weights.iter().zip(&caps).all(|(w, c)| *w >= 0.0 && *w <= *c + 1e-12));
        }
        prop_assert!(res.trace.windows(2).all(|w| w[1].objective <= w[0].objective));
    }

    #[test]
    fn output_satisfies_the_variational_inequality(seed in any::<u64>(), i in 1usize..4) {
        let spec = small_problem(seed, 3, alpha_of(i), SolverOptions::default());
        let res = solver::solve_riesz(&spec).unwrap();
        let w = verify::fresh_potentials(&res.solution, &spec).unwrap();
        let norm = res.kkt.iter().flatten().map(|k| k.constant.abs()).fold(1.0, f64::max);
        let mass: f64 = spec.totals.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..10 {
            let mu = random_feasible(&mut rng, &spec);
            let vi: f64 = (0..w.len()).map(|j| w[j].iter().zip(&mu.components[j].weights).zip(&res.solution.components[j].weights).map(|((wi, m), l)| wi * (m - l)).sum::<f64>()).sum();
            prop_assert!(vi >= -2.0 * 1e-6 * mass * norm, "⟨W, μ − λ⟩ = {vi}");
        }
    }

    #[test]
    fn different_starts_give_r_equivalent_solutions(seed in any::<u64>(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let opts = |s| SolverOptions { seed: Some(s), ..SolverOptions::default() };
        let spec = small_problem(seed, 3, 1.5, opts(s1));
        let a = solver::solve_riesz(&spec).unwrap();
        let b = solver::solve_riesz(&spec.clone().with_options(opts(s2))).unwrap();
        let ag = verify::agreement(&a, &b, &spec, f64::INFINITY, 1e-4).unwrap();
        prop_assert!(ag.relative_distance <= 1e-4, "{ag:?}");
        // disjoint positive plates: the weights themselves agree
        let spec = small_problem(seed, 0, 1.5, opts(s1));
        let a = solver::solve_riesz(&spec).unwrap();
        let b = solver::solve_riesz(&spec.clone().with_options(opts(s2))).unwrap();
        let (fa, fb) = (a.solution.flatten(), b.solution.flatten());
        let top = fa.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        prop_assert!(fa.iter().zip(&fb).all(|(x, y)| (x - y).abs() <= 1e-4 * top));
    }

    #[test]
    fn riesz_value_dominates_the_green_value(seed in any::<u64>()) {
        let spec = small_problem(seed, 3, 1.5, SolverOptions::default());
        let domain = solver::green_domain_for(&spec).unwrap();
        let g = solver::green_matrix_for(&spec, &domain).unwrap();
        let riesz = solver::solve_riesz(&spec).unwrap();
        let green = solver::solve_green_reduced(&spec, &g).unwrap();
        prop_assert!(riesz.energy >= green.energy - 1e-8 * riesz.energy.abs().max(1.0), "{} < {}", riesz.energy, green.energy);
    }

    #[test]
    fn passing_kkt_means_no_descending_transfer(seed in any::<u64>(), i in 1usize..4) {
        let spec = small_problem(seed, 3, alpha_of(i), SolverOptions::default());
        let res = solver::solve_riesz(&spec).unwrap();
        let tol = Tolerances::default();
        let rep = verify::kkt_report(&res, &spec, None, &tol).unwrap();
        prop_assert!(rep.pass, "{rep:?}");
        let tr = verify::transfer_check(&res, &spec, 40, seed, &tol).unwrap();
        prop_assert!(tr.pass, "{tr:?}");
    }

    #[test]
    fn sequential_and_parallel_runs_agree_bitwise(seed in any::<u64>()) {
        let seq = small_problem(seed, 3, 1.5, SolverOptions { exec: Execution::Sequential, ..SolverOptions::default() });
        let par = seq.clone().with_options(SolverOptions { exec: Execution::Parallel, ..SolverOptions::default() });
        let a = solver::solve_riesz(&seq).unwrap();
        let b = solver::solve_riesz(&par).unwrap();
        prop_assert_eq!(a.energy.to_bits(), b.energy.to_bits());
        prop_assert_eq!(a.solution.flatten(), b.solution.flatten());
    }
}

#[test]
fn ball_quadrature_volume_converges() {
    let exact = 4.0 / 3.0 * std::f64::consts::PI;
    let rel = |nodes: &[Node]| (nodes.iter().map(|n| n.quad_weight).sum::<f64>() - exact).abs() / exact;
    for h in [0.4, 0.2, 0.1] {
        // shell cells split exact shell volumes
        assert!(rel(&ball_shells(&[0.0; 3], 1.0, h).unwrap().0) < 1e-12);
        // the plain grid converges at first order
        let e = rel(&ball_grid(&[0.0; 3], 1.0, h));
        assert!(e < 2.0 * h, "grid h = {h}: {e}");
    }
}

#[test]
fn exhaustion_energies_are_positive_and_decreasing() {
    let t = verify::unsolvability_sweep(&[1, 2, 3], &Tolerances::default(), EXEC).unwrap();
    assert!(t.stages.iter().all(|s| s.energy > 0.0));
    assert!(t.strictly_decreasing);
    assert!(t.slope.unwrap() < 0.0);
}

/// Exterior refinement ladder: the Riesz/Green gap should not grow as the
/// complement is resolved more finely.
#[test]
fn equivalence_gap_shrinks_with_exterior_resolution() {
    let inner = ball_shells(&[0.0; 3], 1.0, 0.34).unwrap().0;
    let k = k3(1.5);
    let mut gaps = Vec::new();
    for h in [0.6, 0.45, 0.34] {
        let ext = complement_shells(&[0.0; 3], 1.0, 8.0, h, 1.4, Some(60), true).unwrap().0;
        let geom = PlateGeometry::BallComplement { center: vec![0.0; 3], radius: 1.0, truncation: 8.0, grading: 1.4, max_per_shell: Some(60), surface_layer: true };
        let c = Condenser::from_plates(3, vec![explicit(Sign::Positive, inner.clone()), (Sign::Negative, geom, ext)]).unwrap();
        let caps = vec![1.6 / inner.len() as f64; inner.len()];
        let spec = ProblemSpec::new(c, k, vec![1.0, 1.0], ExternalField::Zero, Constraint { caps: vec![PlateCap::Capped { weights: caps }, PlateCap::Unbounded] }, SolverOptions::default()).unwrap();
        let domain = solver::green_domain_for(&spec).unwrap();
        let g = solver::green_matrix_for(&spec, &domain).unwrap();
        let riesz = solver::solve_riesz(&spec).unwrap();
        let green = solver::solve_green_reduced(&spec, &g).unwrap();
        let lifted = solver::lift_green_to_riesz(&green, &spec, &domain).unwrap();
        gaps.push(verify::equivalence_check(&riesz, &green, &lifted, &spec, &Tolerances::default()).unwrap().relative_gap);
    }
    eprintln!("equivalence gaps over the ladder: {gaps:?}");
    assert!(gaps.windows(2).all(|w| w[1] <= w[0] * 1.05), "{gaps:?}");
}
