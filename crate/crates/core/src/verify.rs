//! The invariant suite behind the `verify` CLI command.
//!
//! Each check reports the largest residual it saw together with the
//! tolerance it is held to; a report passes when every check does. Checks
//! sweep random samples at desk scale from fixed seeds, so reports are
//! deterministic. Sample sweeps fan out over rayon when the `parallel`
//! feature (default) is on; the `*_serial` entry points always run
//! sequentially and exist for the benchmark comparison.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand::rngs::StdRng;

use crate::bundle::BundlePoint;
use crate::connection::mixed_curvature;
use crate::examples::{make_particle_2d, ExampleBundle, ReductionMode};
use crate::group::{AlgebraElement, GroupElement};
use crate::linalg;
use crate::par;
use crate::reconstruction::reconstruct;
use crate::reduction::{momentum_evolution_residual, momentum_map, ReducedSystem};
use crate::solver::{dla_step, dla_trajectory, max_trajectory_residual, SolverConfig};
use crate::system::DiscreteCurve;
use crate::Result;

/// Outcome of one invariant check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_residual: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_residual.is_finite() && self.max_residual < self.tolerance
    }
}

/// Full report for one example.
#[derive(Clone, Debug)]
pub struct Report {
    pub example: String,
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn max_residual(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_residual)
            .fold(0.0, f64::max)
    }
}

/// Options for a verification run.
#[derive(Clone, Debug)]
pub struct VerifyOptions {
    /// Random samples per structural check.
    pub samples: usize,
    /// Trajectory length; `None` uses the example default.
    pub steps: Option<usize>,
    /// Initial pair; `None` uses the example default.
    pub initial: Option<(BundlePoint, BundlePoint)>,
    /// When set, an interior trajectory point is displaced by this amount
    /// before the dynamic residual checks, demonstrating their
    /// sensitivity.
    pub perturbation: Option<f64>,
    pub solver: SolverConfig,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            samples: 100,
            steps: None,
            initial: None,
            perturbation: None,
            solver: SolverConfig::default(),
        }
    }
}

fn sample_point(ex: &ExampleBundle, rng: &mut StdRng) -> BundlePoint {
    let bundle = ex.system.bundle();
    let coords = DVector::from_fn(bundle.dim(), |_, _| rng.random_range(-1.0..1.0));
    bundle.point_from_coords(&coords)
}

fn sample_group(ex: &ExampleBundle, rng: &mut StdRng) -> GroupElement {
    let group = ex.system.bundle().group();
    GroupElement::new(
        group,
        DVector::from_fn(group.dim(), |_, _| rng.random_range(-2.0..2.0)),
    )
}

fn reduced_system(ex: &ExampleBundle) -> ReducedSystem {
    ReducedSystem::new(
        Arc::clone(&ex.system),
        Arc::clone(&ex.connection),
        Arc::clone(&ex.discrete_connection),
    )
}

/// Max-reduce a per-sample residual over `0..samples`, in parallel unless
/// `serial` is set. Each sample draws from its own seeded generator, so
/// results do not depend on scheduling.
fn sweep<F>(samples: usize, serial: bool, f: F) -> Result<f64>
where
    F: Fn(usize) -> Result<f64> + Sync + Send,
{
    let residuals = if serial {
        par::map_indexed_serial(samples, &f)
    } else {
        par::map_indexed(samples, &f)
    };
    let mut worst: f64 = 0.0;
    for r in residuals {
        worst = worst.max(r?);
    }
    Ok(worst)
}

fn seeded(tag: u64, i: usize) -> StdRng {
    StdRng::seed_from_u64(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (i as u64))
}

/// `A_d(g0 q0, g1 q1) = g1 A_d(q0, q1) g0^-1` on random points.
fn connection_equivariance_residual(ex: &ExampleBundle, i: usize) -> Result<f64> {
    let mut rng = seeded(1, i);
    let q0 = sample_point(ex, &mut rng);
    let q1 = sample_point(ex, &mut rng);
    let g0 = sample_group(ex, &mut rng);
    let g1 = sample_group(ex, &mut rng);
    let lhs = ex.discrete_connection.form(&q0.act(&g0)?, &q1.act(&g1)?);
    let rhs = g1
        .mul(&ex.discrete_connection.form(&q0, &q1))
        .mul(&g0.inverse());
    Ok(lhs.displacement_from(&rhs).norm())
}

/// `D_1 L_d(xi_Q(q0)) = -D_2 L_d(xi_Q(q1))` through the numeric gradients.
fn gradient_antisymmetry_residual(ex: &ExampleBundle, i: usize) -> Result<f64> {
    let mut rng = seeded(2, i);
    let q0 = sample_point(ex, &mut rng);
    let q1 = sample_point(ex, &mut rng);
    let xi = AlgebraElement::new(DVector::from_fn(ex.system.bundle().fiber_dim(), |_, _| {
        rng.random_range(-2.0..2.0)
    }));
    let (d1, d2) = ex.system.numeric_gradients(&q0, &q1);
    let lhs = d1.dot(&q0.infinitesimal_generator(&xi).coords());
    let rhs = d2.dot(&q1.infinitesimal_generator(&xi).coords());
    Ok((lhs + rhs).abs())
}

/// `F_1~(q0, A_d(q0, q1), pi(q1)) = q1`: the reduced-space isomorphisms
/// invert each other.
fn pair_decomposition_residual(ex: &ExampleBundle, i: usize) -> Result<f64> {
    let mut rng = seeded(3, i);
    let q0 = sample_point(ex, &mut rng);
    let q1 = sample_point(ex, &mut rng);
    let w = ex.discrete_connection.form(&q0, &q1);
    let back = crate::reduction::f1_tilde(&ex.discrete_connection, &q0, &w, q1.project());
    Ok(back.displacement_from(&q1).norm())
}

/// The discrete horizontal lift is a section over the base with identity
/// connection value.
fn horizontal_lift_residual(ex: &ExampleBundle, i: usize) -> Result<f64> {
    let mut rng = seeded(4, i);
    let q0 = sample_point(ex, &mut rng);
    let target = sample_point(ex, &mut rng);
    let r1 = target.project();
    let lifted = ex.discrete_connection.horizontal_lift(&q0, r1);
    let base_gap = ex
        .system
        .bundle()
        .base_displacement(lifted.project(), r1)
        .norm();
    let form_gap = ex
        .discrete_connection
        .form(&q0, &lifted)
        .norm_from_identity();
    Ok(base_gap.max(form_gap))
}

/// Invariance of the lagrangian and the kinematic levels under the
/// diagonal action.
fn invariance_residual(ex: &ExampleBundle, i: usize) -> Result<f64> {
    let mut rng = seeded(5, i);
    let q0 = sample_point(ex, &mut rng);
    let q1 = sample_point(ex, &mut rng);
    let g = sample_group(ex, &mut rng);
    let dl = (ex.system.lagrangian(&q0.act(&g)?, &q1.act(&g)?) - ex.system.lagrangian(&q0, &q1))
        .abs();
    let dchi = (ex.system.constraint_residual(&q0.act(&g)?, &q1.act(&g)?)
        - ex.system.constraint_residual(&q0, &q1))
    .norm();
    Ok(dl.max(dchi))
}

/// The span of the annihilator covectors is invariant along the action:
/// stacking `omega(q)` and the pullback of `omega(gq)` must not raise the
/// rank.
fn annihilator_equivariance_residual(ex: &ExampleBundle, i: usize) -> Result<f64> {
    let mut rng = seeded(6, i);
    let q = sample_point(ex, &mut rng);
    let g = sample_group(ex, &mut rng);
    let m = ex.system.variational_codim();
    if m == 0 {
        return Ok(0.0);
    }
    let d = ex.system.bundle().dim();
    let here = ex.system.annihilator_basis(&q)?;
    let there = ex.system.annihilator_basis(&q.act(&g)?)?;
    // The lifted action is the identity on coordinates for these bundles,
    // so the pullback leaves coordinates unchanged.
    let mut stacked = DMatrix::zeros(2 * m, d);
    for (row, w) in here.iter().chain(there.iter()).enumerate() {
        stacked.row_mut(row).copy_from(&w.coords().transpose());
    }
    let sv = linalg::singular_values(&stacked);
    // Residual: the (m+1)-th singular value relative to the largest.
    Ok(if sv.len() > m && sv[0] > 0.0 {
        sv[m] / sv[0]
    } else {
        0.0
    })
}

/// The splitting `D = (V cap D) (+) (Hor cap D)` required by the reduced
/// equations: dimensions must add up and the stacked basis must have full
/// rank.
fn splitting_residual(ex: &ExampleBundle, i: usize) -> Result<f64> {
    let mut rng = seeded(7, i);
    let q = sample_point(ex, &mut rng);
    let sys = &ex.system;
    let dim_d = sys.bundle().dim() - sys.variational_codim();

    // V cap D through the constrained algebra directions.
    let vertical: Vec<DVector<f64>> = sys
        .vertical_constrained_algebra_basis(&q)?
        .iter()
        .map(|xi| q.infinitesimal_generator(xi).coords())
        .collect();

    // Hor cap D: horizontal graph vectors annihilated by every omega.
    let omega = sys.annihilator_basis(&q)?;
    let graph = ex.connection.graph_map(&q);
    let nb = sys.bundle().base_dim();
    let mut pairing = DMatrix::zeros(omega.len(), nb);
    for (a, w) in omega.iter().enumerate() {
        for j in 0..nb {
            let mut e = DVector::zeros(nb);
            e[j] = 1.0;
            let lift = crate::bundle::TangentVector::new(q.clone(), e.clone(), &graph * &e);
            pairing[(a, j)] = w.pair(&lift);
        }
    }
    let horizontal: Vec<DVector<f64>> = linalg::nullspace(&pairing)
        .into_iter()
        .map(|dr| {
            let fiber = &graph * &dr;
            let mut v = DVector::zeros(sys.bundle().dim());
            v.rows_mut(0, nb).copy_from(&dr);
            v.rows_mut(nb, fiber.len()).copy_from(&fiber);
            v
        })
        .collect();

    if vertical.len() + horizontal.len() != dim_d {
        return Ok(f64::INFINITY);
    }
    let all: Vec<DVector<f64>> = vertical.into_iter().chain(horizontal).collect();
    if all.is_empty() {
        return Ok(0.0);
    }
    let stacked = linalg::cols_from(&all, sys.bundle().dim());
    let sv = linalg::singular_values(&stacked);
    let smin = sv.last().copied().unwrap_or(0.0);
    // Residual: rank deficiency indicator of the direct sum.
    Ok(if smin > 1e-10 * sv[0] { 0.0 } else { f64::INFINITY })
}

fn initial_pair(ex: &ExampleBundle, opts: &VerifyOptions) -> (BundlePoint, BundlePoint) {
    opts.initial
        .clone()
        .unwrap_or_else(|| ex.default_initial.clone())
}

fn solved_trajectory(ex: &ExampleBundle, opts: &VerifyOptions) -> Result<DiscreteCurve> {
    let (q0, q1) = initial_pair(ex, opts);
    let n = opts.steps.unwrap_or(ex.default_steps);
    let (curve, _) = dla_trajectory(&ex.system, &q0, &q1, n, &opts.solver)?;
    Ok(curve)
}

/// Displace one interior point along the first distribution direction.
fn perturbed(ex: &ExampleBundle, curve: &DiscreteCurve, eps: f64) -> Result<DiscreteCurve> {
    if curve.len() < 3 {
        return Ok(curve.clone());
    }
    let k = curve.len() / 2;
    let dir = ex.system.distribution_basis(curve.point(k))?.remove(0);
    let mut points = curve.points().to_vec();
    points[k] = ex
        .system
        .bundle()
        .point_from_coords(&(curve.point(k).coords() + dir.coords() * eps));
    DiscreteCurve::new(points)
}

fn structural_checks(
    ex: &ExampleBundle,
    opts: &VerifyOptions,
    serial: bool,
) -> Result<Vec<CheckResult>> {
    let n = opts.samples;
    Ok(vec![
        CheckResult {
            name: "discrete_connection_equivariance",
            max_residual: sweep(n, serial, |i| connection_equivariance_residual(ex, i))?,
            tolerance: 1e-12,
        },
        CheckResult {
            name: "gradient_antisymmetry_on_generators",
            max_residual: sweep(n, serial, |i| gradient_antisymmetry_residual(ex, i))?,
            tolerance: 1e-8,
        },
        CheckResult {
            name: "pair_decomposition_roundtrip",
            max_residual: sweep(n, serial, |i| pair_decomposition_residual(ex, i))?,
            tolerance: 1e-12,
        },
        CheckResult {
            name: "horizontal_lift_section",
            max_residual: sweep(n, serial, |i| horizontal_lift_residual(ex, i))?,
            tolerance: 1e-12,
        },
        CheckResult {
            name: "data_invariance",
            max_residual: sweep(n, serial, |i| invariance_residual(ex, i))?,
            tolerance: 1e-10,
        },
        CheckResult {
            name: "annihilator_equivariance",
            max_residual: sweep(n, serial, |i| annihilator_equivariance_residual(ex, i))?,
            tolerance: 1e-10,
        },
        CheckResult {
            name: "connection_splitting",
            max_residual: sweep(n.min(25), serial, |i| splitting_residual(ex, i))?,
            tolerance: 1.0,
        },
        CheckResult {
            name: "step_equivariance",
            max_residual: sweep(20, serial, |i| {
                let mut rng = seeded(8, i);
                let (q0, q1) = (ex.sample_pair)(&mut rng);
                let g = sample_group(ex, &mut rng);
                let plain = dla_step(&ex.system, &q0, &q1, &opts.solver, None)?;
                let shifted = dla_step(&ex.system, &q0.act(&g)?, &q1.act(&g)?, &opts.solver, None)?;
                Ok(shifted
                    .q_next
                    .displacement_from(&plain.q_next.act(&g)?)
                    .norm())
            })?,
            tolerance: 1e-9,
        },
    ])
}

fn dynamic_checks(ex: &ExampleBundle, opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let mut checks = Vec::new();
    let red = reduced_system(ex);
    let (q0, q1) = initial_pair(ex, opts);
    let n = opts.steps.unwrap_or(ex.default_steps);

    let solved = solved_trajectory(ex, opts)?;
    let tested = match opts.perturbation {
        Some(eps) => perturbed(ex, &solved, eps)?,
        None => solved.clone(),
    };

    // Closed-form reference satisfies the equations.
    let reference = ex.reference_trajectory(&q0, &q1, n)?;
    checks.push(CheckResult {
        name: "reference_trajectory_residual",
        max_residual: max_trajectory_residual(&ex.system, &reference)?,
        tolerance: 1e-9,
    });

    // Projection of a solved trajectory satisfies the reduced equations.
    let projected = red.project_curve(&tested)?;
    checks.push(CheckResult {
        name: "projected_reduced_residual",
        max_residual: red.max_curve_residual(&projected)?,
        tolerance: 1e-9,
    });

    // Reconstructing the projection reproduces the trajectory pointwise.
    let lifted = reconstruct(
        &ex.system,
        &ex.discrete_connection,
        &projected,
        tested.point(0),
        Some(tested.point(1)),
        1e-9,
    )?;
    let mut roundtrip: f64 = 0.0;
    for k in 0..tested.len() {
        roundtrip = roundtrip.max(lifted.point(k).displacement_from(tested.point(k)).norm());
    }
    checks.push(CheckResult {
        name: "roundtrip_reconstruction",
        max_residual: roundtrip,
        tolerance: 1e-10,
    });

    // Reduced-step solutions lift to trajectories.
    let theta0 = red.project_curve(&solved)?.states[0].fiber_step.clone();
    let reduced_curve = red.trajectory(q0.project(), &theta0, q1.project(), n, &opts.solver)?;
    let relifted = reconstruct(
        &ex.system,
        &ex.discrete_connection,
        &reduced_curve,
        &q0,
        Some(&q1),
        1e-9,
    )?;
    checks.push(CheckResult {
        name: "reduced_solution_lifts_to_trajectory",
        max_residual: max_trajectory_residual(&ex.system, &relifted)?,
        tolerance: 1e-9,
    });

    // Momentum evolution equation along the (possibly perturbed)
    // trajectory, evaluated on the constrained vertical directions.
    let mut momentum_worst: f64 = 0.0;
    for k in 1..tested.len().saturating_sub(1) {
        let basis = ex
            .system
            .vertical_constrained_algebra_basis(tested.point(k))?;
        for zeta in basis {
            let value = zeta.clone();
            let section = move |_: &BundlePoint| value.clone();
            momentum_worst = momentum_worst.max(
                momentum_evolution_residual(
                    &ex.system,
                    tested.point(k - 1),
                    tested.point(k),
                    tested.point(k + 1),
                    &section,
                )?
                .abs(),
            );
        }
    }
    checks.push(CheckResult {
        name: "momentum_evolution",
        max_residual: momentum_worst,
        tolerance: 1e-9,
    });

    // Horizontal symmetries conserve the momentum map itself.
    if matches!(ex.mode, ReductionMode::TwoStage(_)) {
        let first = momentum_map(&ex.system, tested.point(0), tested.point(1))?;
        let mut drift: f64 = 0.0;
        for k in 1..tested.len() - 1 {
            let here = momentum_map(&ex.system, tested.point(k), tested.point(k + 1))?;
            drift = drift.max((here.full().coords() - first.full().coords()).amax());
        }
        checks.push(CheckResult {
            name: "momentum_conservation",
            max_residual: drift,
            tolerance: 1e-10,
        });
    }

    Ok(checks)
}

/// Largest mixed-curvature and reduced-force magnitudes over random
/// windows; meaningful for configurations where both vanish.
fn curvature_zero_checks(
    ex: &ExampleBundle,
    samples: usize,
    serial: bool,
) -> Result<Vec<CheckResult>> {
    let bm = sweep(samples, serial, |i| {
        let mut rng = seeded(9, i);
        let q0 = sample_point(ex, &mut rng);
        let q1 = sample_point(ex, &mut rng);
        let nb = ex.system.bundle().base_dim();
        let dr0 = DVector::from_fn(nb, |_, _| rng.random_range(-1.0..1.0));
        let dr1 = DVector::from_fn(nb, |_, _| rng.random_range(-1.0..1.0));
        let v0 = ex.connection.horizontal_lift(&q0, &dr0);
        let v1 = ex.connection.horizontal_lift(&q1, &dr1);
        Ok(
            mixed_curvature(&ex.connection, &ex.discrete_connection, &q0, &q1, &v0, &v1)
                .coords()
                .norm(),
        )
    })?;
    let red = reduced_system(ex);
    let force = sweep(samples, serial, |i| {
        let mut rng = seeded(10, i);
        let q0 = sample_point(ex, &mut rng);
        let q1 = sample_point(ex, &mut rng);
        let theta = sample_group(ex, &mut rng);
        let (fm, fp) = red.forces(q0.project(), &theta, q1.project())?;
        Ok(fm.amax().max(fp.amax()))
    })?;
    Ok(vec![
        CheckResult {
            name: "mixed_curvature_zero",
            max_residual: bm,
            tolerance: 1e-10,
        },
        CheckResult {
            name: "reduced_force_zero",
            max_residual: force,
            tolerance: 1e-10,
        },
    ])
}

/// Compare the finite-difference force pipeline of the planar particle
/// against the hand formula
/// `m (1 - b)(w + b (r1^2 - r0^2)/2) (r1 dr1 - r0 dr0)`.
fn particle_force_formula_check(
    ex: &ExampleBundle,
    samples: usize,
    serial: bool,
) -> Result<CheckResult> {
    let m = ex.param("m").unwrap_or(1.0);
    let b = ex.param("b").unwrap_or(0.0);
    // A connection without analytic derivatives forces the
    // finite-difference path through the whole pipeline.
    let bundle = ex.system.bundle().clone();
    let group = bundle.group();
    let fd_dconn = Arc::new(crate::connection::AffineDiscreteConnection::new(
        bundle,
        move |r0: &DVector<f64>, r1: &DVector<f64>| {
            GroupElement::new(
                group,
                DVector::from_row_slice(&[-b * (r1[0] * r1[0] - r0[0] * r0[0]) / 2.0]),
            )
        },
    ));
    let red = ReducedSystem::new(
        Arc::clone(&ex.system),
        Arc::clone(&ex.connection),
        fd_dconn,
    );
    let worst = sweep(samples, serial, |i| {
        let mut rng = seeded(11, i);
        let r0 = DVector::from_row_slice(&[rng.random_range(-0.8..0.8)]);
        let r1 = DVector::from_row_slice(&[rng.random_range(-0.8..0.8)]);
        let w = rng.random_range(-0.8..0.8);
        let theta = GroupElement::new(red.system().bundle().group(), DVector::from_row_slice(&[w]));
        let (fm, fp) = red.forces(&r0, &theta, &r1)?;
        let factor = m * (1.0 - b) * (w + b * (r1[0] * r1[0] - r0[0] * r0[0]) / 2.0);
        let gap0 = (fm[0] - (-factor * r0[0])).abs();
        let gap1 = (fp[0] - factor * r1[0]).abs();
        Ok(gap0.max(gap1))
    })?;
    Ok(CheckResult {
        name: "reduced_force_formula",
        max_residual: worst,
        tolerance: 1e-8,
    })
}

/// Reduce-then-reconstruct agrees with the unreduced trajectory for every
/// connection slope.
fn b_independence_check(ex: &ExampleBundle, opts: &VerifyOptions) -> Result<CheckResult> {
    let m = ex.param("m").unwrap_or(1.0);
    let (q0, q1) = initial_pair(ex, opts);
    let n = opts.steps.unwrap_or(ex.default_steps);
    let (unreduced, _) = dla_trajectory(&ex.system, &q0, &q1, n, &opts.solver)?;
    let mut worst: f64 = 0.0;
    for &b in &[0.0, 0.5, 1.0] {
        let exb = make_particle_2d(m, b)?;
        let red = reduced_system(&exb);
        let theta0 = red
            .project_curve(&unreduced)?
            .states[0]
            .fiber_step
            .clone();
        let curve = red.trajectory(q0.project(), &theta0, q1.project(), n, &opts.solver)?;
        let lifted = reconstruct(
            &exb.system,
            &exb.discrete_connection,
            &curve,
            &q0,
            Some(&q1),
            1e-9,
        )?;
        for k in 0..unreduced.len() {
            worst = worst.max(
                lifted
                    .point(k)
                    .displacement_from(unreduced.point(k))
                    .norm(),
            );
        }
    }
    Ok(CheckResult {
        name: "b_independence",
        max_residual: worst,
        tolerance: 1e-8,
    })
}

fn run(ex: &ExampleBundle, opts: &VerifyOptions, serial: bool) -> Result<Report> {
    let mut checks = structural_checks(ex, opts, serial)?;
    checks.extend(dynamic_checks(ex, opts)?);
    match ex.name {
        "particle2d" => {
            if ex.param("b") == Some(1.0) {
                checks.extend(curvature_zero_checks(ex, opts.samples, serial)?);
            }
            checks.push(particle_force_formula_check(ex, opts.samples, serial)?);
            checks.push(b_independence_check(ex, opts)?);
        }
        "disk" => {
            checks.extend(curvature_zero_checks(ex, opts.samples, serial)?);
        }
        _ => {}
    }
    Ok(Report {
        example: ex.name.to_string(),
        checks,
    })
}

/// Run the invariant suite for one example.
pub fn verify_example(ex: &ExampleBundle, opts: &VerifyOptions) -> Result<Report> {
    run(ex, opts, false)
}

/// Sequential variant of [`verify_example`], for benchmarking the
/// parallel sweep against a plain loop.
pub fn verify_example_serial(ex: &ExampleBundle, opts: &VerifyOptions) -> Result<Report> {
    run(ex, opts, true)
}

/// The structural equivariance sweep alone, exposed for the benchmark
/// suite: max residual over `samples` random draws.
pub fn equivariance_sweep(ex: &ExampleBundle, samples: usize) -> Result<f64> {
    sweep(samples, false, |i| connection_equivariance_residual(ex, i))
}

/// Sequential variant of [`equivariance_sweep`].
pub fn equivariance_sweep_serial(ex: &ExampleBundle, samples: usize) -> Result<f64> {
    sweep(samples, true, |i| connection_equivariance_residual(ex, i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples::{make_particle_3d, make_rolling_disk};

    fn quick_options() -> VerifyOptions {
        VerifyOptions {
            samples: 25,
            steps: Some(30),
            ..Default::default()
        }
    }

    #[test]
    fn particle_report_passes() {
        let ex = make_particle_2d(1.0, 0.5).unwrap();
        let report = verify_example(&ex, &quick_options()).unwrap();
        for c in &report.checks {
            assert!(c.passed(), "{} failed: {:e}", c.name, c.max_residual);
        }
    }

    #[test]
    fn chaplygin_particle_report_passes() {
        let ex = make_particle_2d(1.0, 1.0).unwrap();
        let report = verify_example(&ex, &quick_options()).unwrap();
        for c in &report.checks {
            assert!(c.passed(), "{} failed: {:e}", c.name, c.max_residual);
        }
        assert!(report.checks.iter().any(|c| c.name == "mixed_curvature_zero"));
    }

    #[test]
    fn disk_report_passes() {
        let ex = make_rolling_disk(1.0, 1.0, 1.0, 1.0).unwrap();
        let mut opts = quick_options();
        opts.steps = Some(40);
        let report = verify_example(&ex, &opts).unwrap();
        for c in &report.checks {
            assert!(c.passed(), "{} failed: {:e}", c.name, c.max_residual);
        }
    }

    #[test]
    fn spatial_report_passes() {
        let ex = make_particle_3d(1.0, 0.02).unwrap();
        let report = verify_example(&ex, &quick_options()).unwrap();
        for c in &report.checks {
            assert!(c.passed(), "{} failed: {:e}", c.name, c.max_residual);
        }
        assert!(report
            .checks
            .iter()
            .any(|c| c.name == "momentum_conservation"));
    }

    #[test]
    fn perturbation_makes_the_report_fail() {
        let ex = make_rolling_disk(1.0, 1.0, 1.0, 1.0).unwrap();
        let mut opts = quick_options();
        opts.steps = Some(40);
        opts.perturbation = Some(1e-3);
        let report = verify_example(&ex, &opts).unwrap();
        assert!(!report.passed());
        let momentum = report
            .checks
            .iter()
            .find(|c| c.name == "momentum_evolution")
            .unwrap();
        assert!(momentum.max_residual > 1e-5);
    }

    #[test]
    fn parallel_and_serial_reports_agree() {
        let ex = make_particle_2d(1.0, 0.5).unwrap();
        let opts = VerifyOptions {
            samples: 10,
            steps: Some(10),
            ..Default::default()
        };
        let a = verify_example(&ex, &opts).unwrap();
        let b = verify_example_serial(&ex, &opts).unwrap();
        assert_eq!(a.checks.len(), b.checks.len());
        for (x, y) in a.checks.iter().zip(&b.checks) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.max_residual, y.max_residual);
        }
    }
}
