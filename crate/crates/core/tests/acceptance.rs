//! Acceptance suite: closed-form-oracle and property-based checks for the
//! three worked systems, one test per criterion. Run with
//! `cargo test --test acceptance -- --nocapture` to see the per-criterion
//! pass/fail lines.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::prelude::*;
use rand::rngs::StdRng;

use nonholorec::bundle::BundlePoint;
use nonholorec::connection::mixed_curvature;
use nonholorec::examples::{
    make_particle_2d, make_particle_3d, make_rolling_disk, particle_3d_two_stage,
    particle_base_oracle, ExampleBundle,
};
use nonholorec::group::{wrap_diff, GroupElement};
use nonholorec::reconstruction::reconstruct;
use nonholorec::reduction::{momentum_evolution_residual, momentum_map, ReducedSystem};
use nonholorec::solver::{dla_step, dla_trajectory, max_trajectory_residual, SolverConfig};
use nonholorec::system::{DiscreteCurve, DiscreteSystem};
use nonholorec::verify::{verify_example, VerifyOptions};

fn report(criterion: &str, ok: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} failed: {detail}");
}

fn reduced(ex: &ExampleBundle) -> ReducedSystem {
    ReducedSystem::new(
        Arc::clone(&ex.system),
        Arc::clone(&ex.connection),
        Arc::clone(&ex.discrete_connection),
    )
}

/// Step a trajectory while recording the worst iteration count and
/// residual.
fn instrumented_trajectory(
    sys: &DiscreteSystem,
    q0: &BundlePoint,
    q1: &BundlePoint,
    n: usize,
    cfg: &SolverConfig,
) -> (DiscreteCurve, usize, f64) {
    let mut points = vec![q0.clone(), q1.clone()];
    let mut max_iters = 0;
    let mut max_resid: f64 = 0.0;
    for k in 2..=n {
        let step = dla_step(sys, &points[k - 2], &points[k - 1], cfg, None).unwrap();
        max_iters = max_iters.max(step.iterations);
        max_resid = max_resid.max(step.residual_norm);
        points.push(step.q_next);
    }
    (DiscreteCurve::new(points).unwrap(), max_iters, max_resid)
}

#[test]
fn criterion_1_particle_trajectory_against_oracle() {
    let start = Instant::now();
    let ex = make_particle_2d(1.0, 0.5).unwrap();
    let (q0, q1) = ex.default_initial.clone();
    let cfg = SolverConfig::default();
    let (curve, _) = dla_trajectory(&ex.system, &q0, &q1, 100, &cfg).unwrap();
    let oracle = particle_base_oracle(0.0, 0.1, 100);

    let mut x_err: f64 = 0.0;
    let mut y_err: f64 = 0.0;
    for (k, q) in curve.iter().enumerate() {
        let x = q.project()[0];
        let y = q.fiber().coords()[0];
        x_err = x_err.max((x - oracle[k]).abs());
        y_err = y_err.max((y - (x * x - 0.0) / 2.0).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "1 (particle2d closed form)",
        x_err < 1e-9 && y_err < 1e-9 && elapsed < 1.0,
        &format!("max x err {x_err:.2e}, max y err {y_err:.2e}, {elapsed:.2} s"),
    );
}

#[test]
fn criterion_2_reduction_is_independent_of_the_connection_slope() {
    let ex = make_particle_2d(1.0, 0.5).unwrap();
    let (q0, q1) = ex.default_initial.clone();
    let cfg = SolverConfig::default();
    let (unreduced, _) = dla_trajectory(&ex.system, &q0, &q1, 100, &cfg).unwrap();

    let mut worst: f64 = 0.0;
    for &b in &[0.0, 0.5, 1.0] {
        let exb = make_particle_2d(1.0, b).unwrap();
        let red = reduced(&exb);
        let theta0 = red.project_curve(&unreduced).unwrap().states[0]
            .fiber_step
            .clone();
        let curve = red
            .trajectory(q0.project(), &theta0, q1.project(), 100, &cfg)
            .unwrap();
        let lifted = reconstruct(
            &exb.system,
            &exb.discrete_connection,
            &curve,
            &q0,
            Some(&q1),
            1e-9,
        )
        .unwrap();
        for k in 0..unreduced.len() {
            worst = worst.max(
                lifted
                    .point(k)
                    .displacement_from(unreduced.point(k))
                    .norm(),
            );
        }
    }
    report(
        "2 (b-independence)",
        worst < 1e-8,
        &format!("max pointwise gap {worst:.2e} over b in {{0, 0.5, 1}}"),
    );
}

#[test]
fn criterion_3_mixed_curvature_and_reduced_forces() {
    let mut zero_worst: f64 = 0.0;
    for ex in [
        make_particle_2d(1.0, 1.0).unwrap(),
        make_rolling_disk(1.0, 1.0, 1.0, 1.0).unwrap(),
    ] {
        let red = reduced(&ex);
        let bundle = ex.system.bundle();
        let mut rng = StdRng::seed_from_u64(0xacce);
        for _ in 0..100 {
            let q0 =
                bundle.point_from_coords(&DVector::from_fn(bundle.dim(), |_, _| {
                    rng.random_range(-1.0..1.0)
                }));
            let q1 =
                bundle.point_from_coords(&DVector::from_fn(bundle.dim(), |_, _| {
                    rng.random_range(-1.0..1.0)
                }));
            let dr0 = DVector::from_fn(bundle.base_dim(), |_, _| rng.random_range(-1.0..1.0));
            let dr1 = DVector::from_fn(bundle.base_dim(), |_, _| rng.random_range(-1.0..1.0));
            let v0 = ex.connection.horizontal_lift(&q0, &dr0);
            let v1 = ex.connection.horizontal_lift(&q1, &dr1);
            let bm = mixed_curvature(&ex.connection, &ex.discrete_connection, &q0, &q1, &v0, &v1);
            zero_worst = zero_worst.max(bm.coords().norm());

            let theta = GroupElement::new(
                bundle.group(),
                DVector::from_fn(bundle.fiber_dim(), |_, _| rng.random_range(-1.0..1.0)),
            );
            let (fm, fp) = red.forces(q0.project(), &theta, q1.project()).unwrap();
            zero_worst = zero_worst.max(fm.amax()).max(fp.amax());
        }
    }

    // The forced configuration reproduces the hand formula through the
    // finite-difference pipeline: strip the analytic derivatives.
    let b = 0.0;
    let ex = make_particle_2d(1.0, b).unwrap();
    let bundle = ex.system.bundle().clone();
    let group = bundle.group();
    let fd_dconn = Arc::new(nonholorec::connection::AffineDiscreteConnection::new(
        bundle,
        move |r0: &DVector<f64>, r1: &DVector<f64>| {
            GroupElement::new(
                group,
                DVector::from_row_slice(&[-b * (r1[0] * r1[0] - r0[0] * r0[0]) / 2.0]),
            )
        },
    ));
    let red_fd = ReducedSystem::new(
        Arc::clone(&ex.system),
        Arc::clone(&ex.connection),
        fd_dconn,
    );
    let mut formula_worst: f64 = 0.0;
    let mut rng = StdRng::seed_from_u64(0xacc3);
    for _ in 0..100 {
        let r0 = DVector::from_row_slice(&[rng.random_range(-0.8..0.8)]);
        let r1 = DVector::from_row_slice(&[rng.random_range(-0.8..0.8)]);
        let w: f64 = rng.random_range(-0.8..0.8);
        let theta = GroupElement::new(
            ex.system.bundle().group(),
            DVector::from_row_slice(&[w]),
        );
        let (fm, fp) = red_fd.forces(&r0, &theta, &r1).unwrap();
        let factor = 1.0 * (1.0 - b) * (w + b * (r1[0] * r1[0] - r0[0] * r0[0]) / 2.0);
        formula_worst = formula_worst
            .max((fm[0] + factor * r0[0]).abs())
            .max((fp[0] - factor * r1[0]).abs());
    }

    report(
        "3 (mixed curvature and reduced forces)",
        zero_worst < 1e-10 && formula_worst < 1e-8,
        &format!("max |B_m|,|F| {zero_worst:.2e} (flat cases), formula gap {formula_worst:.2e}"),
    );
}

#[test]
fn criterion_4_rolling_disk_closed_forms() {
    let start = Instant::now();
    let ex = make_rolling_disk(1.0, 1.0, 1.0, 1.0).unwrap();
    let (q0, q1) = ex.default_initial.clone();
    let n = 1000;
    // The reduced pipeline is analytic for the disk, so the stepper can be
    // driven near machine precision; the spin-step drift accumulates into
    // the reconstructed theta over 1000 steps.
    let cfg = SolverConfig::with_tolerance(1e-14);
    let red = reduced(&ex);

    let theta0 = {
        let w = ex.discrete_connection.form(&q0, &q1);
        w.conjugate(&q0.fiber().inverse())
    };
    let curve = red
        .trajectory(q0.project(), &theta0, q1.project(), n, &cfg)
        .unwrap();

    // The base evolves linearly, the spin step is constant.
    let (r0, r1) = (q0.project()[0], q1.project()[0]);
    let dphi = wrap_diff(r1, r0);
    let mut r_err: f64 = 0.0;
    let mut spin_err: f64 = 0.0;
    for (k, state) in curve.states.iter().enumerate() {
        r_err = r_err.max(wrap_diff(state.base[0], r0 + k as f64 * dphi).abs());
        spin_err = spin_err.max(
            wrap_diff(
                state.fiber_step.coords()[2],
                theta0.coords()[2],
            )
            .abs(),
        );
    }
    r_err = r_err.max(wrap_diff(curve.terminal_base[0], r0 + n as f64 * dphi).abs());

    // Reconstruction matches the sine-quotient closed forms.
    let lifted = reconstruct(
        &ex.system,
        &ex.discrete_connection,
        &curve,
        &q0,
        Some(&q1),
        1e-9,
    )
    .unwrap();
    let reference = ex.reference_trajectory(&q0, &q1, n).unwrap();
    let mut xy_err: f64 = 0.0;
    let mut th_err: f64 = 0.0;
    for k in 0..lifted.len() {
        let a = lifted.point(k);
        let b = reference.point(k);
        xy_err = xy_err
            .max((a.fiber().coords()[0] - b.fiber().coords()[0]).abs())
            .max((a.fiber().coords()[1] - b.fiber().coords()[1]).abs());
        th_err = th_err.max(wrap_diff(a.fiber().coords()[2], b.fiber().coords()[2]).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "4 (rolling disk closed forms)",
        r_err < 1e-10 && spin_err < 1e-10 && xy_err < 1e-8 && th_err < 1e-10 && elapsed < 2.0,
        &format!(
            "r err {r_err:.2e}, spin err {spin_err:.2e}, xy err {xy_err:.2e}, theta err {th_err:.2e}, {elapsed:.2} s"
        ),
    );
}

#[test]
fn criterion_5_horizontal_symmetry_particle() {
    let (m, dz) = (1.0, 0.02);
    let mu_z = m * dz;
    let ex = make_particle_3d(m, mu_z).unwrap();
    let (q0, q1) = ex.default_initial.clone();
    let cfg = SolverConfig::default();
    let n = 100;

    let (curve, _) = dla_trajectory(&ex.system, &q0, &q1, n, &cfg).unwrap();
    let first = momentum_map(&ex.system, curve.point(0), curve.point(1)).unwrap();
    let mut j_drift: f64 = 0.0;
    let mut z_err: f64 = 0.0;
    let z0 = q0.fiber().coords()[0];
    for k in 0..curve.len() {
        if k + 1 < curve.len() {
            let j = momentum_map(&ex.system, curve.point(k), curve.point(k + 1)).unwrap();
            j_drift = j_drift.max((j.full().coords() - first.full().coords()).amax());
        }
        z_err = z_err.max((curve.point(k).fiber().coords()[0] - (z0 + k as f64 * dz)).abs());
    }

    let (two_stage, _) = particle_3d_two_stage(m, mu_z, &q0, &q1, n, &cfg).unwrap();
    let oracle = particle_base_oracle(q0.project()[0], q1.project()[0], n);
    let mut xy_err: f64 = 0.0;
    for (k, q) in two_stage.iter().enumerate() {
        let r = oracle[k];
        xy_err = xy_err
            .max((q.project()[0] - r).abs())
            .max((q.project()[1] - ((r * r - oracle[0] * oracle[0]) / 2.0 + q0.project()[1])).abs());
    }
    report(
        "5 (horizontal symmetry particle)",
        j_drift < 1e-10 && z_err < 1e-12 && xy_err < 1e-9,
        &format!("J_d drift {j_drift:.2e}, z err {z_err:.2e}, two-stage xy err {xy_err:.2e}"),
    );
}

#[test]
fn criterion_6_reduction_equivalence_suite() {
    let mut detail = String::new();
    let mut ok = true;
    for ex in [
        make_particle_2d(1.0, 0.5).unwrap(),
        make_rolling_disk(1.0, 1.0, 1.0, 1.0).unwrap(),
        make_particle_3d(1.0, 0.02).unwrap(),
    ] {
        let cfg = SolverConfig::default();
        let (q0, q1) = ex.default_initial.clone();
        let n = ex.default_steps.min(200);
        let red = reduced(&ex);
        let (curve, _) = dla_trajectory(&ex.system, &q0, &q1, n, &cfg).unwrap();
        let projected = red.project_curve(&curve).unwrap();
        let project_resid = red.max_curve_residual(&projected).unwrap();

        let theta0 = projected.states[0].fiber_step.clone();
        let solved = red
            .trajectory(q0.project(), &theta0, q1.project(), n, &cfg)
            .unwrap();
        let lifted = reconstruct(
            &ex.system,
            &ex.discrete_connection,
            &solved,
            &q0,
            Some(&q1),
            1e-9,
        )
        .unwrap();
        let lift_resid = max_trajectory_residual(&ex.system, &lifted).unwrap();

        ok &= project_resid < 1e-9 && lift_resid < 1e-9;
        detail.push_str(&format!(
            "{}: project {project_resid:.1e}, lift {lift_resid:.1e}; ",
            ex.name
        ));
    }
    report("6 (reduction equivalence)", ok, detail.trim_end());
}

#[test]
fn criterion_7_momentum_evolution_on_the_disk() {
    let ex = make_rolling_disk(1.0, 1.0, 1.0, 1.0).unwrap();
    let (q0, q1) = ex.default_initial.clone();
    let cfg = SolverConfig::default();
    let n = 200;
    let (curve, _) = dla_trajectory(&ex.system, &q0, &q1, n, &cfg).unwrap();

    // The constrained section of the disk: the spin-and-roll direction.
    let section = |q: &BundlePoint| {
        let phi = q.project()[0];
        nonholorec::group::AlgebraElement::from_slice(&[phi.cos(), phi.sin(), 1.0])
    };

    let mut on_traj: f64 = 0.0;
    for k in 1..curve.len() - 1 {
        on_traj = on_traj.max(
            momentum_evolution_residual(
                &ex.system,
                curve.point(k - 1),
                curve.point(k),
                curve.point(k + 1),
                &section,
            )
            .unwrap()
            .abs(),
        );
    }

    // Displacing any interior point along a constrained direction moves
    // the residual above threshold.
    let mut weakest = f64::INFINITY;
    for k in 1..curve.len() - 1 {
        let dir = ex.system.distribution_basis(curve.point(k)).unwrap().remove(1);
        let moved = ex
            .system
            .bundle()
            .point_from_coords(&(curve.point(k).coords() + dir.coords() * 1e-3));
        let mut local: f64 = 0.0;
        for j in k.saturating_sub(1).max(1)..(k + 2).min(curve.len() - 1) {
            let a = if j - 1 == k { &moved } else { curve.point(j - 1) };
            let b = if j == k { &moved } else { curve.point(j) };
            let c = if j + 1 == k { &moved } else { curve.point(j + 1) };
            local = local.max(
                momentum_evolution_residual(&ex.system, a, b, c, &section)
                    .unwrap()
                    .abs(),
            );
        }
        weakest = weakest.min(local);
    }
    report(
        "7 (momentum evolution equivalence)",
        on_traj < 1e-9 && weakest > 1e-5,
        &format!("on-trajectory residual {on_traj:.2e}, weakest perturbed response {weakest:.2e}"),
    );
}

#[test]
fn criterion_8_structural_property_suite() {
    let mut ok = true;
    let mut detail = String::new();
    for ex in [
        make_particle_2d(1.0, 0.5).unwrap(),
        make_rolling_disk(1.0, 1.0, 1.0, 1.0).unwrap(),
        make_particle_3d(1.0, 0.02).unwrap(),
    ] {
        let opts = VerifyOptions {
            samples: 100,
            steps: Some(20),
            ..Default::default()
        };
        let reportd = verify_example(&ex, &opts).unwrap();
        for name in [
            "discrete_connection_equivariance",
            "gradient_antisymmetry_on_generators",
            "pair_decomposition_roundtrip",
            "horizontal_lift_section",
            "step_equivariance",
        ] {
            let check = reportd
                .checks
                .iter()
                .find(|c| c.name == name)
                .unwrap_or_else(|| panic!("missing check {name}"));
            ok &= check.passed();
            detail.push_str(&format!(
                "{}/{}: {:.1e}; ",
                ex.name, check.name, check.max_residual
            ));
        }
    }
    report("8 (structural properties)", ok, detail.trim_end());
}

#[test]
fn criterion_9_newton_performance() {
    let start = Instant::now();
    let cfg = SolverConfig::default();
    let mut max_iters = 0usize;
    let mut max_resid: f64 = 0.0;

    // Criterion 1/2/5 unreduced trajectories.
    let p2 = make_particle_2d(1.0, 0.5).unwrap();
    let (q0, q1) = p2.default_initial.clone();
    let (_, it, re) = instrumented_trajectory(&p2.system, &q0, &q1, 100, &cfg);
    max_iters = max_iters.max(it);
    max_resid = max_resid.max(re);

    let p3 = make_particle_3d(1.0, 0.02).unwrap();
    let (q0, q1) = p3.default_initial.clone();
    let (_, it, re) = instrumented_trajectory(&p3.system, &q0, &q1, 100, &cfg);
    max_iters = max_iters.max(it);
    max_resid = max_resid.max(re);

    // Criterion 2 reduced trajectories for the three slopes.
    for &b in &[0.0, 0.5, 1.0] {
        let exb = make_particle_2d(1.0, b).unwrap();
        let red = reduced(&exb);
        let (q0, q1) = exb.default_initial.clone();
        let theta0 = {
            let w = exb.discrete_connection.form(&q0, &q1);
            w.conjugate(&q0.fiber().inverse())
        };
        let mut r_prev = q0.project().clone();
        let mut th_prev = theta0;
        let mut r_curr = q1.project().clone();
        for _ in 1..100 {
            let step = red.step(&r_prev, &th_prev, &r_curr, &cfg, None).unwrap();
            max_iters = max_iters.max(step.iterations);
            max_resid = max_resid.max(step.residual_norm);
            r_prev = r_curr;
            th_prev = step.fiber_step;
            r_curr = step.base_next;
        }
    }

    // Criterion 4 reduced disk trajectory.
    let disk = make_rolling_disk(1.0, 1.0, 1.0, 1.0).unwrap();
    let red = reduced(&disk);
    let (q0, q1) = disk.default_initial.clone();
    let theta0 = {
        let w = disk.discrete_connection.form(&q0, &q1);
        w.conjugate(&q0.fiber().inverse())
    };
    let mut r_prev = q0.project().clone();
    let mut th_prev = theta0;
    let mut r_curr = q1.project().clone();
    for _ in 1..1000 {
        let step = red.step(&r_prev, &th_prev, &r_curr, &cfg, None).unwrap();
        max_iters = max_iters.max(step.iterations);
        max_resid = max_resid.max(step.residual_norm);
        r_prev = r_curr;
        th_prev = step.fiber_step;
        r_curr = step.base_next;
    }

    // Criterion 5 second-stage base trajectory.
    let stage2 = make_particle_2d(1.0, 1.0).unwrap();
    let second = nonholorec::reduction::build_chaplygin(
        Arc::clone(&stage2.system),
        Arc::clone(&stage2.discrete_connection),
    )
    .unwrap();
    let mut s_prev = DVector::from_row_slice(&[0.0]);
    let mut s_curr = DVector::from_row_slice(&[0.1]);
    for _ in 1..100 {
        let step = second.base.step(&s_prev, &s_curr, &cfg).unwrap();
        max_iters = max_iters.max(step.iterations);
        max_resid = max_resid.max(step.residual_norm);
        s_prev = s_curr;
        s_curr = step.base_next;
    }

    let elapsed = start.elapsed().as_secs_f64();
    report(
        "9 (Newton performance)",
        max_iters <= 10 && max_resid <= 1e-12 && elapsed < 30.0,
        &format!("max iterations {max_iters}, max residual {max_resid:.2e}, {elapsed:.2} s"),
    );
}
