//! Implicit Newton stepping of the discrete Lagrange-D'Alembert equations.
//!
//! One step solves, for the unknowns `(q_next, lambda)`,
//!
//! ```text
//! D1 L_d(q_curr, q_next) + D2 L_d(q_prev, q_curr)
//!     + f^-(q_curr, q_next) + f^+(q_prev, q_curr) = sum_a lambda_a omega^a(q_curr)
//! chi(q_curr, q_next) = 0
//! ```
//!
//! a square system of `dim Q + M` equations since the library requires as
//! many constraint levels as multipliers. Solutions exist and are unique
//! for sufficiently closely spaced initial data; the solver surfaces
//! non-convergence rather than attempting globalization, applying only a
//! single damped line search when a full Newton step increases the
//! residual.

use nalgebra::{DMatrix, DVector};

use crate::bundle::BundlePoint;
use crate::linalg;
use crate::system::{DiscreteCurve, DiscreteSystem};
use crate::{Error, Result};

/// Condition-estimate threshold above which the Newton matrix counts as
/// singular.
pub const SINGULAR_CONDITION: f64 = 1e14;

/// Newton solver configuration.
#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    /// Convergence threshold on the residual 2-norm.
    pub residual_tolerance: f64,
    /// Iteration cap per step.
    pub max_iterations: usize,
    /// Scale of the forward-difference Jacobian step, `h = s (1 + |x|)`.
    pub jacobian_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            residual_tolerance: 1e-12,
            max_iterations: 50,
            jacobian_step: 1e-7,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            residual_tolerance: tol,
            ..Self::default()
        }
    }
}

/// Outcome of one implicit step.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub q_next: BundlePoint,
    /// Constraint multipliers `lambda_a` at the current point.
    pub multipliers: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Newton iteration on a square residual, with forward-difference Jacobian
/// and a damped fallback (up to 8 halvings) when the full step grows the
/// residual. After reaching tolerance one extra step is taken when it
/// improves the residual further.
pub(crate) fn newton_solve<F>(
    residual: F,
    x0: DVector<f64>,
    config: &SolverConfig,
) -> Result<(DVector<f64>, usize, f64)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut x = x0;
    let mut r = residual(&x)?;
    if r.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: r.len(),
        });
    }
    let mut rn = r.norm();
    let mut iterations = 0;
    let mut converged = rn <= config.residual_tolerance;

    while iterations < config.max_iterations {
        if converged && iterations > 0 {
            break;
        }
        iterations += 1;
        let jac = fd_jacobian(&residual, &x, &r, config.jacobian_step)?;
        let (dx, condition) = linalg::solve_with_condition(&jac, &(-&r)).ok_or(
            Error::SingularJacobian {
                condition: f64::INFINITY,
                step: None,
            },
        )?;
        if !condition.is_finite() || condition > SINGULAR_CONDITION {
            return Err(Error::SingularJacobian {
                condition,
                step: None,
            });
        }

        let mut alpha = 1.0;
        let mut best = None;
        for _ in 0..=8 {
            let xn = &x + &dx * alpha;
            let rnew = residual(&xn)?;
            let rnn = rnew.norm();
            if rnn <= rn || alpha <= 1.0 / 256.0 {
                best = Some((xn, rnew, rnn));
                break;
            }
            alpha /= 2.0;
        }
        let (xn, rnew, rnn) = best.expect("line search always yields a candidate");
        if converged && rnn >= rn {
            // The polish attempt did not help; keep the converged iterate.
            iterations -= 1;
            break;
        }
        x = xn;
        r = rnew;
        rn = rnn;
        if rn <= config.residual_tolerance {
            if converged {
                break;
            }
            converged = true;
        }
    }

    if rn <= config.residual_tolerance {
        Ok((x, iterations, rn))
    } else {
        Err(Error::NonConvergence {
            iterations,
            residual: rn,
            step: None,
        })
    }
}

fn fd_jacobian<F>(
    residual: &F,
    x: &DVector<f64>,
    r0: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for i in 0..n {
        let h = step * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let ri = residual(&xp)?;
        jac.column_mut(i).copy_from(&((ri - r0) / h));
        xp[i] = x[i];
    }
    Ok(jac)
}

/// Assemble the force-balance covector at `q_curr` for the triple
/// `(q_prev, q_curr, q_next)`.
fn force_balance(
    sys: &DiscreteSystem,
    q_prev: &BundlePoint,
    q_curr: &BundlePoint,
    q_next: &BundlePoint,
) -> Result<DVector<f64>> {
    let (d1, _) = sys.gradients(q_curr, q_next)?;
    let (_, d2_prev) = sys.gradients(q_prev, q_curr)?;
    let mut balance = d1 + d2_prev;
    if let Some(fm) = sys.force_minus(q_curr, q_next) {
        balance += fm;
    }
    if let Some(fp) = sys.force_plus(q_prev, q_curr) {
        balance += fp;
    }
    Ok(balance)
}

/// One implicit Lagrange-D'Alembert step. The pair `(q_prev, q_curr)` need
/// not satisfy the kinematic constraints; the solved pair
/// `(q_curr, q_next)` does. The initial guess defaults to linear
/// extrapolation with circle unwrap.
pub fn dla_step(
    sys: &DiscreteSystem,
    q_prev: &BundlePoint,
    q_curr: &BundlePoint,
    config: &SolverConfig,
    guess: Option<&BundlePoint>,
) -> Result<StepResult> {
    let d = sys.bundle().dim();
    let m = sys.variational_codim();
    let c = sys.constraint_levels();

    // Terms frozen during the solve.
    let (_, d2_prev) = sys.gradients(q_prev, q_curr)?;
    let fp_prev = sys.force_plus(q_prev, q_curr);
    let omega = sys.annihilator_matrix(q_curr);

    let residual = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let q_next = sys.bundle().point_from_coords(&x.rows(0, d).into_owned());
        let lambda = x.rows(d, m).into_owned();
        let (d1, _) = sys.gradients(q_curr, &q_next)?;
        let mut balance = d1 + &d2_prev;
        if let Some(fm) = sys.force_minus(q_curr, &q_next) {
            balance += fm;
        }
        if let Some(fp) = &fp_prev {
            balance += fp.clone();
        }
        balance -= omega.transpose() * &lambda;
        let chi = sys.constraint_residual(q_curr, &q_next);
        let mut out = DVector::zeros(d + c);
        out.rows_mut(0, d).copy_from(&balance);
        out.rows_mut(d, c).copy_from(&chi);
        Ok(out)
    };

    let mut x0 = DVector::zeros(d + m);
    match guess {
        Some(q) => x0.rows_mut(0, d).copy_from(&q.coords()),
        None => {
            let extrapolated = q_curr.coords() + q_curr.displacement_from(q_prev);
            x0.rows_mut(0, d).copy_from(&extrapolated);
        }
    }

    let (x, iterations, residual_norm) = newton_solve(residual, x0, config)?;
    Ok(StepResult {
        q_next: sys.bundle().point_from_coords(&x.rows(0, d).into_owned()),
        multipliers: x.rows(d, m).into_owned(),
        iterations,
        residual_norm,
    })
}

/// Drive a trajectory of `n + 1` points from an admissible initial pair.
/// Returns the curve together with the multiplier history (one multiplier
/// vector per interior point).
pub fn dla_trajectory(
    sys: &DiscreteSystem,
    q0: &BundlePoint,
    q1: &BundlePoint,
    n: usize,
    config: &SolverConfig,
) -> Result<(DiscreteCurve, Vec<DVector<f64>>)> {
    let chi = sys.constraint_residual(q0, q1).norm();
    if n >= 1 && chi > config.residual_tolerance.max(1e-10) {
        return Err(Error::ConstraintViolated {
            residual: chi,
            tolerance: config.residual_tolerance.max(1e-10),
        });
    }
    let mut points = Vec::with_capacity(n + 1);
    points.push(q0.clone());
    if n >= 1 {
        points.push(q1.clone());
    }
    let mut multipliers = Vec::new();
    for k in 2..=n {
        let step = dla_step(sys, &points[k - 2], &points[k - 1], config, None)
            .map_err(|e| e.at_step(k - 1))?;
        points.push(step.q_next);
        multipliers.push(step.multipliers);
    }
    Ok((DiscreteCurve::new(points)?, multipliers))
}

/// Membership-form residual of the equations at `q_curr`: the pairing of
/// the force-balance covector with a basis of `D_{q_curr}` (which must
/// vanish on trajectories), together with the kinematic levels of
/// `(q_curr, q_next)`.
pub fn dla_residual(
    sys: &DiscreteSystem,
    q_prev: &BundlePoint,
    q_curr: &BundlePoint,
    q_next: &BundlePoint,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let balance = force_balance(sys, q_prev, q_curr, q_next)?;
    let basis = sys.distribution_basis(q_curr)?;
    let projected = DVector::from_fn(basis.len(), |i, _| balance.dot(&basis[i].coords()));
    let chi = sys.constraint_residual(q_curr, q_next);
    Ok((projected, chi))
}

/// Largest membership-form residual over all interior points of a curve.
pub fn max_trajectory_residual(sys: &DiscreteSystem, curve: &DiscreteCurve) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 1..curve.len().saturating_sub(1) {
        let (proj, chi) = dla_residual(
            sys,
            curve.point(k - 1),
            curve.point(k),
            curve.point(k + 1),
        )?;
        worst = worst.max(proj.amax());
        if !chi.is_empty() {
            worst = worst.max(chi.amax());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::BundleSpec;
    use crate::group::GroupSpec;
    use rand::prelude::*;
    use rand::rngs::StdRng;

    fn particle() -> DiscreteSystem {
        let bundle = BundleSpec::with_linear_base(1, GroupSpec::new(1, 0).unwrap());
        DiscreteSystem::builder(bundle)
            .lagrangian(|q0, q1| {
                let dx = q1.project()[0] - q0.project()[0];
                let dy = q1.fiber().coords()[0] - q0.fiber().coords()[0];
                (dx * dx + dy * dy) / 2.0
            })
            .lagrangian_gradient(|q0, q1| {
                let dx = q1.project()[0] - q0.project()[0];
                let dy = q1.fiber().coords()[0] - q0.fiber().coords()[0];
                (
                    DVector::from_row_slice(&[-dx, -dy]),
                    DVector::from_row_slice(&[dx, dy]),
                )
            })
            .variational_constraints(1, |q| {
                vec![DVector::from_row_slice(&[-q.project()[0], 1.0])]
            })
            .kinematic_constraints(1, |q0, q1| {
                let (x0, y0) = (q0.project()[0], q0.fiber().coords()[0]);
                let (x1, y1) = (q1.project()[0], q1.fiber().coords()[0]);
                DVector::from_row_slice(&[(y1 - y0) - (x1 + x0) * (x1 - x0) / 2.0])
            })
            .build()
            .unwrap()
    }

    fn pt(sys: &DiscreteSystem, x: f64, y: f64) -> BundlePoint {
        sys.bundle().point(&[x], &[y]).unwrap()
    }

    #[test]
    fn stationary_start_stays_put() {
        let sys = particle();
        let q = pt(&sys, 0.3, 0.2);
        let step = dla_step(&sys, &q, &q, &SolverConfig::default(), None).unwrap();
        assert!(step.q_next.displacement_from(&q).norm() < 1e-12);
        assert!(step.multipliers.amax() < 1e-12);
    }

    #[test]
    fn particle_step_satisfies_scalar_recurrence() {
        let sys = particle();
        let q0 = pt(&sys, 0.0, 0.0);
        let q1 = pt(&sys, 0.1, 0.005);
        let step = dla_step(&sys, &q0, &q1, &SolverConfig::default(), None).unwrap();
        let (x0, x1) = (0.0, 0.1);
        let x2 = step.q_next.project()[0];
        let y2 = step.q_next.fiber().coords()[0];
        let rec = (x2 - x1) - (x1 - x0)
            + x1 * ((x2 * x2 - x1 * x1) - (x1 * x1 - x0 * x0)) / 2.0;
        assert!(rec.abs() < 1e-12);
        assert!((y2 - (0.005 + (x2 * x2 - x1 * x1) / 2.0)).abs() < 1e-12);
        assert!(step.iterations <= 10);
    }

    #[test]
    fn trajectory_endpoints_and_short_runs() {
        let sys = particle();
        let q0 = pt(&sys, 0.0, 0.0);
        let q1 = pt(&sys, 0.1, 0.005);
        let (c0, m0) = dla_trajectory(&sys, &q0, &q1, 0, &SolverConfig::default()).unwrap();
        assert_eq!(c0.len(), 1);
        assert!(m0.is_empty());
        let (c1, _) = dla_trajectory(&sys, &q0, &q1, 1, &SolverConfig::default()).unwrap();
        assert_eq!(c1.len(), 2);
        let (c, la) = dla_trajectory(&sys, &q0, &q1, 10, &SolverConfig::default()).unwrap();
        assert_eq!(c.len(), 11);
        assert_eq!(la.len(), 9);
    }

    #[test]
    fn trajectory_rejects_inadmissible_start() {
        let sys = particle();
        let q0 = pt(&sys, 0.0, 0.0);
        let bad = pt(&sys, 0.1, 0.05);
        assert!(matches!(
            dla_trajectory(&sys, &q0, &bad, 5, &SolverConfig::default()),
            Err(Error::ConstraintViolated { .. })
        ));
    }

    #[test]
    fn step_commutes_with_the_group_action() {
        let sys = particle();
        let cfg = SolverConfig::default();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..20 {
            let x0 = rng.random_range(-0.5..0.5);
            let x1 = x0 + rng.random_range(-0.05..0.05);
            let y0 = rng.random_range(-0.5..0.5);
            let y1 = y0 + (x1 + x0) * (x1 - x0) / 2.0;
            let q0 = pt(&sys, x0, y0);
            let q1 = pt(&sys, x1, y1);
            let g = sys.bundle().group().element(&[rng.random_range(-2.0..2.0)]).unwrap();
            let plain = dla_step(&sys, &q0, &q1, &cfg, None).unwrap();
            let shifted = dla_step(
                &sys,
                &q0.act(&g).unwrap(),
                &q1.act(&g).unwrap(),
                &cfg,
                None,
            )
            .unwrap();
            let expected = plain.q_next.act(&g).unwrap();
            assert!(shifted.q_next.displacement_from(&expected).norm() < 1e-9);
        }
    }

    #[test]
    fn membership_residual_vanishes_on_solutions_only() {
        let sys = particle();
        let q0 = pt(&sys, 0.0, 0.0);
        let q1 = pt(&sys, 0.1, 0.005);
        let step = dla_step(&sys, &q0, &q1, &SolverConfig::default(), None).unwrap();
        let (proj, chi) = dla_residual(&sys, &q0, &q1, &step.q_next).unwrap();
        assert!(proj.amax() < 1e-10);
        assert!(chi.amax() < 1e-10);

        // Multiplier form and membership form agree after eliminating
        // lambda by projection onto D.
        assert!(proj.amax() < 1e-12);

        // Perturbing q_next along a D-direction breaks the balance.
        let dir = sys.distribution_basis(&q1).unwrap().remove(0);
        let perturbed = sys
            .bundle()
            .point_from_coords(&(step.q_next.coords() + dir.coords() * 1e-3));
        let (proj_p, _) = dla_residual(&sys, &q0, &q1, &perturbed).unwrap();
        assert!(proj_p.amax() > 1e-6);
    }

    #[test]
    fn newton_converges_quadratically_on_close_data() {
        let sys = particle();
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..20 {
            let x0 = rng.random_range(-1.0..1.0);
            let dx = rng.random_range(-0.1..0.1);
            let x1 = x0 + dx;
            let y0 = rng.random_range(-1.0..1.0);
            let y1 = y0 + (x1 + x0) * (x1 - x0) / 2.0;
            let step = dla_step(
                &sys,
                &pt(&sys, x0, y0),
                &pt(&sys, x1, y1),
                &SolverConfig::default(),
                None,
            )
            .unwrap();
            assert!(step.iterations <= 10);
            assert!(step.residual_norm <= 1e-12);
        }
    }
}
