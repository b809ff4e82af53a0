//! Lifting reduced trajectories back to the bundle.
//!
//! Two routes are implemented and cross-checked in the tests: the general
//! recursion through the transition element and `F_1~`, and the
//! trivial-bundle closed form
//! `q_{k+1} = (r_{k+1}, h_k theta_k A_d^t(r_k, r_{k+1})^-1)`, which is the
//! fast path.

use nalgebra::DVector;

use crate::bundle::{BundlePoint, FIBER_TOL};
use crate::connection::AffineDiscreteConnection;
use crate::reduction::{f1_tilde, ReducedCurve};
use crate::system::{DiscreteCurve, DiscreteSystem};
use crate::{Error, Result};

fn check_initial_data(
    sys: &DiscreteSystem,
    dconn: &AffineDiscreteConnection,
    reduced: &ReducedCurve,
    q0_bar: &BundlePoint,
    q1_bar: Option<&BundlePoint>,
    tol: f64,
) -> Result<()> {
    if reduced.states.is_empty() {
        return Err(Error::InvalidSystem("empty reduced curve".into()));
    }
    let spec = sys.bundle();
    let base_gap = spec
        .base_displacement(q0_bar.project(), &reduced.states[0].base)
        .norm();
    if base_gap > tol {
        return Err(Error::Reconstruction {
            what: "initial point does not project to the leading base point".into(),
            residual: base_gap,
        });
    }
    if let Some(q1) = q1_bar {
        let chi = sys.constraint_residual(q0_bar, q1).norm();
        if chi > tol {
            return Err(Error::Reconstruction {
                what: "initial pair violates the kinematic constraints".into(),
                residual: chi,
            });
        }
        let w = dconn.form(q0_bar, q1);
        let theta_expected = w.conjugate(&q0_bar.fiber().inverse());
        let gap = reduced.states[0]
            .fiber_step
            .displacement_from(&theta_expected)
            .norm();
        if gap > tol {
            return Err(Error::Reconstruction {
                what: "leading fiber step disagrees with the initial pair".into(),
                residual: gap,
            });
        }
    }
    Ok(())
}

/// Lift a reduced trajectory to the bundle through the trivial-bundle
/// closed form, starting at `q0_bar` (and, when given, validating the
/// stated relationship with `q1_bar`).
pub fn reconstruct(
    sys: &DiscreteSystem,
    dconn: &AffineDiscreteConnection,
    reduced: &ReducedCurve,
    q0_bar: &BundlePoint,
    q1_bar: Option<&BundlePoint>,
    tol: f64,
) -> Result<DiscreteCurve> {
    check_initial_data(sys, dconn, reduced, q0_bar, q1_bar, tol)?;
    let mut points = Vec::with_capacity(reduced.steps() + 1);
    points.push(q0_bar.clone());
    for k in 0..reduced.steps() {
        let q = &points[k];
        let theta = &reduced.states[k].fiber_step;
        let r_next = reduced.base_at(k + 1);
        let at = dconn.reduced_form(q.project(), r_next);
        let fiber = q.fiber().mul(theta).mul(&at.inverse());
        points.push(BundlePoint::new(q.spec().clone(), r_next.clone(), fiber));
    }
    if let Some(q1) = q1_bar {
        let gap = points[1].displacement_from(q1).norm();
        if gap > tol.max(1e-9) {
            return Err(Error::Reconstruction {
                what: "lift does not pass through the given second point".into(),
                residual: gap,
            });
        }
    }
    DiscreteCurve::new(points)
}

/// The general reconstruction recursion: at each step pull the stored
/// representative to the current lift with the transition element and push
/// forward with `F_1~`. Agrees with [`reconstruct`] to roundoff; kept as
/// the literal form of the recursion.
pub fn reconstruct_recursive(
    sys: &DiscreteSystem,
    dconn: &AffineDiscreteConnection,
    reduced: &ReducedCurve,
    q0_bar: &BundlePoint,
    tol: f64,
) -> Result<DiscreteCurve> {
    check_initial_data(sys, dconn, reduced, q0_bar, None, tol)?;
    let spec = sys.bundle();
    let mut points = Vec::with_capacity(reduced.steps() + 1);
    points.push(q0_bar.clone());
    for k in 0..reduced.steps() {
        let q = points[k].clone();
        // The stored state is the class of ((r_k, e), theta_k).
        let rep = BundlePoint::new(
            spec.clone(),
            reduced.states[k].base.clone(),
            spec.group().identity(),
        );
        let shift = q.transition(&rep, FIBER_TOL)?;
        let u = reduced.states[k].fiber_step.conjugate(&shift);
        points.push(f1_tilde(dconn, &q, &u, reduced.base_at(k + 1)));
    }
    DiscreteCurve::new(points)
}

/// Pure horizontal-lift reconstruction `q_{k+1} = HLds_{q_k}(r_{k+1})`,
/// for the Chaplygin and horizontal connections where the reduced fiber
/// steps are the identity.
pub fn horizontal_lift_path(
    dconn: &AffineDiscreteConnection,
    bases: &[DVector<f64>],
    q0_bar: &BundlePoint,
    tol: f64,
) -> Result<DiscreteCurve> {
    let first = bases.first().ok_or_else(|| {
        Error::InvalidSystem("horizontal lift needs at least one base point".into())
    })?;
    let gap = q0_bar
        .spec()
        .base_displacement(q0_bar.project(), first)
        .norm();
    if gap > tol {
        return Err(Error::Reconstruction {
            what: "initial point does not project to the leading base point".into(),
            residual: gap,
        });
    }
    let mut points = Vec::with_capacity(bases.len());
    points.push(q0_bar.clone());
    for r in &bases[1..] {
        let q = points.last().unwrap();
        points.push(dconn.horizontal_lift(q, r));
    }
    DiscreteCurve::new(points)
}
