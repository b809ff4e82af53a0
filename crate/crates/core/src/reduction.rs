//! Symmetry reduction in trivialized coordinates.
//!
//! All reduced-space computation happens on `R x G x R` windows
//! `(r0, theta0, r1, theta1, r2)` with `theta_k = h_k^-1 w_k h_k` the
//! conjugated discrete-connection value; the abstract quotient-bundle
//! morphisms are never materialized. The reduced equations split into a
//! horizontal residual paired with a basis of the projected distribution,
//! a vertical residual paired with a basis of the constrained vertical
//! algebra, and the reduced kinematic levels; together they form a square
//! system in the unknowns `(theta_curr, r_next)`.
//!
//! Two specializations go further and produce honest (forced) discrete
//! mechanical systems on the base: [`build_chaplygin`] when the symmetry
//! directions are complementary to the constraints, and
//! [`build_horizontal`] when they are contained in them, in which case the
//! discrete momentum level set furnishes the connection.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::bundle::{BundlePoint, BundleSpec};
use crate::connection::{AffineDiscreteConnection, ContinuousConnection};
use crate::group::{AlgebraCovector, AlgebraElement, GroupElement, Side};
use crate::linalg;
use crate::solver::{newton_solve, SolverConfig};
use crate::system::{fd_gradient, fd_step, DiscreteCurve, DiscreteSystem};
use crate::{Error, Result};

/// One trivialized reduced state `(r_k, theta_k)`.
#[derive(Clone, Debug)]
pub struct ReducedState {
    pub base: DVector<f64>,
    /// The conjugated discrete-connection value `h_k^-1 A_d(q_k, q_{k+1}) h_k`.
    pub fiber_step: GroupElement,
}

/// A reduced trajectory: states `(r_k, theta_k)` for `k = 0..N-1` plus the
/// terminal base point `r_N`.
#[derive(Clone, Debug)]
pub struct ReducedCurve {
    pub states: Vec<ReducedState>,
    pub terminal_base: DVector<f64>,
}

impl ReducedCurve {
    /// Number of base intervals covered (the unreduced curve has
    /// `steps() + 1` points).
    pub fn steps(&self) -> usize {
        self.states.len()
    }

    pub fn base_at(&self, k: usize) -> &DVector<f64> {
        if k < self.states.len() {
            &self.states[k].base
        } else {
            debug_assert_eq!(k, self.states.len());
            &self.terminal_base
        }
    }
}

/// Outcome of one reduced step.
#[derive(Clone, Debug)]
pub struct ReducedStep {
    pub fiber_step: GroupElement,
    pub base_next: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// `F_1~(q0, w0, r1) = l^Q_w0(HLds_q0(r1))`; on the trivial bundle
/// `(r1, w0 h0 A_d^t(r0, r1)^-1)`.
pub fn f1_tilde(
    dconn: &AffineDiscreteConnection,
    q0: &BundlePoint,
    w0: &GroupElement,
    r1: &DVector<f64>,
) -> BundlePoint {
    dconn
        .horizontal_lift(q0, r1)
        .act(w0)
        .expect("same group spec")
}

/// Trivialized `F_2^t`: the conjugation of `theta1` by
/// `h1 = theta0 h0 A_d^t(r0, r1)^-1` (so just `theta1` for abelian
/// groups). The final base point of the window does not enter the formula
/// but is kept for signature parity with the reduced residuals.
#[allow(clippy::too_many_arguments)]
pub fn f2_t(
    dconn: &AffineDiscreteConnection,
    r0: &DVector<f64>,
    h0: &GroupElement,
    theta0: &GroupElement,
    r1: &DVector<f64>,
    theta1: &GroupElement,
    _r2: &DVector<f64>,
) -> GroupElement {
    let at = dconn.reduced_form(r0, r1);
    let h1 = theta0.mul(h0).mul(&at.inverse());
    theta1.conjugate(&h1)
}

/// The trivialized reduced system: a discrete system, the continuous
/// connection used for splitting, and the affine discrete connection used
/// for the reduced model space.
pub struct ReducedSystem {
    system: Arc<DiscreteSystem>,
    connection: Arc<ContinuousConnection>,
    discrete: Arc<AffineDiscreteConnection>,
}

impl ReducedSystem {
    pub fn new(
        system: Arc<DiscreteSystem>,
        connection: Arc<ContinuousConnection>,
        discrete: Arc<AffineDiscreteConnection>,
    ) -> Self {
        Self {
            system,
            connection,
            discrete,
        }
    }

    pub fn system(&self) -> &Arc<DiscreteSystem> {
        &self.system
    }

    pub fn connection(&self) -> &Arc<ContinuousConnection> {
        &self.connection
    }

    pub fn discrete_connection(&self) -> &Arc<AffineDiscreteConnection> {
        &self.discrete
    }

    fn bundle(&self) -> &BundleSpec {
        self.system.bundle()
    }

    /// The representative `(r, e)` of a base point.
    pub fn representative(&self, r: &DVector<f64>) -> BundlePoint {
        BundlePoint::new(
            self.bundle().clone(),
            r.clone(),
            self.bundle().group().identity(),
        )
    }

    /// Whether derivative evaluations can use the analytic chain rule
    /// rather than finite differences.
    pub fn has_analytic_path(&self) -> bool {
        self.system.has_gradient() && self.discrete.has_derivatives()
    }

    /// The trivialized reduced lagrangian
    /// `L^t(r0, theta0, r1) = L_d((r0, e), (r1, theta0 A_d^t(r0, r1)^-1))`.
    pub fn lagrangian(&self, r0: &DVector<f64>, theta0: &GroupElement, r1: &DVector<f64>) -> f64 {
        let q0 = self.representative(r0);
        let q1 = f1_tilde(&self.discrete, &q0, theta0, r1);
        self.system.lagrangian(&q0, &q1)
    }

    /// Partial derivatives of the reduced lagrangian with respect to
    /// `(r0, theta0, r1)`. Chain rule through the analytic hooks when both
    /// are present, else central finite differences on the composite.
    pub fn lagrangian_gradients(
        &self,
        r0: &DVector<f64>,
        theta0: &GroupElement,
        r1: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let dr = self.bundle().base_dim();
        let dg = self.bundle().fiber_dim();
        if self.has_analytic_path() {
            let q0 = self.representative(r0);
            let q1 = f1_tilde(&self.discrete, &q0, theta0, r1);
            let (d1, d2) = self.system.gradients(&q0, &q1)?;
            let (da1, da2) = self.discrete.reduced_form_derivatives(r0, r1);
            let d1_base = d1.rows(0, dr).into_owned();
            let d2_base = d2.rows(0, dr).into_owned();
            let d2_fiber = d2.rows(dr, dg).into_owned();
            // Abelian chart: the fiber of q1 is theta0 - A_d^t(r0, r1).
            let g_r0 = d1_base - da1.transpose() * &d2_fiber;
            let g_th = d2_fiber.clone();
            let g_r1 = d2_base - da2.transpose() * &d2_fiber;
            return Ok((g_r0, g_th, g_r1));
        }
        let group = self.bundle().group();
        let g_r0 = fd_gradient(|x| self.lagrangian(x, theta0, r1), r0);
        let g_th = fd_gradient(
            |x| self.lagrangian(r0, &GroupElement::new(group, x.clone()), r1),
            theta0.coords(),
        );
        let g_r1 = fd_gradient(|x| self.lagrangian(r0, theta0, x), r1);
        Ok((g_r0, g_th, g_r1))
    }

    /// Reduced kinematic levels
    /// `chi^t(r0, theta0, r1) = chi((r0, e), (r1, theta0 A_d^t(r0, r1)^-1))`.
    pub fn kinematic(
        &self,
        r0: &DVector<f64>,
        theta0: &GroupElement,
        r1: &DVector<f64>,
    ) -> DVector<f64> {
        let q0 = self.representative(r0);
        let q1 = f1_tilde(&self.discrete, &q0, theta0, r1);
        self.system.constraint_residual(&q0, &q1)
    }

    /// Orthonormal basis of the projected distribution
    /// `D^_r = d pi (D_(r, e))`.
    pub fn variational_basis(&self, r: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        let q = self.representative(r);
        let basis = self.system.distribution_basis(&q)?;
        let dr = self.bundle().base_dim();
        let projected: Vec<DVector<f64>> = basis.iter().map(|v| v.base.clone()).collect();
        let m = linalg::cols_from(&projected, dr);
        Ok(linalg::column_span(&m))
    }

    /// Orthonormal basis of the constrained vertical algebra `g^D` at
    /// `(r, e)`.
    pub fn vertical_basis(&self, r: &DVector<f64>) -> Result<Vec<AlgebraElement>> {
        self.system
            .vertical_constrained_algebra_basis(&self.representative(r))
    }

    /// The reduced discrete force of a window `(r0, theta0, r1)`:
    /// coefficient vectors of `F^-` on the `delta r0` coordinate frame and
    /// of `F^+` on the `delta r1` frame.
    pub fn forces(
        &self,
        r0: &DVector<f64>,
        theta0: &GroupElement,
        r1: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let dr = self.bundle().base_dim();
        let q0 = self.representative(r0);
        let q1 = f1_tilde(&self.discrete, &q0, theta0, r1);
        let (_, d2_check, _) = self.lagrangian_gradients(r0, theta0, r1)?;

        let mut minus = DVector::zeros(dr);
        let mut plus = DVector::zeros(dr);
        let zero0 = self.connection.horizontal_lift(&q0, &DVector::zeros(dr));
        let zero1 = self.connection.horizontal_lift(&q1, &DVector::zeros(dr));
        for j in 0..dr {
            let mut e = DVector::zeros(dr);
            e[j] = 1.0;
            let lift0 = self.connection.horizontal_lift(&q0, &e);
            let lift1 = self.connection.horizontal_lift(&q1, &e);
            let b_minus = self.discrete.form_derivative(&q0, &q1, &lift0, &zero1);
            let b_plus = self.discrete.form_derivative(&q0, &q1, &zero0, &lift1);
            minus[j] = d2_check.dot(&b_minus);
            plus[j] = d2_check.dot(&b_plus);
        }
        Ok((minus, plus))
    }

    /// The horizontal residual of a reduced window, paired with a base
    /// variation `delta r1`. Vanishes on `D^` along reduced trajectories.
    #[allow(clippy::too_many_arguments)]
    pub fn horizontal_residual(
        &self,
        r0: &DVector<f64>,
        theta0: &GroupElement,
        r1: &DVector<f64>,
        theta1: &GroupElement,
        r2: &DVector<f64>,
        delta_r1: &DVector<f64>,
    ) -> Result<f64> {
        let (d1_fwd, d2_fwd, _) = self.lagrangian_gradients(r1, theta1, r2)?;
        let (_, _, d3_bwd) = self.lagrangian_gradients(r0, theta0, r1)?;
        let (f_minus_fwd, _) = self.forces(r1, theta1, r2)?;
        let (_, f_plus_bwd) = self.forces(r0, theta0, r1)?;

        // The commutator of theta1 with the graph map, zero for abelian
        // fibers but spelled out through the translation contract.
        let group = self.bundle().group();
        let q1 = self.representative(r1);
        let m_dr = self.connection.graph_map(&q1) * delta_r1;
        let left = group.translate_tangent(&m_dr, theta1, Side::Left);
        let right = group.translate_tangent(&m_dr, theta1, Side::Right);
        let commutator = d2_fwd.dot(&(left - right));

        Ok((d1_fwd + d3_bwd + f_minus_fwd + f_plus_bwd).dot(delta_r1) + commutator)
    }

    /// The vertical residual of a reduced window, paired with an algebra
    /// direction `xi1`. Vanishes on `Ad_{h1}(g^D)` along reduced
    /// trajectories, where `h1 = theta0 A_d^t(r0, r1)^-1`.
    #[allow(clippy::too_many_arguments)]
    pub fn vertical_residual(
        &self,
        r0: &DVector<f64>,
        theta0: &GroupElement,
        r1: &DVector<f64>,
        theta1: &GroupElement,
        r2: &DVector<f64>,
        xi1: &AlgebraElement,
    ) -> Result<f64> {
        let group = self.bundle().group();
        let (_, d2_bwd, _) = self.lagrangian_gradients(r0, theta0, r1)?;
        let (_, d2_fwd, _) = self.lagrangian_gradients(r1, theta1, r2)?;

        // Move both covectors to the algebra dual by right translation...
        let mu0 = group.translate_cotangent(&d2_bwd, &theta0.inverse(), Side::Right);
        let mu1 = group.translate_cotangent(&d2_fwd, &theta1.inverse(), Side::Right);
        // ...and conjugate the forward one by h1.
        let at = self.discrete.reduced_form(r0, r1);
        let h1 = theta0.mul(&at.inverse());
        let mu1 = group.translate_cotangent(&mu1, &h1, Side::Left);
        let mu1 = group.translate_cotangent(&mu1, &h1.inverse(), Side::Right);

        Ok((mu0 - mu1).dot(xi1.coords()))
    }

    /// Project an unreduced curve to `(r_k, theta_k)` states.
    pub fn project_curve(&self, curve: &DiscreteCurve) -> Result<ReducedCurve> {
        if curve.len() < 2 {
            return Err(Error::InvalidSystem(
                "need at least two points to project a curve".into(),
            ));
        }
        let mut states = Vec::with_capacity(curve.len() - 1);
        for k in 0..curve.len() - 1 {
            let qk = curve.point(k);
            let qn = curve.point(k + 1);
            let w = self.discrete.form(qk, qn);
            let theta = w.conjugate(&qk.fiber().inverse());
            states.push(ReducedState {
                base: qk.project().clone(),
                fiber_step: theta,
            });
        }
        Ok(ReducedCurve {
            states,
            terminal_base: curve.point(curve.len() - 1).project().clone(),
        })
    }

    /// Test directions for the vertical equations of a step from
    /// `(r_prev, theta_prev)` to `r_curr`: the `g^D` basis at
    /// `(r_curr, e)` conjugated by `h1`.
    fn vertical_directions(
        &self,
        r_prev: &DVector<f64>,
        theta_prev: &GroupElement,
        r_curr: &DVector<f64>,
    ) -> Result<Vec<AlgebraElement>> {
        let group = self.bundle().group();
        let at = self.discrete.reduced_form(r_prev, r_curr);
        let h1 = theta_prev.mul(&at.inverse());
        Ok(self
            .vertical_basis(r_curr)?
            .into_iter()
            .map(|zeta| group.adjoint(&h1, &zeta))
            .collect())
    }

    /// Solve one reduced step: given `(r_prev, theta_prev, r_curr)`, find
    /// `(theta_curr, r_next)` satisfying the vertical equations, the
    /// horizontal equations and the reduced kinematic levels.
    pub fn step(
        &self,
        r_prev: &DVector<f64>,
        theta_prev: &GroupElement,
        r_curr: &DVector<f64>,
        config: &SolverConfig,
        guess: Option<(&GroupElement, &DVector<f64>)>,
    ) -> Result<ReducedStep> {
        let dr = self.bundle().base_dim();
        let dg = self.bundle().fiber_dim();
        let group = self.bundle().group();

        let verticals = self.vertical_directions(r_prev, theta_prev, r_curr)?;
        let horizontals = self.variational_basis(r_curr)?;
        let c = self.system.constraint_levels();
        let rows = verticals.len() + horizontals.len() + c;
        if rows != dg + dr {
            return Err(Error::InvalidSystem(format!(
                "dimension bookkeeping failure: {} vertical + {} horizontal + {} constraint equations for {} unknowns signals an inconsistent splitting",
                verticals.len(),
                horizontals.len(),
                c,
                dg + dr
            )));
        }

        let residual = |x: &DVector<f64>| -> Result<DVector<f64>> {
            let theta = GroupElement::new(group, x.rows(0, dg).into_owned());
            let r_next = x.rows(dg, dr).into_owned();
            let mut out = DVector::zeros(rows);
            let mut row = 0;
            for xi in &verticals {
                out[row] =
                    self.vertical_residual(r_prev, theta_prev, r_curr, &theta, &r_next, xi)?;
                row += 1;
            }
            for dr1 in &horizontals {
                out[row] =
                    self.horizontal_residual(r_prev, theta_prev, r_curr, &theta, &r_next, dr1)?;
                row += 1;
            }
            out.rows_mut(row, c)
                .copy_from(&self.kinematic(r_curr, &theta, &r_next));
            Ok(out)
        };

        let mut x0 = DVector::zeros(dg + dr);
        match guess {
            Some((theta, r)) => {
                x0.rows_mut(0, dg).copy_from(theta.coords());
                x0.rows_mut(dg, dr).copy_from(r);
            }
            None => {
                x0.rows_mut(0, dg).copy_from(theta_prev.coords());
                let extrapolated = r_curr + self.bundle().base_displacement(r_curr, r_prev);
                x0.rows_mut(dg, dr).copy_from(&extrapolated);
            }
        }

        let (x, iterations, residual_norm) = newton_solve(residual, x0, config)?;
        Ok(ReducedStep {
            fiber_step: GroupElement::new(group, x.rows(0, dg).into_owned()),
            base_next: x.rows(dg, dr).into_owned(),
            iterations,
            residual_norm,
        })
    }

    /// Drive a reduced trajectory over `n` base intervals from admissible
    /// initial data `(r0, theta0, r1)`.
    pub fn trajectory(
        &self,
        r0: &DVector<f64>,
        theta0: &GroupElement,
        r1: &DVector<f64>,
        n: usize,
        config: &SolverConfig,
    ) -> Result<ReducedCurve> {
        if n == 0 {
            return Err(Error::InvalidSystem(
                "a reduced trajectory needs at least one interval".into(),
            ));
        }
        let chi = self.kinematic(r0, theta0, r1).norm();
        if chi > config.residual_tolerance.max(1e-10) {
            return Err(Error::ConstraintViolated {
                residual: chi,
                tolerance: config.residual_tolerance.max(1e-10),
            });
        }
        let mut states = vec![ReducedState {
            base: r0.clone(),
            fiber_step: theta0.clone(),
        }];
        let mut r_curr = r1.clone();
        for k in 1..n {
            let step = {
                let prev = &states[k - 1];
                self.step(&prev.base, &prev.fiber_step, &r_curr, config, None)
                    .map_err(|e| e.at_step(k))?
            };
            states.push(ReducedState {
                base: r_curr.clone(),
                fiber_step: step.fiber_step,
            });
            r_curr = step.base_next;
        }
        Ok(ReducedCurve {
            states,
            terminal_base: r_curr,
        })
    }

    /// Largest reduced-equation residual (vertical, horizontal and
    /// kinematic) over the windows of a reduced curve.
    pub fn max_curve_residual(&self, curve: &ReducedCurve) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for k in 1..curve.steps() {
            let (r0, th0) = (&curve.states[k - 1].base, &curve.states[k - 1].fiber_step);
            let (r1, th1) = (&curve.states[k].base, &curve.states[k].fiber_step);
            let r2 = curve.base_at(k + 1);
            for xi in self.vertical_directions(r0, th0, r1)? {
                worst = worst.max(self.vertical_residual(r0, th0, r1, th1, r2, &xi)?.abs());
            }
            for dr1 in self.variational_basis(r1)? {
                worst = worst.max(self.horizontal_residual(r0, th0, r1, th1, r2, &dr1)?.abs());
            }
            let chi = self.kinematic(r1, th1, r2);
            if !chi.is_empty() {
                worst = worst.max(chi.amax());
            }
        }
        // The leading window's kinematic level is part of the data.
        let chi0 = self.kinematic(
            &curve.states[0].base,
            &curve.states[0].fiber_step,
            curve.base_at(1),
        );
        if !chi0.is_empty() {
            worst = worst.max(chi0.amax());
        }
        Ok(worst)
    }
}

/// The nonholonomic discrete momentum `J_d(q0, q1)` as a full algebra
/// covector together with the `g^D` basis at `q0` it is restricted to.
#[derive(Clone, Debug)]
pub struct MomentumValue {
    covector: AlgebraCovector,
    basis: Vec<AlgebraElement>,
}

impl MomentumValue {
    /// The unrestricted covector on the whole algebra.
    pub fn full(&self) -> &AlgebraCovector {
        &self.covector
    }

    /// The `g^D` basis at the base point of the pair.
    pub fn constrained_basis(&self) -> &[AlgebraElement] {
        &self.basis
    }

    /// Components of the restriction to `g^D`, in the stored basis.
    pub fn constrained_components(&self) -> DVector<f64> {
        DVector::from_fn(self.basis.len(), |i, _| self.covector.pair(&self.basis[i]))
    }

    pub fn pair(&self, xi: &AlgebraElement) -> f64 {
        self.covector.pair(xi)
    }
}

/// `J_d(q0, q1)(xi) = -D_1 L_d(q0, q1) xi_Q(q0)`.
pub fn momentum_map(
    sys: &DiscreteSystem,
    q0: &BundlePoint,
    q1: &BundlePoint,
) -> Result<MomentumValue> {
    let (d1, _) = sys.gradients(q0, q1)?;
    let dg = sys.bundle().fiber_dim();
    let coords = DVector::from_fn(dg, |j, _| {
        let mut e = DVector::zeros(dg);
        e[j] = 1.0;
        let gen = q0.infinitesimal_generator(&AlgebraElement::new(e));
        -d1.dot(&gen.coords())
    });
    Ok(MomentumValue {
        covector: AlgebraCovector::new(coords),
        basis: sys.vertical_constrained_algebra_basis(q0)?,
    })
}

/// Residual of the discrete momentum evolution equation for a section of
/// `g^D`, in the simplified two-term form: the pairing of
/// `D_1 L_d(q_curr, q_next)` with the generator of `xi~(q_curr)` at
/// `q_curr` minus the pairing of `D_1 L_d(q_prev, q_curr)` with the same
/// algebra value's generator at `q_prev`.
pub fn momentum_evolution_residual(
    sys: &DiscreteSystem,
    q_prev: &BundlePoint,
    q_curr: &BundlePoint,
    q_next: &BundlePoint,
    section: &dyn Fn(&BundlePoint) -> AlgebraElement,
) -> Result<f64> {
    let xi = section(q_curr);
    let (d1_fwd, _) = sys.gradients(q_curr, q_next)?;
    let (d1_bwd, _) = sys.gradients(q_prev, q_curr)?;
    let lhs = -d1_fwd.dot(&q_curr.infinitesimal_generator(&xi).coords());
    let rhs = -d1_bwd.dot(&q_prev.infinitesimal_generator(&xi).coords());
    Ok(lhs - rhs)
}

// ---------------------------------------------------------------------------
// Forced discrete mechanical systems on the base space.
// ---------------------------------------------------------------------------

type BaseScalarFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;
type BaseGradientFn =
    dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> + Send + Sync;
type BaseCovectorsFn = dyn Fn(&DVector<f64>) -> Vec<DVector<f64>> + Send + Sync;
type BaseVectorFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync;

/// A (possibly forced, possibly constrained) discrete mechanical system on
/// the base space `Q/G`, produced by the Chaplygin and horizontal
/// reductions.
pub struct BaseSystem {
    dim: usize,
    circular: Vec<bool>,
    lagrangian: Box<BaseScalarFn>,
    gradient: Option<Box<BaseGradientFn>>,
    annihilator: Option<Box<BaseCovectorsFn>>,
    kinematic: Option<(usize, Box<BaseVectorFn>)>,
    force: Option<(Box<BaseVectorFn>, Box<BaseVectorFn>)>,
}

/// Outcome of one base step.
#[derive(Clone, Debug)]
pub struct BaseStep {
    pub base_next: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

impl BaseSystem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_constrained(&self) -> bool {
        self.annihilator.is_some()
    }

    pub fn lagrangian(&self, r0: &DVector<f64>, r1: &DVector<f64>) -> f64 {
        (self.lagrangian)(r0, r1)
    }

    pub fn gradients(
        &self,
        r0: &DVector<f64>,
        r1: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        if let Some(g) = &self.gradient {
            return g(r0, r1);
        }
        let d1 = fd_gradient(|x| (self.lagrangian)(x, r1), r0);
        let d2 = fd_gradient(|x| (self.lagrangian)(r0, x), r1);
        Ok((d1, d2))
    }

    pub fn kinematic(&self, r0: &DVector<f64>, r1: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.kinematic {
            Some((_, f)) => f(r0, r1),
            None => Ok(DVector::zeros(0)),
        }
    }

    pub fn annihilator_rows(&self, r: &DVector<f64>) -> DMatrix<f64> {
        match &self.annihilator {
            Some(f) => linalg::rows_from(&f(r), self.dim),
            None => DMatrix::zeros(0, self.dim),
        }
    }

    pub fn force_minus(&self, r0: &DVector<f64>, r1: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.force {
            Some((minus, _)) => minus(r0, r1),
            None => Ok(DVector::zeros(self.dim)),
        }
    }

    pub fn force_plus(&self, r0: &DVector<f64>, r1: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.force {
            Some((_, plus)) => plus(r0, r1),
            None => Ok(DVector::zeros(self.dim)),
        }
    }

    fn displacement(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| {
            if self.circular[i] {
                crate::group::wrap_diff(a[i], b[i])
            } else {
                a[i] - b[i]
            }
        })
    }

    /// One forced, constrained discrete Euler-Lagrange step on the base.
    pub fn step(
        &self,
        r_prev: &DVector<f64>,
        r_curr: &DVector<f64>,
        config: &SolverConfig,
    ) -> Result<BaseStep> {
        let d = self.dim;
        let omega = self.annihilator_rows(r_curr);
        let m = omega.nrows();
        let c = match &self.kinematic {
            Some((c, _)) => *c,
            None => 0,
        };
        if c != m {
            return Err(Error::InvalidSystem(format!(
                "base system has {c} kinematic levels but {m} annihilator covectors"
            )));
        }
        let (_, d2_prev) = self.gradients(r_prev, r_curr)?;
        let fp_prev = self.force_plus(r_prev, r_curr)?;

        let residual = |x: &DVector<f64>| -> Result<DVector<f64>> {
            let r_next = x.rows(0, d).into_owned();
            let lambda = x.rows(d, m).into_owned();
            let (d1, _) = self.gradients(r_curr, &r_next)?;
            let balance = d1
                + &d2_prev
                + self.force_minus(r_curr, &r_next)?
                + &fp_prev
                - omega.transpose() * &lambda;
            let chi = self.kinematic(r_curr, &r_next)?;
            let mut out = DVector::zeros(d + c);
            out.rows_mut(0, d).copy_from(&balance);
            out.rows_mut(d, c).copy_from(&chi);
            Ok(out)
        };

        let mut x0 = DVector::zeros(d + m);
        x0.rows_mut(0, d)
            .copy_from(&(r_curr + self.displacement(r_curr, r_prev)));
        let (x, iterations, residual_norm) = newton_solve(residual, x0, config)?;
        Ok(BaseStep {
            base_next: x.rows(0, d).into_owned(),
            multipliers: x.rows(d, m).into_owned(),
            iterations,
            residual_norm,
        })
    }

    /// Drive a base trajectory of `n + 1` points.
    pub fn trajectory(
        &self,
        r0: &DVector<f64>,
        r1: &DVector<f64>,
        n: usize,
        config: &SolverConfig,
    ) -> Result<Vec<DVector<f64>>> {
        if n >= 1 {
            let chi = self.kinematic(r0, r1)?.norm();
            if chi > config.residual_tolerance.max(1e-10) {
                return Err(Error::ConstraintViolated {
                    residual: chi,
                    tolerance: config.residual_tolerance.max(1e-10),
                });
            }
        }
        let mut points = vec![r0.clone()];
        if n >= 1 {
            points.push(r1.clone());
        }
        for k in 2..=n {
            let step = self
                .step(&points[k - 2], &points[k - 1], config)
                .map_err(|e| e.at_step(k - 1))?;
            points.push(step.base_next);
        }
        Ok(points)
    }
}

/// A Chaplygin reduction: the reduced system plus the forced,
/// unconstrained discrete mechanical system on the base.
pub struct ChaplyginReduction {
    pub reduced: ReducedSystem,
    pub base: BaseSystem,
}

/// Verify the Chaplygin hypotheses on sampled points and build the forced
/// unconstrained base system. The continuous connection is forced by the
/// geometry (`Hor = D`), so only the discrete connection generated by the
/// kinematic constraints is taken as input.
pub fn build_chaplygin(
    system: Arc<DiscreteSystem>,
    discrete: Arc<AffineDiscreteConnection>,
) -> Result<ChaplyginReduction> {
    let bundle = system.bundle().clone();
    let d = bundle.dim();
    let dg = bundle.fiber_dim();
    let m = system.variational_codim();

    if dg != m {
        return Err(Error::PreconditionFailed(format!(
            "Chaplygin splitting needs dim G + dim D = dim Q; got {dg} + {} != {d}",
            d - m
        )));
    }

    let samples = sample_points(&bundle, 20, 0x5eed_c4a9);
    for q in &samples {
        // TQ = V^G (+) D: stack generators and a distribution basis.
        let dist = system.distribution_basis(q)?;
        let mut stacked = DMatrix::zeros(d, dg + dist.len());
        for j in 0..dg {
            let mut e = DVector::zeros(dg);
            e[j] = 1.0;
            stacked
                .column_mut(j)
                .copy_from(&q.infinitesimal_generator(&AlgebraElement::new(e)).coords());
        }
        for (j, v) in dist.iter().enumerate() {
            stacked.column_mut(dg + j).copy_from(&v.coords());
        }
        let rank = linalg::rank(&stacked);
        if rank != d {
            return Err(Error::PreconditionFailed(format!(
                "TQ = V^G (+) D fails at a sampled point: stacked rank {rank} of {d}"
            )));
        }
    }
    // The kinematic constraints must cut out the connection's horizontal
    // space: horizontal lifts satisfy chi.
    for (i, q) in samples.iter().enumerate() {
        let shift = 0.1 + 0.01 * (i as f64);
        let r1 = q.project().map(|x| x + shift);
        let lifted = discrete.horizontal_lift(q, &r1);
        let chi = system.constraint_residual(q, &lifted).norm();
        if chi > 1e-8 {
            return Err(Error::PreconditionFailed(format!(
                "kinematic constraints do not define the discrete connection: |chi| = {chi:e} on a horizontal pair"
            )));
        }
    }

    // The nonholonomic connection of the Chaplygin splitting has Hor = D,
    // the graph of B_fiber B_base^-1 over the base.
    let conn_sys = Arc::clone(&system);
    let connection = Arc::new(ContinuousConnection::new(move |q| {
        let basis = conn_sys
            .distribution_basis(q)
            .expect("distribution basis at Chaplygin point");
        let nb = q.spec().base_dim();
        let nf = q.spec().fiber_dim();
        let mut b_base = DMatrix::zeros(nb, basis.len());
        let mut b_fiber = DMatrix::zeros(nf, basis.len());
        for (j, v) in basis.iter().enumerate() {
            b_base.column_mut(j).copy_from(&v.base);
            b_fiber.column_mut(j).copy_from(&v.fiber);
        }
        let inv = b_base
            .try_inverse()
            .expect("Chaplygin distribution is a graph over the base");
        b_fiber * inv
    }));

    let reduced = ReducedSystem::new(system, connection, discrete);
    let base = base_system_from(&reduced, false)?;
    Ok(ChaplyginReduction { reduced, base })
}

/// A horizontal-symmetry reduction at momentum level `mu`: the discrete
/// connection with `Hor = J_d^-1(mu)`, the reduced system built on it, and
/// the forced constrained base system.
pub struct HorizontalReduction {
    pub reduced: ReducedSystem,
    pub base: BaseSystem,
    pub connection: Arc<AffineDiscreteConnection>,
}

/// Verify regularity, G-regularity and mu-goodness on sampled points,
/// construct the momentum-level discrete connection (evaluated by a nested
/// Newton solve with memoization), and build the base system. The
/// continuous connection of the chosen splitting is supplied by the
/// caller; the splitting property is verified rather than constructed.
pub fn build_horizontal(
    system: Arc<DiscreteSystem>,
    connection: Arc<ContinuousConnection>,
    mu: AlgebraCovector,
    inner: &SolverConfig,
) -> Result<HorizontalReduction> {
    let bundle = system.bundle().clone();
    let dg = bundle.fiber_dim();
    let group = bundle.group();
    if mu.dim() != dg {
        return Err(Error::DimensionMismatch {
            expected: dg,
            found: mu.dim(),
        });
    }

    let samples = sample_points(&bundle, 10, 0x000f_f5e7);
    for q in &samples {
        // Coadjoint invariance of mu along sampled group elements.
        let moved = group.coadjoint(q.fiber(), &mu);
        if (moved.coords() - mu.coords()).norm() > 1e-12 {
            return Err(Error::PreconditionFailed(
                "momentum level is not coadjoint-invariant".into(),
            ));
        }
        // Horizontal symmetry: every vertical direction is constrained.
        let vertical = system.vertical_constrained_algebra_basis(q)?;
        if vertical.len() != dg {
            return Err(Error::PreconditionFailed(format!(
                "vertical space not contained in the distribution: dim g^D = {} of {dg}",
                vertical.len()
            )));
        }
    }

    // Regularity and G-regularity of the cross second derivative at
    // sampled pairs.
    for pair in samples.chunks(2) {
        if pair.len() < 2 {
            break;
        }
        let (q0, q1) = (&pair[0], &pair[1]);
        let cross = cross_hessian(&system, q0, q1)?;
        let sv = linalg::singular_values(&cross);
        let smin = sv.last().copied().unwrap_or(0.0);
        if smin <= 1e-8 {
            return Err(Error::PreconditionFailed(format!(
                "lagrangian is not regular at a sampled pair: smallest cross-Hessian singular value {smin:e}"
            )));
        }
        let restricted = vertical_restriction(&system, &cross, q0, q1);
        let svr = linalg::singular_values(&restricted);
        let sminr = svr.last().copied().unwrap_or(0.0);
        if sminr <= 1e-8 {
            return Err(Error::PreconditionFailed(format!(
                "lagrangian is not G-regular at a sampled pair: smallest restricted singular value {sminr:e}"
            )));
        }
    }

    // mu-goodness: solving J_d^q(l_g q) = mu for g succeeds with a locally
    // unique solution at sampled points.
    for q in &samples {
        let (_, condition) = solve_momentum_shift(&system, q, &mu, inner)?;
        if condition > crate::solver::SINGULAR_CONDITION {
            return Err(Error::PreconditionFailed(format!(
                "mu-goodness fails at a sampled point: level solve condition {condition:e}"
            )));
        }
    }

    // The generating function of the momentum-level connection:
    // A_d^t(r0, r1) = h^-1 where J_d((r0, e), (r1, h)) = mu.
    let cache: Mutex<HashMap<Vec<u64>, GroupElement>> = Mutex::new(HashMap::new());
    let solve_sys = Arc::clone(&system);
    let solve_mu = mu.clone();
    let solve_cfg = *inner;
    let spec = bundle.clone();
    let discrete = Arc::new(AffineDiscreteConnection::new(
        bundle.clone(),
        move |r0: &DVector<f64>, r1: &DVector<f64>| {
            let key: Vec<u64> = r0.iter().chain(r1.iter()).map(|x| x.to_bits()).collect();
            if let Some(hit) = cache.lock().unwrap().get(&key) {
                return hit.clone();
            }
            let q0 = BundlePoint::new(spec.clone(), r0.clone(), spec.group().identity());
            let h = momentum_level_fiber(&solve_sys, &q0, r1, &solve_mu, &solve_cfg)
                .expect("momentum level solve");
            let at = h.inverse();
            cache.lock().unwrap().insert(key, at.clone());
            at
        },
    ));

    let reduced = ReducedSystem::new(system, connection, Arc::clone(&discrete));
    let base = base_system_from(&reduced, true)?;
    Ok(HorizontalReduction {
        reduced,
        base,
        connection: discrete,
    })
}

/// Solve `J_d((r0, e), (r1, h)) = mu` for the fiber `h`.
fn momentum_level_fiber(
    sys: &DiscreteSystem,
    q0: &BundlePoint,
    r1: &DVector<f64>,
    mu: &AlgebraCovector,
    config: &SolverConfig,
) -> Result<GroupElement> {
    let bundle = sys.bundle().clone();
    let group = bundle.group();
    let residual = |h: &DVector<f64>| -> Result<DVector<f64>> {
        let q1 = BundlePoint::new(
            bundle.clone(),
            r1.clone(),
            GroupElement::new(group, h.clone()),
        );
        let j = momentum_map(sys, q0, &q1)?;
        Ok(j.full().coords() - mu.coords())
    };
    let (h, _, _) = newton_solve(residual, q0.fiber().coords().clone(), config)?;
    Ok(GroupElement::new(group, h))
}

/// Solve `J_d^q(l_g q) = mu` for `g`, returning the group shift and the
/// condition estimate of the derivative at the solution (the
/// local-uniqueness check).
fn solve_momentum_shift(
    sys: &DiscreteSystem,
    q: &BundlePoint,
    mu: &AlgebraCovector,
    config: &SolverConfig,
) -> Result<(GroupElement, f64)> {
    let group = sys.bundle().group();
    let dg = sys.bundle().fiber_dim();
    let residual = |g: &DVector<f64>| -> Result<DVector<f64>> {
        let shifted = q.act(&GroupElement::new(group, g.clone()))?;
        let j = momentum_map(sys, q, &shifted)?;
        Ok(j.full().coords() - mu.coords())
    };
    let (g, _, _) = newton_solve(residual, DVector::zeros(dg), config)?;
    let r0 = residual(&g)?;
    let mut jac = DMatrix::zeros(dg, dg);
    let mut gp = g.clone();
    for i in 0..dg {
        let h = fd_step(g[i]);
        gp[i] = g[i] + h;
        let ri = residual(&gp)?;
        jac.column_mut(i).copy_from(&((ri - &r0) / h));
        gp[i] = g[i];
    }
    let sv = linalg::singular_values(&jac);
    let smax = sv.first().copied().unwrap_or(0.0);
    let smin = sv.last().copied().unwrap_or(0.0);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    Ok((GroupElement::new(group, g), condition))
}

/// Cross second derivative `D_2 D_1 L_d(q0, q1)` by forward differences of
/// the (possibly analytic) gradient.
fn cross_hessian(sys: &DiscreteSystem, q0: &BundlePoint, q1: &BundlePoint) -> Result<DMatrix<f64>> {
    let d = sys.bundle().dim();
    let (d1_0, _) = sys.gradients(q0, q1)?;
    let x1 = q1.coords();
    let mut hess = DMatrix::zeros(d, d);
    let mut xp = x1.clone();
    for j in 0..d {
        let h = fd_step(x1[j]);
        xp[j] = x1[j] + h;
        let q1p = sys.bundle().point_from_coords(&xp);
        let (d1_p, _) = sys.gradients(q0, &q1p)?;
        hess.column_mut(j).copy_from(&((d1_p - &d1_0) / h));
        xp[j] = x1[j];
    }
    Ok(hess)
}

/// Restriction of the cross Hessian to `V^G(q0) x V^G(q1)`.
fn vertical_restriction(
    sys: &DiscreteSystem,
    cross: &DMatrix<f64>,
    q0: &BundlePoint,
    q1: &BundlePoint,
) -> DMatrix<f64> {
    let dg = sys.bundle().fiber_dim();
    let mut restricted = DMatrix::zeros(dg, dg);
    for i in 0..dg {
        let mut ei = DVector::zeros(dg);
        ei[i] = 1.0;
        let gi = q0.infinitesimal_generator(&AlgebraElement::new(ei)).coords();
        for j in 0..dg {
            let mut ej = DVector::zeros(dg);
            ej[j] = 1.0;
            let gj = q1.infinitesimal_generator(&AlgebraElement::new(ej)).coords();
            restricted[(i, j)] = gi.dot(&(cross * gj));
        }
    }
    restricted
}

/// Build the forced base system from a reduced system at `theta = e`.
/// Chaplygin reductions are unconstrained on the base; horizontal
/// reductions keep the projected constraints.
fn base_system_from(reduced: &ReducedSystem, constrained: bool) -> Result<BaseSystem> {
    let bundle = reduced.bundle().clone();
    let dr = bundle.base_dim();
    let circular: Vec<bool> = (0..dr).map(|i| bundle.base_is_circular(i)).collect();
    let e = bundle.group().identity();

    let sys = Arc::clone(&reduced.system);
    let conn = Arc::clone(&reduced.connection);
    let dconn = Arc::clone(&reduced.discrete);
    let make =
        move || ReducedSystem::new(Arc::clone(&sys), Arc::clone(&conn), Arc::clone(&dconn));

    let red_l = make();
    let e_l = e.clone();
    let lagrangian = move |r0: &DVector<f64>, r1: &DVector<f64>| red_l.lagrangian(r0, &e_l, r1);

    let red_g = make();
    let e_g = e.clone();
    let gradient = if red_g.has_analytic_path() {
        let f: Box<BaseGradientFn> = Box::new(move |r0, r1| {
            let (g0, _, g1) = red_g.lagrangian_gradients(r0, &e_g, r1)?;
            Ok((g0, g1))
        });
        Some(f)
    } else {
        None
    };

    let red_f = make();
    let e_f = e.clone();
    let force_minus: Box<BaseVectorFn> = Box::new(move |r0, r1| Ok(red_f.forces(r0, &e_f, r1)?.0));
    let red_f2 = make();
    let e_f2 = e.clone();
    let force_plus: Box<BaseVectorFn> = Box::new(move |r0, r1| Ok(red_f2.forces(r0, &e_f2, r1)?.1));

    let (annihilator, kinematic) = if constrained {
        let red_a = make();
        let annihilator: Box<BaseCovectorsFn> = Box::new(move |r| {
            let span = red_a
                .variational_basis(r)
                .expect("projected distribution basis");
            let m = linalg::rows_from(&span, r.len());
            linalg::nullspace(&m)
        });
        let red_k = make();
        let e_k = e.clone();
        let c = reduced.system.constraint_levels();
        let kinematic: Box<BaseVectorFn> =
            Box::new(move |r0, r1| Ok(red_k.kinematic(r0, &e_k, r1)));
        (Some(annihilator), Some((c, kinematic)))
    } else {
        (None, None)
    };

    Ok(BaseSystem {
        dim: dr,
        circular,
        lagrangian: Box::new(lagrangian),
        gradient,
        annihilator,
        kinematic,
        force: Some((force_minus, force_plus)),
    })
}

/// Deterministic sample points at desk scale for precondition checks.
fn sample_points(bundle: &BundleSpec, n: usize, seed: u64) -> Vec<BundlePoint> {
    use rand::prelude::*;
    use rand::rngs::StdRng;
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let coords = DVector::from_fn(bundle.dim(), |_, _| rng.random_range(-1.0..1.0));
            bundle.point_from_coords(&coords)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples::{
        make_particle_2d, make_particle_3d, make_rolling_disk, particle_base_oracle,
    };
    use crate::group::wrap_diff;
    use crate::solver::dla_trajectory;
    use rand::prelude::*;
    use rand::rngs::StdRng;

    fn particle(b: f64) -> (ReducedSystem, crate::examples::ExampleBundle) {
        let ex = make_particle_2d(1.0, b).unwrap();
        let red = ReducedSystem::new(
            Arc::clone(&ex.system),
            Arc::clone(&ex.connection),
            Arc::clone(&ex.discrete_connection),
        );
        (red, ex)
    }

    fn disk() -> (ReducedSystem, crate::examples::ExampleBundle) {
        let ex = make_rolling_disk(1.0, 1.0, 1.0, 1.0).unwrap();
        let red = ReducedSystem::new(
            Arc::clone(&ex.system),
            Arc::clone(&ex.connection),
            Arc::clone(&ex.discrete_connection),
        );
        (red, ex)
    }

    fn vec1(x: f64) -> DVector<f64> {
        DVector::from_row_slice(&[x])
    }

    #[test]
    fn f1_tilde_matches_the_trivialized_formula() {
        let (_, ex) = particle(1.0);
        let group = ex.system.bundle().group();
        let q0 = ex.system.bundle().point(&[0.0], &[0.0]).unwrap();
        let w = group.element(&[0.3]).unwrap();
        // A_d^t(0, 1) = -1/2, so the lifted fiber is w + 1/2.
        let q1 = f1_tilde(&ex.discrete_connection, &q0, &w, &vec1(1.0));
        assert_eq!(q1.project()[0], 1.0);
        assert!((q1.fiber().coords()[0] - 0.8).abs() < 1e-15);

        // Identity data with A_d^t(r, r) = e stays put.
        let same = f1_tilde(&ex.discrete_connection, &q0, &group.identity(), &vec1(0.0));
        assert!(same.displacement_from(&q0).norm() < 1e-15);
    }

    #[test]
    fn f2_is_the_conjugated_second_step() {
        let (_, ex) = disk();
        let group = ex.system.bundle().group();
        let h0 = group.element(&[0.5, -1.0, 2.0]).unwrap();
        let th0 = group.element(&[0.1, 0.2, 0.3]).unwrap();
        let th1 = group.element(&[-0.4, 0.5, 1.0]).unwrap();
        let out = f2_t(
            &ex.discrete_connection,
            &vec1(0.2),
            &h0,
            &th0,
            &vec1(0.4),
            &th1,
            &vec1(0.6),
        );
        // Abelian fibers make the conjugation trivial.
        assert!(out.displacement_from(&th1).norm() < 1e-15);
    }

    #[test]
    fn projection_recovers_the_connection_increment() {
        let (red, ex) = particle(0.6);
        let cfg = SolverConfig::default();
        let q0 = ex.system.bundle().point(&[0.0], &[0.0]).unwrap();
        let q1 = ex.system.bundle().point(&[0.1], &[0.005]).unwrap();
        let (curve, _) = dla_trajectory(&ex.system, &q0, &q1, 12, &cfg).unwrap();
        let projected = red.project_curve(&curve).unwrap();
        for k in 0..projected.steps() {
            let (xk, yk) = (
                curve.point(k).project()[0],
                curve.point(k).fiber().coords()[0],
            );
            let (xn, yn) = (
                curve.point(k + 1).project()[0],
                curve.point(k + 1).fiber().coords()[0],
            );
            let expect = yn - yk - 0.6 * (xn * xn - xk * xk) / 2.0;
            assert!((projected.states[k].fiber_step.coords()[0] - expect).abs() < 1e-13);
            assert_eq!(projected.states[k].base[0], xk);
        }
    }

    #[test]
    fn reduced_data_is_action_invariant() {
        // chi and the reduced lagrangian of a projected pair equal the
        // unreduced values.
        let (red, ex) = particle(0.3);
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..40 {
            let q0 = ex
                .system
                .bundle()
                .point(&[rng.random_range(-1.0..1.0)], &[rng.random_range(-1.0..1.0)])
                .unwrap();
            let q1 = ex
                .system
                .bundle()
                .point(&[rng.random_range(-1.0..1.0)], &[rng.random_range(-1.0..1.0)])
                .unwrap();
            let w = ex.discrete_connection.form(&q0, &q1);
            let theta = w.conjugate(&q0.fiber().inverse());
            let chi_hat = red.kinematic(q0.project(), &theta, q1.project());
            let chi = ex.system.constraint_residual(&q0, &q1);
            assert!((chi_hat - chi).norm() < 1e-12);
            let l_hat = red.lagrangian(q0.project(), &theta, q1.project());
            assert!((l_hat - ex.system.lagrangian(&q0, &q1)).abs() < 1e-12);
        }
    }

    #[test]
    fn reduced_gradients_fall_back_consistently() {
        let (red, ex) = particle(0.8);
        // Strip the analytic derivatives off the connection to force the
        // finite-difference path.
        let bundle = ex.system.bundle().clone();
        let group = bundle.group();
        let fd = ReducedSystem::new(
            Arc::clone(&ex.system),
            Arc::clone(&ex.connection),
            Arc::new(AffineDiscreteConnection::new(bundle, move |r0, r1| {
                GroupElement::new(
                    group,
                    DVector::from_row_slice(&[-0.8 * (r1[0] * r1[0] - r0[0] * r0[0]) / 2.0]),
                )
            })),
        );
        assert!(red.has_analytic_path());
        assert!(!fd.has_analytic_path());
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..25 {
            let r0 = vec1(rng.random_range(-1.0..1.0));
            let r1 = vec1(rng.random_range(-1.0..1.0));
            let theta = GroupElement::new(
                red.system().bundle().group(),
                vec1(rng.random_range(-1.0..1.0)),
            );
            let (a0, a1, a2) = red.lagrangian_gradients(&r0, &theta, &r1).unwrap();
            let (f0, f1, f2) = fd.lagrangian_gradients(&r0, &theta, &r1).unwrap();
            assert!((a0 - f0).norm() < 1e-6);
            assert!((a1 - f1).norm() < 1e-6);
            assert!((a2 - f2).norm() < 1e-6);

            let (am, ap) = red.forces(&r0, &theta, &r1).unwrap();
            let (fm, fp) = fd.forces(&r0, &theta, &r1).unwrap();
            assert!((am - fm).norm() < 1e-6);
            assert!((ap - fp).norm() < 1e-6);
        }
    }

    #[test]
    fn particle_horizontal_residual_matches_the_balance_formula() {
        let (red, _) = particle(0.4);
        let group = red.system().bundle().group();
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..40 {
            let (r0, r1, r2) = (
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let (w0, w1) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let b = 0.4;
            let u = -((r2 - r1) - (r1 - r0))
                - r1 * (w1 - w0 + b * ((r2 * r2 - r1 * r1) - (r1 * r1 - r0 * r0)) / 2.0);
            let got = red
                .horizontal_residual(
                    &vec1(r0),
                    &group.element(&[w0]).unwrap(),
                    &vec1(r1),
                    &group.element(&[w1]).unwrap(),
                    &vec1(r2),
                    &vec1(1.0),
                )
                .unwrap();
            assert!((got - u).abs() < 1e-10, "got {got}, expected {u}");
        }
    }

    #[test]
    fn disk_residuals_match_the_closed_forms() {
        let (red, _) = disk();
        let group = red.system().bundle().group();
        let (i_spin, j_steer) = (1.0, 1.0);
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..40 {
            let (r0, r1, r2) = (
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let th0: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
            let th1: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
            let t0 = group.element(&th0).unwrap();
            let t1 = group.element(&th1).unwrap();

            let phi = red
                .horizontal_residual(&vec1(r0), &t0, &vec1(r1), &t1, &vec1(r2), &vec1(1.0))
                .unwrap();
            let expect_phi =
                j_steer * (wrap_diff(r1, r0) - wrap_diff(r2, r1));
            assert!((phi - expect_phi).abs() < 1e-10);

            let xi = AlgebraElement::from_slice(&[0.3, -0.7, 0.9]);
            let psi = red
                .vertical_residual(&vec1(r0), &t0, &vec1(r1), &t1, &vec1(r2), &xi)
                .unwrap();
            let expect_psi = 1.0 * (th0[0] - th1[0]) * 0.3
                + 1.0 * (th0[1] - th1[1]) * (-0.7)
                + i_spin * (th0[2] - th1[2]) * 0.9;
            assert!((psi - expect_psi).abs() < 1e-10);
        }
    }

    #[test]
    fn particle_vertical_conditions_are_vacuous() {
        let (red, _) = particle(0.5);
        assert!(red.vertical_basis(&vec1(0.7)).unwrap().is_empty());
    }

    #[test]
    fn reduced_step_satisfies_the_eliminated_recurrence() {
        // theta_k = (1 - b)(r_{k+1}^2 - r_k^2)/2 along reduced solutions.
        for &b in &[0.0, 0.5, 1.0] {
            let (red, _) = particle(b);
            let group = red.system().bundle().group();
            let (r0, r1) = (0.0, 0.1);
            let theta0 = group
                .element(&[(1.0 - b) * (r1 * r1 - r0 * r0) / 2.0])
                .unwrap();
            let step = red
                .step(&vec1(r0), &theta0, &vec1(r1), &SolverConfig::default(), None)
                .unwrap();
            let r2 = step.base_next[0];
            let expect = (1.0 - b) * (r2 * r2 - r1 * r1) / 2.0;
            assert!((step.fiber_step.coords()[0] - expect).abs() < 1e-11);
            // The base continues the scalar recurrence.
            let oracle = particle_base_oracle(r0, r1, 2);
            assert!((r2 - oracle[2]).abs() < 1e-11);
        }
    }

    #[test]
    fn momentum_matches_the_reduced_fiber_gradient() {
        // J_d(q0, q1) = D_2 L^(r0, theta0, r1) theta0^-1 at identity
        // representatives.
        let (red, ex) = particle(0.7);
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..30 {
            let q0 = ex
                .system
                .bundle()
                .point(&[rng.random_range(-1.0..1.0)], &[0.0])
                .unwrap();
            let q1 = ex
                .system
                .bundle()
                .point(&[rng.random_range(-1.0..1.0)], &[rng.random_range(-1.0..1.0)])
                .unwrap();
            let j = momentum_map(&ex.system, &q0, &q1).unwrap();
            let theta0 = ex.discrete_connection.form(&q0, &q1);
            let (_, d2, _) = red
                .lagrangian_gradients(q0.project(), &theta0, q1.project())
                .unwrap();
            assert!((j.full().coords() - d2).norm() < 1e-10);
        }
    }

    #[test]
    fn chaplygin_rejects_the_disk_geometry() {
        let ex = make_rolling_disk(1.0, 1.0, 1.0, 1.0).unwrap();
        let err = build_chaplygin(
            Arc::clone(&ex.system),
            Arc::clone(&ex.discrete_connection),
        );
        assert!(matches!(err, Err(Error::PreconditionFailed(_))));
    }

    #[test]
    fn horizontal_base_trajectory_matches_the_oracle() {
        let (m, mu_z) = (1.0, 0.02);
        let ex = make_particle_3d(m, mu_z).unwrap();
        let inner = SolverConfig::with_tolerance(1e-13);
        let hr = build_horizontal(
            Arc::clone(&ex.system),
            Arc::clone(&ex.connection),
            AlgebraCovector::from_slice(&[mu_z]),
            &inner,
        )
        .unwrap();
        let r0 = DVector::from_row_slice(&[0.0, 0.0]);
        let r1 = DVector::from_row_slice(&[0.1, 0.005]);
        let path = hr
            .base
            .trajectory(&r0, &r1, 20, &SolverConfig::with_tolerance(1e-11))
            .unwrap();
        let oracle = particle_base_oracle(0.0, 0.1, 20);
        for (k, p) in path.iter().enumerate() {
            assert!((p[0] - oracle[k]).abs() < 1e-9);
            assert!((p[1] - (oracle[k] * oracle[k]) / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn horizontal_rejects_mismatched_momentum_dimension() {
        let ex = make_particle_3d(1.0, 0.02).unwrap();
        let err = build_horizontal(
            Arc::clone(&ex.system),
            Arc::clone(&ex.connection),
            AlgebraCovector::from_slice(&[0.1, 0.2]),
            &SolverConfig::default(),
        );
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }
}
