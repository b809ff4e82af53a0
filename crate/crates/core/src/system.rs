//! Discrete mechanical systems `(Q, L_d, D, D_d)` with optional force.
//!
//! The variational distribution `D` enters through the annihilator
//! covectors `omega^a(q)` spanning `D_q^o`; the kinematic constraints
//! through level functions `chi(q0, q1)` that vanish on allowed
//! transitions. The library requires as many constraint levels as
//! annihilator covectors so stepping yields square Newton systems.

use nalgebra::{DMatrix, DVector};

use crate::bundle::{BundlePoint, BundleSpec, Covector, TangentVector};
use crate::group::AlgebraElement;
use crate::linalg;
use crate::{Error, Result};

pub type LagrangianFn = dyn Fn(&BundlePoint, &BundlePoint) -> f64 + Send + Sync;
pub type GradientFn =
    dyn Fn(&BundlePoint, &BundlePoint) -> (DVector<f64>, DVector<f64>) + Send + Sync;
pub type AnnihilatorFn = dyn Fn(&BundlePoint) -> Vec<DVector<f64>> + Send + Sync;
pub type ConstraintFn = dyn Fn(&BundlePoint, &BundlePoint) -> DVector<f64> + Send + Sync;
pub type ForceFn = dyn Fn(&BundlePoint, &BundlePoint) -> DVector<f64> + Send + Sync;

/// Discrete force pair: `minus` is a covector at the first point of the
/// pair, `plus` a covector at the second.
pub struct DiscreteForce {
    pub minus: Box<ForceFn>,
    pub plus: Box<ForceFn>,
}

/// Central finite-difference step for first derivatives.
pub(crate) fn fd_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

/// Central finite-difference gradient of a scalar function of stacked
/// bundle coordinates.
pub(crate) fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    let mut xm = x.clone();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        xm[i] = x[i] - h;
        g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        xp[i] = x[i];
        xm[i] = x[i];
    }
    g
}

/// The quadruple `(Q, L_d, D, D_d)` plus optional force.
pub struct DiscreteSystem {
    bundle: BundleSpec,
    lagrangian: Box<LagrangianFn>,
    gradient: Option<Box<GradientFn>>,
    variational_codim: usize,
    annihilator: Box<AnnihilatorFn>,
    constraint_levels: usize,
    kinematic: Box<ConstraintFn>,
    force: Option<DiscreteForce>,
}

/// Builder for [`DiscreteSystem`].
pub struct DiscreteSystemBuilder {
    bundle: BundleSpec,
    lagrangian: Option<Box<LagrangianFn>>,
    gradient: Option<Box<GradientFn>>,
    annihilator: Option<(usize, Box<AnnihilatorFn>)>,
    kinematic: Option<(usize, Box<ConstraintFn>)>,
    force: Option<DiscreteForce>,
}

impl DiscreteSystemBuilder {
    pub fn new(bundle: BundleSpec) -> Self {
        Self {
            bundle,
            lagrangian: None,
            gradient: None,
            annihilator: None,
            kinematic: None,
            force: None,
        }
    }

    pub fn lagrangian(
        mut self,
        f: impl Fn(&BundlePoint, &BundlePoint) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.lagrangian = Some(Box::new(f));
        self
    }

    /// Analytic `(D_1 L_d, D_2 L_d)` in stacked coordinates. Overrides the
    /// finite-difference default.
    pub fn lagrangian_gradient(
        mut self,
        f: impl Fn(&BundlePoint, &BundlePoint) -> (DVector<f64>, DVector<f64>) + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Box::new(f));
        self
    }

    /// The `m` covectors spanning `D_q^o`.
    pub fn variational_constraints(
        mut self,
        m: usize,
        f: impl Fn(&BundlePoint) -> Vec<DVector<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.annihilator = Some((m, Box::new(f)));
        self
    }

    /// The `c` level functions cutting out `D_d`.
    pub fn kinematic_constraints(
        mut self,
        c: usize,
        f: impl Fn(&BundlePoint, &BundlePoint) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.kinematic = Some((c, Box::new(f)));
        self
    }

    pub fn force(
        mut self,
        minus: impl Fn(&BundlePoint, &BundlePoint) -> DVector<f64> + Send + Sync + 'static,
        plus: impl Fn(&BundlePoint, &BundlePoint) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.force = Some(DiscreteForce {
            minus: Box::new(minus),
            plus: Box::new(plus),
        });
        self
    }

    pub fn build(self) -> Result<DiscreteSystem> {
        let lagrangian = self
            .lagrangian
            .ok_or_else(|| Error::InvalidSystem("missing lagrangian".into()))?;
        let (m, annihilator) = self
            .annihilator
            .ok_or_else(|| Error::InvalidSystem("missing variational constraints".into()))?;
        let (c, kinematic) = self
            .kinematic
            .ok_or_else(|| Error::InvalidSystem("missing kinematic constraints".into()))?;
        if m != c {
            return Err(Error::InvalidSystem(format!(
                "need as many kinematic levels as annihilator covectors for a square stepper, got C = {c}, M = {m}"
            )));
        }
        if m > self.bundle.dim() {
            return Err(Error::InvalidSystem(format!(
                "variational codimension {m} exceeds bundle dimension {}",
                self.bundle.dim()
            )));
        }
        Ok(DiscreteSystem {
            bundle: self.bundle,
            lagrangian,
            gradient: self.gradient,
            variational_codim: m,
            annihilator,
            constraint_levels: c,
            kinematic,
            force: self.force,
        })
    }
}

impl DiscreteSystem {
    pub fn builder(bundle: BundleSpec) -> DiscreteSystemBuilder {
        DiscreteSystemBuilder::new(bundle)
    }

    pub fn bundle(&self) -> &BundleSpec {
        &self.bundle
    }

    /// Codimension of the variational distribution (count of `omega^a`).
    pub fn variational_codim(&self) -> usize {
        self.variational_codim
    }

    /// Count of kinematic constraint levels.
    pub fn constraint_levels(&self) -> usize {
        self.constraint_levels
    }

    pub fn has_force(&self) -> bool {
        self.force.is_some()
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn lagrangian(&self, q0: &BundlePoint, q1: &BundlePoint) -> f64 {
        (self.lagrangian)(q0, q1)
    }

    /// `(D_1 L_d, D_2 L_d)` in stacked coordinates: analytic when supplied,
    /// else central finite differences.
    pub fn gradients(&self, q0: &BundlePoint, q1: &BundlePoint) -> Result<(DVector<f64>, DVector<f64>)> {
        if !self.lagrangian(q0, q1).is_finite() {
            return Err(Error::NonFinite("lagrangian"));
        }
        if let Some(g) = &self.gradient {
            return Ok(g(q0, q1));
        }
        Ok(self.numeric_gradients(q0, q1))
    }

    /// Finite-difference `(D_1 L_d, D_2 L_d)`, regardless of any analytic
    /// gradient. Used as the independent cross-check of supplied gradients.
    pub fn numeric_gradients(&self, q0: &BundlePoint, q1: &BundlePoint) -> (DVector<f64>, DVector<f64>) {
        let spec = self.bundle.clone();
        let d1 = fd_gradient(
            |x| (self.lagrangian)(&spec.point_from_coords(x), q1),
            &q0.coords(),
        );
        let d2 = fd_gradient(
            |x| (self.lagrangian)(q0, &spec.point_from_coords(x)),
            &q1.coords(),
        );
        (d1, d2)
    }

    /// `D_1 L_d(q0, q1)` as a covector at `q0`.
    pub fn d1_lagrangian(&self, q0: &BundlePoint, q1: &BundlePoint) -> Result<Covector> {
        let (d1, _) = self.gradients(q0, q1)?;
        Ok(Covector::from_coords(q0.clone(), &d1))
    }

    /// `D_2 L_d(q0, q1)` as a covector at `q1`.
    pub fn d2_lagrangian(&self, q0: &BundlePoint, q1: &BundlePoint) -> Result<Covector> {
        let (_, d2) = self.gradients(q0, q1)?;
        Ok(Covector::from_coords(q1.clone(), &d2))
    }

    /// Evaluate the kinematic constraint levels `chi(q0, q1)`.
    pub fn constraint_residual(&self, q0: &BundlePoint, q1: &BundlePoint) -> DVector<f64> {
        let r = (self.kinematic)(q0, q1);
        debug_assert_eq!(r.len(), self.constraint_levels);
        r
    }

    pub(crate) fn force_minus(&self, q0: &BundlePoint, q1: &BundlePoint) -> Option<DVector<f64>> {
        self.force.as_ref().map(|f| (f.minus)(q0, q1))
    }

    pub(crate) fn force_plus(&self, q0: &BundlePoint, q1: &BundlePoint) -> Option<DVector<f64>> {
        self.force.as_ref().map(|f| (f.plus)(q0, q1))
    }

    /// The annihilator rows `omega^a(q)` as an `M x dim Q` matrix.
    pub(crate) fn annihilator_matrix(&self, q: &BundlePoint) -> DMatrix<f64> {
        let rows = (self.annihilator)(q);
        debug_assert_eq!(rows.len(), self.variational_codim);
        linalg::rows_from(&rows, self.bundle.dim())
    }

    /// The covectors spanning `D_q^o`, checked for linear independence.
    pub fn annihilator_basis(&self, q: &BundlePoint) -> Result<Vec<Covector>> {
        let m = self.annihilator_matrix(q);
        let rank = linalg::rank(&m);
        if rank != self.variational_codim {
            return Err(Error::RankDeficient {
                what: "annihilator covectors",
                rank,
                expected: self.variational_codim,
            });
        }
        Ok((0..m.nrows())
            .map(|i| Covector::from_coords(q.clone(), &m.row(i).transpose()))
            .collect())
    }

    /// Orthonormal tangent basis of `D_q` (the nullspace of the
    /// annihilator).
    pub fn distribution_basis(&self, q: &BundlePoint) -> Result<Vec<TangentVector>> {
        let m = self.annihilator_matrix(q);
        if linalg::rank(&m) != self.variational_codim {
            return Err(Error::RankDeficient {
                what: "annihilator covectors",
                rank: linalg::rank(&m),
                expected: self.variational_codim,
            });
        }
        let ns = linalg::nullspace(&m);
        if ns.len() != self.bundle.dim() - self.variational_codim {
            return Err(Error::RankDeficient {
                what: "variational distribution",
                rank: ns.len(),
                expected: self.bundle.dim() - self.variational_codim,
            });
        }
        Ok(ns
            .into_iter()
            .map(|v| TangentVector::from_coords(q.clone(), &v))
            .collect())
    }

    /// Orthonormal basis of `g^D_q`: algebra elements whose generators lie
    /// in `D_q`.
    pub fn vertical_constrained_algebra_basis(&self, q: &BundlePoint) -> Result<Vec<AlgebraElement>> {
        let omega = self.annihilator_matrix(q);
        let dg = self.bundle.fiber_dim();
        // Rows: omega^a applied to the generator of each algebra basis
        // direction.
        let mut pairing = DMatrix::zeros(self.variational_codim, dg);
        for j in 0..dg {
            let mut e = DVector::zeros(dg);
            e[j] = 1.0;
            let gen = q.infinitesimal_generator(&AlgebraElement::new(e));
            let gen_coords = gen.coords();
            for a in 0..self.variational_codim {
                pairing[(a, j)] = omega.row(a).transpose().dot(&gen_coords);
            }
        }
        Ok(linalg::nullspace(&pairing)
            .into_iter()
            .map(AlgebraElement::new)
            .collect())
    }
}

/// An ordered sequence of bundle points over one bundle spec.
#[derive(Clone, Debug)]
pub struct DiscreteCurve {
    points: Vec<BundlePoint>,
}

impl DiscreteCurve {
    pub fn new(points: Vec<BundlePoint>) -> Result<Self> {
        if let Some(first) = points.first() {
            if points.iter().any(|p| p.spec() != first.spec()) {
                return Err(Error::InvalidSystem(
                    "curve points mix bundle specs".into(),
                ));
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &BundlePoint {
        &self.points[k]
    }

    pub fn points(&self) -> &[BundlePoint] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, BundlePoint> {
        self.points.iter()
    }
}
