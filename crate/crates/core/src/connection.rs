//! Continuous and affine discrete connections on the trivial bundle, and
//! the mixed curvature comparing the two notions of horizontality.
//!
//! The continuous connection is given by the bundle map `M` whose graph is
//! the horizontal space: `Hor(r, h) = {(dr, M(r, h) dr)}`. The affine
//! discrete connection is generated by the reduced function
//! `A_d^t(r0, r1)`, from which the full form
//! `A_d(q0, q1) = h1 A_d^t(r0, r1) h0^-1` and the discrete horizontal lift
//! are derived; the equivariance identity then holds by construction.

use nalgebra::{DMatrix, DVector};

use crate::bundle::{BundlePoint, BundleSpec, TangentVector};
use crate::group::{AlgebraElement, GroupElement};
use crate::system::fd_step;

pub type MMapFn = dyn Fn(&BundlePoint) -> DMatrix<f64> + Send + Sync;
pub type ReducedFormFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> GroupElement + Send + Sync;
/// Analytic `(D_1 A_d^t, D_2 A_d^t)`, each `dim G x dim R`.
pub type ReducedFormDerivativesFn =
    dyn Fn(&DVector<f64>, &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync;

/// A principal connection described by the graph map `M`.
pub struct ContinuousConnection {
    m_map: Box<MMapFn>,
}

impl ContinuousConnection {
    pub fn new(m_map: impl Fn(&BundlePoint) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self {
            m_map: Box::new(m_map),
        }
    }

    /// A connection whose horizontal space is the coordinate base plane
    /// (`M` identically zero).
    pub fn flat(base_dim: usize, fiber_dim: usize) -> Self {
        Self::new(move |_| DMatrix::zeros(fiber_dim, base_dim))
    }

    /// The graph map `M(r, h)` as a `dim G x dim R` matrix.
    pub fn graph_map(&self, q: &BundlePoint) -> DMatrix<f64> {
        (self.m_map)(q)
    }

    /// Horizontal lift of a base tangent: `(dr, M(r, h) dr)`.
    pub fn horizontal_lift(&self, q: &BundlePoint, dr: &DVector<f64>) -> TangentVector {
        let fiber = self.graph_map(q) * dr;
        TangentVector::new(q.clone(), dr.clone(), fiber)
    }

    /// Connection one-form: `A(dr, dh) = dh - M(r, h) dr`, translated to
    /// the algebra (identity on coordinates for abelian fibers). Vanishes
    /// on the horizontal space and reproduces `xi` on generators.
    pub fn one_form(&self, q: &BundlePoint, v: &TangentVector) -> AlgebraElement {
        let vert = &v.fiber - self.graph_map(q) * &v.base;
        let coords = q.spec().group().translate_tangent(
            &vert,
            &q.fiber().inverse(),
            crate::group::Side::Left,
        );
        AlgebraElement::new(coords)
    }

    /// Horizontal part `v - (A(v))_Q(q)`; idempotent.
    pub fn horizontal_projection(&self, q: &BundlePoint, v: &TangentVector) -> TangentVector {
        let xi = self.one_form(q, v);
        let gen = q.infinitesimal_generator(&xi);
        TangentVector::new(q.clone(), v.base.clone(), &v.fiber - gen.fiber)
    }
}

/// An affine discrete connection generated by `A_d^t(r0, r1)`.
///
/// User-supplied reduced forms must be globally smooth on the base; on the
/// trivial bundle every derived map below is then globally defined.
pub struct AffineDiscreteConnection {
    bundle: BundleSpec,
    reduced_form: Box<ReducedFormFn>,
    derivatives: Option<Box<ReducedFormDerivativesFn>>,
}

impl AffineDiscreteConnection {
    pub fn new(
        bundle: BundleSpec,
        reduced_form: impl Fn(&DVector<f64>, &DVector<f64>) -> GroupElement + Send + Sync + 'static,
    ) -> Self {
        Self {
            bundle,
            reduced_form: Box::new(reduced_form),
            derivatives: None,
        }
    }

    /// Attach analytic derivatives of `A_d^t`; finite differences are used
    /// otherwise.
    pub fn with_derivatives(
        mut self,
        derivatives: impl Fn(&DVector<f64>, &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>)
            + Send
            + Sync
            + 'static,
    ) -> Self {
        self.derivatives = Some(Box::new(derivatives));
        self
    }

    pub fn bundle(&self) -> &BundleSpec {
        &self.bundle
    }

    pub fn has_derivatives(&self) -> bool {
        self.derivatives.is_some()
    }

    /// The generating function `A_d^t(r0, r1) = A_d((r0, e), (r1, e))`.
    pub fn reduced_form(&self, r0: &DVector<f64>, r1: &DVector<f64>) -> GroupElement {
        (self.reduced_form)(r0, r1)
    }

    /// `(D_1 A_d^t, D_2 A_d^t)`: analytic when supplied, else central
    /// finite differences in chart coordinates.
    pub fn reduced_form_derivatives(
        &self,
        r0: &DVector<f64>,
        r1: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        if let Some(df) = &self.derivatives {
            return df(r0, r1);
        }
        let dg = self.bundle.fiber_dim();
        let dr = self.bundle.base_dim();
        let mut d1 = DMatrix::zeros(dg, dr);
        let mut d2 = DMatrix::zeros(dg, dr);
        let mut rp = r0.clone();
        let mut rm = r0.clone();
        for j in 0..dr {
            let h = fd_step(r0[j]);
            rp[j] = r0[j] + h;
            rm[j] = r0[j] - h;
            let ap = self.reduced_form(&rp, r1);
            let am = self.reduced_form(&rm, r1);
            d1.column_mut(j)
                .copy_from(&(ap.displacement_from(&am) / (2.0 * h)));
            rp[j] = r0[j];
            rm[j] = r0[j];
        }
        let mut sp = r1.clone();
        let mut sm = r1.clone();
        for j in 0..dr {
            let h = fd_step(r1[j]);
            sp[j] = r1[j] + h;
            sm[j] = r1[j] - h;
            let ap = self.reduced_form(r0, &sp);
            let am = self.reduced_form(r0, &sm);
            d2.column_mut(j)
                .copy_from(&(ap.displacement_from(&am) / (2.0 * h)));
            sp[j] = r1[j];
            sm[j] = r1[j];
        }
        (d1, d2)
    }

    /// The discrete connection form `A_d(q0, q1) = h1 A_d^t(r0, r1) h0^-1`.
    pub fn form(&self, q0: &BundlePoint, q1: &BundlePoint) -> GroupElement {
        let at = self.reduced_form(q0.project(), q1.project());
        q1.fiber().mul(&at).mul(&q0.fiber().inverse())
    }

    /// Discrete horizontal lift: the point over `r1` making the pair
    /// `(q0, .)` horizontal, `(r1, h0 A_d^t(r0, r1)^-1)`.
    pub fn horizontal_lift(&self, q0: &BundlePoint, r1: &DVector<f64>) -> BundlePoint {
        let at = self.reduced_form(q0.project(), r1);
        let fiber = q0.fiber().mul(&at.inverse());
        BundlePoint::new(self.bundle.clone(), r1.clone(), fiber)
    }

    /// The level `gamma(q) = A_d(q, q)^-1`.
    pub fn level(&self, q: &BundlePoint) -> GroupElement {
        self.form(q, q).inverse()
    }

    /// Directional derivative of the form along a pair of tangents, as a
    /// tangent to `G` at `A_d(q0, q1)` in abelian coordinates. Uses the
    /// analytic derivatives of `A_d^t` when available, otherwise central
    /// differences with step `1e-6` scaled by coordinate magnitude.
    pub fn form_derivative(
        &self,
        q0: &BundlePoint,
        q1: &BundlePoint,
        v0: &TangentVector,
        v1: &TangentVector,
    ) -> DVector<f64> {
        if self.derivatives.is_some() {
            let (d1, d2) = self.reduced_form_derivatives(q0.project(), q1.project());
            // Abelian chart: A_d = h1 + A_d^t(r0, r1) - h0.
            return &v1.fiber - &v0.fiber + d1 * &v0.base + d2 * &v1.base;
        }
        let scale = q0
            .coords()
            .amax()
            .max(q1.coords().amax())
            .max(v0.norm())
            .max(v1.norm());
        let h = 1e-6 * (1.0 + scale);
        let spec = &self.bundle;
        let plus = self.form(
            &spec.point_from_coords(&(q0.coords() + v0.coords() * h)),
            &spec.point_from_coords(&(q1.coords() + v1.coords() * h)),
        );
        let minus = self.form(
            &spec.point_from_coords(&(q0.coords() - v0.coords() * h)),
            &spec.point_from_coords(&(q1.coords() - v1.coords() * h)),
        );
        plus.displacement_from(&minus) / (2.0 * h)
    }
}

/// Mixed curvature `B_m(q0, q1)(v0, v1) = dA_d(Hor(v0), Hor(v1))`,
/// expressed in abelian algebra coordinates at `A_d(q0, q1)`.
pub fn mixed_curvature(
    conn: &ContinuousConnection,
    dconn: &AffineDiscreteConnection,
    q0: &BundlePoint,
    q1: &BundlePoint,
    v0: &TangentVector,
    v1: &TangentVector,
) -> AlgebraElement {
    let h0 = conn.horizontal_projection(q0, v0);
    let h1 = conn.horizontal_projection(q1, v1);
    AlgebraElement::new(dconn.form_derivative(q0, q1, &h0, &h1))
}

/// The part of the mixed curvature taking only the second-slot deformation.
pub fn mixed_curvature_plus(
    conn: &ContinuousConnection,
    dconn: &AffineDiscreteConnection,
    q0: &BundlePoint,
    q1: &BundlePoint,
    v1: &TangentVector,
) -> AlgebraElement {
    let zero = TangentVector::new(
        q0.clone(),
        DVector::zeros(q0.spec().base_dim()),
        DVector::zeros(q0.spec().fiber_dim()),
    );
    mixed_curvature(conn, dconn, q0, q1, &zero, v1)
}

/// The part of the mixed curvature taking only the first-slot deformation.
pub fn mixed_curvature_minus(
    conn: &ContinuousConnection,
    dconn: &AffineDiscreteConnection,
    q0: &BundlePoint,
    q1: &BundlePoint,
    v0: &TangentVector,
) -> AlgebraElement {
    let zero = TangentVector::new(
        q1.clone(),
        DVector::zeros(q1.spec().base_dim()),
        DVector::zeros(q1.spec().fiber_dim()),
    );
    mixed_curvature(conn, dconn, q0, q1, v0, &zero)
}
