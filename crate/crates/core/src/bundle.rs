//! The trivial principal bundle `Q = R x G`.
//!
//! `G` acts on the fiber by left multiplication, `l^Q_g(r, h) = (r, g h)`;
//! the projection onto the base is the quotient map. Base coordinates may
//! be circles too (the rolling disk has base `S^1`), with the same
//! normalization and unwrap conventions as the group.

use nalgebra::DVector;

use crate::group::{normalize_angle, wrap_diff, AlgebraElement, GroupElement, GroupSpec};
use crate::{Error, Result};

/// Default tolerance for deciding that two points share a fiber.
pub const FIBER_TOL: f64 = 1e-9;

/// Shape of the bundle: per-coordinate circle flags for the base, plus the
/// group spec for the fiber.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleSpec {
    base_circle: Vec<bool>,
    group: GroupSpec,
}

impl BundleSpec {
    pub fn new(base_circle: Vec<bool>, group: GroupSpec) -> Self {
        Self { base_circle, group }
    }

    /// A bundle whose base coordinates are all linear.
    pub fn with_linear_base(base_dim: usize, group: GroupSpec) -> Self {
        Self::new(vec![false; base_dim], group)
    }

    pub fn group(&self) -> GroupSpec {
        self.group
    }

    pub fn base_dim(&self) -> usize {
        self.base_circle.len()
    }

    pub fn fiber_dim(&self) -> usize {
        self.group.dim()
    }

    pub fn dim(&self) -> usize {
        self.base_dim() + self.fiber_dim()
    }

    /// Circle flag for a full-coordinate index (base first, then fiber).
    pub fn is_circular(&self, i: usize) -> bool {
        if i < self.base_dim() {
            self.base_circle[i]
        } else {
            self.group.is_circular(i - self.base_dim())
        }
    }

    pub fn base_is_circular(&self, i: usize) -> bool {
        self.base_circle[i]
    }

    pub fn point(&self, base: &[f64], fiber: &[f64]) -> Result<BundlePoint> {
        if base.len() != self.base_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.base_dim(),
                found: base.len(),
            });
        }
        let fiber = self.group.element(fiber)?;
        Ok(BundlePoint::new(
            self.clone(),
            DVector::from_row_slice(base),
            fiber,
        ))
    }

    /// Rebuild a point from stacked coordinates `[base..., fiber...]`,
    /// normalizing circle coordinates.
    pub fn point_from_coords(&self, coords: &DVector<f64>) -> BundlePoint {
        assert_eq!(coords.len(), self.dim(), "bundle coordinate length");
        let base = coords.rows(0, self.base_dim()).into_owned();
        let fiber = GroupElement::new(
            self.group,
            coords.rows(self.base_dim(), self.fiber_dim()).into_owned(),
        );
        BundlePoint::new(self.clone(), base, fiber)
    }

    pub(crate) fn normalize_base(&self, base: &mut DVector<f64>) {
        for (i, &circ) in self.base_circle.iter().enumerate() {
            if circ {
                base[i] = normalize_angle(base[i]);
            }
        }
    }

    /// Wrap-aware difference of base points, `a - b`.
    pub fn base_displacement(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.base_dim(), |i, _| {
            if self.base_circle[i] {
                wrap_diff(a[i], b[i])
            } else {
                a[i] - b[i]
            }
        })
    }
}

/// A point `q = (r, h)` of the bundle, circle coordinates normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct BundlePoint {
    spec: BundleSpec,
    base: DVector<f64>,
    fiber: GroupElement,
}

impl BundlePoint {
    pub fn new(spec: BundleSpec, mut base: DVector<f64>, fiber: GroupElement) -> Self {
        assert_eq!(base.len(), spec.base_dim(), "base coordinate length");
        assert_eq!(fiber.spec(), spec.group(), "fiber group spec");
        spec.normalize_base(&mut base);
        Self { spec, base, fiber }
    }

    pub fn spec(&self) -> &BundleSpec {
        &self.spec
    }

    /// Bundle projection `pi(r, h) = r`.
    pub fn project(&self) -> &DVector<f64> {
        &self.base
    }

    pub fn fiber(&self) -> &GroupElement {
        &self.fiber
    }

    /// Stacked coordinates `[base..., fiber...]`.
    pub fn coords(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.spec.dim());
        c.rows_mut(0, self.spec.base_dim()).copy_from(&self.base);
        c.rows_mut(self.spec.base_dim(), self.spec.fiber_dim())
            .copy_from(self.fiber.coords());
        c
    }

    /// Left action `l^Q_g(r, h) = (r, g h)`.
    pub fn act(&self, g: &GroupElement) -> Result<BundlePoint> {
        let fiber = g.compose(&self.fiber)?;
        Ok(BundlePoint::new(self.spec.clone(), self.base.clone(), fiber))
    }

    /// Infinitesimal generator `xi_Q(q)`: zero base part, the fiber part is
    /// the right translation of `xi` to the fiber point (identity on
    /// coordinates for abelian groups).
    pub fn infinitesimal_generator(&self, xi: &AlgebraElement) -> TangentVector {
        let fiber = self.spec.group().translate_tangent(
            xi.coords(),
            &self.fiber,
            crate::group::Side::Right,
        );
        TangentVector {
            at: self.clone(),
            base: DVector::zeros(self.spec.base_dim()),
            fiber,
        }
    }

    /// The transition element `tau(q, q')`: the unique `g` with
    /// `l^Q_g(q') = q`. Errors when the two points do not share a fiber
    /// within `tol`.
    pub fn transition(&self, other: &BundlePoint, tol: f64) -> Result<GroupElement> {
        let gap = self
            .spec
            .base_displacement(&self.base, &other.base)
            .norm();
        if gap > tol {
            return Err(Error::FiberMismatch {
                residual: gap,
                tolerance: tol,
            });
        }
        self.fiber.compose(&other.fiber.inverse())
    }

    /// Wrap-aware coordinate difference `self - other` as a chart
    /// displacement near `other`.
    pub fn displacement_from(&self, other: &BundlePoint) -> DVector<f64> {
        let a = self.coords();
        let b = other.coords();
        DVector::from_fn(self.spec.dim(), |i, _| {
            if self.spec.is_circular(i) {
                wrap_diff(a[i], b[i])
            } else {
                a[i] - b[i]
            }
        })
    }
}

/// A tangent vector at a bundle point, split into base and fiber parts.
#[derive(Clone, Debug)]
pub struct TangentVector {
    pub at: BundlePoint,
    pub base: DVector<f64>,
    pub fiber: DVector<f64>,
}

impl TangentVector {
    pub fn new(at: BundlePoint, base: DVector<f64>, fiber: DVector<f64>) -> Self {
        assert_eq!(base.len(), at.spec().base_dim());
        assert_eq!(fiber.len(), at.spec().fiber_dim());
        Self { at, base, fiber }
    }

    pub fn from_coords(at: BundlePoint, coords: &DVector<f64>) -> Self {
        let nb = at.spec().base_dim();
        let nf = at.spec().fiber_dim();
        let base = coords.rows(0, nb).into_owned();
        let fiber = coords.rows(nb, nf).into_owned();
        Self { at, base, fiber }
    }

    pub fn coords(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.at.spec().dim());
        c.rows_mut(0, self.base.len()).copy_from(&self.base);
        c.rows_mut(self.base.len(), self.fiber.len())
            .copy_from(&self.fiber);
        c
    }

    pub fn norm(&self) -> f64 {
        self.coords().norm()
    }
}

/// A covector at a bundle point; the pairing with tangents is the dot
/// product of stacked coordinates.
#[derive(Clone, Debug)]
pub struct Covector {
    pub at: BundlePoint,
    pub base: DVector<f64>,
    pub fiber: DVector<f64>,
}

impl Covector {
    pub fn from_coords(at: BundlePoint, coords: &DVector<f64>) -> Self {
        let nb = at.spec().base_dim();
        let nf = at.spec().fiber_dim();
        Self {
            at,
            base: coords.rows(0, nb).into_owned(),
            fiber: coords.rows(nb, nf).into_owned(),
        }
    }

    pub fn coords(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.at.spec().dim());
        c.rows_mut(0, self.base.len()).copy_from(&self.base);
        c.rows_mut(self.base.len(), self.fiber.len())
            .copy_from(&self.fiber);
        c
    }

    pub fn pair(&self, v: &TangentVector) -> f64 {
        self.base.dot(&v.base) + self.fiber.dot(&v.fiber)
    }
}
