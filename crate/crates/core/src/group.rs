//! The symmetry group `G = R^a x (S^1)^b` and its algebra.
//!
//! Circle coordinates live in `R mod 2*pi` and are reduced to `[0, 2*pi)`
//! after every operation. Differences of circle coordinates that feed
//! lagrangians go through [`wrap_diff`] / [`unwrap_near`], which pick the
//! representative nearest the previous value.
//!
//! Only abelian products are shipped concretely; the operation surface
//! (translations, adjoint, coadjoint) carries the full nonabelian contract
//! so matrix groups can be added without interface changes.

use std::f64::consts::{PI, TAU};

use nalgebra::DVector;

use crate::{Error, Result};

/// Reduce an angle to `[0, 2*pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Representative of `a - b` in `(-pi, pi]`.
pub fn wrap_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Representative of `x` (mod `2*pi`) nearest to `anchor`.
pub fn unwrap_near(x: f64, anchor: f64) -> f64 {
    anchor + wrap_diff(x, anchor)
}

/// Which side a translation acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Shape of the abelian product group: `linear` copies of `R` followed by
/// `circular` copies of `S^1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupSpec {
    linear: usize,
    circular: usize,
}

impl GroupSpec {
    pub fn new(linear: usize, circular: usize) -> Result<Self> {
        if linear + circular == 0 {
            return Err(Error::InvalidSystem(
                "group must have at least one dimension".into(),
            ));
        }
        Ok(Self { linear, circular })
    }

    pub fn dim(&self) -> usize {
        self.linear + self.circular
    }

    pub fn linear_dims(&self) -> usize {
        self.linear
    }

    pub fn circle_dims(&self) -> usize {
        self.circular
    }

    /// Whether coordinate `i` is a circle coordinate.
    pub fn is_circular(&self, i: usize) -> bool {
        i >= self.linear && i < self.dim()
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement {
            spec: *self,
            coords: DVector::zeros(self.dim()),
        }
    }

    pub fn element(&self, coords: &[f64]) -> Result<GroupElement> {
        if coords.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: coords.len(),
            });
        }
        Ok(GroupElement::new(*self, DVector::from_row_slice(coords)))
    }

    pub(crate) fn normalize(&self, coords: &mut DVector<f64>) {
        for i in self.linear..self.dim() {
            coords[i] = normalize_angle(coords[i]);
        }
    }

    /// Push a tangent vector at some group point to its left or right
    /// translate. Identity on coordinates for abelian products.
    pub fn translate_tangent(&self, v: &DVector<f64>, _g: &GroupElement, _side: Side) -> DVector<f64> {
        v.clone()
    }

    /// Pull a covector along a left or right translation so that the
    /// pairing with translated tangents is preserved. Identity on
    /// coordinates for abelian products.
    pub fn translate_cotangent(
        &self,
        alpha: &DVector<f64>,
        _g: &GroupElement,
        _side: Side,
    ) -> DVector<f64> {
        alpha.clone()
    }

    /// Adjoint action `Ad_g(xi)`; trivial for abelian products.
    pub fn adjoint(&self, _g: &GroupElement, xi: &AlgebraElement) -> AlgebraElement {
        xi.clone()
    }

    /// Coadjoint action `Ad*_g(mu)`; trivial for abelian products.
    pub fn coadjoint(&self, _g: &GroupElement, mu: &AlgebraCovector) -> AlgebraCovector {
        mu.clone()
    }
}

/// A point of `G`, with circle coordinates stored in `[0, 2*pi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    spec: GroupSpec,
    coords: DVector<f64>,
}

impl GroupElement {
    pub fn new(spec: GroupSpec, mut coords: DVector<f64>) -> Self {
        assert_eq!(coords.len(), spec.dim(), "group coordinate length");
        spec.normalize(&mut coords);
        Self { spec, coords }
    }

    pub fn spec(&self) -> GroupSpec {
        self.spec
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    /// Group law. Componentwise addition with circle reduction.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.spec != other.spec {
            return Err(Error::DimensionMismatch {
                expected: self.spec.dim(),
                found: other.spec.dim(),
            });
        }
        Ok(self.mul(other))
    }

    /// Unchecked group law for call sites where both factors are known to
    /// share a spec.
    pub(crate) fn mul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.spec, other.spec);
        GroupElement::new(self.spec, &self.coords + &other.coords)
    }

    pub fn inverse(&self) -> Self {
        GroupElement::new(self.spec, -&self.coords)
    }

    /// Conjugation `by * self * by^-1`; identity map for abelian products,
    /// spelled out through the group law so the call sites stay correct for
    /// nonabelian extensions.
    pub fn conjugate(&self, by: &Self) -> Self {
        by.mul(self).mul(&by.inverse())
    }

    /// Distance to the identity, with circle coordinates measured through
    /// the wrapped difference.
    pub fn norm_from_identity(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.spec.dim() {
            let d = if self.spec.is_circular(i) {
                wrap_diff(self.coords[i], 0.0)
            } else {
                self.coords[i]
            };
            s += d * d;
        }
        s.sqrt()
    }

    /// Wrapped coordinate difference `self - other`, suitable as a chart
    /// displacement near `other`.
    pub fn displacement_from(&self, other: &Self) -> DVector<f64> {
        DVector::from_fn(self.spec.dim(), |i, _| {
            if self.spec.is_circular(i) {
                wrap_diff(self.coords[i], other.coords[i])
            } else {
                self.coords[i] - other.coords[i]
            }
        })
    }
}

/// An element of the Lie algebra of `G`, in the coordinate frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraElement {
    coords: DVector<f64>,
}

impl AlgebraElement {
    pub fn new(coords: DVector<f64>) -> Self {
        Self { coords }
    }

    pub fn from_slice(coords: &[f64]) -> Self {
        Self {
            coords: DVector::from_row_slice(coords),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            coords: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }
}

/// An element of the dual of the Lie algebra; pairing is the dot product.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraCovector {
    coords: DVector<f64>,
}

impl AlgebraCovector {
    pub fn new(coords: DVector<f64>) -> Self {
        Self { coords }
    }

    pub fn from_slice(coords: &[f64]) -> Self {
        Self {
            coords: DVector::from_row_slice(coords),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn pair(&self, xi: &AlgebraElement) -> f64 {
        self.coords.dot(xi.coords())
    }
}
