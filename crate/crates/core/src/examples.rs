//! Factory constructors for the three worked systems, each bundled with
//! its connections, reduction configuration and closed-form reference
//! trajectories.
//!
//! The reference base paths of the planar and spatial particles come from
//! an independent scalar root-finding oracle on the quadratic base
//! recurrence (bisection plus Newton polish), not from the library's own
//! steppers.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bundle::{BundlePoint, BundleSpec};
use crate::connection::{AffineDiscreteConnection, ContinuousConnection};
use crate::group::{wrap_diff, AlgebraCovector, GroupElement, GroupSpec};
use crate::reduction::{build_chaplygin, build_horizontal, HorizontalReduction};
use crate::reconstruction::horizontal_lift_path;
use crate::solver::SolverConfig;
use crate::system::{DiscreteCurve, DiscreteSystem};
use crate::{Error, Result};

/// How an example is meant to be reduced.
#[derive(Clone, Debug)]
pub enum ReductionMode {
    General,
    Chaplygin,
    /// Momentum-level reduction at the given algebra covector, followed by
    /// a Chaplygin stage for the residual base symmetry.
    TwoStage(AlgebraCovector),
}

pub type ReferenceFn =
    Box<dyn Fn(&BundlePoint, &BundlePoint, usize) -> Result<DiscreteCurve> + Send + Sync>;
pub type PairSamplerFn =
    Box<dyn Fn(&mut rand::rngs::StdRng) -> (BundlePoint, BundlePoint) + Send + Sync>;

/// A worked system together with its connections, reduction mode,
/// closed-form reference trajectory and verification helpers.
pub struct ExampleBundle {
    pub name: &'static str,
    pub params: Vec<(&'static str, f64)>,
    pub system: Arc<DiscreteSystem>,
    pub connection: Arc<ContinuousConnection>,
    pub discrete_connection: Arc<AffineDiscreteConnection>,
    pub mode: ReductionMode,
    pub reference: ReferenceFn,
    /// Draws desk-scale pairs satisfying the kinematic constraints.
    pub sample_pair: PairSamplerFn,
    pub default_initial: (BundlePoint, BundlePoint),
    pub default_steps: usize,
}

impl ExampleBundle {
    /// Closed-form trajectory from an admissible initial pair.
    pub fn reference_trajectory(
        &self,
        q0: &BundlePoint,
        q1: &BundlePoint,
        n: usize,
    ) -> Result<DiscreteCurve> {
        (self.reference)(q0, q1, n)
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// Root of the scalar base recurrence
/// `(s - r1) - (r1 - r0) + r1 ((s^2 - r1^2) - (r1^2 - r0^2))/2 = 0`
/// continuing `(r0, r1)`, found by bracketed bisection and polished by
/// Newton to full precision.
fn base_recurrence_next(r0: f64, r1: f64) -> f64 {
    let f = |s: f64| (s - r1) - (r1 - r0) + r1 * ((s * s - r1 * r1) - (r1 * r1 - r0 * r0)) / 2.0;
    let fp = |s: f64| 1.0 + r1 * s;
    let center = 2.0 * r1 - r0;
    let mut width = (r1 - r0).abs().max(1e-3);
    let mut bracket = None;
    for _ in 0..60 {
        let (a, b) = (center - width, center + width);
        if f(a) * f(b) <= 0.0 {
            bracket = Some((a, b));
            break;
        }
        width *= 2.0;
    }
    let mut s = match bracket {
        Some((mut a, mut b)) => {
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if (b - a).abs() < 1e-13 * (1.0 + mid.abs()) {
                    break;
                }
                if f(a) * f(mid) <= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            0.5 * (a + b)
        }
        None => center,
    };
    for _ in 0..6 {
        let d = fp(s);
        if d.abs() < 1e-14 {
            break;
        }
        s -= f(s) / d;
    }
    s
}

/// The independent base-path oracle: `n + 1` points of the scalar
/// recurrence continuing `(r0, r1)`, accurate to roughly `1e-14`.
pub fn particle_base_oracle(r0: f64, r1: f64, n: usize) -> Vec<f64> {
    let mut path = Vec::with_capacity(n + 1);
    path.push(r0);
    if n >= 1 {
        path.push(r1);
    }
    for k in 2..=n {
        path.push(base_recurrence_next(path[k - 2], path[k - 1]));
    }
    path
}

/// The planar free particle with the constraint `y' = x x'`, bundled with
/// the slope-`b` family of discrete connections. `b = 1` is the Chaplygin
/// configuration.
pub fn make_particle_2d(mass: f64, b: f64) -> Result<ExampleBundle> {
    if mass <= 0.0 {
        return Err(Error::InvalidSystem("mass must be positive".into()));
    }
    let bundle = BundleSpec::with_linear_base(1, GroupSpec::new(1, 0)?);
    let group = bundle.group();

    let m = mass;
    let system = DiscreteSystem::builder(bundle.clone())
        .lagrangian(move |q0, q1| {
            let dx = q1.project()[0] - q0.project()[0];
            let dy = q1.fiber().coords()[0] - q0.fiber().coords()[0];
            m * (dx * dx + dy * dy) / 2.0
        })
        .lagrangian_gradient(move |q0, q1| {
            let dx = q1.project()[0] - q0.project()[0];
            let dy = q1.fiber().coords()[0] - q0.fiber().coords()[0];
            (
                DVector::from_row_slice(&[-m * dx, -m * dy]),
                DVector::from_row_slice(&[m * dx, m * dy]),
            )
        })
        .variational_constraints(1, |q| vec![DVector::from_row_slice(&[-q.project()[0], 1.0])])
        .kinematic_constraints(1, |q0, q1| {
            let (x0, y0) = (q0.project()[0], q0.fiber().coords()[0]);
            let (x1, y1) = (q1.project()[0], q1.fiber().coords()[0]);
            DVector::from_row_slice(&[(y1 - y0) - (x1 + x0) * (x1 - x0) / 2.0])
        })
        .build()?;

    let connection =
        ContinuousConnection::new(|q| DMatrix::from_row_slice(1, 1, &[q.project()[0]]));

    let discrete = AffineDiscreteConnection::new(bundle, move |r0, r1| {
        GroupElement::new(
            group,
            DVector::from_row_slice(&[-b * (r1[0] * r1[0] - r0[0] * r0[0]) / 2.0]),
        )
    })
    .with_derivatives(move |r0, r1| {
        (
            DMatrix::from_row_slice(1, 1, &[b * r0[0]]),
            DMatrix::from_row_slice(1, 1, &[-b * r1[0]]),
        )
    });

    let ref_bundle = system.bundle().clone();
    let reference: ReferenceFn = Box::new(move |q0, q1, n| {
        let path = particle_base_oracle(q0.project()[0], q1.project()[0], n);
        let y0 = q0.fiber().coords()[0];
        let r0 = path[0];
        let points = path
            .iter()
            .map(|&r| ref_bundle.point(&[r], &[y0 + (r * r - r0 * r0) / 2.0]))
            .collect::<Result<Vec<_>>>()?;
        DiscreteCurve::new(points)
    });

    let pair_bundle = system.bundle().clone();
    let sample_pair: PairSamplerFn = Box::new(move |rng| {
        use rand::Rng;
        let x0 = rng.random_range(-0.8..0.8);
        let y0 = rng.random_range(-0.8..0.8);
        let x1 = x0 + rng.random_range(-0.1..0.1);
        let y1 = y0 + (x1 + x0) * (x1 - x0) / 2.0;
        (
            pair_bundle.point(&[x0], &[y0]).unwrap(),
            pair_bundle.point(&[x1], &[y1]).unwrap(),
        )
    });

    let q0 = system.bundle().point(&[0.0], &[0.0])?;
    let q1 = system.bundle().point(&[0.1], &[0.005])?;

    Ok(ExampleBundle {
        name: "particle2d",
        params: vec![("m", mass), ("b", b)],
        system: Arc::new(system),
        connection: Arc::new(connection),
        discrete_connection: Arc::new(discrete),
        mode: if b == 1.0 {
            ReductionMode::Chaplygin
        } else {
            ReductionMode::General
        },
        reference,
        sample_pair,
        default_initial: (q0, q1),
        default_steps: 100,
    })
}

/// The vertical rolling disk: radius `radius`, mass `mass`, inertia
/// moments `inertia_spin` about the rolling axis and `inertia_steer`
/// about the vertical. Coordinates are stored base-first:
/// `[phi | x, y, theta]` with `phi` and `theta` on circles.
pub fn make_rolling_disk(
    mass: f64,
    radius: f64,
    inertia_spin: f64,
    inertia_steer: f64,
) -> Result<ExampleBundle> {
    if mass <= 0.0 || radius <= 0.0 || inertia_spin <= 0.0 || inertia_steer <= 0.0 {
        return Err(Error::InvalidSystem(
            "disk parameters must be positive".into(),
        ));
    }
    let bundle = BundleSpec::new(vec![true], GroupSpec::new(2, 1)?);
    let group = bundle.group();
    let (m, a, i_spin, j_steer) = (mass, radius, inertia_spin, inertia_steer);

    let diffs = |q0: &BundlePoint, q1: &BundlePoint| {
        let dphi = wrap_diff(q1.project()[0], q0.project()[0]);
        let dx = q1.fiber().coords()[0] - q0.fiber().coords()[0];
        let dy = q1.fiber().coords()[1] - q0.fiber().coords()[1];
        let dth = wrap_diff(q1.fiber().coords()[2], q0.fiber().coords()[2]);
        (dphi, dx, dy, dth)
    };

    let system = DiscreteSystem::builder(bundle.clone())
        .lagrangian(move |q0, q1| {
            let (dphi, dx, dy, dth) = diffs(q0, q1);
            m * (dx * dx + dy * dy) / 2.0 + i_spin * dth * dth / 2.0 + j_steer * dphi * dphi / 2.0
        })
        .lagrangian_gradient(move |q0, q1| {
            let (dphi, dx, dy, dth) = diffs(q0, q1);
            let d2 = DVector::from_row_slice(&[
                j_steer * dphi,
                m * dx,
                m * dy,
                i_spin * dth,
            ]);
            (-&d2, d2)
        })
        .variational_constraints(2, move |q| {
            let phi = q.project()[0];
            vec![
                DVector::from_row_slice(&[0.0, 1.0, 0.0, -a * phi.cos()]),
                DVector::from_row_slice(&[0.0, 0.0, 1.0, -a * phi.sin()]),
            ]
        })
        .kinematic_constraints(2, move |q0, q1| {
            let (dphi, dx, dy, dth) = diffs(q0, q1);
            let mid = q0.project()[0] + dphi / 2.0;
            DVector::from_row_slice(&[
                dx - a * dth * mid.cos(),
                dy - a * dth * mid.sin(),
            ])
        })
        .build()?;

    let connection = ContinuousConnection::flat(1, 3);
    let discrete = AffineDiscreteConnection::new(bundle, move |_, _| group.identity())
        .with_derivatives(|_, _| (DMatrix::zeros(3, 1), DMatrix::zeros(3, 1)));

    let ref_bundle = system.bundle().clone();
    let reference: ReferenceFn = Box::new(move |q0, q1, n| {
        let phi0 = q0.project()[0];
        let dphi = wrap_diff(q1.project()[0], phi0);
        let (x0, y0) = (q0.fiber().coords()[0], q0.fiber().coords()[1]);
        let th0 = q0.fiber().coords()[2];
        let dth = wrap_diff(q1.fiber().coords()[2], th0);
        let amp = a * dth;
        let half = dphi / 2.0;
        let mut points = Vec::with_capacity(n + 1);
        let degenerate = dphi.sin().abs() <= 1e-12;
        let (mut sx, mut sy) = (0.0_f64, 0.0_f64);
        for k in 0..=n {
            let kf = k as f64;
            let (x, y) = if !degenerate {
                let scale = amp * half.cos() / dphi.sin();
                (
                    x0 + scale * ((dphi * kf + phi0).sin() - phi0.sin()),
                    y0 + scale * (phi0.cos() - (dphi * kf + phi0).cos()),
                )
            } else {
                // The sine quotient degenerates (straight rolling or a
                // half-turn of steering per step); sum the fiber
                // increments directly.
                (x0 + amp * sx, y0 + amp * sy)
            };
            let heading = phi0 + kf * dphi + half;
            sx += heading.cos();
            sy += heading.sin();
            points.push(ref_bundle.point(&[phi0 + kf * dphi], &[x, y, th0 + kf * dth])?);
        }
        DiscreteCurve::new(points)
    });

    let pair_bundle = system.bundle().clone();
    let sample_pair: PairSamplerFn = Box::new(move |rng| {
        use rand::Rng;
        let phi0 = rng.random_range(0.0..std::f64::consts::TAU);
        let (x0, y0) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let th0 = rng.random_range(0.0..std::f64::consts::TAU);
        let dphi = rng.random_range(-0.1..0.1);
        let dth = rng.random_range(-0.2..0.2);
        let mid = phi0 + dphi / 2.0;
        let q0 = pair_bundle.point(&[phi0], &[x0, y0, th0]).unwrap();
        let q1 = pair_bundle
            .point(
                &[phi0 + dphi],
                &[x0 + a * dth * mid.cos(), y0 + a * dth * mid.sin(), th0 + dth],
            )
            .unwrap();
        (q0, q1)
    });

    let q0 = system.bundle().point(&[0.0], &[0.0, 0.0, 0.0])?;
    let (dphi0, dth0) = (0.1_f64, 0.2_f64);
    let q1 = system.bundle().point(
        &[dphi0],
        &[
            radius * dth0 * (dphi0 / 2.0).cos(),
            radius * dth0 * (dphi0 / 2.0).sin(),
            dth0,
        ],
    )?;

    Ok(ExampleBundle {
        name: "disk",
        params: vec![
            ("m", mass),
            ("A", radius),
            ("I", inertia_spin),
            ("J", inertia_steer),
        ],
        system: Arc::new(system),
        connection: Arc::new(connection),
        discrete_connection: Arc::new(discrete),
        mode: ReductionMode::General,
        reference,
        sample_pair,
        default_initial: (q0, q1),
        default_steps: 1000,
    })
}

/// The spatial free particle with the constraint `y' = x x'` and the
/// vertical translations along `z` as horizontal symmetry group, reduced
/// at momentum level `mu_z`. Coordinates are `[x, y | z]`.
pub fn make_particle_3d(mass: f64, mu_z: f64) -> Result<ExampleBundle> {
    if mass <= 0.0 {
        return Err(Error::InvalidSystem("mass must be positive".into()));
    }
    let bundle = BundleSpec::with_linear_base(2, GroupSpec::new(1, 0)?);
    let group = bundle.group();
    let m = mass;

    let system = DiscreteSystem::builder(bundle.clone())
        .lagrangian(move |q0, q1| {
            let dx = q1.project()[0] - q0.project()[0];
            let dy = q1.project()[1] - q0.project()[1];
            let dz = q1.fiber().coords()[0] - q0.fiber().coords()[0];
            m * (dx * dx + dy * dy + dz * dz) / 2.0
        })
        .lagrangian_gradient(move |q0, q1| {
            let dx = q1.project()[0] - q0.project()[0];
            let dy = q1.project()[1] - q0.project()[1];
            let dz = q1.fiber().coords()[0] - q0.fiber().coords()[0];
            let d2 = DVector::from_row_slice(&[m * dx, m * dy, m * dz]);
            (-&d2, d2)
        })
        .variational_constraints(1, |q| {
            vec![DVector::from_row_slice(&[-q.project()[0], 1.0, 0.0])]
        })
        .kinematic_constraints(1, |q0, q1| {
            let (x0, y0) = (q0.project()[0], q0.project()[1]);
            let (x1, y1) = (q1.project()[0], q1.project()[1]);
            DVector::from_row_slice(&[(y1 - y0) - (x1 * x1 - x0 * x0) / 2.0])
        })
        .build()?;

    // The splitting W = <d/dy>, H = <d/dx + x d/dy> has horizontal space
    // spanned by the base plane.
    let connection = ContinuousConnection::flat(2, 1);

    // Closed form of the momentum-level connection: the level set of
    // J_d = mu_z is cut out by m (z1 - z0) = mu_z.
    let shift = mu_z / m;
    let discrete = AffineDiscreteConnection::new(bundle, move |_, _| {
        GroupElement::new(group, DVector::from_row_slice(&[-shift]))
    })
    .with_derivatives(|_, _| (DMatrix::zeros(1, 2), DMatrix::zeros(1, 2)));

    let ref_bundle = system.bundle().clone();
    let reference: ReferenceFn = Box::new(move |q0, q1, n| {
        let path = particle_base_oracle(q0.project()[0], q1.project()[0], n);
        let (r0, y0) = (path[0], q0.project()[1]);
        let z0 = q0.fiber().coords()[0];
        let dz = q1.fiber().coords()[0] - z0;
        let points = path
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                ref_bundle.point(
                    &[r, y0 + (r * r - r0 * r0) / 2.0],
                    &[z0 + k as f64 * dz],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        DiscreteCurve::new(points)
    });

    let pair_bundle = system.bundle().clone();
    let sample_pair: PairSamplerFn = Box::new(move |rng| {
        use rand::Rng;
        let x0 = rng.random_range(-0.8..0.8);
        let y0 = rng.random_range(-0.8..0.8);
        let z0 = rng.random_range(-0.8..0.8);
        let x1 = x0 + rng.random_range(-0.1..0.1);
        let y1 = y0 + (x1 * x1 - x0 * x0) / 2.0;
        let z1 = z0 + rng.random_range(-0.1..0.1);
        (
            pair_bundle.point(&[x0, y0], &[z0]).unwrap(),
            pair_bundle.point(&[x1, y1], &[z1]).unwrap(),
        )
    });

    let q0 = system.bundle().point(&[0.0, 0.0], &[0.0])?;
    let q1 = system.bundle().point(&[0.1, 0.005], &[mu_z / m])?;

    Ok(ExampleBundle {
        name: "particle3d",
        params: vec![("m", mass), ("mu_z", mu_z)],
        system: Arc::new(system),
        connection: Arc::new(connection),
        discrete_connection: Arc::new(discrete),
        mode: ReductionMode::TwoStage(AlgebraCovector::from_slice(&[mu_z])),
        reference,
        sample_pair,
        default_initial: (q0, q1),
        default_steps: 100,
    })
}

/// The manual two-stage reduction of the spatial particle: momentum-level
/// reduction along `z`, then a Chaplygin stage for the residual base
/// symmetry, followed by the two reconstructions. Returns the lifted
/// trajectory on the full bundle together with the horizontal reduction of
/// the first stage.
pub fn particle_3d_two_stage(
    mass: f64,
    mu_z: f64,
    q0: &BundlePoint,
    q1: &BundlePoint,
    n: usize,
    config: &SolverConfig,
) -> Result<(DiscreteCurve, HorizontalReduction)> {
    let ex = make_particle_3d(mass, mu_z)?;
    let momentum_gap = (mass * (q1.fiber().coords()[0] - q0.fiber().coords()[0]) - mu_z).abs();
    if momentum_gap > config.residual_tolerance.max(1e-10) {
        return Err(Error::ConstraintViolated {
            residual: momentum_gap,
            tolerance: config.residual_tolerance.max(1e-10),
        });
    }
    let inner = SolverConfig::with_tolerance(1e-13);
    let first = build_horizontal(
        Arc::clone(&ex.system),
        Arc::clone(&ex.connection),
        AlgebraCovector::from_slice(&[mu_z]),
        &inner,
    )?;

    // The first-stage base system is the planar particle in Chaplygin
    // configuration (up to an additive constant in the lagrangian), so the
    // second stage reuses that system with the slope-1 connection.
    let stage2 = make_particle_2d(mass, 1.0)?;
    let second = build_chaplygin(
        Arc::clone(&stage2.system),
        Arc::clone(&stage2.discrete_connection),
    )?;

    let s0 = DVector::from_row_slice(&[q0.project()[0]]);
    let s1 = DVector::from_row_slice(&[q1.project()[0]]);
    let scalar_path = second.base.trajectory(&s0, &s1, n, config)?;

    // Second-stage reconstruction: lift the scalar path to the plane.
    let plane_start = stage2
        .system
        .bundle()
        .point(&[q0.project()[0]], &[q0.project()[1]])?;
    let plane = horizontal_lift_path(
        &stage2.discrete_connection,
        &scalar_path,
        &plane_start,
        config.residual_tolerance.max(1e-9),
    )?;

    // First-stage reconstruction: lift the planar path along the
    // momentum-level connection.
    let bases: Vec<DVector<f64>> = plane.iter().map(|p| p.coords()).collect();
    let lifted = horizontal_lift_path(
        &first.connection,
        &bases,
        q0,
        config.residual_tolerance.max(1e-9),
    )?;
    Ok((lifted, first))
}
