//! Rotationally symmetric metrics on a one-dimensional profile grid.
//!
//! A metric `g = phi(x)^2 dx^2 + psi(x)^2 g_{S^2}` lives on a fixed coordinate
//! grid over `[0, 1]`. The closed topology pins `psi = 0` at both ends (round
//! poles of an `S^3`); the periodic topology wraps around (`S^2 x S^1`).
//! Arclength is the derived quantity `ds = phi dx`; differential operators
//! produce arclength derivatives (on closed grids through the chain rule in
//! the exact coordinate) so the flow can keep the coordinate grid fixed while
//! the lapse `phi` evolves.
//!
//! Curvature conventions: `k1` is the sectional curvature of planes containing
//! the axis direction (`-psi_ss / psi`), `k2` the purely spherical one
//! (`(1 - psi_s^2) / psi^2`). Ricci eigenvalues follow as `ric_ss = 2 k1`,
//! `ric_sphere = k1 + k2`, and the scalar curvature is `4 k1 + 2 k2`. At the
//! poles both sectional curvatures reduce to `-psi_sss / psi_s`, evaluated
//! with one-sided stencils.

pub mod interp;
pub mod stencil;

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, real_usize, Scalar};
use stencil::{
    apply_four, apply_wide, d1_interior, d2_interior, left_end_derivative,
    pole_parity_d1_row, pole_parity_d1_row_right, right_end_derivative, symmetric_sum,
    wide_window_closed,
};

/// Relative floor below which an interior profile radius counts as singular.
pub const PSI_FLOOR_REL: f64 = 1e-8;

/// Pole closure tolerance applied by the constructors.
pub const DEFAULT_POLE_TOL: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// `S^3`: the profile closes with `psi = 0`, `|psi_s| = 1` at both ends.
    ClosedIntervalWithPoles,
    /// `S^2 x S^1`: the grid wraps around, `psi > 0` everywhere.
    Periodic,
}

/// Coordinate grid shared by every slice of a flow.
///
/// `dx` is the authoritative interval table. Uniform constructors fill it with
/// one repeated value instead of differencing `x`, so exactly uniform grids
/// stay exactly uniform in floating point.
#[derive(Debug, Clone)]
pub struct ProfileGrid<S> {
    x: Vec<S>,
    dx: Vec<S>,
    topology: Topology,
    /// Lazily built five-node derivative rows for the interior nodes; the
    /// rows depend only on `dx`, so one grid shared across a whole flow pays
    /// the weight construction cost once.
    wide_rows: OnceLock<Vec<WideRow<S>>>,
}

/// Cached canonical derivative weight rows for one interior node.
#[derive(Debug, Clone)]
pub(crate) struct WideRow<S> {
    pub(crate) start: usize,
    pub(crate) d1: [S; 5],
    pub(crate) d2: [S; 5],
}

impl<S: PartialEq> PartialEq for ProfileGrid<S> {
    fn eq(&self, other: &Self) -> bool {
        self.x == other.x && self.dx == other.dx && self.topology == other.topology
    }
}

impl<S: Scalar> ProfileGrid<S> {
    pub fn uniform(n: usize, topology: Topology) -> Result<Self> {
        let min = match topology {
            Topology::ClosedIntervalWithPoles => 5,
            Topology::Periodic => 3,
        };
        if n < min {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least {min} nodes, got {n}"
            )));
        }
        match topology {
            Topology::ClosedIntervalWithPoles => {
                let denom = real_usize::<S>(n - 1);
                let step = S::one() / denom;
                let x: Vec<S> = (0..n).map(|i| real_usize::<S>(i) / denom).collect();
                Ok(Self {
                    x,
                    dx: vec![step; n - 1],
                    topology,
                    wide_rows: OnceLock::new(),
                })
            }
            Topology::Periodic => {
                let denom = real_usize::<S>(n);
                let step = S::one() / denom;
                let x: Vec<S> = (0..n).map(|i| real_usize::<S>(i) / denom).collect();
                Ok(Self {
                    x,
                    dx: vec![step; n],
                    topology,
                    wide_rows: OnceLock::new(),
                })
            }
        }
    }

    pub fn from_coords(x: Vec<S>, topology: Topology) -> Result<Self> {
        for w in x.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidParameter(
                    "grid coordinates must increase strictly".into(),
                ));
            }
        }
        match topology {
            Topology::ClosedIntervalWithPoles => {
                if x.len() < 5 {
                    return Err(Error::InvalidParameter("closed grid needs >= 5 nodes".into()));
                }
                if x[0] != S::zero() || x[x.len() - 1] != S::one() {
                    return Err(Error::InvalidParameter(
                        "closed grid must span exactly [0, 1]".into(),
                    ));
                }
                let dx = x.windows(2).map(|w| w[1] - w[0]).collect();
                Ok(Self {
                    x,
                    dx,
                    topology,
                    wide_rows: OnceLock::new(),
                })
            }
            Topology::Periodic => {
                if x.len() < 3 {
                    return Err(Error::InvalidParameter("periodic grid needs >= 3 nodes".into()));
                }
                if x[0] != S::zero() || x[x.len() - 1] >= S::one() {
                    return Err(Error::InvalidParameter(
                        "periodic grid coordinates must lie in [0, 1)".into(),
                    ));
                }
                let n = x.len();
                let mut dx: Vec<S> = x.windows(2).map(|w| w[1] - w[0]).collect();
                dx.push(S::one() - x[n - 1]);
                Ok(Self {
                    x,
                    dx,
                    topology,
                    wide_rows: OnceLock::new(),
                })
            }
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[S] {
        &self.x
    }

    pub fn dx(&self) -> &[S] {
        &self.dx
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// True when the interval table is a bitwise palindrome, which is what the
    /// reflection `x -> 1 - x` needs to act by pure node permutation.
    pub fn is_reflection_symmetric(&self) -> bool {
        let m = self.dx.len();
        (0..m / 2).all(|j| self.dx[j] == self.dx[m - 1 - j])
    }

    /// Interior-node derivative weight rows, built on first use (closed
    /// topology only; row `i - 1` serves node `i`).
    pub(crate) fn wide_rows(&self) -> &[WideRow<S>] {
        debug_assert!(matches!(self.topology, Topology::ClosedIntervalWithPoles));
        self.wide_rows.get_or_init(|| {
            let n = self.n();
            (1..n - 1)
                .map(|i| {
                    let (start, d1) = wide_window_closed(&self.dx, n, i, 1);
                    let (_, d2) = wide_window_closed(&self.dx, n, i, 2);
                    WideRow { start, d1, d2 }
                })
                .collect()
        })
    }
}

/// The two-element isometry group generated by the profile reflection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsometryElement {
    Identity,
    Reflection,
}

impl IsometryElement {
    pub fn compose(self, other: IsometryElement) -> IsometryElement {
        if self == other {
            IsometryElement::Identity
        } else {
            IsometryElement::Reflection
        }
    }

    pub fn inverse(self) -> IsometryElement {
        self
    }

    pub fn is_identity(self) -> bool {
        self == IsometryElement::Identity
    }
}

/// Shape parameters for the two-lobe initial metric used in pinch studies.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DumbbellShape<S> {
    /// Value of the interior local minimum of the profile radius.
    pub neck_radius: S,
    /// Value of the two lobe maxima of the profile radius.
    pub lobe_radius: S,
    pub n: usize,
    /// Symmetric shapes are built half-and-mirror so the reflection fixes the
    /// node arrays bitwise; asymmetric ones add a second-harmonic tilt that
    /// shifts the neck off centre.
    pub symmetric: bool,
}

/// Warped product metric sampled on a [`ProfileGrid`].
#[derive(Debug, Clone)]
pub struct WarpedMetric<S> {
    grid: Arc<ProfileGrid<S>>,
    phi: Vec<S>,
    psi: Vec<S>,
    time: S,
}

/// Per-node curvature data of a warped metric.
#[derive(Debug, Clone)]
pub struct CurvatureField<S> {
    pub k1: Vec<S>,
    pub k2: Vec<S>,
    pub ric_ss: Vec<S>,
    pub ric_sphere: Vec<S>,
    pub scalar: Vec<S>,
}

impl<S: Scalar> CurvatureField<S> {
    pub fn max_abs_sectional(&self) -> S {
        let mut m = S::zero();
        for (&a, &b) in self.k1.iter().zip(self.k2.iter()) {
            m = m.max(a.abs()).max(b.abs());
        }
        m
    }

    pub fn min_sectional(&self) -> S {
        let mut m = S::infinity();
        for (&a, &b) in self.k1.iter().zip(self.k2.iter()) {
            m = m.min(a).min(b);
        }
        m
    }

    pub fn max_sectional(&self) -> S {
        let mut m = S::neg_infinity();
        for (&a, &b) in self.k1.iter().zip(self.k2.iter()) {
            m = m.max(a).max(b);
        }
        m
    }

    /// Ratio of extreme sectional curvatures; infinite unless strictly pinched
    /// positive, which is the regime where "round" is meaningful.
    pub fn roundness(&self) -> S {
        let lo = self.min_sectional();
        if lo <= S::zero() {
            S::infinity()
        } else {
            self.max_sectional() / lo
        }
    }
}

impl<S: Scalar> WarpedMetric<S> {
    /// Builds a metric from raw profiles, checking structure but not closure.
    pub fn from_profiles(
        grid: Arc<ProfileGrid<S>>,
        phi: Vec<S>,
        psi: Vec<S>,
        time: S,
    ) -> Result<Self> {
        let n = grid.n();
        if phi.len() != n || psi.len() != n {
            return Err(Error::GridMismatch(format!(
                "profiles of length {}/{} on a grid of {} nodes",
                phi.len(),
                psi.len(),
                n
            )));
        }
        if !time.is_finite() {
            return Err(Error::InvalidMetric("non-finite time".into()));
        }
        for (i, &p) in phi.iter().enumerate() {
            if !(p.is_finite() && p > S::zero()) {
                return Err(Error::InvalidMetric(format!("phi[{i}] = {p} not positive")));
            }
        }
        match grid.topology() {
            Topology::ClosedIntervalWithPoles => {
                if psi[0] != S::zero() || psi[n - 1] != S::zero() {
                    return Err(Error::InvalidMetric("closed profile must vanish at poles".into()));
                }
                for (i, &p) in psi.iter().enumerate().take(n - 1).skip(1) {
                    if !(p.is_finite() && p > S::zero()) {
                        return Err(Error::InvalidMetric(format!(
                            "psi[{i}] = {p} not positive in the interior"
                        )));
                    }
                }
            }
            Topology::Periodic => {
                for (i, &p) in psi.iter().enumerate() {
                    if !(p.is_finite() && p > S::zero()) {
                        return Err(Error::InvalidMetric(format!("psi[{i}] = {p} not positive")));
                    }
                }
            }
        }
        Ok(Self { grid, phi, psi, time })
    }

    /// Rebuilds a metric on the same grid with new profiles, re-running the
    /// structural checks; the stepping loop uses this so every accepted state
    /// is a valid metric.
    pub fn with_profiles(&self, phi: Vec<S>, psi: Vec<S>, time: S) -> Result<Self> {
        Self::from_profiles(Arc::clone(&self.grid), phi, psi, time)
    }

    /// Round `S^3` of the given radius: `psi = r sin(s / r)`, constant lapse.
    pub fn round_sphere(radius: S, n: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > S::zero()) {
            return Err(Error::InvalidParameter("sphere radius must be positive".into()));
        }
        let grid = Arc::new(ProfileGrid::uniform(n, Topology::ClosedIntervalWithPoles)?);
        let pi = real::<S>(PI);
        let phi = vec![radius * pi; n];
        let x = grid.x().to_vec();
        let mut psi = mirrored_profile(n, |xi: S| radius * (pi * xi).sin(), &x);
        psi[0] = S::zero();
        psi[n - 1] = S::zero();
        let metric = Self::from_profiles(grid, phi, psi, S::zero())?;
        metric.validate_closure(real(DEFAULT_POLE_TOL))?;
        Ok(metric)
    }

    /// Round cylinder `S^2 x S^1`: constant radius, total circumference `length`.
    pub fn cylinder(radius: S, length: S, n: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > S::zero()) || !(length.is_finite() && length > S::zero())
        {
            return Err(Error::InvalidParameter(
                "cylinder radius and length must be positive".into(),
            ));
        }
        let grid = Arc::new(ProfileGrid::uniform(n, Topology::Periodic)?);
        Ok(Self {
            grid,
            phi: vec![length; n],
            psi: vec![radius; n],
            time: S::zero(),
        })
    }

    /// Two sphere-like lobes joined by a thin neck.
    ///
    /// The profile is the harmonic pair `A (sin(pi x) + lambda sin(3 pi x))`,
    /// plus a small `sin(2 pi x)` tilt when `symmetric` is false. `lambda` and
    /// `A` are solved so the interior local minimum equals `neck_radius` and
    /// the two lobe maxima equal `lobe_radius`. The lapse is the linear
    /// interpolant of the endpoint profile slopes, which closes both poles
    /// exactly: this family is smooth and pinches at the neck under the flow.
    pub fn dumbbell(shape: &DumbbellShape<S>) -> Result<Self> {
        let DumbbellShape {
            neck_radius,
            lobe_radius,
            n,
            symmetric,
        } = *shape;
        if !(neck_radius.is_finite() && neck_radius > S::zero()) {
            return Err(Error::InvalidParameter("neck radius must be positive".into()));
        }
        if !(lobe_radius.is_finite() && lobe_radius > S::zero()) {
            return Err(Error::InvalidParameter("lobe radius must be positive".into()));
        }
        let ratio = (neck_radius / lobe_radius).to_f64().unwrap_or(f64::NAN);
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidParameter(
                "neck radius must be strictly smaller than the lobe radius".into(),
            ));
        }
        let mu_f = if symmetric { 0.0 } else { DUMBBELL_ASYMMETRY };
        let (lambda_f, max_f) = solve_dumbbell_lambda(ratio, mu_f)?;
        let amp_f = lobe_radius.to_f64().unwrap_or(f64::NAN) / max_f;

        let grid = Arc::new(ProfileGrid::uniform(n, Topology::ClosedIntervalWithPoles)?);
        let pi = real::<S>(PI);
        let amp = real::<S>(amp_f);
        let lambda = real::<S>(lambda_f);
        let mu = real::<S>(mu_f);
        let three = real::<S>(3.0);
        let two = real::<S>(2.0);
        let profile = move |xi: S| {
            amp * ((pi * xi).sin()
                + lambda * (three * pi * xi).sin()
                + mu * (two * pi * xi).sin())
        };
        let x = grid.x().to_vec();
        let mut psi = if symmetric {
            mirrored_profile(n, profile, &x)
        } else {
            x.iter().map(|&xi| profile(xi)).collect()
        };
        psi[0] = S::zero();
        psi[n - 1] = S::zero();
        // Endpoint slopes are A pi (1 + 3 lambda +/- 2 mu); interpolating them
        // linearly makes |psi_s| = 1 at both poles. For symmetric shapes the
        // tilt is exactly zero, so the lapse is exactly constant.
        let base = amp * pi * (S::one() + three * lambda);
        let tilt = amp * pi * (two * mu);
        let phi: Vec<S> = x
            .iter()
            .map(|&xi| base + tilt * (S::one() - two * xi))
            .collect();
        let metric = Self::from_profiles(grid, phi, psi, S::zero())?;
        metric.validate_closure(real(DEFAULT_POLE_TOL))?;
        Ok(metric)
    }

    pub fn grid(&self) -> &Arc<ProfileGrid<S>> {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn topology(&self) -> Topology {
        self.grid.topology()
    }

    pub fn phi(&self) -> &[S] {
        &self.phi
    }

    pub fn psi(&self) -> &[S] {
        &self.psi
    }

    pub fn time(&self) -> S {
        self.time
    }

    pub fn with_time(mut self, t: S) -> Self {
        self.time = t;
        self
    }

    /// Trapezoid widths of each grid interval in arclength.
    pub fn arc_spacings(&self) -> Vec<S> {
        let half = real::<S>(0.5);
        let n = self.n();
        match self.topology() {
            Topology::ClosedIntervalWithPoles => (0..n - 1)
                .map(|i| self.grid.dx()[i] * ((self.phi[i] + self.phi[i + 1]) * half))
                .collect(),
            Topology::Periodic => (0..n)
                .map(|i| self.grid.dx()[i] * ((self.phi[i] + self.phi[(i + 1) % n]) * half))
                .collect(),
        }
    }

    /// Cumulative arclength positions of the nodes, starting at zero.
    pub fn arclength(&self) -> Vec<S> {
        let h = self.arc_spacings();
        let mut s = Vec::with_capacity(self.n());
        let mut acc = S::zero();
        s.push(acc);
        for i in 0..self.n() - 1 {
            acc = acc + h[i];
            s.push(acc);
        }
        s
    }

    /// Total arclength, reduced in reflection-invariant order.
    pub fn total_arclength(&self) -> S {
        symmetric_sum(&self.arc_spacings())
    }

    pub fn psi_floor(&self) -> S {
        real::<S>(PSI_FLOOR_REL) * self.max_psi()
    }

    pub fn max_psi(&self) -> S {
        self.psi.iter().fold(S::zero(), |m, &v| m.max(v))
    }

    /// Largest profile radius over nodes that are not pinned poles.
    pub fn max_interior_psi(&self) -> S {
        match self.topology() {
            Topology::ClosedIntervalWithPoles => self.psi[1..self.n() - 1]
                .iter()
                .fold(S::zero(), |m, &v| m.max(v)),
            Topology::Periodic => self.max_psi(),
        }
    }

    pub fn min_interior_psi(&self) -> S {
        match self.topology() {
            Topology::ClosedIntervalWithPoles => self.psi[1..self.n() - 1]
                .iter()
                .fold(S::infinity(), |m, &v| m.min(v)),
            Topology::Periodic => self.psi.iter().fold(S::infinity(), |m, &v| m.min(v)),
        }
    }

    /// Checks the smooth-closure conditions at the poles: `psi_s` must be `+1`
    /// on the left and `-1` on the right within `tol`.
    pub fn validate_closure(&self, tol: S) -> Result<()> {
        if self.topology() != Topology::ClosedIntervalWithPoles {
            return Ok(());
        }
        let h = self.arc_spacings();
        let left = left_end_derivative(&h, &self.psi, 5, 1);
        let right = right_end_derivative(&h, &self.psi, 5, 1);
        if (left - S::one()).abs() > tol {
            return Err(Error::InvalidMetric(format!(
                "left pole slope {left} deviates from +1 beyond {tol}"
            )));
        }
        if (right + S::one()).abs() > tol {
            return Err(Error::InvalidMetric(format!(
                "right pole slope {right} deviates from -1 beyond {tol}"
            )));
        }
        Ok(())
    }

    /// First and second arclength derivatives of a node field, with one-sided
    /// five-point stencils at the poles.
    pub fn derivatives_of(&self, u: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        let n = self.n();
        if u.len() != n {
            return Err(Error::GridMismatch(format!(
                "field of length {} on {} nodes",
                u.len(),
                n
            )));
        }
        let h = self.arc_spacings();
        let mut d1 = vec![S::zero(); n];
        let mut d2 = vec![S::zero(); n];
        match self.topology() {
            Topology::ClosedIntervalWithPoles => {
                for i in 1..n - 1 {
                    d1[i] = d1_interior(u[i - 1], u[i], u[i + 1], h[i - 1], h[i]);
                    d2[i] = d2_interior(u[i - 1], u[i], u[i + 1], h[i - 1], h[i]);
                }
                d1[0] = left_end_derivative(&h, u, 5, 1);
                d2[0] = left_end_derivative(&h, u, 5, 2);
                d1[n - 1] = right_end_derivative(&h, u, 5, 1);
                d2[n - 1] = right_end_derivative(&h, u, 5, 2);
            }
            Topology::Periodic => {
                for i in 0..n {
                    let im = (i + n - 1) % n;
                    let ip = (i + 1) % n;
                    d1[i] = d1_interior(u[im], u[i], u[ip], h[im], h[i]);
                    d2[i] = d2_interior(u[im], u[i], u[ip], h[im], h[i]);
                }
            }
        }
        Ok((d1, d2))
    }

    /// Sectional and Ricci curvature at every node, measured with the
    /// high-order operator.
    ///
    /// On closed topology the arclength derivatives are taken through the
    /// chain rule in the exact grid coordinate (`psi_s = psi_x / phi`) with
    /// fourth-order stencils. The arclength table itself carries quadrature
    /// error, and near a pole the cancellations in `1 - psi_s^2` and
    /// `psi_ss / psi` amplify any coordinate error by `1 / psi^2`; working in
    /// the exact coordinate keeps both sectional curvatures uniformly
    /// second-order accurate up to the first interior node. This is the
    /// operator for measurement and classification; time integration uses
    /// [`Self::curvature_compact`], whose biased-row-free closure stays
    /// stable under explicit stepping.
    ///
    /// Fails with `DegenerateGeometry` when an interior radius sits below the
    /// positivity floor; callers must treat that as a singular signal.
    pub fn curvature(&self) -> Result<CurvatureField<S>> {
        self.curvature_inner(true)
    }

    /// Sectional and Ricci curvature from the evolution operator: compact
    /// second differences with a parity-closed tangential slope.
    ///
    /// Time stepping cannot use [`Self::curvature`]: its wide rows are biased
    /// at the first and last interior node, and under explicit integration
    /// those rows feed an exponentially growing sawtooth mode anchored at
    /// the poles. Here the radial curvature `-psi_ss / psi` — the diffusion
    /// part of the flow — comes from fully centred three-point stencils
    /// (which need no end closure at all, since the pole radius is pinned),
    /// while the tangential curvature keeps a fourth-order slope: the
    /// `1 - psi_s^2` cancellation near a pole turns a second-order slope
    /// error into a resolution-independent curvature error, a rough per-node
    /// forcing that the `1/h^3` curvature read-out gain then feeds back
    /// unstably. At the two nodes whose wide windows would be biased the
    /// slope row is closed through the pole by parity (the radius extends
    /// oddly), which is both fourth-order and nearly weightless on the node
    /// itself.
    pub fn curvature_compact(&self) -> Result<CurvatureField<S>> {
        self.curvature_inner(false)
    }

    fn curvature_inner(&self, wide: bool) -> Result<CurvatureField<S>> {
        let n = self.n();
        let floor = self.psi_floor();
        let h = self.arc_spacings();
        let mut k1 = vec![S::zero(); n];
        let mut k2 = vec![S::zero(); n];
        let degenerate = |i: usize, uc: S| Error::DegenerateGeometry {
            node: i,
            psi: uc.to_f64().unwrap_or(f64::NAN),
        };
        match self.topology() {
            Topology::ClosedIntervalWithPoles => {
                let rows = self.grid.wide_rows();
                let dxs = self.grid.dx();
                let left_slope_row =
                    pole_parity_d1_row(dxs[0], dxs[1], dxs[2]);
                let right_slope_row =
                    pole_parity_d1_row_right(dxs[n - 2], dxs[n - 3], dxs[n - 4]);
                for i in 1..n - 1 {
                    let uc = self.psi[i];
                    if uc < floor {
                        return Err(degenerate(i, uc));
                    }
                    let phi_c = self.phi[i];
                    let row = &rows[i - 1];
                    let (psi_x, psi_xx, phi_x) = if wide {
                        (
                            apply_wide(&row.d1, &self.psi, row.start),
                            apply_wide(&row.d2, &self.psi, row.start),
                            apply_wide(&row.d1, &self.phi, row.start),
                        )
                    } else {
                        let (hm, hp) = (dxs[i - 1], dxs[i]);
                        // Slope for the tangential curvature: parity-closed
                        // at the two biased spots, centred wide elsewhere.
                        let slope_x = if i == 1 {
                            apply_four(&left_slope_row, &self.psi, 0)
                        } else if i == n - 2 {
                            apply_four(&right_slope_row, &self.psi, n - 4)
                        } else {
                            apply_wide(&row.d1, &self.psi, row.start)
                        };
                        (
                            slope_x,
                            d2_interior(self.psi[i - 1], uc, self.psi[i + 1], hm, hp),
                            d1_interior(self.phi[i - 1], phi_c, self.phi[i + 1], hm, hp),
                        )
                    };
                    let psi_s = psi_x / phi_c;
                    let psi_ss = if wide {
                        (psi_xx - psi_x * (phi_x / phi_c)) / (phi_c * phi_c)
                    } else {
                        // The radial curvature must stay strictly compact, so
                        // its chain-rule slope is the three-point one even
                        // though the tangential slope above is wider.
                        let psi_x3 = d1_interior(
                            self.psi[i - 1],
                            uc,
                            self.psi[i + 1],
                            dxs[i - 1],
                            dxs[i],
                        );
                        (psi_xx - psi_x3 * (phi_x / phi_c)) / (phi_c * phi_c)
                    };
                    k1[i] = -(psi_ss / uc);
                    k2[i] = (S::one() - psi_s * psi_s) / (uc * uc);
                }
                // Smooth closure forces both sectional curvatures to the same
                // pole limit -psi_sss / psi_s.
                let dl1 = left_end_derivative(&h, &self.psi, 5, 1);
                let dl3 = left_end_derivative(&h, &self.psi, 5, 3);
                k1[0] = -(dl3 / dl1);
                k2[0] = k1[0];
                let dr1 = right_end_derivative(&h, &self.psi, 5, 1);
                let dr3 = right_end_derivative(&h, &self.psi, 5, 3);
                k1[n - 1] = -(dr3 / dr1);
                k2[n - 1] = k1[n - 1];
            }
            Topology::Periodic => {
                for i in 0..n {
                    let im = (i + n - 1) % n;
                    let ip = (i + 1) % n;
                    let uc = self.psi[i];
                    if uc < floor {
                        return Err(degenerate(i, uc));
                    }
                    let psi_s = d1_interior(self.psi[im], uc, self.psi[ip], h[im], h[i]);
                    let psi_ss = d2_interior(self.psi[im], uc, self.psi[ip], h[im], h[i]);
                    k1[i] = -(psi_ss / uc);
                    k2[i] = (S::one() - psi_s * psi_s) / (uc * uc);
                }
            }
        }
        let two = real::<S>(2.0);
        let four = real::<S>(4.0);
        let ric_ss: Vec<S> = k1.iter().map(|&a| two * a).collect();
        let ric_sphere: Vec<S> = k1.iter().zip(k2.iter()).map(|(&a, &b)| a + b).collect();
        let scalar: Vec<S> = k1
            .iter()
            .zip(k2.iter())
            .map(|(&a, &b)| four * a + two * b)
            .collect();
        Ok(CurvatureField {
            k1,
            k2,
            ric_ss,
            ric_sphere,
            scalar,
        })
    }

    /// Integral of a node field against the volume form `4 pi phi psi^2 dx`,
    /// accumulated in reflection-invariant order.
    pub fn integrate(&self, field: &[S]) -> Result<S> {
        let n = self.n();
        if field.len() != n {
            return Err(Error::GridMismatch(format!(
                "field of length {} on {} nodes",
                field.len(),
                n
            )));
        }
        let four_pi = real::<S>(4.0 * PI);
        let half = real::<S>(0.5);
        let w =
            |i: usize| four_pi * field[i] * self.phi[i] * (self.psi[i] * self.psi[i]);
        let contributions: Vec<S> = match self.topology() {
            Topology::ClosedIntervalWithPoles => (0..n - 1)
                .map(|i| self.grid.dx()[i] * ((w(i) + w(i + 1)) * half))
                .collect(),
            Topology::Periodic => (0..n)
                .map(|i| self.grid.dx()[i] * ((w(i) + w((i + 1) % n)) * half))
                .collect(),
        };
        Ok(symmetric_sum(&contributions))
    }

    pub fn volume(&self) -> Result<S> {
        self.integrate(&vec![S::one(); self.n()])
    }

    /// Applies a grid isometry by node permutation. Reflection requires the
    /// interval table to be a palindrome.
    pub fn apply_isometry(&self, a: IsometryElement) -> Result<Self> {
        match a {
            IsometryElement::Identity => Ok(self.clone()),
            IsometryElement::Reflection => {
                if !self.grid.is_reflection_symmetric() {
                    return Err(Error::AsymmetricGrid(
                        "interval table is not palindromic".into(),
                    ));
                }
                let n = self.n();
                let (phi, psi) = match self.topology() {
                    Topology::ClosedIntervalWithPoles => (
                        self.phi.iter().rev().cloned().collect(),
                        self.psi.iter().rev().cloned().collect(),
                    ),
                    Topology::Periodic => {
                        // x -> 1 - x fixes node 0 and reverses the rest.
                        let perm = |v: &[S]| -> Vec<S> {
                            (0..n).map(|i| v[(n - i) % n]).collect()
                        };
                        (perm(&self.phi), perm(&self.psi))
                    }
                };
                Ok(Self {
                    grid: Arc::clone(&self.grid),
                    phi,
                    psi,
                    time: self.time,
                })
            }
        }
    }

    /// Multiplies both profiles by `factor` (a homothety of the metric by
    /// `factor^2`).
    pub fn scaled(&self, factor: S) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            phi: self.phi.iter().map(|&v| v * factor).collect(),
            psi: self.psi.iter().map(|&v| v * factor).collect(),
            time: self.time,
        }
    }

    /// Multiplies `psi` by `1 + bump(x)` where the bump is a low-frequency sine
    /// package vanishing to first order at the poles, so closure is preserved.
    pub fn with_profile_bump(&self, coeffs: &[S]) -> Result<Self> {
        let pi = real::<S>(PI);
        let x = self.grid.x();
        let mut psi = self.psi.clone();
        for (i, p) in psi.iter_mut().enumerate() {
            let mut u = S::zero();
            for (j, &a) in coeffs.iter().enumerate() {
                let mode = real_usize::<S>(j + 1);
                let b = match self.topology() {
                    Topology::ClosedIntervalWithPoles => {
                        (mode * pi * x[i]).sin() * (pi * x[i]).sin()
                    }
                    Topology::Periodic => (real::<S>(2.0) * mode * pi * x[i]).sin(),
                };
                u = u + a * b;
            }
            *p = *p * (S::one() + u);
        }
        Self::from_profiles(Arc::clone(&self.grid), self.phi.clone(), psi, self.time)
    }
}

fn mirrored_profile<S: Scalar>(n: usize, f: impl Fn(S) -> S, x: &[S]) -> Vec<S> {
    let mut v = vec![S::zero(); n];
    for i in 0..n {
        if 2 * i < n {
            v[i] = f(x[i]);
        } else {
            v[i] = v[n - 1 - i];
        }
    }
    v
}

/// Relative strength of the `sin(2 pi x)` component in asymmetric dumbbells.
const DUMBBELL_ASYMMETRY: f64 = 0.08;

enum ProfileExtrema {
    /// No interior local minimum: the neck has not formed yet.
    NoNeck,
    /// The profile dips non-positive: the third harmonic is too strong.
    NonPositive,
    /// `(smallest local minimum, largest local maximum)`.
    Neck(f64, f64),
}

/// Extrema of the normalised dumbbell profile
/// `sin(pi x) + lambda sin(3 pi x) + mu sin(2 pi x)` on a fine sample.
fn dumbbell_profile_extrema(lambda: f64, mu: f64) -> ProfileExtrema {
    const SAMPLES: usize = 2048;
    let f = |x: f64| (PI * x).sin() + lambda * (3.0 * PI * x).sin() + mu * (2.0 * PI * x).sin();
    let vals: Vec<f64> = (0..=SAMPLES)
        .map(|k| f(k as f64 / SAMPLES as f64))
        .collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut has_min = false;
    for k in 1..SAMPLES {
        if vals[k] <= 0.0 {
            return ProfileExtrema::NonPositive;
        }
        if vals[k] <= vals[k - 1] && vals[k] <= vals[k + 1] {
            has_min = true;
            lo = lo.min(vals[k]);
        }
        if vals[k] >= vals[k - 1] && vals[k] >= vals[k + 1] {
            hi = hi.max(vals[k]);
        }
    }
    if has_min {
        ProfileExtrema::Neck(lo, hi)
    } else {
        ProfileExtrema::NoNeck
    }
}

/// Solves for the third-harmonic weight whose profile has
/// `local min / local max = ratio`; returns `(lambda, local max)`.
fn solve_dumbbell_lambda(ratio: f64, mu: f64) -> Result<(f64, f64)> {
    // Effective neck/lobe ratio as a decreasing function of lambda: below the
    // neck-forming threshold it reads 1 (push lambda up), past the positivity
    // limit it reads 0 (pull lambda down).
    let ratio_at = |l: f64| match dumbbell_profile_extrema(l, mu) {
        ProfileExtrema::NoNeck => 1.0,
        ProfileExtrema::NonPositive => 0.0,
        ProfileExtrema::Neck(lo, hi) => lo / hi,
    };
    let mut lo = 0.13;
    let mut hi = 0.999;
    if ratio_at(lo) <= ratio {
        return Err(Error::InvalidParameter(format!(
            "neck/lobe ratio {ratio} too large for a dumbbell; no neck forms"
        )));
    }
    if ratio_at(hi) >= ratio {
        return Err(Error::InvalidParameter(format!(
            "neck/lobe ratio {ratio} too small to realise with this family"
        )));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if ratio_at(mid) > ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    match dumbbell_profile_extrema(lambda, mu) {
        ProfileExtrema::Neck(_, max) => Ok((lambda, max)),
        _ => Err(Error::InvalidParameter(
            "dumbbell profile solve failed to keep a neck".into(),
        )),
    }
}

/// Worst-node relative deviation between two metrics on the same grid:
/// `|dphi| / phi + |dpsi| / max(psi, floor)`, with the smaller of the two
/// profiles in each denominator so the distance is symmetric.
pub fn metric_distance<S: Scalar>(a: &WarpedMetric<S>, b: &WarpedMetric<S>) -> Result<S> {
    if !(Arc::ptr_eq(&a.grid, &b.grid)
        || (a.grid.topology() == b.grid.topology()
            && a.grid.x() == b.grid.x()
            && a.grid.dx() == b.grid.dx()))
    {
        return Err(Error::GridMismatch("metric distance needs a shared grid".into()));
    }
    let floor = real::<S>(PSI_FLOOR_REL) * a.max_psi().max(b.max_psi());
    let mut worst = S::zero();
    for i in 0..a.n() {
        let dphi = (a.phi[i] - b.phi[i]).abs() / a.phi[i].min(b.phi[i]);
        let denom = a.psi[i].min(b.psi[i]).max(floor);
        let dpsi = (a.psi[i] - b.psi[i]).abs() / denom;
        worst = worst.max(dphi + dpsi);
    }
    Ok(worst)
}
