//! Gradient soliton data, residuals, closed-form trajectories, and isometry
//! preservation under the flow.
//!
//! A pair `(g, f)` with `Ric + Hess f = lambda g` evolves self-similarly: up
//! to the diffeomorphisms generated by `grad f / sigma`, the metric at time
//! `t` is the initial one scaled by `sigma(t) = 1 - 2 lambda t`. For profile
//! data the diffeomorphism is a flow of the coordinate along characteristics
//! `dy/dtau = -f_s(y) / sigma(tau)`, and the lapse picks up the accumulated
//! stretching `J = dy/ds` of that map.

use super::perelman::spherical_hessian;
use super::{evolve, FlowParams};
use crate::error::{Error, Result};
use crate::geometry::interp::CubicSpline;
use crate::geometry::{metric_distance, IsometryElement, Topology, WarpedMetric};
use crate::scalar::{real, Scalar};

/// A metric together with a soliton potential and constant.
#[derive(Debug, Clone)]
pub struct SolitonData<S> {
    pub metric: WarpedMetric<S>,
    pub potential: Vec<S>,
    pub lambda: S,
}

impl<S: Scalar> SolitonData<S> {
    pub fn new(metric: WarpedMetric<S>, potential: Vec<S>, lambda: S) -> Result<Self> {
        if potential.len() != metric.n() {
            return Err(Error::GridMismatch(format!(
                "potential of length {} on {} nodes",
                potential.len(),
                metric.n()
            )));
        }
        if let Some((i, &v)) = potential.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "potential[{i}] = {v} not finite"
            )));
        }
        if !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} not finite")));
        }
        Ok(SolitonData { metric, potential, lambda })
    }

    /// Einstein special case: zero potential.
    pub fn einstein(metric: WarpedMetric<S>, lambda: S) -> Result<Self> {
        let f = vec![S::zero(); metric.n()];
        Self::new(metric, f, lambda)
    }

    fn is_constant_potential(&self) -> bool {
        let mut lo = S::infinity();
        let mut hi = S::neg_infinity();
        for &v in &self.potential {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo <= real::<S>(1e-12) * (S::one() + hi.abs().max(lo.abs()))
    }
}

/// Largest pointwise deviation from `Ric + Hess f = lambda g`, measured on
/// both eigencomponents (radial and spherical) of the normalized equation.
pub fn soliton_residual<S: Scalar>(data: &SolitonData<S>) -> Result<S> {
    let m = &data.metric;
    let k = m.curvature()?;
    let (f_s, f_ss) = m.derivatives_of(&data.potential)?;
    let (psi_s, _) = m.derivatives_of(m.psi())?;
    let hess_sph = spherical_hessian(m, &psi_s, &f_s, &f_ss);
    let mut worst = S::zero();
    for i in 0..m.n() {
        let rad = (k.ric_ss[i] + f_ss[i] - data.lambda).abs();
        let sph = (k.ric_sphere[i] + hess_sph[i] - data.lambda).abs();
        worst = worst.max(rad.max(sph));
    }
    Ok(worst)
}

/// The scale factor `sigma(t) = 1 - 2 lambda t`, or a domain error when the
/// requested time reaches the extinction horizon of a shrinking soliton.
fn scale_factor<S: Scalar>(lambda: S, t: S) -> Result<S> {
    let sigma = S::one() - real::<S>(2.0) * lambda * t;
    if sigma <= S::zero() {
        let horizon = (real::<S>(2.0) * lambda).recip();
        return Err(Error::SolitonDomain {
            t: t.to_f64().unwrap_or(f64::NAN),
            horizon: horizon.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(sigma)
}

/// The closed-form state of the soliton at time `t`: the initial metric
/// scaled by `sqrt(sigma)` and pulled back along the potential's
/// characteristic flow.
///
/// A constant potential yields the pure scaling. Transport of a non-constant
/// potential is supported on closed profiles only.
pub fn soliton_trajectory<S: Scalar>(data: &SolitonData<S>, t: S) -> Result<WarpedMetric<S>> {
    let sigma = scale_factor(data.lambda, t)?;
    let root = sigma.sqrt();
    if data.is_constant_potential() {
        return Ok(data.metric.scaled(root).with_time(t));
    }
    if data.metric.topology() != Topology::ClosedIntervalWithPoles {
        return Err(Error::Precondition(
            "transport of a non-constant potential needs closed profiles".into(),
        ));
    }

    let m = &data.metric;
    let n = m.n();
    let s = m.arclength();
    let length = *s.last().unwrap();
    let (f_s, f_ss) = m.derivatives_of(&data.potential)?;
    // Accuracy-first resampling: the radius profile has an interior maximum,
    // where a shape-limited interpolant would cost two orders of accuracy in
    // the transported curvature.
    let slope = CubicSpline::natural(s.clone(), f_s)?;
    let curve = CubicSpline::natural(s.clone(), f_ss)?;
    let radius = CubicSpline::natural(s.clone(), m.psi().to_vec())?;

    // Characteristics: dy/dtau = -f_s(y)/sigma(tau), dJ/dtau = -f_ss(y) J/sigma(tau).
    let substeps = 256usize;
    let dtau = t / real::<S>(substeps as f64);
    let half = real::<S>(0.5);
    let sixth = real::<S>(6.0).recip();
    let two = real::<S>(2.0);
    let clamp = |y: S| y.max(S::zero()).min(length);
    let vel = |y: S, sig: S| -(slope.eval(clamp(y)) / sig);
    let stretch = |y: S, j: S, sig: S| -(curve.eval(clamp(y)) * j / sig);

    let mut phi_new = Vec::with_capacity(n);
    let mut psi_new = Vec::with_capacity(n);
    for i in 0..n {
        let mut y = s[i];
        let mut j = S::one();
        for step in 0..substeps {
            let tau = real::<S>(step as f64) * dtau;
            let s0 = S::one() - two * data.lambda * tau;
            let sh = S::one() - two * data.lambda * (tau + half * dtau);
            let s1 = S::one() - two * data.lambda * (tau + dtau);
            let k1y = vel(y, s0);
            let k1j = stretch(y, j, s0);
            let k2y = vel(y + half * dtau * k1y, sh);
            let k2j = stretch(y + half * dtau * k1y, j + half * dtau * k1j, sh);
            let k3y = vel(y + half * dtau * k2y, sh);
            let k3j = stretch(y + half * dtau * k2y, j + half * dtau * k2j, sh);
            let k4y = vel(y + dtau * k3y, s1);
            let k4j = stretch(y + dtau * k3y, j + dtau * k3j, s1);
            y = y + dtau * sixth * (k1y + two * k2y + two * k3y + k4y);
            j = j + dtau * sixth * (k1j + two * k2j + two * k3j + k4j);
        }
        if !(j.is_finite() && j > S::zero()) {
            return Err(Error::InvalidMetric(format!(
                "characteristic map degenerates at node {i}: J = {j}"
            )));
        }
        phi_new.push(root * j * m.phi()[i]);
        psi_new.push(root * radius.eval(clamp(y)));
    }
    psi_new[0] = S::zero();
    psi_new[n - 1] = S::zero();
    m.with_profiles(phi_new, psi_new, t)
}

/// Outcome of comparing the flow of a metric with the flow of its image
/// under an isometry.
#[derive(Debug, Clone, Copy)]
pub struct PreservationReport<S> {
    /// Largest metric distance between simultaneous slices.
    pub max_drift: S,
    /// Last time at which both runs produced comparable slices.
    pub horizon: S,
}

/// Evolves a metric and its isometric image side by side and reports how far
/// the two trajectories drift apart.
///
/// The element must actually fix the initial metric (up to roundoff); the
/// slices of the two runs are then compared directly at matching times. Early
/// termination of either run shortens the reported horizon rather than
/// failing.
pub fn isometry_preservation_check<S: Scalar>(
    metric: &WarpedMetric<S>,
    a: IsometryElement,
    params: &FlowParams<S>,
    t_horizon: S,
) -> Result<PreservationReport<S>> {
    let image = metric.apply_isometry(a)?;
    let gap = metric_distance(metric, &image)?;
    let tol = real::<S>(1e-9) * (S::one() + metric.max_psi());
    if gap > tol {
        return Err(Error::Precondition(format!(
            "element does not fix the metric: distance {gap} exceeds {tol}"
        )));
    }
    let mut p = params.clone();
    p.t_max = t_horizon;
    let run_a = evolve(metric, &p)?;
    let run_b = evolve(&image, &p)?;
    let time_tol = real::<S>(1e-9) * (S::one() + t_horizon.abs());
    let mut max_drift = S::zero();
    let mut horizon = metric.time();
    for (sa, sb) in run_a.slices.iter().zip(run_b.slices.iter()) {
        if (sa.time() - sb.time()).abs() > time_tol {
            break;
        }
        max_drift = max_drift.max(metric_distance(sa, sb)?);
        horizon = sa.time();
    }
    Ok(PreservationReport { max_drift, horizon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DumbbellShape;
    use std::f64::consts::PI;

    type Metric = WarpedMetric<f64>;

    fn symmetric_dumbbell(n: usize) -> Metric {
        Metric::dumbbell(&DumbbellShape {
            neck_radius: 0.15,
            lobe_radius: 1.0,
            n,
            symmetric: true,
        })
        .unwrap()
    }

    #[test]
    fn unit_sphere_is_einstein_with_lambda_two() {
        let m = Metric::round_sphere(1.0, 401).unwrap();
        let d = SolitonData::einstein(m, 2.0).unwrap();
        let res = soliton_residual(&d).unwrap();
        assert!(res < 5e-3, "residual {res}");
    }

    #[test]
    fn wrong_lambda_shows_up_in_the_residual() {
        let m = Metric::round_sphere(1.0, 401).unwrap();
        let d = SolitonData::einstein(m, 0.0).unwrap();
        let res = soliton_residual(&d).unwrap();
        assert!((res - 2.0).abs() < 5e-3, "residual {res}");
    }

    #[test]
    fn cylinder_radial_direction_breaks_the_soliton_equation() {
        let m = Metric::cylinder(1.0, 6.0, 256).unwrap();
        let d = SolitonData::einstein(m, 1.0).unwrap();
        // ric_ss vanishes on a cylinder, so the radial component misses
        // lambda by exactly |lambda|.
        let res = soliton_residual(&d).unwrap();
        assert!(res >= 1.0 - 1e-9, "residual {res}");
    }

    #[test]
    fn einstein_trajectory_is_pure_scaling() {
        let m = Metric::round_sphere(1.0, 101).unwrap();
        let d = SolitonData::einstein(m.clone(), 2.0).unwrap();
        let t = 0.1;
        let out = soliton_trajectory(&d, t).unwrap();
        let root = (1.0f64 - 2.0 * 2.0 * t).sqrt();
        assert_eq!(out.time(), t);
        for i in 0..m.n() {
            assert_eq!(out.psi()[i], root * m.psi()[i], "psi node {i}");
            assert_eq!(out.phi()[i], root * m.phi()[i], "phi node {i}");
        }
    }

    #[test]
    fn time_zero_trajectory_is_the_identity() {
        let m = symmetric_dumbbell(201);
        let d = SolitonData::einstein(m.clone(), 1.5).unwrap();
        let out = soliton_trajectory(&d, 0.0).unwrap();
        assert_eq!(out.phi(), m.phi());
        assert_eq!(out.psi(), m.psi());
    }

    #[test]
    fn steady_constant_potential_is_static() {
        let m = symmetric_dumbbell(201);
        let d = SolitonData::new(m.clone(), vec![0.3; m.n()], 0.0).unwrap();
        let out = soliton_trajectory(&d, 0.7).unwrap();
        assert_eq!(out.phi(), m.phi());
        assert_eq!(out.psi(), m.psi());
        assert_eq!(out.time(), 0.7);
    }

    #[test]
    fn steady_transport_is_a_diffeomorphism() {
        // lambda = 0 with a non-constant potential moves points around but
        // must not change the geometry: volume and the sectional curvature
        // range of a round sphere stay put.
        let m = Metric::round_sphere(1.0, 401).unwrap();
        let s = m.arclength();
        let l = *s.last().unwrap();
        let f: Vec<f64> = s.iter().map(|&si| 0.3 * (PI * si / l).cos()).collect();
        let d = SolitonData::new(m.clone(), f, 0.0).unwrap();
        let out = soliton_trajectory(&d, 0.2).unwrap();
        let vol0 = m.volume().unwrap();
        let vol1 = out.volume().unwrap();
        assert!(
            (vol1 - vol0).abs() < 2e-3 * vol0,
            "volume {vol0} -> {vol1}"
        );
        let k = out.curvature().unwrap();
        let n = out.n();
        for i in 0..n {
            assert!((k.k1[i] - 1.0).abs() < 2e-2, "k1 node {i}: {}", k.k1[i]);
            assert!((k.k2[i] - 1.0).abs() < 2e-2, "k2 node {i}: {}", k.k2[i]);
        }
    }

    #[test]
    fn shrinking_transport_matches_scaling_composed_with_diffeo() {
        // For any potential the transported radius profile must be a
        // sqrt(sigma)-scaled rearrangement: its maximum equals sqrt(sigma)
        // times the original maximum up to interpolation error.
        let m = Metric::round_sphere(1.0, 401).unwrap();
        let s = m.arclength();
        let l = *s.last().unwrap();
        let f: Vec<f64> = s.iter().map(|&si| 0.2 * (PI * si / l).cos()).collect();
        let d = SolitonData::new(m.clone(), f, 2.0).unwrap();
        let t = 0.1;
        let out = soliton_trajectory(&d, t).unwrap();
        let root = (1.0f64 - 4.0 * t).sqrt();
        let max0 = m.max_psi();
        let max1 = out.max_psi();
        assert!(
            (max1 - root * max0).abs() < 1e-4 * max0,
            "max psi {max1} vs {}",
            root * max0
        );
    }

    #[test]
    fn trajectory_domain_ends_at_the_extinction_horizon() {
        let m = Metric::round_sphere(1.0, 101).unwrap();
        let d = SolitonData::einstein(m, 2.0).unwrap();
        let err = soliton_trajectory(&d, 0.25).unwrap_err();
        match err {
            Error::SolitonDomain { t, horizon } => {
                assert_eq!(t, 0.25);
                assert_eq!(horizon, 0.25);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn periodic_transport_of_nonconstant_potential_is_rejected() {
        let m = Metric::cylinder(1.0, 6.0, 128).unwrap();
        let mut f = vec![0.0; m.n()];
        f[3] = 0.5;
        let d = SolitonData::new(m, f, 0.0).unwrap();
        assert!(matches!(
            soliton_trajectory(&d, 0.1),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn reflection_is_preserved_bitwise_along_the_flow() {
        let m = symmetric_dumbbell(101);
        let params = FlowParams::<f64>::new(4e-3);
        let report =
            isometry_preservation_check(&m, IsometryElement::Reflection, &params, 4e-3).unwrap();
        assert_eq!(report.max_drift, 0.0);
        assert!(report.horizon > 0.0);
    }

    #[test]
    fn asymmetric_metric_rejects_the_reflection_check() {
        let m = Metric::dumbbell(&DumbbellShape {
            neck_radius: 0.15,
            lobe_radius: 1.0,
            n: 101,
            symmetric: false,
        })
        .unwrap();
        let params = FlowParams::<f64>::new(1e-3);
        let err = isometry_preservation_check(&m, IsometryElement::Reflection, &params, 1e-3)
            .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
