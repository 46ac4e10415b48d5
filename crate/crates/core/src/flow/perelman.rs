//! The coupled metric-potential system and the associated energy functional.
//!
//! The pair evolves by `d g/dt = -2 (Ric + Hess f)` together with
//! `d f/dt = -R - lap f + |grad f|^2`; along it the energy
//! `F(g, f) = int (R + |grad f|^2) e^{-f} dv` is non-decreasing, with
//! production rate `2 int |Ric + Hess f|^2 e^{-f} dv`. For a potential
//! depending only on the profile coordinate the Hessian has two
//! eigencomponents: `f_ss` radially and `(psi_s / psi) f_s` on the sphere
//! directions (limit `f_ss` at a pole).
//!
//! The two equations of the pair are parabolic in opposite time directions:
//! substituting `u = e^{-f}` turns the potential equation into the conjugate
//! heat equation `du/dt = -lap u + R u`, which smooths toward the *past*.
//! Prescribing the potential at the initial time and marching forward is
//! therefore ill-posed — grid modes grow like `exp(t / h^2)` no matter the
//! scheme — and the only faithful discrete realization is the one
//! [`evolve_coupled`] uses: integrate the metric forward, then reconstruct
//! the potential backward from a terminal datum. The energy identity is
//! insensitive to this orientation; it holds along any pair of a forward
//! metric trajectory and a conjugate-heat potential on it.

use super::{gauge_anchor, stable_dt, try_advance, FlowParams};
use crate::error::{Error, Result};
use crate::geometry::stencil::{d1_interior, d1_interior_weights, d2_interior_weights};
use crate::geometry::{Topology, WarpedMetric};
use crate::scalar::{real, Scalar};

/// Per-node time derivatives of the coupled system.
#[derive(Debug, Clone)]
pub struct PerelmanRhs<S> {
    pub dphi: Vec<S>,
    pub dpsi: Vec<S>,
    pub df: Vec<S>,
}

fn check_potential<S: Scalar>(metric: &WarpedMetric<S>, f: &[S]) -> Result<()> {
    if f.len() != metric.n() {
        return Err(Error::GridMismatch(format!(
            "potential of length {} on {} nodes",
            f.len(),
            metric.n()
        )));
    }
    if let Some((i, &v)) = f.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("potential[{i}] = {v} not finite")));
    }
    Ok(())
}

/// Spherical Hessian eigencomponent `(psi_s / psi) f_s`, with the pole limit
/// `f_ss` substituted on closed ends.
pub(crate) fn spherical_hessian<S: Scalar>(
    metric: &WarpedMetric<S>,
    psi_s: &[S],
    f_s: &[S],
    f_ss: &[S],
) -> Vec<S> {
    let n = metric.n();
    let psi = metric.psi();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push((psi_s[i] / psi[i]) * f_s[i]);
    }
    if metric.topology() == Topology::ClosedIntervalWithPoles {
        out[0] = f_ss[0];
        out[n - 1] = f_ss[n - 1];
    }
    out
}

/// Right-hand side of the coupled evolution at the given state.
///
/// The Ricci part comes from the compact evolution operator, the same one
/// [`super::ricci_rhs`] uses, so a constant potential reduces this to the
/// plain flow rates exactly; the pole lapse rate is continued evenly from
/// the first interior node for the same reason as there (the combined rate
/// `-(ric_ss + f_ss)` is an even function through a pole).
pub fn perelman_rhs<S: Scalar>(metric: &WarpedMetric<S>, f: &[S]) -> Result<PerelmanRhs<S>> {
    check_potential(metric, f)?;
    let k = metric.curvature_compact()?;
    let (f_s, f_ss) = metric.derivatives_of(f)?;
    let (psi_s, _) = metric.derivatives_of(metric.psi())?;
    let n = metric.n();
    let phi = metric.phi();
    let psi = metric.psi();
    let two = real::<S>(2.0);
    let three = real::<S>(3.0);
    let closed = metric.topology() == Topology::ClosedIntervalWithPoles;

    let mut dphi = Vec::with_capacity(n);
    let mut dpsi = Vec::with_capacity(n);
    let mut df = Vec::with_capacity(n);
    for i in 0..n {
        dphi.push(-((k.ric_ss[i] + f_ss[i]) * phi[i]));
        // The spherical component contributes psi * (psi_s/psi) f_s, written
        // division-free.
        dpsi.push(-(k.ric_sphere[i] * psi[i] + psi_s[i] * f_s[i]));
        let lap = f_ss[i] + two * ((psi_s[i] / psi[i]) * f_s[i]);
        df.push(-k.scalar[i] - lap + f_s[i] * f_s[i]);
    }
    if closed {
        dpsi[0] = S::zero();
        dpsi[n - 1] = S::zero();
        dphi[0] = (dphi[1] / phi[1]) * phi[0];
        dphi[n - 1] = (dphi[n - 2] / phi[n - 2]) * phi[n - 1];
        // Pole limit of the Laplacian: (psi_s/psi) f_s -> f_ss.
        df[0] = -k.scalar[0] - three * f_ss[0] + f_s[0] * f_s[0];
        df[n - 1] = -k.scalar[n - 1] - three * f_ss[n - 1] + f_s[n - 1] * f_s[n - 1];
    }
    Ok(PerelmanRhs { dphi, dpsi, df })
}

/// The energy `int (R + |grad f|^2) e^{-f} dv`.
pub fn f_functional<S: Scalar>(metric: &WarpedMetric<S>, f: &[S]) -> Result<S> {
    check_potential(metric, f)?;
    let k = metric.curvature()?;
    let (f_s, _) = metric.derivatives_of(f)?;
    let field: Vec<S> = (0..metric.n())
        .map(|i| (k.scalar[i] + f_s[i] * f_s[i]) * (-f[i]).exp())
        .collect();
    metric.integrate(&field)
}

/// The energy production rate `2 int |Ric + Hess f|^2 e^{-f} dv`, the
/// quantity the discrete energy difference quotient is compared against.
pub fn dissipation<S: Scalar>(metric: &WarpedMetric<S>, f: &[S]) -> Result<S> {
    check_potential(metric, f)?;
    let k = metric.curvature()?;
    let (f_s, f_ss) = metric.derivatives_of(f)?;
    let (psi_s, _) = metric.derivatives_of(metric.psi())?;
    let hess_sph = spherical_hessian(metric, &psi_s, &f_s, &f_ss);
    let two = real::<S>(2.0);
    let field: Vec<S> = (0..metric.n())
        .map(|i| {
            let t_rad = k.ric_ss[i] + f_ss[i];
            let t_sph = k.ric_sphere[i] + hess_sph[i];
            (t_rad * t_rad + two * (t_sph * t_sph)) * (-f[i]).exp()
        })
        .collect();
    Ok(two * metric.integrate(&field)?)
}

/// Energy and production rate recorded at one state of a coupled run.
#[derive(Debug, Clone, Copy)]
pub struct CoupledDiag<S> {
    pub t: S,
    /// Step taken from this state (zero on the final row).
    pub dt: S,
    pub f_value: S,
    pub dissipation: S,
}

/// Result of integrating the coupled system to the horizon.
#[derive(Debug, Clone)]
pub struct CoupledTrajectory<S> {
    /// One row per visited state, forward-ordered, including the final one.
    pub rows: Vec<CoupledDiag<S>>,
    /// Reconstructed potential on the initial slice.
    pub initial_potential: Vec<S>,
    pub final_metric: WarpedMetric<S>,
    /// Potential on the final slice; equals the supplied terminal datum.
    pub final_potential: Vec<S>,
}

/// Step budget for one coupled run.
const COUPLED_STEP_BUDGET: usize = 2_000_000;

/// Integrates the coupled system to `params.t_max`, recording energy and
/// production rate at every visited state.
///
/// The metric runs forward under the plain flow (with the gauge anchoring
/// of [`super::evolve`] on closed topology); the potential is then
/// reconstructed backward as `f = -log u` from the conjugate heat equation
/// `du/dt = -lap u + R u`, one unconditionally-stable implicit sweep per
/// stored step, starting from `terminal_potential` on the final slice. The
/// supplied potential is a *terminal* datum because that is the direction in
/// which the potential equation is parabolic (see the module notes); the
/// reconstructed initial potential is returned alongside the rows.
///
/// Intended for short verification horizons: there is no extinction or neck
/// handling, and a step that cannot be completed is an error.
pub fn evolve_coupled<S: Scalar>(
    metric: &WarpedMetric<S>,
    terminal_potential: &[S],
    params: &FlowParams<S>,
) -> Result<CoupledTrajectory<S>> {
    params.validate()?;
    check_potential(metric, terminal_potential)?;
    let closed = metric.topology() == Topology::ClosedIntervalWithPoles;
    let anchor = closed.then(|| gauge_anchor(metric));
    let tiny = real::<S>(1e-12) * (S::one() + params.t_max);

    // Forward metric sweep, storing every step.
    let mut slices = vec![metric.clone()];
    loop {
        let current = slices.last().expect("at least the initial slice");
        let remaining = params.t_max - current.time();
        if remaining <= tiny {
            break;
        }
        if slices.len() >= COUPLED_STEP_BUDGET {
            return Err(Error::StepRejected {
                dt: f64::NAN,
                reason: format!("coupled step budget of {COUPLED_STEP_BUDGET} exhausted"),
            });
        }
        let k = current.curvature_compact()?;
        let dt0 = stable_dt(current, &k, params).min(remaining);
        let next = try_advance(current, &k, dt0, params.scheme, anchor.as_ref())?;
        if !(next.time() > current.time()) {
            return Err(Error::StepRejected {
                dt: dt0.to_f64().unwrap_or(f64::NAN),
                reason: "timestep underflow in the coupled forward sweep".into(),
            });
        }
        slices.push(next);
    }

    // Backward potential sweep.
    let m = slices.len();
    let mut potentials: Vec<Vec<S>> = Vec::with_capacity(m);
    potentials.resize(m, Vec::new());
    potentials[m - 1] = terminal_potential.to_vec();
    let mut u: Vec<S> = terminal_potential.iter().map(|&fi| (-fi).exp()).collect();
    for j in (0..m - 1).rev() {
        let dt = slices[j + 1].time() - slices[j].time();
        u = conjugate_heat_backstep(&slices[j], &u, dt)?;
        potentials[j] = u.iter().map(|&ui| -(ui.ln())).collect();
    }

    let mut rows = Vec::with_capacity(m);
    for j in 0..m {
        let f_value = f_functional(&slices[j], &potentials[j])?;
        let production = dissipation(&slices[j], &potentials[j])?;
        let dt = if j + 1 < m {
            slices[j + 1].time() - slices[j].time()
        } else {
            S::zero()
        };
        rows.push(CoupledDiag {
            t: slices[j].time(),
            dt,
            f_value,
            dissipation: production,
        });
    }
    let initial_potential = potentials[0].clone();
    let final_potential = potentials[m - 1].clone();
    Ok(CoupledTrajectory {
        rows,
        initial_potential,
        final_metric: slices.pop().expect("at least the initial slice"),
        final_potential,
    })
}

/// One implicit step of the conjugate heat equation `du/dt = -lap u + R u`
/// toward the past: solves `(I - dt lap + dt R) u_past = u`, which is
/// backward Euler for the direction in which the equation diffuses.
///
/// The Laplacian rows are the compact arclength stencils
/// `u_ss + 2 (psi_s/psi) u_s` (pole limit `3 u_ss`, closed by even
/// reflection), so the system is tridiagonal — cyclic on periodic topology.
fn conjugate_heat_backstep<S: Scalar>(
    metric: &WarpedMetric<S>,
    u: &[S],
    dt: S,
) -> Result<Vec<S>> {
    let n = metric.n();
    let h = metric.arc_spacings();
    let psi = metric.psi();
    let k = metric.curvature()?;
    let one = S::one();
    let two = real::<S>(2.0);
    let six = real::<S>(6.0);
    let assemble_interior = |i: usize, hm: S, hp: S| {
        let (dl, dc, dr) = d2_interior_weights(hm, hp);
        let (al, ac, ar) = d1_interior_weights(hm, hp);
        let im = if i == 0 { n - 1 } else { i - 1 };
        let ip = if i == n - 1 { 0 } else { i + 1 };
        let psi_s = d1_interior(psi[im], psi[i], psi[ip], hm, hp);
        let adv = two * (psi_s / psi[i]);
        let ll = dl + adv * al;
        let lc = dc + adv * ac;
        let lr = dr + adv * ar;
        (
            -(dt * ll),
            one + dt * (k.scalar[i] - lc),
            -(dt * lr),
        )
    };
    let solved = match metric.topology() {
        Topology::ClosedIntervalWithPoles => {
            let mut lower = vec![S::zero(); n];
            let mut diag = vec![S::zero(); n];
            let mut upper = vec![S::zero(); n];
            // Pole rows: lap u -> 3 u_ss with the even ghost u[-1] = u[1],
            // giving u_ss = 2 (u1 - u0) / h0^2.
            let c0 = six / (h[0] * h[0]);
            diag[0] = one + dt * (k.scalar[0] + c0);
            upper[0] = -(dt * c0);
            let c1 = six / (h[n - 2] * h[n - 2]);
            diag[n - 1] = one + dt * (k.scalar[n - 1] + c1);
            lower[n - 1] = -(dt * c1);
            for i in 1..n - 1 {
                let (lo, di, up) = assemble_interior(i, h[i - 1], h[i]);
                lower[i] = lo;
                diag[i] = di;
                upper[i] = up;
            }
            super::thomas_solve(&lower, &diag, &upper, u)?
        }
        Topology::Periodic => {
            let mut lower = vec![S::zero(); n];
            let mut diag = vec![S::zero(); n];
            let mut upper = vec![S::zero(); n];
            for i in 0..n {
                let im = (i + n - 1) % n;
                let (lo, di, up) = assemble_interior(i, h[im], h[i]);
                lower[i] = lo;
                diag[i] = di;
                upper[i] = up;
            }
            super::cyclic_thomas_solve(&lower, &diag, &upper, u)?
        }
    };
    if let Some((i, &v)) = solved.iter().enumerate().find(|(_, &v)| !(v > S::zero())) {
        return Err(Error::InvalidMetric(format!(
            "conjugate heat reconstruction lost positivity at node {i}: u = {v}"
        )));
    }
    Ok(solved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::ricci_rhs;
    use std::f64::consts::PI;

    type Metric = WarpedMetric<f64>;

    #[test]
    fn constant_potential_reduces_to_plain_flow() {
        let m = Metric::round_sphere(1.2, 101).unwrap();
        let f = vec![0.7; m.n()];
        let got = perelman_rhs(&m, &f).unwrap();
        let (dphi, dpsi) = ricci_rhs(&m).unwrap();
        let k = m.curvature_compact().unwrap();
        for i in 0..m.n() {
            assert!((got.dphi[i] - dphi[i]).abs() < 1e-9, "dphi node {i}");
            assert!((got.dpsi[i] - dpsi[i]).abs() < 1e-9, "dpsi node {i}");
            // d f/dt = -R for a constant potential.
            assert!(
                (got.df[i] + k.scalar[i]).abs() < 1e-9,
                "df node {i}: {} vs {}",
                got.df[i],
                -k.scalar[i]
            );
        }
    }

    #[test]
    fn round_sphere_df_is_minus_scalar_curvature() {
        let r = 1.0;
        let m = Metric::round_sphere(r, 201).unwrap();
        let f = vec![0.0; m.n()];
        let got = perelman_rhs(&m, &f).unwrap();
        // The pole rows of the scalar curvature carry the largest truncation
        // constant (one-sided third-derivative limit), hence the tolerance.
        for i in 0..m.n() {
            assert!(
                (got.df[i] + 6.0 / (r * r)).abs() < 5e-3,
                "node {i}: {}",
                got.df[i]
            );
        }
    }

    #[test]
    fn laplacian_matches_closed_form_on_round_sphere() {
        // f = cos(s/r) is (up to normalization) the first nontrivial
        // eigenfunction: lap f = -(3/r^2) f on the round 3-sphere.
        let r = 1.0;
        let m = Metric::round_sphere(r, 401).unwrap();
        let s = m.arclength();
        let f: Vec<f64> = s.iter().map(|&si| (si / r).cos()).collect();
        let (f_s, f_ss) = m.derivatives_of(&f).unwrap();
        let (psi_s, _) = m.derivatives_of(m.psi()).unwrap();
        let n = m.n();
        for i in 0..n {
            let lap = if i == 0 || i == n - 1 {
                3.0 * f_ss[i]
            } else {
                f_ss[i] + 2.0 * (psi_s[i] / m.psi()[i]) * f_s[i]
            };
            let expect = -(3.0 / (r * r)) * f[i];
            assert!(
                (lap - expect).abs() < 5e-3,
                "node {i}: lap = {lap}, expected {expect}"
            );
        }
    }

    #[test]
    fn f_functional_of_unit_sphere_is_twelve_pi_squared() {
        let m = Metric::round_sphere(1.0, 201).unwrap();
        let f = vec![0.0; m.n()];
        let val = f_functional(&m, &f).unwrap();
        let expect = 12.0 * PI * PI;
        assert!(
            (val - expect).abs() < 0.01 * expect,
            "F = {val}, expected {expect}"
        );
        // Constant potential scales by e^{-c}.
        let c = 0.4;
        let fc = vec![c; m.n()];
        let val_c = f_functional(&m, &fc).unwrap();
        assert!((val_c - (-c).exp() * val).abs() < 1e-9 * val.abs());
    }

    #[test]
    fn energy_is_monotone_and_matches_production_rate() {
        let m = Metric::round_sphere(1.0, 101)
            .unwrap()
            .with_profile_bump(&[0.03, -0.02, 0.015])
            .unwrap();
        let s = m.arclength();
        let l = *s.last().unwrap();
        let f_terminal: Vec<f64> = s
            .iter()
            .map(|&si| 0.05 * (2.0 * PI * si / l).cos())
            .collect();
        let params = FlowParams::<f64>::new(0.02);
        let run = evolve_coupled(&m, &f_terminal, &params).unwrap();
        assert!(run.rows.len() > 4);
        let f_end = run.rows.last().unwrap().f_value;
        let f_start = run.rows[0].f_value;
        assert!(f_end > f_start, "energy should grow: {f_start} -> {f_end}");
        let h = m.arc_spacings().iter().fold(f64::INFINITY, |a, &b| a.min(b));
        for w in run.rows.windows(2) {
            let dt = w[0].dt;
            let quotient = (w[1].f_value - w[0].f_value) / dt;
            let rate = 0.5 * (w[0].dissipation + w[1].dissipation);
            let eps = 10.0 * (h * h + dt) * w[0].f_value.abs();
            assert!(quotient >= -eps, "monotonicity: {quotient} vs -{eps}");
            assert!(
                (quotient - rate).abs() <= 0.05 * rate.abs().max(1e-12),
                "rate match at t = {}: {quotient} vs {rate}",
                w[0].t
            );
        }
        // The terminal datum is returned unchanged and the reconstruction
        // reaches the initial slice.
        assert_eq!(run.final_potential, f_terminal);
        assert_eq!(run.initial_potential.len(), m.n());
        assert!((run.final_metric.time() - 0.02).abs() < 1e-10);
    }

    #[test]
    fn coupled_run_rejects_bad_potential() {
        let m = Metric::round_sphere(1.0, 41).unwrap();
        let params = FlowParams::<f64>::new(0.01);
        let short = vec![0.0; m.n() - 1];
        assert!(evolve_coupled(&m, &short, &params).is_err());
        let mut bad = vec![0.0; m.n()];
        bad[3] = f64::NAN;
        assert!(evolve_coupled(&m, &bad, &params).is_err());
    }
}
