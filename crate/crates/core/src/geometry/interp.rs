//! One-dimensional interpolants for profile resampling.
//!
//! Two kinds, for two jobs. [`MonotoneCubic`] (Fritsch-Carlson slopes)
//! resamples surgery children onto fresh uniform grids: the monotone limiter
//! matters there, because plain cubic interpolation can overshoot below zero
//! next to a cap, which would manufacture a fake singularity. [`CubicSpline`]
//! is the accuracy-first choice for smooth resampling — the limiter that
//! protects the caps costs an order of accuracy around every interior
//! extremum, which is exactly where a curvature read-out of the resampled
//! profile hurts most.

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

fn check_knots<S: Scalar>(x: &[S], y: &[S]) -> Result<()> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParameter(
            "interpolation needs at least two matching knots".into(),
        ));
    }
    for w in x.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidParameter(
                "interpolation knots must increase strictly".into(),
            ));
        }
    }
    Ok(())
}

/// Locates the interval `[x[lo], x[lo+1]]` containing `t`, assuming
/// `x[0] < t < x[n-1]`.
fn bracket<S: Scalar>(x: &[S], t: S) -> usize {
    let mut lo = 0usize;
    let mut hi = x.len() - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x[mid] <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// C^2 cubic spline with natural end conditions (zero second derivative at
/// both ends), evaluated from its knot moments.
///
/// The closed profiles this resamples extend oddly through their poles, so
/// their true end curvature vanishes and the natural condition is exact
/// there; interior error is fourth order on smooth data, with no limiter to
/// lose accuracy at extrema. Outside the knot range the evaluation continues
/// linearly with the end slope.
pub struct CubicSpline<S> {
    x: Vec<S>,
    y: Vec<S>,
    /// Second derivatives at the knots.
    m: Vec<S>,
}

impl<S: Scalar> CubicSpline<S> {
    pub fn natural(x: Vec<S>, y: Vec<S>) -> Result<Self> {
        check_knots(&x, &y)?;
        let n = x.len();
        let mut m = vec![S::zero(); n];
        if n > 2 {
            let h: Vec<S> = (0..n - 1).map(|k| x[k + 1] - x[k]).collect();
            let delta: Vec<S> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
            // Tridiagonal system for the interior moments:
            // h[i-1] m[i-1] + 2 (h[i-1] + h[i]) m[i] + h[i] m[i+1]
            //   = 6 (delta[i] - delta[i-1]).
            let two = real::<S>(2.0);
            let six = real::<S>(6.0);
            let k = n - 2;
            let mut c = vec![S::zero(); k];
            let mut d = vec![S::zero(); k];
            let mut prev_diag = two * (h[0] + h[1]);
            c[0] = h[1] / prev_diag;
            d[0] = six * (delta[1] - delta[0]) / prev_diag;
            for j in 1..k {
                let i = j + 1;
                let sub = h[i - 1];
                prev_diag = two * (h[i - 1] + h[i]) - sub * c[j - 1];
                if j + 1 < k {
                    c[j] = h[i] / prev_diag;
                }
                d[j] = (six * (delta[i] - delta[i - 1]) - sub * d[j - 1]) / prev_diag;
            }
            m[k] = d[k - 1];
            for j in (1..k).rev() {
                m[j] = d[j - 1] - c[j - 1] * m[j + 1];
            }
        }
        Ok(Self { x, y, m })
    }

    pub fn eval(&self, t: S) -> S {
        let n = self.x.len();
        let six = real::<S>(6.0);
        if t <= self.x[0] {
            let h = self.x[1] - self.x[0];
            let slope = (self.y[1] - self.y[0]) / h - h * self.m[1] / six;
            return self.y[0] + slope * (t - self.x[0]);
        }
        if t >= self.x[n - 1] {
            let h = self.x[n - 1] - self.x[n - 2];
            let slope = (self.y[n - 1] - self.y[n - 2]) / h + h * self.m[n - 2] / six;
            return self.y[n - 1] + slope * (t - self.x[n - 1]);
        }
        let lo = bracket(&self.x, t);
        let h = self.x[lo + 1] - self.x[lo];
        let a = (self.x[lo + 1] - t) / h;
        let b = (t - self.x[lo]) / h;
        let curv = (a * a * a - a) * self.m[lo] + (b * b * b - b) * self.m[lo + 1];
        a * self.y[lo] + b * self.y[lo + 1] + curv * (h * h) / six
    }
}

pub struct MonotoneCubic<S> {
    x: Vec<S>,
    y: Vec<S>,
    d: Vec<S>,
}

impl<S: Scalar> MonotoneCubic<S> {
    pub fn new(x: Vec<S>, y: Vec<S>) -> Result<Self> {
        Self::with_end_slopes(x, y, None, None)
    }

    /// `d0`/`dn` pin the end slopes; `None` falls back to a one-sided estimate.
    pub fn with_end_slopes(x: Vec<S>, y: Vec<S>, d0: Option<S>, dn: Option<S>) -> Result<Self> {
        check_knots(&x, &y)?;
        let n = x.len();
        let h: Vec<S> = (0..n - 1).map(|k| x[k + 1] - x[k]).collect();
        let delta: Vec<S> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![S::zero(); n];
        let three = real::<S>(3.0);
        for k in 1..n - 1 {
            if delta[k - 1] * delta[k] <= S::zero() {
                d[k] = S::zero();
            } else {
                let w1 = real::<S>(2.0) * h[k] + h[k - 1];
                let w2 = h[k] + real::<S>(2.0) * h[k - 1];
                d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
            }
        }
        d[0] = d0.unwrap_or_else(|| end_slope(h[0], h.get(1).copied(), delta[0], delta.get(1).copied(), three));
        d[n - 1] = dn.unwrap_or_else(|| {
            if n == 2 {
                delta[0]
            } else {
                end_slope(
                    h[n - 2],
                    Some(h[n - 3]),
                    delta[n - 2],
                    Some(delta[n - 3]),
                    three,
                )
            }
        });
        Ok(Self { x, y, d })
    }

    pub fn eval(&self, t: S) -> S {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0] + self.d[0] * (t - self.x[0]);
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1] + self.d[n - 1] * (t - self.x[n - 1]);
        }
        let lo = bracket(&self.x, t);
        let h = self.x[lo + 1] - self.x[lo];
        let s = (t - self.x[lo]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let two = real::<S>(2.0);
        let three = real::<S>(3.0);
        let h00 = two * s3 - three * s2 + S::one();
        let h10 = s3 - two * s2 + s;
        let h01 = -two * s3 + three * s2;
        let h11 = s3 - s2;
        h00 * self.y[lo] + h * (h10 * self.d[lo] + h11 * self.d[lo + 1]) + h01 * self.y[lo + 1]
    }
}

fn end_slope<S: Scalar>(h0: S, h1: Option<S>, d0: S, d1: Option<S>, three: S) -> S {
    match (h1, d1) {
        (Some(h1), Some(d1)) => {
            let two = real::<S>(2.0);
            let mut s = ((two * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if s * d0 <= S::zero() {
                s = S::zero();
            } else if d0 * d1 < S::zero() && s.abs() > three * d0.abs() {
                s = three * d0;
            }
            s
        }
        _ => d0,
    }
}
