//! Finite difference stencils on non-uniform one-dimensional grids.
//!
//! Interior derivatives are second order in the local spacing. Every formula
//! here is written so that reversing the input arrays produces bitwise-exact
//! mirrored results: weights for the outer pair are built from commuted
//! products only, and the outer pair is summed before the centre term. That
//! discipline is what makes the evolution reflection-equivariance exact in
//! floating point, not just up to roundoff.

use crate::scalar::{real, real_usize, Scalar};

/// First derivative at a node with left spacing `hm` and right spacing `hp`.
#[inline]
pub fn d1_interior<S: Scalar>(um: S, uc: S, up: S, hm: S, hp: S) -> S {
    let (wl, wc, wr) = d1_interior_weights(hm, hp);
    (wl * um + wr * up) + wc * uc
}

/// The `(left, centre, right)` weights behind [`d1_interior`], exposed for
/// implicit solvers that assemble the same operator into a linear system.
#[inline]
pub fn d1_interior_weights<S: Scalar>(hm: S, hp: S) -> (S, S, S) {
    let span = hm + hp;
    let wl = -(hp / (hm * span));
    let wr = hm / (hp * span);
    let wc = (hp - hm) / (hm * hp);
    (wl, wc, wr)
}

/// Second derivative at a node with left spacing `hm` and right spacing `hp`.
///
/// Second order on smoothly varying grids, which is the only kind the flow
/// produces (spacings are a smooth lapse times a fixed coordinate step).
#[inline]
pub fn d2_interior<S: Scalar>(um: S, uc: S, up: S, hm: S, hp: S) -> S {
    let (wl, wc, wr) = d2_interior_weights(hm, hp);
    (wl * um + wr * up) + wc * uc
}

/// The `(left, centre, right)` weights behind [`d2_interior`], exposed for
/// implicit solvers that assemble the same operator into a linear system.
#[inline]
pub fn d2_interior_weights<S: Scalar>(hm: S, hp: S) -> (S, S, S) {
    let two = real::<S>(2.0);
    let span = hm + hp;
    let wl = two / (hm * span);
    let wr = two / (hp * span);
    let wc = -(two / (hm * hp));
    (wl, wc, wr)
}

/// Finite difference weights after Fornberg: `weights[j]` multiplies `u[x[j]]`
/// in the `order`-th derivative evaluated at `z`.
pub fn fornberg_weights<S: Scalar>(z: S, x: &[S], order: usize) -> Vec<S> {
    let n = x.len();
    assert!(n > order, "need more nodes than the derivative order");
    let mut c = vec![vec![S::zero(); order + 1]; n];
    let mut c1 = S::one();
    let mut c4 = x[0] - z;
    c[0][0] = S::one();
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = S::one();
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 = c2 * c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (real_usize::<S>(k) * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - real_usize::<S>(k) * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// One-sided derivative at the first node of `u`, using `npts` nodes and the
/// leading entries of the spacing array `h`.
pub fn left_end_derivative<S: Scalar>(h: &[S], u: &[S], npts: usize, order: usize) -> S {
    assert!(u.len() >= npts && h.len() + 1 >= npts);
    let mut xs = Vec::with_capacity(npts);
    let mut acc = S::zero();
    xs.push(acc);
    for k in 0..npts - 1 {
        acc = acc + h[k];
        xs.push(acc);
    }
    let w = fornberg_weights(S::zero(), &xs, order);
    let mut out = S::zero();
    for (wk, uk) in w.iter().zip(u.iter()) {
        out = out + *wk * *uk;
    }
    out
}

/// One-sided derivative at the last node of `u`.
///
/// Implemented by reversing the data and reusing the left-end rule, so the two
/// ends are exact mirror images of each other in floating point; odd orders
/// pick up the expected sign flip.
pub fn right_end_derivative<S: Scalar>(h: &[S], u: &[S], npts: usize, order: usize) -> S {
    let ru: Vec<S> = u.iter().rev().take(npts).cloned().collect();
    let rh: Vec<S> = h.iter().rev().take(npts - 1).cloned().collect();
    let v = left_end_derivative(&rh, &ru, npts, order);
    if order % 2 == 1 {
        -v
    } else {
        v
    }
}

enum Orientation {
    Forward,
    Reverse,
    Palindromic,
}

fn orientation<S: Scalar>(iv: &[S; 4]) -> Orientation {
    for j in 0..4 {
        if iv[j] < iv[3 - j] {
            return Orientation::Forward;
        }
        if iv[j] > iv[3 - j] {
            return Orientation::Reverse;
        }
    }
    Orientation::Palindromic
}

fn window_coords<S: Scalar>(iv: &[S; 4]) -> [S; 5] {
    let c1 = iv[0];
    let c2 = c1 + iv[1];
    let c3 = c2 + iv[2];
    let c4 = c3 + iv[3];
    [S::zero(), c1, c2, c3, c4]
}

fn forward_window_weights<S: Scalar>(iv: &[S; 4], pos: usize, order: usize) -> [S; 5] {
    let c = window_coords(iv);
    let w = fornberg_weights(c[pos], &c, order);
    [w[0], w[1], w[2], w[3], w[4]]
}

fn palindromic_center_weights<S: Scalar>(iv: &[S; 4], order: usize) -> [S; 5] {
    let c = window_coords(iv);
    let w = fornberg_weights(c[2], &c, order);
    let half = real::<S>(0.5);
    // For a palindromic window the exact weights are antisymmetric (odd
    // orders) or symmetric (even orders); enforce that structurally so a
    // reflected evaluation mirrors bitwise.
    let mut wa = [S::zero(); 5];
    for j in 0..5 {
        wa[j] = if order % 2 == 1 {
            (w[j] - w[4 - j]) * half
        } else {
            (w[j] + w[4 - j]) * half
        };
    }
    wa
}

/// Canonicalised five-node weight row for the `order`-th derivative at
/// interior node `i` of a field on `n` nodes with interval table `h`; returns
/// the window start index and the weights in natural node order.
///
/// The window for a node near one end is one-sided; the orientation in which
/// the weights are computed is canonicalised (by node position in the window,
/// then by the spacing pattern) so that the row for the mirrored node on the
/// reversed interval table is the exact reversal of this row, negated for odd
/// orders. Rows depend only on the interval table, so callers with a fixed
/// grid can compute them once and reuse them every step.
pub fn wide_window_closed<S: Scalar>(h: &[S], n: usize, i: usize, order: usize) -> (usize, [S; 5]) {
    debug_assert!(n >= 5 && i >= 1 && i + 1 < n && h.len() + 1 == n);
    let ws = i.saturating_sub(2).min(n - 5);
    let p = i - ws;
    let iv = [h[ws], h[ws + 1], h[ws + 2], h[ws + 3]];
    let ivr = [iv[3], iv[2], iv[1], iv[0]];
    let mirrored = |w: [S; 5]| {
        let mut out = [S::zero(); 5];
        for k in 0..5 {
            out[k] = if order % 2 == 1 { -w[4 - k] } else { w[4 - k] };
        }
        out
    };
    let w = match p {
        1 => forward_window_weights(&iv, 1, order),
        3 => mirrored(forward_window_weights(&ivr, 1, order)),
        2 => match orientation(&iv) {
            Orientation::Forward => forward_window_weights(&iv, 2, order),
            Orientation::Reverse => mirrored(forward_window_weights(&ivr, 2, order)),
            Orientation::Palindromic => palindromic_center_weights(&iv, order),
        },
        _ => unreachable!("window position is always 1, 2, or 3"),
    };
    (ws, w)
}

/// Applies a five-node weight row in reflection-invariant summation order.
#[inline]
pub fn apply_wide<S: Scalar>(w: &[S; 5], u: &[S], ws: usize) -> S {
    let prods = [
        w[0] * u[ws],
        w[1] * u[ws + 1],
        w[2] * u[ws + 2],
        w[3] * u[ws + 3],
        w[4] * u[ws + 4],
    ];
    symmetric_sum(&prods)
}

/// Fourth-order first derivative at interior node `i` of a closed-topology
/// field, from a five-node window. The extra accuracy matters for the
/// spherical sectional curvature near poles, where `1 - psi_s^2` cancels to
/// the same order as `psi^2` and a second-order slope would leave an O(1)
/// relative error. Mirrored evaluations negate bitwise.
pub fn d1_wide_closed<S: Scalar>(h: &[S], u: &[S], i: usize) -> S {
    let (ws, w) = wide_window_closed(h, u.len(), i, 1);
    apply_wide(&w, u, ws)
}

/// Companion second derivative from the same canonicalised five-node window;
/// mirrored evaluations reproduce it bitwise without a sign flip.
pub fn d2_wide_closed<S: Scalar>(h: &[S], u: &[S], i: usize) -> S {
    let (ws, w) = wide_window_closed(h, u.len(), i, 2);
    apply_wide(&w, u, ws)
}

/// Fourth-order first-derivative row at the first interior node of a closed
/// grid, for a field that extends *oddly* through the pole (as the profile
/// radius does). A ghost node mirrored across the pole carries value
/// `-u[1]`; folding it into a five-node window centred on node 1 leaves a
/// four-node row over `u[0..4]`.
///
/// Unlike the biased window of [`wide_window_closed`], this row is
/// effectively centred: its weight on `u[1]` itself is small (zero on a
/// uniform grid up to the fold), which keeps read-out feedback of node-1
/// errors weak when the row sits inside an evolution loop.
pub fn pole_parity_d1_row<S: Scalar>(h0: S, h1: S, h2: S) -> [S; 4] {
    let c = [
        S::zero(),
        h0,
        h0 + h0,
        h0 + h0 + h1,
        h0 + h0 + h1 + h2,
    ];
    let w = fornberg_weights(c[2], &c, 1);
    [w[1], w[2] - w[0], w[3], w[4]]
}

/// Mirror of [`pole_parity_d1_row`] for the last interior node: the exact
/// reversal of the left row built on the reversed spacings, negated because
/// the first derivative is odd under reflection. Applies to `u[n-4..n]`.
pub fn pole_parity_d1_row_right<S: Scalar>(h0: S, h1: S, h2: S) -> [S; 4] {
    let w = pole_parity_d1_row(h0, h1, h2);
    [-w[3], -w[2], -w[1], -w[0]]
}

/// Applies a four-node weight row in reflection-invariant summation order.
#[inline]
pub fn apply_four<S: Scalar>(w: &[S; 4], u: &[S], ws: usize) -> S {
    let prods = [
        w[0] * u[ws],
        w[1] * u[ws + 1],
        w[2] * u[ws + 2],
        w[3] * u[ws + 3],
    ];
    symmetric_sum(&prods)
}

/// Sums a slice pairing outermost entries first, so that reversing the slice
/// leaves the total bitwise unchanged.
pub fn symmetric_sum<S: Scalar>(v: &[S]) -> S {
    let n = v.len();
    let mut acc = S::zero();
    for i in 0..n / 2 {
        acc = acc + (v[i] + v[n - 1 - i]);
    }
    if n % 2 == 1 {
        acc = acc + v[n / 2];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pole_parity_row_is_exact_on_odd_quartics() {
        // The folded five-node row assumes the field continues oddly through
        // the pole; on odd polynomials of degree <= 4 (for which the ghost
        // value -u[1] is the true continuation) it must be exact.
        let (h0, h1, h2) = (0.021f64, 0.025, 0.019);
        let xs = [0.0, h0, 2.0 * h0, 2.0 * h0 + h1, 2.0 * h0 + h1 + h2];
        let f = |x: f64| 3.0 * x - 2.0 * x * x * x;
        let df = |x: f64| 3.0 - 6.0 * x * x;
        // Node layout: u[0] at the pole, u[1] the first interior node, so the
        // row evaluates the derivative at x = h0 of the shifted profile.
        let u: Vec<f64> = xs[1..].iter().map(|&x| f(x - h0)).collect();
        let row = pole_parity_d1_row(h0, h1, h2);
        let got = apply_four(&row, &u, 0);
        assert!((got - df(h0)).abs() < 1e-11, "{got} vs {}", df(h0));
    }

    #[test]
    fn pole_parity_rows_mirror_bitwise() {
        let (h0, h1, h2) = (0.017f64, 0.023, 0.02);
        let u = [0.0f64, 0.31, 0.57, 0.72, 0.88, 0.95];
        let left = pole_parity_d1_row(h0, h1, h2);
        let got_left = apply_four(&left, &u, 0);
        let ru: Vec<f64> = u.iter().rev().cloned().collect();
        let right = pole_parity_d1_row_right(h0, h1, h2);
        let got_right = apply_four(&right, &ru, ru.len() - 4);
        assert_eq!(got_right.to_bits(), (-got_left).to_bits());
    }

    #[test]
    fn interior_stencils_are_exact_on_quadratics() {
        let (hm, hp) = (0.013, 0.019);
        let xs = [-hm, 0.0, hp];
        let u: Vec<f64> = xs.iter().map(|&x| 2.0 * x * x - 3.0 * x + 1.0).collect();
        let d1 = d1_interior(u[0], u[1], u[2], hm, hp);
        let d2 = d2_interior(u[0], u[1], u[2], hm, hp);
        assert!((d1 - (-3.0)).abs() < 1e-12);
        assert!((d2 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn interior_stencils_mirror_bitwise() {
        let (hm, hp) = (0.0123f64, 0.0187f64);
        let (um, uc, up) = (1.37, 1.21, 0.95);
        let d1 = d1_interior(um, uc, up, hm, hp);
        let d1m = d1_interior(up, uc, um, hp, hm);
        assert_eq!(d1.to_bits(), (-d1m).to_bits());
        let d2 = d2_interior(um, uc, up, hm, hp);
        let d2m = d2_interior(up, uc, um, hp, hm);
        assert_eq!(d2.to_bits(), d2m.to_bits());
    }

    #[test]
    fn fornberg_reproduces_uniform_second_derivative_weights() {
        let xs = [-1.0f64, 0.0, 1.0];
        let w = fornberg_weights(0.0, &xs, 2);
        assert!((w[0] - 1.0).abs() < 1e-14);
        assert!((w[1] + 2.0).abs() < 1e-14);
        assert!((w[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn one_sided_third_derivative_converges_second_order() {
        let mut errs = Vec::new();
        for &n in &[40usize, 80] {
            let h = 1.0 / n as f64;
            let hs = vec![h; 6];
            let u: Vec<f64> = (0..6).map(|i| (1.3 * i as f64 * h).sin()).collect();
            let d3 = left_end_derivative(&hs, &u, 5, 3);
            let exact = -(1.3f64).powi(3) * (0.0f64).cos();
            errs.push((d3 - exact).abs());
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.7, "third derivative order {order}");
    }

    #[test]
    fn end_derivatives_mirror_bitwise() {
        let h = vec![0.011f64, 0.013, 0.012, 0.0105, 0.014, 0.0135];
        let u = vec![0.0f64, 0.21, 0.38, 0.55, 0.69, 0.80, 0.92];
        for order in 1..=3usize {
            let left = left_end_derivative(&h, &u, 5, order);
            let ru: Vec<f64> = u.iter().rev().cloned().collect();
            let rh: Vec<f64> = h.iter().rev().cloned().collect();
            let right = right_end_derivative(&rh, &ru, 5, order);
            let expect = if order % 2 == 1 { -left } else { left };
            assert_eq!(right.to_bits(), expect.to_bits(), "order {order}");
        }
    }

    #[test]
    fn symmetric_sum_is_reversal_invariant() {
        let v = vec![0.1f64, 0.7, 0.33, 1.9, 2.22, 0.05, 0.41];
        let r: Vec<f64> = v.iter().rev().cloned().collect();
        assert_eq!(symmetric_sum(&v).to_bits(), symmetric_sum(&r).to_bits());
    }

    #[test]
    fn wide_first_derivative_is_exact_on_quartics() {
        // Five-node weights must differentiate degree-four polynomials exactly
        // up to roundoff, on an uneven spacing pattern.
        let h = vec![0.011f64, 0.0135, 0.012, 0.0125, 0.0131, 0.0119, 0.0124];
        let n = h.len() + 1;
        let mut s = vec![0.0f64; n];
        for i in 0..n - 1 {
            s[i + 1] = s[i] + h[i];
        }
        let f = |x: f64| 1.3 * x.powi(4) - 0.7 * x.powi(3) + 0.2 * x * x - x + 0.4;
        let df = |x: f64| 5.2 * x.powi(3) - 2.1 * x * x + 0.4 * x - 1.0;
        let u: Vec<f64> = s.iter().map(|&x| f(x)).collect();
        for i in 1..n - 1 {
            let d = d1_wide_closed(&h, &u, i);
            assert!((d - df(s[i])).abs() < 1e-9, "node {i}: {d} vs {}", df(s[i]));
        }
    }

    #[test]
    fn wide_first_derivative_mirrors_bitwise() {
        // Generic non-palindromic spacings.
        let h = vec![0.011f64, 0.0135, 0.012, 0.0125, 0.0131, 0.0119, 0.0124];
        let u = vec![0.0f64, 0.21, 0.42, 0.58, 0.71, 0.80, 0.86, 0.90];
        check_mirror(&h, &u);
        // Palindromic spacings (uniform) exercise the antisymmetrised branch.
        let hu = vec![0.0125f64; 7];
        check_mirror(&hu, &u);
        // Palindromic but non-uniform.
        let hp = vec![0.011f64, 0.013, 0.012, 0.014, 0.012, 0.013, 0.011];
        check_mirror(&hp, &u);
    }

    fn check_mirror(h: &[f64], u: &[f64]) {
        let n = u.len();
        let rh: Vec<f64> = h.iter().rev().cloned().collect();
        let ru: Vec<f64> = u.iter().rev().cloned().collect();
        for i in 1..n - 1 {
            let d = d1_wide_closed(h, u, i);
            let dm = d1_wide_closed(&rh, &ru, n - 1 - i);
            assert_eq!(d.to_bits(), (-dm).to_bits(), "mirror mismatch at node {i}");
            let d2 = d2_wide_closed(h, u, i);
            let d2m = d2_wide_closed(&rh, &ru, n - 1 - i);
            assert_eq!(d2.to_bits(), d2m.to_bits(), "d2 mirror mismatch at node {i}");
        }
    }

    #[test]
    fn wide_second_derivative_is_exact_on_quartics() {
        let h = vec![0.011f64, 0.0135, 0.012, 0.0125, 0.0131, 0.0119, 0.0124];
        let n = h.len() + 1;
        let mut s = vec![0.0f64; n];
        for i in 0..n - 1 {
            s[i + 1] = s[i] + h[i];
        }
        let f = |x: f64| 1.3 * x.powi(4) - 0.7 * x.powi(3) + 0.2 * x * x - x + 0.4;
        let d2f = |x: f64| 15.6 * x * x - 4.2 * x + 0.4;
        let u: Vec<f64> = s.iter().map(|&x| f(x)).collect();
        for i in 1..n - 1 {
            let d = d2_wide_closed(&h, &u, i);
            assert!((d - d2f(s[i])).abs() < 1e-6, "node {i}: {d} vs {}", d2f(s[i]));
        }
    }
}
