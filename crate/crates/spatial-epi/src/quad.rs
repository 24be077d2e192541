//! Trapezoid quadrature on uniform grids.
//!
//! The solvers integrate products g(x)·d(x) where d is only known at grid
//! nodes and g may vanish beyond a support cutoff (e.g. a survival function
//! with a jump at a fixed duration). Everything here reduces to node weights
//! so callers can reuse one weight vector across many space cells.

const ALIGN_EPS: f64 = 1e-9;

/// Plain trapezoid rule over all nodes, spacing `h`.
pub(crate) fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            h * (0.5 * (values[0] + values[n - 1]) + inner)
        }
    }
}

/// Node weights `w_j` (node positions `j*h`, `j < n_nodes`) such that
/// `Σ w_j d_j ≈ ∫_0^{min(upper, (n_nodes-1)h)} g(x) d(x) dx`
/// for a grid-sampled integrand d. A non-aligned `upper` produces a partial
/// final cell with d linearly interpolated between its bracketing nodes.
pub(crate) fn weighted_trapezoid_weights(
    h: f64,
    n_nodes: usize,
    upper: f64,
    g: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut w = vec![0.0; n_nodes];
    if n_nodes == 0 {
        return w;
    }
    let grid_end = (n_nodes - 1) as f64 * h;
    let u = upper.min(grid_end);
    if u <= ALIGN_EPS * h {
        return w;
    }
    let j_full = ((u / h) + ALIGN_EPS).floor() as usize;
    let j_full = j_full.min(n_nodes - 1);
    // Full trapezoid over [0, j_full*h].
    if j_full >= 1 {
        for (j, wj) in w.iter_mut().enumerate().take(j_full + 1) {
            let weight = if j == 0 || j == j_full { 0.5 * h } else { h };
            *wj += weight * g(j as f64 * h);
        }
    }
    // Partial cell [j_full*h, u].
    let delta = u - j_full as f64 * h;
    if delta > ALIGN_EPS * h && j_full + 1 < n_nodes {
        let theta = delta / h;
        let g_lo = g(j_full as f64 * h);
        let g_up = g(u);
        w[j_full] += 0.5 * delta * (g_lo + g_up * (1.0 - theta));
        w[j_full + 1] += 0.5 * delta * g_up * theta;
    }
    w
}

/// Weights `c_i` on time nodes `i = 0..=m` such that
/// `Σ c_i u_i ≈ ∫_0^{t_m} g(t_m - s) u(s) ds`,
/// where `g(v) = g_smooth(v)` for `v < cutoff` and 0 beyond. The weights are
/// computed in the lag variable and reversed onto the time nodes, so a cutoff
/// inside the range keeps second-order accuracy.
pub(crate) fn conv_weights(
    m: usize,
    h: f64,
    cutoff: Option<f64>,
    g_smooth: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut buf = Vec::new();
    conv_weights_into(m, h, cutoff, g_smooth, &mut buf);
    buf
}

/// `conv_weights` into a reusable buffer (solver hot path).
pub(crate) fn conv_weights_into(
    m: usize,
    h: f64,
    cutoff: Option<f64>,
    g_smooth: impl Fn(f64) -> f64,
    buf: &mut Vec<f64>,
) {
    let t_m = m as f64 * h;
    let upper = cutoff.map_or(t_m, |c| c.min(t_m));
    buf.clear();
    buf.extend(weighted_trapezoid_weights(h, m + 1, upper, g_smooth));
    buf.reverse();
}
