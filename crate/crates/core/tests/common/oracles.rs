//! Slow reference computations used to check the fast paths.
//!
//! Nothing here calls into the library: integrals are computed by
//! trapezoidal quadrature in log space with step halving until the value
//! settles, and optimizers are plain bracketing searches.

/// Quadrature nodes on `[lo, hi]` together with log-weights
/// `log(h) + log f(t)`.
pub struct LogGrid {
    pub nodes: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub log_integral: f64,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn trapezoid(logf: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize, half_left: bool) -> LogGrid {
    let h = (hi - lo) / n as f64;
    let mut nodes = Vec::with_capacity(n + 1);
    let mut log_weights = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = lo + h * i as f64;
        let mut lw = h.ln() + logf(t);
        if (i == 0 && half_left) || i == n {
            lw -= std::f64::consts::LN_2;
        }
        nodes.push(t);
        log_weights.push(lw);
    }
    let log_integral = log_sum_exp(&log_weights);
    LogGrid {
        nodes,
        log_weights,
        log_integral,
    }
}

/// Trapezoid rule with repeated doubling of the node count.
pub fn converged_grid(logf: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> LogGrid {
    let mut n = 512;
    let mut grid = trapezoid(logf, lo, hi, n, true);
    loop {
        n *= 2;
        let next = trapezoid(logf, lo, hi, n, true);
        let change = (next.log_integral - grid.log_integral).abs();
        grid = next;
        if change <= 1e-14 * grid.log_integral.abs().max(1.0) || n >= 1 << 22 {
            return grid;
        }
    }
}

/// Expands outward from `center` in steps of `step` until `logf` has dropped
/// `drop` below its largest seen value on both sides.
fn support(logf: &dyn Fn(f64) -> f64, center: f64, step: f64, drop: f64, floor: Option<f64>) -> (f64, f64) {
    let peak = logf(center);
    let mut hi = center;
    let mut best = peak;
    loop {
        hi += step;
        let v = logf(hi);
        best = best.max(v);
        if v < best - drop {
            break;
        }
    }
    let mut lo = center;
    loop {
        if let Some(f) = floor {
            if lo - step <= f {
                lo = f;
                break;
            }
        }
        lo -= step;
        let v = logf(lo);
        best = best.max(v);
        if v < best - drop {
            break;
        }
    }
    (lo, hi)
}

fn log_cosh(y: f64) -> f64 {
    let a = y.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `log K_nu(x)` from `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt`.
pub fn log_k_quadrature(nu: f64, x: f64) -> f64 {
    let logf = move |t: f64| -x * t.cosh() + log_cosh(nu * t);
    // locate the mode by coarse scan
    let coarse = 0.05 * (1.0f64).min(1.0 / x.sqrt()).max(1e-6);
    let mut t = 0.0;
    let mut mode = 0.0;
    let mut best = logf(0.0);
    loop {
        t += coarse;
        let v = logf(t);
        if v > best {
            best = v;
            mode = t;
        }
        if v < best - 80.0 {
            break;
        }
    }
    let (lo, hi) = support(&logf, mode, coarse, 80.0, Some(0.0));
    converged_grid(&logf, lo.max(0.0), hi).log_integral
}

/// Moments of `GIG(a, b, eta)` by quadrature of the unnormalized density
/// `x^(eta-1) exp(-(a x + b/x)/2)` in `u = log x`.
#[derive(Debug, Clone, Copy)]
pub struct QuadMoments {
    pub mean_inv: f64,
    pub mean: f64,
    pub mean_log: f64,
    pub log_norm: f64,
}

pub fn gig_quadrature(a: f64, b: f64, eta: f64) -> QuadMoments {
    let logf = move |u: f64| eta * u - 0.5 * (a * u.exp() + b * (-u).exp());
    let root = (eta * eta + a * b).sqrt();
    let mode = if eta >= 0.0 {
        ((eta + root) / a).ln()
    } else {
        (b / (root - eta)).ln()
    };
    let curvature = 0.5 * (a * mode.exp() + b * (-mode).exp());
    let step = 0.5 / curvature.sqrt();
    let (lo, hi) = support(&logf, mode, step, 80.0, None);
    // two-sided domain: treat both ends as regular trapezoid ends
    let grid = converged_grid(&logf, lo, hi);
    let z = grid.log_integral;
    let expect = |g: &dyn Fn(f64) -> f64| -> f64 {
        grid.nodes
            .iter()
            .zip(&grid.log_weights)
            .map(|(&u, &lw)| (lw - z).exp() * g(u))
            .sum()
    };
    QuadMoments {
        mean_inv: expect(&|u| (-u).exp()),
        mean: expect(&|u| u.exp()),
        mean_log: expect(&|u| u),
        log_norm: -z,
    }
}

/// `KL(IG(a1, b1) || IG(a2, b2))` with both normalizers computed numerically.
pub fn ig_kl_quadrature(a1: f64, b1: f64, a2: f64, b2: f64) -> f64 {
    // densities in u = log x, Jacobian included: x^{-a} exp(-b/x)
    let log_p = move |u: f64| -a1 * u - b1 * (-u).exp();
    let log_q = move |u: f64| -a2 * u - b2 * (-u).exp();
    let mode = (b1 / a1).ln();
    let (lo, hi) = support(&log_p, mode, 0.5 / a1.sqrt(), 80.0, None);
    let grid_p = converged_grid(&log_p, lo, hi);
    let mode_q = (b2 / a2).ln();
    let (lo_q, hi_q) = support(&log_q, mode_q, 0.5 / a2.sqrt(), 80.0, None);
    let grid_q = converged_grid(&log_q, lo_q, hi_q);
    let zp = grid_p.log_integral;
    let zq = grid_q.log_integral;
    grid_p
        .nodes
        .iter()
        .zip(&grid_p.log_weights)
        .map(|(&u, &lw)| (lw - zp).exp() * ((log_p(u) - zp) - (log_q(u) - zq)))
        .sum()
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_section(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while (hi - lo).abs() > tol * (1.0 + c.abs()) {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Central difference of `f` along coordinate `index` of `x`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], index: usize, step: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[index] += step;
    minus[index] -= step;
    (f(&plus) - f(&minus)) / (2.0 * step)
}
