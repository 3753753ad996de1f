//! Special functions for the scale posteriors: digamma, log-gamma, the
//! logarithm of the modified Bessel function of the second kind, and moments
//! of the generalized inverse Gaussian distribution.
//!
//! Everything is computed in log space. Scale posteriors under a Gamma prior
//! have order `eta = alpha - (m1 + m2) / 2`, which reaches the hundreds or
//! thousands for realistic matrices, far outside the range where `K_nu` is
//! representable as a double.

use std::f64::consts::{LN_2, PI};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orders at or above this use the uniform asymptotic expansion.
pub const DEBYE_CROSSOVER: f64 = 50.0;

const MAX_DEBYE_TERMS: usize = 16;
const SERIES_EPS: f64 = 1e-17;
const MAX_SERIES_ITERS: usize = 100_000;

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Digamma function `psi(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!("digamma needs x > 0, got {x}")));
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Bernoulli tail: B_{2k} / (2k x^{2k})
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    Ok(acc + x.ln() - 0.5 / x - tail)
}

fn check_bessel_args(order: f64, arg: f64) -> Result<()> {
    if !order.is_finite() || !arg.is_finite() {
        return Err(Error::invalid(format!(
            "bessel K needs finite inputs, got order {order}, arg {arg}"
        )));
    }
    if !(arg > 0.0) {
        return Err(Error::invalid(format!("bessel K needs arg > 0, got {arg}")));
    }
    Ok(())
}

/// `log K_nu(x)` for any finite order and `x > 0`.
pub fn log_bessel_k(order: f64, arg: f64) -> Result<f64> {
    check_bessel_args(order, arg)?;
    let nu = order.abs();
    let value = if nu >= DEBYE_CROSSOVER {
        log_k_debye(nu, arg)
    } else {
        log_k_temme(nu, arg)?
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numerical(format!(
            "log K_{order}({arg}) is not finite"
        )))
    }
}

/// `K_{nu-1}(x) / K_nu(x)`.
pub fn bessel_k_ratio(order: f64, arg: f64) -> Result<f64> {
    let num = log_bessel_k(order - 1.0, arg)?;
    let den = log_bessel_k(order, arg)?;
    Ok((num - den).exp())
}

// Coefficients of 1/Gamma(z) = sum_{k>=1} c_k z^k (Abramowitz & Stegun 6.1.34).
const RECIP_GAMMA: [f64; 26] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_8,
    -0.042_002_635_034_095_2,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_3,
    -0.009_621_971_527_877_0,
    0.007_218_943_246_663_0,
    -0.001_165_167_591_859_1,
    -0.000_215_241_674_114_9,
    0.000_128_050_282_388_2,
    -0.000_020_134_854_780_7,
    -0.000_001_250_493_482_1,
    0.000_001_133_027_232_0,
    -0.000_000_205_633_841_7,
    0.000_000_006_116_095_0,
    0.000_000_005_002_007_5,
    -0.000_000_001_181_274_6,
    0.000_000_000_104_342_7,
    0.000_000_000_007_782_3,
    -0.000_000_000_003_696_8,
    0.000_000_000_000_510_0,
    -0.000_000_000_000_020_6,
    -0.000_000_000_000_005_4,
    0.000_000_000_000_001_4,
    0.000_000_000_000_000_1,
];

/// Returns `(gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu))` for `|mu| <= 1/2`,
/// with `gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)` and
/// `gam2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    // 1/Gamma(1+x) = sum_k c_k x^(k-1); split into even and odd powers.
    let mut odd = 0.0; // sum over k odd: c_k mu^(k-1)
    let mut even = 0.0; // sum over k even: c_k mu^(k-2)
    let mu2 = mu * mu;
    for k in (1..=RECIP_GAMMA.len()).rev() {
        let c = RECIP_GAMMA[k - 1];
        if k % 2 == 1 {
            odd = odd * mu2 + c;
        } else {
            even = even * mu2 + c;
        }
    }
    let gam2 = odd;
    let gam1 = -even;
    let gampl = gam2 - mu * gam1; // 1/Gamma(1+mu)
    let gammi = gam2 + mu * gam1; // 1/Gamma(1-mu)
    (gam1, gam2, gampl, gammi)
}

/// Temme's method for `K_mu`, `K_{mu+1}` with `|mu| <= 1/2`, then forward
/// recurrence in ratio form up to `nu`.
fn log_k_temme(nu: f64, x: f64) -> Result<f64> {
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let steps = nl as usize;
    let mu2 = mu * mu;
    let (log_k_mu, mut ratio) = if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < 1e-15 {
            1.0
        } else {
            pimu / pimu.sin()
        };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < 1e-15 { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        let mut converged = false;
        for i in 1..MAX_SERIES_ITERS {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            let del1 = c * (p - fi * ff);
            sum1 += del1;
            if del.abs() < sum.abs() * SERIES_EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::numerical(format!(
                "K series did not converge at nu={nu}, x={x}"
            )));
        }
        let k_mu = sum;
        let k_mu1 = sum1 * 2.0 / x;
        (k_mu.ln(), k_mu1 / k_mu)
    } else {
        // Steed's continued fraction CF2 with Thompson-Barnett summation
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        let mut converged = false;
        for i in 1..MAX_SERIES_ITERS {
            let fi = i as f64;
            a -= 2.0 * fi;
            c = -a * c / (fi + 1.0);
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < SERIES_EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::numerical(format!(
                "K continued fraction did not converge at nu={nu}, x={x}"
            )));
        }
        h *= a1;
        let log_k_mu = 0.5 * (PI / (2.0 * x)).ln() - x - s.ln();
        (log_k_mu, (mu + x + 0.5 - h) / x)
    };
    // K_{m+1}/K_m = 2m/x + K_{m-1}/K_m
    let mut log_k = log_k_mu;
    for i in 1..=steps {
        log_k += ratio.ln();
        ratio = 2.0 * (mu + i as f64) / x + 1.0 / ratio;
    }
    Ok(log_k)
}

/// Polynomial coefficients (ascending powers) of the Debye polynomials
/// `u_k(t)`, generated from
/// `u_{k+1}(t) = t^2 (1 - t^2) u_k'(t) / 2 + (1/8) int_0^t (1 - 5 s^2) u_k(s) ds`.
fn debye_polynomials() -> &'static Vec<Vec<f64>> {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        let mut polys: Vec<Vec<f64>> = vec![vec![1.0]];
        for k in 0..MAX_DEBYE_TERMS - 1 {
            let u = &polys[k];
            let mut next = vec![0.0; u.len() + 3];
            // t^2 (1 - t^2) u'(t) / 2
            for (p, &c) in u.iter().enumerate().skip(1) {
                let dc = p as f64 * c;
                next[p + 1] += 0.5 * dc;
                next[p + 3] -= 0.5 * dc;
            }
            // (1/8) int_0^t (1 - 5 s^2) u(s) ds
            for (p, &c) in u.iter().enumerate() {
                next[p + 1] += c / (8.0 * (p as f64 + 1.0));
                next[p + 3] -= 5.0 * c / (8.0 * (p as f64 + 3.0));
            }
            polys.push(next);
        }
        polys
    })
}

fn horner(coefs: &[f64], t: f64) -> f64 {
    coefs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Uniform asymptotic expansion of `K_nu(nu z)` for large `nu`.
fn log_k_debye(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let root = z.hypot(1.0); // sqrt(1 + z^2)
    let p = 1.0 / root;
    let eta = root + (z / (1.0 + root)).ln();
    let polys = debye_polynomials();
    let mut series = 1.0;
    let mut nu_pow = 1.0;
    let mut sign = 1.0;
    for u in polys.iter().skip(1) {
        nu_pow *= nu;
        sign = -sign;
        let term = sign * horner(u, p) / nu_pow;
        series += term;
        if term.abs() < 1e-17 * series.abs() {
            break;
        }
    }
    0.5 * (PI / (2.0 * nu)).ln() - nu * eta - 0.5 * root.ln() + series.ln()
}

/// Parameters of `GIG(a, b, eta)` with density proportional to
/// `x^(eta-1) exp(-(a x + b / x) / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GigParams {
    pub a: f64,
    pub b: f64,
    pub eta: f64,
}

impl GigParams {
    pub fn new(a: f64, b: f64, eta: f64) -> Result<Self> {
        let p = GigParams { a, b, eta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) || !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::invalid(format!(
                "GIG needs a > 0 and b > 0, got a={}, b={}",
                self.a, self.b
            )));
        }
        if !self.eta.is_finite() {
            return Err(Error::invalid("GIG eta must be finite"));
        }
        Ok(())
    }
}

/// Moments of a GIG distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GigMoments {
    /// `E[1/x]`
    pub mean_inv: f64,
    /// `E[x]`
    pub mean: f64,
    /// `E[log x]`
    pub mean_log: f64,
    /// log of the density prefactor `(a/b)^(eta/2) / (2 K_eta(sqrt(ab)))`
    pub log_norm: f64,
}

const QUAD_TAIL: f64 = 40.0;
const QUAD_MAX_NODES: usize = 200_000;

/// `E[log x]` by the trapezoid rule in `u = log x`, offset by the mode so the
/// result is accurate even when it is close to zero.
fn gig_mean_log(a: f64, b: f64, eta: f64) -> Result<f64> {
    let root = (eta * eta + a * b).sqrt();
    let mode = if eta >= 0.0 { ((eta + root) / a).ln() } else { (b / (root - eta)).ln() };
    let (pa, pb) = (0.5 * a * mode.exp(), 0.5 * b * (-mode).exp());
    // log density relative to the mode, d = u - mode
    let rel_log = |d: f64| eta * d - pa * d.exp_m1() - pb * (-d).exp_m1();
    let h = 0.25 / (pa + pb).sqrt();
    let (mut mass, mut first) = (1.0, 0.0);
    for side in [1.0, -1.0] {
        let mut i = 1;
        loop {
            let d = side * i as f64 * h;
            let lw = rel_log(d);
            let w = lw.exp();
            mass += w;
            first += w * d;
            if lw < -QUAD_TAIL {
                break;
            }
            i += 1;
            if i > QUAD_MAX_NODES {
                return Err(Error::numerical(format!(
                    "GIG log-moment quadrature did not reach the tail for a={a}, b={b}, eta={eta}"
                )));
            }
        }
    }
    Ok(mode + first / mass)
}

pub fn gig_moments(p: &GigParams) -> Result<GigMoments> {
    p.validate()?;
    let GigParams { a, b, eta } = *p;
    let omega = (a * b).sqrt();
    let lk = log_bessel_k(eta, omega)?;
    let lk_minus = log_bessel_k(eta - 1.0, omega)?;
    let lk_plus = log_bessel_k(eta + 1.0, omega)?;
    let ln_ab = (a / b).ln();
    let moments = GigMoments {
        mean_inv: (0.5 * ln_ab + lk_minus - lk).exp(),
        mean: (-0.5 * ln_ab + lk_plus - lk).exp(),
        mean_log: gig_mean_log(a, b, eta)?,
        log_norm: 0.5 * eta * ln_ab - LN_2 - lk,
    };
    if !(moments.mean_inv.is_finite() && moments.mean.is_finite() && moments.mean_log.is_finite())
    {
        return Err(Error::numerical(format!("GIG moments not finite for {p:?}")));
    }
    Ok(moments)
}
