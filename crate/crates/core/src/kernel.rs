//! Kernel parameters, the normalizing constant `C(n, s)` and the explicit
//! torsion-type solution on the unit ball used as a validation oracle.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quad;

/// Parameters of the kernel `|z|^{-n-2s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub n: usize,
    pub s: f64,
    /// Multiply the kernel by `C(n, s)` (needed for the `s -> 1` limit).
    pub normalized: bool,
}

impl KernelParams {
    pub fn new(n: usize, s: f64, normalized: bool) -> Result<Self> {
        check(n, s)?;
        Ok(Self { n, s, normalized })
    }

    /// Multiplicative constant in front of the kernel: `C(n, s)` or 1.
    pub fn constant(&self) -> f64 {
        if self.normalized {
            // parameters were validated on construction
            normalization_constant(self.n, self.s).expect("validated kernel params")
        } else {
            1.0
        }
    }
}

fn check(n: usize, s: f64) -> Result<()> {
    if !(n == 1 || n == 2) {
        return Err(Error::Domain(format!("dimension must be 1 or 2, got {n}")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("order s must lie in (0, 1), got {s}")));
    }
    Ok(())
}

/// `C(n, s) = (∫_{R^n} (1 - cos ζ₁) / |ζ|^{n+2s} dζ)^{-1}`.
///
/// The one-dimensional integral is split at `|ζ| = 1`: the inner part is
/// integrated term by term from the Taylor series of `1 - cos`, the outer
/// part is `∫ z^{-1-2s}` in closed form minus an oscillatory cosine integral
/// (adaptive quadrature period by period plus an asymptotic tail). In two
/// dimensions Fubini over `ζ₂` factors the integral into the 1D one times
/// `∫_R (1 + t²)^{-1-s} dt`.
pub fn normalization_constant(n: usize, s: f64) -> Result<f64> {
    check(n, s)?;
    let one_d = cosine_kernel_integral(s);
    Ok(match n {
        1 => 1.0 / one_d,
        _ => 1.0 / (one_d * transverse_integral(s)),
    })
}

/// `∫_R (1 - cos z) |z|^{-1-2s} dz`.
fn cosine_kernel_integral(s: f64) -> f64 {
    // ∫_0^1 (1 - cos z) z^{-1-2s} dz = Σ_k (-1)^{k+1} / ((2k)! (2k - 2s))
    let mut inner = 0.0;
    let mut factorial = 1.0;
    for k in 1..=12 {
        factorial *= (2 * k - 1) as f64 * (2 * k) as f64;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        inner += sign / (factorial * (2.0 * k as f64 - 2.0 * s));
    }
    let p = 1.0 + 2.0 * s;
    let power_part = 1.0 / (2.0 * s);
    2.0 * (inner + power_part - cosine_power_integral(p))
}

/// `∫_1^∞ cos(z) z^{-p} dz` for `p > 1`.
fn cosine_power_integral(p: f64) -> f64 {
    const PERIODS: usize = 200;
    let f = |z: f64| z.cos() * z.powf(-p);
    let mut total = quad::integrate(f, 1.0, 2.0 * PI, 1e-16, 1e-14);
    for k in 1..PERIODS {
        let a = 2.0 * PI * k as f64;
        total += quad::integrate(f, a, a + 2.0 * PI, 1e-17, 1e-13);
    }
    let r = 2.0 * PI * PERIODS as f64;
    // Re ∫_R^∞ e^{iz} z^{-p} dz = Re[ i e^{iR} R^{-p} Σ_k (-i)^k (p)_k R^{-k} ]
    let (mut sre, mut sim) = (0.0, 0.0);
    let mut coeff = 1.0; // (p)_k R^{-k}
    let (mut pre, mut pim) = (1.0, 0.0); // (-i)^k
    for k in 0..10 {
        sre += coeff * pre;
        sim += coeff * pim;
        coeff *= (p + k as f64) / r;
        let (a, b) = (pim, -pre);
        pre = a;
        pim = b;
    }
    // i e^{iR} = -sin R + i cos R
    let (er, ei) = (-r.sin(), r.cos());
    let tail = r.powf(-p) * (er * sre - ei * sim);
    total + tail
}

/// `∫_R (1 + t²)^{-1-s} dt`.
fn transverse_integral(s: f64) -> f64 {
    const CUT: f64 = 10.0;
    let body = quad::integrate(|t| (1.0 + t * t).powf(-1.0 - s), 0.0, CUT, 1e-16, 1e-14);
    // (1 + t²)^{-1-s} = Σ_k binom(-1-s, k) t^{-2-2s-2k}
    let mut tail = 0.0;
    let mut binom = 1.0;
    for k in 0..16 {
        let e = 1.0 + 2.0 * s + 2.0 * k as f64;
        tail += binom * CUT.powf(-e) / e;
        binom *= (-1.0 - s - k as f64) / (k as f64 + 1.0);
    }
    2.0 * (body + tail)
}

/// Explicit solution of `(-Δ)^s u = 1` in the unit ball with `u = 0` outside.
///
/// `u(x) = κ (1 - |x|²)_+^s` with
/// `κ = Γ(n/2) / (2^{2s} Γ(n/2 + s) Γ(1 + s))` for the normalized operator;
/// for the unnormalized kernel the solution is larger by `C(n, s)`.
pub fn getoor_reference(params: &KernelParams, x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 >= 1.0 {
        return 0.0;
    }
    let (n, s) = (params.n as f64, params.s);
    let kappa = gamma(n / 2.0) / (4f64.powf(s) * gamma(n / 2.0 + s) * gamma(1.0 + s));
    let scale = if params.normalized {
        1.0
    } else {
        normalization_constant(params.n, s).expect("validated kernel params")
    };
    scale * kappa * (1.0 - r2).powf(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(normalization_constant(1, 0.0).is_err());
        assert!(normalization_constant(1, 1.0).is_err());
        assert!(normalization_constant(3, 0.5).is_err());
        assert!(KernelParams::new(2, -0.1, true).is_err());
    }

    #[test]
    fn half_order_in_one_dimension() {
        let c = normalization_constant(1, 0.5).unwrap();
        assert!((c - 1.0 / PI).abs() < 1e-10 * c, "{c}");
    }

    #[test]
    fn getoor_basic_values() {
        let p = KernelParams::new(1, 0.5, true).unwrap();
        assert!((getoor_reference(&p, &[0.0]) - 1.0).abs() < 1e-12);
        assert_eq!(getoor_reference(&p, &[1.0]), 0.0);
        assert_eq!(getoor_reference(&p, &[-1.5]), 0.0);
        for x in [0.1, 0.37, 0.8] {
            assert_eq!(getoor_reference(&p, &[x]), getoor_reference(&p, &[-x]));
        }
        let q = KernelParams::new(2, 0.3, true).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..=20 {
            let r = k as f64 / 20.0;
            let v = getoor_reference(&q, &[r * 0.6, r * 0.8]);
            assert!(v >= 0.0 && v <= last);
            last = v;
        }
    }

    #[test]
    fn unnormalized_reference_scales_by_constant() {
        let a = KernelParams::new(1, 0.3, true).unwrap();
        let b = KernelParams::new(1, 0.3, false).unwrap();
        let c = normalization_constant(1, 0.3).unwrap();
        let x = [0.4];
        assert!((getoor_reference(&b, &x) - c * getoor_reference(&a, &x)).abs() < 1e-14);
    }
}
