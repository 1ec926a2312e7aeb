//! Spatial, Grassmann and deformation kernels with analytic derivatives.
//!
//! All Gaussian kernels share the radial profile `f(s) = exp(-s/σ²)` of the
//! squared distance `s`, whose k-th derivative is `(-1/σ²)^k f(s)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value and first four derivatives of `s ↦ exp(-s/σ²)`.
#[inline]
pub(crate) fn gaussian_profile(s: f64, sigma: f64) -> [f64; 5] {
    let c = -1.0 / (sigma * sigma);
    let f0 = (c * s).exp();
    [f0, c * f0, c * c * f0, c * c * c * f0, c * c * c * c * f0]
}

fn check_scale(name: &str, sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be a positive finite number, got {sigma}")))
    }
}

/// Radial kernel on positions, `ρ(s) = exp(-s/σ_ρ²)` with `s = |x - x'|²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialKernel {
    sigma: f64,
}

impl SpatialKernel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        check_scale("sigma_rho", sigma)?;
        Ok(SpatialKernel { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eval(&self, s: f64) -> f64 {
        gaussian_profile(s, self.sigma)[0]
    }

    pub fn d1(&self, s: f64) -> f64 {
        gaussian_profile(s, self.sigma)[1]
    }

    pub fn d2(&self, s: f64) -> f64 {
        gaussian_profile(s, self.sigma)[2]
    }

    pub fn d3(&self, s: f64) -> f64 {
        gaussian_profile(s, self.sigma)[3]
    }
}

/// Kernel on the cosine `t = ⟨T, T'⟩` between oriented planes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GrassmannKernel {
    /// `γ(t) = t`. Oriented and indefinite (current-like).
    Linear,
    /// `γ(t) = t²`. Orientation-blind.
    Binet,
    /// `γ(t) = exp(-2(1-t)/σ_g²)`. Oriented and strictly positive.
    OrientedGaussian {
        #[serde(default = "unit_scale")]
        sigma_g: f64,
    },
}

fn unit_scale() -> f64 {
    1.0
}

impl GrassmannKernel {
    pub fn oriented_gaussian(sigma_g: f64) -> Result<Self> {
        check_scale("sigma_g", sigma_g)?;
        Ok(GrassmannKernel::OrientedGaussian { sigma_g })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GrassmannKernel::OrientedGaussian { sigma_g } => check_scale("sigma_g", sigma_g),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GrassmannKernel::Linear => "linear",
            GrassmannKernel::Binet => "binet",
            GrassmannKernel::OrientedGaussian { .. } => "oriented_gaussian",
        }
    }

    /// Whether the kernel takes only nonnegative values, as quantization requires.
    pub fn is_nonnegative(&self) -> bool {
        !matches!(self, GrassmannKernel::Linear)
    }

    /// Value and derivatives up to order 3, with `t` clamped to `[-1, 1]`.
    pub fn derivs(&self, t: f64) -> [f64; 4] {
        let t = t.clamp(-1.0, 1.0);
        match *self {
            GrassmannKernel::Linear => [t, 1.0, 0.0, 0.0],
            GrassmannKernel::Binet => [t * t, 2.0 * t, 2.0, 0.0],
            GrassmannKernel::OrientedGaussian { sigma_g } => {
                let c = 2.0 / (sigma_g * sigma_g);
                let g = (-c * (1.0 - t)).exp();
                [g, c * g, c * c * g, c * c * c * g]
            }
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.derivs(t)[0]
    }

    pub fn d1(&self, t: f64) -> f64 {
        self.derivs(t)[1]
    }

    pub fn d2(&self, t: f64) -> f64 {
        self.derivs(t)[2]
    }

    pub fn d3(&self, t: f64) -> f64 {
        self.derivs(t)[3]
    }
}

/// The separable varifold kernel `ρ(|x-x'|²) γ(⟨T,T'⟩)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarifoldKernel {
    pub spatial: SpatialKernel,
    pub grassmann: GrassmannKernel,
}

impl VarifoldKernel {
    pub fn new(spatial: SpatialKernel, grassmann: GrassmannKernel) -> Self {
        VarifoldKernel { spatial, grassmann }
    }
}

/// Scalar Gaussian deformation kernel `K_V(x,y) = exp(-|x-y|²/σ_V²) Id`.
///
/// Derivatives are taken with respect to the first argument `x`; tensors are
/// returned row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeformationKernel {
    sigma: f64,
}

impl DeformationKernel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        check_scale("sigma_v", sigma)?;
        Ok(DeformationKernel { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub(crate) fn profile(&self, s: f64) -> [f64; 5] {
        gaussian_profile(s, self.sigma)
    }

    fn diff(x: &[f64], y: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), y.len());
        x.iter().zip(y).map(|(a, b)| a - b).collect()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let z = Self::diff(x, y);
        self.profile(crate::grassmann::dot(&z, &z))[0]
    }

    /// `∇ₓ K = 2 f'(s) z`, `z = x - y`.
    pub fn d1(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let z = Self::diff(x, y);
        let f = self.profile(crate::grassmann::dot(&z, &z));
        z.iter().map(|zi| 2.0 * f[1] * zi).collect()
    }

    /// `∇ₓ² K = 4 f'' z zᵀ + 2 f' I`.
    pub fn d2(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let z = Self::diff(x, y);
        let n = z.len();
        let f = self.profile(crate::grassmann::dot(&z, &z));
        let mut out = vec![0.0; n * n];
        kernel_hessian(&z, f[1], f[2], &mut out);
        out
    }

    /// `∇ₓ³ K = 8 f''' z⊗z⊗z + 4 f'' (δ z + δ z + δ z)`, index `[a*n*n + b*n + c]`.
    pub fn d3(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let z = Self::diff(x, y);
        let n = z.len();
        let f = self.profile(crate::grassmann::dot(&z, &z));
        let mut out = vec![0.0; n * n * n];
        kernel_third(&z, f[2], f[3], &mut out);
        out
    }
}

pub(crate) fn kernel_hessian(z: &[f64], f1: f64, f2: f64, out: &mut [f64]) {
    let n = z.len();
    for a in 0..n {
        for b in 0..n {
            out[a * n + b] = 4.0 * f2 * z[a] * z[b] + if a == b { 2.0 * f1 } else { 0.0 };
        }
    }
}

pub(crate) fn kernel_third(z: &[f64], f2: f64, f3: f64, out: &mut [f64]) {
    let n = z.len();
    let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                out[(a * n + b) * n + c] = 8.0 * f3 * z[a] * z[b] * z[c]
                    + 4.0 * f2 * (delta(a, b) * z[c] + delta(a, c) * z[b] + delta(b, c) * z[a]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn spatial_values() {
        let k = SpatialKernel::gaussian(1.0).unwrap();
        assert_eq!(k.eval(0.0), 1.0);
        assert!((k.eval(1.0) - 0.367_879_441_171_442_33).abs() < 1e-15);
        let k = SpatialKernel::gaussian(1.3).unwrap();
        let h = 1e-5;
        let fd = (k.eval(0.7 + h) - k.eval(0.7 - h)) / (2.0 * h);
        assert!(rel(fd, k.d1(0.7)) < 1e-7);
    }

    #[test]
    fn grassmann_values() {
        assert_eq!(GrassmannKernel::Linear.eval(1.0), 1.0);
        assert_eq!(GrassmannKernel::Binet.eval(-0.5), 0.25);
        let og = GrassmannKernel::oriented_gaussian(1.0).unwrap();
        assert!((og.eval(0.0) - 0.135_335_283_236_612_7).abs() < 1e-15);
        assert_eq!(og.eval(1.0), 1.0);
        // clamped on entry
        assert_eq!(GrassmannKernel::Linear.eval(1.5), 1.0);
    }

    #[test]
    fn rejects_bad_scales() {
        assert!(SpatialKernel::gaussian(0.0).is_err());
        assert!(DeformationKernel::gaussian(-1.0).is_err());
        assert!(GrassmannKernel::oriented_gaussian(f64::NAN).is_err());
    }

    #[test]
    fn scalar_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grass = [
            GrassmannKernel::Linear,
            GrassmannKernel::Binet,
            GrassmannKernel::oriented_gaussian(0.8).unwrap(),
        ];
        let h = 1e-5;
        for _ in 0..100 {
            let sigma = rng.gen_range(0.5..2.0);
            let k = SpatialKernel::gaussian(sigma).unwrap();
            let s = rng.gen_range(0.0..3.0);
            let fd = |f: &dyn Fn(f64) -> f64| (f(s + h) - f(s - h)) / (2.0 * h);
            assert!(close(fd(&|x| k.eval(x)), k.d1(s), 1e-6));
            assert!(close(fd(&|x| k.d1(x)), k.d2(s), 1e-6));
            assert!(close(fd(&|x| k.d2(x)), k.d3(s), 1e-6));
            let t = rng.gen_range(-0.9..0.9);
            for g in &grass {
                let fd = |f: &dyn Fn(f64) -> f64| (f(t + h) - f(t - h)) / (2.0 * h);
                assert!(close(fd(&|x| g.eval(x)), g.d1(t), 1e-6));
                assert!(close(fd(&|x| g.d1(x)), g.d2(t), 1e-6));
                assert!(close(fd(&|x| g.d2(x)), g.d3(t), 1e-6));
            }
        }
    }

    #[test]
    fn deformation_kernel_identities() {
        let k = DeformationKernel::gaussian(0.7).unwrap();
        let x = [0.3, -1.2, 0.5];
        assert_eq!(k.eval(&x, &x), 1.0);
        assert!(k.d1(&x, &x).iter().all(|&v| v == 0.0));
        let h = k.d2(&x, &x);
        for a in 0..3 {
            for b in 0..3 {
                let expect = if a == b { -2.0 / 0.49 } else { 0.0 };
                assert!((h[a * 3 + b] - expect).abs() < 1e-14);
            }
        }
        let y = [1.0, 0.0, -0.4];
        assert_eq!(k.eval(&x, &y), k.eval(&y, &x));
    }

    #[test]
    fn deformation_hessian_at_reference_point() {
        let k = DeformationKernel::gaussian(1.0).unwrap();
        let (x, y) = ([0.0, 0.0], [1.0, 0.0]);
        let hess = k.d2(&x, &y);
        let step = 1e-6;
        for b in 0..2 {
            let mut xp = x;
            xp[b] += step;
            let mut xm = x;
            xm[b] -= step;
            let (gp, gm) = (k.d1(&xp, &y), k.d1(&xm, &y));
            for a in 0..2 {
                let fd = (gp[a] - gm[a]) / (2.0 * step);
                let exact = hess[a * 2 + b];
                assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-9), "{a}{b}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn deformation_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..100 {
            let n = rng.gen_range(1..=3);
            let k = DeformationKernel::gaussian(rng.gen_range(0.5..2.0)).unwrap();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (g, hs, t) = (k.d1(&x, &y), k.d2(&x, &y), k.d3(&x, &y));
            let scale1 = g.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
            let scale2 = hs.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
            let scale3 = t.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
            for c in 0..n {
                let mut xp = x.clone();
                xp[c] += h;
                let mut xm = x.clone();
                xm[c] -= h;
                let fd0 = (k.eval(&xp, &y) - k.eval(&xm, &y)) / (2.0 * h);
                assert!((fd0 - g[c]).abs() <= 1e-6 * scale1);
                let (gp, gm) = (k.d1(&xp, &y), k.d1(&xm, &y));
                let (hp, hm) = (k.d2(&xp, &y), k.d2(&xm, &y));
                for a in 0..n {
                    let fd1 = (gp[a] - gm[a]) / (2.0 * h);
                    assert!((fd1 - hs[a * n + c]).abs() <= 1e-6 * scale2);
                    for b in 0..n {
                        let fd2 = (hp[a * n + b] - hm[a * n + b]) / (2.0 * h);
                        assert!((fd2 - t[(a * n + b) * n + c]).abs() <= 1e-6 * scale3);
                    }
                }
            }
        }
    }
}
