//! Reduced Hamiltonian dynamics of frame states under a Gaussian deformation kernel.
//!
//! The state `q` stacks per-atom blocks `(xᵢ, uᵢ⁽¹⁾ … uᵢ⁽ᵈ⁾)` and the costate `p`
//! the matching blocks `(pᵢˣ, pᵢ^{u₁} … pᵢ^{u_d})`. The optimal velocity field is
//!
//! ```text
//! v(y) = Σᵢ K(xᵢ, y) pᵢˣ + Σᵢ Σⱼ (∂₁K(xᵢ, y) · uᵢ⁽ʲ⁾) pᵢ^{uⱼ}
//! ```
//!
//! and the geodesic equations are
//!
//! ```text
//! ẋᵢ = v(xᵢ)            u̇ᵢ⁽ᵏ⁾ = dv(xᵢ) uᵢ⁽ᵏ⁾
//! ṗᵢˣ = -dvᵀ pᵢˣ - Σₖ d²v(·, uᵢ⁽ᵏ⁾)ᵀ pᵢ^{uₖ}      ṗᵢ^{uₖ} = -dvᵀ pᵢ^{uₖ}
//! ```
//!
//! Besides this field-based evaluation, the module carries a second route
//! through the pairwise expansion of `H_r = ½‖v‖²_V`, which provides the
//! Hessian-vector products needed by the reverse sweep in registration.

use crate::error::{Error, Result};
use crate::grassmann::dot;
use crate::kernels::{kernel_hessian, kernel_third, DeformationKernel};
use crate::sum::{map_rows, pairwise_sum};
use crate::varifold::DiscreteVarifold;

/// Default number of RK4 steps on `[0, 1]`.
pub const DEFAULT_STEPS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct ShootingState {
    n: usize,
    d: usize,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl ShootingState {
    pub fn new(n: usize, d: usize, q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let block = n * (d + 1);
        if d == 0 || n < d {
            return Err(Error::dims(format!("invalid dimensions n={n}, d={d}")));
        }
        if q.len() != p.len() || !q.len().is_multiple_of(block) {
            return Err(Error::dims(format!(
                "state of length {} and costate of length {} for blocks of {block}",
                q.len(),
                p.len()
            )));
        }
        Ok(ShootingState { n, d, q, p })
    }

    /// The configuration of `mu` with zero costate.
    pub fn at_rest(mu: &DiscreteVarifold) -> Self {
        let q = mu.as_flat().to_vec();
        let p = vec![0.0; q.len()];
        ShootingState { n: mu.n(), d: mu.d(), q, p }
    }

    pub fn with_costate(mu: &DiscreteVarifold, p: Vec<f64>) -> Result<Self> {
        Self::new(mu.n(), mu.d(), mu.as_flat().to_vec(), p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn block(&self) -> usize {
        self.n * (self.d + 1)
    }

    pub fn atoms(&self) -> usize {
        self.q.len() / self.block()
    }

    /// The varifold encoded by `q`.
    pub fn configuration(&self) -> DiscreteVarifold {
        DiscreteVarifold::from_flat(self.n, self.d, self.q.clone()).expect("state blocks are valid")
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|v| v.is_finite())
    }

    fn view(&self, i: usize) -> AtomView<'_> {
        AtomView::of(&self.q, &self.p, i, self.n, self.block())
    }

    /// `self + h · rate`, elementwise.
    fn offset(&self, h: f64, rate: &ShootingState) -> ShootingState {
        ShootingState {
            n: self.n,
            d: self.d,
            q: self.q.iter().zip(&rate.q).map(|(y, k)| y + h * k).collect(),
            p: self.p.iter().zip(&rate.p).map(|(y, k)| y + h * k).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        (dot(&self.q, &self.q) + dot(&self.p, &self.p)).sqrt()
    }
}

#[derive(Clone, Copy)]
struct AtomView<'a> {
    x: &'a [f64],
    u: &'a [f64],
    a: &'a [f64],
    b: &'a [f64],
}

impl<'a> AtomView<'a> {
    fn of(q: &'a [f64], p: &'a [f64], i: usize, n: usize, block: usize) -> Self {
        let (lo, hi) = (i * block, (i + 1) * block);
        AtomView {
            x: &q[lo..lo + n],
            u: &q[lo + n..hi],
            a: &p[lo..lo + n],
            b: &p[lo + n..hi],
        }
    }
}

/// `v(y)` and, depending on `order`, `dv(y)` (`[c*n + m] = ∂v_c/∂y_m`) and
/// `d²v(y)` (`[(c*n + m)*n + k]`). Unrequested parts are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldValue {
    pub v: Vec<f64>,
    pub dv: Vec<f64>,
    pub d2v: Vec<f64>,
}

/// Evaluates the velocity field generated by `state` at `y`, with spatial derivatives up to `order` (≤ 2).
pub fn velocity_and_jacobian(state: &ShootingState, kernel: &DeformationKernel, y: &[f64], order: usize) -> FieldValue {
    let (n, d) = (state.n, state.d);
    assert_eq!(y.len(), n, "probe point dimension");
    let mut out = FieldValue {
        v: vec![0.0; n],
        dv: if order >= 1 { vec![0.0; n * n] } else { Vec::new() },
        d2v: if order >= 2 { vec![0.0; n * n * n] } else { Vec::new() },
    };
    let mut z = vec![0.0; n];
    let mut k2 = vec![0.0; n * n];
    let mut k3 = vec![0.0; n * n * n];
    let mut k2u = vec![0.0; n];
    let mut k3u = vec![0.0; n * n];
    for i in 0..state.atoms() {
        let at = state.view(i);
        for c in 0..n {
            z[c] = at.x[c] - y[c];
        }
        let f = kernel.profile(dot(&z, &z));
        // ∇ₓK(xᵢ, y) = 2 f' z; every derivative in y flips the sign once.
        for c in 0..n {
            out.v[c] += f[0] * at.a[c];
        }
        for j in 0..d {
            let uj = &at.u[j * n..(j + 1) * n];
            let bj = &at.b[j * n..(j + 1) * n];
            let k1u = 2.0 * f[1] * dot(&z, uj);
            for c in 0..n {
                out.v[c] += k1u * bj[c];
            }
        }
        if order == 0 {
            continue;
        }
        kernel_hessian(&z, f[1], f[2], &mut k2);
        for m in 0..n {
            let k1m = 2.0 * f[1] * z[m];
            for c in 0..n {
                out.dv[c * n + m] -= k1m * at.a[c];
            }
        }
        for j in 0..d {
            let uj = &at.u[j * n..(j + 1) * n];
            let bj = &at.b[j * n..(j + 1) * n];
            for m in 0..n {
                k2u[m] = dot(&k2[m * n..(m + 1) * n], uj);
            }
            for c in 0..n {
                for m in 0..n {
                    out.dv[c * n + m] -= k2u[m] * bj[c];
                }
            }
        }
        if order == 1 {
            continue;
        }
        kernel_third(&z, f[2], f[3], &mut k3);
        for c in 0..n {
            for mk in 0..n * n {
                out.d2v[c * n * n + mk] += k2[mk] * at.a[c];
            }
        }
        for j in 0..d {
            let uj = &at.u[j * n..(j + 1) * n];
            let bj = &at.b[j * n..(j + 1) * n];
            for mk in 0..n * n {
                k3u[mk] = dot(&k3[mk * n..(mk + 1) * n], uj);
            }
            for c in 0..n {
                for mk in 0..n * n {
                    out.d2v[c * n * n + mk] += k3u[mk] * bj[c];
                }
            }
        }
    }
    out
}

/// `dv · w` for a `n×n` Jacobian stored as `[c*n + m]`.
fn jac_apply(dv: &[f64], w: &[f64], out: &mut [f64]) {
    let n = w.len();
    for c in 0..n {
        out[c] = dot(&dv[c * n..(c + 1) * n], w);
    }
}

/// Time derivative `(q̇, ṗ)` of the reduced Hamiltonian system, from the field and its derivatives.
pub fn hamiltonian_rhs(state: &ShootingState, kernel: &DeformationKernel) -> ShootingState {
    let (n, d, block) = (state.n, state.d, state.block());
    let rows = map_rows(state.atoms(), |i| {
        let at = state.view(i);
        let fv = velocity_and_jacobian(state, kernel, at.x, 2);
        let mut dq = vec![0.0; block];
        let mut dp = vec![0.0; block];
        dq[..n].copy_from_slice(&fv.v);
        for k in 0..d {
            jac_apply(&fv.dv, &at.u[k * n..(k + 1) * n], &mut dq[n + k * n..n + (k + 1) * n]);
        }
        for m in 0..n {
            let mut acc = 0.0;
            for c in 0..n {
                acc -= fv.dv[c * n + m] * at.a[c];
            }
            for k in 0..d {
                let uk = &at.u[k * n..(k + 1) * n];
                let bk = &at.b[k * n..(k + 1) * n];
                for c in 0..n {
                    acc -= bk[c] * dot(&fv.d2v[(c * n + m) * n..(c * n + m + 1) * n], uk);
                }
            }
            dp[m] = acc;
        }
        for k in 0..d {
            let bk = &at.b[k * n..(k + 1) * n];
            for m in 0..n {
                let mut acc = 0.0;
                for c in 0..n {
                    acc -= fv.dv[c * n + m] * bk[c];
                }
                dp[n + k * n + m] = acc;
            }
        }
        (dq, dp)
    });
    let (q, p): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    ShootingState { n, d, q: q.concat(), p: p.concat() }
}

/// `H_r = ½ Σᵢ [pᵢˣ·v(xᵢ) + Σₖ pᵢ^{uₖ}·dv(xᵢ)uᵢ⁽ᵏ⁾]`, which equals `½‖v‖²_V`.
pub fn reduced_hamiltonian(state: &ShootingState, kernel: &DeformationKernel) -> f64 {
    let (n, d) = (state.n, state.d);
    let rows = map_rows(state.atoms(), |i| {
        let at = state.view(i);
        let fv = velocity_and_jacobian(state, kernel, at.x, 1);
        let mut acc = dot(at.a, &fv.v);
        let mut w = vec![0.0; n];
        for k in 0..d {
            jac_apply(&fv.dv, &at.u[k * n..(k + 1) * n], &mut w);
            acc += dot(&at.b[k * n..(k + 1) * n], &w);
        }
        acc
    });
    0.5 * pairwise_sum(&rows)
}

/// Scalars shared by the pairwise energy, its gradient and its tangent.
struct PairWork {
    n: usize,
    d: usize,
    z: Vec<f64>,
    zu: Vec<f64>,
    zw: Vec<f64>,
    beta: Vec<f64>,
    betap: Vec<f64>,
    c: Vec<f64>,
    uw: Vec<f64>,
    ezu: Vec<f64>,
    ezw: Vec<f64>,
    dz: Vec<f64>,
    dzu: Vec<f64>,
    dzw: Vec<f64>,
    dbeta: Vec<f64>,
    dbetap: Vec<f64>,
    dc: Vec<f64>,
    duw: Vec<f64>,
    dezu: Vec<f64>,
    dezw: Vec<f64>,
}

impl PairWork {
    fn new(n: usize, d: usize) -> Self {
        let v = |len| vec![0.0; len];
        PairWork {
            n,
            d,
            z: v(n),
            zu: v(d),
            zw: v(d),
            beta: v(d),
            betap: v(d),
            c: v(d * d),
            uw: v(d * d),
            ezu: v(d),
            ezw: v(d),
            dz: v(n),
            dzu: v(d),
            dzw: v(d),
            dbeta: v(d),
            dbetap: v(d),
            dc: v(d * d),
            duw: v(d * d),
            dezu: v(d),
            dezw: v(d),
        }
    }

    fn vec(m: &[f64], k: usize, n: usize) -> &[f64] {
        &m[k * n..(k + 1) * n]
    }

    /// Fills the pair scalars; returns `(s, α)` with `s = |xᵢ - xⱼ|²`, `α = aᵢ·aⱼ`.
    fn fill(&mut self, i: &AtomView, j: &AtomView) -> (f64, f64) {
        let (n, d) = (self.n, self.d);
        for c in 0..n {
            self.z[c] = i.x[c] - j.x[c];
        }
        for k in 0..d {
            let (uik, bik) = (Self::vec(i.u, k, n), Self::vec(i.b, k, n));
            let (ujk, bjk) = (Self::vec(j.u, k, n), Self::vec(j.b, k, n));
            self.zu[k] = dot(&self.z, uik);
            self.zw[k] = dot(&self.z, ujk);
            self.beta[k] = dot(bik, j.a);
            self.betap[k] = dot(i.a, bjk);
            for l in 0..d {
                self.c[k * d + l] = dot(bik, Self::vec(j.b, l, n));
                self.uw[k * d + l] = dot(uik, Self::vec(j.u, l, n));
            }
        }
        (dot(&self.z, &self.z), dot(i.a, j.a))
    }

    /// The pair term `eᵢⱼ` of `H_r = ½ Σᵢⱼ eᵢⱼ`.
    fn energy(&mut self, i: &AtomView, j: &AtomView, kernel: &DeformationKernel) -> f64 {
        let d = self.d;
        let (s, alpha) = self.fill(i, j);
        let f = kernel.profile(s);
        let mut e = f[0] * alpha;
        for k in 0..d {
            e += 2.0 * f[1] * (self.zu[k] * self.beta[k] - self.zw[k] * self.betap[k]);
            for l in 0..d {
                let ckl = self.c[k * d + l];
                e -= ckl * (4.0 * f[2] * self.zu[k] * self.zw[l] + 2.0 * f[1] * self.uw[k * d + l]);
            }
        }
        e
    }

    /// Adds `∂eᵢⱼ/∂(atom i)` into `(gq, gp)` (one block each). Leaves `ezu`, `ezw` and
    /// returns `(f, G)` for reuse by the tangent.
    fn grad(
        &mut self,
        i: &AtomView,
        j: &AtomView,
        kernel: &DeformationKernel,
        gq: &mut [f64],
        gp: &mut [f64],
    ) -> ([f64; 5], f64, f64) {
        let (n, d) = (self.n, self.d);
        let (s, alpha) = self.fill(i, j);
        let f = kernel.profile(s);
        let mut big_g = f[1] * alpha;
        for k in 0..d {
            big_g += 2.0 * f[2] * (self.zu[k] * self.beta[k] - self.zw[k] * self.betap[k]);
            for l in 0..d {
                let ckl = self.c[k * d + l];
                big_g -= ckl * (4.0 * f[3] * self.zu[k] * self.zw[l] + 2.0 * f[2] * self.uw[k * d + l]);
            }
        }
        for k in 0..d {
            let mut ezu = 2.0 * f[1] * self.beta[k];
            let mut ezw = -2.0 * f[1] * self.betap[k];
            for l in 0..d {
                ezu -= 4.0 * f[2] * self.c[k * d + l] * self.zw[l];
                ezw -= 4.0 * f[2] * self.c[l * d + k] * self.zu[l];
            }
            self.ezu[k] = ezu;
            self.ezw[k] = ezw;
        }
        let (gx, gu) = gq.split_at_mut(n);
        let (ga, gb) = gp.split_at_mut(n);
        for c in 0..n {
            gx[c] += 2.0 * big_g * self.z[c];
            ga[c] += f[0] * j.a[c];
        }
        for k in 0..d {
            let (uik, ujk, bjk) = (Self::vec(i.u, k, n), Self::vec(j.u, k, n), Self::vec(j.b, k, n));
            for c in 0..n {
                gx[c] += self.ezu[k] * uik[c] + self.ezw[k] * ujk[c];
                ga[c] -= 2.0 * f[1] * self.zw[k] * bjk[c];
                gu[k * n + c] += self.ezu[k] * self.z[c];
                gb[k * n + c] += 2.0 * f[1] * self.zu[k] * j.a[c];
            }
            for l in 0..d {
                let (ujl, bjl) = (Self::vec(j.u, l, n), Self::vec(j.b, l, n));
                let ckl = self.c[k * d + l];
                let wkl = 4.0 * f[2] * self.zu[k] * self.zw[l] + 2.0 * f[1] * self.uw[k * d + l];
                for c in 0..n {
                    gu[k * n + c] -= 2.0 * f[1] * ckl * ujl[c];
                    gb[k * n + c] -= wkl * bjl[c];
                }
            }
        }
        (f, big_g, alpha)
    }

    /// Adds the directional derivative of `∂eᵢⱼ/∂(atom i)` along tangents `(di, dj)`.
    #[allow(clippy::too_many_arguments)]
    fn hvp(
        &mut self,
        i: &AtomView,
        j: &AtomView,
        di: &AtomView,
        dj: &AtomView,
        kernel: &DeformationKernel,
        hq: &mut [f64],
        hp: &mut [f64],
        scratch: &mut (Vec<f64>, Vec<f64>),
    ) {
        let (n, d) = (self.n, self.d);
        // Value pass fills z, zu, ..., ezu, ezw. Its output is discarded.
        scratch.0.iter_mut().for_each(|v| *v = 0.0);
        scratch.1.iter_mut().for_each(|v| *v = 0.0);
        let (f, big_g, alpha) = self.grad(i, j, kernel, &mut scratch.0, &mut scratch.1);

        for c in 0..n {
            self.dz[c] = di.x[c] - dj.x[c];
        }
        let ds = 2.0 * dot(&self.z, &self.dz);
        // df[k] is the tangent of f[k].
        let df = [f[1] * ds, f[2] * ds, f[3] * ds, f[4] * ds];
        let dalpha = dot(di.a, j.a) + dot(i.a, dj.a);
        for k in 0..d {
            let (uik, bik, duik, dbik) = (Self::vec(i.u, k, n), Self::vec(i.b, k, n), Self::vec(di.u, k, n), Self::vec(di.b, k, n));
            let (ujk, bjk, dujk, dbjk) = (Self::vec(j.u, k, n), Self::vec(j.b, k, n), Self::vec(dj.u, k, n), Self::vec(dj.b, k, n));
            self.dzu[k] = dot(&self.dz, uik) + dot(&self.z, duik);
            self.dzw[k] = dot(&self.dz, ujk) + dot(&self.z, dujk);
            self.dbeta[k] = dot(dbik, j.a) + dot(bik, dj.a);
            self.dbetap[k] = dot(di.a, bjk) + dot(i.a, dbjk);
            for l in 0..d {
                let (ujl, bjl, dujl, dbjl) = (Self::vec(j.u, l, n), Self::vec(j.b, l, n), Self::vec(dj.u, l, n), Self::vec(dj.b, l, n));
                self.dc[k * d + l] = dot(dbik, bjl) + dot(bik, dbjl);
                self.duw[k * d + l] = dot(duik, ujl) + dot(uik, dujl);
            }
        }
        let mut dg = df[1] * alpha + f[1] * dalpha;
        for k in 0..d {
            dg += 2.0 * df[2] * (self.zu[k] * self.beta[k] - self.zw[k] * self.betap[k]);
            dg += 2.0
                * f[2]
                * (self.dzu[k] * self.beta[k] + self.zu[k] * self.dbeta[k]
                    - self.dzw[k] * self.betap[k]
                    - self.zw[k] * self.dbetap[k]);
            for l in 0..d {
                let (ckl, dckl) = (self.c[k * d + l], self.dc[k * d + l]);
                let (uw, duw) = (self.uw[k * d + l], self.duw[k * d + l]);
                let zz = self.zu[k] * self.zw[l];
                let dzz = self.dzu[k] * self.zw[l] + self.zu[k] * self.dzw[l];
                dg -= 4.0 * df[3] * ckl * zz + 4.0 * f[3] * (dckl * zz + ckl * dzz);
                dg -= 2.0 * df[2] * ckl * uw + 2.0 * f[2] * (dckl * uw + ckl * duw);
            }
        }
        for k in 0..d {
            let mut dezu = 2.0 * df[1] * self.beta[k] + 2.0 * f[1] * self.dbeta[k];
            let mut dezw = -2.0 * df[1] * self.betap[k] - 2.0 * f[1] * self.dbetap[k];
            for l in 0..d {
                let (ckl, dckl) = (self.c[k * d + l], self.dc[k * d + l]);
                let (clk, dclk) = (self.c[l * d + k], self.dc[l * d + k]);
                dezu -= 4.0 * df[2] * ckl * self.zw[l] + 4.0 * f[2] * (dckl * self.zw[l] + ckl * self.dzw[l]);
                dezw -= 4.0 * df[2] * clk * self.zu[l] + 4.0 * f[2] * (dclk * self.zu[l] + clk * self.dzu[l]);
            }
            self.dezu[k] = dezu;
            self.dezw[k] = dezw;
        }

        let (hx, hu) = hq.split_at_mut(n);
        let (ha, hb) = hp.split_at_mut(n);
        for c in 0..n {
            hx[c] += 2.0 * dg * self.z[c] + 2.0 * big_g * self.dz[c];
            ha[c] += df[0] * j.a[c] + f[0] * dj.a[c];
        }
        for k in 0..d {
            let (uik, duik) = (Self::vec(i.u, k, n), Self::vec(di.u, k, n));
            let (ujk, dujk) = (Self::vec(j.u, k, n), Self::vec(dj.u, k, n));
            let (bjk, dbjk) = (Self::vec(j.b, k, n), Self::vec(dj.b, k, n));
            for c in 0..n {
                hx[c] += self.dezu[k] * uik[c] + self.ezu[k] * duik[c] + self.dezw[k] * ujk[c] + self.ezw[k] * dujk[c];
                ha[c] -= 2.0 * df[1] * self.zw[k] * bjk[c] + 2.0 * f[1] * (self.dzw[k] * bjk[c] + self.zw[k] * dbjk[c]);
                hu[k * n + c] += self.dezu[k] * self.z[c] + self.ezu[k] * self.dz[c];
                hb[k * n + c] += 2.0 * df[1] * self.zu[k] * j.a[c]
                    + 2.0 * f[1] * (self.dzu[k] * j.a[c] + self.zu[k] * dj.a[c]);
            }
            for l in 0..d {
                let (ujl, dujl) = (Self::vec(j.u, l, n), Self::vec(dj.u, l, n));
                let (bjl, dbjl) = (Self::vec(j.b, l, n), Self::vec(dj.b, l, n));
                let (ckl, dckl) = (self.c[k * d + l], self.dc[k * d + l]);
                let (uw, duw) = (self.uw[k * d + l], self.duw[k * d + l]);
                let zz = self.zu[k] * self.zw[l];
                let dzz = self.dzu[k] * self.zw[l] + self.zu[k] * self.dzw[l];
                let wkl = 4.0 * f[2] * zz + 2.0 * f[1] * uw;
                let dwkl = 4.0 * df[2] * zz + 4.0 * f[2] * dzz + 2.0 * df[1] * uw + 2.0 * f[1] * duw;
                for c in 0..n {
                    hu[k * n + c] -= 2.0 * df[1] * ckl * ujl[c] + 2.0 * f[1] * (dckl * ujl[c] + ckl * dujl[c]);
                    hb[k * n + c] -= dwkl * bjl[c] + wkl * dbjl[c];
                }
            }
        }
    }
}

/// `½‖v‖²_V` from the pairwise kernel expansion, independent of the field evaluation.
pub fn kinetic_energy(state: &ShootingState, kernel: &DeformationKernel) -> f64 {
    let (n, d) = (state.n, state.d);
    let rows = map_rows(state.atoms(), |i| {
        let mut w = PairWork::new(n, d);
        let vi = state.view(i);
        let terms: Vec<f64> = (0..state.atoms()).map(|j| w.energy(&vi, &state.view(j), kernel)).collect();
        pairwise_sum(&terms)
    });
    0.5 * pairwise_sum(&rows)
}

/// `(∂H_r/∂q, ∂H_r/∂p)` from the pairwise expansion.
pub fn hamiltonian_gradient(state: &ShootingState, kernel: &DeformationKernel) -> (Vec<f64>, Vec<f64>) {
    let (n, d, block) = (state.n, state.d, state.block());
    let rows = map_rows(state.atoms(), |i| {
        let mut w = PairWork::new(n, d);
        let (mut gq, mut gp) = (vec![0.0; block], vec![0.0; block]);
        let vi = state.view(i);
        for j in 0..state.atoms() {
            w.grad(&vi, &state.view(j), kernel, &mut gq, &mut gp);
        }
        (gq, gp)
    });
    let (q, p): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    (q.concat(), p.concat())
}

/// Hessian of `H_r` applied to the direction `(dq, dp)`.
pub fn hamiltonian_hvp(
    state: &ShootingState,
    kernel: &DeformationKernel,
    dq: &[f64],
    dp: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (n, d, block) = (state.n, state.d, state.block());
    assert_eq!(dq.len(), state.q.len());
    assert_eq!(dp.len(), state.p.len());
    let rows = map_rows(state.atoms(), |i| {
        let mut w = PairWork::new(n, d);
        let mut scratch = (vec![0.0; block], vec![0.0; block]);
        let (mut hq, mut hp) = (vec![0.0; block], vec![0.0; block]);
        let vi = state.view(i);
        let di = AtomView::of(dq, dp, i, n, block);
        for j in 0..state.atoms() {
            let dj = AtomView::of(dq, dp, j, n, block);
            w.hvp(&vi, &state.view(j), &di, &dj, kernel, &mut hq, &mut hp, &mut scratch);
        }
        (hq, hp)
    });
    let (q, p): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    (q.concat(), p.concat())
}

/// `wᵀ ∂F/∂s` for the Hamiltonian vector field `F = (∂H/∂p, -∂H/∂q)`.
///
/// With `F = J∇H`, the pullback is `∇²H · Jᵀw = ∇²H · (-w_p, w_q)`.
pub fn rhs_vjp(state: &ShootingState, kernel: &DeformationKernel, wq: &[f64], wp: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let neg_wp: Vec<f64> = wp.iter().map(|v| -v).collect();
    hamiltonian_hvp(state, kernel, &neg_wp, wq)
}

/// Per-atom `d×d` matrices `Dⁱ_{kℓ} = ⟨uᵢ⁽ᵏ⁾, pᵢ^{u_ℓ}⟩`, row-major.
pub fn gram_matrices(state: &ShootingState) -> Vec<Vec<f64>> {
    let (n, d) = (state.n, state.d);
    (0..state.atoms())
        .map(|i| {
            let at = state.view(i);
            let mut m = vec![0.0; d * d];
            for k in 0..d {
                for l in 0..d {
                    m[k * d + l] = dot(&at.u[k * n..(k + 1) * n], &at.b[l * n..(l + 1) * n]);
                }
            }
            m
        })
        .collect()
}

/// A time-sampled RK4 solution on `[0, 1]` with its diagnostics.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub steps: usize,
    /// States at `t_k = k / steps`, `k = 0..=steps`.
    pub states: Vec<ShootingState>,
    /// The four RK4 stage inputs of every step.
    pub stages: Vec<[ShootingState; 4]>,
    pub hamiltonian_series: Vec<f64>,
    pub gram_series: Vec<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn initial(&self) -> &ShootingState {
        &self.states[0]
    }

    pub fn last(&self) -> &ShootingState {
        &self.states[self.steps]
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| k as f64 / self.steps as f64).collect()
    }

    /// `max_t |H(t) - H(0)| / max(|H(0)|, tiny)`.
    pub fn hamiltonian_drift(&self) -> f64 {
        let h0 = self.hamiltonian_series[0];
        let dev = self.hamiltonian_series.iter().map(|h| (h - h0).abs()).fold(0.0, f64::max);
        dev / h0.abs().max(f64::MIN_POSITIVE)
    }

    /// `max_{t,i} ‖Dⁱ(t) - Dⁱ(0)‖ / (1 + ‖Dⁱ(0)‖)` with Frobenius norms.
    pub fn gram_drift(&self) -> f64 {
        let first = &self.gram_series[0];
        let mut worst: f64 = 0.0;
        for snapshot in &self.gram_series {
            for (m, m0) in snapshot.iter().zip(first) {
                let diff = m.iter().zip(m0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let scale = 1.0 + dot(m0, m0).sqrt();
                worst = worst.max(diff / scale);
            }
        }
        worst
    }
}

/// `y + h/6 (k1 + 2k2 + 2k3 + k4)` for one component.
#[inline]
fn rk4_combine(y: f64, h: f64, k1: f64, k2: f64, k3: f64, k4: f64) -> f64 {
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Classical RK4 over `[0, duration]` with `steps` equal steps.
pub fn rk4_integrate(
    s0: &ShootingState,
    steps: usize,
    duration: f64,
    kernel: &DeformationKernel,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::OutOfRange("RK4 needs at least one step".into()));
    }
    if !s0.is_finite() {
        return Err(Error::NonFinite("t = 0".into()));
    }
    let h = duration / steps as f64;
    let mut states = Vec::with_capacity(steps + 1);
    let mut stages = Vec::with_capacity(steps);
    let mut ham = Vec::with_capacity(steps + 1);
    let mut grams = Vec::with_capacity(steps + 1);
    states.push(s0.clone());
    ham.push(reduced_hamiltonian(s0, kernel));
    grams.push(gram_matrices(s0));
    for step in 0..steps {
        let s1 = states[step].clone();
        let k1 = hamiltonian_rhs(&s1, kernel);
        let s2 = s1.offset(0.5 * h, &k1);
        let k2 = hamiltonian_rhs(&s2, kernel);
        let s3 = s1.offset(0.5 * h, &k2);
        let k3 = hamiltonian_rhs(&s3, kernel);
        let s4 = s1.offset(h, &k3);
        let k4 = hamiltonian_rhs(&s4, kernel);
        let combine = |y: &[f64], a: &[f64], b: &[f64], c: &[f64], e: &[f64]| -> Vec<f64> {
            (0..y.len()).map(|i| rk4_combine(y[i], h, a[i], b[i], c[i], e[i])).collect()
        };
        let next = ShootingState {
            n: s1.n,
            d: s1.d,
            q: combine(&s1.q, &k1.q, &k2.q, &k3.q, &k4.q),
            p: combine(&s1.p, &k1.p, &k2.p, &k3.p, &k4.p),
        };
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("t = {}", (step + 1) as f64 * h)));
        }
        ham.push(reduced_hamiltonian(&next, kernel));
        grams.push(gram_matrices(&next));
        stages.push([s1, s2, s3, s4]);
        states.push(next);
    }
    Ok(Trajectory { steps, states, stages, hamiltonian_series: ham, gram_series: grams })
}

/// RK4 on `[0, 1]`.
pub fn rk4_forward(s0: &ShootingState, steps: usize, kernel: &DeformationKernel) -> Result<Trajectory> {
    rk4_integrate(s0, steps, 1.0, kernel)
}

/// Flows `mu` through the time-dependent field recorded in `traj`.
///
/// Each atom follows `ẏ = v_t(y)`, `ẇ⁽ᵏ⁾ = dv_t(y) w⁽ᵏ⁾`, integrated with the
/// same RK4 steps as the trajectory, the field at each stage being generated by
/// the stored stage state.
pub fn transport_varifold(
    traj: &Trajectory,
    mu: &DiscreteVarifold,
    kernel: &DeformationKernel,
) -> Result<DiscreteVarifold> {
    let s0 = traj.initial();
    if mu.n() != s0.n || mu.d() != s0.d {
        return Err(Error::dims(format!(
            "varifold (n={}, d={}) does not match trajectory (n={}, d={})",
            mu.n(),
            mu.d(),
            s0.n,
            s0.d
        )));
    }
    let (n, d, block) = (mu.n(), mu.d(), mu.block());
    let h = 1.0 / traj.steps as f64;
    let rate = |stage: &ShootingState, y: &[f64]| -> Vec<f64> {
        let fv = velocity_and_jacobian(stage, kernel, &y[..n], 1);
        let mut k = vec![0.0; block];
        k[..n].copy_from_slice(&fv.v);
        for j in 0..d {
            jac_apply(&fv.dv, &y[n + j * n..n + (j + 1) * n], &mut k[n + j * n..n + (j + 1) * n]);
        }
        k
    };
    let rows = map_rows(mu.len(), |i| {
        let mut y = mu.as_flat()[i * block..(i + 1) * block].to_vec();
        for st in &traj.stages {
            let k1 = rate(&st[0], &y);
            let y2: Vec<f64> = y.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
            let k2 = rate(&st[1], &y2);
            let y3: Vec<f64> = y.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
            let k3 = rate(&st[2], &y3);
            let y4: Vec<f64> = y.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
            let k4 = rate(&st[3], &y4);
            for c in 0..block {
                y[c] = rk4_combine(y[c], h, k1[c], k2[c], k3[c], k4[c]);
            }
        }
        y
    });
    let out = rows.concat();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("transported varifold".into()));
    }
    DiscreteVarifold::from_flat(n, d, out)
}
