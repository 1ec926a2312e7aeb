//! Discrete oriented varifolds and their kernel inner products.
//!
//! A varifold of `N` atoms is stored as one flat vector of `N` blocks. Block `i`
//! holds the position `xᵢ` (n values) followed by the `d` frame vectors
//! `uᵢ⁽¹⁾ … uᵢ⁽ᵈ⁾` (d·n values). This is also the layout of the state `q` used
//! by quantization and shooting.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grassmann::{self, cofactor, cross_gram, det, Frame};
use crate::kernels::VarifoldKernel;
use crate::sum::{map_rows, pairwise_sum};

/// One weighted Dirac `r δ_(x,T)`, the weight and plane being carried by the frame.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedFrameAtom {
    pub x: Vec<f64>,
    pub frame: Frame,
}

impl OrientedFrameAtom {
    pub fn weight(&self) -> f64 {
        self.frame.weight()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteVarifold {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl DiscreteVarifold {
    pub fn new(n: usize, d: usize) -> Result<Self> {
        if d == 0 || n < d {
            return Err(Error::dims(format!("plane dimension d={d} must satisfy 1 <= d <= n={n}")));
        }
        Ok(DiscreteVarifold { n, d, data: Vec::new() })
    }

    pub fn from_flat(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        let mut v = Self::new(n, d)?;
        if !data.len().is_multiple_of(v.block()) {
            return Err(Error::dims(format!(
                "{} values is not a multiple of the atom block size {}",
                data.len(),
                v.block()
            )));
        }
        v.data = data;
        Ok(v)
    }

    pub fn from_atoms(n: usize, d: usize, atoms: &[OrientedFrameAtom]) -> Result<Self> {
        let mut v = Self::new(n, d)?;
        for a in atoms {
            if a.frame.n() != n || a.frame.d() != d {
                return Err(Error::dims("atom frame does not match the varifold dimensions"));
            }
            v.push(&a.x, a.frame.as_slice())?;
        }
        Ok(v)
    }

    pub fn push(&mut self, x: &[f64], frame: &[f64]) -> Result<()> {
        if x.len() != self.n || frame.len() != self.n * self.d {
            return Err(Error::dims(format!(
                "atom with {} position and {} frame components, expected {} and {}",
                x.len(),
                frame.len(),
                self.n,
                self.n * self.d
            )));
        }
        self.data.extend_from_slice(x);
        self.data.extend_from_slice(frame);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of values per atom, `n(d+1)`.
    pub fn block(&self) -> usize {
        self.n * (self.d + 1)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.block()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        let b = self.block();
        &self.data[i * b..i * b + self.n]
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let b = self.block();
        &self.data[i * b + self.n..(i + 1) * b]
    }

    pub fn atom(&self, i: usize) -> OrientedFrameAtom {
        OrientedFrameAtom {
            x: self.position(i).to_vec(),
            frame: Frame::from_flat(self.n, self.frame(i).to_vec()).expect("valid block"),
        }
    }

    pub fn atoms(&self) -> impl Iterator<Item = OrientedFrameAtom> + '_ {
        (0..self.len()).map(|i| self.atom(i))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn weight(&self, i: usize) -> f64 {
        grassmann::frame_weight(self.frame(i), self.n)
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    /// Keeps the atoms for which `keep(i)` holds.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> DiscreteVarifold {
        let b = self.block();
        let data = (0..self.len())
            .filter(|&i| keep(i))
            .flat_map(|i| self.data[i * b..(i + 1) * b].iter().copied())
            .collect();
        DiscreteVarifold { n: self.n, d: self.d, data }
    }

    /// Multiplies every atom's weight by `factor >= 0` (frames scale by `factor^(1/d)`).
    pub fn scale_weights(&mut self, factor: f64) {
        let s = factor.powf(1.0 / self.d as f64);
        let (n, b) = (self.n, self.block());
        for blk in self.data.chunks_mut(b) {
            blk[n..].iter_mut().for_each(|v| *v *= s);
        }
    }

    pub(crate) fn same_shape(&self, other: &DiscreteVarifold) -> Result<()> {
        if self.n != other.n || self.d != other.d {
            return Err(Error::dims(format!(
                "varifolds of dimensions (n={}, d={}) and (n={}, d={})",
                self.n, self.d, other.n, other.d
            )));
        }
        Ok(())
    }
}

/// Total mass `Σ rᵢ`.
pub fn total_mass(mu: &DiscreteVarifold) -> f64 {
    pairwise_sum(&mu.weights())
}

/// Per-atom quantities reused across all pairs.
pub(crate) struct AtomInfo {
    weight: f64,
    degenerate: bool,
    /// `∂r/∂uᵏ`, d×n row-major; empty unless gradients were requested.
    dweight: Vec<f64>,
}

pub(crate) fn atom_infos(mu: &DiscreteVarifold, with_grad: bool) -> Vec<AtomInfo> {
    let (n, d) = (mu.n, mu.d);
    (0..mu.len())
        .map(|i| {
            let u = mu.frame(i);
            let mut g = vec![0.0; d * d];
            cross_gram(u, u, n, &mut g);
            let weight = det(&g, d).max(0.0).sqrt();
            let degenerate = grassmann::is_degenerate(u, n, weight);
            let mut dweight = Vec::new();
            if with_grad && !degenerate {
                let mut cof = vec![0.0; d * d];
                cofactor(&g, d, &mut cof);
                dweight = vec![0.0; d * n];
                for k in 0..d {
                    for l in 0..d {
                        let c = cof[k * d + l] / weight;
                        for a in 0..n {
                            dweight[k * n + a] += c * u[l * n + a];
                        }
                    }
                }
            }
            AtomInfo { weight, degenerate, dweight }
        })
        .collect()
}

struct Scratch {
    m: Vec<f64>,
    cof: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch { m: vec![0.0; d * d], cof: vec![0.0; d * d] }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn pair_value(
    xa: &[f64],
    ua: &[f64],
    ia: &AtomInfo,
    xb: &[f64],
    ub: &[f64],
    ib: &AtomInfo,
    kernel: &VarifoldKernel,
    scratch: &mut Scratch,
) -> f64 {
    if ia.degenerate || ib.degenerate {
        return 0.0;
    }
    let n = xa.len();
    let d = ua.len() / n;
    let rho = kernel.spatial.eval(sq_dist(xa, xb));
    cross_gram(ua, ub, n, &mut scratch.m);
    let t = (det(&scratch.m, d) / (ia.weight * ib.weight)).clamp(-1.0, 1.0);
    ia.weight * ib.weight * rho * kernel.grassmann.eval(t)
}

/// Adds `scale · ∂/∂(x_a, u_a)` of the pair term to `grad` (one atom block).
#[allow(clippy::too_many_arguments)]
fn pair_grad_first(
    xa: &[f64],
    ua: &[f64],
    ia: &AtomInfo,
    xb: &[f64],
    ub: &[f64],
    ib: &AtomInfo,
    kernel: &VarifoldKernel,
    scale: f64,
    scratch: &mut Scratch,
    grad: &mut [f64],
) {
    if ia.degenerate || ib.degenerate {
        return;
    }
    let n = xa.len();
    let d = ua.len() / n;
    let s = sq_dist(xa, xb);
    let rho = kernel.spatial.eval(s);
    let rho1 = kernel.spatial.d1(s);
    cross_gram(ua, ub, n, &mut scratch.m);
    let big_d = det(&scratch.m, d);
    let rr = ia.weight * ib.weight;
    let t = (big_d / rr).clamp(-1.0, 1.0);
    let [g0, g1, _, _] = kernel.grassmann.derivs(t);

    let cx = scale * 2.0 * rho1 * rr * g0;
    for a in 0..n {
        grad[a] += cx * (xa[a] - xb[a]);
    }
    // ∂(r r' γ(t))/∂uᵏ = r'(γ - tγ') ∂r/∂uᵏ + γ' Σ_l cof(M)_kl u'ˡ
    cofactor(&scratch.m, d, &mut scratch.cof);
    let cr = scale * rho * ib.weight * (g0 - t * g1);
    let cd = scale * rho * g1;
    let gu = &mut grad[n..];
    for k in 0..d {
        for a in 0..n {
            gu[k * n + a] += cr * ia.dweight[k * n + a];
        }
        for l in 0..d {
            let c = cd * scratch.cof[k * d + l];
            for a in 0..n {
                gu[k * n + a] += c * ub[l * n + a];
            }
        }
    }
}

fn inner_with_infos(
    a: &DiscreteVarifold,
    ia: &[AtomInfo],
    b: &DiscreteVarifold,
    ib: &[AtomInfo],
    kernel: &VarifoldKernel,
) -> f64 {
    let rows = map_rows(a.len(), |i| {
        let mut scratch = Scratch::new(a.d);
        let (xi, ui) = (a.position(i), a.frame(i));
        let terms: Vec<f64> = (0..b.len())
            .map(|j| pair_value(xi, ui, &ia[i], b.position(j), b.frame(j), &ib[j], kernel, &mut scratch))
            .collect();
        pairwise_sum(&terms)
    });
    pairwise_sum(&rows)
}

/// `⟨μ, μ'⟩ = Σᵢ Σⱼ rᵢ r'ⱼ ρ(|xᵢ - x'ⱼ|²) γ(⟨Tᵢ, T'ⱼ⟩)`. Zero-mass atoms contribute nothing.
pub fn inner_product(a: &DiscreteVarifold, b: &DiscreteVarifold, kernel: &VarifoldKernel) -> Result<f64> {
    a.same_shape(b)?;
    Ok(inner_with_infos(a, &atom_infos(a, false), b, &atom_infos(b, false), kernel))
}

/// `‖μ - μ'‖²`, clamped at zero.
pub fn distance_sq(a: &DiscreteVarifold, b: &DiscreteVarifold, kernel: &VarifoldKernel) -> Result<f64> {
    a.same_shape(b)?;
    let (ia, ib) = (atom_infos(a, false), atom_infos(b, false));
    let aa = inner_with_infos(a, &ia, a, &ia, kernel);
    let ab = inner_with_infos(a, &ia, b, &ib, kernel);
    let bb = inner_with_infos(b, &ib, b, &ib, kernel);
    Ok((aa - 2.0 * ab + bb).max(0.0))
}

/// The three inner products `(‖a‖², ⟨a,b⟩, ‖b‖²)`.
pub fn inner_triple(
    a: &DiscreteVarifold,
    b: &DiscreteVarifold,
    kernel: &VarifoldKernel,
) -> Result<(f64, f64, f64)> {
    a.same_shape(b)?;
    let (ia, ib) = (atom_infos(a, false), atom_infos(b, false));
    Ok((
        inner_with_infos(a, &ia, a, &ia, kernel),
        inner_with_infos(a, &ia, b, &ib, kernel),
        inner_with_infos(b, &ib, b, &ib, kernel),
    ))
}

/// `‖μ - μ_tar‖²` and its gradient with respect to every component of `μ`'s atom blocks.
///
/// `target_sq` is `‖μ_tar‖²` when already known.
pub fn distance_sq_and_grad(
    moving: &DiscreteVarifold,
    target: &DiscreteVarifold,
    kernel: &VarifoldKernel,
    target_sq: Option<f64>,
) -> Result<(f64, Vec<f64>)> {
    moving.same_shape(target)?;
    let im = atom_infos(moving, true);
    let it = atom_infos(target, false);
    let block = moving.block();
    let rows = map_rows(moving.len(), |i| {
        let mut scratch = Scratch::new(moving.d);
        let mut g = vec![0.0; block];
        let (xi, ui) = (moving.position(i), moving.frame(i));
        for j in 0..moving.len() {
            let (xj, uj) = (moving.position(j), moving.frame(j));
            pair_grad_first(xi, ui, &im[i], xj, uj, &im[j], kernel, 2.0, &mut scratch, &mut g);
        }
        for j in 0..target.len() {
            let (xj, uj) = (target.position(j), target.frame(j));
            pair_grad_first(xi, ui, &im[i], xj, uj, &it[j], kernel, -2.0, &mut scratch, &mut g);
        }
        g
    });
    let mm = inner_with_infos(moving, &im, moving, &im, kernel);
    let mt = inner_with_infos(moving, &im, target, &it, kernel);
    let tt = match target_sq {
        Some(v) => v,
        None => inner_with_infos(target, &it, target, &it, kernel),
    };
    Ok(((mm - 2.0 * mt + tt).max(0.0), rows.concat()))
}

/// Maps every atom to `(R x + b, R u⁽¹⁾, …, R u⁽ᵈ⁾)`.
pub fn rigid_transport(mu: &DiscreteVarifold, rotation: &DMatrix<f64>, shift: &[f64]) -> Result<DiscreteVarifold> {
    let n = mu.n;
    if rotation.nrows() != n || rotation.ncols() != n || shift.len() != n {
        return Err(Error::dims("rigid motion does not match the ambient dimension"));
    }
    let mut out = mu.clone();
    let b = mu.block();
    for (src, dst) in mu.data.chunks(b).zip(out.data.chunks_mut(b)) {
        grassmann::apply_linear_slice(rotation, &src[..n], n, &mut dst[..n]);
        dst[..n].iter_mut().zip(shift).for_each(|(x, s)| *x += s);
        grassmann::apply_linear_slice(rotation, &src[n..], n, &mut dst[n..]);
    }
    Ok(out)
}

/// Unnormalized cosine between two varifolds: `⟨a,b⟩ / (‖a‖ ‖b‖)`.
pub fn cosine(a: &DiscreteVarifold, b: &DiscreteVarifold, kernel: &VarifoldKernel) -> Result<f64> {
    let (aa, ab, bb) = inner_triple(a, b, kernel)?;
    Ok(ab / (aa * bb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{GrassmannKernel, SpatialKernel};

    fn kernel(sigma: f64, g: GrassmannKernel) -> VarifoldKernel {
        VarifoldKernel::new(SpatialKernel::gaussian(sigma).unwrap(), g)
    }

    fn single(x: &[f64], u: &[f64]) -> DiscreteVarifold {
        let mut v = DiscreteVarifold::new(x.len(), u.len() / x.len()).unwrap();
        v.push(x, u).unwrap();
        v
    }

    #[test]
    fn inner_product_examples() {
        let k = kernel(1.0, GrassmannKernel::Linear);
        let a = single(&[0.3, -0.2], &[2.0, 0.0]);
        assert!((inner_product(&a, &a, &k).unwrap() - 4.0).abs() < 1e-15);

        let a = single(&[0.0, 0.0], &[1.0, 0.0]);
        let b = single(&[1.0, 0.0], &[1.0, 1.0]);
        let ip = inner_product(&a, &b, &k).unwrap();
        assert!((ip - 0.367_879_441_171_442_33).abs() < 1e-15, "{ip}");

        let c = single(&[0.0, 0.0], &[0.0, 1.0]);
        assert_eq!(inner_product(&a, &c, &k).unwrap(), 0.0);
    }

    #[test]
    fn distance_examples() {
        let k = kernel(1.0, GrassmannKernel::Linear);
        let a = single(&[0.0, 0.0], &[1.0, 0.0]);
        let b = single(&[1.0, 0.0], &[1.0, 1.0]);
        assert_eq!(distance_sq(&a, &a, &k).unwrap(), 0.0);
        let empty = DiscreteVarifold::new(2, 1).unwrap();
        let normb = inner_product(&b, &b, &k).unwrap();
        assert!((distance_sq(&empty, &b, &k).unwrap() - normb).abs() < 1e-15);
        // 1 + 2 - 2/e
        let expect = 2.264_241_117_657_115_4;
        assert!((distance_sq(&a, &b, &k).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let k = kernel(1.0, GrassmannKernel::Binet);
        let a = single(&[0.0, 0.0], &[1.0, 0.0]);
        let b = single(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
        assert!(matches!(inner_product(&a, &b, &k), Err(Error::DimensionMismatch(_))));
        assert!(matches!(distance_sq(&a, &b, &k), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn masses() {
        let empty = DiscreteVarifold::new(2, 1).unwrap();
        assert_eq!(total_mass(&empty), 0.0);
        let mut v = DiscreteVarifold::new(2, 1).unwrap();
        for w in [1.0, 2.0, 3.0] {
            v.push(&[w, 0.0], &[0.0, w]).unwrap();
        }
        assert_eq!(total_mass(&v), 6.0);
    }

    #[test]
    fn zero_weight_atoms_are_skipped() {
        let k = kernel(1.0, GrassmannKernel::oriented_gaussian(1.0).unwrap());
        let mut a = single(&[0.0, 0.0], &[1.0, 0.0]);
        let before = inner_product(&a, &a, &k).unwrap();
        a.push(&[0.5, 0.5], &[0.0, 0.0]).unwrap();
        assert_eq!(inner_product(&a, &a, &k).unwrap(), before);
        let (_, g) = distance_sq_and_grad(&a, &a, &k, None).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
        assert!(g[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orientation_behaviour() {
        let a = single(&[0.0, 0.0], &[1.0, 0.5]);
        let b = single(&[0.4, 0.1], &[0.3, 1.0]);
        let flipped = single(&[0.0, 0.0], &[-1.0, -0.5]);
        let lin = kernel(1.0, GrassmannKernel::Linear);
        let bin = kernel(1.0, GrassmannKernel::Binet);
        let ab = inner_product(&a, &b, &lin).unwrap();
        assert!((inner_product(&flipped, &b, &lin).unwrap() + ab).abs() < 1e-15);
        let ab = inner_product(&a, &b, &bin).unwrap();
        assert!((inner_product(&flipped, &b, &bin).unwrap() - ab).abs() < 1e-15);
    }

    #[test]
    fn scale_weights_scales_mass() {
        let mut v = DiscreteVarifold::from_flat(3, 2, vec![0., 0., 0., 1., 0., 0., 0., 2., 0.]).unwrap();
        v.scale_weights(3.0);
        assert!((total_mass(&v) - 6.0).abs() < 1e-14);
    }
}
