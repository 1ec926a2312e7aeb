//! Frame algebra on the oriented Grassmannian.
//!
//! An oriented d-plane with a weight is stored as `d` vectors of ℝⁿ. The
//! plane is their span (with the orientation of the ordered frame) and the
//! weight is the d-volume `|u¹ ∧ … ∧ uᵈ|`. Frames are never orthonormalized,
//! so a linear map acting on the vectors transports the weight exactly.
//!
//! Frames are laid out row-major: vector `k` occupies `[k*n, (k+1)*n)`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold below which a frame is treated as zero mass.
pub const DEGENERACY_RTOL: f64 = 1e-12;

/// An ordered list of `d` vectors in ℝⁿ.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    n: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(vectors: &[Vec<f64>]) -> Result<Self> {
        let d = vectors.len();
        if d == 0 {
            return Err(Error::dims("a frame needs at least one vector"));
        }
        let n = vectors[0].len();
        if n < d {
            return Err(Error::dims(format!("frame of {d} vectors in dimension {n}")));
        }
        if vectors.iter().any(|v| v.len() != n) {
            return Err(Error::dims("frame vectors have different lengths"));
        }
        Ok(Frame {
            n,
            data: vectors.concat(),
        })
    }

    /// Builds a frame from `d` row-major vectors of length `n`.
    pub fn from_flat(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.is_empty() || !data.len().is_multiple_of(n) || data.len() / n > n {
            return Err(Error::dims(format!(
                "{} frame components do not form d <= n vectors of length {n}",
                data.len()
            )));
        }
        Ok(Frame { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.data.len() / self.n
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn weight(&self) -> f64 {
        frame_weight(&self.data, self.n)
    }

    /// Right-multiplies the frame by a d×d matrix (row-major): `ũᵏ = Σ_l u^l m_{lk}`.
    pub fn right_mul(&self, m: &[f64]) -> Frame {
        let (n, d) = (self.n, self.d());
        assert_eq!(m.len(), d * d);
        let mut out = vec![0.0; n * d];
        for k in 0..d {
            for l in 0..d {
                let c = m[l * d + k];
                for a in 0..n {
                    out[k * n + a] += self.data[l * n + a] * c;
                }
            }
        }
        Frame { n, data: out }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `m[k][l] = a_k · b_l` for two row-major frames of `d` vectors in ℝⁿ.
pub(crate) fn cross_gram(a: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    let d = a.len() / n;
    debug_assert_eq!(out.len(), d * d);
    for k in 0..d {
        let ak = &a[k * n..(k + 1) * n];
        for l in 0..d {
            out[k * d + l] = dot(ak, &b[l * n..(l + 1) * n]);
        }
    }
}

/// Determinant of a row-major d×d matrix.
pub(crate) fn det(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        _ => DMatrix::from_row_slice(d, d, m).lu().determinant(),
    }
}

/// Cofactor matrix, `cof[k][l] = ∂det(m)/∂m[k][l]`. Defined for singular `m` too.
pub(crate) fn cofactor(m: &[f64], d: usize, out: &mut [f64]) {
    match d {
        1 => out[0] = 1.0,
        2 => {
            out[0] = m[3];
            out[1] = -m[2];
            out[2] = -m[1];
            out[3] = m[0];
        }
        3 => {
            out[0] = m[4] * m[8] - m[5] * m[7];
            out[1] = m[5] * m[6] - m[3] * m[8];
            out[2] = m[3] * m[7] - m[4] * m[6];
            out[3] = m[2] * m[7] - m[1] * m[8];
            out[4] = m[0] * m[8] - m[2] * m[6];
            out[5] = m[1] * m[6] - m[0] * m[7];
            out[6] = m[1] * m[5] - m[2] * m[4];
            out[7] = m[2] * m[3] - m[0] * m[5];
            out[8] = m[0] * m[4] - m[1] * m[3];
        }
        _ => {
            let mut minor = vec![0.0; (d - 1) * (d - 1)];
            for k in 0..d {
                for l in 0..d {
                    let mut idx = 0;
                    for r in (0..d).filter(|&r| r != k) {
                        for c in (0..d).filter(|&c| c != l) {
                            minor[idx] = m[r * d + c];
                            idx += 1;
                        }
                    }
                    let sign = if (k + l) % 2 == 0 { 1.0 } else { -1.0 };
                    out[k * d + l] = sign * det(&minor, d - 1);
                }
            }
        }
    }
}

/// d-volume of a row-major frame: `√max(0, det(uᵏ·uˡ))`.
pub fn frame_weight(frame: &[f64], n: usize) -> f64 {
    let d = frame.len() / n;
    let mut g = vec![0.0; d * d];
    cross_gram(frame, frame, n, &mut g);
    det(&g, d).max(0.0).sqrt()
}

/// Zero-mass test: `weight <= 1e-12 · (max vector norm)^d`.
pub(crate) fn is_degenerate(frame: &[f64], n: usize, weight: f64) -> bool {
    let d = frame.len() / n;
    let max_norm = frame
        .chunks(n)
        .map(|v| dot(v, v).sqrt())
        .fold(0.0, f64::max);
    weight <= DEGENERACY_RTOL * max_norm.powi(d as i32)
}

/// `det(uᵏ·u'ˡ) / (r r')`, clamped to `[-1, 1]`, on raw slices. No degeneracy check.
pub(crate) fn inner_unchecked(a: &[f64], b: &[f64], n: usize, ra: f64, rb: f64) -> f64 {
    let d = a.len() / n;
    let mut m = vec![0.0; d * d];
    cross_gram(a, b, n, &mut m);
    (det(&m, d) / (ra * rb)).clamp(-1.0, 1.0)
}

/// Inner product of the oriented planes spanned by two frames.
pub fn grassmann_inner(a: &Frame, b: &Frame) -> Result<f64> {
    if a.n != b.n || a.d() != b.d() {
        return Err(Error::dims(format!(
            "frames of shape {}x{} and {}x{}",
            a.d(),
            a.n,
            b.d(),
            b.n
        )));
    }
    let (ra, rb) = (a.weight(), b.weight());
    if is_degenerate(&a.data, a.n, ra) || is_degenerate(&b.data, b.n, rb) {
        return Err(Error::DegenerateFrame);
    }
    Ok(inner_unchecked(&a.data, &b.data, a.n, ra, rb))
}

/// Applies `A` to every frame vector. No renormalization: the weight follows the
/// d-volume change of `A` on the plane.
pub fn apply_linear(a: &DMatrix<f64>, frame: &Frame) -> Frame {
    let n = frame.n;
    assert_eq!(a.nrows(), n);
    assert_eq!(a.ncols(), n);
    let mut out = vec![0.0; frame.data.len()];
    apply_linear_slice(a, &frame.data, n, &mut out);
    Frame { n, data: out }
}

pub(crate) fn apply_linear_slice(a: &DMatrix<f64>, src: &[f64], n: usize, out: &mut [f64]) {
    for (v, o) in src.chunks(n).zip(out.chunks_mut(n)) {
        for r in 0..n {
            o[r] = (0..n).map(|c| a[(r, c)] * v[c]).sum();
        }
    }
}

/// Orthonormal basis (row-major, `n - m` rows) of the orthogonal complement of
/// the span of `vectors` (`m` row-major vectors of length `n`, assumed independent).
pub(crate) fn orthogonal_complement(vectors: &[f64], n: usize) -> Vec<f64> {
    let m = vectors.len() / n;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    let push_orthogonal = |basis: &mut Vec<Vec<f64>>, v: &[f64], min_norm: f64| -> bool {
        let mut w = v.to_vec();
        // two passes of Gram-Schmidt
        for _ in 0..2 {
            for b in basis.iter() {
                let c = dot(&w, b);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = dot(&w, &w).sqrt();
        if norm > min_norm {
            w.iter_mut().for_each(|x| *x /= norm);
            basis.push(w);
            true
        } else {
            false
        }
    };
    for v in vectors.chunks(n) {
        let scale = dot(v, v).sqrt();
        push_orthogonal(&mut basis, v, 1e-300_f64.max(1e-12 * scale));
    }
    let spanned = basis.len();
    let mut e = vec![0.0; n];
    for i in 0..n {
        if basis.len() == n {
            break;
        }
        e.iter_mut().for_each(|x| *x = 0.0);
        e[i] = 1.0;
        push_orthogonal(&mut basis, &e, 0.5 / (n as f64).sqrt());
    }
    debug_assert!(spanned <= m);
    basis[spanned..].concat()
}

/// Eigenvalues of a symmetric matrix, ascending. Used by diagnostics.
pub fn symmetric_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}
