//! Varifold registration by geodesic shooting.
//!
//! The energy `E(p₀) = H_r(q₀, p₀) + λ‖μ^{q(1)} - μ_tar‖²` is minimized over the
//! initial costate with L-BFGS. Its gradient is the exact derivative of the
//! RK4-discretized functional, obtained by a reverse sweep over the recorded
//! stages.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grassmann::{dot, orthogonal_complement};
use crate::kernels::{DeformationKernel, VarifoldKernel};
use crate::optimize::{lbfgs_minimize, ExitStatus, LbfgsConfig};
use crate::shooting::{
    gram_matrices, hamiltonian_rhs, reduced_hamiltonian, rhs_vjp, rk4_forward, ShootingState, Trajectory,
    DEFAULT_STEPS,
};
use crate::varifold::{distance_sq_and_grad, DiscreteVarifold};

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationConfig {
    pub lambda: f64,
    pub steps: usize,
    pub kernel: VarifoldKernel,
    pub deformation: DeformationKernel,
    pub optimizer: LbfgsConfig,
    pub reduce_momentum: bool,
    /// Recorded for provenance; the solver itself is deterministic from `p₀ = 0`.
    pub seed: u64,
}

impl RegistrationConfig {
    pub fn new(kernel: VarifoldKernel, deformation: DeformationKernel) -> Self {
        RegistrationConfig {
            lambda: 1.0,
            steps: DEFAULT_STEPS,
            kernel,
            deformation,
            optimizer: LbfgsConfig::default(),
            reduce_momentum: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Validation(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.steps == 0 {
            return Err(Error::Validation("steps must be at least 1".into()));
        }
        self.kernel.grassmann.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug)]
pub struct RegistrationReport {
    pub p0: Vec<f64>,
    pub energy: f64,
    pub reg_term: f64,
    pub fid_term: f64,
    pub trajectory: Trajectory,
    pub deformed: DiscreteVarifold,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: ExitStatus,
    pub energy_history: Vec<f64>,
    pub hamiltonian_drift: f64,
    pub gram_drift: f64,
    /// `max_i max_{k≠l} |Dⁱ_{kl}(1)| / (1 + ‖Dⁱ(1)‖)`.
    pub gram_offdiag: f64,
}

/// Summary fields of a [`RegistrationReport`] suitable for JSON output.
#[derive(Clone, Debug, Serialize)]
pub struct RegistrationSummary {
    pub energy: f64,
    pub reg_term: f64,
    pub fid_term: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: ExitStatus,
    pub hamiltonian_drift: f64,
    pub gram_drift: f64,
    pub gram_offdiag: f64,
    pub energy_history: Vec<f64>,
}

impl RegistrationReport {
    pub fn summary(&self) -> RegistrationSummary {
        RegistrationSummary {
            energy: self.energy,
            reg_term: self.reg_term,
            fid_term: self.fid_term,
            grad_norm: self.grad_norm,
            iterations: self.iterations,
            evaluations: self.evaluations,
            status: self.status,
            hamiltonian_drift: self.hamiltonian_drift,
            gram_drift: self.gram_drift,
            gram_offdiag: self.gram_offdiag,
            energy_history: self.energy_history.clone(),
        }
    }
}

/// `λ‖μ^q - μ_tar‖²` and its gradient in the atom blocks of `q_end`.
pub fn fidelity(
    q_end: &DiscreteVarifold,
    target: &DiscreteVarifold,
    kernel: &VarifoldKernel,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let (v, mut g) = distance_sq_and_grad(q_end, target, kernel, None)?;
    g.iter_mut().for_each(|x| *x *= lambda);
    Ok((lambda * v, g))
}

/// Pulls the terminal cotangent `(λ_q, λ_p)` back to `t = 0` through the RK4 steps.
fn adjoint_sweep(traj: &Trajectory, kernel: &DeformationKernel, mut lq: Vec<f64>, mut lp: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let h = 1.0 / traj.steps as f64;
    let lin = |a: f64, x: &[f64], b: f64, y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| a * u + b * v).collect() };
    let scaled = |a: f64, x: &[f64]| -> Vec<f64> { x.iter().map(|u| a * u).collect() };
    for st in traj.stages.iter().rev() {
        let m4 = rhs_vjp(&st[3], kernel, &scaled(h / 6.0, &lq), &scaled(h / 6.0, &lp));
        let m3 = rhs_vjp(&st[2], kernel, &lin(h / 3.0, &lq, h, &m4.0), &lin(h / 3.0, &lp, h, &m4.1));
        let m2 = rhs_vjp(&st[1], kernel, &lin(h / 3.0, &lq, 0.5 * h, &m3.0), &lin(h / 3.0, &lp, 0.5 * h, &m3.1));
        let m1 = rhs_vjp(&st[0], kernel, &lin(h / 6.0, &lq, 0.5 * h, &m2.0), &lin(h / 6.0, &lp, 0.5 * h, &m2.1));
        for i in 0..lq.len() {
            lq[i] += m1.0[i] + m2.0[i] + m3.0[i] + m4.0[i];
            lp[i] += m1.1[i] + m2.1[i] + m3.1[i] + m4.1[i];
        }
    }
    (lq, lp)
}

struct Evaluation {
    energy: f64,
    reg: f64,
    fid: f64,
    grad: Vec<f64>,
    trajectory: Trajectory,
}

fn evaluate(p0: &[f64], q0: &DiscreteVarifold, target: &DiscreteVarifold, cfg: &RegistrationConfig) -> Result<Evaluation> {
    if q0.is_empty() {
        return Err(Error::Validation("source varifold is empty".into()));
    }
    q0.same_shape(target)?;
    let s0 = ShootingState::with_costate(q0, p0.to_vec())?;
    let trajectory = rk4_forward(&s0, cfg.steps, &cfg.deformation)?;
    let reg = reduced_hamiltonian(&s0, &cfg.deformation);
    let (fid, gq) = fidelity(&trajectory.last().configuration(), target, &cfg.kernel, cfg.lambda)?;
    let zeros = vec![0.0; gq.len()];
    let (_, lp) = adjoint_sweep(&trajectory, &cfg.deformation, gq, zeros);
    // ∂H_r/∂p at t = 0 is the q-part of the vector field.
    let dh = hamiltonian_rhs(&s0, &cfg.deformation).q;
    let grad = lp.iter().zip(&dh).map(|(a, b)| a + b).collect();
    Ok(Evaluation { energy: reg + fid, reg, fid, grad, trajectory })
}

/// `E(p₀)` and `∂E/∂p₀` for the source configuration `q0`.
pub fn energy_and_grad(
    p0: &[f64],
    q0: &DiscreteVarifold,
    target: &DiscreteVarifold,
    cfg: &RegistrationConfig,
) -> Result<(f64, Vec<f64>)> {
    let e = evaluate(p0, q0, target, cfg)?;
    Ok((e.energy, e.grad))
}

/// Linear parameterization `p₀ = P θ` of the initial costate.
///
/// With reduction on, `p^{u_k}` of every atom lives in the orthogonal
/// complement of the other frame vectors `{u^l}_{l≠k}`; `p^x` is free.
#[derive(Clone, Debug)]
pub struct MomentumBasis {
    n: usize,
    d: usize,
    atoms: usize,
    /// Per (atom, k): orthonormal rows spanning the allowed `p^{u_k}` directions.
    bases: Option<Vec<Vec<f64>>>,
}

impl MomentumBasis {
    pub fn new(q0: &DiscreteVarifold, reduce: bool) -> Self {
        let (n, d) = (q0.n(), q0.d());
        let bases = (reduce && d > 1).then(|| {
            let mut out = Vec::with_capacity(q0.len() * d);
            for i in 0..q0.len() {
                let u = q0.frame(i);
                for k in 0..d {
                    let others: Vec<f64> = (0..d).filter(|&l| l != k).flat_map(|l| u[l * n..(l + 1) * n].iter().copied()).collect();
                    out.push(orthogonal_complement(&others, n));
                }
            }
            out
        });
        MomentumBasis { n, d, atoms: q0.len(), bases }
    }

    pub fn dim(&self) -> usize {
        match &self.bases {
            None => self.atoms * self.n * (self.d + 1),
            Some(b) => self.atoms * self.n + b.iter().map(|m| m.len() / self.n).sum::<usize>(),
        }
    }

    pub fn expand(&self, theta: &[f64]) -> Vec<f64> {
        let Some(bases) = &self.bases else { return theta.to_vec() };
        let (n, d) = (self.n, self.d);
        let mut p = vec![0.0; self.atoms * n * (d + 1)];
        let mut t = 0;
        for i in 0..self.atoms {
            let blk = &mut p[i * n * (d + 1)..(i + 1) * n * (d + 1)];
            blk[..n].copy_from_slice(&theta[t..t + n]);
            t += n;
            for k in 0..d {
                let basis = &bases[i * d + k];
                let dst = &mut blk[n + k * n..n + (k + 1) * n];
                for row in basis.chunks(n) {
                    let c = theta[t];
                    t += 1;
                    dst.iter_mut().zip(row).for_each(|(v, r)| *v += c * r);
                }
            }
        }
        p
    }

    /// `Pᵀ g`.
    pub fn pull_back(&self, g: &[f64]) -> Vec<f64> {
        let Some(bases) = &self.bases else { return g.to_vec() };
        let (n, d) = (self.n, self.d);
        let mut out = Vec::with_capacity(self.dim());
        for i in 0..self.atoms {
            let blk = &g[i * n * (d + 1)..(i + 1) * n * (d + 1)];
            out.extend_from_slice(&blk[..n]);
            for k in 0..d {
                let src = &blk[n + k * n..n + (k + 1) * n];
                out.extend(bases[i * d + k].chunks(n).map(|row| dot(row, src)));
            }
        }
        out
    }
}

/// `max_i max_{k≠l} |Dⁱ_{kl}| / (1 + ‖Dⁱ‖_F)` over the given Gram matrices.
pub fn gram_offdiag(grams: &[Vec<f64>], d: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for m in grams {
        let scale = 1.0 + dot(m, m).sqrt();
        for k in 0..d {
            for l in 0..d {
                if k != l {
                    worst = worst.max(m[k * d + l].abs() / scale);
                }
            }
        }
    }
    worst
}

/// Registers `source` onto `target`, starting from `p₀ = 0`.
pub fn register(source: &DiscreteVarifold, target: &DiscreteVarifold, cfg: &RegistrationConfig) -> Result<RegistrationReport> {
    cfg.validate()?;
    source.same_shape(target)?;
    if source.is_empty() {
        return Err(Error::Validation("source varifold is empty".into()));
    }
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let basis = MomentumBasis::new(source, cfg.reduce_momentum);
    let theta0 = vec![0.0; basis.dim()];
    let min = lbfgs_minimize(
        |theta| {
            let (e, g) = energy_and_grad(&basis.expand(theta), source, target, cfg)?;
            Ok((e, basis.pull_back(&g)))
        },
        &theta0,
        &cfg.optimizer,
    )?;
    let p0 = basis.expand(&min.x);
    let ev = evaluate(&p0, source, target, cfg)?;
    let traj = ev.trajectory;
    let offdiag = gram_offdiag(&gram_matrices(traj.last()), source.d());
    Ok(RegistrationReport {
        p0,
        energy: ev.energy,
        reg_term: ev.reg,
        fid_term: ev.fid,
        deformed: traj.last().configuration(),
        hamiltonian_drift: traj.hamiltonian_drift(),
        gram_drift: traj.gram_drift(),
        gram_offdiag: offdiag,
        trajectory: traj,
        grad_norm: min.grad_norm,
        iterations: min.iterations,
        evaluations: min.evaluations,
        status: min.status,
        energy_history: min.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{GrassmannKernel, SpatialKernel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(sigma_v: f64) -> RegistrationConfig {
        let k = VarifoldKernel::new(SpatialKernel::gaussian(1.0).unwrap(), GrassmannKernel::oriented_gaussian(1.0).unwrap());
        let mut cfg = RegistrationConfig::new(k, DeformationKernel::gaussian(sigma_v).unwrap());
        cfg.steps = 8;
        cfg
    }

    fn random_varifold(rng: &mut ChaCha8Rng, atoms: usize, n: usize, d: usize) -> DiscreteVarifold {
        let data = (0..atoms * n * (d + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DiscreteVarifold::from_flat(n, d, data).unwrap()
    }

    #[test]
    fn zero_momentum_gives_pure_fidelity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = config(1.0);
        let (q0, tar) = (random_varifold(&mut rng, 3, 2, 1), random_varifold(&mut rng, 2, 2, 1));
        let (e, _) = energy_and_grad(&[0.0; 12], &q0, &tar, &cfg).unwrap();
        let d2 = crate::varifold::distance_sq(&q0, &tar, &cfg.kernel).unwrap();
        assert!((e - cfg.lambda * d2).abs() < 1e-12);
        let (e, g) = energy_and_grad(&[0.0; 12], &q0, &q0, &cfg).unwrap();
        assert!(e.abs() < 1e-12 && g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn fidelity_is_linear_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = config(1.0);
        let (a, b) = (random_varifold(&mut rng, 3, 3, 2), random_varifold(&mut rng, 2, 3, 2));
        let (v1, g1) = fidelity(&a, &b, &cfg.kernel, 1.5).unwrap();
        let (v2, g2) = fidelity(&a, &b, &cfg.kernel, 3.0).unwrap();
        assert_eq!(2.0 * v1, v2);
        assert!(g1.iter().zip(&g2).all(|(x, y)| 2.0 * x == *y));
        let empty = DiscreteVarifold::new(3, 2).unwrap();
        assert!(matches!(fidelity(&a, &empty, &cfg.kernel, 1.0), Err(Error::EmptyTarget)));
    }

    #[test]
    fn energy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, d) in [(2, 1), (3, 2)] {
            let cfg = config(0.9);
            let q0 = random_varifold(&mut rng, 3, n, d);
            let tar = random_varifold(&mut rng, 2, n, d);
            let p0: Vec<f64> = (0..q0.as_flat().len()).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let (_, g) = energy_and_grad(&p0, &q0, &tar, &cfg).unwrap();
            let h = 1e-5;
            let fd: Vec<f64> = (0..p0.len())
                .map(|i| {
                    let mut pp = p0.clone();
                    pp[i] += h;
                    let mut pm = p0.clone();
                    pm[i] -= h;
                    let ep = energy_and_grad(&pp, &q0, &tar, &cfg).unwrap().0;
                    let em = energy_and_grad(&pm, &q0, &tar, &cfg).unwrap().0;
                    (ep - em) / (2.0 * h)
                })
                .collect();
            let err = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / dot(&fd, &fd).sqrt();
            assert!(err < 1e-6, "n={n} d={d}: {err}");
        }
    }

    #[test]
    fn momentum_basis_is_orthonormal_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q0 = random_varifold(&mut rng, 2, 3, 2);
        let b = MomentumBasis::new(&q0, true);
        assert_eq!(b.dim(), 2 * (3 + 2 * 2));
        let theta: Vec<f64> = (0..b.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = b.expand(&theta);
        // p^{u_k} ⊥ u^l for l ≠ k
        for i in 0..2 {
            let u = q0.frame(i);
            let blk = &p[i * 9..(i + 1) * 9];
            assert!(dot(&blk[3..6], &u[3..6]).abs() < 1e-12);
            assert!(dot(&blk[6..9], &u[0..3]).abs() < 1e-12);
        }
        let g: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert!((dot(&b.pull_back(&g), &theta) - dot(&g, &p)).abs() < 1e-12);
        let full = MomentumBasis::new(&q0, false);
        assert_eq!(full.dim(), 18);
        assert_eq!(MomentumBasis::new(&random_varifold(&mut rng, 2, 2, 1), true).dim(), 8);
    }

    #[test]
    fn identical_shapes_need_no_deformation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = config(1.0);
        let mu = random_varifold(&mut rng, 3, 2, 1);
        let rep = register(&mu, &mu, &cfg).unwrap();
        assert!(rep.energy <= 1e-10);
        assert!(rep.p0.iter().all(|v| v.abs() < 1e-8));
        assert_eq!(rep.status, ExitStatus::Converged);
    }

    #[test]
    fn one_atom_translation_is_recovered() {
        let mut cfg = config(1.0);
        cfg.lambda = 1e4;
        cfg.optimizer.grad_tol = 1e-10;
        let src = DiscreteVarifold::from_flat(2, 1, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let tar = DiscreteVarifold::from_flat(2, 1, vec![0.5, 0.0, 0.0, 1.0]).unwrap();
        let rep = register(&src, &tar, &cfg).unwrap();
        let x1 = rep.deformed.position(0);
        assert!(((x1[0] - 0.5).powi(2) + x1[1].powi(2)).sqrt() < 1e-3 * 0.5);
        // a lone atom moves with constant velocity p^x
        assert!((x1[0] - rep.p0[0]).abs() < 1e-12);
        assert!(rep.energy_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let mut cfg = config(1.0);
        cfg.lambda = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
        let mut cfg = config(1.0);
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
        let cfg = config(1.0);
        let a = DiscreteVarifold::from_flat(2, 1, vec![0.0; 4]).unwrap();
        let b = DiscreteVarifold::from_flat(3, 1, vec![0.0; 6]).unwrap();
        assert!(matches!(register(&a, &b, &cfg), Err(Error::DimensionMismatch(_))));
    }
}
