//! Projection of a discrete varifold onto measures with at most `N` Diracs.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::is_degenerate;
use crate::kernels::VarifoldKernel;
use crate::optimize::{lbfgs_minimize, Bounds, ExitStatus, LbfgsConfig};
use crate::varifold::{distance_sq_and_grad, inner_product, inner_triple, total_mass, DiscreteVarifold};

/// Restarts used when none are configured.
pub const DEFAULT_RESTARTS: usize = 5;

/// Relative frame jitter applied to restarts after the first.
const FRAME_JITTER: f64 = 1e-3;

/// Weight of atoms added on top of a warm start, relative to the mean target weight.
const SEED_WEIGHT: f64 = 1e-6;

/// Axis-aligned box for atom positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoxSpec {
    /// The string `"auto"`: bounding box of the target inflated by 5%.
    Auto(AutoTag),
    Explicit { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

impl BoxSpec {
    pub fn auto() -> Self {
        BoxSpec::Auto(AutoTag::Auto)
    }

    /// Resolved `(lower, upper)` corners for the given target.
    pub fn resolve(&self, target: &DiscreteVarifold) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = target.n();
        match self {
            BoxSpec::Explicit { lower, upper } => {
                if lower.len() != n || upper.len() != n {
                    return Err(Error::dims(format!("box corners must have {n} coordinates")));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::Validation("box lower corner exceeds upper corner".into()));
                }
                Ok((lower.clone(), upper.clone()))
            }
            BoxSpec::Auto(_) => {
                let mut lo = vec![f64::INFINITY; n];
                let mut hi = vec![f64::NEG_INFINITY; n];
                for i in 0..target.len() {
                    for (c, &v) in target.position(i).iter().enumerate() {
                        lo[c] = lo[c].min(v);
                        hi[c] = hi[c].max(v);
                    }
                }
                for c in 0..n {
                    let pad = 0.025 * (hi[c] - lo[c]);
                    lo[c] -= pad;
                    hi[c] += pad;
                }
                Ok((lo, hi))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizeConfig {
    /// Maximum number of atoms `N`.
    pub atoms: usize,
    pub restarts: usize,
    pub bbox: Option<BoxSpec>,
    pub seed: u64,
    pub optimizer: LbfgsConfig,
    /// A previous solution to extend; it is kept as a candidate and seeds one extra run.
    pub warm_start: Option<DiscreteVarifold>,
}

impl QuantizeConfig {
    pub fn new(atoms: usize) -> Self {
        QuantizeConfig {
            atoms,
            restarts: DEFAULT_RESTARTS,
            bbox: None,
            seed: 0,
            optimizer: LbfgsConfig::default(),
            warm_start: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct QuantizeReport {
    pub result: DiscreteVarifold,
    pub rel_error: f64,
    pub stationarity_gap: f64,
    /// Index of the winning run; the warm start, if any, follows the restarts.
    pub best_restart: usize,
    pub iterations: Vec<usize>,
    pub objective: f64,
    pub status: ExitStatus,
    pub target_norm: f64,
    pub result_norm: f64,
}

/// Serializable summary of a [`QuantizeReport`].
#[derive(Clone, Debug, Serialize)]
pub struct QuantizeSummary {
    pub atoms: usize,
    pub rel_error: f64,
    pub stationarity_gap: f64,
    pub best_restart: usize,
    pub iterations: Vec<usize>,
    pub objective: f64,
    pub status: ExitStatus,
    pub target_norm: f64,
    pub result_norm: f64,
}

impl QuantizeReport {
    pub fn summary(&self) -> QuantizeSummary {
        QuantizeSummary {
            atoms: self.result.len(),
            rel_error: self.rel_error,
            stationarity_gap: self.stationarity_gap,
            best_restart: self.best_restart,
            iterations: self.iterations.clone(),
            objective: self.objective,
            status: self.status,
            target_norm: self.target_norm,
            result_norm: self.result_norm,
        }
    }
}

/// `‖μ^q - μ*‖²` and its gradient for the flat atom blocks `q`.
pub fn quantize_objective_and_grad(q: &[f64], target: &DiscreteVarifold, kernel: &VarifoldKernel) -> Result<(f64, Vec<f64>)> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let mu = DiscreteVarifold::from_flat(target.n(), target.d(), q.to_vec())?;
    distance_sq_and_grad(&mu, target, kernel, None)
}

fn random_subset(target: &DiscreteVarifold, n_keep: usize, rng: &mut ChaCha8Rng) -> DiscreteVarifold {
    let mut idx = sample(rng, target.len(), n_keep).into_vec();
    idx.sort_unstable();
    let mut keep = vec![false; target.len()];
    idx.into_iter().for_each(|i| keep[i] = true);
    let mut out = target.filter(|i| keep[i]);
    let kept = total_mass(&out);
    if kept > 0.0 {
        out.scale_weights(total_mass(target) / kept);
    }
    out
}

/// Keeps `n_keep` uniformly chosen atoms, rescaled to preserve the total mass.
pub fn subsample_baseline(target: &DiscreteVarifold, n_keep: usize, seed: u64) -> Result<DiscreteVarifold> {
    if n_keep == 0 || n_keep > target.len() {
        return Err(Error::OutOfRange(format!("cannot keep {n_keep} of {} atoms", target.len())));
    }
    Ok(random_subset(target, n_keep, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn initial_guess(target: &DiscreteVarifold, cfg: &QuantizeConfig, restart: usize) -> DiscreteVarifold {
    let n_keep = cfg.atoms.min(target.len());
    if restart == 0 {
        return random_subset(target, n_keep, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(cfg.seed, restart));
    let mu = random_subset(target, n_keep, &mut rng);
    let (n, b) = (mu.n(), mu.block());
    let mut data = mu.into_flat();
    for blk in data.chunks_mut(b) {
        for u in blk[n..].chunks_mut(n) {
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            u.iter_mut().for_each(|v| *v += FRAME_JITTER * norm * rng.gen_range(-1.0..1.0));
        }
    }
    DiscreteVarifold::from_flat(n, target.d(), data).expect("same blocks")
}

/// Previous solution padded with near-zero-weight copies of target atoms.
fn warm_guess(target: &DiscreteVarifold, prev: &DiscreteVarifold, cfg: &QuantizeConfig) -> DiscreteVarifold {
    let mut mu = prev.clone();
    let extra = cfg.atoms.saturating_sub(prev.len()).min(target.len());
    if extra == 0 {
        return mu;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(cfg.seed, usize::MAX));
    let mut add = random_subset(target, extra, &mut rng);
    let mean = total_mass(target) / target.len() as f64;
    let cur = total_mass(&add) / extra as f64;
    if cur > 0.0 {
        add.scale_weights(SEED_WEIGHT * mean / cur);
    }
    for i in 0..add.len() {
        mu.push(add.position(i), add.frame(i)).expect("same shape");
    }
    mu
}

struct Candidate {
    mu: DiscreteVarifold,
    objective: f64,
    iterations: usize,
    status: ExitStatus,
}

/// Drops collapsed atoms and applies the optimal global weight rescaling.
fn finalize(mu: DiscreteVarifold, target: &DiscreteVarifold, kernel: &VarifoldKernel) -> Result<DiscreteVarifold> {
    let n = mu.n();
    let mut mu = mu.filter(|i| {
        let w = mu.weight(i);
        w > 0.0 && !is_degenerate(mu.frame(i), n, w)
    });
    if mu.is_empty() {
        return Ok(mu);
    }
    let (mm, mt, _) = inner_triple(&mu, target, kernel)?;
    if mm > 0.0 && mt > 0.0 {
        mu.scale_weights(mt / mm);
    }
    Ok(mu)
}

fn run(
    init: DiscreteVarifold,
    target: &DiscreteVarifold,
    kernel: &VarifoldKernel,
    target_sq: f64,
    opt: &LbfgsConfig,
) -> Result<Candidate> {
    let shape = (init.n(), init.d());
    let min = lbfgs_minimize(
        |q| {
            let mu = DiscreteVarifold::from_flat(shape.0, shape.1, q.to_vec())?;
            distance_sq_and_grad(&mu, target, kernel, Some(target_sq))
        },
        init.as_flat(),
        opt,
    )?;
    let mu = finalize(DiscreteVarifold::from_flat(shape.0, shape.1, min.x)?, target, kernel)?;
    let (mm, mt, _) = inner_triple(&mu, target, kernel)?;
    let objective = (mm - 2.0 * mt + target_sq).max(0.0);
    Ok(Candidate { mu, objective, iterations: min.iterations, status: min.status })
}

/// Best-of-restarts minimizer of `‖μ_N - μ*‖²` over at most `cfg.atoms` Diracs.
pub fn quantize(target: &DiscreteVarifold, cfg: &QuantizeConfig, kernel: &VarifoldKernel) -> Result<QuantizeReport> {
    if !kernel.grassmann.is_nonnegative() {
        return Err(Error::IndefiniteKernel(kernel.grassmann.name()));
    }
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    if cfg.atoms == 0 {
        return Err(Error::OutOfRange("the atom budget N must be at least 1".into()));
    }
    if cfg.restarts == 0 {
        return Err(Error::OutOfRange("restarts must be at least 1".into()));
    }
    let (n, block) = (target.n(), target.block());
    let mut opt = cfg.optimizer.clone();
    if let Some(spec) = &cfg.bbox {
        let (lo, hi) = spec.resolve(target)?;
        opt.bounds = Some(Bounds { lower: lo, upper: hi });
    }
    let target_sq = inner_product(target, target, kernel)?;

    let mut inits: Vec<DiscreteVarifold> = (0..cfg.restarts).map(|r| initial_guess(target, cfg, r)).collect();
    if let Some(prev) = &cfg.warm_start {
        prev.same_shape(target)?;
        inits.push(warm_guess(target, prev, cfg));
    }
    let position_box = |mu_len: usize| -> Option<Bounds> {
        let b = opt.bounds.as_ref()?;
        let mut lower = vec![f64::NEG_INFINITY; mu_len * block];
        let mut upper = vec![f64::INFINITY; mu_len * block];
        for i in 0..mu_len {
            lower[i * block..i * block + n].copy_from_slice(&b.lower);
            upper[i * block..i * block + n].copy_from_slice(&b.upper);
        }
        Some(Bounds { lower, upper })
    };
    let runs: Vec<Result<Candidate>> = inits
        .into_par_iter()
        .map(|init| {
            let mut o = opt.clone();
            o.bounds = position_box(init.len());
            run(init, target, kernel, target_sq, &o)
        })
        .collect();
    let mut candidates = runs.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(prev) = &cfg.warm_start {
        if prev.len() <= cfg.atoms {
            let inside = match &opt.bounds {
                None => true,
                Some(b) => (0..prev.len()).all(|i| {
                    prev.position(i).iter().zip(&b.lower).zip(&b.upper).all(|((x, l), u)| l <= x && x <= u)
                }),
            };
            if inside {
                let mu = finalize(prev.clone(), target, kernel)?;
                let (mm, mt, _) = inner_triple(&mu, target, kernel)?;
                candidates.push(Candidate {
                    mu,
                    objective: (mm - 2.0 * mt + target_sq).max(0.0),
                    iterations: 0,
                    status: ExitStatus::Converged,
                });
            }
        }
    }

    let best = candidates
        .iter()
        .enumerate()
        .fold(0, |b, (i, c)| if c.objective < candidates[b].objective { i } else { b });
    let iterations = candidates.iter().map(|c| c.iterations).collect();
    let win = candidates.swap_remove(best);
    let (mm, mt, _) = inner_triple(&win.mu, target, kernel)?;
    let tnorm = target_sq.sqrt();
    Ok(QuantizeReport {
        rel_error: win.objective.sqrt() / tnorm,
        stationarity_gap: (mm - mt).abs() / target_sq,
        best_restart: best,
        iterations,
        objective: win.objective,
        status: win.status,
        target_norm: tnorm,
        result_norm: mm.max(0.0).sqrt(),
        result: win.mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{GrassmannKernel, SpatialKernel};
    use crate::varifold::distance_sq;

    fn kernel(sigma: f64) -> VarifoldKernel {
        VarifoldKernel::new(SpatialKernel::gaussian(sigma).unwrap(), GrassmannKernel::oriented_gaussian(1.0).unwrap())
    }

    fn random_target(seed: u64, atoms: usize, n: usize, d: usize) -> DiscreteVarifold {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..atoms * n * (d + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DiscreteVarifold::from_flat(n, d, data).unwrap()
    }

    #[test]
    fn objective_at_target_is_zero() {
        let t = random_target(1, 5, 2, 1);
        let (v, g) = quantize_objective_and_grad(t.as_flat(), &t, &kernel(1.0)).unwrap();
        assert!(v.abs() < 1e-12);
        assert!(g.iter().all(|x| x.abs() < 1e-12));
        assert!(quantize_objective_and_grad(&[0.0; 5], &t, &kernel(1.0)).is_err());
    }

    #[test]
    fn coincident_atoms_merge() {
        let t = DiscreteVarifold::from_flat(2, 1, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0]).unwrap();
        let (v, _) = quantize_objective_and_grad(&[0.0, 0.0, 3.0, 0.0], &t, &kernel(1.0)).unwrap();
        assert!(v.abs() < 1e-12);
        let rep = quantize(&t, &QuantizeConfig::new(1), &kernel(1.0)).unwrap();
        assert_eq!(rep.result.len(), 1);
        assert!((rep.result.weight(0) - 3.0).abs() < 1e-8);
    }

    #[test]
    fn exact_recovery_with_enough_atoms() {
        let t = random_target(2, 6, 3, 2);
        let rep = quantize(&t, &QuantizeConfig::new(6), &kernel(1.0)).unwrap();
        assert!(rep.rel_error < 1e-8, "{}", rep.rel_error);
        let rep = quantize(&t, &QuantizeConfig::new(9), &kernel(1.0)).unwrap();
        assert!(rep.rel_error < 1e-8);
    }

    #[test]
    fn two_close_atoms_collapse_to_midpoint() {
        let h = 0.1;
        let t = DiscreteVarifold::from_flat(2, 1, vec![0.0, 0.0, 1.0, 0.0, h, 0.0, 1.0, 0.0]).unwrap();
        let k = kernel(5.0);
        let rep = quantize(&t, &QuantizeConfig::new(1), &k).unwrap();
        let x = rep.result.position(0);
        assert!((x[0] - h / 2.0).abs() < 1e-6 && x[1].abs() < 1e-6);
        let rho = (-(h * h / 4.0) / 25.0_f64).exp();
        assert!((rep.result.weight(0) - 2.0 * rho).abs() < 1e-6);
    }

    #[test]
    fn optimality_conditions_hold() {
        let t = random_target(3, 32, 2, 1);
        let k = kernel(0.5);
        let rep = quantize(&t, &QuantizeConfig::new(8), &k).unwrap();
        assert!(rep.result.len() <= 8);
        assert!(rep.stationarity_gap < 1e-6);
        assert!(rep.result_norm <= rep.target_norm * (1.0 + 1e-8));
        let d = distance_sq(&rep.result, &t, &k).unwrap().sqrt() / rep.target_norm;
        assert!((d - rep.rel_error).abs() < 1e-10);
        let sub = subsample_baseline(&t, 8, 0).unwrap();
        assert!(rep.rel_error <= distance_sq(&sub, &t, &k).unwrap().sqrt() / rep.target_norm);
    }

    #[test]
    fn box_is_respected() {
        let t = random_target(4, 20, 2, 1);
        let mut cfg = QuantizeConfig::new(4);
        cfg.bbox = Some(BoxSpec::Explicit { lower: vec![0.0, 0.0], upper: vec![0.3, 0.3] });
        let rep = quantize(&t, &cfg, &kernel(0.5)).unwrap();
        for i in 0..rep.result.len() {
            assert!(rep.result.position(i).iter().all(|&v| (0.0..=0.3).contains(&v)));
        }
        let (lo, hi) = BoxSpec::auto().resolve(&t).unwrap();
        for i in 0..t.len() {
            for c in 0..2 {
                assert!(lo[c] < t.position(i)[c] && t.position(i)[c] < hi[c]);
            }
        }
    }

    #[test]
    fn nested_runs_are_monotone() {
        let t = random_target(5, 24, 2, 1);
        let k = kernel(0.5);
        let mut prev: Option<DiscreteVarifold> = None;
        let mut last = f64::INFINITY;
        for n in 1..=6 {
            let mut cfg = QuantizeConfig::new(n);
            cfg.warm_start = prev.take();
            let rep = quantize(&t, &cfg, &k).unwrap();
            assert!(rep.rel_error <= last + 1e-10, "N={n}");
            last = rep.rel_error;
            prev = Some(rep.result);
        }
    }

    #[test]
    fn linear_kernel_and_bad_inputs_are_rejected() {
        let t = random_target(6, 4, 2, 1);
        let lin = VarifoldKernel::new(SpatialKernel::gaussian(1.0).unwrap(), GrassmannKernel::Linear);
        assert!(matches!(quantize(&t, &QuantizeConfig::new(2), &lin), Err(Error::IndefiniteKernel(_))));
        let empty = DiscreteVarifold::new(2, 1).unwrap();
        assert!(matches!(quantize(&empty, &QuantizeConfig::new(2), &kernel(1.0)), Err(Error::EmptyTarget)));
        assert!(quantize(&t, &QuantizeConfig::new(0), &kernel(1.0)).is_err());
    }

    #[test]
    fn subsample_preserves_mass() {
        let t = random_target(7, 10, 3, 2);
        let s = subsample_baseline(&t, 4, 9).unwrap();
        assert_eq!(s.len(), 4);
        assert!((total_mass(&s) - total_mass(&t)).abs() < 1e-12 * total_mass(&t));
        assert_eq!(subsample_baseline(&t, 10, 1).unwrap().as_flat().len(), t.as_flat().len());
        let two = DiscreteVarifold::from_flat(2, 1, vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let one = subsample_baseline(&two, 1, 3).unwrap();
        assert!((one.weight(0) - 2.0).abs() < 1e-15);
        assert!(subsample_baseline(&t, 0, 0).is_err() && subsample_baseline(&t, 11, 0).is_err());
    }

    #[test]
    fn quantize_is_deterministic() {
        let t = random_target(8, 20, 2, 1);
        let a = quantize(&t, &QuantizeConfig::new(5), &kernel(0.5)).unwrap();
        let b = quantize(&t, &QuantizeConfig::new(5), &kernel(0.5)).unwrap();
        assert_eq!(a.result, b.result);
        assert_eq!(a.rel_error.to_bits(), b.rel_error.to_bits());
    }
}
