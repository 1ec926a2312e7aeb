//! Error curves of quantization against subsampling, and convergence of
//! registration energies computed from reduced sources.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::VarifoldKernel;
use crate::quantization::{quantize, subsample_baseline, QuantizeConfig};
use crate::registration::{fidelity, register, RegistrationConfig};
use crate::shooting::transport_varifold;
use crate::varifold::{distance_sq, inner_product, DiscreteVarifold};

fn csv_float(v: f64) -> String {
    format!("{v:e}")
}

fn sorted_ns(ns: &[usize], atoms: usize) -> Result<Vec<usize>> {
    if ns.is_empty() {
        return Err(Error::Validation("the list of atom counts is empty".into()));
    }
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns[0] == 0 || *ns.last().expect("nonempty") > atoms {
        return Err(Error::OutOfRange(format!("atom counts must lie in 1..={atoms}")));
    }
    Ok(ns)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantCurveRow {
    pub n: usize,
    pub rel_err_quantize: f64,
    pub rel_err_subsample: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantCurveResult {
    pub rows: Vec<QuantCurveRow>,
}

impl QuantCurveResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("N,rel_err_quantize,rel_err_subsample\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.n, csv_float(r.rel_err_quantize), csv_float(r.rel_err_subsample)));
        }
        s
    }

    /// Fraction of rows where quantization is at least as accurate as subsampling.
    pub fn win_rate(&self) -> f64 {
        let wins = self.rows.iter().filter(|r| r.rel_err_quantize <= r.rel_err_subsample).count();
        wins as f64 / self.rows.len().max(1) as f64
    }
}

/// Quantizes `target` at every `N` (ascending, each run warm-started from the
/// previous one) and compares with a mass-preserving random subsample.
pub fn quant_curve(
    target: &DiscreteVarifold,
    ns: &[usize],
    kernel: &VarifoldKernel,
    base: &QuantizeConfig,
) -> Result<QuantCurveResult> {
    let ns = sorted_ns(ns, target.len())?;
    let norm = inner_product(target, target, kernel)?.sqrt();
    let mut rows = Vec::with_capacity(ns.len());
    let mut prev: Option<DiscreteVarifold> = None;
    for &n in &ns {
        let mut cfg = base.clone();
        cfg.atoms = n;
        cfg.warm_start = prev.take();
        let rep = quantize(target, &cfg, kernel)?;
        let sub = subsample_baseline(target, n, base.seed)?;
        let rel_sub = distance_sq(&sub, target, kernel)?.sqrt() / norm;
        rows.push(QuantCurveRow { n, rel_err_quantize: rep.rel_error, rel_err_subsample: rel_sub });
        prev = Some(rep.result);
    }
    Ok(QuantCurveResult { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaConvRow {
    pub n: usize,
    pub e_of_vn: f64,
    pub e_star: f64,
    pub gap: f64,
    pub e_of_vn_subsample: f64,
    pub gap_subsample: f64,
    /// Set when a gap is below `-tol`: both energies are local minima, so this can happen.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaConvResult {
    pub e_star: f64,
    pub rows: Vec<GammaConvRow>,
}

impl GammaConvResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("N,E_of_vN,E_star,gap,E_of_vN_subsample,gap_subsample,flagged\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.n,
                csv_float(r.e_of_vn),
                csv_float(r.e_star),
                csv_float(r.gap),
                csv_float(r.e_of_vn_subsample),
                csv_float(r.gap_subsample),
                r.flagged
            ));
        }
        s
    }

    pub fn gap_spearman(&self) -> f64 {
        let ns: Vec<f64> = self.rows.iter().map(|r| r.n as f64).collect();
        let gaps: Vec<f64> = self.rows.iter().map(|r| r.gap).collect();
        spearman(&ns, &gaps)
    }
}

/// Energy of the deformation found from `reduced`, evaluated on the full source.
fn energy_of_field(
    reduced: &DiscreteVarifold,
    full: &DiscreteVarifold,
    target: &DiscreteVarifold,
    cfg: &RegistrationConfig,
) -> Result<f64> {
    let rep = register(reduced, target, cfg)?;
    let moved = transport_varifold(&rep.trajectory, full, &cfg.deformation)?;
    let (fid, _) = fidelity(&moved, target, &cfg.kernel, cfg.lambda)?;
    Ok(rep.reg_term + fid)
}

/// Registers reduced versions of `source` onto `target` and measures how far
/// their deformations are from the optimum on the full source.
pub fn gamma_conv(
    source: &DiscreteVarifold,
    target: &DiscreteVarifold,
    ns: &[usize],
    reg: &RegistrationConfig,
    quant: &QuantizeConfig,
) -> Result<GammaConvResult> {
    let ns = sorted_ns(ns, source.len())?;
    let mut quantized = Vec::with_capacity(ns.len());
    let mut prev: Option<DiscreteVarifold> = None;
    for &n in &ns {
        let mut cfg = quant.clone();
        cfg.atoms = n;
        cfg.warm_start = prev.take();
        let rep = quantize(source, &cfg, &reg.kernel)?;
        prev = Some(rep.result.clone());
        quantized.push(rep.result);
    }
    let subsampled = ns.iter().map(|&n| subsample_baseline(source, n, quant.seed)).collect::<Result<Vec<_>>>()?;

    let mut jobs: Vec<&DiscreteVarifold> = vec![source];
    jobs.extend(quantized.iter());
    jobs.extend(subsampled.iter());
    let energies = jobs
        .into_par_iter()
        .map(|mu| energy_of_field(mu, source, target, reg))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let e_star = energies[0];
    let tol = 1e-9 * (1.0 + e_star.abs());
    let k = ns.len();
    let rows = ns
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let (eq, es) = (energies[1 + i], energies[1 + k + i]);
            GammaConvRow {
                n,
                e_of_vn: eq,
                e_star,
                gap: eq - e_star,
                e_of_vn_subsample: es,
                gap_subsample: es - e_star,
                flagged: eq - e_star < -tol || es - e_star < -tol,
            }
        })
        .collect();
    Ok(GammaConvResult { e_star, rows })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation, ties receiving average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) }
}
