//! Spearman rank correlation with a t-approximation p-value and a
//! Fisher-z confidence interval.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p_value: f64,
    pub ci95: (f64, f64),
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    /// `t = ρ·√((n−2)/(1−ρ²))` against Student-t with `n−2` degrees of freedom.
    TApprox,
    /// Two-sided permutation test over all `n!` orderings; `n ≤ 10` only.
    Exact,
}

/// Ranks starting at 1, ties sharing the average of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("an input has zero variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<SpearmanResult> {
    spearman_rho_with(xs, ys, PValueMethod::TApprox)
}

pub fn spearman_rho_with(xs: &[f64], ys: &[f64], method: PValueMethod) -> Result<SpearmanResult> {
    if xs.len() != ys.len() {
        return Err(Error::Argument(format!(
            "spearman inputs differ in length: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 4 {
        return Err(Error::Argument(format!("spearman needs at least 4 pairs, got {n}")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Argument("spearman inputs must be finite".into()));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let rho = pearson(&rx, &ry)?;
    let p_value = match method {
        PValueMethod::TApprox => t_approx_p(rho, n),
        PValueMethod::Exact => exact_p(&rx, &ry, rho)?,
    };
    Ok(SpearmanResult {
        rho,
        p_value,
        ci95: fisher_ci95(rho, n),
        n,
    })
}

fn t_approx_p(rho: f64, n: usize) -> f64 {
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

fn fisher_ci95(rho: f64, n: usize) -> (f64, f64) {
    if rho.abs() >= 1.0 || n <= 3 {
        return (rho, rho);
    }
    const Z975: f64 = 1.959_963_984_540_054;
    let z = rho.atanh();
    let se = 1.0 / ((n - 3) as f64).sqrt();
    ((z - Z975 * se).tanh(), (z + Z975 * se).tanh())
}

fn exact_p(rx: &[f64], ry: &[f64], rho: f64) -> Result<f64> {
    let n = rx.len();
    if n > 10 {
        return Err(Error::Argument(format!("exact permutation test limited to n ≤ 10, got {n}")));
    }
    let mut perm: Vec<f64> = ry.to_vec();
    let (mut hits, mut total) = (0u64, 0u64);
    let target = rho.abs() - 1e-12;
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut visit = |p: &[f64]| -> Result<()> {
        total += 1;
        if pearson(rx, p)?.abs() >= target {
            hits += 1;
        }
        Ok(())
    };
    visit(&perm)?;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm)?;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}
