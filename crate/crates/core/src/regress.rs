//! Batched ordinary least squares with homoskedastic t-statistics.
//!
//! A [`SolveOperator`] holds `(XᵀWX)⁻¹` for one set of design rows (with
//! integer multiplicities as weights). Any response over those rows is then
//! fitted with two passes over the rows and a `p × p` product, which is what
//! makes the bootstrap cheap: funds observing the same months share one
//! operator.
//!
//! Columns that are identically zero on the fitted rows are inert: their
//! coefficient is pinned to 0, their standard error and t-statistic are NaN,
//! and they consume no degree of freedom.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use crate::panel::AlignedSample;

/// Reciprocal 1-norm condition number of `XᵀX` below which a design is singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

/// A fit whose residual norm is at most this fraction of `‖y‖` is degenerate.
pub const DEGENERATE_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegressError {
    #[error("insufficient observations: need at least {required}, got {actual}")]
    InsufficientObservations { required: usize, actual: usize },

    #[error("singular design (reciprocal condition {rcond:.3e})")]
    SingularDesign { rcond: f64 },

    #[error("t(α) undefined: degenerate fit")]
    TAlphaUndefined,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Output of one least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionResult {
    /// Intercept.
    pub alpha: f64,
    /// Factor loadings, in design column order after the intercept.
    pub betas: Vec<f64>,
    /// Standard errors aligned with `[alpha, betas...]`.
    pub se: Vec<f64>,
    /// t-statistics aligned with `[alpha, betas...]`; NaN where undefined.
    pub tstats: Vec<f64>,
    /// Residual variance `SSR / dof`.
    pub sigma2: f64,
    /// One residual per fitted row.
    pub residuals: Vec<f64>,
    pub n_obs: usize,
    pub dof: usize,
    /// Set when the residuals vanish; every t-statistic is then NaN.
    pub degenerate: bool,
}

impl RegressionResult {
    /// `[alpha, betas...]`.
    pub fn coefficients(&self) -> Vec<f64> {
        std::iter::once(self.alpha)
            .chain(self.betas.iter().copied())
            .collect()
    }
}

/// The t-statistic of the intercept.
pub fn tstat_of_alpha(result: &RegressionResult) -> Result<f64, RegressError> {
    match result.tstats.first() {
        Some(t) if !result.degenerate && t.is_finite() => Ok(*t),
        _ => Err(RegressError::TAlphaUndefined),
    }
}

/// Fits one aligned sample.
pub fn ols_fit(sample: &AlignedSample) -> Result<RegressionResult, RegressError> {
    check_shape(sample)?;
    let op = SolveOperator::unweighted(&sample.x, sample.n_cols)?;
    Ok(op.fit(&sample.x, &sample.y))
}

fn check_shape(sample: &AlignedSample) -> Result<(), RegressError> {
    if sample.n_cols == 0 || sample.x.len() != sample.y.len() * sample.n_cols {
        return Err(RegressError::DimensionMismatch(format!(
            "{} design values for {} rows of {} columns",
            sample.x.len(),
            sample.y.len(),
            sample.n_cols
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) enum Method {
    Cholesky,
    PivotedQr,
}

/// Precomputed normal-equations inverse for a fixed set of weighted rows.
#[derive(Debug, Clone)]
pub struct SolveOperator {
    n_cols: usize,
    /// Columns that are not identically zero on the fitted rows.
    active: Vec<usize>,
    /// `(row, weight)`; weights are positive multiplicities.
    entries: Vec<(usize, f64)>,
    /// Row-major `q × q` inverse over the active columns.
    inv: Vec<f64>,
    n_obs: usize,
    rcond: f64,
}

impl SolveOperator {
    /// Operator over every row of `x` with unit weight.
    pub fn unweighted(x: &[f64], n_cols: usize) -> Result<Self, RegressError> {
        let n = x.len() / n_cols;
        Self::build(
            x,
            n_cols,
            (0..n).map(|r| (r, 1.0)).collect(),
            Method::Cholesky,
        )
    }

    /// Operator over `(row, multiplicity)` pairs of `x`. Rows with zero
    /// multiplicity are ignored.
    pub fn weighted(
        x: &[f64],
        n_cols: usize,
        entries: &[(usize, u32)],
    ) -> Result<Self, RegressError> {
        let entries = entries
            .iter()
            .filter(|(_, w)| *w > 0)
            .map(|&(r, w)| (r, w as f64))
            .collect();
        Self::build(x, n_cols, entries, Method::Cholesky)
    }

    pub(crate) fn build(
        x: &[f64],
        n_cols: usize,
        entries: Vec<(usize, f64)>,
        method: Method,
    ) -> Result<Self, RegressError> {
        let n_obs = entries.iter().map(|e| e.1).sum::<f64>() as usize;
        let active: Vec<usize> = (0..n_cols)
            .filter(|&j| entries.iter().any(|&(r, _)| x[r * n_cols + j] != 0.0))
            .collect();
        let q = active.len();
        if n_obs < q + 1 {
            return Err(RegressError::InsufficientObservations {
                required: q + 1,
                actual: n_obs,
            });
        }

        let mut xtx = vec![0.0; q * q];
        for &(r, w) in &entries {
            let row = &x[r * n_cols..(r + 1) * n_cols];
            for a in 0..q {
                let wa = w * row[active[a]];
                for b in 0..=a {
                    xtx[a * q + b] += wa * row[active[b]];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                xtx[b * q + a] = xtx[a * q + b];
            }
        }

        let inv = match method {
            Method::Cholesky => match cholesky_inverse(&xtx, q) {
                Some(inv) => inv,
                None => pivoted_qr_inverse(x, n_cols, &active, &entries)?,
            },
            Method::PivotedQr => pivoted_qr_inverse(x, n_cols, &active, &entries)?,
        };
        let rcond = 1.0 / (norm1(&xtx, q) * norm1(&inv, q));
        if rcond.is_nan() || rcond < SINGULAR_RCOND {
            return Err(RegressError::SingularDesign { rcond });
        }
        Ok(Self {
            n_cols,
            active,
            entries,
            inv,
            n_obs,
            rcond,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn dof(&self) -> usize {
        self.n_obs - self.active.len()
    }

    /// Reciprocal 1-norm condition number of `XᵀWX`.
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    /// Rows and multiplicities this operator was built on.
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    fn solve(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let q = self.active.len();
        let p = self.n_cols;
        let mut xty = vec![0.0; q];
        for &(r, w) in &self.entries {
            let wy = w * y[r];
            let row = &x[r * p..(r + 1) * p];
            for (a, &c) in self.active.iter().enumerate() {
                xty[a] += wy * row[c];
            }
        }
        let mut coef = vec![0.0; p];
        for (a, &c) in self.active.iter().enumerate() {
            coef[c] = (0..q).map(|b| self.inv[a * q + b] * xty[b]).sum();
        }
        coef
    }

    /// Full fit of `y`, indexed by the same rows as `x`.
    pub fn fit(&self, x: &[f64], y: &[f64]) -> RegressionResult {
        let p = self.n_cols;
        let q = self.active.len();
        let coef = self.solve(x, y);
        let mut residuals = Vec::with_capacity(self.entries.len());
        let mut ssr = 0.0;
        let mut yy = 0.0;
        for &(r, w) in &self.entries {
            let row = &x[r * p..(r + 1) * p];
            let fitted: f64 = self.active.iter().map(|&c| row[c] * coef[c]).sum();
            let e = y[r] - fitted;
            residuals.push(e);
            ssr += w * e * e;
            yy += w * y[r] * y[r];
        }
        let dof = self.dof();
        let sigma2 = ssr / dof as f64;
        let degenerate = ssr.sqrt() <= DEGENERATE_RTOL * yy.sqrt();

        let mut se = vec![f64::NAN; p];
        let mut tstats = vec![f64::NAN; p];
        for (a, &c) in self.active.iter().enumerate() {
            se[c] = (sigma2 * self.inv[a * q + a]).sqrt();
            if !degenerate && se[c] > 0.0 {
                tstats[c] = coef[c] / se[c];
            }
        }
        RegressionResult {
            alpha: coef[0],
            betas: coef[1..].to_vec(),
            se,
            tstats,
            sigma2,
            residuals,
            n_obs: self.n_obs,
            dof,
            degenerate,
        }
    }

    /// t-statistic of the intercept only; `None` for a degenerate fit.
    pub fn alpha_tstat(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        let p = self.n_cols;
        let coef = self.solve(x, y);
        let mut ssr = 0.0;
        let mut yy = 0.0;
        for &(r, w) in &self.entries {
            let row = &x[r * p..(r + 1) * p];
            let fitted: f64 = self.active.iter().map(|&c| row[c] * coef[c]).sum();
            let e = y[r] - fitted;
            ssr += w * e * e;
            yy += w * y[r] * y[r];
        }
        if ssr.sqrt() <= DEGENERATE_RTOL * yy.sqrt() || self.active.first() != Some(&0) {
            return None;
        }
        let se = (ssr / self.dof() as f64 * self.inv[0]).sqrt();
        (se > 0.0).then(|| coef[0] / se)
    }
}

fn norm1(a: &[f64], q: usize) -> f64 {
    (0..q)
        .map(|j| (0..q).map(|i| a[i * q + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
fn cholesky_inverse(a: &[f64], q: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..=i {
            let s: f64 = a[i * q + j] - (0..j).map(|k| l[i * q + k] * l[j * q + k]).sum::<f64>();
            if i == j {
                if s.is_nan() || s <= 0.0 {
                    return None;
                }
                l[i * q + i] = s.sqrt();
            } else {
                l[i * q + j] = s / l[j * q + j];
            }
        }
    }
    // L⁻¹ by forward substitution, then A⁻¹ = L⁻ᵀ L⁻¹.
    let mut linv = vec![0.0; q * q];
    for j in 0..q {
        linv[j * q + j] = 1.0 / l[j * q + j];
        for i in j + 1..q {
            let s: f64 = (j..i).map(|k| l[i * q + k] * linv[k * q + j]).sum();
            linv[i * q + j] = -s / l[i * q + i];
        }
    }
    let mut inv = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..=i {
            let s: f64 = (i..q).map(|k| linv[k * q + i] * linv[k * q + j]).sum();
            inv[i * q + j] = s;
            inv[j * q + i] = s;
        }
    }
    Some(inv)
}

/// `(XᵀWX)⁻¹` from a column-pivoted Householder QR of `√W·X`. Fails when the
/// numerical rank falls short of the active column count.
fn pivoted_qr_inverse(
    x: &[f64],
    n_cols: usize,
    active: &[usize],
    entries: &[(usize, f64)],
) -> Result<Vec<f64>, RegressError> {
    let q = active.len();
    let m = entries.len();
    if m < q {
        return Err(RegressError::SingularDesign { rcond: 0.0 });
    }
    // Column-major working copy.
    let mut a = vec![0.0; m * q];
    for (i, &(r, w)) in entries.iter().enumerate() {
        let sw = w.sqrt();
        for (j, &c) in active.iter().enumerate() {
            a[j * m + i] = sw * x[r * n_cols + c];
        }
    }
    let mut perm: Vec<usize> = (0..q).collect();
    let mut norms: Vec<f64> = (0..q)
        .map(|j| a[j * m..(j + 1) * m].iter().map(|v| v * v).sum())
        .collect();

    for k in 0..q {
        let piv = (k..q)
            .max_by(|&i, &j| norms[i].total_cmp(&norms[j]))
            .expect("nonempty");
        if piv != k {
            for i in 0..m {
                a.swap(k * m + i, piv * m + i);
            }
            norms.swap(k, piv);
            perm.swap(k, piv);
        }
        let col = &mut a[k * m..(k + 1) * m];
        let alpha = col[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha == 0.0 {
            return Err(RegressError::SingularDesign { rcond: 0.0 });
        }
        let beta = if col[k] > 0.0 { -alpha } else { alpha };
        col[k] -= beta;
        let vnorm2: f64 = col[k..].iter().map(|v| v * v).sum();
        let v: Vec<f64> = col[k..].to_vec();
        col[k] = beta;
        for z in col[k + 1..].iter_mut() {
            *z = 0.0;
        }
        for j in k + 1..q {
            let cj = &mut a[j * m..(j + 1) * m];
            let dot: f64 = v.iter().zip(&cj[k..]).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (z, vi) in cj[k..].iter_mut().zip(&v) {
                *z -= f * vi;
            }
            norms[j] = cj[k + 1..].iter().map(|v| v * v).sum();
        }
    }

    let r = |i: usize, j: usize| a[j * m + i];
    let r00 = r(0, 0).abs();
    // cond(R)² = cond(XᵀWX), so the rank cut sits at the square root.
    if (0..q).any(|k| r(k, k).abs() <= SINGULAR_RCOND.sqrt() * r00) {
        return Err(RegressError::SingularDesign { rcond: 0.0 });
    }
    let mut rinv = vec![0.0; q * q];
    for j in (0..q).rev() {
        rinv[j * q + j] = 1.0 / r(j, j);
        for i in (0..j).rev() {
            let s: f64 = (i + 1..=j).map(|k| r(i, k) * rinv[k * q + j]).sum();
            rinv[i * q + j] = -s / r(i, i);
        }
    }
    let mut inv = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..q {
            let g: f64 = (i.max(j)..q)
                .map(|k| rinv[i * q + k] * rinv[j * q + k])
                .sum();
            inv[perm[i] * q + perm[j]] = g;
        }
    }
    Ok(inv)
}

type CacheSlot = Arc<OnceLock<Result<Arc<SolveOperator>, RegressError>>>;

/// Column count, month mask and a fingerprint of the design values.
type CacheKey = (usize, Vec<usize>, u64);

/// Solve operators keyed by column count and month mask. The key also carries
/// a fingerprint of the design rows, so samples from different panels never
/// share an operator. Each key is built at most once, even under concurrent
/// access.
#[derive(Debug, Default)]
pub struct BatchDesignCache {
    slots: Mutex<HashMap<CacheKey, CacheSlot>>,
}

fn design_fingerprint(x: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    for v in x {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

impl BatchDesignCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn operator_for(&self, sample: &AlignedSample) -> Result<Arc<SolveOperator>, RegressError> {
        check_shape(sample)?;
        let slot = self
            .slots
            .lock()
            .expect("cache poisoned")
            .entry((
                sample.n_cols,
                sample.rows.clone(),
                design_fingerprint(&sample.x),
            ))
            .or_default()
            .clone();
        slot.get_or_init(|| SolveOperator::unweighted(&sample.x, sample.n_cols).map(Arc::new))
            .clone()
    }
}

/// Fits every sample, sharing operators between samples with identical
/// month coverage. All samples must come from the same panel and model.
pub fn batch_fit(samples: &[AlignedSample]) -> Vec<Result<RegressionResult, RegressError>> {
    batch_fit_with_cache(samples, &BatchDesignCache::new())
}

pub fn batch_fit_with_cache(
    samples: &[AlignedSample],
    cache: &BatchDesignCache,
) -> Vec<Result<RegressionResult, RegressError>> {
    samples
        .par_iter()
        .map(|s| cache.operator_for(s).map(|op| op.fit(&s.x, &s.y)))
        .collect()
}
