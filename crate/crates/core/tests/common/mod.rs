#![allow(dead_code)]

use fundalpha::panel::{AlignedSample, FactorPanel, FundSeries, MonthId, Observation};
use fundalpha::regress::RegressionResult;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn month(i: usize) -> MonthId {
    MonthId::new(2000, 1).unwrap().offset(i as i64)
}

/// Sample over regressor rows (intercept added here).
pub fn sample_from(rows: &[Vec<f64>], y: &[f64]) -> AlignedSample {
    let k = rows.first().map_or(0, Vec::len);
    let mut x = Vec::with_capacity(rows.len() * (k + 1));
    for r in rows {
        x.push(1.0);
        x.extend_from_slice(r);
    }
    AlignedSample {
        fund_id: "T".into(),
        months: (0..y.len()).map(month).collect(),
        rows: (0..y.len()).collect(),
        y: y.to_vec(),
        x,
        n_cols: k + 1,
    }
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random regression instance with `k` factors and `n` rows.
pub fn random_sample(seed: u64, n: usize, k: usize) -> AlignedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..=k).map(|_| normal(&mut rng)).collect();
    let noise = rng.random_range(0.05..2.0);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let r: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
        let fitted = beta[0] + r.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
        y.push(fitted + noise * normal(&mut rng));
        rows.push(r);
    }
    sample_from(&rows, &y)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-wise relative closeness; NaN entries must match positionally.
pub fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut da = Vec::new();
    let mut db = Vec::new();
    for (x, y) in a.iter().zip(b) {
        match (x.is_nan(), y.is_nan()) {
            (true, true) => {}
            (false, false) => {
                da.push(*x);
                db.push(*y);
            }
            _ => return false,
        }
    }
    let diff: Vec<f64> = da.iter().zip(&db).map(|(x, y)| x - y).collect();
    norm(&diff) <= tol * norm(&db).max(f64::MIN_POSITIVE)
}

pub fn results_close(a: &RegressionResult, b: &RegressionResult, tol: f64) -> Result<(), String> {
    let checks = [
        ("alpha", vec![a.alpha], vec![b.alpha]),
        ("betas", a.betas.clone(), b.betas.clone()),
        ("se", a.se.clone(), b.se.clone()),
        ("tstats", a.tstats.clone(), b.tstats.clone()),
        ("sigma2", vec![a.sigma2], vec![b.sigma2]),
    ];
    for (name, x, y) in checks {
        if !rel_close(&x, &y, tol) {
            return Err(format!("{name}: {x:?} vs {y:?}"));
        }
    }
    if a.n_obs != b.n_obs || a.dof != b.dof || a.degenerate != b.degenerate {
        return Err("counts or degeneracy differ".into());
    }
    Ok(())
}

/// Percentile by a triangular interpolation kernel over order statistics.
pub fn kernel_percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p / 100.0;
    v.iter()
        .enumerate()
        .map(|(i, x)| (1.0 - (i as f64 - h).abs()).max(0.0) * x)
        .sum()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Panel with Gaussian factors (all six present) over `n` months.
pub fn random_panel(seed: u64, n: usize) -> FactorPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns: [Option<Vec<f64>>; 6] =
        std::array::from_fn(|_| Some((0..n).map(|_| 0.04 * normal(&mut rng)).collect()));
    let rf = (0..n).map(|_| 0.003 + 0.001 * normal(&mut rng)).collect();
    FactorPanel::new((0..n).map(month).collect(), columns, rf).unwrap()
}

pub fn fund(id: &str, months: &[usize], returns: &[f64], aum: &[Option<f64>]) -> FundSeries {
    let obs = months
        .iter()
        .zip(returns)
        .zip(aum)
        .map(|((&m, &r), &a)| Observation {
            month: month(m),
            net_return: r,
            aum: a,
        })
        .collect();
    FundSeries::new(id, obs).unwrap()
}
