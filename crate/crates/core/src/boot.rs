//! Zero-alpha bootstrap of the t(α) cross-section.
//!
//! Each fund's estimated α is subtracted from its excess returns. Every run
//! then draws one vector of panel months with replacement, shared by all
//! funds, and refits each fund on the drawn months it actually observed.
//! Duplicated months enter the fit with their multiplicity.
//!
//! Run `r` uses an RNG seeded with [`child_seed`]`(base_seed, r)`, so output
//! does not depend on thread count or execution order.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::panel::{AlignedSample, FactorPanel, Model, PanelError};
use crate::regress::{tstat_of_alpha, RegressionResult, SolveOperator};
use crate::report::percentile;

/// Row labels of the published percentile tables.
pub const DEFAULT_PCT_GRID: [f64; 19] = [
    1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 95.0, 96.0,
    97.0, 98.0, 99.0,
];

#[derive(Debug, thiserror::Error)]
pub enum BootError {
    #[error("simulation group is empty")]
    EmptyGroup,

    #[error("fit for fund {fund_id} does not match its sample ({detail})")]
    MismatchedFit { fund_id: String, detail: String },

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_sims: usize,
    pub base_seed: u64,
    /// Funds with fewer usable drawn rows sit out the run.
    pub min_resampled_obs: usize,
    pub model: Model,
    pub pct_grid: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_sims: 10_000,
            base_seed: 0,
            min_resampled_obs: 12,
            model: Model::Ff5,
            pct_grid: DEFAULT_PCT_GRID.to_vec(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), BootError> {
        if self.n_sims == 0 {
            return Err(BootError::InvalidConfig("n_sims must be at least 1".into()));
        }
        let in_range = self.pct_grid.iter().all(|p| *p > 0.0 && *p < 100.0);
        let increasing = self.pct_grid.windows(2).all(|w| w[0] < w[1]);
        if self.pct_grid.is_empty() || !in_range || !increasing {
            return Err(BootError::InvalidConfig(format!(
                "pct_grid must be strictly increasing within (0, 100), got {:?}",
                self.pct_grid
            )));
        }
        Ok(())
    }
}

/// Sorted t(α) values across a group of funds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TStatCrossSection {
    values: Vec<f64>,
}

impl TStatCrossSection {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fund_count(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub actual: TStatCrossSection,
    pub pct_grid: Vec<f64>,
    /// Run-level percentiles on `pct_grid`; `None` for runs where every fund
    /// was excluded.
    pub per_run_percentiles: Vec<Option<Vec<f64>>>,
    /// Funds contributing a t(α) in each run.
    pub run_fund_counts: Vec<usize>,
    /// Every simulated t(α), sorted.
    pub pooled_sim: Vec<f64>,
    pub empty_runs: usize,
}

impl SimulationOutput {
    pub fn successful_runs(&self) -> usize {
        self.per_run_percentiles.len() - self.empty_runs
    }
}

/// Seed for run `index`: the `index`-th output of a SplitMix64 generator
/// whose state starts at `base` (Stafford's mix13 finalizer).
pub fn child_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `n_panel_months` month indices uniformly with replacement.
pub fn draw_months(run_index: u64, cfg: &SimConfig, n_panel_months: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.base_seed, run_index));
    (0..n_panel_months)
        .map(|_| rng.random_range(0..n_panel_months))
        .collect()
}

/// Rows of `sample_rows` hit by `draw`, one entry per draw (duplicates kept).
pub fn resampled_rows(draw: &[usize], sample_rows: &[usize]) -> Vec<usize> {
    draw.iter()
        .copied()
        .filter(|m| sample_rows.binary_search(m).is_ok())
        .collect()
}

/// Excess returns with the fitted intercept removed.
pub fn zero_alpha_adjust(
    sample: &AlignedSample,
    fit: &RegressionResult,
) -> Result<Vec<f64>, BootError> {
    if fit.n_obs != sample.n_obs() {
        return Err(BootError::MismatchedFit {
            fund_id: sample.fund_id.clone(),
            detail: format!(
                "fit has {} observations, sample {}",
                fit.n_obs,
                sample.n_obs()
            ),
        });
    }
    Ok(sample.y.iter().map(|y| y - fit.alpha).collect())
}

/// A fund admitted to the simulation: its sample, full-sample fit and
/// zero-alpha series. A degenerate fund stays out of the actual cross-section
/// and drops out of every run, since its resampled fits are degenerate too.
#[derive(Debug, Clone)]
pub struct BootFund {
    sample: AlignedSample,
    fit: RegressionResult,
    adjusted: Vec<f64>,
}

impl BootFund {
    pub fn new(sample: AlignedSample, fit: RegressionResult) -> Result<Self, BootError> {
        if fit.betas.len() + 1 != sample.n_cols {
            return Err(BootError::MismatchedFit {
                fund_id: sample.fund_id.clone(),
                detail: format!(
                    "{} coefficients for {} columns",
                    fit.betas.len() + 1,
                    sample.n_cols
                ),
            });
        }
        let adjusted = zero_alpha_adjust(&sample, &fit)?;
        Ok(Self {
            sample,
            fit,
            adjusted,
        })
    }

    pub fn sample(&self) -> &AlignedSample {
        &self.sample
    }

    pub fn fit(&self) -> &RegressionResult {
        &self.fit
    }

    pub fn adjusted(&self) -> &[f64] {
        &self.adjusted
    }

    /// `None` for a degenerate fit.
    pub fn t_alpha(&self) -> Option<f64> {
        tstat_of_alpha(&self.fit).ok().filter(|t| t.is_finite())
    }
}

/// Funds observing exactly the same panel rows.
struct MaskGroup {
    rows: Vec<usize>,
    funds: Vec<usize>,
}

/// Prepared simulation state shared by every run.
pub struct Simulator<'a> {
    cfg: &'a SimConfig,
    n_months: usize,
    n_cols: usize,
    /// Row-major model design over all panel months.
    design: Vec<f64>,
    /// Zero-alpha excess returns laid out over panel months, one row per fund.
    y_dense: Vec<f64>,
    masks: Vec<MaskGroup>,
    actual: Vec<f64>,
}

/// Simulated t(α) values of one run, tagged with the group position of each fund.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub tstats: Vec<(usize, f64)>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        group: &[BootFund],
        panel: &FactorPanel,
        cfg: &'a SimConfig,
    ) -> Result<Self, BootError> {
        cfg.validate()?;
        if group.is_empty() {
            return Err(BootError::EmptyGroup);
        }
        let design = panel.model_design(cfg.model)?;
        let n_cols = cfg.model.n_columns();
        let n_months = panel.len();

        let mut y_dense = vec![0.0; group.len() * n_months];
        let mut by_rows: HashMap<&[usize], usize> = HashMap::new();
        let mut masks: Vec<MaskGroup> = Vec::new();
        for (i, f) in group.iter().enumerate() {
            let s = &f.sample;
            if s.n_cols != n_cols {
                return Err(BootError::MismatchedFit {
                    fund_id: s.fund_id.clone(),
                    detail: format!(
                        "sample has {} columns, model {} needs {n_cols}",
                        s.n_cols, cfg.model
                    ),
                });
            }
            for (k, (&r, m)) in s.rows.iter().zip(&s.months).enumerate() {
                if panel.months().get(r) != Some(m) {
                    return Err(BootError::MismatchedFit {
                        fund_id: s.fund_id.clone(),
                        detail: format!("month {m} is not row {r} of the panel"),
                    });
                }
                y_dense[i * n_months + r] = f.adjusted[k];
            }
            let g = *by_rows.entry(s.rows.as_slice()).or_insert_with(|| {
                masks.push(MaskGroup {
                    rows: s.rows.clone(),
                    funds: Vec::new(),
                });
                masks.len() - 1
            });
            masks[g].funds.push(i);
        }
        Ok(Self {
            cfg,
            n_months,
            n_cols,
            design,
            y_dense,
            masks,
            actual: group.iter().filter_map(BootFund::t_alpha).collect(),
        })
    }

    /// Number of distinct month masks among the group's funds.
    pub fn mask_count(&self) -> usize {
        self.masks.len()
    }

    /// Simulated t(α) of every fund that has enough usable rows in run `r`.
    pub fn run(&self, r: u64) -> RunOutcome {
        let draw = draw_months(r, self.cfg, self.n_months);
        let mut counts = vec![0u32; self.n_months];
        for m in draw {
            counts[m] += 1;
        }
        let mut tstats = Vec::new();
        let mut entries = Vec::new();
        for mask in &self.masks {
            entries.clear();
            entries.extend(
                mask.rows
                    .iter()
                    .filter(|&&m| counts[m] > 0)
                    .map(|&m| (m, counts[m])),
            );
            let usable: usize = entries.iter().map(|e| e.1 as usize).sum();
            if usable < self.cfg.min_resampled_obs {
                continue;
            }
            let Ok(op) = SolveOperator::weighted(&self.design, self.n_cols, &entries) else {
                continue;
            };
            for &f in &mask.funds {
                let y = &self.y_dense[f * self.n_months..(f + 1) * self.n_months];
                if let Some(t) = op.alpha_tstat(&self.design, y) {
                    tstats.push((f, t));
                }
            }
        }
        RunOutcome { tstats }
    }

    pub fn simulate(&self) -> SimulationOutput {
        let grid = &self.cfg.pct_grid;
        let runs: Vec<(Option<Vec<f64>>, Vec<f64>)> = (0..self.cfg.n_sims as u64)
            .into_par_iter()
            .map(|r| {
                let mut ts: Vec<f64> = self.run(r).tstats.into_iter().map(|(_, t)| t).collect();
                ts.sort_by(f64::total_cmp);
                let pcts = (!ts.is_empty()).then(|| {
                    grid.iter()
                        .map(|p| percentile(&ts, *p).expect("nonempty"))
                        .collect()
                });
                (pcts, ts)
            })
            .collect();

        let total: usize = runs.iter().map(|r| r.1.len()).sum();
        let mut pooled_sim = Vec::with_capacity(total);
        let mut per_run_percentiles = Vec::with_capacity(runs.len());
        let mut run_fund_counts = Vec::with_capacity(runs.len());
        for (pcts, ts) in runs {
            run_fund_counts.push(ts.len());
            per_run_percentiles.push(pcts);
            pooled_sim.extend(ts);
        }
        pooled_sim.par_sort_unstable_by(f64::total_cmp);
        let empty_runs = per_run_percentiles.iter().filter(|p| p.is_none()).count();

        SimulationOutput {
            actual: TStatCrossSection::new(self.actual.clone()),
            pct_grid: grid.clone(),
            per_run_percentiles,
            run_fund_counts,
            pooled_sim,
            empty_runs,
        }
    }
}

/// Runs the full bootstrap for one group of funds.
pub fn run_simulation(
    group: &[BootFund],
    panel: &FactorPanel,
    cfg: &SimConfig,
) -> Result<SimulationOutput, BootError> {
    Ok(Simulator::new(group, panel, cfg)?.simulate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{align, Factor, FundSeries, MonthId, Observation};
    use crate::regress::ols_fit;

    #[test]
    fn single_month_panel_draws_zero() {
        let cfg = SimConfig::default();
        assert_eq!(draw_months(3, &cfg, 1), vec![0]);
    }

    #[test]
    fn draws_are_deterministic_per_run() {
        let cfg = SimConfig {
            base_seed: 42,
            ..SimConfig::default()
        };
        assert_eq!(draw_months(7, &cfg, 50), draw_months(7, &cfg, 50));
        assert_ne!(draw_months(7, &cfg, 50), draw_months(8, &cfg, 50));
        assert!(draw_months(7, &cfg, 50).iter().all(|m| *m < 50));
    }

    #[test]
    fn child_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|r| child_seed(1, r)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(child_seed(1, 0), child_seed(2, 0));
    }

    #[test]
    fn uniform_month_frequencies() {
        let cfg = SimConfig {
            base_seed: 2024,
            ..SimConfig::default()
        };
        let mut freq = [0usize; 4];
        let mut total = 0;
        for r in 0..25_000 {
            for m in draw_months(r, &cfg, 4) {
                freq[m] += 1;
                total += 1;
            }
        }
        assert_eq!(total, 100_000);
        for f in freq {
            assert!((f as f64 / total as f64 - 0.25).abs() < 0.01, "{freq:?}");
        }
    }

    #[test]
    fn adjust_subtracts_alpha() {
        let sample = AlignedSample {
            fund_id: "A".into(),
            months: vec![],
            rows: vec![0, 1],
            y: vec![0.01, 0.02],
            x: vec![1.0, 0.1, 1.0, 0.2],
            n_cols: 2,
        };
        let mut fit = RegressionResult {
            alpha: 0.002,
            betas: vec![0.0],
            se: vec![1.0, 1.0],
            tstats: vec![1.0, 1.0],
            sigma2: 1.0,
            residuals: vec![],
            n_obs: 2,
            dof: 0,
            degenerate: false,
        };
        let adj = zero_alpha_adjust(&sample, &fit).unwrap();
        assert!((adj[0] - 0.008).abs() < 1e-15);
        fit.alpha = 0.0;
        assert_eq!(zero_alpha_adjust(&sample, &fit).unwrap(), sample.y);
        fit.n_obs = 3;
        assert!(zero_alpha_adjust(&sample, &fit).is_err());
    }

    #[test]
    fn refit_on_hand_fixture_removes_alpha() {
        let sample = AlignedSample {
            fund_id: "A".into(),
            months: vec![],
            rows: vec![0, 1, 2],
            y: vec![1.0, 2.0, 2.0],
            x: vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0],
            n_cols: 2,
        };
        let fit = ols_fit(&sample).unwrap();
        let adjusted = zero_alpha_adjust(&sample, &fit).unwrap();
        let refit = ols_fit(&AlignedSample {
            y: adjusted,
            ..sample
        })
        .unwrap();
        assert!(refit.alpha.abs() < 1e-10);
        assert!((refit.betas[0] - 0.5).abs() < 1e-10);
    }

    fn tiny_panel(n: usize) -> FactorPanel {
        let start = MonthId::new(2000, 1).unwrap();
        let months: Vec<MonthId> = (0..n).map(|i| start.offset(i as i64)).collect();
        let col = |k: f64| {
            Some(
                (0..n)
                    .map(|i| ((i as f64 + 1.0) * k).sin() * 0.05)
                    .collect(),
            )
        };
        FactorPanel::new(
            months,
            [col(1.3), col(2.1), col(0.7), None, None, None],
            vec![0.001; n],
        )
        .unwrap()
    }

    #[test]
    fn one_month_panel_excludes_every_fund() {
        let panel = tiny_panel(1);
        let fund = FundSeries::new(
            "A",
            vec![Observation {
                month: panel.first_month(),
                net_return: 0.01,
                aum: Some(10.0),
            }],
        )
        .unwrap();
        let sample = align(&fund, &panel, Model::Capm).unwrap();
        let fit = RegressionResult {
            alpha: 0.0,
            betas: vec![1.0],
            se: vec![1.0, 1.0],
            tstats: vec![0.5, 1.0],
            sigma2: 1.0,
            residuals: vec![0.0],
            n_obs: 1,
            dof: 0,
            degenerate: false,
        };
        let cfg = SimConfig {
            n_sims: 1,
            min_resampled_obs: 0,
            model: Model::Capm,
            ..SimConfig::default()
        };
        let out = run_simulation(&[BootFund::new(sample, fit).unwrap()], &panel, &cfg).unwrap();
        assert_eq!(out.empty_runs, 1);
        assert!(out.pooled_sim.is_empty());
        assert_eq!(out.run_fund_counts, vec![0]);
    }

    #[test]
    fn weighted_run_matches_explicit_duplicate_rows() {
        let panel = tiny_panel(40);
        let obs: Vec<Observation> = (0..40)
            .filter(|i| i % 5 != 0)
            .map(|i| Observation {
                month: panel.months()[i],
                net_return: 0.01
                    + 0.3 * panel.column(Factor::MktRf).unwrap()[i]
                    + ((i * i) as f64).cos() * 0.02,
                aum: Some(10.0),
            })
            .collect();
        let fund = FundSeries::new("A", obs).unwrap();
        let sample = align(&fund, &panel, Model::Ff3).unwrap();
        let fit = ols_fit(&sample).unwrap();
        let cfg = SimConfig {
            n_sims: 3,
            base_seed: 9,
            model: Model::Ff3,
            ..SimConfig::default()
        };
        let bf = BootFund::new(sample.clone(), fit).unwrap();
        let sim = Simulator::new(std::slice::from_ref(&bf), &panel, &cfg).unwrap();
        for r in 0..3 {
            let rows = resampled_rows(&draw_months(r, &cfg, panel.len()), &sample.rows);
            let mut x = Vec::new();
            let mut y = Vec::new();
            for m in &rows {
                let k = sample.rows.binary_search(m).unwrap();
                x.extend_from_slice(sample.row(k));
                y.push(bf.adjusted()[k]);
            }
            let explicit = ols_fit(&AlignedSample {
                fund_id: "A".into(),
                months: vec![],
                rows: (0..rows.len()).collect(),
                y,
                x,
                n_cols: 4,
            })
            .unwrap();
            let got = sim.run(r).tstats[0].1;
            assert!((got - explicit.tstats[0]).abs() < 1e-9 * explicit.tstats[0].abs().max(1.0));
        }
    }
}
