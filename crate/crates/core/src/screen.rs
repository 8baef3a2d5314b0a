//! Fund filtration: incubation trimming, minimum history, the money-market
//! screen and the index/leverage screen, plus nested AuM size groups.
//!
//! Rules run in a fixed order and stop at the first failure:
//! incubation, minimum history, money market, index/leverage.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::panel::{align_with, Factor, FactorPanel, FundSeries, MonthId, Regressor, Response};
use crate::regress::{ols_fit, RegressError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScreenError {
    #[error("never incubated out")]
    NeverIncubated,

    #[error("no AuM reported")]
    NoAum,

    #[error("insufficient observations for {rule} screen: {source}")]
    Regression { rule: Rule, source: RegressError },

    #[error("fund months outside the factor panel: {0}")]
    Alignment(String),

    #[error("invalid screen configuration: {0}")]
    InvalidConfig(String),
}

/// How the four index/leverage clauses combine.
///
/// With `A = |β|−1 > band`, `B = |T_β| < tmax`, `C = |β|−1 < lev`,
/// `D = |T_β| > tmin`:
/// * `NotIndexAndNotLeveraged`: `(A or B) and C and D`
/// * `AndBindsTighter`: `A or (B and C and D)`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ClauseGrouping {
    #[default]
    NotIndexAndNotLeveraged,
    AndBindsTighter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenConfig {
    /// AuM (millions) a fund must reach once before its returns count.
    pub incubation_threshold_aum: f64,
    /// Money-market screen fails when `|t(rf)| ≥` this.
    pub rf_tstat_max: f64,
    pub index_beta_band: f64,
    pub index_tstat_max: f64,
    pub leverage_beta_max_excess: f64,
    pub market_tstat_min: f64,
    /// Minimum observation count (not calendar span).
    pub min_history_months: usize,
    /// Size-group cutoffs in millions, strictly increasing.
    pub size_cutoffs: Vec<f64>,
    pub clause_grouping: ClauseGrouping,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            incubation_threshold_aum: 2.5,
            rf_tstat_max: 8.0,
            index_beta_band: 0.05,
            index_tstat_max: 8.0,
            leverage_beta_max_excess: 5.0,
            market_tstat_min: 1.95,
            min_history_months: 24,
            size_cutoffs: vec![5.0, 250.0, 1000.0],
            clause_grouping: ClauseGrouping::default(),
        }
    }
}

impl ScreenConfig {
    /// Thresholds must be non-negative (t-statistic caps strictly positive);
    /// infinite values disable the corresponding clause.
    pub fn validate(&self) -> Result<(), ScreenError> {
        let bad = |name: &str, v: f64| ScreenError::InvalidConfig(format!("{name} = {v}"));
        for (name, v) in [
            ("incubation_threshold_aum", self.incubation_threshold_aum),
            ("index_beta_band", self.index_beta_band),
            ("market_tstat_min", self.market_tstat_min),
        ] {
            if v.is_nan() || v < 0.0 {
                return Err(bad(name, v));
            }
        }
        for (name, v) in [
            ("rf_tstat_max", self.rf_tstat_max),
            ("index_tstat_max", self.index_tstat_max),
            ("leverage_beta_max_excess", self.leverage_beta_max_excess),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(bad(name, v));
            }
        }
        if self
            .size_cutoffs
            .iter()
            .any(|c| c.is_nan() || *c <= 0.0 || c.is_infinite())
            || self.size_cutoffs.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(ScreenError::InvalidConfig(format!(
                "size_cutoffs must be positive and strictly increasing, got {:?}",
                self.size_cutoffs
            )));
        }
        Ok(())
    }

    fn money_market_disabled(&self) -> bool {
        self.rf_tstat_max == f64::INFINITY
    }

    fn index_leverage_disabled(&self) -> bool {
        self.index_tstat_max == f64::INFINITY
            && self.leverage_beta_max_excess == f64::INFINITY
            && self.market_tstat_min == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    Incubation,
    MinHistory,
    MoneyMarket,
    IndexLeverage,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Incubation => "incubation",
            Rule::MinHistory => "min_history",
            Rule::MoneyMarket => "money_market",
            Rule::IndexLeverage => "index_leverage",
        })
    }
}

/// Statistic that drove a rule decision.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    /// First month with AuM at or above the threshold.
    Incubation {
        first_month: Option<MonthId>,
    },
    History {
        n_obs: usize,
    },
    /// `None` when the regression on rf fits perfectly.
    MoneyMarket {
        t_rf: Option<f64>,
    },
    /// `t_beta` is `None` when the market regression fits perfectly.
    IndexLeverage {
        beta: f64,
        t_beta: Option<f64>,
    },
    /// Screen turned off by configuration.
    Disabled,
    /// The screen could not be evaluated.
    Error(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleDecision {
    pub rule: Rule,
    pub passed: bool,
    pub measure: Measure,
}

/// Audit record of one fund's pass through the screens.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenOutcome {
    pub fund_id: String,
    pub trimmed_start: Option<MonthId>,
    /// Decisions in evaluation order; evaluation stops at the first failure.
    pub decisions: Vec<RuleDecision>,
    pub admitted: bool,
    /// Labels of every size cutoff the fund reaches, smallest first.
    pub size_groups: Vec<String>,
    pub last_aum: Option<f64>,
    /// Observations remaining after incubation trimming.
    pub n_obs: usize,
}

impl ScreenOutcome {
    pub fn failing_rule(&self) -> Option<Rule> {
        self.decisions.iter().find(|d| !d.passed).map(|d| d.rule)
    }

    pub fn t_rf(&self) -> Option<f64> {
        self.decisions.iter().find_map(|d| match d.measure {
            Measure::MoneyMarket { t_rf } => t_rf,
            _ => None,
        })
    }

    pub fn market_beta(&self) -> Option<(f64, Option<f64>)> {
        self.decisions.iter().find_map(|d| match d.measure {
            Measure::IndexLeverage { beta, t_beta } => Some((beta, t_beta)),
            _ => None,
        })
    }

    pub fn in_group(&self, label: &str) -> bool {
        self.size_groups
            .iter()
            .any(|g| g.eq_ignore_ascii_case(label))
    }

    /// The trimmed series when the fund was admitted.
    pub fn admitted_series(&self, fund: &FundSeries) -> Option<FundSeries> {
        debug_assert_eq!(fund.fund_id(), self.fund_id);
        match (self.admitted, self.trimmed_start) {
            (true, Some(start)) => Some(fund.from_month(start)),
            _ => None,
        }
    }
}

/// Label for a cutoff in millions: `5m`, `250m`, `1b`.
pub fn size_label(cutoff: f64) -> String {
    if cutoff >= 1000.0 && (cutoff / 1000.0).fract() == 0.0 {
        format!("{}b", cutoff / 1000.0)
    } else {
        format!("{cutoff}m")
    }
}

/// Drops the months before AuM first reaches the threshold. Later dips
/// below the threshold are kept.
pub fn trim_incubation(fund: &FundSeries, cfg: &ScreenConfig) -> Result<FundSeries, ScreenError> {
    fund.observations()
        .iter()
        .find(|o| o.aum.is_some_and(|a| a >= cfg.incubation_threshold_aum))
        .map(|o| fund.from_month(o.month))
        .ok_or(ScreenError::NeverIncubated)
}

pub fn screen_min_history(fund: &FundSeries, cfg: &ScreenConfig) -> bool {
    fund.len() >= cfg.min_history_months
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoneyMarketCheck {
    pub passed: bool,
    /// `None` for a perfect fit on rf, which fails the screen.
    pub t_rf: Option<f64>,
}

/// Regresses the raw net return on `[1, rf]`; fails when `|t(rf)| ≥ rf_tstat_max`.
pub fn screen_money_market(
    fund: &FundSeries,
    panel: &FactorPanel,
    cfg: &ScreenConfig,
) -> Result<MoneyMarketCheck, ScreenError> {
    let sample = align_with(fund, panel, Response::Raw, &[Regressor::RiskFree])
        .map_err(|e| ScreenError::Alignment(e.to_string()))?;
    let fit = ols_fit(&sample).map_err(|source| ScreenError::Regression {
        rule: Rule::MoneyMarket,
        source,
    })?;
    if fit.degenerate {
        return Ok(MoneyMarketCheck {
            passed: false,
            t_rf: None,
        });
    }
    let t = fit.tstats[1];
    Ok(MoneyMarketCheck {
        passed: t.abs() < cfg.rf_tstat_max,
        t_rf: Some(t),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexLeverageCheck {
    pub passed: bool,
    pub beta: f64,
    /// `None` when the market regression fits perfectly (treated as infinite).
    pub t_beta: Option<f64>,
}

/// Evaluates the index/leverage condition on a market loading and its t-statistic.
pub fn index_leverage_passes(beta: f64, t_beta: f64, cfg: &ScreenConfig) -> bool {
    let excess = beta.abs() - 1.0;
    let t = t_beta.abs();
    let a = excess > cfg.index_beta_band;
    let b = t < cfg.index_tstat_max;
    let c = excess < cfg.leverage_beta_max_excess;
    let d = t > cfg.market_tstat_min;
    match cfg.clause_grouping {
        ClauseGrouping::NotIndexAndNotLeveraged => (a || b) && c && d,
        ClauseGrouping::AndBindsTighter => a || (b && c && d),
    }
}

/// Regresses the excess return on `[1, MKT−RF]` and applies
/// [`index_leverage_passes`].
pub fn screen_index_leverage(
    fund: &FundSeries,
    panel: &FactorPanel,
    cfg: &ScreenConfig,
) -> Result<IndexLeverageCheck, ScreenError> {
    let sample = align_with(
        fund,
        panel,
        Response::Excess,
        &[Regressor::Factor(Factor::MktRf)],
    )
    .map_err(|e| ScreenError::Alignment(e.to_string()))?;
    let fit = ols_fit(&sample).map_err(|source| ScreenError::Regression {
        rule: Rule::IndexLeverage,
        source,
    })?;
    let beta = fit.betas[0];
    let t_beta = (!fit.degenerate).then_some(fit.tstats[1]);
    let passed = index_leverage_passes(beta, t_beta.unwrap_or(f64::INFINITY), cfg);
    Ok(IndexLeverageCheck {
        passed,
        beta,
        t_beta,
    })
}

/// Every cutoff label the fund's last reported AuM reaches.
pub fn assign_size_groups(
    fund: &FundSeries,
    cfg: &ScreenConfig,
) -> Result<Vec<String>, ScreenError> {
    let aum = fund.last_aum().ok_or(ScreenError::NoAum)?;
    Ok(cfg
        .size_cutoffs
        .iter()
        .filter(|c| aum >= **c)
        .map(|c| size_label(*c))
        .collect())
}

/// Screens one fund.
pub fn screen_fund(fund: &FundSeries, panel: &FactorPanel, cfg: &ScreenConfig) -> ScreenOutcome {
    let mut outcome = ScreenOutcome {
        fund_id: fund.fund_id().to_string(),
        trimmed_start: None,
        decisions: Vec::with_capacity(4),
        admitted: false,
        size_groups: assign_size_groups(fund, cfg).unwrap_or_default(),
        last_aum: fund.last_aum(),
        n_obs: fund.len(),
    };

    let trimmed = match trim_incubation(fund, cfg) {
        Ok(t) => t,
        Err(_) => {
            outcome.decisions.push(RuleDecision {
                rule: Rule::Incubation,
                passed: false,
                measure: Measure::Incubation { first_month: None },
            });
            return outcome;
        }
    };
    outcome.trimmed_start = trimmed.observations().first().map(|o| o.month);
    outcome.n_obs = trimmed.len();
    outcome.decisions.push(RuleDecision {
        rule: Rule::Incubation,
        passed: true,
        measure: Measure::Incubation {
            first_month: outcome.trimmed_start,
        },
    });

    let history_ok = screen_min_history(&trimmed, cfg);
    outcome.decisions.push(RuleDecision {
        rule: Rule::MinHistory,
        passed: history_ok,
        measure: Measure::History {
            n_obs: trimmed.len(),
        },
    });
    if !history_ok {
        return outcome;
    }

    let mm = if cfg.money_market_disabled() {
        RuleDecision {
            rule: Rule::MoneyMarket,
            passed: true,
            measure: Measure::Disabled,
        }
    } else {
        match screen_money_market(&trimmed, panel, cfg) {
            Ok(c) => RuleDecision {
                rule: Rule::MoneyMarket,
                passed: c.passed,
                measure: Measure::MoneyMarket { t_rf: c.t_rf },
            },
            Err(e) => RuleDecision {
                rule: Rule::MoneyMarket,
                passed: false,
                measure: Measure::Error(e.to_string()),
            },
        }
    };
    let mm_ok = mm.passed;
    outcome.decisions.push(mm);
    if !mm_ok {
        return outcome;
    }

    let il = if cfg.index_leverage_disabled() {
        RuleDecision {
            rule: Rule::IndexLeverage,
            passed: true,
            measure: Measure::Disabled,
        }
    } else {
        match screen_index_leverage(&trimmed, panel, cfg) {
            Ok(c) => RuleDecision {
                rule: Rule::IndexLeverage,
                passed: c.passed,
                measure: Measure::IndexLeverage {
                    beta: c.beta,
                    t_beta: c.t_beta,
                },
            },
            Err(e) => RuleDecision {
                rule: Rule::IndexLeverage,
                passed: false,
                measure: Measure::Error(e.to_string()),
            },
        }
    };
    outcome.admitted = il.passed;
    outcome.decisions.push(il);
    outcome
}

/// Screens every fund; output order matches input order.
pub fn run_screen(
    funds: &[FundSeries],
    panel: &FactorPanel,
    cfg: &ScreenConfig,
) -> Vec<ScreenOutcome> {
    funds
        .par_iter()
        .map(|f| screen_fund(f, panel, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Observation;

    fn fund_with_aum(aum: &[Option<f64>]) -> FundSeries {
        let start = MonthId::new(2000, 1).unwrap();
        let obs = aum
            .iter()
            .enumerate()
            .map(|(i, a)| Observation {
                month: start.offset(i as i64),
                net_return: 0.01,
                aum: *a,
            })
            .collect();
        FundSeries::new("F", obs).unwrap()
    }

    #[test]
    fn incubation_keeps_suffix_from_first_crossing() {
        let cfg = ScreenConfig::default();
        let f = fund_with_aum(&[Some(1.0), Some(2.0), Some(3.0), Some(2.0)]);
        let t = trim_incubation(&f, &cfg).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.observations()[0].month, MonthId::new(2000, 3).unwrap());
        assert_eq!(t.observations()[1].aum, Some(2.0));

        let f = fund_with_aum(&[Some(2.5), Some(1.0)]);
        assert_eq!(trim_incubation(&f, &cfg).unwrap().len(), 2);

        let f = fund_with_aum(&[None, None]);
        let err = trim_incubation(&f, &cfg).unwrap_err();
        assert_eq!(err.to_string(), "never incubated out");
    }

    #[test]
    fn min_history_boundary() {
        let cfg = ScreenConfig::default();
        assert!(screen_min_history(&fund_with_aum(&[Some(3.0); 24]), &cfg));
        assert!(!screen_min_history(&fund_with_aum(&[Some(3.0); 23]), &cfg));
        assert!(!screen_min_history(&fund_with_aum(&[]), &cfg));
    }

    #[test]
    fn index_leverage_clauses() {
        let cfg = ScreenConfig::default();
        // Pure index tracker.
        assert!(!index_leverage_passes(1.0, 50.0, &cfg));
        // Leveraged.
        assert!(!index_leverage_passes(7.0, 20.0, &cfg));
        assert!(index_leverage_passes(1.2, 10.0, &cfg));
        // Index-like beta but weak market fit passes the first part.
        assert!(index_leverage_passes(1.0, 5.0, &cfg));
        // Not an equity fund: market loading insignificant.
        assert!(!index_leverage_passes(0.2, 1.0, &cfg));
        assert!(!index_leverage_passes(-1.02, -30.0, &cfg));

        let alt = ScreenConfig {
            clause_grouping: ClauseGrouping::AndBindsTighter,
            ..ScreenConfig::default()
        };
        assert!(index_leverage_passes(7.0, 20.0, &alt));
        assert!(!index_leverage_passes(1.0, 50.0, &alt));
    }

    #[test]
    fn size_groups_nest() {
        let cfg = ScreenConfig::default();
        let g = |a: f64| assign_size_groups(&fund_with_aum(&[Some(a)]), &cfg).unwrap();
        assert_eq!(g(6.0), vec!["5m"]);
        assert_eq!(g(300.0), vec!["5m", "250m"]);
        assert_eq!(g(2000.0), vec!["5m", "250m", "1b"]);
        assert!(g(4.0).is_empty());
        // Last non-missing value wins.
        let f = fund_with_aum(&[Some(2000.0), Some(6.0), None]);
        assert_eq!(assign_size_groups(&f, &cfg).unwrap(), vec!["5m"]);
        assert_eq!(
            assign_size_groups(&fund_with_aum(&[None]), &cfg),
            Err(ScreenError::NoAum)
        );
    }

    #[test]
    fn labels() {
        assert_eq!(size_label(5.0), "5m");
        assert_eq!(size_label(250.0), "250m");
        assert_eq!(size_label(1000.0), "1b");
        assert_eq!(size_label(2.5), "2.5m");
    }

    #[test]
    fn config_validation() {
        assert!(ScreenConfig::default().validate().is_ok());
        let bad = ScreenConfig {
            size_cutoffs: vec![250.0, 5.0],
            ..ScreenConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ScreenConfig {
            rf_tstat_max: 0.0,
            ..ScreenConfig::default()
        };
        assert!(bad.validate().is_err());
        let off = ScreenConfig {
            rf_tstat_max: f64::INFINITY,
            index_beta_band: 0.0,
            index_tstat_max: f64::INFINITY,
            leverage_beta_max_excess: f64::INFINITY,
            market_tstat_min: 0.0,
            min_history_months: 0,
            ..ScreenConfig::default()
        };
        assert!(off.validate().is_ok());
    }
}
