//! Luck versus skill in mutual fund alphas.
//!
//! The pipeline screens a fund universe ([`screen`]), fits factor models to
//! each fund ([`regress`]), and compares the cross-section of actual t(α)
//! with a zero-alpha bootstrap ([`boot`]) through percentile tables and CDF
//! data ([`report`]). [`synth`] builds universes with known truth for
//! verification.

pub mod boot;
pub mod cli;
pub mod panel;
pub mod regress;
pub mod report;
pub mod screen;
pub mod synth;

pub use boot::{run_simulation, BootFund, SimConfig, SimulationOutput, TStatCrossSection};
pub use panel::{align, AlignedSample, Factor, FactorPanel, FundSeries, Model, MonthId};
pub use regress::{batch_fit, ols_fit, tstat_of_alpha, RegressError, RegressionResult};
pub use report::{build_percentile_report, percentile, PctBelowMode, PercentileReport};
pub use screen::{run_screen, ScreenConfig, ScreenOutcome};
pub use synth::{generate_universe, oracle_fit, SynthConfig};
