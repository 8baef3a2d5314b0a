//! Percentile tables (Sim / Act / %<Act), coefficient summaries and CDF data.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boot::{SimulationOutput, TStatCrossSection};
use crate::panel::Model;
use crate::regress::RegressionResult;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("percentile of an empty vector")]
    Empty,

    #[error("percentile {0} outside [0, 100]")]
    BadPercentile(f64),

    #[error("no successful simulation runs")]
    NoSuccessfulRuns,

    #[error("malformed simulation artifact {path}: {detail}")]
    Artifact { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Linear interpolation between order statistics at rank `(n−1)·p/100`.
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64, ReportError> {
    if sorted.is_empty() {
        return Err(ReportError::Empty);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(ReportError::BadPercentile(p));
    }
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return Ok(sorted[sorted.len() - 1]);
    }
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

/// Which %<Act definition the printed table shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PctBelowMode {
    /// Share of all simulated t(α) below the actual percentile value.
    #[default]
    Pooled,
    /// Share of runs whose own percentile lies below the actual value.
    PerRun,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PercentileRow {
    pub pct: f64,
    pub sim: f64,
    pub act: f64,
    pub pct_below_act_pooled: f64,
    pub pct_below_act_per_run: f64,
}

impl PercentileRow {
    pub fn pct_below_act(&self, mode: PctBelowMode) -> f64 {
        match mode {
            PctBelowMode::Pooled => self.pct_below_act_pooled,
            PctBelowMode::PerRun => self.pct_below_act_per_run,
        }
    }
}

/// Provenance labels attached to a report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportLabels {
    pub group: String,
    pub model: String,
    pub period: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PercentileReport {
    pub rows: Vec<PercentileRow>,
    pub labels: ReportLabels,
    pub fund_count: usize,
    pub mode: PctBelowMode,
    pub successful_runs: usize,
    pub empty_runs: usize,
}

/// Builds the Sim/Act/%<Act table. Sim is the mean over successful runs of
/// each run's percentile; %<Act uses strict inequality in both modes.
pub fn build_percentile_report(
    output: &SimulationOutput,
    labels: ReportLabels,
    mode: PctBelowMode,
) -> Result<PercentileReport, ReportError> {
    let actual = output.actual.values();
    if actual.is_empty() {
        return Err(ReportError::Empty);
    }
    let runs: Vec<&Vec<f64>> = output.per_run_percentiles.iter().flatten().collect();
    if runs.is_empty() || output.pooled_sim.is_empty() {
        return Err(ReportError::NoSuccessfulRuns);
    }
    let pooled = &output.pooled_sim;
    let rows = output
        .pct_grid
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let act = percentile(actual, p)?;
            let sim = runs.iter().map(|r| r[j]).sum::<f64>() / runs.len() as f64;
            let below_pooled = pooled.partition_point(|v| *v < act);
            let below_runs = runs.iter().filter(|r| r[j] < act).count();
            Ok(PercentileRow {
                pct: p,
                sim,
                act,
                pct_below_act_pooled: 100.0 * below_pooled as f64 / pooled.len() as f64,
                pct_below_act_per_run: 100.0 * below_runs as f64 / runs.len() as f64,
            })
        })
        .collect::<Result<_, ReportError>>()?;
    Ok(PercentileReport {
        rows,
        labels,
        fund_count: actual.len(),
        mode,
        successful_runs: runs.len(),
        empty_runs: output.empty_runs,
    })
}

impl PercentileReport {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), ReportError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "pct",
            "sim",
            "act",
            "pct_below_act_pooled",
            "pct_below_act_per_run",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.pct.to_string(),
                r.sim.to_string(),
                r.act.to_string(),
                r.pct_below_act_pooled.to_string(),
                r.pct_below_act_per_run.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fixed-width table with two decimals, showing the configured %<Act mode.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            PctBelowMode::Pooled => "pooled",
            PctBelowMode::PerRun => "per-run",
        };
        let _ = writeln!(
            s,
            "model {} | group {} | period {} | {} funds | %<Act {mode}",
            self.labels.model, self.labels.group, self.labels.period, self.fund_count
        );
        let _ = writeln!(s, "{:>5} {:>8} {:>8} {:>8}", "Pct", "Sim", "Act", "%<Act");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>5} {:>8.2} {:>8.2} {:>8.2}",
                r.pct,
                r.sim,
                r.act,
                r.pct_below_act(self.mode)
            );
        }
        s
    }
}

/// One coefficient (or t-statistic) across funds.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub name: String,
    /// Values at [`SUMMARY_PCTS`].
    pub percentiles: Vec<f64>,
    pub mean: f64,
    /// Funds with a defined value.
    pub count: usize,
}

pub const SUMMARY_PCTS: [f64; 5] = [10.0, 25.0, 50.0, 75.0, 90.0];

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSummary {
    pub group_label: String,
    pub rows: Vec<CoefficientRow>,
}

/// Percentiles and means of α, each β and their t-statistics across `fits`.
/// NaN entries (undefined t-statistics) are skipped.
pub fn build_coefficient_summary(
    fits: &[RegressionResult],
    model: Model,
    group_label: &str,
) -> Result<CoefficientSummary, ReportError> {
    if fits.is_empty() {
        return Err(ReportError::Empty);
    }
    let factors = model.factors();
    let mut names = vec!["alpha".to_string()];
    names.extend(factors.iter().map(|f| f.column_name().to_string()));
    let n_coef = names.len();

    let row = |name: String, values: Vec<f64>| -> CoefficientRow {
        let mut v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            return CoefficientRow {
                name,
                percentiles: vec![f64::NAN; SUMMARY_PCTS.len()],
                mean: f64::NAN,
                count: 0,
            };
        }
        CoefficientRow {
            name,
            percentiles: SUMMARY_PCTS
                .iter()
                .map(|p| percentile(&v, *p).expect("nonempty"))
                .collect(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            count: v.len(),
        }
    };

    let mut rows = Vec::with_capacity(2 * n_coef);
    for (j, name) in names.iter().enumerate().take(n_coef) {
        let vals = fits
            .iter()
            .map(|f| if j == 0 { f.alpha } else { f.betas[j - 1] })
            .collect();
        rows.push(row(name.clone(), vals));
    }
    for (j, name) in names.iter().enumerate() {
        rows.push(row(
            format!("t_{name}"),
            fits.iter().map(|f| f.tstats[j]).collect(),
        ));
    }
    Ok(CoefficientSummary {
        group_label: group_label.to_string(),
        rows,
    })
}

impl CoefficientSummary {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), ReportError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "coefficient",
            "p10",
            "p25",
            "p50",
            "p75",
            "p90",
            "mean",
            "count",
        ])?;
        for r in &self.rows {
            let mut rec = vec![r.name.clone()];
            rec.extend(r.percentiles.iter().map(|v| v.to_string()));
            rec.push(r.mean.to_string());
            rec.push(r.count.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Text table; alpha is shown in percent per month.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "group {}", self.group_label);
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "", "10", "25", "50", "75", "90", "Mean"
        );
        for r in &self.rows {
            let (name, scale) = if r.name == "alpha" {
                ("alpha (%)".to_string(), 100.0)
            } else {
                (r.name.clone(), 1.0)
            };
            let _ = write!(s, "{name:<12}");
            for v in r.percentiles.iter().chain(std::iter::once(&r.mean)) {
                let _ = write!(s, " {:>8.2}", v * scale);
            }
            s.push('\n');
        }
        s
    }
}

/// Writes `t_value,cdf_actual,cdf_simulated` on the merged support of both
/// series. Each CDF is the fraction of the series at or below `t_value`.
pub fn write_cdf<W: Write>(
    actual: &TStatCrossSection,
    pooled_sim: &[f64],
    sink: W,
) -> Result<(), ReportError> {
    let a = actual.values();
    let s = pooled_sim;
    if a.is_empty() || s.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["t_value", "cdf_actual", "cdf_simulated"])?;
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < s.len() {
        let t = match (a.get(i), s.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < s.len() && s[j] <= t {
            j += 1;
        }
        w.write_record([
            t.to_string(),
            (i as f64 / a.len() as f64).to_string(),
            (j as f64 / s.len() as f64).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_cdf(
    actual: &TStatCrossSection,
    pooled_sim: &[f64],
    path: &Path,
) -> Result<(), ReportError> {
    let mut buf = Vec::new();
    write_cdf(actual, pooled_sim, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Provenance written next to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub group: String,
    pub model: String,
    pub period: String,
    pub fund_count: usize,
    pub seed: u64,
    pub n_sims: usize,
    pub min_resampled_obs: usize,
    pub successful_runs: usize,
    pub empty_runs: usize,
    pub pct_below_mode: PctBelowMode,
}

pub const ACTUAL_FILE: &str = "actual_tstats.csv";
pub const PER_RUN_FILE: &str = "per_run_percentiles.csv";
pub const POOLED_FILE: &str = "pooled_sim.csv";

/// Writes a simulation as three CSV files in `dir`.
pub fn write_simulation_artifacts(
    output: &SimulationOutput,
    dir: &Path,
) -> Result<(), ReportError> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(ACTUAL_FILE))?;
    w.write_record(["t_alpha"])?;
    for t in output.actual.values() {
        w.write_record([t.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(PER_RUN_FILE))?;
    let mut header = vec!["run".to_string(), "fund_count".to_string()];
    header.extend(output.pct_grid.iter().map(|p| format!("p{p}")));
    w.write_record(&header)?;
    for (r, (pcts, n)) in output
        .per_run_percentiles
        .iter()
        .zip(&output.run_fund_counts)
        .enumerate()
    {
        let mut rec = vec![r.to_string(), n.to_string()];
        match pcts {
            Some(v) => rec.extend(v.iter().map(|x| x.to_string())),
            None => rec.extend(output.pct_grid.iter().map(|_| String::new())),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(POOLED_FILE))?;
    w.write_record(["t_alpha"])?;
    for t in &output.pooled_sim {
        w.write_record([t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back what [`write_simulation_artifacts`] wrote.
pub fn read_simulation_artifacts(dir: &Path) -> Result<SimulationOutput, ReportError> {
    let bad = |file: &str, detail: String| ReportError::Artifact {
        path: dir.join(file).display().to_string(),
        detail,
    };
    let column = |file: &str| -> Result<Vec<f64>, ReportError> {
        let mut rdr = csv::Reader::from_path(dir.join(file))?;
        rdr.records()
            .map(|rec| {
                let rec = rec?;
                rec.get(0)
                    .unwrap_or("")
                    .parse::<f64>()
                    .map_err(|e| bad(file, e.to_string()))
            })
            .collect()
    };
    let actual = TStatCrossSection::new(column(ACTUAL_FILE)?);
    let mut pooled_sim = column(POOLED_FILE)?;
    pooled_sim.sort_by(f64::total_cmp);

    let mut rdr = csv::Reader::from_path(dir.join(PER_RUN_FILE))?;
    let pct_grid = rdr
        .headers()?
        .iter()
        .skip(2)
        .map(|h| {
            h.strip_prefix('p')
                .and_then(|p| p.parse::<f64>().ok())
                .ok_or_else(|| bad(PER_RUN_FILE, format!("bad header {h:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut per_run_percentiles = Vec::new();
    let mut run_fund_counts = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let n: usize = rec
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|e: std::num::ParseIntError| bad(PER_RUN_FILE, e.to_string()))?;
        run_fund_counts.push(n);
        let cells: Vec<&str> = rec.iter().skip(2).collect();
        if cells.iter().all(|c| c.is_empty()) {
            per_run_percentiles.push(None);
        } else {
            let v = cells
                .iter()
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|e| bad(PER_RUN_FILE, e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            per_run_percentiles.push(Some(v));
        }
    }
    let empty_runs = per_run_percentiles.iter().filter(|p| p.is_none()).count();
    Ok(SimulationOutput {
        actual,
        pct_grid,
        per_run_percentiles,
        run_fund_counts,
        pooled_sim,
        empty_runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn output(
        actual: Vec<f64>,
        runs: Vec<Option<Vec<f64>>>,
        pooled: Vec<f64>,
        grid: Vec<f64>,
    ) -> SimulationOutput {
        let empty_runs = runs.iter().filter(|r| r.is_none()).count();
        SimulationOutput {
            actual: TStatCrossSection::new(actual),
            pct_grid: grid,
            run_fund_counts: runs.iter().map(|r| r.as_ref().map_or(0, |_| 1)).collect(),
            per_run_percentiles: runs,
            pooled_sim: pooled,
            empty_runs,
        }
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 50.0).unwrap(), 2.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.5);
        assert!((percentile(&[1.0, 2.0, 3.0, 4.0], 99.0).unwrap() - 3.97).abs() < 1e-12);
        assert_eq!(percentile(&[5.0], 99.0).unwrap(), 5.0);
        assert!(matches!(percentile(&[], 50.0), Err(ReportError::Empty)));
    }

    #[test]
    fn pooled_share_below_actual() {
        let out = output(
            vec![0.5],
            vec![Some(vec![0.0])],
            vec![-1.0, 0.0, 1.0],
            vec![50.0],
        );
        let r =
            build_percentile_report(&out, ReportLabels::default(), PctBelowMode::Pooled).unwrap();
        assert!((r.rows[0].pct_below_act_pooled - 200.0 / 3.0).abs() < 1e-12);

        let out = output(
            vec![-5.0],
            vec![Some(vec![0.0])],
            vec![-1.0, 0.0, 1.0],
            vec![50.0],
        );
        let r =
            build_percentile_report(&out, ReportLabels::default(), PctBelowMode::Pooled).unwrap();
        assert_eq!(r.rows[0].pct_below_act_pooled, 0.0);
        let out = output(
            vec![5.0],
            vec![Some(vec![0.0])],
            vec![-1.0, 0.0, 1.0],
            vec![50.0],
        );
        let r =
            build_percentile_report(&out, ReportLabels::default(), PctBelowMode::Pooled).unwrap();
        assert_eq!(r.rows[0].pct_below_act_pooled, 100.0);
    }

    #[test]
    fn per_run_ties_do_not_count() {
        let out = output(vec![0.7], vec![Some(vec![0.7])], vec![0.7], vec![50.0]);
        let r =
            build_percentile_report(&out, ReportLabels::default(), PctBelowMode::PerRun).unwrap();
        assert_eq!(r.rows[0].pct_below_act_per_run, 0.0);
        assert_eq!(r.rows[0].pct_below_act(PctBelowMode::PerRun), 0.0);
    }

    #[test]
    fn sim_column_averages_runs_and_skips_empty_ones() {
        let out = output(
            vec![0.0, 1.0],
            vec![Some(vec![1.0, 2.0]), None, Some(vec![3.0, 6.0])],
            vec![1.0, 2.0, 3.0, 6.0],
            vec![10.0, 90.0],
        );
        let r =
            build_percentile_report(&out, ReportLabels::default(), PctBelowMode::Pooled).unwrap();
        assert_eq!(r.rows[0].sim, 2.0);
        assert_eq!(r.rows[1].sim, 4.0);
        assert_eq!(r.successful_runs, 2);
        assert_eq!(r.empty_runs, 1);

        let none = output(vec![0.0], vec![None], vec![], vec![50.0]);
        assert!(matches!(
            build_percentile_report(&none, ReportLabels::default(), PctBelowMode::Pooled),
            Err(ReportError::NoSuccessfulRuns)
        ));
    }

    #[test]
    fn cdf_step_function() {
        let mut buf = Vec::new();
        write_cdf(&TStatCrossSection::new(vec![0.0]), &[0.0], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t_value,cdf_actual,cdf_simulated\n0,1,1\n"
        );

        let mut buf = Vec::new();
        write_cdf(&TStatCrossSection::new(vec![1.0, -1.0]), &[0.0], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t_value,cdf_actual,cdf_simulated\n-1,0.5,0\n0,0.5,1\n1,1,1\n"
        );
    }

    fn fit(alpha: f64, beta: f64) -> RegressionResult {
        RegressionResult {
            alpha,
            betas: vec![beta],
            se: vec![0.001, 0.1],
            tstats: vec![alpha / 0.001, beta / 0.1],
            sigma2: 1e-4,
            residuals: vec![],
            n_obs: 30,
            dof: 28,
            degenerate: false,
        }
    }

    #[test]
    fn coefficient_summary_basics() {
        let s = build_coefficient_summary(&[fit(0.002, 0.9)], Model::Capm, "5m").unwrap();
        assert_eq!(s.rows.len(), 4);
        assert_eq!(s.rows[0].name, "alpha");
        assert_eq!(s.rows[1].name, "MKT_RF");
        assert_eq!(s.rows[2].name, "t_alpha");
        assert!(s.rows[0].percentiles.iter().all(|v| *v == 0.002));

        let s = build_coefficient_summary(&[fit(-0.001, 0.9), fit(0.003, 1.1)], Model::Capm, "5m")
            .unwrap();
        assert!((s.rows[0].mean - 0.001).abs() < 1e-15);

        let mut d = fit(0.0, 1.0);
        d.tstats = vec![f64::NAN, f64::NAN];
        let s = build_coefficient_summary(&[d, fit(0.001, 1.0)], Model::Capm, "5m").unwrap();
        assert_eq!(s.rows[2].count, 1);
        assert!(s.render_table().contains("alpha (%)"));
    }

    #[test]
    fn artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = output(
            vec![-0.25, 1.5],
            vec![Some(vec![0.1, 0.2]), None],
            vec![-3.0, 0.1, 0.2],
            vec![10.0, 90.0],
        );
        write_simulation_artifacts(&out, dir.path()).unwrap();
        assert_eq!(read_simulation_artifacts(dir.path()).unwrap(), out);
    }
}
