//! Synthetic universes with known alphas, betas and screening labels, and an
//! independently coded least-squares oracle.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::boot::child_seed;
use crate::panel::{
    AlignedSample, Factor, FactorPanel, FundSeries, Model, MonthId, Observation, PanelError,
};
use crate::regress::{RegressError, RegressionResult, DEGENERATE_RTOL};
use crate::screen::Rule;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Archetype {
    Active,
    IndexTracker,
    MoneyMarket,
    Leveraged,
    /// AuM stays below the incubation threshold until
    /// [`SynthConfig::incubation_exit_month`], or forever when that is unset.
    Incubating,
}

impl Archetype {
    pub fn label(self) -> &'static str {
        match self {
            Archetype::Active => "active",
            Archetype::IndexTracker => "index",
            Archetype::MoneyMarket => "money_market",
            Archetype::Leveraged => "leveraged",
            Archetype::Incubating => "incubating",
        }
    }
}

/// Fractions of each archetype; must sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchetypeMix {
    pub active: f64,
    pub index_tracker: f64,
    pub money_market: f64,
    pub leveraged: f64,
    pub incubating: f64,
}

impl ArchetypeMix {
    pub fn all_active() -> Self {
        Self::only(Archetype::Active)
    }

    pub fn only(a: Archetype) -> Self {
        let mut m = Self {
            active: 0.0,
            index_tracker: 0.0,
            money_market: 0.0,
            leveraged: 0.0,
            incubating: 0.0,
        };
        *m.slot(a) = 1.0;
        m
    }

    fn slot(&mut self, a: Archetype) -> &mut f64 {
        match a {
            Archetype::Active => &mut self.active,
            Archetype::IndexTracker => &mut self.index_tracker,
            Archetype::MoneyMarket => &mut self.money_market,
            Archetype::Leveraged => &mut self.leveraged,
            Archetype::Incubating => &mut self.incubating,
        }
    }

    fn fractions(&self) -> [(Archetype, f64); 5] {
        [
            (Archetype::Active, self.active),
            (Archetype::IndexTracker, self.index_tracker),
            (Archetype::MoneyMarket, self.money_market),
            (Archetype::Leveraged, self.leveraged),
            (Archetype::Incubating, self.incubating),
        ]
    }

    /// Per-archetype fund counts by largest remainder.
    fn counts(&self, n: usize) -> [(Archetype, usize); 5] {
        let fr = self.fractions();
        let mut out = fr.map(|(a, f)| (a, (f * n as f64).floor() as usize));
        let assigned: usize = out.iter().map(|c| c.1).sum();
        let mut rem: Vec<(usize, f64)> = fr
            .iter()
            .enumerate()
            .map(|(i, (_, f))| (i, f * n as f64 - (f * n as f64).floor()))
            .collect();
        rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (i, _) in rem.into_iter().take(n.saturating_sub(assigned)) {
            out[i].1 += 1;
        }
        out
    }
}

/// Per-factor monthly means and volatilities (decimal), indexed by [`Factor::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMoments {
    pub mean: [f64; 6],
    pub vol: [f64; 6],
    pub rf_mean: f64,
    pub rf_vol: f64,
}

impl Default for FactorMoments {
    fn default() -> Self {
        Self {
            mean: [0.006, 0.002, 0.002, 0.005, 0.003, 0.003],
            vol: [0.045, 0.03, 0.03, 0.045, 0.02, 0.02],
            rf_mean: 0.003,
            rf_vol: 0.001,
        }
    }
}

/// Fixed archetype parameters.
pub const INDEX_IDIO_VOL: f64 = 0.0005;
pub const MONEY_MARKET_IDIO_VOL: f64 = 1e-5;
pub const LEVERAGED_BETA: f64 = 7.0;
/// Range of market loading above 1 for active funds; keeps them clear of the index band.
pub const ACTIVE_MKT_EXCESS: (f64, f64) = (0.25, 0.6);
pub const INCUBATING_AUM_CEILING: f64 = 2.4;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_months: usize,
    pub n_funds: usize,
    pub start_month: MonthId,
    pub factors: FactorMoments,
    /// Row-major 6×6 factor correlation; identity when `None`.
    pub correlation: Option<Vec<f64>>,
    /// Factors active and incubating funds load on.
    pub truth_model: Model,
    /// True monthly alpha of active and incubating funds.
    pub alpha: f64,
    /// Fund index → true alpha, overriding the archetype default.
    pub alpha_overrides: BTreeMap<usize, f64>,
    pub idio_vol: f64,
    pub mix: ArchetypeMix,
    /// When set, each fund covers a random contiguous window at least this long.
    pub min_coverage_months: Option<usize>,
    /// Month index at which incubating funds first reach the AuM threshold.
    pub incubation_exit_month: Option<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_months: 240,
            n_funds: 50,
            start_month: MonthId::new(1990, 1).expect("valid"),
            factors: FactorMoments::default(),
            correlation: None,
            truth_model: Model::Ff5,
            alpha: 0.0,
            alpha_overrides: BTreeMap::new(),
            idio_vol: 0.02,
            mix: ArchetypeMix::all_active(),
            min_coverage_months: None,
            incubation_exit_month: None,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_months == 0 {
            return bad("n_months must be positive".into());
        }
        let fr = self.mix.fractions();
        if fr.iter().any(|(_, f)| f.is_nan() || *f < 0.0)
            || (fr.iter().map(|f| f.1).sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "archetype fractions must be non-negative and sum to 1: {:?}",
                self.mix
            ));
        }
        let vols = self
            .factors
            .vol
            .iter()
            .chain([&self.factors.rf_vol, &self.idio_vol]);
        if vols.into_iter().any(|v| v.is_nan() || *v < 0.0) {
            return bad("volatilities must be non-negative".into());
        }
        if let Some(c) = self.min_coverage_months {
            if c == 0 || c > self.n_months {
                return bad(format!(
                    "min_coverage_months {c} outside 1..={}",
                    self.n_months
                ));
            }
        }
        if let Some(c) = &self.correlation {
            if c.len() != 36 || cholesky6(c).is_none() {
                return bad("correlation must be a positive-definite 6x6 matrix".into());
            }
        }
        Ok(())
    }
}

/// Ground truth for one generated fund.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub fund_id: String,
    pub archetype: Archetype,
    pub alpha: f64,
    /// Loadings indexed by [`Factor::index`].
    pub betas: [f64; 6],
    pub idio_vol: f64,
    /// The screen this fund is built to fail, if any.
    pub expected_rule: Option<Rule>,
}

#[derive(Debug, Clone)]
pub struct Universe {
    pub panel: FactorPanel,
    pub funds: Vec<FundSeries>,
    pub truth: Vec<TruthRecord>,
}

const PANEL_STREAM: u64 = u64::MAX;

fn cholesky6(c: &[f64]) -> Option<[f64; 36]> {
    let mut l = [0.0; 36];
    for i in 0..6 {
        for j in 0..=i {
            let mut s = c[i * 6 + j];
            for k in 0..j {
                s -= l[i * 6 + k] * l[j * 6 + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * 6 + i] = s.sqrt();
            } else {
                l[i * 6 + j] = s / l[j * 6 + j];
            }
        }
    }
    Some(l)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Generates a factor panel, fund series and their truth records. Each fund
/// draws from its own seeded stream, so changing one fund's alpha leaves
/// every random draw unchanged.
pub fn generate_universe(cfg: &SynthConfig) -> Result<Universe, SynthError> {
    cfg.validate()?;
    let n = cfg.n_months;
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, PANEL_STREAM));
    let chol = cfg.correlation.as_deref().and_then(cholesky6);
    let mut cols: Vec<Vec<f64>> = (0..6).map(|_| Vec::with_capacity(n)).collect();
    let mut rf = Vec::with_capacity(n);
    for _ in 0..n {
        let z: [f64; 6] = std::array::from_fn(|_| normal(&mut rng));
        let zc: [f64; 6] = match &chol {
            Some(l) => std::array::from_fn(|i| (0..=i).map(|k| l[i * 6 + k] * z[k]).sum()),
            None => z,
        };
        for f in 0..6 {
            cols[f].push(cfg.factors.mean[f] + cfg.factors.vol[f] * zc[f]);
        }
        rf.push(cfg.factors.rf_mean + cfg.factors.rf_vol * normal(&mut rng));
    }
    let months: Vec<MonthId> = (0..n).map(|t| cfg.start_month.offset(t as i64)).collect();
    let mut columns: [Option<Vec<f64>>; 6] = Default::default();
    for (f, c) in cols.into_iter().enumerate() {
        columns[f] = Some(c);
    }
    let panel = FactorPanel::new(months.clone(), columns, rf)?;

    let archetypes: Vec<Archetype> = cfg
        .mix
        .counts(cfg.n_funds)
        .iter()
        .flat_map(|&(a, c)| std::iter::repeat_n(a, c))
        .collect();

    let mut funds = Vec::with_capacity(cfg.n_funds);
    let mut truth = Vec::with_capacity(cfg.n_funds);
    for (i, &arch) in archetypes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, i as u64));
        let fund_id = format!("F{i:05}");

        // Fixed draw order: loadings, AuM level, coverage, then monthly shocks.
        let mkt_offset: f64 = rng.random_range(ACTIVE_MKT_EXCESS.0..ACTIVE_MKT_EXCESS.1);
        let style: [f64; 6] = std::array::from_fn(|_| 0.25 * normal(&mut rng));
        let log_aum0: f64 = rng.random_range(3f64.ln()..5000f64.ln());
        let (first, last) = match cfg.min_coverage_months {
            Some(len) => {
                let s = rng.random_range(0..=n - len);
                let e = rng.random_range(s + len - 1..n);
                (s, e)
            }
            None => (0, n - 1),
        };

        let mut betas = [0.0; 6];
        let (idio, default_alpha, expected_rule) = match arch {
            Archetype::Active | Archetype::Incubating => {
                for f in cfg.truth_model.factors() {
                    betas[f.index()] = style[f.index()];
                }
                betas[Factor::MktRf.index()] = 1.0 + mkt_offset;
                let rule = (arch == Archetype::Incubating && cfg.incubation_exit_month.is_none())
                    .then_some(Rule::Incubation);
                (cfg.idio_vol, cfg.alpha, rule)
            }
            Archetype::IndexTracker => {
                betas[Factor::MktRf.index()] = 1.0;
                (INDEX_IDIO_VOL, 0.0, Some(Rule::IndexLeverage))
            }
            Archetype::MoneyMarket => (MONEY_MARKET_IDIO_VOL, 0.0, Some(Rule::MoneyMarket)),
            Archetype::Leveraged => {
                betas[Factor::MktRf.index()] = LEVERAGED_BETA;
                (cfg.idio_vol, 0.0, Some(Rule::IndexLeverage))
            }
        };
        let alpha = cfg
            .alpha_overrides
            .get(&i)
            .copied()
            .unwrap_or(default_alpha);

        let mut obs = Vec::with_capacity(last - first + 1);
        let mut aum = log_aum0.exp();
        for (t, &month) in months.iter().enumerate().take(n) {
            let eps = normal(&mut rng);
            let flow = normal(&mut rng);
            let systematic: f64 = (0..6)
                .map(|f| betas[f] * panel.column(Factor::ALL[f]).expect("all factors")[t])
                .sum();
            let ret = panel.rf()[t] + alpha + systematic + idio * eps;
            aum = (aum * (1.0 + ret) * (0.03 * flow).exp()).max(0.01);
            if t < first || t > last {
                continue;
            }
            let reported = match (arch, cfg.incubation_exit_month) {
                (Archetype::Incubating, Some(exit)) if t >= exit => 3.0 * aum / log_aum0.exp(),
                (Archetype::Incubating, _) => {
                    0.5 + (INCUBATING_AUM_CEILING - 0.5) * t as f64 / n as f64
                }
                _ => aum,
            };
            obs.push(Observation {
                month,
                net_return: ret,
                aum: Some(reported),
            });
        }
        funds.push(FundSeries::new(fund_id.clone(), obs)?);
        truth.push(TruthRecord {
            fund_id,
            archetype: arch,
            alpha,
            betas,
            idio_vol: idio,
            expected_rule,
        });
    }
    Ok(Universe {
        panel,
        funds,
        truth,
    })
}

/// Writes `fund_id,archetype,true_alpha,beta_MKT_RF,...,beta_CMA,idio_vol`.
pub fn write_truth_csv<W: Write>(truth: &[TruthRecord], sink: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec![
        "fund_id".to_string(),
        "archetype".into(),
        "true_alpha".into(),
    ];
    header.extend(
        Factor::ALL
            .iter()
            .map(|f| format!("beta_{}", f.column_name())),
    );
    header.push("idio_vol".into());
    w.write_record(&header)?;
    for t in truth {
        let mut rec = vec![
            t.fund_id.clone(),
            t.archetype.label().to_string(),
            t.alpha.to_string(),
        ];
        rec.extend(t.betas.iter().map(|b| b.to_string()));
        rec.push(t.idio_vol.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Least squares by explicit normal equations and Gauss-Jordan elimination
/// with partial pivoting. Shares no code with the production kernel.
pub fn oracle_fit(sample: &AlignedSample) -> Result<RegressionResult, RegressError> {
    let n = sample.y.len();
    let p = sample.n_cols;
    if p == 0 || sample.x.len() != n * p {
        return Err(RegressError::DimensionMismatch("oracle input".into()));
    }
    let x = |i: usize, j: usize| sample.x[i * p + j];
    let keep: Vec<usize> = (0..p).filter(|&j| (0..n).any(|i| x(i, j) != 0.0)).collect();
    let q = keep.len();
    if n < q + 1 {
        return Err(RegressError::InsufficientObservations {
            required: q + 1,
            actual: n,
        });
    }

    // Augmented [XᵀX | I | Xᵀy].
    let width = 2 * q + 1;
    let mut m = vec![vec![0.0; width]; q];
    for a in 0..q {
        for b in 0..q {
            let mut s = 0.0;
            for i in 0..n {
                s += x(i, keep[a]) * x(i, keep[b]);
            }
            m[a][b] = s;
        }
        m[a][q + a] = 1.0;
        let mut s = 0.0;
        for i in 0..n {
            s += x(i, keep[a]) * sample.y[i];
        }
        m[a][2 * q] = s;
    }
    let scale = (0..q).map(|a| m[a][a].abs()).fold(0.0, f64::max);
    for col in 0..q {
        let mut best = col;
        for r in col + 1..q {
            if m[r][col].abs() > m[best][col].abs() {
                best = r;
            }
        }
        if m[best][col].abs() <= 1e-12 * scale {
            return Err(RegressError::SingularDesign { rcond: 0.0 });
        }
        m.swap(col, best);
        let piv = m[col][col];
        for v in m[col].iter_mut() {
            *v /= piv;
        }
        let pivot = m[col].clone();
        for (r, row) in m.iter_mut().enumerate() {
            let f = row[col];
            if r != col && f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot) {
                    *v -= f * p;
                }
            }
        }
    }

    let mut coef = vec![0.0; p];
    for (a, &j) in keep.iter().enumerate() {
        coef[j] = m[a][2 * q];
    }
    let mut residuals = Vec::with_capacity(n);
    let mut ssr = 0.0;
    let mut yy = 0.0;
    for i in 0..n {
        let mut fitted = 0.0;
        for (j, c) in coef.iter().enumerate() {
            fitted += x(i, j) * c;
        }
        let e = sample.y[i] - fitted;
        residuals.push(e);
        ssr += e * e;
        yy += sample.y[i] * sample.y[i];
    }
    let dof = n - q;
    let sigma2 = ssr / dof as f64;
    let degenerate = ssr.sqrt() <= DEGENERATE_RTOL * yy.sqrt();
    let mut se = vec![f64::NAN; p];
    let mut tstats = vec![f64::NAN; p];
    for a in 0..q {
        let j = keep[a];
        se[j] = (sigma2 * m[a][q + a]).sqrt();
        if !degenerate && se[j] > 0.0 {
            tstats[j] = coef[j] / se[j];
        }
    }
    Ok(RegressionResult {
        alpha: coef[0],
        betas: coef[1..].to_vec(),
        se,
        tstats,
        sigma2,
        residuals,
        n_obs: n,
        dof,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_universe() {
        let cfg = SynthConfig {
            n_funds: 5,
            n_months: 36,
            ..SynthConfig::default()
        };
        let a = generate_universe(&cfg).unwrap();
        let b = generate_universe(&cfg).unwrap();
        assert_eq!(a.panel, b.panel);
        assert_eq!(a.funds, b.funds);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn mix_counts_use_largest_remainder() {
        let mix = ArchetypeMix {
            active: 0.4,
            index_tracker: 0.2,
            money_market: 0.2,
            leveraged: 0.1,
            incubating: 0.1,
        };
        let c = mix.counts(10);
        assert_eq!(c.map(|x| x.1), [4, 2, 2, 1, 1]);
        let c = mix.counts(7);
        assert_eq!(c.iter().map(|x| x.1).sum::<usize>(), 7);
    }

    #[test]
    fn rejects_bad_mix() {
        let cfg = SynthConfig {
            mix: ArchetypeMix {
                active: 0.5,
                ..ArchetypeMix::only(Archetype::Leveraged)
            },
            ..SynthConfig::default()
        };
        assert!(generate_universe(&cfg).is_err());
    }

    #[test]
    fn coverage_windows() {
        let cfg = SynthConfig {
            n_funds: 20,
            n_months: 60,
            min_coverage_months: Some(30),
            ..SynthConfig::default()
        };
        let u = generate_universe(&cfg).unwrap();
        for f in &u.funds {
            assert!(f.len() >= 30);
            let first = f.observations()[0].month.ordinal();
            let last = f.observations()[f.len() - 1].month.ordinal();
            assert_eq!((last - first + 1) as usize, f.len());
        }
    }

    #[test]
    fn oracle_hand_fixture() {
        let s = AlignedSample {
            fund_id: "T".into(),
            months: vec![],
            rows: vec![0, 1, 2],
            y: vec![1.0, 2.0, 2.0],
            x: vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0],
            n_cols: 2,
        };
        let r = oracle_fit(&s).unwrap();
        assert!((r.alpha - 7.0 / 6.0).abs() < 1e-12);
        assert!((r.betas[0] - 0.5).abs() < 1e-12);
        assert!((r.tstats[0] - 7.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!((r.tstats[1] - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn oracle_singular() {
        let s = AlignedSample {
            fund_id: "T".into(),
            months: vec![],
            rows: vec![0, 1, 2, 3],
            y: vec![1.0, 2.0, 2.0, 0.0],
            x: vec![1.0, 0.1, 0.1, 1.0, 0.2, 0.2, 1.0, -0.3, -0.3, 1.0, 0.5, 0.5],
            n_cols: 3,
        };
        assert!(matches!(
            oracle_fit(&s),
            Err(RegressError::SingularDesign { .. })
        ));
    }
}
