//! Factor panels, fund return series and month alignment.
//!
//! All returns are monthly decimals (0.01 = 1%). Percent only appears when
//! tables are formatted for display.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Errors raised while ingesting or aligning panel data.
#[derive(Debug, thiserror::Error)]
pub enum PanelError {
    #[error("invalid date {0:?}: expected YYYYMM")]
    BadDate(String),

    #[error("duplicate month {0}")]
    DuplicateMonth(MonthId),

    #[error("month gap at {0}")]
    MonthGap(MonthId),

    #[error("non-numeric value {value:?} in column {column} at line {line}")]
    NonNumeric {
        line: u64,
        column: String,
        value: String,
    },

    #[error("missing mandatory column {0}")]
    MissingColumn(String),

    #[error("duplicate observation for fund {fund_id} at {month}")]
    DuplicateObservation { fund_id: String, month: MonthId },

    #[error("fund {fund_id} has month {month} absent from the factor panel")]
    MonthNotInPanel { fund_id: String, month: MonthId },

    #[error("factor {0} unavailable")]
    FactorUnavailable(Factor),

    #[error("factor panel is empty")]
    EmptyPanel,

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonthId {
    year: i32,
    month: u8,
}

impl MonthId {
    pub fn new(year: i32, month: u8) -> Option<Self> {
        (1..=12).contains(&month).then_some(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u8 {
        self.month
    }

    /// Months elapsed since January of year 0.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        Self {
            year: ordinal.div_euclid(12) as i32,
            month: (ordinal.rem_euclid(12) + 1) as u8,
        }
    }

    pub fn succ(self) -> Self {
        Self::from_ordinal(self.ordinal() + 1)
    }

    pub fn offset(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }
}

impl fmt::Display for MonthId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}{:02}", self.year, self.month)
    }
}

impl FromStr for MonthId {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.len() != 6 || !t.bytes().all(|b| b.is_ascii_digit()) {
            return Err(PanelError::BadDate(s.to_string()));
        }
        let year: i32 = t[..4]
            .parse()
            .map_err(|_| PanelError::BadDate(s.to_string()))?;
        let month: u8 = t[4..]
            .parse()
            .map_err(|_| PanelError::BadDate(s.to_string()))?;
        MonthId::new(year, month).ok_or_else(|| PanelError::BadDate(s.to_string()))
    }
}

impl Serialize for MonthId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MonthId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = match RawMonth::deserialize(d)? {
            RawMonth::Text(s) => s,
            RawMonth::Number(n) => n.to_string(),
        };
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawMonth {
    Text(String),
    Number(i64),
}

/// Systematic factors a model may regress on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Factor {
    MktRf,
    Smb,
    Hml,
    Mom,
    Rmw,
    Cma,
}

impl Factor {
    pub const ALL: [Factor; 6] = [
        Factor::MktRf,
        Factor::Smb,
        Factor::Hml,
        Factor::Mom,
        Factor::Rmw,
        Factor::Cma,
    ];

    /// Column name used in factor CSV files.
    pub fn column_name(self) -> &'static str {
        match self {
            Factor::MktRf => "MKT_RF",
            Factor::Smb => "SMB",
            Factor::Hml => "HML",
            Factor::Mom => "MOM",
            Factor::Rmw => "RMW",
            Factor::Cma => "CMA",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column_name())
    }
}

/// Factor model: CAPM, three-factor, Carhart four-factor or five-factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Capm,
    Ff3,
    Carhart4,
    Ff5,
}

impl Model {
    /// Factor columns in design-matrix order (after the intercept).
    pub fn factors(self) -> &'static [Factor] {
        use Factor::*;
        match self {
            Model::Capm => &[MktRf],
            Model::Ff3 => &[MktRf, Smb, Hml],
            Model::Carhart4 => &[MktRf, Smb, Hml, Mom],
            Model::Ff5 => &[MktRf, Smb, Hml, Rmw, Cma],
        }
    }

    /// Number of design columns including the intercept.
    pub fn n_columns(self) -> usize {
        self.factors().len() + 1
    }

    pub fn label(self) -> &'static str {
        match self {
            Model::Capm => "capm",
            Model::Ff3 => "ff3",
            Model::Carhart4 => "carhart4",
            Model::Ff5 => "ff5",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "capm" => Ok(Model::Capm),
            "ff3" => Ok(Model::Ff3),
            "carhart4" => Ok(Model::Carhart4),
            "ff5" => Ok(Model::Ff5),
            other => Err(format!("unknown model {other:?}")),
        }
    }
}

/// Month-indexed factor returns plus the risk-free rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanel {
    months: Vec<MonthId>,
    columns: [Option<Vec<f64>>; 6],
    rf: Vec<f64>,
}

impl FactorPanel {
    /// Builds a panel from columns indexed by [`Factor::index`]. MKT_RF, SMB and
    /// HML are mandatory; months must be strictly increasing without gaps.
    pub fn new(
        months: Vec<MonthId>,
        columns: [Option<Vec<f64>>; 6],
        rf: Vec<f64>,
    ) -> Result<Self, PanelError> {
        if months.is_empty() {
            return Err(PanelError::EmptyPanel);
        }
        for w in months.windows(2) {
            if w[1] == w[0] {
                return Err(PanelError::DuplicateMonth(w[1]));
            }
            if w[1] != w[0].succ() {
                return Err(PanelError::MonthGap(w[0].succ()));
            }
        }
        for f in [Factor::MktRf, Factor::Smb, Factor::Hml] {
            if columns[f.index()].is_none() {
                return Err(PanelError::MissingColumn(f.column_name().to_string()));
            }
        }
        let n = months.len();
        let lengths_ok = rf.len() == n && columns.iter().flatten().all(|c| c.len() == n);
        assert!(
            lengths_ok,
            "factor column lengths must equal the month count"
        );
        Ok(Self {
            months,
            columns,
            rf,
        })
    }

    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }

    pub fn months(&self) -> &[MonthId] {
        &self.months
    }

    pub fn first_month(&self) -> MonthId {
        self.months[0]
    }

    pub fn last_month(&self) -> MonthId {
        self.months[self.months.len() - 1]
    }

    pub fn rf(&self) -> &[f64] {
        &self.rf
    }

    pub fn column(&self, factor: Factor) -> Option<&[f64]> {
        self.columns[factor.index()].as_deref()
    }

    pub fn has(&self, factor: Factor) -> bool {
        self.columns[factor.index()].is_some()
    }

    /// Position of `month` in the panel.
    pub fn index_of(&self, month: MonthId) -> Option<usize> {
        let off = month.ordinal() - self.first_month().ordinal();
        (off >= 0 && (off as usize) < self.len()).then_some(off as usize)
    }

    /// Checks every factor of `model` is present.
    pub fn supports(&self, model: Model) -> Result<(), PanelError> {
        match model.factors().iter().find(|f| !self.has(**f)) {
            Some(f) => Err(PanelError::FactorUnavailable(*f)),
            None => Ok(()),
        }
    }

    /// Row-major design matrix over every panel month: `[1, factors of model...]`.
    pub fn model_design(&self, model: Model) -> Result<Vec<f64>, PanelError> {
        self.supports(model)?;
        let cols: Vec<&[f64]> = model
            .factors()
            .iter()
            .map(|f| self.column(*f).expect("checked"))
            .collect();
        let p = model.n_columns();
        let mut x = Vec::with_capacity(self.len() * p);
        for t in 0..self.len() {
            x.push(1.0);
            x.extend(cols.iter().map(|c| c[t]));
        }
        Ok(x)
    }

    /// Restricts the panel to `[start, end]` (either bound optional).
    pub fn restrict(
        &self,
        start: Option<MonthId>,
        end: Option<MonthId>,
    ) -> Result<Self, PanelError> {
        let lo = start.map_or(0, |s| self.months.partition_point(|m| *m < s));
        let hi = end.map_or(self.len(), |e| self.months.partition_point(|m| *m <= e));
        if lo >= hi {
            return Err(PanelError::EmptyPanel);
        }
        let columns = self.columns.clone().map(|c| c.map(|v| v[lo..hi].to_vec()));
        Ok(Self {
            months: self.months[lo..hi].to_vec(),
            columns,
            rf: self.rf[lo..hi].to_vec(),
        })
    }

    /// Parses a factor CSV. Header names are matched case-insensitively;
    /// rows may appear in any order.
    pub fn from_csv<R: Read>(source: R) -> Result<Self, PanelError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(source);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));

        let date_col = find("date").ok_or_else(|| PanelError::MissingColumn("date".into()))?;
        let rf_col = find("RF").ok_or_else(|| PanelError::MissingColumn("RF".into()))?;
        let mut factor_cols = [None; 6];
        for f in Factor::ALL {
            factor_cols[f.index()] = find(f.column_name());
        }
        for f in [Factor::MktRf, Factor::Smb, Factor::Hml] {
            if factor_cols[f.index()].is_none() {
                return Err(PanelError::MissingColumn(f.column_name().into()));
            }
        }

        let mut rows: Vec<(MonthId, [f64; 6], f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let month: MonthId = rec.get(date_col).unwrap_or("").parse()?;
            let mut vals = [0.0; 6];
            for f in Factor::ALL {
                if let Some(c) = factor_cols[f.index()] {
                    vals[f.index()] =
                        parse_decimal(rec.get(c).unwrap_or(""), f.column_name(), line)?;
                }
            }
            let rf = parse_decimal(rec.get(rf_col).unwrap_or(""), "RF", line)?;
            rows.push((month, vals, rf));
        }
        rows.sort_by_key(|r| r.0);

        let months: Vec<MonthId> = rows.iter().map(|r| r.0).collect();
        let mut columns: [Option<Vec<f64>>; 6] = Default::default();
        for f in Factor::ALL {
            if factor_cols[f.index()].is_some() {
                columns[f.index()] = Some(rows.iter().map(|r| r.1[f.index()]).collect());
            }
        }
        let rf = rows.iter().map(|r| r.2).collect();
        Self::new(months, columns, rf)
    }

    /// Writes the panel in the same CSV layout [`FactorPanel::from_csv`] reads.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), PanelError> {
        let mut w = csv::Writer::from_writer(sink);
        let present: Vec<Factor> = Factor::ALL.into_iter().filter(|f| self.has(*f)).collect();
        let mut header = vec!["date".to_string()];
        header.extend(present.iter().map(|f| f.column_name().to_string()));
        header.push("RF".into());
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![self.months[t].to_string()];
            rec.extend(
                present
                    .iter()
                    .map(|f| self.column(*f).expect("present")[t].to_string()),
            );
            rec.push(self.rf[t].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One monthly fund observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub month: MonthId,
    pub net_return: f64,
    /// Assets under management in millions; `None` when not reported.
    pub aum: Option<f64>,
}

/// A fund's net-return history. Months are strictly increasing; gaps are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct FundSeries {
    fund_id: String,
    observations: Vec<Observation>,
}

impl FundSeries {
    /// Sorts observations by month and rejects duplicates.
    pub fn new(
        fund_id: impl Into<String>,
        mut observations: Vec<Observation>,
    ) -> Result<Self, PanelError> {
        let fund_id = fund_id.into();
        observations.sort_by_key(|o| o.month);
        if let Some(w) = observations.windows(2).find(|w| w[0].month == w[1].month) {
            return Err(PanelError::DuplicateObservation {
                fund_id,
                month: w[0].month,
            });
        }
        Ok(Self {
            fund_id,
            observations,
        })
    }

    pub fn fund_id(&self) -> &str {
        &self.fund_id
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// The last non-missing AuM of the series.
    pub fn last_aum(&self) -> Option<f64> {
        self.observations.iter().rev().find_map(|o| o.aum)
    }

    /// The suffix of the series starting at `month` (inclusive).
    pub fn from_month(&self, month: MonthId) -> Self {
        let start = self.observations.partition_point(|o| o.month < month);
        Self {
            fund_id: self.fund_id.clone(),
            observations: self.observations[start..].to_vec(),
        }
    }

    /// Observations within `[start, end]`.
    pub fn restrict(&self, start: Option<MonthId>, end: Option<MonthId>) -> Self {
        let observations = self
            .observations
            .iter()
            .filter(|o| start.is_none_or(|s| o.month >= s) && end.is_none_or(|e| o.month <= e))
            .copied()
            .collect();
        Self {
            fund_id: self.fund_id.clone(),
            observations,
        }
    }
}

/// Parses a long-format fund CSV (`fund_id,date,net_return,aum`) into one
/// series per fund, ordered by fund id.
pub fn ingest_funds<R: Read>(source: R) -> Result<Vec<FundSeries>, PanelError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| PanelError::MissingColumn(name.to_string()))
    };
    let (id_col, date_col, ret_col, aum_col) = (
        find("fund_id")?,
        find("date")?,
        find("net_return")?,
        find("aum")?,
    );

    let mut by_fund: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let fund_id = rec.get(id_col).unwrap_or("").to_string();
        let month: MonthId = rec.get(date_col).unwrap_or("").parse()?;
        let net_return = parse_decimal(rec.get(ret_col).unwrap_or(""), "net_return", line)?;
        let aum = match rec.get(aum_col).unwrap_or("") {
            "" => None,
            s => Some(parse_decimal(s, "aum", line)?),
        };
        by_fund.entry(fund_id).or_default().push(Observation {
            month,
            net_return,
            aum,
        });
    }
    by_fund
        .into_iter()
        .map(|(id, obs)| FundSeries::new(id, obs))
        .collect()
}

/// Writes funds in the long format read by [`ingest_funds`].
pub fn write_funds_csv<W: Write>(funds: &[FundSeries], sink: W) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["fund_id", "date", "net_return", "aum"])?;
    for f in funds {
        for o in &f.observations {
            let aum = o.aum.map(|a| a.to_string()).unwrap_or_default();
            w.write_record([
                f.fund_id.as_str(),
                &o.month.to_string(),
                &o.net_return.to_string(),
                &aum,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_decimal(text: &str, column: &str, line: u64) -> Result<f64, PanelError> {
    let bad = || PanelError::NonNumeric {
        line,
        column: column.to_string(),
        value: text.to_string(),
    };
    // f64::from_str also takes "inf"/"nan"; only plain decimals are accepted.
    if !text
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'))
    {
        return Err(bad());
    }
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(bad)
}

/// Which return series forms the regression response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    /// Net return minus the risk-free rate.
    Excess,
    /// Net return as reported.
    Raw,
}

/// A design column drawn from the panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regressor {
    Factor(Factor),
    RiskFree,
}

/// A fund's observations matched to panel months and laid out for regression.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSample {
    pub fund_id: String,
    pub months: Vec<MonthId>,
    /// Panel positions of `months`.
    pub rows: Vec<usize>,
    pub y: Vec<f64>,
    /// Row-major design matrix; the first column is all ones.
    pub x: Vec<f64>,
    pub n_cols: usize,
}

impl AlignedSample {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

/// Aligns `fund` to `panel` under `model`: excess returns on `[1, factors...]`.
pub fn align(
    fund: &FundSeries,
    panel: &FactorPanel,
    model: Model,
) -> Result<AlignedSample, PanelError> {
    panel.supports(model)?;
    let regressors: Vec<Regressor> = model
        .factors()
        .iter()
        .map(|f| Regressor::Factor(*f))
        .collect();
    align_with(fund, panel, Response::Excess, &regressors)
}

/// General alignment used by [`align`] and the fund screens.
pub fn align_with(
    fund: &FundSeries,
    panel: &FactorPanel,
    response: Response,
    regressors: &[Regressor],
) -> Result<AlignedSample, PanelError> {
    let cols: Vec<&[f64]> = regressors
        .iter()
        .map(|r| match r {
            Regressor::Factor(f) => panel.column(*f).ok_or(PanelError::FactorUnavailable(*f)),
            Regressor::RiskFree => Ok(panel.rf()),
        })
        .collect::<Result<_, _>>()?;
    let n_cols = regressors.len() + 1;
    let n = fund.len();
    let mut sample = AlignedSample {
        fund_id: fund.fund_id.clone(),
        months: Vec::with_capacity(n),
        rows: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        x: Vec::with_capacity(n * n_cols),
        n_cols,
    };
    for o in &fund.observations {
        let t = panel
            .index_of(o.month)
            .ok_or_else(|| PanelError::MonthNotInPanel {
                fund_id: fund.fund_id.clone(),
                month: o.month,
            })?;
        sample.months.push(o.month);
        sample.rows.push(t);
        sample.y.push(match response {
            Response::Excess => o.net_return - panel.rf[t],
            Response::Raw => o.net_return,
        });
        sample.x.push(1.0);
        sample.x.extend(cols.iter().map(|c| c[t]));
    }
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(y: i32, mo: u8) -> MonthId {
        MonthId::new(y, mo).unwrap()
    }

    fn three_month_panel() -> FactorPanel {
        let csv = "date,MKT_RF,SMB,HML,RF\n\
                   199001,0.01,0.02,0.03,0.004\n\
                   199002,0.02,0.01,0.00,0.003\n\
                   199003,-0.01,0.00,0.01,0.005\n";
        FactorPanel::from_csv(csv.as_bytes()).unwrap()
    }

    #[test]
    fn month_arithmetic() {
        assert_eq!(m(1990, 12).succ(), m(1991, 1));
        assert_eq!(MonthId::from_ordinal(m(2001, 3).ordinal()), m(2001, 3));
        assert_eq!(m(1990, 1).offset(-1), m(1989, 12));
        assert!(m(1990, 12) < m(1991, 1));
        assert_eq!("199002".parse::<MonthId>().unwrap(), m(1990, 2));
        assert!("199013".parse::<MonthId>().is_err());
        assert!("1990-01".parse::<MonthId>().is_err());
        assert!(MonthId::new(2000, 0).is_none());
    }

    #[test]
    fn minimal_panel() {
        let p = FactorPanel::from_csv(
            "date,MKT_RF,SMB,HML,RF\n199001,0.01,-0.002,0.003,0.004\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.column(Factor::MktRf).unwrap(), &[0.01]);
        assert_eq!(p.column(Factor::Smb).unwrap(), &[-0.002]);
        assert_eq!(p.rf(), &[0.004]);
        assert!(!p.has(Factor::Mom) && !p.has(Factor::Rmw) && !p.has(Factor::Cma));
    }

    #[test]
    fn month_gap_is_rejected() {
        let csv = "date,MKT_RF,SMB,HML,RF\n199001,0,0,0,0\n199003,0,0,0,0\n";
        let err = FactorPanel::from_csv(csv.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "month gap at 199002");
    }

    #[test]
    fn duplicate_month_is_rejected() {
        let csv = "date,MKT_RF,SMB,HML,RF\n199001,0,0,0,0\n199001,0,0,0,0\n";
        assert!(matches!(
            FactorPanel::from_csv(csv.as_bytes()),
            Err(PanelError::DuplicateMonth(_))
        ));
    }

    #[test]
    fn shuffled_rows_match_sorted() {
        let sorted = "date,MKT_RF,SMB,HML,RF\n199001,0.1,0.2,0.3,0.01\n199002,0.4,0.5,0.6,0.02\n";
        let shuffled = "date,MKT_RF,SMB,HML,RF\n199002,0.4,0.5,0.6,0.02\n199001,0.1,0.2,0.3,0.01\n";
        assert_eq!(
            FactorPanel::from_csv(sorted.as_bytes()).unwrap(),
            FactorPanel::from_csv(shuffled.as_bytes()).unwrap()
        );
    }

    #[test]
    fn header_matching_is_case_insensitive_and_order_free() {
        let csv = "rf,Date,hml,cma,smb,mkt_rf\n0.004,199001,0.3,0.7,0.2,0.1\n";
        let p = FactorPanel::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(p.column(Factor::Hml).unwrap(), &[0.3]);
        assert_eq!(p.column(Factor::Cma).unwrap(), &[0.7]);
        assert_eq!(p.rf(), &[0.004]);
    }

    #[test]
    fn bad_cells_and_missing_columns() {
        let csv = "date,MKT_RF,SMB,HML,RF\n199001,abc,0,0,0\n";
        assert!(matches!(
            FactorPanel::from_csv(csv.as_bytes()),
            Err(PanelError::NonNumeric { .. })
        ));
        let csv = "date,MKT_RF,SMB,HML,RF\n199001,nan,0,0,0\n";
        assert!(matches!(
            FactorPanel::from_csv(csv.as_bytes()),
            Err(PanelError::NonNumeric { .. })
        ));
        let csv = "date,MKT_RF,SMB,RF\n199001,0,0,0\n";
        assert_eq!(
            FactorPanel::from_csv(csv.as_bytes())
                .unwrap_err()
                .to_string(),
            "missing mandatory column HML"
        );
        let csv = "date,MKT_RF,SMB,HML,RF\n199001,+1.5e-3,-2E-2,.5,0\n";
        let p = FactorPanel::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(p.column(Factor::MktRf).unwrap(), &[0.0015]);
        assert_eq!(p.column(Factor::Smb).unwrap(), &[-0.02]);
    }

    #[test]
    fn funds_are_grouped_and_sorted() {
        let csv = "fund_id,date,net_return,aum\nA,199002,0.01,3\nB,199001,0.02,\nA,199001,0.03,4\n";
        let funds = ingest_funds(csv.as_bytes()).unwrap();
        assert_eq!(funds.len(), 2);
        assert_eq!(funds[0].fund_id(), "A");
        assert_eq!(funds[0].len(), 2);
        assert_eq!(funds[0].observations()[0].month, m(1990, 1));
        assert_eq!(funds[1].len(), 1);
        assert_eq!(funds[1].observations()[0].aum, None);
        assert_eq!(funds[0].last_aum(), Some(3.0));
    }

    #[test]
    fn duplicate_fund_month_names_both() {
        let csv = "fund_id,date,net_return,aum\nA,199001,0.01,3\nA,199001,0.02,3\n";
        let err = ingest_funds(csv.as_bytes()).unwrap_err();
        assert_eq!(
            err.to_string(),
            "duplicate observation for fund A at 199001"
        );
        let csv = "fund_id,date,net_return,aum\nA,199001,x,3\n";
        assert!(matches!(
            ingest_funds(csv.as_bytes()),
            Err(PanelError::NonNumeric { .. })
        ));
    }

    #[test]
    fn align_builds_excess_returns() {
        let panel = three_month_panel();
        let fund = FundSeries::new(
            "A",
            vec![Observation {
                month: m(1990, 1),
                net_return: 0.02,
                aum: None,
            }],
        )
        .unwrap();
        let s = align(&fund, &panel, Model::Ff3).unwrap();
        assert!((s.y[0] - 0.016).abs() < 1e-15);
        assert_eq!(s.row(0), &[1.0, 0.01, 0.02, 0.03]);
        let capm = align(&fund, &panel, Model::Capm).unwrap();
        assert_eq!(capm.row(0), &[1.0, 0.01]);
    }

    #[test]
    fn align_requires_model_factors() {
        let panel = three_month_panel();
        let fund = FundSeries::new("A", vec![]).unwrap();
        let err = align(&fund, &panel, Model::Ff5).unwrap_err();
        assert_eq!(err.to_string(), "factor RMW unavailable");
        let err = align(&fund, &panel, Model::Carhart4).unwrap_err();
        assert_eq!(err.to_string(), "factor MOM unavailable");
    }

    #[test]
    fn align_tolerates_fund_gaps() {
        let panel = three_month_panel();
        let obs = |mo| Observation {
            month: m(1990, mo),
            net_return: 0.01,
            aum: Some(5.0),
        };
        let fund = FundSeries::new("A", vec![obs(1), obs(3)]).unwrap();
        let s = align(&fund, &panel, Model::Ff3).unwrap();
        assert_eq!(s.months, vec![m(1990, 1), m(1990, 3)]);
        assert_eq!(s.rows, vec![0, 2]);
        assert_eq!(s.x.len(), 2 * 4);
    }

    #[test]
    fn align_rejects_months_outside_panel() {
        let panel = three_month_panel();
        let fund = FundSeries::new(
            "Z",
            vec![Observation {
                month: m(1991, 1),
                net_return: 0.0,
                aum: None,
            }],
        )
        .unwrap();
        assert!(matches!(
            align(&fund, &panel, Model::Ff3),
            Err(PanelError::MonthNotInPanel { .. })
        ));
    }

    #[test]
    fn restrict_slices_panel_and_funds() {
        let panel = three_month_panel();
        let r = panel.restrict(Some(m(1990, 2)), None).unwrap();
        assert_eq!(r.months(), &[m(1990, 2), m(1990, 3)]);
        assert_eq!(r.rf(), &[0.003, 0.005]);
        assert!(panel.restrict(Some(m(1991, 1)), None).is_err());
    }
}
