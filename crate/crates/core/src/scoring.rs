//! Table-driven nine-factor pretrial risk scorer.
//!
//! Criminal history arrives as a normalized event stream, is reduced to the
//! nine factors of [`DefendantRecord`], and is scored against a [`ScoreTable`]
//! loaded from JSON. No point weights are built in; every factor's
//! contribution comes from the table.
//!
//! Table document layout:
//!
//! ```json
//! {
//!   "name": "optional label",
//!   "ranges":    { "fta": [1, 6], "nca": [1, 6], "nvca": [0, 1] },
//!   "points":    { "fta": { "<factor>": [ { "at_least": 1, "points": 2 } ] }, "nca": {}, "nvca": {} },
//!   "cutpoints": { "fta": [1, 2, 4, 6, 7], "nca": [1, 3, 5, 7, 9], "nvca": [4] }
//! }
//! ```
//!
//! A factor contributes the `points` of the highest step whose `at_least` does
//! not exceed the factor value (booleans count as 0/1, age in years), or 0
//! below the first step. An output score is `range.low + #{c in cutpoints :
//! raw >= c}`, so each cut-point list holds exactly `high - low` ascending
//! thresholds.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Arrest,
    MisdemeanorConviction,
    FelonyConviction,
    ViolentConviction,
    Fta,
    IncarcerationSentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Misdemeanor,
    Felony,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryEvent {
    pub kind: EventKind,
    pub date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<Severity>,
}

/// Parses a JSON Lines event stream. Blank lines are skipped; errors carry
/// 1-based line numbers.
pub fn parse_events(text: &str) -> Result<Vec<HistoryEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Facts about the current charge that are not in the history stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CurrentCharge {
    pub age: u32,
    pub violent_offense: bool,
    pub pending_charge: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationOptions {
    /// Severity class of a violent conviction that carries no `severity`.
    pub violent_default_severity: Severity,
}

impl Default for DerivationOptions {
    fn default() -> Self {
        Self {
            violent_default_severity: Severity::Felony,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefendantRecord {
    pub age_at_arrest: u32,
    pub current_violent_offense: bool,
    pub pending_charge_at_offense: bool,
    pub prior_misdemeanor: bool,
    pub prior_felony: bool,
    pub prior_violent_conviction_count: u32,
    pub fta_within_2yr_count: u32,
    pub fta_older_2yr_count: u32,
    pub prior_incarceration: bool,
}

/// Oldest plausible age at arrest.
pub const MAX_AGE: u32 = 120;

impl DefendantRecord {
    pub fn validate(&self) -> Result<()> {
        if self.age_at_arrest > MAX_AGE {
            return Err(Error::InvalidRecord(format!(
                "age_at_arrest {} exceeds {MAX_AGE}",
                self.age_at_arrest
            )));
        }
        Ok(())
    }

    pub fn factor(&self, f: Factor) -> u32 {
        match f {
            Factor::AgeAtArrest => self.age_at_arrest,
            Factor::CurrentViolentOffense => self.current_violent_offense as u32,
            Factor::PendingChargeAtOffense => self.pending_charge_at_offense as u32,
            Factor::PriorMisdemeanor => self.prior_misdemeanor as u32,
            Factor::PriorFelony => self.prior_felony as u32,
            Factor::PriorViolentConvictionCount => self.prior_violent_conviction_count,
            Factor::FtaWithin2yrCount => self.fta_within_2yr_count,
            Factor::FtaOlder2yrCount => self.fta_older_2yr_count,
            Factor::PriorIncarceration => self.prior_incarceration as u32,
        }
    }
}

/// Reduces a history to the nine factors as of `as_of`.
pub fn derive_factors(
    events: &[HistoryEvent],
    current: CurrentCharge,
    as_of: NaiveDate,
) -> Result<DefendantRecord> {
    derive_factors_with(events, current, as_of, DerivationOptions::default())
}

/// Events on `as_of` itself are accepted but not counted. An FTA dated exactly
/// two years before `as_of` counts as recent.
pub fn derive_factors_with(
    events: &[HistoryEvent],
    current: CurrentCharge,
    as_of: NaiveDate,
    opts: DerivationOptions,
) -> Result<DefendantRecord> {
    let recent_cutoff = as_of
        .checked_sub_months(Months::new(24))
        .ok_or_else(|| Error::param("as_of", format!("{as_of} has no date two years earlier")))?;
    let mut rec = DefendantRecord {
        age_at_arrest: current.age,
        current_violent_offense: current.violent_offense,
        pending_charge_at_offense: current.pending_charge,
        ..Default::default()
    };
    for ev in events {
        if ev.date > as_of {
            return Err(Error::EventAfterAsOf {
                date: ev.date.to_string(),
                as_of: as_of.to_string(),
            });
        }
        if ev.date == as_of {
            continue;
        }
        match ev.kind {
            EventKind::Arrest => {}
            EventKind::MisdemeanorConviction => rec.prior_misdemeanor = true,
            EventKind::FelonyConviction => rec.prior_felony = true,
            EventKind::ViolentConviction => {
                rec.prior_violent_conviction_count += 1;
                match ev.severity.unwrap_or(opts.violent_default_severity) {
                    Severity::Felony => rec.prior_felony = true,
                    Severity::Misdemeanor => rec.prior_misdemeanor = true,
                }
            }
            EventKind::Fta if ev.date >= recent_cutoff => rec.fta_within_2yr_count += 1,
            EventKind::Fta => rec.fta_older_2yr_count += 1,
            EventKind::IncarcerationSentence => rec.prior_incarceration = true,
        }
    }
    rec.validate()?;
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    AgeAtArrest,
    CurrentViolentOffense,
    PendingChargeAtOffense,
    PriorMisdemeanor,
    PriorFelony,
    PriorViolentConvictionCount,
    #[serde(rename = "fta_within_2yr_count")]
    FtaWithin2yrCount,
    #[serde(rename = "fta_older_2yr_count")]
    FtaOlder2yrCount,
    PriorIncarceration,
}

impl Factor {
    pub const ALL: [Factor; 9] = [
        Factor::AgeAtArrest,
        Factor::CurrentViolentOffense,
        Factor::PendingChargeAtOffense,
        Factor::PriorMisdemeanor,
        Factor::PriorFelony,
        Factor::PriorViolentConvictionCount,
        Factor::FtaWithin2yrCount,
        Factor::FtaOlder2yrCount,
        Factor::PriorIncarceration,
    ];

    /// Every factor except age is a count or an indicator and must not lower
    /// a score as it grows.
    pub fn must_be_monotone(self) -> bool {
        self != Factor::AgeAtArrest
    }

    pub fn name(self) -> &'static str {
        match self {
            Factor::AgeAtArrest => "age_at_arrest",
            Factor::CurrentViolentOffense => "current_violent_offense",
            Factor::PendingChargeAtOffense => "pending_charge_at_offense",
            Factor::PriorMisdemeanor => "prior_misdemeanor",
            Factor::PriorFelony => "prior_felony",
            Factor::PriorViolentConvictionCount => "prior_violent_conviction_count",
            Factor::FtaWithin2yrCount => "fta_within_2yr_count",
            Factor::FtaOlder2yrCount => "fta_older_2yr_count",
            Factor::PriorIncarceration => "prior_incarceration",
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Fta,
    Nca,
    Nvca,
}

impl Output {
    pub const ALL: [Output; 3] = [Output::Fta, Output::Nca, Output::Nvca];

    /// Score ranges every table must declare.
    pub fn required_range(self) -> (i64, i64) {
        match self {
            Output::Fta | Output::Nca => (1, 6),
            Output::Nvca => (0, 1),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Output::Fta => "fta",
            Output::Nca => "nca",
            Output::Nvca => "nvca",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointStep {
    pub at_least: u32,
    pub points: i64,
}

/// Raw, unvalidated table document.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranges: Option<BTreeMap<Output, [i64; 2]>>,
    pub points: BTreeMap<Output, BTreeMap<Factor, Vec<PointStep>>>,
    pub cutpoints: BTreeMap<Output, Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
struct OutputRule {
    low: i64,
    high: i64,
    factors: Vec<(Factor, Vec<PointStep>)>,
    cutpoints: Vec<i64>,
}

impl OutputRule {
    fn raw_points(&self, rec: &DefendantRecord) -> i64 {
        self.factors
            .iter()
            .map(|(f, steps)| {
                let v = rec.factor(*f);
                steps
                    .iter()
                    .take_while(|s| s.at_least <= v)
                    .last()
                    .map_or(0, |s| s.points)
            })
            .sum()
    }

    fn scale(&self, raw: i64) -> i64 {
        self.low + self.cutpoints.iter().filter(|&&c| raw >= c).count() as i64
    }
}

/// A validated score table. Only [`load_table`] and
/// [`ScoreTable::from_document`] construct one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScoreTable {
    name: Option<String>,
    fta: OutputRule,
    nca: OutputRule,
    nvca: OutputRule,
}

impl ScoreTable {
    pub fn from_document(doc: TableDocument) -> Result<Self> {
        let mut violations = Vec::new();
        let mut rules = Vec::new();
        for out in Output::ALL {
            let required = out.required_range();
            let (low, high) = match doc.ranges.as_ref().and_then(|r| r.get(&out)) {
                Some(&[lo, hi]) if (lo, hi) != required => {
                    violations.push(format!(
                        "ranges.{}: declared [{lo}, {hi}], required [{}, {}]",
                        out.name(),
                        required.0,
                        required.1
                    ));
                    required
                }
                _ => required,
            };

            let mut factors = Vec::new();
            if let Some(map) = doc.points.get(&out) {
                for (&f, steps) in map {
                    let path = format!("points.{}.{}", out.name(), f);
                    if steps.is_empty() {
                        violations.push(format!("{path}: no steps"));
                    }
                    if steps.windows(2).any(|w| w[0].at_least >= w[1].at_least) {
                        violations.push(format!("{path}: at_least values must strictly increase"));
                    }
                    if f.must_be_monotone() {
                        let mut prev = 0;
                        for s in steps {
                            if s.points < prev {
                                violations.push(format!(
                                    "{path}: points decrease to {} at at_least = {} (previous {prev})",
                                    s.points, s.at_least
                                ));
                            }
                            prev = s.points;
                        }
                    }
                    factors.push((f, steps.clone()));
                }
            }

            let cuts = doc.cutpoints.get(&out).cloned().unwrap_or_default();
            let want = (high - low) as usize;
            if cuts.len() != want {
                violations.push(format!(
                    "cutpoints.{}: expected {want} thresholds for range [{low}, {high}], found {}",
                    out.name(),
                    cuts.len()
                ));
            }
            if cuts.windows(2).any(|w| w[0] >= w[1]) {
                violations.push(format!("cutpoints.{}: thresholds must strictly increase", out.name()));
            }
            rules.push(OutputRule {
                low,
                high,
                factors,
                cutpoints: cuts,
            });
        }
        if !violations.is_empty() {
            return Err(Error::InvalidTable(violations));
        }
        let nvca = rules.pop().expect("three outputs");
        let nca = rules.pop().expect("three outputs");
        let fta = rules.pop().expect("three outputs");
        Ok(Self {
            name: doc.name,
            fta,
            nca,
            nvca,
        })
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn range(&self, out: Output) -> (i64, i64) {
        let r = self.rule(out);
        (r.low, r.high)
    }

    fn rule(&self, out: Output) -> &OutputRule {
        match out {
            Output::Fta => &self.fta,
            Output::Nca => &self.nca,
            Output::Nvca => &self.nvca,
        }
    }

    /// Unscaled point total for one output.
    pub fn raw_points(&self, out: Output, rec: &DefendantRecord) -> i64 {
        self.rule(out).raw_points(rec)
    }
}

/// Parses and validates a JSON table document.
pub fn load_table(document: &str) -> Result<ScoreTable> {
    let doc: TableDocument = serde_json::from_str(document).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    ScoreTable::from_document(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RiskScores {
    pub fta: i64,
    pub nca: i64,
    pub nvca: i64,
}

pub fn score(record: &DefendantRecord, table: &ScoreTable) -> Result<RiskScores> {
    record.validate()?;
    let s = |out| {
        let r = table.rule(out);
        r.scale(r.raw_points(record))
    };
    Ok(RiskScores {
        fta: s(Output::Fta),
        nca: s(Output::Nca),
        nvca: s(Output::Nvca),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE_TABLE: &str = include_str!("../fixtures/synthetic_table.json");
    const FIXTURE_EVENTS: &str = include_str!("../fixtures/events.jsonl");

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn ev(kind: EventKind, d: &str) -> HistoryEvent {
        HistoryEvent {
            kind,
            date: date(d),
            severity: None,
        }
    }

    #[test]
    fn no_history_yields_clean_record() {
        let cur = CurrentCharge {
            age: 33,
            ..Default::default()
        };
        let rec = derive_factors(&[], cur, date("2024-01-01")).unwrap();
        assert_eq!(
            rec,
            DefendantRecord {
                age_at_arrest: 33,
                ..Default::default()
            }
        );
    }

    #[test]
    fn fta_on_two_year_boundary_is_recent() {
        let cur = CurrentCharge::default();
        let rec = derive_factors(&[ev(EventKind::Fta, "2022-03-15")], cur, date("2024-03-15")).unwrap();
        assert_eq!((rec.fta_within_2yr_count, rec.fta_older_2yr_count), (1, 0));
        let rec = derive_factors(&[ev(EventKind::Fta, "2022-03-14")], cur, date("2024-03-15")).unwrap();
        assert_eq!((rec.fta_within_2yr_count, rec.fta_older_2yr_count), (0, 1));
    }

    #[test]
    fn violent_convictions_count_and_classify() {
        let events = vec![
            ev(EventKind::ViolentConviction, "2015-01-01"),
            ev(EventKind::ViolentConviction, "2016-01-01"),
            ev(EventKind::MisdemeanorConviction, "2017-01-01"),
            ev(EventKind::IncarcerationSentence, "2017-06-01"),
        ];
        let rec = derive_factors(&events, CurrentCharge::default(), date("2020-01-01")).unwrap();
        assert_eq!(rec.prior_violent_conviction_count, 2);
        assert!(rec.prior_misdemeanor);
        assert!(rec.prior_felony);
        assert!(rec.prior_incarceration);

        let opts = DerivationOptions {
            violent_default_severity: Severity::Misdemeanor,
        };
        let rec = derive_factors_with(&events[..2], CurrentCharge::default(), date("2020-01-01"), opts).unwrap();
        assert!(!rec.prior_felony);
        assert!(rec.prior_misdemeanor);
    }

    #[test]
    fn events_after_as_of_rejected_and_same_day_ignored() {
        let cur = CurrentCharge::default();
        let err = derive_factors(&[ev(EventKind::Arrest, "2024-01-02")], cur, date("2024-01-01"));
        assert!(matches!(err, Err(Error::EventAfterAsOf { .. })));
        let rec = derive_factors(&[ev(EventKind::FelonyConviction, "2024-01-01")], cur, date("2024-01-01")).unwrap();
        assert!(!rec.prior_felony);
    }

    #[test]
    fn parse_events_reports_line_numbers() {
        let text = "{\"kind\":\"ARREST\",\"date\":\"2020-01-01\"}\n\n{\"kind\":\"BOGUS\",\"date\":\"2020-01-01\"}\n";
        match parse_events(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let evs = parse_events(FIXTURE_EVENTS).unwrap();
        assert_eq!(evs.len(), 7);
    }

    #[test]
    fn fixture_table_minimum_scores() {
        let table = load_table(FIXTURE_TABLE).unwrap();
        // The fixture's age rule awards youth points, so its minimum is a clean
        // record of an older defendant.
        let older = DefendantRecord {
            age_at_arrest: 40,
            ..Default::default()
        };
        assert_eq!(score(&older, &table).unwrap(), RiskScores { fta: 1, nca: 1, nvca: 0 });

        // Without the age rule every factor is monotone and the all-zero record is minimal.
        let mut doc: TableDocument = serde_json::from_str(FIXTURE_TABLE).unwrap();
        for rules in doc.points.values_mut() {
            rules.remove(&Factor::AgeAtArrest);
        }
        let monotone = ScoreTable::from_document(doc).unwrap();
        assert_eq!(
            score(&DefendantRecord::default(), &monotone).unwrap(),
            RiskScores { fta: 1, nca: 1, nvca: 0 }
        );
    }

    #[test]
    fn fixture_golden_scores() {
        // Hand evaluation of fixtures/events.jsonl against fixtures/synthetic_table.json:
        // FTA raw 5 -> 4, NCA raw 8 -> 5, NVCA raw 4 -> 1.
        let table = load_table(FIXTURE_TABLE).unwrap();
        let events = parse_events(FIXTURE_EVENTS).unwrap();
        let cur = CurrentCharge {
            age: 22,
            violent_offense: true,
            pending_charge: false,
        };
        let rec = derive_factors(&events, cur, date("2024-06-01")).unwrap();
        assert_eq!(
            rec,
            DefendantRecord {
                age_at_arrest: 22,
                current_violent_offense: true,
                pending_charge_at_offense: false,
                prior_misdemeanor: true,
                prior_felony: true,
                prior_violent_conviction_count: 2,
                fta_within_2yr_count: 1,
                fta_older_2yr_count: 1,
                prior_incarceration: true,
            }
        );
        assert_eq!(table.raw_points(Output::Fta, &rec), 5);
        assert_eq!(table.raw_points(Output::Nca, &rec), 8);
        assert_eq!(table.raw_points(Output::Nvca, &rec), 4);
        assert_eq!(score(&rec, &table).unwrap(), RiskScores { fta: 4, nca: 5, nvca: 1 });
    }

    #[test]
    fn decreasing_points_are_named() {
        let doc = FIXTURE_TABLE.replace(
            r#""fta_within_2yr_count": [{ "at_least": 1, "points": 2 }, { "at_least": 2, "points": 4 }]"#,
            r#""fta_within_2yr_count": [{ "at_least": 1, "points": 2 }, { "at_least": 2, "points": 1 }]"#,
        );
        assert_ne!(doc, FIXTURE_TABLE);
        match load_table(&doc) {
            Err(Error::InvalidTable(v)) => {
                assert_eq!(v.len(), 1);
                assert!(v[0].contains("points.fta.fta_within_2yr_count"), "{v:?}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_range_rejected() {
        let doc = FIXTURE_TABLE.replace(r#""nca": [1, 6]"#, r#""nca": [0, 9]"#);
        assert_ne!(doc, FIXTURE_TABLE);
        match load_table(&doc) {
            Err(Error::InvalidTable(v)) => assert!(v.iter().any(|m| m.starts_with("ranges.nca")), "{v:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(load_table("{"), Err(Error::Parse { .. })));
        let unknown_factor = r#"{"points": {"fta": {"shoe_size": [{"at_least": 1, "points": 1}]}}, "cutpoints": {}}"#;
        assert!(matches!(load_table(unknown_factor), Err(Error::Parse { .. })));
        let missing_cuts = r#"{"points": {}, "cutpoints": {"fta": [1, 2]}}"#;
        match load_table(missing_cuts) {
            Err(Error::InvalidTable(v)) => assert_eq!(v.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn implausible_age_rejected() {
        let table = load_table(FIXTURE_TABLE).unwrap();
        let rec = DefendantRecord {
            age_at_arrest: 500,
            ..Default::default()
        };
        assert!(matches!(score(&rec, &table), Err(Error::InvalidRecord(_))));
    }
}
