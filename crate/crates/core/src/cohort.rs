//! Visit and outcome ingestion plus the cohort exclusion rules.
//!
//! The visits file is comma separated with header
//! `patient_id,day,total[,q1,...,q12]`; the outcomes file has header
//! `patient_id,survival_days,event,first_contact_day` where the last column
//! may be empty or missing.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PatientId = String;

pub const MAX_TOTAL: i32 = 48;
pub const ITEM_COUNT: usize = 12;
pub const MAX_ITEM: u8 = 4;

/// One scored visit, days relative to the patient's first scored visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub day: i64,
    pub total: i32,
    pub subscores: Option<[u8; ITEM_COUNT]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientOutcome {
    pub survival_days: i64,
    /// `true` when death was observed, `false` when censored.
    pub event_observed: bool,
    /// Day of first clinical contact relative to the first scored visit (<= 0).
    pub first_contact_day: Option<i64>,
}

/// A patient's ordered visit sequence and survival outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub patient_id: PatientId,
    pub visits: Vec<Visit>,
    pub outcome: PatientOutcome,
}

impl Sequence {
    pub fn days(&self) -> impl Iterator<Item = i64> + '_ {
        self.visits.iter().map(|v| v.day)
    }

    pub fn scores(&self) -> impl Iterator<Item = i32> + '_ {
        self.visits.iter().map(|v| v.total)
    }

    /// Day of the last visit (`t_n`).
    pub fn duration(&self) -> i64 {
        self.visits.last().map_or(0, |v| v.day)
    }

    pub fn has_subscores(&self) -> bool {
        self.visits.iter().all(|v| v.subscores.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionRule {
    /// Fewer than five visits.
    FewVisits,
    /// Score rises by more than two points between consecutive visits.
    ScoreIncrease,
    /// First scored visit more than 30 days after first contact.
    LateFirstScore,
}

impl ExclusionRule {
    pub const ALL: [ExclusionRule; 3] = [
        ExclusionRule::FewVisits,
        ExclusionRule::ScoreIncrease,
        ExclusionRule::LateFirstScore,
    ];

    pub fn violated_by(self, seq: &Sequence) -> bool {
        match self {
            ExclusionRule::FewVisits => seq.visits.len() < MIN_VISITS,
            ExclusionRule::ScoreIncrease => seq
                .visits
                .windows(2)
                .any(|w| w[1].total - w[0].total > MAX_RISE),
            ExclusionRule::LateFirstScore => seq
                .outcome
                .first_contact_day
                .is_some_and(|contact| -contact > MAX_CONTACT_GAP_DAYS),
        }
    }
}

pub const MIN_VISITS: usize = 5;
pub const MAX_RISE: i32 = 2;
pub const MAX_CONTACT_GAP_DAYS: i64 = 30;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub input: usize,
    pub retained: usize,
    pub counts: BTreeMap<ExclusionRule, usize>,
    /// Rule that excluded each dropped patient (first violated rule, in rule order).
    pub excluded: BTreeMap<PatientId, ExclusionRule>,
}

impl ExclusionReport {
    pub fn total_excluded(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Drop sequences violating the exclusion rules, applied in rule order.
pub fn apply_exclusions(cohort: Vec<Sequence>) -> (Vec<Sequence>, ExclusionReport) {
    let mut report = ExclusionReport {
        input: cohort.len(),
        ..Default::default()
    };
    for rule in ExclusionRule::ALL {
        report.counts.insert(rule, 0);
    }
    let mut kept = Vec::with_capacity(cohort.len());
    for seq in cohort {
        match ExclusionRule::ALL.into_iter().find(|r| r.violated_by(&seq)) {
            Some(rule) => {
                *report.counts.entry(rule).or_default() += 1;
                report.excluded.insert(seq.patient_id.clone(), rule);
            }
            None => kept.push(seq),
        }
    }
    report.retained = kept.len();
    (kept, report)
}

fn row_err(file: &str, line: u64, field: &str, reason: impl Into<String>) -> Error {
    Error::Row {
        file: file.to_string(),
        line,
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn parse_int(file: &str, line: u64, field: &str, raw: &str) -> Result<i64> {
    raw.trim()
        .parse::<i64>()
        .map_err(|_| row_err(file, line, field, format!("expected an integer, got {raw:?}")))
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Parse both files and assemble one [`Sequence`] per patient, sorted by id.
pub fn parse_cohort(visits_path: &Path, outcomes_path: &Path) -> Result<Vec<Sequence>> {
    let visits_name = visits_path.display().to_string();
    let outcomes_name = outcomes_path.display().to_string();
    let visits = read_visits(open(visits_path)?, &visits_name)?;
    let outcomes = read_outcomes(open(outcomes_path)?, &outcomes_name)?;
    assemble(visits, outcomes)
}

type VisitTable = BTreeMap<PatientId, Vec<Visit>>;

pub fn read_visits<R: Read>(reader: R, file: &str) -> Result<VisitTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expect = ["patient_id", "day", "total"];
    for (i, name) in expect.iter().enumerate() {
        if headers.get(i) != Some(name) {
            return Err(row_err(file, 1, name, "missing or misplaced header column"));
        }
    }
    let with_items = match headers.len() {
        3 => false,
        n if n == 3 + ITEM_COUNT => {
            for i in 0..ITEM_COUNT {
                let want = format!("q{}", i + 1);
                if headers.get(3 + i) != Some(want.as_str()) {
                    return Err(row_err(file, 1, &want, "missing or misplaced header column"));
                }
            }
            true
        }
        _ => {
            return Err(row_err(
                file,
                1,
                "header",
                "expected `patient_id,day,total` optionally followed by q1..q12",
            ))
        }
    };

    let mut table: VisitTable = BTreeMap::new();
    let mut seen: BTreeSet<(PatientId, i64)> = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(row_err(
                file,
                line,
                "row",
                format!("expected {} columns, found {}", headers.len(), rec.len()),
            ));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(row_err(file, line, "patient_id", "empty identifier"));
        }
        let day = parse_int(file, line, "day", &rec[1])?;
        if day < 0 {
            return Err(row_err(file, line, "day", "must be >= 0"));
        }
        let total = parse_int(file, line, "total", &rec[2])?;
        if !(0..=i64::from(MAX_TOTAL)).contains(&total) {
            return Err(row_err(
                file,
                line,
                "total",
                format!("score {total} outside [0, {MAX_TOTAL}]"),
            ));
        }
        let subscores = if with_items {
            let mut items = [0u8; ITEM_COUNT];
            for (i, item) in items.iter_mut().enumerate() {
                let field = format!("q{}", i + 1);
                let v = parse_int(file, line, &field, &rec[3 + i])?;
                if !(0..=i64::from(MAX_ITEM)).contains(&v) {
                    return Err(row_err(file, line, &field, format!("item {v} outside [0, 4]")));
                }
                *item = v as u8;
            }
            let sum: i64 = items.iter().map(|&v| i64::from(v)).sum();
            if sum != total {
                return Err(row_err(
                    file,
                    line,
                    "q1..q12",
                    format!("subscores sum to {sum} but total is {total}"),
                ));
            }
            Some(items)
        } else {
            None
        };
        if !seen.insert((id.clone(), day)) {
            return Err(Error::DuplicateVisit { patient: id, day });
        }
        table.entry(id).or_default().push(Visit {
            day,
            total: total as i32,
            subscores,
        });
    }
    Ok(table)
}

pub fn read_outcomes<R: Read>(reader: R, file: &str) -> Result<BTreeMap<PatientId, PatientOutcome>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for (i, name) in ["patient_id", "survival_days", "event"].iter().enumerate() {
        if headers.get(i) != Some(name) {
            return Err(row_err(file, 1, name, "missing or misplaced header column"));
        }
    }
    let has_contact = headers.get(3) == Some("first_contact_day");
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() < 3 {
            return Err(row_err(file, line, "row", "expected at least 3 columns"));
        }
        let id = rec[0].to_string();
        let survival_days = parse_int(file, line, "survival_days", &rec[1])?;
        if survival_days < 0 {
            return Err(row_err(file, line, "survival_days", "must be >= 0"));
        }
        let event_observed = match rec[2].to_ascii_lowercase().as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(row_err(
                    file,
                    line,
                    "event",
                    format!("expected 0/1/true/false, got {other:?}"),
                ))
            }
        };
        let first_contact_day = match rec.get(3) {
            Some(raw) if has_contact && !raw.is_empty() => {
                let v = parse_int(file, line, "first_contact_day", raw)?;
                if v > 0 {
                    return Err(row_err(file, line, "first_contact_day", "must be <= 0"));
                }
                Some(v)
            }
            _ => None,
        };
        if out
            .insert(
                id.clone(),
                PatientOutcome {
                    survival_days,
                    event_observed,
                    first_contact_day,
                },
            )
            .is_some()
        {
            return Err(row_err(file, line, "patient_id", format!("duplicate outcome for {id}")));
        }
    }
    Ok(out)
}

fn assemble(
    visits: VisitTable,
    mut outcomes: BTreeMap<PatientId, PatientOutcome>,
) -> Result<Vec<Sequence>> {
    let mut cohort = Vec::with_capacity(visits.len());
    for (id, mut rows) in visits {
        let outcome = outcomes
            .remove(&id)
            .ok_or_else(|| Error::MissingOutcome(id.clone()))?;
        rows.sort_by_key(|v| v.day);
        let base = rows[0].day;
        for v in &mut rows {
            v.day -= base;
        }
        cohort.push(Sequence {
            patient_id: id,
            visits: rows,
            outcome,
        });
    }
    if let Some(id) = outcomes.into_keys().next() {
        return Err(Error::MissingVisits(id));
    }
    Ok(cohort)
}

pub fn write_visits<W: Write>(writer: W, cohort: &[Sequence]) -> Result<()> {
    let with_items = !cohort.is_empty() && cohort.iter().all(Sequence::has_subscores);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["patient_id".to_string(), "day".into(), "total".into()];
    if with_items {
        header.extend((1..=ITEM_COUNT).map(|i| format!("q{i}")));
    }
    w.write_record(&header)?;
    for seq in cohort {
        for v in &seq.visits {
            let mut row = vec![seq.patient_id.clone(), v.day.to_string(), v.total.to_string()];
            if let (true, Some(items)) = (with_items, v.subscores) {
                row.extend(items.iter().map(u8::to_string));
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<visits>", e))?;
    Ok(())
}

pub fn write_outcomes<W: Write>(writer: W, cohort: &[Sequence]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["patient_id", "survival_days", "event", "first_contact_day"])?;
    for seq in cohort {
        let o = &seq.outcome;
        w.write_record([
            seq.patient_id.clone(),
            o.survival_days.to_string(),
            u8::from(o.event_observed).to_string(),
            o.first_contact_day.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<outcomes>", e))?;
    Ok(())
}

/// Write `visits.csv` and `outcomes.csv` into `dir`.
pub fn write_cohort(dir: &Path, cohort: &[Sequence]) -> Result<()> {
    let vp = dir.join("visits.csv");
    let op = dir.join("outcomes.csv");
    write_visits(std::fs::File::create(&vp).map_err(|e| Error::io(&vp, e))?, cohort)?;
    write_outcomes(std::fs::File::create(&op).map_err(|e| Error::io(&op, e))?, cohort)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse_str(visits: &str, outcomes: &str) -> Result<Vec<Sequence>> {
        let v = read_visits(visits.as_bytes(), "visits.csv")?;
        let o = read_outcomes(outcomes.as_bytes(), "outcomes.csv")?;
        assemble(v, o)
    }

    fn seq(id: &str, points: &[(i64, i32)], contact: Option<i64>) -> Sequence {
        Sequence {
            patient_id: id.into(),
            visits: points
                .iter()
                .map(|&(day, total)| Visit {
                    day,
                    total,
                    subscores: None,
                })
                .collect(),
            outcome: PatientOutcome {
                survival_days: 1000,
                event_observed: true,
                first_contact_day: contact,
            },
        }
    }

    #[test]
    fn minimal_input_parses() {
        let c = parse_str(
            "patient_id,day,total\nP1,0,48\nP1,90,40\n",
            "patient_id,survival_days,event,first_contact_day\nP1,400,1,\n",
        )
        .unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].visits.len(), 2);
        assert_eq!(c[0].outcome.first_contact_day, None);
    }

    #[test]
    fn visits_are_rebased_and_sorted() {
        let c = parse_str(
            "patient_id,day,total\nP1,130,40\nP1,40,48\n",
            "patient_id,survival_days,event\nP1,400,0\n",
        )
        .unwrap();
        assert_eq!(c[0].days().collect::<Vec<_>>(), vec![0, 90]);
        assert!(!c[0].outcome.event_observed);
    }

    #[test]
    fn score_above_48_names_field_and_line() {
        let err = parse_str(
            "patient_id,day,total\nP1,0,48\nP1,90,49\n",
            "patient_id,survival_days,event\nP1,400,1\n",
        )
        .unwrap_err();
        match err {
            Error::Row { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "total");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn subscore_sum_mismatch_is_rejected() {
        let items = "4,4,4,4,4,4,4,4,4,3,0,0";
        let v = format!(
            "patient_id,day,total,q1,q2,q3,q4,q5,q6,q7,q8,q9,q10,q11,q12\nP1,0,40,{items}\n"
        );
        let err = parse_str(&v, "patient_id,survival_days,event\nP1,400,1\n").unwrap_err();
        assert!(matches!(err, Error::Row { ref field, .. } if field == "q1..q12"), "{err}");
    }

    #[test]
    fn duplicate_day_and_malformed_rows() {
        let err = parse_str(
            "patient_id,day,total\nP1,0,48\nP1,0,47\n",
            "patient_id,survival_days,event\nP1,400,1\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateVisit { .. }));
        let err = parse_str(
            "patient_id,day,total\nP1,zero,48\n",
            "patient_id,survival_days,event\nP1,400,1\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Row { line: 2, ref field, .. } if field == "day"));
        let err = parse_str(
            "patient_id,day,total\nP1,0,48\n",
            "patient_id,survival_days,event\nP2,400,1\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingOutcome(_)));
    }

    #[test]
    fn exclusion_rules() {
        let four = seq("A", &[(0, 40), (90, 39), (180, 38), (270, 37)], None);
        let rise = seq("B", &[(0, 40), (90, 30), (180, 33), (270, 30), (360, 29)], None);
        let ok = seq("C", &[(0, 40), (90, 30), (180, 32), (270, 30), (360, 29)], None);
        let late = seq("D", &[(0, 40), (90, 39), (180, 38), (270, 37), (360, 36)], Some(-31));
        let edge = seq("E", &[(0, 40), (90, 39), (180, 38), (270, 37), (360, 36)], Some(-30));
        let (kept, report) = apply_exclusions(vec![four, rise, ok, late, edge]);
        let ids: Vec<_> = kept.iter().map(|s| s.patient_id.as_str()).collect();
        assert_eq!(ids, vec!["C", "E"]);
        assert_eq!(report.excluded["A"], ExclusionRule::FewVisits);
        assert_eq!(report.excluded["B"], ExclusionRule::ScoreIncrease);
        assert_eq!(report.excluded["D"], ExclusionRule::LateFirstScore);
        assert_eq!(report.retained + report.total_excluded(), report.input);
    }

    #[test]
    fn exclusion_report_serializes() {
        let (_, report) = apply_exclusions(vec![seq("A", &[(0, 40)], None)]);
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["counts"]["few_visits"], 1);
        assert_eq!(json["excluded"]["A"], "few_visits");
    }

    fn arb_sequence() -> impl Strategy<Value = Sequence> {
        (
            "[A-Z][0-9]{1,3}",
            prop::collection::vec((1i64..120, 0i32..=48), 1..9),
            0i64..3000,
            any::<bool>(),
            prop::option::of(-60i64..=0),
        )
            .prop_map(|(id, steps, surv, ev, contact)| {
                let mut day = 0;
                let visits = steps
                    .iter()
                    .enumerate()
                    .map(|(i, &(gap, total))| {
                        if i > 0 {
                            day += gap;
                        }
                        Visit {
                            day,
                            total,
                            subscores: None,
                        }
                    })
                    .collect();
                Sequence {
                    patient_id: id,
                    visits,
                    outcome: PatientOutcome {
                        survival_days: surv,
                        event_observed: ev,
                        first_contact_day: contact,
                    },
                }
            })
    }

    proptest! {
        #[test]
        fn filtering_is_idempotent_and_tags_are_truthful(
            cohort in prop::collection::btree_map("[A-Z][0-9]{1,3}", arb_sequence(), 0..20)
        ) {
            let cohort: Vec<Sequence> = cohort
                .into_iter()
                .map(|(id, mut s)| { s.patient_id = id; s })
                .collect();
            let original = cohort.clone();
            let (once, report) = apply_exclusions(cohort);
            let (twice, report2) = apply_exclusions(once.clone());
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(report2.total_excluded(), 0);
            for s in &once {
                for rule in ExclusionRule::ALL {
                    prop_assert!(!rule.violated_by(s));
                }
            }
            for s in &original {
                if let Some(rule) = report.excluded.get(&s.patient_id) {
                    prop_assert!(rule.violated_by(s));
                }
            }
        }

        #[test]
        fn write_then_parse_round_trips(
            cohort in prop::collection::btree_map("[A-Z][0-9]{1,3}", arb_sequence(), 1..10)
        ) {
            let cohort: Vec<Sequence> = cohort
                .into_iter()
                .map(|(id, mut s)| { s.patient_id = id; s })
                .collect();
            let mut v = Vec::new();
            let mut o = Vec::new();
            write_visits(&mut v, &cohort).unwrap();
            write_outcomes(&mut o, &cohort).unwrap();
            let back = assemble(
                read_visits(v.as_slice(), "v").unwrap(),
                read_outcomes(o.as_slice(), "o").unwrap(),
            ).unwrap();
            prop_assert_eq!(back, cohort);
        }
    }
}
