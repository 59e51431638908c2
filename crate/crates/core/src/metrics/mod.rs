//! Per-type evaluation metrics and the report CSV.

mod emission;

use std::collections::BTreeMap;
use std::path::Path;

pub use emission::{emission_rate, fuel_rate, polynomial_rate, EmissionClassCoeffs, EmissionTable, DEFAULT_COEFFS};

use crate::dynamics::{CompletedRecord, HeadwaySample, VehicleClass};
use crate::error::MetricsError;

pub const REPORT_COLUMNS: [&str; 9] = [
    "run_id",
    "rv_rate",
    "scope",
    "vehicle_type",
    "W_avg",
    "co2_mg_s",
    "fuel_ml_s",
    "headway_m",
    "n",
];

pub const SCOPE_SIGNALIZED: &str = "HV-Signalized";
pub const SCOPE_UNSIGNALIZED: &str = "HV-Unsignalized";
pub const SCOPE_RL: &str = "RL";
pub const ALL_TYPES: &str = "all";
/// Run id used for rows that average several runs.
pub const AGGREGATE_RUN: &str = "mean";

/// Mean waiting time over the matching records and their count; 0 when empty.
pub fn avg_waiting_time(records: &[CompletedRecord], filter: Option<VehicleClass>) -> (f64, usize) {
    mean_by(records, filter, |r| r.waiting_time)
}

pub fn avg_co2_rate(records: &[CompletedRecord], filter: Option<VehicleClass>) -> (f64, usize) {
    mean_by(records, filter, |r| r.co2_mg_s)
}

pub fn avg_fuel_rate(records: &[CompletedRecord], filter: Option<VehicleClass>) -> (f64, usize) {
    mean_by(records, filter, |r| r.fuel_ml_s)
}

fn mean_by(
    records: &[CompletedRecord],
    filter: Option<VehicleClass>,
    f: impl Fn(&CompletedRecord) -> f64,
) -> (f64, usize) {
    let (sum, n) = records
        .iter()
        .filter(|r| filter.is_none_or(|c| r.class == c))
        .fold((0.0, 0usize), |(s, n), r| (s + f(r), n + 1));
    if n == 0 {
        (0.0, 0)
    } else {
        (sum / n as f64, n)
    }
}

/// Mean front-to-front headway over leader/follower pairs, attributed to the
/// follower's class; returns the pair count alongside.
pub fn avg_space_headway(samples: &[HeadwaySample], filter: Option<VehicleClass>) -> (f64, usize) {
    let (sum, n) = samples
        .iter()
        .filter(|s| filter.is_none_or(|c| s.class == c))
        .fold((0.0, 0usize), |(s, n), h| (s + h.headway, n + 1));
    if n == 0 {
        (0.0, 0)
    } else {
        (sum / n as f64, n)
    }
}

/// Metrics of one vehicle type (or all) in one run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TypeMetrics {
    pub w_avg: f64,
    pub co2_mg_s: f64,
    pub fuel_ml_s: f64,
    pub headway_m: f64,
    pub n: usize,
    pub headway_pairs: usize,
}

/// Metrics of one evaluation run, keyed by vehicle type name plus "all".
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub run_id: String,
    pub rv_rate: f64,
    pub scope: String,
    pub by_type: BTreeMap<String, TypeMetrics>,
}

fn type_keys() -> impl Iterator<Item = (String, Option<VehicleClass>)> {
    VehicleClass::ALL
        .into_iter()
        .map(|c| (c.name().to_string(), Some(c)))
        .chain(std::iter::once((ALL_TYPES.to_string(), None)))
}

impl RunMetrics {
    pub fn from_records(
        run_id: impl Into<String>,
        rv_rate: f64,
        scope: impl Into<String>,
        records: &[CompletedRecord],
        headways: &[HeadwaySample],
    ) -> Self {
        let by_type = type_keys()
            .map(|(name, filter)| {
                let (w_avg, n) = avg_waiting_time(records, filter);
                let (headway_m, headway_pairs) = avg_space_headway(headways, filter);
                let m = TypeMetrics {
                    w_avg,
                    co2_mg_s: avg_co2_rate(records, filter).0,
                    fuel_ml_s: avg_fuel_rate(records, filter).0,
                    headway_m,
                    n,
                    headway_pairs,
                };
                (name, m)
            })
            .collect();
        RunMetrics {
            run_id: run_id.into(),
            rv_rate,
            scope: scope.into(),
            by_type,
        }
    }

    pub fn get(&self, vehicle_type: &str) -> TypeMetrics {
        self.by_type.get(vehicle_type).copied().unwrap_or_default()
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        type_keys()
            .map(|(name, _)| {
                let m = self.get(&name);
                ReportRow {
                    run_id: self.run_id.clone(),
                    rv_rate: self.rv_rate,
                    scope: self.scope.clone(),
                    vehicle_type: name,
                    w_avg: m.w_avg,
                    co2_mg_s: m.co2_mg_s,
                    fuel_ml_s: m.fuel_ml_s,
                    headway_m: m.headway_m,
                    n: m.n,
                }
            })
            .collect()
    }
}

/// Averages runs that share rate and scope. Each metric is the mean of the
/// per-run values over runs where it was observed; `n` is the total count.
pub fn aggregate_runs(runs: &[RunMetrics]) -> RunMetrics {
    let first = runs.first().expect("at least one run");
    let by_type = type_keys()
        .map(|(name, _)| {
            let parts: Vec<TypeMetrics> = runs.iter().map(|r| r.get(&name)).collect();
            let observed: Vec<&TypeMetrics> = parts.iter().filter(|m| m.n > 0).collect();
            let with_pairs: Vec<&TypeMetrics> = parts.iter().filter(|m| m.headway_pairs > 0).collect();
            let mean = |xs: &[&TypeMetrics], f: fn(&TypeMetrics) -> f64| {
                if xs.is_empty() {
                    0.0
                } else {
                    xs.iter().map(|m| f(m)).sum::<f64>() / xs.len() as f64
                }
            };
            let m = TypeMetrics {
                w_avg: mean(&observed, |m| m.w_avg),
                co2_mg_s: mean(&observed, |m| m.co2_mg_s),
                fuel_ml_s: mean(&observed, |m| m.fuel_ml_s),
                headway_m: mean(&with_pairs, |m| m.headway_m),
                n: parts.iter().map(|m| m.n).sum(),
                headway_pairs: parts.iter().map(|m| m.headway_pairs).sum(),
            };
            (name, m)
        })
        .collect();
    RunMetrics {
        run_id: AGGREGATE_RUN.to_string(),
        rv_rate: first.rv_rate,
        scope: first.scope.clone(),
        by_type,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run_id: String,
    pub rv_rate: f64,
    pub scope: String,
    pub vehicle_type: String,
    pub w_avg: f64,
    pub co2_mg_s: f64,
    pub fuel_ml_s: f64,
    pub headway_m: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    pub fn extend_run(&mut self, run: &RunMetrics) {
        self.rows.extend(run.rows());
    }

    pub fn find(&self, run_id: &str, scope: &str, rv_rate: f64, vehicle_type: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.run_id == run_id && r.scope == scope && r.rv_rate == rv_rate && r.vehicle_type == vehicle_type)
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_COLUMNS).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.run_id.clone(),
                r.rv_rate.to_string(),
                r.scope.clone(),
                r.vehicle_type.clone(),
                r.w_avg.to_string(),
                r.co2_mg_s.to_string(),
                r.fuel_ml_s.to_string(),
                r.headway_m.to_string(),
                r.n.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// Parses and schema-checks a report CSV.
    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = rdr.headers()?.clone();
        if header.iter().ne(REPORT_COLUMNS.iter().copied()) {
            return Err(MetricsError::Schema(format!(
                "header must be `{}`, found `{}`",
                REPORT_COLUMNS.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let num = |k: usize| -> Result<f64, MetricsError> {
                let v: f64 = rec[k].parse().map_err(|_| MetricsError::Parse {
                    line,
                    msg: format!("column {} is not a number: `{}`", REPORT_COLUMNS[k], &rec[k]),
                })?;
                if !v.is_finite() || v < 0.0 {
                    return Err(MetricsError::Schema(format!(
                        "line {line}: column {} must be a finite non-negative number",
                        REPORT_COLUMNS[k]
                    )));
                }
                Ok(v)
            };
            let rv_rate = num(1)?;
            if rv_rate > 1.0 {
                return Err(MetricsError::Schema(format!("line {line}: rv_rate {rv_rate} > 1")));
            }
            let scope = rec[2].to_string();
            if ![SCOPE_SIGNALIZED, SCOPE_UNSIGNALIZED, SCOPE_RL].contains(&scope.as_str()) {
                return Err(MetricsError::Schema(format!("line {line}: unknown scope `{scope}`")));
            }
            let vehicle_type = rec[3].to_string();
            if vehicle_type != ALL_TYPES && VehicleClass::from_name(&vehicle_type).is_none() {
                return Err(MetricsError::Schema(format!(
                    "line {line}: unknown vehicle type `{vehicle_type}`"
                )));
            }
            let n = rec[8].parse().map_err(|_| MetricsError::Parse {
                line,
                msg: format!("column n is not a count: `{}`", &rec[8]),
            })?;
            rows.push(ReportRow {
                run_id: rec[0].to_string(),
                rv_rate,
                scope,
                vehicle_type,
                w_avg: num(4)?,
                co2_mg_s: num(5)?,
                fuel_ml_s: num(6)?,
                headway_m: num(7)?,
                n,
            });
        }
        Ok(MetricsReport { rows })
    }
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<(), MetricsError> {
    std::fs::write(path, report.to_csv_string()).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_report(path: &Path) -> Result<MetricsReport, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    MetricsReport::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Role;
    use proptest::prelude::*;

    fn rec(id: u64, class: VehicleClass, wait: f64) -> CompletedRecord {
        CompletedRecord {
            id,
            class,
            role: Role::Human,
            waiting_time: wait,
            travel_time: 60.0,
            co2_mg_s: 2000.0 + id as f64,
            fuel_ml_s: 0.8,
            finished: true,
        }
    }

    fn hw(class: VehicleClass, headway: f64) -> HeadwaySample {
        HeadwaySample {
            time: 10.0,
            class,
            headway,
        }
    }

    #[test]
    fn waiting_means() {
        let car = VehicleClass::PassengerCar;
        assert_eq!(avg_waiting_time(&[rec(0, car, 7.0)], None), (7.0, 1));
        let r = [rec(0, car, 0.0), rec(1, car, 10.0), rec(2, car, 20.0)];
        assert_eq!(avg_waiting_time(&r, None), (10.0, 3));
        assert_eq!(avg_waiting_time(&[], None), (0.0, 0));
        assert_eq!(avg_waiting_time(&r, Some(VehicleClass::Van)), (0.0, 0));
    }

    #[test]
    fn headway_from_positions() {
        // Bumpers at 0, 30 and 70 on one lane give pairs of 30 and 40.
        let car = VehicleClass::PassengerCar;
        let s = [hw(car, 30.0), hw(car, 40.0)];
        assert_eq!(avg_space_headway(&s, None), (35.0, 2));
        assert_eq!(avg_space_headway(&[], None), (0.0, 0));
        assert_eq!(avg_space_headway(&[hw(car, 9.0); 4], Some(car)).0, 9.0);
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = MetricsReport::default();
        assert_eq!(r.to_csv_string(), format!("{}\n", REPORT_COLUMNS.join(",")));
        assert_eq!(MetricsReport::parse(&r.to_csv_string()).unwrap(), r);
    }

    #[test]
    fn report_round_trip_and_bytes() {
        let car = VehicleClass::PassengerCar;
        let records = [rec(0, car, 1.0 / 3.0), rec(1, VehicleClass::SemiTrailer, 12.5)];
        let run = RunMetrics::from_records("seed-1", 0.6, SCOPE_RL, &records, &[hw(car, 33.3)]);
        let mut report = MetricsReport::default();
        report.extend_run(&run);
        assert_eq!(report.rows.len(), 6);
        let text = report.to_csv_string();
        assert_eq!(MetricsReport::parse(&text).unwrap(), report);
        let mut again = MetricsReport::default();
        again.extend_run(&RunMetrics::from_records(
            "seed-1",
            0.6,
            SCOPE_RL,
            &records,
            &[hw(car, 33.3)],
        ));
        assert_eq!(again.to_csv_string(), text);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report(&report, &path).unwrap();
        assert_eq!(read_report(&path).unwrap(), report);
    }

    #[test]
    fn schema_violations() {
        assert!(matches!(MetricsReport::parse("a,b\n"), Err(MetricsError::Schema(_))));
        let h = REPORT_COLUMNS.join(",");
        let bad_scope = format!("{h}\nx,0.1,Other,all,1,1,1,1,3\n");
        assert!(matches!(MetricsReport::parse(&bad_scope), Err(MetricsError::Schema(_))));
        let bad_type = format!("{h}\nx,0.1,RL,bus,1,1,1,1,3\n");
        assert!(matches!(MetricsReport::parse(&bad_type), Err(MetricsError::Schema(_))));
        let negative = format!("{h}\nx,0.1,RL,all,-1,1,1,1,3\n");
        assert!(matches!(MetricsReport::parse(&negative), Err(MetricsError::Schema(_))));
        let not_num = format!("{h}\nx,0.1,RL,all,abc,1,1,1,3\n");
        assert!(matches!(
            MetricsReport::parse(&not_num),
            Err(MetricsError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn aggregate_is_mean_of_runs() {
        let car = VehicleClass::PassengerCar;
        let runs: Vec<RunMetrics> = (0..10)
            .map(|k| RunMetrics::from_records(format!("{k}"), 0.0, SCOPE_SIGNALIZED, &[rec(k, car, k as f64)], &[]))
            .collect();
        let agg = aggregate_runs(&runs);
        assert_eq!(agg.get(ALL_TYPES).w_avg, 4.5);
        assert_eq!(agg.get(ALL_TYPES).n, 10);
        assert_eq!(agg.run_id, AGGREGATE_RUN);
    }

    fn arb_records() -> impl Strategy<Value = Vec<CompletedRecord>> {
        proptest::collection::vec((0usize..5, 0.0f64..300.0), 0..60).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (c, w))| rec(i as u64, VehicleClass::ALL[c], w))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn overall_is_count_weighted_mean_of_types(records in arb_records()) {
            let (all, n) = avg_waiting_time(&records, None);
            let mut weighted = 0.0;
            let mut total = 0;
            for c in VehicleClass::ALL {
                let (w, k) = avg_waiting_time(&records, Some(c));
                weighted += w * k as f64;
                total += k;
            }
            prop_assert_eq!(total, n);
            if n > 0 {
                prop_assert!((weighted / n as f64 - all).abs() < 1e-9);
            }
        }

        #[test]
        fn merged_records_weighted(a in arb_records(), b in arb_records()) {
            let (wa, na) = avg_waiting_time(&a, None);
            let (wb, nb) = avg_waiting_time(&b, None);
            let merged: Vec<_> = a.iter().chain(b.iter()).cloned().collect();
            let (w, n) = avg_waiting_time(&merged, None);
            prop_assert_eq!(n, na + nb);
            if n > 0 {
                prop_assert!((w - (wa * na as f64 + wb * nb as f64) / n as f64).abs() < 1e-9);
            }
        }

        #[test]
        fn headway_invariant_to_order(mut hs in proptest::collection::vec((0usize..5, 5.0f64..200.0), 1..50)) {
            let samples: Vec<_> = hs.iter().map(|&(c, h)| hw(VehicleClass::ALL[c], h)).collect();
            let (a, _) = avg_space_headway(&samples, None);
            hs.reverse();
            let rev: Vec<_> = hs.iter().map(|&(c, h)| hw(VehicleClass::ALL[c], h)).collect();
            let (b, _) = avg_space_headway(&rev, None);
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
