//! Raw experiment metrics as comma-separated text, and seed medians.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "experiment,kind,dof,budget,seed,action_mse,flow_epe,success_rate,progress,wall_time";

/// One (condition, seed) measurement. Metrics that do not apply are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub experiment: String,
    pub kind: String,
    pub dof: usize,
    pub budget: usize,
    pub seed: u64,
    pub action_mse: f64,
    pub flow_epe: f64,
    pub success_rate: f64,
    pub progress: f64,
    /// Seconds. The only field that varies between identical runs.
    pub wall_time: f64,
}

impl MetricsRow {
    pub fn new(experiment: &str, kind: &str, dof: usize, budget: usize, seed: u64) -> Self {
        Self {
            experiment: experiment.to_string(),
            kind: kind.to_string(),
            dof,
            budget,
            seed,
            action_mse: f64::NAN,
            flow_epe: f64::NAN,
            success_rate: f64::NAN,
            progress: f64::NAN,
            wall_time: f64::NAN,
        }
    }

    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::ActionMse => self.action_mse,
            Metric::FlowEpe => self.flow_epe,
            Metric::SuccessRate => self.success_rate,
            Metric::Progress => self.progress,
            Metric::WallTime => self.wall_time,
        }
    }

    fn key(&self) -> (String, String, usize, usize, u64) {
        (self.experiment.clone(), self.kind.clone(), self.dof, self.budget, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    ActionMse,
    FlowEpe,
    SuccessRate,
    Progress,
    WallTime,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "action_mse" => Ok(Metric::ActionMse),
            "flow_epe" => Ok(Metric::FlowEpe),
            "success_rate" => Ok(Metric::SuccessRate),
            "progress" => Ok(Metric::Progress),
            "wall_time" => Ok(Metric::WallTime),
            _ => Err(Error::InvalidConfig(format!("unknown metric {s:?}"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::ActionMse => "action_mse",
            Metric::FlowEpe => "flow_epe",
            Metric::SuccessRate => "success_rate",
            Metric::Progress => "progress",
            Metric::WallTime => "wall_time",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        crate::config::fmt_f64(v)
    }
}

fn check_text_field(s: &str) -> Result<()> {
    if s.is_empty() || s.contains([',', '\n', '\r']) {
        return Err(Error::InvalidConfig(format!("field {s:?} must be non-empty without commas or newlines")));
    }
    Ok(())
}

impl MetricsTable {
    pub fn new(rows: Vec<MetricsRow>) -> Self {
        Self { rows }
    }

    /// Orders rows by (experiment, kind, dof, budget, seed).
    pub fn sort(&mut self) {
        self.rows.sort_by_key(|r| r.key());
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            check_text_field(&r.experiment)?;
            check_text_field(&r.kind)?;
            let fields = [
                r.experiment.clone(),
                r.kind.clone(),
                r.dof.to_string(),
                r.budget.to_string(),
                r.seed.to_string(),
                fmt_metric(r.action_mse),
                fmt_metric(r.flow_epe),
                fmt_metric(r.success_rate),
                fmt_metric(r.progress),
                fmt_metric(r.wall_time),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == METRICS_HEADER => {}
            _ => return Err(Error::Format(format!("metrics header must be {METRICS_HEADER:?}"))),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(Error::Format(format!("line {}: expected 10 fields, got {}", i + 1, f.len())));
            }
            let bad = |what: &str| Error::Format(format!("line {}: bad {what}", i + 1));
            let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
            check_text_field(f[0]).map_err(|_| bad("experiment"))?;
            check_text_field(f[1]).map_err(|_| bad("kind"))?;
            rows.push(MetricsRow {
                experiment: f[0].to_string(),
                kind: f[1].to_string(),
                dof: f[2].parse().map_err(|_| bad("dof"))?,
                budget: f[3].parse().map_err(|_| bad("budget"))?,
                seed: f[4].parse().map_err(|_| bad("seed"))?,
                action_mse: num(f[5], "action_mse")?,
                flow_epe: num(f[6], "flow_epe")?,
                success_rate: num(f[7], "success_rate")?,
                progress: num(f[8], "progress")?,
                wall_time: num(f[9], "wall_time")?,
            });
        }
        Ok(Self { rows })
    }

    /// Appends the rows to a metrics file, creating it with a header when
    /// missing. Existing rows are never rewritten.
    pub fn append_to(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write as _;
        let csv = self.to_csv()?;
        if path.exists() {
            let existing = std::fs::read_to_string(path)?;
            if existing.lines().next() != Some(METRICS_HEADER) {
                return Err(Error::Format(format!("{} is not a metrics file", path.display())));
            }
            let body = &csv[METRICS_HEADER.len() + 1..];
            let mut f = std::fs::OpenOptions::new().append(true).open(path)?;
            if !existing.is_empty() && !existing.ends_with('\n') {
                f.write_all(b"\n")?;
            }
            f.write_all(body.as_bytes())?;
        } else {
            std::fs::write(path, csv)?;
        }
        Ok(())
    }

    /// Median of `metric` over seeds per (kind, dof, budget), ignoring NaN.
    /// Groups with no finite value are left out.
    pub fn medians(&self, experiment: &str, metric: Metric) -> BTreeMap<(String, usize, usize), f64> {
        let mut groups: BTreeMap<(String, usize, usize), Vec<f64>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.experiment == experiment) {
            let v = r.metric(metric);
            if !v.is_nan() {
                groups.entry((r.kind.clone(), r.dof, r.budget)).or_default().push(v);
            }
        }
        groups.into_iter().map(|(k, v)| (k, median(v))).collect()
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(kind: &str, seed: u64, mse: f64) -> MetricsRow {
        MetricsRow { action_mse: mse, wall_time: 1.5, ..MetricsRow::new("dof", kind, 5, 2000, seed) }
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }

    #[test]
    fn medians_skip_nan_and_group_by_condition() {
        let t = MetricsTable::new(vec![row("jidm", 0, 0.1), row("jidm", 1, 0.3), row("jidm", 2, f64::NAN), row("unipi", 0, 0.5)]);
        let m = t.medians("dof", Metric::ActionMse);
        assert_eq!(m[&("jidm".to_string(), 5, 2000)], 0.2);
        assert_eq!(m[&("unipi".to_string(), 5, 2000)], 0.5);
        assert!(t.medians("data", Metric::ActionMse).is_empty());
    }

    #[test]
    fn rejects_bad_header_and_field_count() {
        assert!(MetricsTable::parse("a,b\n").is_err());
        assert!(MetricsTable::parse(&format!("{METRICS_HEADER}\ndof,jidm,5\n")).is_err());
        assert!(MetricsTable::parse(&format!("{METRICS_HEADER}\ndof,jidm,x,1,0,1,1,1,1,1\n")).is_err());
    }

    #[test]
    fn commas_in_names_are_rejected_on_write() {
        let t = MetricsTable::new(vec![row("a,b", 0, 0.1)]);
        assert!(t.to_csv().is_err());
    }

    #[test]
    fn append_keeps_existing_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        MetricsTable::new(vec![row("jidm", 0, 0.1)]).append_to(&path).unwrap();
        MetricsTable::new(vec![row("unipi", 1, 0.2), row("unipi", 2, 0.3)]).append_to(&path).unwrap();
        let t = MetricsTable::parse(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(t.rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1, 2]);
        std::fs::write(&path, "x\n").unwrap();
        assert!(MetricsTable::new(vec![]).append_to(&path).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(
            vals in proptest::collection::vec((0u64..5, 1usize..17, prop_oneof![Just(f64::NAN), -1e6f64..1e6]), 0..12)
        ) {
            let t = MetricsTable::new(vals.iter().map(|(s, d, v)| MetricsRow {
                action_mse: *v, flow_epe: v * 0.5, dof: *d, ..MetricsRow::new("data", "didm-flow", 1, 250, *s)
            }).collect());
            let back = MetricsTable::parse(&t.to_csv().unwrap()).unwrap();
            prop_assert_eq!(back.rows.len(), t.rows.len());
            for (a, b) in back.rows.iter().zip(&t.rows) {
                prop_assert_eq!(a.action_mse.to_bits(), b.action_mse.to_bits());
                prop_assert_eq!(a.flow_epe.to_bits(), b.flow_epe.to_bits());
                prop_assert_eq!(a.key(), b.key());
            }
        }
    }
}
