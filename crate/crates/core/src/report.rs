//! Run reports, per-application schedule files and number formatting.
//!
//! A schedule file holds one line per transfer segment of one application:
//! `io_start io_end bandwidth_per_processor`, with `io_start` in `[0, T)` and
//! `io_end` possibly past `T` when the segment wraps. Blank lines and lines
//! starting with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::engine::{EngineConfig, Schedule};
use crate::error::{Error, Result};
use crate::model::{upper_bound_syseff, Scenario};
use crate::pattern::{InstanceSchedule, Pattern, Violation};
use crate::profile::{fold, Segment};
use crate::tol::VOLUME_REL;

pub const REPORT_FILE: &str = "report.json";
pub const SCENARIO_FILE: &str = "scenario.json";
pub const PATTERN_FILE: &str = "pattern.json";
pub const SCHEDULE_EXT: &str = "sched";

/// Formats `x` with 9 significant digits, '.' as decimal separator and no
/// exponent.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x == 0.0 { "0".into() } else { format!("{x}") };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    if magnitude > 8 {
        let scale = 10f64.powi(magnitude - 8);
        return format!("{:.0}", (x / scale).round() * scale);
    }
    format!("{x:.decimals$}")
}

/// Writes a CSV table with a header row.
pub fn write_rows<W: std::io::Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Summary of one scheduling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub config: EngineConfig,
    #[serde(rename = "T_opt")]
    pub period: f64,
    pub apps: Vec<AppReport>,
    pub syseff: f64,
    #[serde(serialize_with = "inf_as_null", deserialize_with = "null_as_inf")]
    pub dilation: f64,
    pub upper_bound: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppReport {
    pub id: String,
    pub instances: usize,
    pub periodic_efficiency: f64,
    #[serde(serialize_with = "inf_as_null", deserialize_with = "null_as_inf")]
    pub dilation: f64,
}

fn inf_as_null<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_none()
    }
}

fn null_as_inf<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl RunReport {
    pub fn new(scenario: &Scenario, config: &EngineConfig, schedule: &Schedule, wall_time_s: f64) -> Self {
        let p = &schedule.pattern;
        RunReport {
            scenario: scenario.name().to_string(),
            config: *config,
            period: p.period(),
            apps: p
                .schedules()
                .iter()
                .enumerate()
                .map(|(k, s)| AppReport {
                    id: s.app().id().to_string(),
                    instances: p.instance_count(k),
                    periodic_efficiency: p.periodic_efficiency(k),
                    dilation: p.app_dilation(k),
                })
                .collect(),
            syseff: schedule.metrics.syseff,
            dilation: schedule.metrics.dilation,
            upper_bound: upper_bound_syseff(scenario),
            wall_time_s,
        }
    }
}

/// Text of the schedule file of application `k`.
pub fn schedule_file_text(pattern: &Pattern, k: usize) -> String {
    let s = &pattern.schedules()[k];
    let procs = s.app().procs() as f64;
    let mut out = String::new();
    for inst in s.instances() {
        for seg in inst.segments() {
            let _ = writeln!(out, "{} {} {}", seg.start, seg.start + seg.duration, seg.rate / procs);
        }
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the report, the scenario, the pattern and one schedule file per
/// application into `dir`, creating it if needed.
pub fn write_run(dir: &Path, scenario: &Scenario, report: &RunReport, pattern: &Pattern) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_file(&dir.join(REPORT_FILE), &json)?;
    write_file(&dir.join(SCENARIO_FILE), &scenario.to_json())?;
    let export = serde_json::to_string_pretty(&pattern.to_export()).expect("pattern serializes");
    write_file(&dir.join(PATTERN_FILE), &export)?;
    for (k, s) in pattern.schedules().iter().enumerate() {
        let path = dir.join(format!("{}.{SCHEDULE_EXT}", s.app().id()));
        write_file(&path, &schedule_file_text(pattern, k))?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        field: "report".into(),
        message: format!("{}: {e}", path.display()),
    })
}

/// Parses one schedule file into instances. Consecutive segments are grouped
/// into one instance until they carry the application's volume; without I/O
/// every line is an instance of its own.
pub fn parse_schedule_file(text: &str, scenario: &Scenario, k: usize, period: f64, source: &str) -> Result<Vec<InstanceSchedule>> {
    let app = &scenario.apps()[k];
    let procs = app.procs() as f64;
    let parse_err = |line: usize, field: &str, message: String| Error::Parse {
        line,
        field: field.into(),
        message: format!("{source}:{line}: {message}"),
    };
    let mut instances = Vec::new();
    let mut current = Vec::new();
    let mut moved = 0.0;
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        last_line = line;
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(line, "line", format!("expected 3 columns, found {}", fields.len())));
        }
        let mut values = [0.0; 3];
        for (v, (name, text)) in values.iter_mut().zip(["io_start", "io_end", "bandwidth"].iter().zip(&fields)) {
            *v = text
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(line, name, format!("`{text}` is not a number")))?;
        }
        let [start, end, beta] = values;
        if !(0.0..period).contains(&start) {
            return Err(parse_err(line, "io_start", format!("{start} lies outside [0, {period})")));
        }
        if end < start || end - start > period {
            return Err(parse_err(line, "io_end", format!("{end} is not within one period after {start}")));
        }
        if beta < 0.0 {
            return Err(parse_err(line, "bandwidth", format!("{beta} is negative")));
        }
        let seg = Segment::new(fold(start, period), end - start, beta * procs);
        moved += seg.volume();
        current.push(seg);
        if app.volume() == 0.0 || moved >= app.volume() * (1.0 - VOLUME_REL) {
            instances.push(InstanceSchedule::new(std::mem::take(&mut current)));
            moved = 0.0;
        }
    }
    if !current.is_empty() {
        return Err(parse_err(
            last_line,
            "io_end",
            format!("trailing segments move {moved} GB, short of the {} GB of one instance", app.volume()),
        ));
    }
    Ok(instances)
}

/// Rebuilds a pattern from a directory written by [`write_run`], checking it
/// for feasibility.
pub fn read_run(dir: &Path) -> Result<(Scenario, RunReport, Pattern)> {
    let report = read_report(&dir.join(REPORT_FILE))?;
    let scenario = crate::catalog::load_scenario_file(dir.join(SCENARIO_FILE))?;
    let period = report.period;
    let mut instances = Vec::with_capacity(scenario.apps().len());
    for (k, app) in scenario.apps().iter().enumerate() {
        let path: PathBuf = dir.join(format!("{}.{SCHEDULE_EXT}", app.id()));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        instances.push(parse_schedule_file(&text, &scenario, k, period, &path.display().to_string())?);
    }
    let pattern = Pattern::from_instances(&scenario, period, instances)?;
    let violations = pattern.validate();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(Violation::to_string).collect();
        return Err(Error::invalid("schedule", list.join("; ")));
    }
    Ok((scenario, report, pattern))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::engine::{persched, EngineConfig};

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1.00000000");
        assert_eq!(fmt_sig9(0.0973), "0.0973000000");
        assert_eq!(fmt_sig9(445.2375), "445.237500");
        assert_eq!(fmt_sig9(-2.5), "-2.50000000");
        assert_eq!(fmt_sig9(123_456_789.0), "123456789");
        assert_eq!(fmt_sig9(1_234_567_891_234.0), "1234567890000");
        assert_eq!(fmt_sig9(f64::INFINITY), "inf");
    }

    #[test]
    fn schedule_files_round_trip() {
        let sc = catalog::load_scenario("set4").unwrap();
        let cfg = EngineConfig::default();
        let s = persched(&sc, &cfg).unwrap();
        let report = RunReport::new(&sc, &cfg, &s, 0.0);
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), &sc, &report, &s.pattern).unwrap();
        let (sc2, report2, p2) = read_run(dir.path()).unwrap();
        assert_eq!(sc2, sc);
        assert_eq!(report2, report);
        assert_eq!(p2.metrics(), s.pattern.metrics());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let sc = catalog::load_scenario("set1").unwrap();
        let t = 1000.0;
        let text = "# T2_1\n0 368.4375 0.01\n\n400 abc 0.01\n";
        match parse_schedule_file(text, &sc, 0, t, "f") {
            Err(Error::Parse { line, field, .. }) => assert_eq!((line, field.as_str()), (4, "io_end")),
            other => panic!("unexpected {other:?}"),
        }
        let short = "0 100 0.01\n";
        match parse_schedule_file(short, &sc, 0, t, "f") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let outside = "1000 1368.4375 0.01\n";
        assert!(parse_schedule_file(outside, &sc, 0, t, "f").is_err());
    }

    #[test]
    fn report_keeps_infinite_dilation() {
        let sc = catalog::load_scenario("set1").unwrap();
        let cfg = EngineConfig::default();
        let mut s = persched(&sc, &cfg).unwrap();
        s.metrics.dilation = f64::INFINITY;
        let r = RunReport::new(&sc, &cfg, &s, 0.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"dilation\":null"));
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.dilation, f64::INFINITY);
    }
}
