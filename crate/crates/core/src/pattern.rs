//! Periodic patterns: one period of I/O placements for every application.
//!
//! Compute phases are not stored. An instance's computation is anchored at the
//! end of the previous instance's I/O (cyclically), so a pattern is feasible
//! when every cyclic gap between consecutive I/O blocks of an application
//! leaves room for its compute time `w`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ApplicationSpec, DerivedApp, Platform, Scenario};
use crate::profile::{fold, CyclicWindow, Segment, StepProfile};
use crate::tol::{RATE_EPS, TIME_EPS, VOLUME_REL};

/// The I/O of one instance, in transfer order.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSchedule {
    segments: Vec<Segment>,
}

impl InstanceSchedule {
    /// `segments` must be non-empty; an application without I/O uses a single
    /// zero-length segment to mark where its instance sits.
    pub fn new(segments: Vec<Segment>) -> Self {
        assert!(!segments.is_empty(), "an instance needs at least one segment");
        InstanceSchedule { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn io_start(&self) -> f64 {
        self.segments[0].start
    }

    /// Time from the first byte to the last byte of the transfer.
    pub fn span(&self, period: f64) -> f64 {
        self.unrolled_end(period) - self.io_start()
    }

    /// End of the transfer, folded into `[0, T)`.
    pub fn io_end(&self, period: f64) -> f64 {
        fold(self.unrolled_end(period), period)
    }

    /// End of the transfer measured from `io_start` without folding.
    pub fn unrolled_end(&self, period: f64) -> f64 {
        let s0 = self.io_start();
        let last = self.segments.last().expect("non-empty");
        s0 + unroll_from(s0, last.start, period) + last.duration
    }

    pub fn volume(&self) -> f64 {
        self.segments.iter().map(Segment::volume).sum()
    }

    fn rotated(&self, offset: f64, period: f64) -> Self {
        InstanceSchedule {
            segments: self
                .segments
                .iter()
                .map(|s| Segment::new(fold(s.start + offset, period), s.duration, s.rate))
                .collect(),
        }
    }
}

/// Distance travelled forward on the circle from `origin` to `t`.
fn unroll_from(origin: f64, t: f64, period: f64) -> f64 {
    let d = t - origin;
    if d >= 0.0 {
        d
    } else {
        d + period
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppSchedule {
    app: ApplicationSpec,
    derived: DerivedApp,
    instances: Vec<InstanceSchedule>,
}

impl AppSchedule {
    pub fn app(&self) -> &ApplicationSpec {
        &self.app
    }

    pub fn derived(&self) -> DerivedApp {
        self.derived
    }

    /// Instances in cyclic order, starting with the first one inserted.
    pub fn instances(&self) -> &[InstanceSchedule] {
        &self.instances
    }
}

/// One period of length `T` of a periodic schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    period: f64,
    platform: Platform,
    schedules: Vec<AppSchedule>,
    usage: StepProfile,
}

/// Metrics of a pattern, with `ρ̃_k = l_k w_k / T` in place of the measured
/// efficiency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleMetrics {
    pub periodic_efficiency: Vec<f64>,
    pub instance_counts: Vec<usize>,
    pub syseff: f64,
    pub dilation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Aggregate usage above `B`.
    Capacity { time: f64, used: f64 },
    /// An application transfers faster than `min(p·b, B)`, or with a
    /// malformed segment.
    RateCap { app: usize, instance: usize, rate: f64, cap: f64 },
    /// An instance does not move exactly `vol_k`.
    Volume { app: usize, instance: usize, moved: f64, expected: f64 },
    /// Not enough room for the compute phase before `instance`'s successor.
    ComputeGap { app: usize, instance: usize, gap: f64, needed: f64 },
    /// Segments of one application overlap.
    Overlap { app: usize, instance: usize, time: f64 },
    /// Stored aggregate usage disagrees with the segments.
    UsageMismatch { time: f64, stored: f64, actual: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::Capacity { time, used } => write!(f, "capacity: {used} GB/s in use at t={time}"),
            Violation::RateCap { app, instance, rate, cap } => {
                write!(f, "rate: app {app} instance {instance} uses {rate} GB/s, cap {cap}")
            }
            Violation::Volume { app, instance, moved, expected } => {
                write!(f, "volume: app {app} instance {instance} moves {moved} GB, expected {expected}")
            }
            Violation::ComputeGap { app, instance, gap, needed } => {
                write!(f, "compute gap: app {app} after instance {instance} has {gap} s, needs {needed}")
            }
            Violation::Overlap { app, instance, time } => {
                write!(f, "overlap: app {app} instance {instance} at t={time}")
            }
            Violation::UsageMismatch { time, stored, actual } => {
                write!(f, "usage: stored {stored} GB/s vs actual {actual} at t={time}")
            }
        }
    }
}

impl Pattern {
    pub fn empty(scenario: &Scenario, period: f64) -> Self {
        let platform = *scenario.platform();
        Pattern {
            period,
            platform,
            schedules: scenario
                .apps()
                .iter()
                .map(|a| AppSchedule {
                    app: a.clone(),
                    derived: a.derive(&platform),
                    instances: Vec::new(),
                })
                .collect(),
            usage: StepProfile::new(period, platform.io_bandwidth()),
        }
    }

    /// Assembles a pattern from explicit instance lists, one per application
    /// of `scenario`. The result is not validated.
    pub fn from_instances(scenario: &Scenario, period: f64, instances: Vec<Vec<InstanceSchedule>>) -> Result<Self> {
        if instances.len() != scenario.apps().len() {
            return Err(Error::invalid(
                "pattern",
                format!("{} instance lists for {} applications", instances.len(), scenario.apps().len()),
            ));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::invalid("pattern", "period must be positive"));
        }
        let mut pattern = Pattern::empty(scenario, period);
        for (sched, list) in pattern.schedules.iter_mut().zip(instances) {
            sched.instances = list;
        }
        pattern.usage = pattern.recompute_usage();
        Ok(pattern)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn platform(&self) -> &Platform {
        &self.platform
    }

    pub fn schedules(&self) -> &[AppSchedule] {
        &self.schedules
    }

    pub fn usage(&self) -> &StepProfile {
        &self.usage
    }

    pub fn app_count(&self) -> usize {
        self.schedules.len()
    }

    pub fn instance_count(&self, k: usize) -> usize {
        self.schedules[k].instances.len()
    }

    pub fn total_instances(&self) -> usize {
        self.schedules.iter().map(|s| s.instances.len()).sum()
    }

    /// `ρ̃_k = l_k w_k / T`.
    pub fn periodic_efficiency(&self, k: usize) -> f64 {
        let s = &self.schedules[k];
        s.instances.len() as f64 * s.app.work() / self.period
    }

    /// `ρ_k / ρ̃_k`, infinite when the application has no instance.
    pub fn app_dilation(&self, k: usize) -> f64 {
        let l = self.instance_count(k);
        if l == 0 {
            return f64::INFINITY;
        }
        self.schedules[k].derived.rho / self.periodic_efficiency(k)
    }

    /// `Σ p_k l_k w_k`, the work done per period.
    pub fn weighted_work(&self) -> f64 {
        self.schedules
            .iter()
            .map(|s| s.app.procs() as f64 * s.instances.len() as f64 * s.app.work())
            .sum()
    }

    /// `(1/N) Σ p_k ρ̃_k`.
    pub fn syseff(&self) -> f64 {
        self.weighted_work() / (self.platform.units() as f64 * self.period)
    }

    /// `max_k ρ_k / ρ̃_k`; infinite if some application has no instance.
    pub fn dilation(&self) -> f64 {
        (0..self.app_count()).map(|k| self.app_dilation(k)).fold(1.0, f64::max)
    }

    pub fn metrics(&self) -> ScheduleMetrics {
        ScheduleMetrics {
            periodic_efficiency: (0..self.app_count()).map(|k| self.periodic_efficiency(k)).collect(),
            instance_counts: (0..self.app_count()).map(|k| self.instance_count(k)).collect(),
            syseff: self.syseff(),
            dilation: self.dilation(),
        }
    }

    /// Window where the next instance of `k` may transfer: from the end of the
    /// last instance's I/O plus its compute phase, to the start of the first
    /// instance's I/O minus the compute phase that precedes it. `None` when
    /// `k` has no instance yet or the window is empty.
    pub fn insertion_window(&self, k: usize) -> Option<CyclicWindow> {
        let s = &self.schedules[k];
        let first = s.instances.first()?;
        let last = s.instances.last().expect("non-empty");
        let w = s.app.work();
        let s0 = first.io_start();
        let occupied = unroll_from(s0, last.io_start(), self.period) + last.span(self.period);
        let length = self.period - occupied - 2.0 * w;
        if length < -TIME_EPS {
            return None;
        }
        Some(CyclicWindow::new(s0 + occupied + w, length.max(0.0), self.period))
    }

    /// Candidate I/O start times for a first instance of `k`: the period
    /// origin, every usage breakpoint `e`, and every `e − (T − w_k)`. The
    /// capped residual integrated over a window of fixed length is piecewise
    /// linear in the window start with kinks exactly there, so these starts
    /// find a feasible window whenever one exists.
    pub fn first_instance_candidates(&self, k: usize) -> Vec<f64> {
        let events = self.usage.breakpoints();
        let length = self.period - self.schedules[k].app.work();
        let mut c: Vec<f64> = std::iter::once(0.0)
            .chain(events.iter().copied())
            .chain(events.iter().map(|&e| fold(e - length, self.period)))
            .collect();
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }

    /// Whether one more instance of `k` fits without moving anything already
    /// placed.
    pub fn is_schedulable(&self, k: usize) -> bool {
        let s = &self.schedules[k];
        let cap = s.app.rate_cap(&self.platform);
        let need = s.app.volume() * (1.0 - VOLUME_REL);
        if s.instances.is_empty() {
            let length = self.period - s.app.work();
            if length < -TIME_EPS {
                return false;
            }
            let prefix = self.usage.capped_prefix(cap);
            return self.first_instance_candidates(k).into_iter().any(|c| {
                let window = CyclicWindow::new(c, length.max(0.0), self.period);
                prefix.window(window) >= need - prefix.slack() && self.usage.integrate_capped(window, cap) >= need
            });
        }
        match self.insertion_window(k) {
            Some(window) => self.usage.integrate_capped(window, cap) >= need,
            None => false,
        }
    }

    /// Appends an instance to `k` and superposes its usage.
    pub(crate) fn push_instance(&mut self, k: usize, instance: InstanceSchedule) -> Result<()> {
        self.usage.apply(instance.segments(), 1.0)?;
        self.schedules[k].instances.push(instance);
        Ok(())
    }

    /// Aggregate usage rebuilt from the segments, without capacity checks.
    pub fn recompute_usage(&self) -> StepProfile {
        let mut usage = StepProfile::new(self.period, self.platform.io_bandwidth());
        for s in &self.schedules {
            for inst in &s.instances {
                usage.superpose(inst.segments());
            }
        }
        usage
    }

    /// The same pattern shifted by `offset` seconds.
    pub fn rotate(&self, offset: f64) -> Pattern {
        let mut out = self.clone();
        for s in &mut out.schedules {
            for inst in &mut s.instances {
                *inst = inst.rotated(offset, self.period);
            }
        }
        out.usage = out.recompute_usage();
        out
    }

    /// Every feasibility violation, or an empty list.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let t = self.period;
        let cap_b = self.platform.io_bandwidth();

        let actual = self.recompute_usage();
        for (a, _b, used) in actual.pieces() {
            if used > cap_b + RATE_EPS {
                out.push(Violation::Capacity { time: a, used });
            }
        }
        let mut probes: Vec<f64> = actual.pieces().iter().map(|p| 0.5 * (p.0 + p.1)).collect();
        probes.extend(self.usage.pieces().iter().map(|p| 0.5 * (p.0 + p.1)));
        for time in probes {
            let (stored, real) = (self.usage.used(time), actual.used(time));
            if (stored - real).abs() > RATE_EPS {
                out.push(Violation::UsageMismatch { time, stored, actual: real });
                break;
            }
        }

        for (k, s) in self.schedules.iter().enumerate() {
            let cap = s.app.rate_cap(&self.platform);
            let w = s.app.work();
            for (i, inst) in s.instances.iter().enumerate() {
                for seg in inst.segments() {
                    let malformed = !(0.0..t).contains(&seg.start)
                        || !(0.0..=t).contains(&seg.duration)
                        || seg.rate < 0.0
                        || !seg.rate.is_finite();
                    if malformed || seg.rate > cap + RATE_EPS {
                        out.push(Violation::RateCap { app: k, instance: i, rate: seg.rate, cap });
                    }
                }
                let moved = inst.volume();
                let expected = s.app.volume();
                if (moved - expected).abs() > VOLUME_REL * expected + 1e-12 {
                    out.push(Violation::Volume { app: k, instance: i, moved, expected });
                }
                // segments in order, non-overlapping
                let s0 = inst.io_start();
                let mut cursor = 0.0;
                for seg in inst.segments() {
                    let u = unroll_from(s0, seg.start, t);
                    if u < cursor - TIME_EPS {
                        out.push(Violation::Overlap { app: k, instance: i, time: seg.start });
                    }
                    cursor = u + seg.duration;
                }
                if cursor > t + TIME_EPS {
                    out.push(Violation::Overlap { app: k, instance: i, time: s0 });
                }
            }

            // the cyclic chain io_0, w, io_1, w, ..., io_{l-1}, w must fit in T
            let Some(first) = s.instances.first() else {
                continue;
            };
            let s0 = first.io_start();
            let mut prev_end = first.span(t);
            let l = s.instances.len();
            for i in 1..=l {
                let next_start = if i == l {
                    t
                } else {
                    unroll_from(s0, s.instances[i].io_start(), t)
                };
                let gap = next_start - prev_end;
                if gap < w - TIME_EPS {
                    out.push(Violation::ComputeGap { app: k, instance: i - 1, gap, needed: w });
                }
                if i < l {
                    prev_end = next_start + s.instances[i].span(t);
                }
            }
        }
        out
    }

    pub fn to_export(&self) -> PatternExport {
        PatternExport {
            period: self.period,
            apps: self
                .schedules
                .iter()
                .map(|s| AppExport {
                    id: s.app.id().to_string(),
                    instances: s
                        .instances
                        .iter()
                        .map(|i| InstanceExport {
                            segments: i.segments.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds a pattern from its export; applications are matched by id.
    pub fn from_export(scenario: &Scenario, export: &PatternExport) -> Result<Self> {
        let mut lists = Vec::with_capacity(scenario.apps().len());
        for app in scenario.apps() {
            let entry = export
                .apps
                .iter()
                .find(|a| a.id == app.id())
                .ok_or_else(|| Error::invalid("pattern", format!("no schedule for application `{}`", app.id())))?;
            let mut list = Vec::new();
            for inst in &entry.instances {
                if inst.segments.is_empty() {
                    return Err(Error::invalid("pattern", format!("`{}` has an instance without segments", app.id())));
                }
                list.push(InstanceSchedule::new(inst.segments.clone()));
            }
            lists.push(list);
        }
        Pattern::from_instances(scenario, export.period, lists)
    }
}

/// Serialized form: `{"T", "apps": [{"id", "instances": [{"segments": [...]}]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternExport {
    #[serde(rename = "T")]
    pub period: f64,
    pub apps: Vec<AppExport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppExport {
    pub id: String,
    pub instances: Vec<InstanceExport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceExport {
    pub segments: Vec<Segment>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Platform;

    fn single(p: u32, w: f64, vol: f64) -> Scenario {
        let app = ApplicationSpec::new("a", p, w, vol).unwrap();
        Scenario::new("one", Platform::new(p, 0.01, 3.0).unwrap(), vec![app]).unwrap()
    }

    /// T2 alone, one instance at full rate from t = 0.
    fn tight(period: f64) -> Pattern {
        let sc = single(64, 76.8, 235.8);
        let inst = InstanceSchedule::new(vec![Segment::new(0.0, 368.4375, 0.64)]);
        Pattern::from_instances(&sc, period, vec![vec![inst]]).unwrap()
    }

    #[test]
    fn empty_pattern_is_valid() {
        let sc = single(64, 76.8, 235.8);
        let p = Pattern::empty(&sc, 123.0);
        assert!(p.validate().is_empty());
        assert_eq!(p.syseff(), 0.0);
        assert_eq!(p.dilation(), f64::INFINITY);
        assert_eq!(p.periodic_efficiency(0), 0.0);
    }

    #[test]
    fn minimal_feasible_pattern() {
        let p = tight(76.8 + 368.4375);
        assert!(p.validate().is_empty(), "{:?}", p.validate());
        let rho = 76.8 / (76.8 + 368.4375);
        assert!((p.periodic_efficiency(0) - rho).abs() < 1e-15);
        assert!((p.syseff() - rho).abs() < 1e-15);
        assert!((p.dilation() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_period_violates_compute_gap() {
        let p = tight(76.8 + 368.4375 - 1.0);
        let v = p.validate();
        assert!(
            v.iter()
                .any(|v| matches!(v, Violation::ComputeGap { gap, .. } if (gap - 75.8).abs() < 1e-9)),
            "{v:?}"
        );
    }

    #[test]
    fn periodic_efficiency_arithmetic() {
        let sc = single(64, 76.8, 235.8);
        let a = InstanceSchedule::new(vec![Segment::new(0.0, 368.4375, 0.64)]);
        let b = InstanceSchedule::new(vec![Segment::new(500.0, 368.4375, 0.64)]);
        let p = Pattern::from_instances(&sc, 1000.0, vec![vec![a, b]]).unwrap();
        assert!((p.periodic_efficiency(0) - 0.1536).abs() < 1e-12);
    }

    #[test]
    fn validate_reports_capacity_rate_and_volume() {
        let pf = Platform::new(640, 0.01, 3.0).unwrap();
        let apps = vec![
            ApplicationSpec::new("x", 512, 10.0, 100.0).unwrap(),
            ApplicationSpec::new("y", 64, 10.0, 10.0).unwrap(),
        ];
        let sc = Scenario::new("s", pf, apps).unwrap();
        let x = InstanceSchedule::new(vec![Segment::new(0.0, 100.0 / 3.0, 3.0)]);
        // y at 1.0 GB/s exceeds its 0.64 cap and overlaps x
        let y = InstanceSchedule::new(vec![Segment::new(0.0, 5.0, 1.0)]);
        let p = Pattern::from_instances(&sc, 100.0, vec![vec![x], vec![y]]).unwrap();
        let v = p.validate();
        assert!(v.iter().any(|v| matches!(v, Violation::Capacity { .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::RateCap { app: 1, .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::Volume { app: 1, .. })));
    }

    #[test]
    fn schedulability_examples() {
        let sc = single(64, 76.8, 235.8);
        assert!(Pattern::empty(&sc, 76.8 + 368.4375).is_schedulable(0));
        assert!(!Pattern::empty(&sc, 76.8 + 368.4375 - 0.5).is_schedulable(0));

        // another application saturates B everywhere except a 60 s gap < w
        let pf = Platform::new(1000, 0.01, 3.0).unwrap();
        let apps = vec![
            ApplicationSpec::new("a", 64, 76.8, 235.8).unwrap(),
            ApplicationSpec::new("hog", 900, 1.0, 3.0 * 940.0).unwrap(),
        ];
        let sc = Scenario::new("s", pf, apps).unwrap();
        let hog = InstanceSchedule::new(vec![Segment::new(0.0, 940.0, 3.0)]);
        let p = Pattern::from_instances(&sc, 1000.0, vec![vec![], vec![hog]]).unwrap();
        assert!(!p.is_schedulable(0));
    }

    #[test]
    fn insertion_window_reserves_compute_on_both_sides() {
        let tio = 368.4375;
        let p = tight(2.0 * (76.8 + tio));
        let w = p.insertion_window(0).unwrap();
        assert!((w.start - (tio + 76.8)).abs() < 1e-9);
        assert!((w.length - tio).abs() < 1e-9);
        assert!(p.is_schedulable(0));
        assert!(!tight(76.8 + tio).is_schedulable(0));
    }

    #[test]
    fn export_round_trip() {
        let p = tight(500.0);
        let json = serde_json::to_string(&p.to_export()).unwrap();
        assert!(json.contains("\"T\":500"));
        let back: PatternExport = serde_json::from_str(&json).unwrap();
        let sc = single(64, 76.8, 235.8);
        assert_eq!(Pattern::from_export(&sc, &back).unwrap(), p);
    }

    #[test]
    fn rotation_keeps_metrics_and_validity() {
        let p = tight(600.0);
        let r = p.rotate(450.0);
        assert!(r.validate().is_empty(), "{:?}", r.validate());
        assert_eq!(r.metrics(), p.metrics());
        assert_eq!(r.usage().used(460.0), 0.64);
        assert_eq!(r.usage().used(10.0), 0.64);
    }
}
