//! Pattern construction and the period search.
//!
//! For a fixed period, [`build_pattern`] greedily adds instances, always to
//! the application with the worst current dilation, until no application can
//! take another instance. [`persched`] runs the builder over geometrically
//! growing periods `T_min · (1+ε)^i ≤ K'·T_min`, keeps the best pattern, then
//! shrinks its period while the work per period is unchanged.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::pattern::{InstanceSchedule, Pattern, ScheduleMetrics};
use crate::profile::{fold, CyclicWindow, Segment};
use crate::tol::{TIME_EPS, VOLUME_REL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Keep the period with the highest system efficiency.
    #[serde(rename = "syseff")]
    MaxSysEff,
    /// Keep the period with the lowest dilation (ties: higher efficiency).
    #[serde(rename = "dilation")]
    MinDilation,
}

/// Order among applications of equal dilation, on `w / tio`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    Asc,
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// `T_max / T_min`.
    pub kprime: f64,
    /// Growth factor of the period between two trials.
    pub epsilon: f64,
    pub objective: Objective,
    pub tiebreak: TieBreak,
    /// Worker threads for the period sweep; 1 runs it inline.
    #[serde(skip, default = "one")]
    pub threads: usize,
}

fn one() -> usize {
    1
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            kprime: 10.0,
            epsilon: 0.01,
            objective: Objective::MaxSysEff,
            tiebreak: TieBreak::Desc,
            threads: 1,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kprime >= 1.0 && self.kprime.is_finite()) {
            return Err(Error::invalid("config", format!("kprime must be at least 1, got {}", self.kprime)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid("config", format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if self.threads == 0 {
            return Err(Error::invalid("config", "threads must be at least 1"));
        }
        Ok(())
    }
}

/// Heap entry; the greatest key is served first: highest dilation, then the
/// tie-break on `w/tio`, then the lowest application index.
#[derive(Debug, Clone, Copy)]
pub struct CandidateKey {
    pub dilation: f64,
    pub ratio: f64,
    pub app: usize,
    tiebreak: TieBreak,
}

impl CandidateKey {
    pub fn of(pattern: &Pattern, k: usize, tiebreak: TieBreak) -> Self {
        let s = &pattern.schedules()[k];
        let tio = s.derived().tio;
        CandidateKey {
            dilation: pattern.app_dilation(k),
            ratio: if tio > 0.0 { s.app().work() / tio } else { f64::INFINITY },
            app: k,
            tiebreak,
        }
    }
}

impl Ord for CandidateKey {
    fn cmp(&self, other: &Self) -> Ordering {
        let ratio = match self.tiebreak {
            TieBreak::Desc => self.ratio.total_cmp(&other.ratio),
            TieBreak::Asc => other.ratio.total_cmp(&self.ratio),
        };
        self.dilation
            .total_cmp(&other.dilation)
            .then(ratio)
            .then(other.app.cmp(&self.app))
    }
}

impl PartialOrd for CandidateKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for CandidateKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for CandidateKey {}

/// Placement of a first instance of `k` with the shortest transfer span,
/// earliest start on ties.
fn place_first(pattern: &Pattern, k: usize) -> Option<InstanceSchedule> {
    let t = pattern.period();
    let s = &pattern.schedules()[k];
    let length = t - s.app().work();
    if length < -TIME_EPS {
        return None;
    }
    let length = length.max(0.0);
    let cap = s.app().rate_cap(pattern.platform());
    let volume = s.app().volume();
    if volume == 0.0 {
        return Some(InstanceSchedule::new(vec![Segment::new(0.0, 0.0, 0.0)]));
    }
    let prefix = pattern.usage().capped_prefix(cap);
    let mut best: Option<(f64, Vec<(f64, f64, f64)>)> = None;
    for c in pattern.first_instance_candidates(k) {
        let window = CyclicWindow::new(c, length, t);
        if prefix.window(window) < volume * (1.0 - VOLUME_REL) - prefix.slack() {
            continue;
        }
        let Some(fill) = pattern.usage().greedy_fill_unrolled(window, cap, volume) else {
            continue;
        };
        let span = fill.last().expect("positive volume").1 - fill[0].0;
        if best.as_ref().is_none_or(|(b, _)| span < b - TIME_EPS) {
            best = Some((span, fill));
        }
    }
    best.map(|(_, fill)| to_instance(fill, t))
}

/// Next instance of `k` inside its insertion window, earliest-first.
fn place_next(pattern: &Pattern, k: usize) -> Option<InstanceSchedule> {
    let t = pattern.period();
    let window = pattern.insertion_window(k)?;
    let s = &pattern.schedules()[k];
    if s.app().volume() == 0.0 {
        return Some(InstanceSchedule::new(vec![Segment::new(window.start, 0.0, 0.0)]));
    }
    let cap = s.app().rate_cap(pattern.platform());
    let fill = pattern.usage().greedy_fill_unrolled(window, cap, s.app().volume())?;
    Some(to_instance(fill, t))
}

fn to_instance(fill: Vec<(f64, f64, f64)>, period: f64) -> InstanceSchedule {
    InstanceSchedule::new(
        fill.into_iter()
            .map(|(a, b, r)| Segment::new(fold(a, period), b - a, r))
            .collect(),
    )
}

fn try_insert(pattern: &mut Pattern, k: usize) -> bool {
    let placed = if pattern.instance_count(k) == 0 {
        place_first(pattern, k)
    } else {
        place_next(pattern, k)
    };
    match placed {
        Some(inst) => {
            pattern
                .push_instance(k, inst)
                .expect("placements respect the residual bandwidth");
            true
        }
        None => false,
    }
}

/// Inserts the first instance of `k` where its transfer is shortest.
/// `None` when no placement fits.
pub fn insert_first_instance(pattern: &Pattern, k: usize) -> Option<Pattern> {
    assert_eq!(pattern.instance_count(k), 0, "application already has an instance");
    let inst = place_first(pattern, k)?;
    let mut next = pattern.clone();
    next.push_instance(k, inst).expect("placement respects the residual bandwidth");
    Some(next)
}

/// Inserts one more instance of `k` right after its last one. `None` when the
/// insertion window cannot hold the volume, which happens exactly when `k`
/// is not schedulable.
pub fn insert_in_schedule(pattern: &Pattern, k: usize) -> Option<Pattern> {
    assert!(pattern.instance_count(k) > 0, "application has no instance yet");
    let inst = place_next(pattern, k)?;
    let mut next = pattern.clone();
    next.push_instance(k, inst).expect("placement respects the residual bandwidth");
    Some(next)
}

/// Fills a pattern of period `period`, serving the application of worst
/// dilation first. An application that fails an insertion is dropped for good:
/// usage only grows, so it can never become schedulable again.
pub fn build_pattern(scenario: &Scenario, period: f64, tiebreak: TieBreak) -> Pattern {
    let mut pattern = Pattern::empty(scenario, period);
    let mut heap: BinaryHeap<CandidateKey> = (0..pattern.app_count())
        .map(|k| CandidateKey::of(&pattern, k, tiebreak))
        .collect();
    let mut dropped = Vec::new();
    while let Some(top) = heap.pop() {
        let k = top.app;
        if try_insert(&mut pattern, k) {
            heap.push(CandidateKey::of(&pattern, k, tiebreak));
        } else {
            dropped.push(k);
        }
    }
    debug_assert!(
        dropped.iter().all(|&k| !pattern.is_schedulable(k)),
        "a dropped application became schedulable again"
    );
    pattern
}

/// Reference builder: every round re-tests all applications and inserts into
/// the schedulable one of worst dilation.
pub fn build_pattern_naive(scenario: &Scenario, period: f64, tiebreak: TieBreak) -> Pattern {
    let mut pattern = Pattern::empty(scenario, period);
    loop {
        let pick = (0..pattern.app_count())
            .filter(|&k| pattern.is_schedulable(k))
            .map(|k| CandidateKey::of(&pattern, k, tiebreak))
            .max();
        let Some(key) = pick else {
            return pattern;
        };
        assert!(try_insert(&mut pattern, key.app), "schedulable application rejected");
    }
}

/// Periods tried by the sweep: `T_min (1+ε)^i` up to `K'·T_min`.
pub fn sweep_periods(scenario: &Scenario, config: &EngineConfig) -> Vec<f64> {
    let t_min = scenario.min_period();
    let t_max = config.kprime * t_min;
    let mut out = Vec::new();
    let mut t = t_min;
    while t <= t_max {
        out.push(t);
        t *= 1.0 + config.epsilon;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub period: f64,
    pub syseff: f64,
    pub dilation: f64,
}

/// One row per period of the sweep, in increasing period order.
pub fn sweep_report(scenario: &Scenario, config: &EngineConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let periods = sweep_periods(scenario, config);
    let row = |&t: &f64| {
        let p = build_pattern(scenario, t, config.tiebreak);
        SweepRow {
            period: t,
            syseff: p.syseff(),
            dilation: p.dilation(),
        }
    };
    Ok(with_threads(config.threads, || {
        if config.threads > 1 {
            periods.par_iter().map(row).collect()
        } else {
            periods.iter().map(row).collect()
        }
    }))
}

fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    if threads <= 1 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Result of [`persched`].
#[derive(Debug, Clone)]
pub struct Schedule {
    pub pattern: Pattern,
    pub metrics: ScheduleMetrics,
    /// Best period found by the sweep, before shrinking.
    pub sweep_period: f64,
    pub sweep_syseff: f64,
    pub sweep_dilation: f64,
    /// Number of periods tried by the sweep.
    pub tried: usize,
    /// Accepted shrink steps.
    pub refinements: usize,
}

/// `true` when `a` beats `b` under `objective`; exact ties keep `b`, the
/// earlier (smaller) period.
fn better(objective: Objective, a: &Pattern, b: &Pattern) -> bool {
    match objective {
        Objective::MaxSysEff => a.syseff() > b.syseff(),
        Objective::MinDilation => match a.dilation().total_cmp(&b.dilation()) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.syseff() > b.syseff(),
        },
    }
}

fn same_work(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Searches the period and returns the best pattern under `config.objective`.
pub fn persched(scenario: &Scenario, config: &EngineConfig) -> Result<Schedule> {
    config.validate()?;
    if scenario.apps().is_empty() {
        return Err(Error::invalid("scenario", "no applications to schedule"));
    }
    let periods = sweep_periods(scenario, config);
    let tried = periods.len();
    let pick = |a: (usize, Pattern), b: (usize, Pattern)| {
        let (first, second) = if a.0 < b.0 { (a, b) } else { (b, a) };
        if better(config.objective, &second.1, &first.1) {
            second
        } else {
            first
        }
    };
    let build = |(i, &t): (usize, &f64)| (i, build_pattern(scenario, t, config.tiebreak));
    let best = with_threads(config.threads, || {
        if config.threads > 1 {
            periods.par_iter().enumerate().map(build).reduce_with(pick)
        } else {
            periods.iter().enumerate().map(build).reduce(pick)
        }
    });
    let (_, best) = best.expect("at least T_min is tried");

    let sweep_period = best.period();
    let sweep_syseff = best.syseff();
    let sweep_dilation = best.dilation();
    let target_work = best.weighted_work();

    // Shrink towards T_opt / (1+ε) in ⌊1/ε⌋ equal steps while the same work
    // still fits.
    let steps = (1.0 / config.epsilon).floor() as usize;
    let step = (sweep_period - sweep_period / (1.0 + config.epsilon)) / steps as f64;
    let mut pattern = best;
    let mut refinements = 0;
    for i in 1..=steps {
        let t = sweep_period - step * i as f64;
        let candidate = build_pattern(scenario, t, config.tiebreak);
        if !same_work(candidate.weighted_work(), target_work) {
            break;
        }
        pattern = candidate;
        refinements += 1;
    }

    Ok(Schedule {
        metrics: pattern.metrics(),
        pattern,
        sweep_period,
        sweep_syseff,
        sweep_dilation,
        tried,
        refinements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::model::{ApplicationSpec, Platform};

    const T2_TIO: f64 = 368.4375;
    const T2_W: f64 = 76.8;

    fn t2_alone() -> Scenario {
        let app = ApplicationSpec::new("T2", 64, T2_W, 235.8).unwrap();
        Scenario::new("t2", Platform::new(64, 0.01, 3.0).unwrap(), vec![app]).unwrap()
    }

    #[test]
    fn candidate_order() {
        let sc = catalog::load_scenario("set2").unwrap();
        let p = Pattern::empty(&sc, 20_000.0);
        let t2 = CandidateKey::of(&p, 0, TieBreak::Desc);
        let ap = CandidateKey::of(&p, 8, TieBreak::Desc);
        // both infinite; AP has the larger w/tio
        assert!(ap > t2);
        let t2 = CandidateKey::of(&p, 0, TieBreak::Asc);
        let ap = CandidateKey::of(&p, 8, TieBreak::Asc);
        assert!(t2 > ap);
        // equal keys: lower index first
        assert!(CandidateKey::of(&p, 0, TieBreak::Desc) > CandidateKey::of(&p, 1, TieBreak::Desc));
    }

    #[test]
    fn first_instance_on_idle_platform_starts_at_zero() {
        let p = Pattern::empty(&t2_alone(), T2_W + T2_TIO);
        let q = insert_first_instance(&p, 0).unwrap();
        let inst = &q.schedules()[0].instances()[0];
        assert_eq!(inst.segments(), &[Segment::new(0.0, T2_TIO, 0.64)]);
    }

    #[test]
    fn first_instance_avoids_saturated_half() {
        let pf = Platform::new(640, 0.01, 3.0).unwrap();
        let t = 1000.0;
        let apps = vec![
            ApplicationSpec::new("T2", 64, T2_W, 235.8).unwrap(),
            ApplicationSpec::new("hog", 512, 1.0, 3.0 * t / 2.0).unwrap(),
        ];
        let sc = Scenario::new("s", pf, apps).unwrap();
        let hog = InstanceSchedule::new(vec![Segment::new(0.0, t / 2.0, 3.0)]);
        let p = Pattern::from_instances(&sc, t, vec![vec![], vec![hog]]).unwrap();
        let q = insert_first_instance(&p, 0).unwrap();
        let inst = &q.schedules()[0].instances()[0];
        assert_eq!(inst.io_start(), t / 2.0);
        assert!((inst.span(t) - T2_TIO).abs() < 1e-9);
    }

    #[test]
    fn first_instance_needs_room_for_compute() {
        let p = Pattern::empty(&t2_alone(), T2_W + T2_TIO - 1.0);
        assert!(insert_first_instance(&p, 0).is_none());
    }

    #[test]
    fn second_instance_fills_the_window_exactly() {
        let t = 2.0 * (T2_W + T2_TIO);
        let p = insert_first_instance(&Pattern::empty(&t2_alone(), t), 0).unwrap();
        let q = insert_in_schedule(&p, 0).unwrap();
        assert_eq!(q.instance_count(0), 2);
        let second = &q.schedules()[0].instances()[1];
        assert!((second.io_start() - (T2_TIO + T2_W)).abs() < 1e-9);
        assert!(q.validate().is_empty(), "{:?}", q.validate());
        assert!(insert_in_schedule(&q, 0).is_none());

        let tight = insert_first_instance(&Pattern::empty(&t2_alone(), T2_W + T2_TIO), 0).unwrap();
        assert!(insert_in_schedule(&tight, 0).is_none());
    }

    #[test]
    fn split_transfer_around_saturated_interval() {
        let pf = Platform::new(640, 0.01, 3.0).unwrap();
        let apps = vec![
            ApplicationSpec::new("a", 100, 10.0, 20.0).unwrap(),
            ApplicationSpec::new("hog", 300, 1.0, 30.0).unwrap(),
        ];
        let sc = Scenario::new("s", pf, apps).unwrap();
        // a: one instance on [0, 20) at 1 GB/s; hog saturates [35, 45)
        let a0 = InstanceSchedule::new(vec![Segment::new(0.0, 20.0, 1.0)]);
        let hog = InstanceSchedule::new(vec![Segment::new(35.0, 10.0, 3.0)]);
        let p = Pattern::from_instances(&sc, 200.0, vec![vec![a0], vec![hog]]).unwrap();
        // window opens at 30: 5 s before the hog, the rest after it
        let q = insert_in_schedule(&p, 0).unwrap();
        let second = &q.schedules()[0].instances()[1];
        assert_eq!(
            second.segments(),
            &[Segment::new(30.0, 5.0, 1.0), Segment::new(45.0, 15.0, 1.0)]
        );
        assert!(q.validate().is_empty(), "{:?}", q.validate());
    }

    #[test]
    fn repeated_tight_instances() {
        let rho = T2_W / (T2_W + T2_TIO);
        let p = build_pattern(&t2_alone(), 3.0 * (T2_W + T2_TIO), TieBreak::Desc);
        assert_eq!(p.instance_count(0), 3);
        assert!((p.periodic_efficiency(0) - rho).abs() < 1e-12);
        assert!(p.validate().is_empty());
    }

    #[test]
    fn set9_at_min_period_is_staggered() {
        let sc = catalog::load_scenario("set9").unwrap();
        let t = sc.min_period();
        assert!((t - 15_690.781_25).abs() < 1e-6);
        let p = build_pattern(&sc, t, TieBreak::Desc);
        assert!(p.validate().is_empty());
        assert!((0..5).all(|k| p.instance_count(k) == 1));
        assert!((p.dilation() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn set1_at_min_period_is_bandwidth_bound() {
        // At T_min the window of every instance is exactly tio long, so each
        // transfer runs at 0.64 GB/s for its whole window. At most
        // ⌊B / 0.64⌋ = 4 can overlap, and l·tio ≤ 4·T bounds l by
        // ⌊4 · 445.2375 / 368.4375⌋ = 4.
        let sc = catalog::load_scenario("set1").unwrap();
        let p = build_pattern(&sc, sc.min_period(), TieBreak::Desc);
        assert!(p.validate().is_empty());
        let bound = (4.0 * sc.min_period() / 368.4375f64).floor() as usize;
        assert_eq!(p.total_instances(), bound);
        assert_eq!(p.dilation(), f64::INFINITY);
    }

    #[test]
    fn single_app_on_all_nodes() {
        let sc = t2_alone();
        let s = persched(&sc, &EngineConfig::default()).unwrap();
        let rho = T2_W / (T2_W + T2_TIO);
        assert_eq!(s.metrics.dilation, 1.0);
        assert!((s.metrics.syseff - rho).abs() < 1e-12);
    }

    #[test]
    fn sweep_row_count_matches_closed_form() {
        let sc = catalog::load_scenario("set1").unwrap();
        let cfg = EngineConfig::default();
        let expected = ((10f64).ln() / (1.01f64).ln()).floor() as usize + 1;
        assert_eq!(expected, 232);
        assert_eq!(sweep_periods(&sc, &cfg).len(), expected);
    }

    #[test]
    fn config_validation() {
        let bad = EngineConfig {
            kprime: 0.5,
            ..EngineConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EngineConfig {
            epsilon: 1.0,
            ..EngineConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_volume_app_packs_compute_phases() {
        let pf = Platform::new(10, 0.01, 3.0).unwrap();
        let app = ApplicationSpec::new("cpu", 10, 10.0, 0.0).unwrap();
        let sc = Scenario::new("z", pf, vec![app]).unwrap();
        let p = build_pattern(&sc, 35.0, TieBreak::Desc);
        assert_eq!(p.instance_count(0), 3);
        assert!(p.validate().is_empty(), "{:?}", p.validate());
    }
}
