//! Finite execution traces: unrolled periodic patterns and the unscheduled
//! fair-share baseline.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::pattern::Pattern;
use crate::report::fmt_sig9;
use crate::tol::{RATE_EPS, TIME_EPS, VOLUME_REL};

/// Time tolerance at absolute time `t`: long traces reach times where
/// `TIME_EPS` is below the float resolution.
fn slack(t: f64) -> f64 {
    TIME_EPS.max(t.abs() * 1e-12)
}

/// One executed instance: its compute phase ends when the transfer starts.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceInstance {
    pub compute_start: f64,
    /// `(start, end, aggregate rate)` in time order.
    pub transfers: Vec<(f64, f64, f64)>,
}

impl TraceInstance {
    pub fn io_start(&self) -> f64 {
        self.transfers.first().map_or(self.compute_start, |t| t.0)
    }

    pub fn io_end(&self) -> f64 {
        self.transfers.last().map_or(self.compute_start, |t| t.1)
    }

    pub fn volume(&self) -> f64 {
        self.transfers.iter().map(|&(a, b, r)| (b - a) * r).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppTrace {
    pub id: String,
    pub procs: u32,
    pub work: f64,
    pub volume: f64,
    /// `r_k`: start of the first compute phase.
    pub release: f64,
    pub instances: Vec<TraceInstance>,
}

impl AppTrace {
    /// `d_k`: end of the last transfer, or the release time if nothing ran.
    pub fn completion(&self) -> f64 {
        self.instances.last().map_or(self.release, TraceInstance::io_end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub units: u32,
    pub node_bandwidth: f64,
    pub io_bandwidth: f64,
    pub apps: Vec<AppTrace>,
    pub horizon: f64,
}

/// Replicates `pattern` `periods` times. The first copy starts one period
/// after time 0, and each application is released at the start of the
/// compute phase preceding its first transfer.
pub fn unroll(pattern: &Pattern, periods: usize) -> Result<Trace> {
    if periods == 0 {
        return Err(Error::invalid("trace", "the number of periods must be at least 1"));
    }
    let t = pattern.period();
    let origin = t;
    let apps = pattern
        .schedules()
        .iter()
        .map(|s| {
            let work = s.app().work();
            let mut instances = Vec::with_capacity(s.instances().len() * periods);
            for copy in 0..periods {
                let mut base = origin + copy as f64 * t;
                let mut previous = f64::NEG_INFINITY;
                for inst in s.instances() {
                    let s0 = inst.io_start();
                    // instances are kept in cyclic order and may wrap past T
                    if s0 < previous {
                        base += t;
                    }
                    previous = s0;
                    let transfers: Vec<_> = inst
                        .segments()
                        .iter()
                        .map(|seg| {
                            let mut a = seg.start;
                            if a < s0 {
                                a += t;
                            }
                            (base + a, base + a + seg.duration, seg.rate)
                        })
                        .collect();
                    instances.push(TraceInstance {
                        compute_start: base + s0 - work,
                        transfers,
                    });
                }
            }
            let release = instances.first().map_or(origin, |i| i.compute_start);
            AppTrace {
                id: s.app().id().to_string(),
                procs: s.app().procs(),
                work,
                volume: s.app().volume(),
                release,
                instances,
            }
        })
        .collect();
    let pf = pattern.platform();
    Ok(Trace {
        units: pf.units(),
        node_bandwidth: pf.node_bandwidth(),
        io_bandwidth: pf.io_bandwidth(),
        apps,
        horizon: origin + (periods + 1) as f64 * t,
    })
}

/// `ρ_k(t) = ν_k(t) w_k / (t − r_k)` where `ν_k(t)` counts the instances whose
/// transfer has completed by `t`.
pub fn actual_efficiency(trace: &Trace, k: usize, t: f64) -> Result<f64> {
    let app = trace
        .apps
        .get(k)
        .ok_or_else(|| Error::invalid("trace", format!("no application at index {k}")))?;
    if t <= app.release {
        return Err(Error::invalid(
            "trace",
            format!("efficiency of `{}` is undefined at t = {t} <= release {}", app.id, app.release),
        ));
    }
    let done = app.instances.partition_point(|i| i.io_end() <= t + slack(t));
    Ok(done as f64 * app.work / (t - app.release))
}

impl Trace {
    /// `ρ_k(d_k)` for every application, or 0 when it never completed an
    /// instance.
    pub fn final_efficiencies(&self) -> Vec<f64> {
        (0..self.apps.len())
            .map(|k| actual_efficiency(self, k, self.apps[k].completion()).unwrap_or(0.0))
            .collect()
    }

    /// `(1/N) Σ p_k ρ_k(d_k)`.
    pub fn syseff(&self) -> f64 {
        let total: f64 = self
            .apps
            .iter()
            .zip(self.final_efficiencies())
            .map(|(a, e)| a.procs as f64 * e)
            .sum();
        total / self.units as f64
    }

    /// Checks the node and global bandwidth limits at every event, and that
    /// every instance moves its full volume without overlapping its
    /// neighbours.
    pub fn check(&self) -> Result<()> {
        let mut deltas = Vec::new();
        for app in &self.apps {
            let cap = app.procs as f64 * self.node_bandwidth;
            let mut previous_end = f64::NEG_INFINITY;
            for (i, inst) in app.instances.iter().enumerate() {
                let eps = slack(inst.io_start());
                if inst.compute_start < previous_end - eps || inst.io_start() - inst.compute_start < app.work - eps {
                    return Err(Error::invalid(
                        "trace",
                        format!("instance {i} of `{}` starts before its compute phase completes", app.id),
                    ));
                }
                let moved = inst.volume();
                if (moved - app.volume).abs() > VOLUME_REL * app.volume.max(1.0) {
                    return Err(Error::invalid(
                        "trace",
                        format!("instance {i} of `{}` moves {moved} GB instead of {}", app.id, app.volume),
                    ));
                }
                for &(a, b, r) in &inst.transfers {
                    if r > cap + RATE_EPS {
                        return Err(Error::invalid(
                            "trace",
                            format!("`{}` transfers at {r} GB/s above its limit {cap}", app.id),
                        ));
                    }
                    if b > a {
                        deltas.push((a, r));
                        deltas.push((b, -r));
                    }
                }
                previous_end = inst.io_end();
            }
        }
        deltas.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
        let mut used = 0.0;
        let mut i = 0;
        while i < deltas.len() {
            let time = deltas[i].0;
            while i < deltas.len() && deltas[i].0 <= time + slack(time) {
                used += deltas[i].1;
                i += 1;
            }
            if used > self.io_bandwidth + RATE_EPS {
                return Err(Error::CapacityExceeded {
                    time,
                    used,
                    capacity: self.io_bandwidth,
                });
            }
        }
        Ok(())
    }

    /// Writes one CSV row per instance: app, instance, compute_start,
    /// io_start, io_end, bytes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["app", "instance", "compute_start", "io_start", "io_end", "bytes"])?;
        for app in &self.apps {
            for (i, inst) in app.instances.iter().enumerate() {
                w.write_record([
                    app.id.clone(),
                    i.to_string(),
                    fmt_sig9(inst.compute_start),
                    fmt_sig9(inst.io_start()),
                    fmt_sig9(inst.io_end()),
                    fmt_sig9(inst.volume() * 1e9),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// How the unscheduled system shares congested bandwidth. Only one rule is
/// modelled: every processor with pending I/O gets `min(b, B / P_active)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum BaselinePolicy {
    #[default]
    FairSharePerProcessor,
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineApp {
    pub id: String,
    pub completed: usize,
    /// `1 − average rate / min(p b, B)` over the completed transfers.
    pub slowdown: f64,
    /// `ρ_k(d_k)`.
    pub efficiency: f64,
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub policy: BaselinePolicy,
    pub trace: Trace,
    pub apps: Vec<BaselineApp>,
    /// `(1/N) Σ p_k ρ_k(d_k)` with every application released at 0.
    pub syseff: f64,
}

enum Phase {
    Compute { until: f64 },
    Transfer { left: f64 },
}

/// Simulates all applications released together at time 0, without any I/O
/// scheduler, until `horizon`. Only instances whose transfer completes by the
/// horizon are kept.
pub fn fair_share_baseline(scenario: &Scenario, horizon: f64) -> Result<BaselineRun> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("baseline", format!("horizon must be positive, got {horizon}")));
    }
    let pf = scenario.platform();
    let apps = scenario.apps();
    let mut phase: Vec<Phase> = apps.iter().map(|a| Phase::Compute { until: a.work() }).collect();
    let mut open: Vec<TraceInstance> = apps
        .iter()
        .map(|_| TraceInstance {
            compute_start: 0.0,
            transfers: Vec::new(),
        })
        .collect();
    let mut done: Vec<Vec<TraceInstance>> = vec![Vec::new(); apps.len()];
    let mut now = 0.0;

    while now < horizon {
        let active: u64 = apps
            .iter()
            .zip(&phase)
            .filter(|(_, ph)| matches!(ph, Phase::Transfer { .. }))
            .map(|(a, _)| a.procs() as u64)
            .sum();
        let per_proc = if active > 0 {
            pf.node_bandwidth().min(pf.io_bandwidth() / active as f64)
        } else {
            0.0
        };
        let rate = |k: usize| apps[k].procs() as f64 * per_proc;

        let mut next = f64::INFINITY;
        for (k, ph) in phase.iter().enumerate() {
            let at = match *ph {
                Phase::Compute { until } => until,
                Phase::Transfer { left } => now + left / rate(k),
            };
            next = next.min(at);
        }
        let dt = next - now;

        for k in 0..apps.len() {
            if let Phase::Transfer { left } = &mut phase[k] {
                let r = rate(k);
                // the finishing transfer ends exactly at `next`; leftovers
                // shorter than the float resolution at `now` would stall
                if now + *left / r <= next {
                    *left = 0.0;
                } else {
                    *left -= r * dt;
                }
                let transfers = &mut open[k].transfers;
                match transfers.last_mut() {
                    Some(last) if last.2 == r && last.1 == now => last.1 = next,
                    _ => transfers.push((now, next, r)),
                }
            }
        }
        now = next;

        for (k, app) in apps.iter().enumerate() {
            let finished_compute = matches!(phase[k], Phase::Compute { until } if until <= now + TIME_EPS);
            let finished_transfer = matches!(phase[k], Phase::Transfer { left } if left <= 1e-12 * app.volume());
            if finished_compute {
                if app.volume() > 0.0 {
                    phase[k] = Phase::Transfer { left: app.volume() };
                    continue;
                }
                open[k].transfers.push((now, now, 0.0));
            } else if !finished_transfer {
                continue;
            }
            let inst = std::mem::replace(
                &mut open[k],
                TraceInstance {
                    compute_start: now,
                    transfers: Vec::new(),
                },
            );
            if now <= horizon {
                done[k].push(inst);
            }
            phase[k] = Phase::Compute { until: now + app.work() };
        }
    }

    let app_traces: Vec<AppTrace> = apps
        .iter()
        .zip(done)
        .map(|(a, instances)| AppTrace {
            id: a.id().to_string(),
            procs: a.procs(),
            work: a.work(),
            volume: a.volume(),
            release: 0.0,
            instances,
        })
        .collect();
    let trace = Trace {
        units: pf.units(),
        node_bandwidth: pf.node_bandwidth(),
        io_bandwidth: pf.io_bandwidth(),
        apps: app_traces,
        horizon,
    };
    let efficiencies = trace.final_efficiencies();
    let summary = trace
        .apps
        .iter()
        .zip(apps)
        .zip(&efficiencies)
        .map(|((t, a), &efficiency)| {
            let busy: f64 = t.instances.iter().map(|i| i.io_end() - i.io_start()).sum();
            let moved: f64 = t.instances.iter().map(TraceInstance::volume).sum();
            let slowdown = if busy > 0.0 {
                (1.0 - moved / busy / a.rate_cap(pf)).max(0.0)
            } else {
                0.0
            };
            BaselineApp {
                id: t.id.clone(),
                completed: t.instances.len(),
                slowdown,
                efficiency,
            }
        })
        .collect();
    Ok(BaselineRun {
        policy: BaselinePolicy::FairSharePerProcessor,
        syseff: trace.syseff(),
        trace,
        apps: summary,
    })
}

/// Default simulated time for the baseline: 200 minimal periods.
pub fn default_horizon(scenario: &Scenario) -> f64 {
    200.0 * scenario.min_period()
}
