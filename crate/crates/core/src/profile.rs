//! Cyclic piecewise-constant bandwidth profiles.
//!
//! A [`StepProfile`] records the aggregate bandwidth in use at every instant of
//! a period `[0, T)`. All queries are exact over pieces: integrals are sums of
//! `width × value`, never quadratures.
//!
//! Times inside a [`CyclicWindow`] are reported *unrolled*: they run from
//! `window.start` to `window.start + window.length` and may exceed `T` when
//! the window wraps. [`Segment::start`] is always folded back into `[0, T)`.

use std::collections::BTreeMap;
use std::ops::Bound::{Excluded, Unbounded};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tol::{RATE_EPS, TIME_EPS, VOLUME_REL};

/// Values closer than this are merged when canonicalizing.
const VALUE_EPS: f64 = 1e-12;

/// Constant-rate I/O transfer. `rate` is the aggregate bandwidth of the
/// application (all its processors together). May wrap across the period end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub duration: f64,
    pub rate: f64,
}

impl Segment {
    pub fn new(start: f64, duration: f64, rate: f64) -> Self {
        Segment {
            start,
            duration,
            rate,
        }
    }

    pub fn volume(&self) -> f64 {
        self.duration * self.rate
    }

    /// Splits the segment into at most two linear intervals inside `[0, period)`.
    pub fn linear_parts(&self, period: f64) -> impl Iterator<Item = (f64, f64)> {
        let end = self.start + self.duration;
        let first = (self.start, end.min(period));
        let second = (end > period).then(|| (0.0, (end - period).min(self.start)));
        std::iter::once(first).chain(second).filter(|(a, b)| b > a)
    }
}

/// A stretch of the circle `[0, T)` starting at `start`, possibly wrapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclicWindow {
    pub start: f64,
    pub length: f64,
}

impl CyclicWindow {
    /// Builds a window, folding `start` into `[0, period)` and clamping the
    /// length into `[0, period]`.
    pub fn new(start: f64, length: f64, period: f64) -> Self {
        CyclicWindow {
            start: fold(start, period),
            length: length.clamp(0.0, period),
        }
    }

    pub fn whole(period: f64) -> Self {
        CyclicWindow {
            start: 0.0,
            length: period,
        }
    }

    pub fn end(&self) -> f64 {
        self.start + self.length
    }
}

/// Folds `t` into `[0, period)`.
pub fn fold(t: f64, period: f64) -> f64 {
    let r = t.rem_euclid(period);
    // rem_euclid can round up to exactly `period`, and -0.0 must not leak into keys
    if r >= period || r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Map key for non-negative finite times; the bit pattern of a non-negative
/// f64 orders like the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Key(u64);

impl Key {
    fn of(t: f64) -> Self {
        debug_assert!(t >= 0.0 && t.is_finite(), "bad time {t}");
        Key(if t == 0.0 { 0 } else { t.to_bits() })
    }

    fn time(self) -> f64 {
        f64::from_bits(self.0)
    }
}

/// See [`StepProfile::capped_prefix`]. Values carry the rounding of a long
/// running sum; [`CappedPrefix::slack`] bounds it.
#[derive(Debug, Clone)]
pub struct CappedPrefix {
    period: f64,
    starts: Vec<f64>,
    rates: Vec<f64>,
    cum: Vec<f64>,
    total: f64,
}

impl CappedPrefix {
    /// Integral over `[0, x)` for unrolled `x` in `[0, 2T]`.
    fn at(&self, x: f64) -> f64 {
        let (base, r) = if x >= self.period {
            (self.total, (x - self.period).min(self.period))
        } else {
            (0.0, x)
        };
        let i = self.starts.partition_point(|&s| s <= r).max(1) - 1;
        base + self.cum[i] + (r - self.starts[i]) * self.rates[i]
    }

    pub fn window(&self, window: CyclicWindow) -> f64 {
        self.at(window.start + window.length) - self.at(window.start)
    }

    /// Absolute error bound for [`window`](Self::window).
    pub fn slack(&self) -> f64 {
        1e-9 * (self.total + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepProfile {
    period: f64,
    capacity: f64,
    /// Piece start → used bandwidth until the next start. Always holds key 0.
    pieces: BTreeMap<Key, f64>,
}

impl StepProfile {
    /// Empty profile over `[0, period)` with global bandwidth `capacity`.
    pub fn new(period: f64, capacity: f64) -> Self {
        assert!(period > 0.0 && period.is_finite(), "period must be positive");
        let mut pieces = BTreeMap::new();
        pieces.insert(Key(0), 0.0);
        StepProfile {
            period,
            capacity,
            pieces,
        }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.len() == 1 && self.pieces[&Key(0)] == 0.0
    }

    /// Bandwidth in use at `t` (folded into the period).
    pub fn used(&self, t: f64) -> f64 {
        let t = fold(t, self.period);
        *self
            .pieces
            .range(..=Key::of(t))
            .next_back()
            .expect("key 0 is always present")
            .1
    }

    /// Bandwidth still available at `t`: `B − used(t)`, clamped at 0.
    pub fn residual(&self, t: f64) -> f64 {
        (self.capacity - self.used(t)).max(0.0)
    }

    /// Pieces `(start, end, used)` covering `[0, T)` in order.
    pub fn pieces(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.pieces.len());
        self.for_each_piece(CyclicWindow::whole(self.period), |a, b, v| {
            out.push((a, b, v));
            ControlFlow::<()>::Continue(())
        });
        out
    }

    /// Highest usage anywhere in the period.
    pub fn peak(&self) -> f64 {
        self.pieces.values().copied().fold(0.0, f64::max)
    }

    /// Visits the pieces intersecting `window` in traversal order, with
    /// unrolled bounds clipped to the window.
    fn for_each_piece<B>(&self, window: CyclicWindow, mut f: impl FnMut(f64, f64, f64) -> ControlFlow<B>) -> Option<B> {
        let t = self.period;
        let start = window.start;
        let end = window.end();
        let parts = [(start, end.min(t), 0.0), (0.0, (end - t).max(0.0).min(start), t)];
        for (lo, hi, offset) in parts {
            if hi <= lo {
                continue;
            }
            let mut cur_start = lo;
            let mut cur_val = *self.pieces.range(..=Key::of(lo)).next_back().expect("key 0").1;
            for (&k, &v) in self.pieces.range((Excluded(Key::of(lo)), Unbounded)) {
                let kt = k.time();
                if kt >= hi {
                    break;
                }
                if let ControlFlow::Break(b) = f(cur_start + offset, kt + offset, cur_val) {
                    return Some(b);
                }
                cur_start = kt;
                cur_val = v;
            }
            if let ControlFlow::Break(b) = f(cur_start + offset, hi + offset, cur_val) {
                return Some(b);
            }
        }
        None
    }

    /// Running integral of `min(cap, residual)` over the period, to evaluate
    /// many windows in `O(log S)` each.
    pub fn capped_prefix(&self, cap: f64) -> CappedPrefix {
        let mut starts = Vec::with_capacity(self.pieces.len());
        let mut rates = Vec::with_capacity(self.pieces.len());
        let mut cum = Vec::with_capacity(self.pieces.len());
        let mut total = 0.0;
        self.for_each_piece(CyclicWindow::whole(self.period), |a, b, used| {
            let rate = self.available(used, cap);
            starts.push(a);
            rates.push(rate);
            cum.push(total);
            total += (b - a) * rate;
            ControlFlow::<()>::Continue(())
        });
        CappedPrefix {
            period: self.period,
            starts,
            rates,
            cum,
            total,
        }
    }

    /// `∫_window min(cap, residual(t)) dt`.
    pub fn integrate_capped(&self, window: CyclicWindow, cap: f64) -> f64 {
        let mut total = 0.0;
        self.for_each_piece(window, |a, b, used| {
            let rate = self.available(used, cap);
            total += (b - a) * rate;
            ControlFlow::<()>::Continue(())
        });
        total
    }

    fn available(&self, used: f64, cap: f64) -> f64 {
        let r = (self.capacity - used).min(cap);
        if r < RATE_EPS {
            0.0
        } else {
            r
        }
    }

    /// Places `volume` earliest-first inside `window`, using in every piece the
    /// rate `min(cap, residual)`. Returns `None` when the window cannot hold
    /// the volume. The returned segments may be non-contiguous.
    pub fn greedy_fill(&self, window: CyclicWindow, cap: f64, volume: f64) -> Option<Vec<Segment>> {
        self.greedy_fill_unrolled(window, cap, volume)
            .map(|segs| segs.into_iter().map(|(a, b, r)| Segment::new(fold(a, self.period), b - a, r)).collect())
    }

    /// [`greedy_fill`](Self::greedy_fill) with unrolled `(start, end, rate)` triples.
    pub(crate) fn greedy_fill_unrolled(&self, window: CyclicWindow, cap: f64, volume: f64) -> Option<Vec<(f64, f64, f64)>> {
        let mut out: Vec<(f64, f64, f64)> = Vec::new();
        if volume <= 0.0 {
            return Some(out);
        }
        let done = volume * 1e-12;
        let mut left = volume;
        self.for_each_piece(window, |a, b, used| {
            let rate = self.available(used, cap);
            if rate == 0.0 || b <= a {
                return ControlFlow::Continue(());
            }
            let needed = left / rate;
            let (end, finished) = if needed >= b - a || b - (a + needed) < TIME_EPS {
                left -= (b - a) * rate;
                (b, left <= done)
            } else {
                left = 0.0;
                (a + needed, true)
            };
            match out.last_mut() {
                Some(last) if last.1 == a && last.2 == rate => last.1 = end,
                _ => out.push((a, end, rate)),
            }
            if finished {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        });
        if left > VOLUME_REL * volume {
            None
        } else {
            Some(out)
        }
    }

    /// Breakpoints of the residual inside `window`, plus both window ends,
    /// unrolled and in traversal order.
    pub fn events_in(&self, window: CyclicWindow) -> Vec<f64> {
        let mut out = vec![window.start];
        let mut prev: Option<f64> = None;
        self.for_each_piece(window, |a, _b, v| {
            if let Some(p) = prev {
                if p != v {
                    out.push(a);
                }
            }
            prev = Some(v);
            ControlFlow::<()>::Continue(())
        });
        if window.length > 0.0 {
            out.push(window.end());
        }
        out
    }

    /// Times in `[0, T)` where the usage changes value, cyclically. The
    /// artificial piece start at 0 is reported only when it is a real change.
    pub fn breakpoints(&self) -> Vec<f64> {
        let last = *self.pieces.values().next_back().expect("key 0");
        let first = self.pieces[&Key(0)];
        let mut out: Vec<f64> = self.pieces.keys().skip(1).map(|k| k.time()).collect();
        if first != last {
            out.insert(0, 0.0);
        }
        out
    }

    /// Returns a new profile with `segments` superposed.
    pub fn add_usage(&self, segments: &[Segment]) -> Result<StepProfile> {
        let mut next = self.clone();
        next.apply(segments, 1.0)?;
        Ok(next)
    }

    /// Returns a new profile with `segments` withdrawn.
    pub fn remove_usage(&self, segments: &[Segment]) -> Result<StepProfile> {
        let mut next = self.clone();
        next.apply(segments, -1.0)?;
        Ok(next)
    }

    /// In-place superposition; the profile is left untouched on error.
    pub(crate) fn apply(&mut self, segments: &[Segment], sign: f64) -> Result<()> {
        if sign > 0.0 {
            // checking all parts first keeps the operation atomic; segments of
            // one instance never overlap each other
            for seg in segments {
                for (a, b) in seg.linear_parts(self.period) {
                    let (a, b) = (self.snap(a), self.snap(b));
                    if b <= a {
                        continue;
                    }
                    let (time, used) = self.max_used(a, b);
                    if used + seg.rate > self.capacity + RATE_EPS {
                        return Err(Error::CapacityExceeded {
                            time,
                            used: used + seg.rate,
                            capacity: self.capacity,
                        });
                    }
                }
            }
        }
        for seg in segments {
            for (a, b) in seg.linear_parts(self.period) {
                self.add_linear(a, b, sign * seg.rate);
            }
        }
        Ok(())
    }

    /// Superposes without checking the capacity.
    pub(crate) fn superpose(&mut self, segments: &[Segment]) {
        for seg in segments {
            for (a, b) in seg.linear_parts(self.period) {
                self.add_linear(a, b, seg.rate);
            }
        }
    }

    /// Highest usage over the linear range `[a, b)` and where it starts.
    fn max_used(&self, a: f64, b: f64) -> (f64, f64) {
        let (ka, kb) = (Key::of(a), Key::of(b));
        let mut best = (a, *self.pieces.range(..=ka).next_back().expect("key 0").1);
        for (k, &v) in self.pieces.range((Excluded(ka), Excluded(kb))) {
            if v > best.1 {
                best = (k.time(), v);
            }
        }
        best
    }

    fn split_at(&mut self, t: f64) {
        if t <= 0.0 || t >= self.period {
            return;
        }
        let k = Key::of(t);
        if !self.pieces.contains_key(&k) {
            let v = *self.pieces.range(..k).next_back().expect("key 0").1;
            self.pieces.insert(k, v);
        }
    }

    /// Moves `t` onto an existing breakpoint (or a period end) closer than
    /// `TIME_EPS`, so that rounding in unrolled arithmetic never creates
    /// sliver pieces.
    fn snap(&self, t: f64) -> f64 {
        if t <= TIME_EPS {
            return 0.0;
        }
        if t >= self.period - TIME_EPS {
            return self.period;
        }
        let k = Key::of(t);
        let below = self.pieces.range(..=k).next_back().map(|(k, _)| k.time());
        let above = self.pieces.range(k..).next().map(|(k, _)| k.time());
        [below, above]
            .into_iter()
            .flatten()
            .filter(|&x| (x - t).abs() < TIME_EPS)
            .min_by(|x, y| (x - t).abs().total_cmp(&(y - t).abs()))
            .unwrap_or(t)
    }

    fn add_linear(&mut self, a: f64, b: f64, delta: f64) {
        let (a, b) = (self.snap(a), self.snap(b));
        if b <= a {
            return;
        }
        self.split_at(a);
        self.split_at(b);
        let (ka, kb) = (Key::of(a), Key::of(b));
        for (_, v) in self.pieces.range_mut(ka..kb) {
            let nv = *v + delta;
            *v = if nv.abs() < VALUE_EPS { 0.0 } else { nv };
        }
        self.merge_at(kb);
        self.merge_at(ka);
    }

    /// Drops the piece start `k` when it continues the previous value.
    fn merge_at(&mut self, k: Key) {
        if k.0 == 0 {
            return;
        }
        let Some(&v) = self.pieces.get(&k) else {
            return;
        };
        let prev = *self.pieces.range(..k).next_back().expect("key 0").1;
        if (prev - v).abs() <= VALUE_EPS {
            self.pieces.remove(&k);
        }
    }

    /// Piecewise comparison with tolerances on times and values.
    pub fn approx_eq(&self, other: &StepProfile, time_tol: f64, value_tol: f64) -> bool {
        if (self.period - other.period).abs() > time_tol || self.pieces.len() != other.pieces.len() {
            return false;
        }
        self.pieces
            .iter()
            .zip(&other.pieces)
            .all(|((ka, va), (kb, vb))| (ka.time() - kb.time()).abs() <= time_tol && (va - vb).abs() <= value_tol)
    }
}
