use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use crate::model::{GridCell, PollutantId};

use super::{Aggregate, Field};

pub(super) type Key = (GridCell, Option<PollutantId>);

#[derive(Debug, Clone, Copy)]
pub(super) struct Entry {
    pub t: i64,
    pub value: f64,
    pub pollutant: Option<PollutantId>,
}

#[derive(Debug, Default)]
struct KeyState {
    entries: VecDeque<Entry>,
    pending: Option<i64>,
}

/// Result of closing one window.
pub(super) struct Closed {
    pub end: i64,
    pub key: Key,
    pub fields: Vec<(Field, f64)>,
    pub dominant: Option<PollutantId>,
}

/// Keyed sliding-window buffers with a timer queue of pending window ends.
/// Windows are `[end - length, end)` with ends on multiples of `slide`.
#[derive(Debug)]
pub(super) struct WindowState {
    length: i64,
    slide: i64,
    keys: HashMap<Key, KeyState>,
    timers: BinaryHeap<Reverse<(i64, Key)>>,
}

/// Smallest multiple of `slide` strictly greater than `t`.
pub(super) fn first_end_after(t: i64, slide: i64) -> i64 {
    (t.div_euclid(slide) + 1) * slide
}

impl WindowState {
    pub fn new(length: i64, slide: i64) -> Self {
        WindowState {
            length,
            slide,
            keys: HashMap::new(),
            timers: BinaryHeap::new(),
        }
    }

    pub fn insert(&mut self, key: Key, entry: Entry) {
        let state = self.keys.entry(key).or_default();
        match state.entries.back() {
            Some(last) if last.t > entry.t => {
                let at = state.entries.partition_point(|e| e.t <= entry.t);
                state.entries.insert(at, entry);
            }
            _ => state.entries.push_back(entry),
        }
        let candidate = first_end_after(entry.t, self.slide);
        if state.pending.is_none_or(|p| candidate < p) {
            state.pending = Some(candidate);
            self.timers.push(Reverse((candidate, key)));
        }
    }

    pub fn buffered(&self) -> usize {
        self.keys.values().map(|k| k.entries.len()).sum()
    }

    pub fn active_keys(&self) -> usize {
        self.keys.len()
    }

    pub fn next_due(&mut self) -> Option<i64> {
        // discard stale timers
        while let Some(Reverse((end, key))) = self.timers.peek() {
            if self.keys.get(key).and_then(|k| k.pending) == Some(*end) {
                return Some(*end);
            }
            self.timers.pop();
        }
        None
    }

    /// Closes the earliest pending window if its end is `<= limit`
    /// (any end when `limit` is `None`).
    pub fn close_next(
        &mut self,
        limit: Option<i64>,
        aggregates: &[Aggregate],
        tie_order: &[PollutantId],
    ) -> Option<Option<Closed>> {
        let end = self.next_due()?;
        if limit.is_some_and(|l| end > l) {
            return None;
        }
        let Reverse((_, key)) = self.timers.pop().expect("peeked");
        let state = self.keys.get_mut(&key).expect("timer refers to live key");
        let start = end - self.length;
        let window: Vec<Entry> = state
            .entries
            .iter()
            .filter(|e| e.t >= start && e.t < end)
            .copied()
            .collect();

        let next_end = end + self.slide;
        while state.entries.front().is_some_and(|e| e.t < next_end - self.length) {
            state.entries.pop_front();
        }
        match state.entries.front() {
            Some(front) => {
                let next = next_end.max(first_end_after(front.t, self.slide));
                state.pending = Some(next);
                self.timers.push(Reverse((next, key)));
            }
            None => {
                self.keys.remove(&key);
            }
        }

        if window.is_empty() {
            return Some(None);
        }
        let (fields, dominant) = summarize(&window, aggregates, tie_order);
        Some(Some(Closed {
            end,
            key,
            fields,
            dominant,
        }))
    }
}

/// Neumaier-compensated mean.
pub(super) fn stable_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp, mut n) = (0.0f64, 0.0f64, 0usize);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
        n += 1;
    }
    (sum + comp) / n as f64
}

fn rank(p: Option<PollutantId>, order: &[PollutantId]) -> (usize, Option<PollutantId>) {
    let pos = p
        .and_then(|p| order.iter().position(|o| *o == p))
        .unwrap_or(order.len());
    (pos, p)
}

fn summarize(
    window: &[Entry],
    aggregates: &[Aggregate],
    tie_order: &[PollutantId],
) -> (Vec<(Field, f64)>, Option<PollutantId>) {
    let mut fields = Vec::with_capacity(aggregates.len());
    let mut dominant = None;
    for agg in aggregates {
        match agg {
            Aggregate::Avg => fields.push((Field::Avg, stable_mean(window.iter().map(|e| e.value)))),
            Aggregate::Min => fields.push((Field::Min, window.iter().map(|e| e.value).fold(f64::INFINITY, f64::min))),
            Aggregate::Max => fields.push((
                Field::Max,
                window.iter().map(|e| e.value).fold(f64::NEG_INFINITY, f64::max),
            )),
            Aggregate::Count => fields.push((Field::Count, window.len() as f64)),
            Aggregate::ArgmaxLevel => {
                let best = window
                    .iter()
                    .min_by(|a, b| {
                        b.value
                            .total_cmp(&a.value)
                            .then(rank(a.pollutant, tie_order).cmp(&rank(b.pollutant, tie_order)))
                    })
                    .expect("non-empty window");
                fields.push((Field::LevelNumber, best.value));
                dominant = best.pollutant;
            }
        }
    }
    (fields, dominant)
}
