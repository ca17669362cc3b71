//! Deterministic event-time CEP kernel.
//!
//! Patterns subscribe to a named input stream and publish complex events to
//! an output stream, so patterns chain into a cascade. A pattern either
//! reacts to each event on its own ([`WindowSpec::PerEvent`]) or aggregates
//! events per key over sliding event-time windows ([`WindowSpec::Sliding`]).
//!
//! Windows are half-open `[end - length, end)` with ends aligned on multiples
//! of the slide. A window fires once the watermark (the largest event time
//! seen minus the lateness allowance) reaches its end. Empty windows never
//! fire. Output order is fixed: patterns in dependency order (registration
//! order among independent patterns), then window end, then key.

mod window;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cell_of, is_empty_value, GridCell, PollutantId, SimpleEvent, DEFAULT_RESOLUTION_DEG};

use window::{Entry, WindowState};

/// Named numeric payload fields of complex events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Value,
    Avg,
    Min,
    Max,
    Count,
    LevelNumber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyBy {
    CellAndPollutant,
    Cell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSpec {
    /// Emits one complex event per accepted input event.
    PerEvent,
    Sliding {
        length_secs: i64,
        slide_secs: i64,
    },
}

impl WindowSpec {
    pub fn tumbling(secs: i64) -> Self {
        WindowSpec::Sliding {
            length_secs: secs,
            slide_secs: secs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Avg,
    Min,
    Max,
    Count,
    /// Largest value in the window plus the pollutant that carries it.
    ArgmaxLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    /// Rejects the empty marker and non-finite values.
    NotEmpty,
    PollutantIs(PollutantId),
    /// `lower <= field < upper`; no upper bound when `upper` is absent.
    Band {
        field: Field,
        lower: f64,
        #[serde(default)]
        upper: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub name: String,
    pub input: String,
    pub output: String,
    pub key_by: KeyBy,
    pub window: WindowSpec,
    /// Field read from input events; simple events expose [`Field::Value`].
    #[serde(default = "default_value_field")]
    pub value_field: Field,
    #[serde(default)]
    pub aggregates: Vec<Aggregate>,
    #[serde(default)]
    pub filters: Vec<Predicate>,
    /// Constant fields stamped on every output event.
    #[serde(default)]
    pub annotate: Vec<(Field, f64)>,
    #[serde(default)]
    pub label: Option<String>,
    /// Precedence for [`Aggregate::ArgmaxLevel`] ties.
    #[serde(default)]
    pub tie_order: Vec<PollutantId>,
}

fn default_value_field() -> Field {
    Field::Value
}

impl PatternSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("pattern '{}': {msg}", self.name)));
        if self.name.is_empty() {
            return Err(Error::Config("pattern name is empty".into()));
        }
        if self.input == self.output {
            return bad("output stream equals input stream");
        }
        if let WindowSpec::Sliding {
            length_secs,
            slide_secs,
        } = self.window
        {
            if length_secs <= 0 || slide_secs <= 0 {
                return bad("window length and emit interval must be > 0");
            }
            if self.aggregates.is_empty() {
                return bad("windowed pattern needs at least one aggregate");
            }
        }
        for f in &self.filters {
            if let Predicate::Band { lower, upper, .. } = f {
                if upper.is_some_and(|u| u <= *lower) || lower.is_nan() {
                    return bad("band needs lower < upper");
                }
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternFile {
    #[serde(default)]
    pattern: Vec<PatternSpec>,
}

/// Parses a TOML pattern file (`[[pattern]]` tables).
pub fn load_patterns(text: &str) -> Result<Vec<PatternSpec>> {
    let file: PatternFile = toml::from_str(text).map_err(|e| Error::Config(format!("pattern file: {e}")))?;
    Ok(file.pattern)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexEvent {
    pub pattern: Arc<str>,
    /// Window end for windowed patterns, input time for per-event ones.
    pub epoch_time: i64,
    pub cell: GridCell,
    pub pollutant: Option<PollutantId>,
    pub fields: Vec<(Field, f64)>,
    pub label: Option<Arc<str>>,
}

impl ComplexEvent {
    pub fn get(&self, field: Field) -> Option<f64> {
        self.fields.iter().find(|(f, _)| *f == field).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Simple(SimpleEvent),
    Complex(ComplexEvent),
}

impl Event {
    pub fn epoch_time(&self) -> i64 {
        match self {
            Event::Simple(e) => e.epoch_time(),
            Event::Complex(e) => e.epoch_time,
        }
    }

    fn pollutant(&self) -> Option<PollutantId> {
        match self {
            Event::Simple(e) => Some(e.pollutant()),
            Event::Complex(e) => e.pollutant,
        }
    }

    fn field(&self, f: Field) -> Option<f64> {
        match (self, f) {
            (Event::Simple(e), Field::Value) => Some(e.value()),
            (Event::Simple(_), _) => None,
            (Event::Complex(e), f) => e.get(f),
        }
    }
}

impl From<SimpleEvent> for Event {
    fn from(e: SimpleEvent) -> Self {
        Event::Simple(e)
    }
}

/// A complex event together with the stream it was published on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Emission {
    pub stream: Arc<str>,
    pub event: ComplexEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternHandle(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub resolution_deg: f64,
    pub lateness_secs: i64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            resolution_deg: DEFAULT_RESOLUTION_DEG,
            lateness_secs: 0,
        }
    }
}

/// Monotone event-time frontier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineClock {
    watermark: i64,
    max_seen: Option<i64>,
    lateness: i64,
}

impl EngineClock {
    fn new(lateness: i64) -> Self {
        EngineClock {
            watermark: i64::MIN,
            max_seen: None,
            lateness,
        }
    }

    pub fn watermark(&self) -> i64 {
        self.watermark
    }

    fn is_late(&self, t: i64) -> bool {
        t < self.watermark
    }

    fn observe(&mut self, t: i64) {
        let max = self.max_seen.map_or(t, |m| m.max(t));
        self.max_seen = Some(max);
        self.advance_to(max.saturating_sub(self.lateness));
    }

    fn advance_to(&mut self, w: i64) {
        self.watermark = self.watermark.max(w);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub events_in: u64,
    pub late_events: u64,
    pub emitted: u64,
}

struct Pattern {
    spec: PatternSpec,
    name: Arc<str>,
    output: Arc<str>,
    label: Option<Arc<str>>,
    windows: Option<WindowState>,
}

impl Pattern {
    fn accepts(&self, event: &Event) -> bool {
        self.spec.filters.iter().all(|f| match f {
            Predicate::NotEmpty => event.field(self.spec.value_field).is_some_and(|v| !is_empty_value(v)),
            Predicate::PollutantIs(p) => event.pollutant() == Some(*p),
            Predicate::Band { field, lower, upper } => event
                .field(*field)
                .is_some_and(|v| v >= *lower && upper.is_none_or(|u| v < u)),
        })
    }

    fn key(&self, cell: GridCell, pollutant: Option<PollutantId>) -> (GridCell, Option<PollutantId>) {
        match self.spec.key_by {
            KeyBy::CellAndPollutant => (cell, pollutant),
            KeyBy::Cell => (cell, None),
        }
    }

    fn stamp(&self, mut fields: Vec<(Field, f64)>) -> Vec<(Field, f64)> {
        for (f, v) in &self.spec.annotate {
            match fields.iter_mut().find(|(g, _)| g == f) {
                Some(slot) => slot.1 = *v,
                None => fields.push((*f, *v)),
            }
        }
        fields
    }
}

/// Single-threaded CEP engine instance.
pub struct Engine {
    config: EngineConfig,
    patterns: Vec<Pattern>,
    /// Pattern indices in dependency order.
    order: Vec<usize>,
    subscribers: HashMap<String, Vec<usize>>,
    clock: EngineClock,
    stats: EngineStats,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field(
                "patterns",
                &self.patterns.iter().map(|p| &p.spec.name).collect::<Vec<_>>(),
            )
            .field("clock", &self.clock)
            .field("stats", &self.stats)
            .finish()
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        if !(config.resolution_deg.is_finite() && config.resolution_deg > 0.0) {
            return Err(Error::Config("grid resolution must be > 0".into()));
        }
        if config.lateness_secs < 0 {
            return Err(Error::Config("lateness allowance must be >= 0".into()));
        }
        Ok(Engine {
            config,
            patterns: Vec::new(),
            order: Vec::new(),
            subscribers: HashMap::new(),
            clock: EngineClock::new(config.lateness_secs),
            stats: EngineStats::default(),
        })
    }

    pub fn register(&mut self, spec: PatternSpec) -> Result<PatternHandle> {
        spec.validate()?;
        if self.patterns.iter().any(|p| p.spec.name == spec.name) {
            return Err(Error::Config(format!("pattern '{}' already registered", spec.name)));
        }
        let order = dependency_order(self.patterns.iter().map(|p| &p.spec).chain([&spec]))?;
        let windows = match spec.window {
            WindowSpec::PerEvent => None,
            WindowSpec::Sliding {
                length_secs,
                slide_secs,
            } => Some(WindowState::new(length_secs, slide_secs)),
        };
        let idx = self.patterns.len();
        self.subscribers.entry(spec.input.clone()).or_default().push(idx);
        self.patterns.push(Pattern {
            name: Arc::from(spec.name.as_str()),
            output: Arc::from(spec.output.as_str()),
            label: spec.label.as_deref().map(Arc::from),
            windows,
            spec,
        });
        self.order = order;
        Ok(PatternHandle(idx))
    }

    pub fn register_all(&mut self, specs: impl IntoIterator<Item = PatternSpec>) -> Result<Vec<PatternHandle>> {
        specs.into_iter().map(|s| self.register(s)).collect()
    }

    pub fn pattern_count(&self) -> usize {
        self.patterns.len()
    }

    pub fn clock(&self) -> EngineClock {
        self.clock
    }

    pub fn watermark(&self) -> i64 {
        self.clock.watermark
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    /// Events currently buffered across all windows.
    pub fn buffered_events(&self) -> usize {
        self.patterns
            .iter()
            .filter_map(|p| p.windows.as_ref())
            .map(WindowState::buffered)
            .sum()
    }

    pub fn active_keys(&self) -> usize {
        self.patterns
            .iter()
            .filter_map(|p| p.windows.as_ref())
            .map(WindowState::active_keys)
            .sum()
    }

    /// Feeds one event into `stream` and returns every complex event it
    /// causes, including those of downstream patterns.
    pub fn on_event(&mut self, stream: &str, event: impl Into<Event>) -> Vec<Emission> {
        let event = event.into();
        let t = event.epoch_time();
        self.stats.events_in += 1;
        if self.clock.is_late(t) {
            self.stats.late_events += 1;
            return Vec::new();
        }
        let mut out = Vec::new();
        self.route(stream, event, &mut out);
        let before = self.clock.watermark;
        self.clock.observe(t);
        if self.clock.watermark > before {
            self.fire(Some(self.clock.watermark), &mut out);
        }
        self.stats.emitted += out.len() as u64;
        out
    }

    /// Advances the watermark to `end_time` and drains every pending window.
    pub fn flush(&mut self, end_time: i64) -> Vec<Emission> {
        let mut out = Vec::new();
        self.clock.advance_to(end_time);
        self.fire(None, &mut out);
        if let Some(last) = out.iter().map(|e| e.event.epoch_time).max() {
            self.clock.advance_to(last);
        }
        self.stats.emitted += out.len() as u64;
        out
    }

    fn event_cell(&self, event: &Event) -> GridCell {
        match event {
            Event::Simple(e) => {
                cell_of(e.location(), self.config.resolution_deg).expect("validated location and resolution")
            }
            Event::Complex(e) => e.cell,
        }
    }

    fn route(&mut self, stream: &str, event: Event, out: &mut Vec<Emission>) {
        let mut queue: VecDeque<(Arc<str>, Event)> = VecDeque::new();
        queue.push_back((Arc::from(stream), event));
        while let Some((stream, event)) = queue.pop_front() {
            let Some(subs) = self.subscribers.get(&*stream) else {
                continue;
            };
            let cell = self.event_cell(&event);
            for &idx in subs {
                let p = &mut self.patterns[idx];
                if !p.accepts(&event) {
                    continue;
                }
                let pollutant = event.pollutant();
                match p.windows.as_mut() {
                    Some(w) => {
                        let Some(value) = event.field(p.spec.value_field) else {
                            continue;
                        };
                        let key = match p.spec.key_by {
                            KeyBy::CellAndPollutant => (cell, pollutant),
                            KeyBy::Cell => (cell, None),
                        };
                        w.insert(
                            key,
                            Entry {
                                t: event.epoch_time(),
                                value,
                                pollutant,
                            },
                        );
                    }
                    None => {
                        let fields = match &event {
                            Event::Simple(e) => vec![(Field::Value, e.value())],
                            Event::Complex(c) => c.fields.clone(),
                        };
                        let ce = ComplexEvent {
                            pattern: p.name.clone(),
                            epoch_time: event.epoch_time(),
                            cell,
                            pollutant,
                            fields: p.stamp(fields),
                            label: p.label.clone(),
                        };
                        out.push(Emission {
                            stream: p.output.clone(),
                            event: ce.clone(),
                        });
                        queue.push_back((p.output.clone(), Event::Complex(ce)));
                    }
                }
            }
        }
    }

    fn fire(&mut self, limit: Option<i64>, out: &mut Vec<Emission>) {
        for pos in 0..self.order.len() {
            let idx = self.order[pos];
            loop {
                let p = &mut self.patterns[idx];
                let Some(w) = p.windows.as_mut() else { break };
                let Some(closed) = w.close_next(limit, &p.spec.aggregates, &p.spec.tie_order) else {
                    break;
                };
                let Some(closed) = closed else { continue };
                let (cell, key_pollutant) = p.key(closed.key.0, closed.key.1);
                let ce = ComplexEvent {
                    pattern: p.name.clone(),
                    epoch_time: closed.end,
                    cell,
                    pollutant: closed.dominant.or(key_pollutant),
                    fields: p.stamp(closed.fields),
                    label: p.label.clone(),
                };
                let stream = p.output.clone();
                out.push(Emission {
                    stream: stream.clone(),
                    event: ce.clone(),
                });
                self.route(&stream, Event::Complex(ce), out);
            }
        }
    }
}

/// Topological order of patterns over the stream graph (B after A when B
/// reads A's output); registration order breaks ties. Fails on cycles.
fn dependency_order<'a>(specs: impl Iterator<Item = &'a PatternSpec>) -> Result<Vec<usize>> {
    let specs: Vec<&PatternSpec> = specs.collect();
    let n = specs.len();
    let mut indegree = vec![0usize; n];
    let mut edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (a, sa) in specs.iter().enumerate() {
        for (b, sb) in specs.iter().enumerate() {
            if sb.input == sa.output {
                edges[a].push(b);
                indegree[b] += 1;
            }
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &j in &edges[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.insert(j);
            }
        }
    }
    if order.len() != n {
        let stuck: Vec<&str> = (0..n)
            .filter(|i| !order.contains(i))
            .map(|i| specs[i].name.as_str())
            .collect();
        return Err(Error::Config(format!(
            "cycle in stream graph through {}",
            stuck.join(", ")
        )));
    }
    Ok(order)
}
