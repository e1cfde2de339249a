//! Seeded generator of labeled sensor traces with planted boundary patterns.
//!
//! Each activity is preceded by a gap of background events. The last events
//! before the activity are the leading part of the class's begin pattern and
//! the activity's first event is its final symbol, so a begin detector looking
//! at the `n` events ending at the first activity event sees the full pattern.
//! The activity body is drawn from the class's body sensors and closes with
//! the class's end pattern, the activity's last event being the pattern's last.

use chrono::{Duration, NaiveDateTime};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::ingest::{BoundaryMark, SensorEvent};

/// Inclusive numeric range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span<T> {
    pub min: T,
    pub max: T,
}

impl<T: PartialOrd + Copy> Span<T> {
    pub fn new(min: T, max: T) -> Self {
        Self { min, max }
    }

    fn valid(&self) -> bool {
        self.min <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    /// Begin pattern; all but the last symbol precede the activity.
    pub begin: Vec<String>,
    /// End pattern; the activity's final events.
    pub end: Vec<String>,
    /// Body sensors, drawn uniformly.
    pub body: Vec<String>,
    /// Onset-to-end duration in seconds, drawn uniformly.
    pub duration_s: Span<f64>,
    /// Mean spacing of body events in seconds; sets how many body events an
    /// activity of a given duration has.
    pub body_interval_s: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub classes: Vec<ClassSpec>,
    pub gap_sensors: Vec<String>,
    /// Background events between activities (not counting begin-pattern lead-in).
    pub gap_events: Span<usize>,
    /// Spacing of background events, seconds.
    pub gap_interval_s: Span<f64>,
    pub n_activities: usize,
    pub start: NaiveDateTime,
}

impl GeneratorSpec {
    /// `n_classes` classes with disjoint sensors, three-event begin and end
    /// patterns, and class-specific duration ranges (class `c` lasts between
    /// `150·(c+1)` and `300·(c+1)` seconds).
    pub fn well_separated(n_classes: usize, n_activities: usize) -> Self {
        let classes = (0..n_classes)
            .map(|c| {
                let base = 150.0 * (c + 1) as f64;
                ClassSpec {
                    name: format!("Activity{c}"),
                    begin: (0..3).map(|j| format!("B{c}{j}")).collect(),
                    end: (0..3).map(|j| format!("E{c}{j}")).collect(),
                    body: (0..4).map(|j| format!("M{c}{j}")).collect(),
                    duration_s: Span::new(base, 2.0 * base),
                    body_interval_s: 20.0,
                    weight: 1.0,
                }
            })
            .collect();
        Self {
            classes,
            gap_sensors: (0..6).map(|j| format!("G{j:02}")).collect(),
            gap_events: Span::new(4, 12),
            gap_interval_s: Span::new(5.0, 30.0),
            n_activities,
            start: chrono::NaiveDate::from_ymd_opt(2011, 6, 15)
                .expect("valid date")
                .and_hms_opt(0, 0, 0)
                .expect("valid time"),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidSpec(m));
        if self.classes.is_empty() {
            return bad("at least one class is required".into());
        }
        if self.gap_sensors.is_empty() {
            return bad("gap_sensors must not be empty".into());
        }
        if !self.gap_events.valid() || !self.gap_interval_s.valid() || self.gap_interval_s.min <= 0.0 {
            return bad("gap ranges must satisfy 0 < min <= max".into());
        }
        for c in &self.classes {
            if c.name.is_empty() || c.name.contains(char::is_whitespace) || c.name == crate::ingest::OTHER_CLASS {
                return bad(format!("invalid class name {:?}", c.name));
            }
            if c.begin.is_empty() || c.end.is_empty() || c.body.is_empty() {
                return bad(format!("class {}: begin, end and body must be non-empty", c.name));
            }
            let sensors = c.begin.iter().chain(&c.end).chain(&c.body).chain(&self.gap_sensors);
            if sensors.clone().any(|s| s.is_empty() || s.contains(char::is_whitespace)) {
                return bad(format!("class {}: sensor ids must be non-empty single tokens", c.name));
            }
            if !c.duration_s.valid() || c.duration_s.min <= 0.0 {
                return bad(format!("class {}: duration range must satisfy 0 < min <= max", c.name));
            }
            if !(c.body_interval_s > 0.0) || !(c.weight > 0.0) {
                return bad(format!("class {}: body_interval_s and weight must be positive", c.name));
            }
        }
        Ok(())
    }
}

/// Ground truth for one planted activity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedActivity {
    pub class: String,
    pub first_index: usize,
    pub last_index: usize,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrace {
    pub events: Vec<SensorEvent>,
    pub activities: Vec<PlantedActivity>,
}

fn value_for(sensor: &str) -> &'static str {
    if sensor.starts_with('D') {
        "OPEN"
    } else {
        "ON"
    }
}

fn millis(seconds: f64) -> Duration {
    Duration::milliseconds((seconds * 1000.0).round() as i64)
}

pub fn generate_synthetic(spec: &GeneratorSpec, seed: u64) -> Result<SyntheticTrace, EvalError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<SensorEvent> = Vec::new();
    let mut activities = Vec::new();
    let mut now = spec.start;
    let total_weight: f64 = spec.classes.iter().map(|c| c.weight).sum();

    let step = |rng: &mut ChaCha8Rng, now: &mut NaiveDateTime| {
        *now += millis(rng.random_range(spec.gap_interval_s.min..=spec.gap_interval_s.max));
    };
    let gap = |rng: &mut ChaCha8Rng, now: &mut NaiveDateTime, events: &mut Vec<SensorEvent>| {
        let n = rng.random_range(spec.gap_events.min..=spec.gap_events.max);
        for _ in 0..n {
            step(rng, now);
            let sensor = spec.gap_sensors.choose(rng).expect("non-empty");
            events.push(SensorEvent::new(*now, sensor.as_str(), value_for(sensor)));
        }
    };

    for _ in 0..spec.n_activities {
        gap(&mut rng, &mut now, &mut events);
        let mut pick = rng.random_range(0.0..total_weight);
        let class = spec
            .classes
            .iter()
            .find(|c| {
                pick -= c.weight;
                pick < 0.0
            })
            .unwrap_or_else(|| spec.classes.last().expect("non-empty"));

        let (lead, onset) = class.begin.split_at(class.begin.len() - 1);
        for sensor in lead {
            step(&mut rng, &mut now);
            events.push(SensorEvent::new(now, sensor.as_str(), value_for(sensor)));
        }
        step(&mut rng, &mut now);

        let duration_ms = (rng.random_range(class.duration_s.min..=class.duration_s.max) * 1000.0).round() as i64;
        let n_body = ((duration_ms as f64 / 1000.0) / class.body_interval_s).round().max(1.0) as usize;
        let mut sensors: Vec<&str> = Vec::with_capacity(1 + n_body + class.end.len());
        sensors.push(onset[0].as_str());
        for _ in 0..n_body {
            sensors.push(class.body.choose(&mut rng).expect("non-empty"));
        }
        sensors.extend(class.end.iter().map(String::as_str));

        let onset_time = now;
        let last = sensors.len() - 1;
        let first_index = events.len();
        for (j, sensor) in sensors.iter().enumerate() {
            let offset_ms = if j == 0 {
                0
            } else if j == last {
                duration_ms
            } else {
                let jitter: f64 = rng.random_range(-0.4..0.4);
                ((j as f64 + jitter) / last as f64 * duration_ms as f64).round() as i64
            };
            let mark = match j {
                0 => Some(BoundaryMark::Begin),
                _ if j == last => Some(BoundaryMark::End),
                _ => None,
            };
            let event = SensorEvent::new(onset_time + Duration::milliseconds(offset_ms), *sensor, value_for(sensor))
                .with_label(class.name.as_str(), mark);
            events.push(event);
        }
        now = onset_time + Duration::milliseconds(duration_ms);
        activities.push(PlantedActivity {
            class: class.name.clone(),
            first_index,
            last_index: events.len() - 1,
            duration_s: duration_ms as f64 / 1000.0,
        });
    }
    gap(&mut rng, &mut now, &mut events);
    Ok(SyntheticTrace { events, activities })
}

/// Events in the log text format, one per line.
pub fn render_events(events: &[SensorEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 48);
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{extract_labeled_segments, parse_events, OnError};

    #[test]
    fn same_seed_same_trace() {
        let spec = GeneratorSpec::well_separated(2, 100);
        let a = render_events(&generate_synthetic(&spec, 42).unwrap().events);
        let b = render_events(&generate_synthetic(&spec, 42).unwrap().events);
        assert_eq!(a, b);
        let c = render_events(&generate_synthetic(&spec, 43).unwrap().events);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_activities_is_gap_only() {
        let spec = GeneratorSpec::well_separated(2, 0);
        let trace = generate_synthetic(&spec, 1).unwrap();
        assert!(!trace.events.is_empty());
        assert!(trace.activities.is_empty());
        assert!(trace.events.iter().all(|e| e.label.is_none() && e.mark.is_none()));
    }

    #[test]
    fn planted_truth_matches_extraction() {
        let spec = GeneratorSpec::well_separated(3, 40);
        let trace = generate_synthetic(&spec, 7).unwrap();
        let text = render_events(&trace.events);
        let (parsed, report) = parse_events(text.as_bytes(), OnError::Abort, std::path::Path::new("synth")).unwrap();
        assert_eq!(parsed, trace.events);
        assert!(report.monotonicity_violations.is_empty());
        let segs = extract_labeled_segments(&parsed);
        assert!(segs.issues.is_empty());
        assert_eq!(segs.segments.len(), trace.activities.len());
        for (s, a) in segs.segments.iter().zip(&trace.activities) {
            assert_eq!((s.first_index, s.last_index), (a.first_index, a.last_index));
            assert_eq!(s.label, a.class);
            assert!((s.duration_s - a.duration_s).abs() < 1e-9);
            let begin = &spec.classes.iter().find(|c| c.name == a.class).unwrap().begin;
            assert_eq!(parsed[a.first_index - 2].sensor_id, begin[0]);
            assert_eq!(parsed[a.first_index].sensor_id, begin[2]);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = GeneratorSpec::well_separated(1, 1);
        spec.classes.clear();
        assert!(matches!(generate_synthetic(&spec, 0), Err(EvalError::InvalidSpec(_))));
        let mut spec = GeneratorSpec::well_separated(1, 1);
        spec.classes[0].body.clear();
        assert!(generate_synthetic(&spec, 0).is_err());
        let mut spec = GeneratorSpec::well_separated(1, 1);
        spec.gap_events = Span::new(5, 2);
        assert!(generate_synthetic(&spec, 0).is_err());
        let mut spec = GeneratorSpec::well_separated(1, 1);
        spec.classes[0].name = "Other".into();
        assert!(generate_synthetic(&spec, 0).is_err());
    }
}
