//! Event streams and equal-count integration into frames.

use std::io::BufRead;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub t: i64,
    pub x: u16,
    pub y: u16,
    /// `true` for an ON (brightness increase) event.
    pub polarity: bool,
}

/// Events sorted by timestamp, ties kept in input order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventList {
    events: Vec<Event>,
}

impl EventList {
    /// Validates coordinates against `(height, width)` and sorts stably by time.
    pub fn new(mut events: Vec<Event>, sensor: (usize, usize)) -> Result<Self> {
        if let Some(e) = events
            .iter()
            .find(|e| usize::from(e.y) >= sensor.0 || usize::from(e.x) >= sensor.1)
        {
            return Err(Error::Dataset(format!(
                "event at ({}, {}) outside a {}x{} sensor",
                e.x, e.y, sensor.1, sensor.0
            )));
        }
        events.sort_by_key(|e| e.t);
        Ok(Self { events })
    }

    /// Reads `t,x,y,p` lines; a non-numeric first line is treated as a header.
    /// Polarity is ON when `p > 0`.
    pub fn from_csv(reader: impl BufRead, sensor: (usize, usize)) -> Result<Self> {
        let mut events = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = (|| -> Option<Event> {
                if fields.len() != 4 {
                    return None;
                }
                Some(Event {
                    t: fields[0].parse().ok()?,
                    x: fields[1].parse().ok()?,
                    y: fields[2].parse().ok()?,
                    polarity: fields[3].parse::<i64>().ok()? > 0,
                })
            })();
            match parsed {
                Some(e) => events.push(e),
                None if n == 0 => continue,
                None => {
                    return Err(Error::Format {
                        what: "event CSV",
                        detail: format!("line {}: expected t,x,y,p", n + 1),
                    })
                }
            }
        }
        Self::new(events, sensor)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }
}

/// Splits the stream into `segments` contiguous groups whose sizes differ by at
/// most one and accumulates each group's event counts into a `[2, H, W]` frame
/// (channel 0 OFF, channel 1 ON). Returns `[segments, 2, H, W]`.
pub fn integrate_events(ev: &EventList, segments: usize, sensor: (usize, usize)) -> Result<Tensor> {
    if ev.is_empty() {
        return Err(Error::Dataset(
            "cannot integrate an empty event list".into(),
        ));
    }
    if segments == 0 {
        return Err(Error::Config("need at least one segment".into()));
    }
    let (h, w) = sensor;
    let frame = 2 * h * w;
    let mut data = vec![0.0; segments * frame];
    let n = ev.len();
    for s in 0..segments {
        let (lo, hi) = (s * n / segments, (s + 1) * n / segments);
        let out = &mut data[s * frame..(s + 1) * frame];
        for e in &ev.events()[lo..hi] {
            let (x, y) = (usize::from(e.x), usize::from(e.y));
            if y >= h || x >= w {
                return Err(Error::Dataset(format!(
                    "event at ({x}, {y}) outside a {w}x{h} sensor"
                )));
            }
            out[(usize::from(e.polarity) * h + y) * w + x] += 1.0;
        }
    }
    Tensor::new(vec![segments, 2, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(n: usize) -> EventList {
        let events = (0..n)
            .map(|i| Event {
                t: (i / 3) as i64,
                x: (i % 4) as u16,
                y: (i % 3) as u16,
                polarity: i % 2 == 0,
            })
            .collect();
        EventList::new(events, (3, 4)).unwrap()
    }

    fn per_segment(f: &Tensor) -> Vec<f64> {
        let seg = f.shape()[0];
        (0..seg).map(|s| f.row(s).iter().sum()).collect()
    }

    #[test]
    fn one_event_per_frame() {
        let f = integrate_events(&stream(16), 16, (3, 4)).unwrap();
        assert_eq!(f.shape(), &[16, 2, 3, 4]);
        assert!(per_segment(&f).iter().all(|&c| c == 1.0));
    }

    #[test]
    fn balanced_partition() {
        let f = integrate_events(&stream(17), 16, (3, 4)).unwrap();
        let counts = per_segment(&f);
        let (lo, hi) = counts
            .iter()
            .fold((f64::MAX, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
        assert!(hi - lo <= 1.0);
        assert_eq!(counts.iter().sum::<f64>(), 17.0);
    }

    #[test]
    fn ties_keep_input_order() {
        let a = Event {
            t: 5,
            x: 0,
            y: 0,
            polarity: true,
        };
        let b = Event {
            t: 5,
            x: 1,
            y: 0,
            polarity: false,
        };
        let c = Event {
            t: 1,
            x: 2,
            y: 0,
            polarity: true,
        };
        let l = EventList::new(vec![a, b, c], (1, 3)).unwrap();
        assert_eq!(l.events(), &[c, a, b]);
    }

    #[test]
    fn csv_with_header() {
        let text = "t,x,y,p\n3,1,0,1\n1,0,0,0\n";
        let l = EventList::from_csv(text.as_bytes(), (2, 2)).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(l.events()[0].t, 1);
        assert!(EventList::from_csv("1,0,0,1\nbad\n".as_bytes(), (2, 2)).is_err());
        assert!(EventList::from_csv("1,5,0,1\n".as_bytes(), (2, 2)).is_err());
    }

    #[test]
    fn empty_stream_is_an_error() {
        let l = EventList::new(vec![], (2, 2)).unwrap();
        assert!(integrate_events(&l, 4, (2, 2)).is_err());
    }
}
