//! Piecewise reference velocity profiles in the spatial domain.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Constant { value: f64 },
    /// `base + amplitude * (1 - cos(rate * (s - start)))`
    CosineRamp { base: f64, amplitude: f64, rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    #[serde(flatten)]
    pub shape: Shape,
}

impl Segment {
    /// `(v, dv/ds, d2v/ds2)` at `s`.
    fn eval(&self, s: f64) -> (f64, f64, f64) {
        match self.shape {
            Shape::Constant { value } => (value, 0.0, 0.0),
            Shape::CosineRamp {
                base,
                amplitude,
                rate,
            } => {
                let arg = rate * (s - self.start);
                (
                    base + amplitude * (1.0 - arg.cos()),
                    amplitude * rate * arg.sin(),
                    amplitude * rate * rate * arg.cos(),
                )
            }
        }
    }
}

/// Reference velocity `v_ref(s)` with analytic derivatives of `1 / v_ref`.
///
/// Segment lookup is half-open `[start, end)`. Outside the covered range
/// the boundary value is held with zero derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Segment>", into = "Vec<Segment>")]
pub struct ReferenceVelocityProfile {
    segments: Vec<Segment>,
}

impl TryFrom<Vec<Segment>> for ReferenceVelocityProfile {
    type Error = Error;
    fn try_from(segments: Vec<Segment>) -> Result<Self> {
        Self::new(segments)
    }
}

impl From<ReferenceVelocityProfile> for Vec<Segment> {
    fn from(p: ReferenceVelocityProfile) -> Self {
        p.segments
    }
}

impl ReferenceVelocityProfile {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("reference profile has no segments".into()));
        }
        for seg in &segments {
            if !(seg.start.is_finite() && seg.end.is_finite() && seg.start < seg.end) {
                return Err(Error::Config(format!(
                    "reference segment [{}, {}) is empty or non-finite",
                    seg.start, seg.end
                )));
            }
        }
        for pair in segments.windows(2) {
            if pair[0].end != pair[1].start {
                return Err(Error::Config(format!(
                    "reference segments are not contiguous at s = {}",
                    pair[0].end
                )));
            }
            let (v0, d0, _) = pair[0].eval(pair[0].end);
            let (v1, d1, _) = pair[1].eval(pair[1].start);
            if (v0 - v1).abs() > 1e-9 || (d0 - d1).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "reference profile is not continuously differentiable at s = {}",
                    pair[0].end
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn constant(value: f64, end: f64) -> Self {
        Self {
            segments: vec![Segment {
                start: 0.0,
                end,
                shape: Shape::Constant { value },
            }],
        }
    }

    /// 20 m/s cruise with a +1 m/s cosine bump on [100, 300) m and a
    /// -1.2 m/s dip on [400, 600) m, over [0, 1000] m.
    pub fn speed_up_slow_down() -> Self {
        let rate = 0.01 * PI;
        let seg = |start: f64, end: f64, shape| Segment { start, end, shape };
        Self {
            segments: vec![
                seg(0.0, 100.0, Shape::Constant { value: 20.0 }),
                seg(
                    100.0,
                    300.0,
                    Shape::CosineRamp {
                        base: 20.0,
                        amplitude: 0.5,
                        rate,
                    },
                ),
                seg(300.0, 400.0, Shape::Constant { value: 20.0 }),
                seg(
                    400.0,
                    600.0,
                    Shape::CosineRamp {
                        base: 20.0,
                        amplitude: -0.6,
                        rate,
                    },
                ),
                seg(600.0, 1000.0, Shape::Constant { value: 20.0 }),
            ],
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn domain(&self) -> (f64, f64) {
        (
            self.segments[0].start,
            self.segments[self.segments.len() - 1].end,
        )
    }

    fn eval(&self, s: f64) -> (f64, f64, f64) {
        let (lo, hi) = self.domain();
        if s < lo {
            let (v, _, _) = self.segments[0].eval(lo);
            return (v, 0.0, 0.0);
        }
        if s >= hi {
            let last = &self.segments[self.segments.len() - 1];
            let (v, _, _) = last.eval(hi);
            return (v, 0.0, 0.0);
        }
        let idx = self
            .segments
            .partition_point(|seg| seg.end <= s)
            .min(self.segments.len() - 1);
        self.segments[idx].eval(s)
    }

    pub fn velocity(&self, s: f64) -> f64 {
        self.eval(s).0
    }

    /// `1 / v_ref(s)`
    pub fn slowness(&self, s: f64) -> f64 {
        1.0 / self.eval(s).0
    }

    /// `d(1 / v_ref)/ds`
    pub fn slowness_d1(&self, s: f64) -> f64 {
        let (v, dv, _) = self.eval(s);
        -dv / (v * v)
    }

    /// `d^2(1 / v_ref)/ds^2`
    pub fn slowness_d2(&self, s: f64) -> f64 {
        let (v, dv, ddv) = self.eval(s);
        -ddv / (v * v) + 2.0 * dv * dv / (v * v * v)
    }

    /// Checks `v_min <= v_ref <= v_max` on a dense sample of the domain.
    pub fn check_bounds(&self, v_min: f64, v_max: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        let n = 4000;
        for k in 0..=n {
            let s = lo + (hi - lo) * k as f64 / n as f64;
            let v = self.velocity(s);
            if v < v_min - 1e-12 || v > v_max + 1e-12 {
                return Err(Error::Config(format!(
                    "reference velocity {v} at s = {s} outside [{v_min}, {v_max}]"
                )));
            }
        }
        Ok(())
    }

    /// `int_{s0}^{s1} 1 / v_ref(s) ds` by composite Simpson with `panels` panels.
    pub fn travel_time(&self, s0: f64, s1: f64, panels: usize) -> f64 {
        let n = panels.max(1);
        let w = (s1 - s0) / n as f64;
        let mut acc = 0.0;
        for k in 0..n {
            let a = s0 + w * k as f64;
            let b = a + w;
            acc += w / 6.0
                * (self.slowness(a) + 4.0 * self.slowness(0.5 * (a + b)) + self.slowness(b));
        }
        acc
    }
}
