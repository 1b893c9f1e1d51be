//! Causal Butterworth low-pass filtering of score series.
//!
//! The filter is designed by the bilinear transform with frequency prewarping
//! and realized as a cascade of second-order sections (plus one first-order
//! section for odd orders), each normalized to unit DC gain.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::video::ScoreSeries;

/// One transposed direct-form II section `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    sections: Vec<Section>,
}

impl Butterworth {
    pub fn lowpass(order: usize, cutoff_hz: f64, fs_hz: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("filter order must be >= 1".into()));
        }
        if !(cutoff_hz > 0.0 && fs_hz > 0.0) || cutoff_hz.is_nan() || fs_hz.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "cutoff and sample rate must be positive (cutoff {cutoff_hz}, fs {fs_hz})"
            )));
        }
        if cutoff_hz >= fs_hz / 2.0 {
            return Err(Error::InvalidArgument(format!(
                "cutoff {cutoff_hz} Hz is not below the Nyquist frequency {} Hz",
                fs_hz / 2.0
            )));
        }
        let k = 2.0 * fs_hz;
        let warped = k * (PI * cutoff_hz / fs_hz).tan();
        let n = order as f64;
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        // Upper-half-plane poles of the analog prototype; conjugates are implied.
        for i in 0..order / 2 {
            let theta = PI * (2.0 * i as f64 + n + 1.0) / (2.0 * n);
            let (sr, si) = (warped * theta.cos(), warped * theta.sin());
            let (zr, zi) = bilinear(sr, si, k);
            let a1 = -2.0 * zr;
            let a2 = zr * zr + zi * zi;
            let g = (1.0 + a1 + a2) / 4.0;
            sections.push(Section {
                b: [g, 2.0 * g, g],
                a: [a1, a2],
            });
        }
        if order % 2 == 1 {
            let (zr, _) = bilinear(-warped, 0.0, k);
            let g = (1.0 - zr) / 2.0;
            sections.push(Section {
                b: [g, g, 0.0],
                a: [-zr, 0.0],
            });
        }
        Ok(Butterworth { sections })
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    /// A streaming filter whose delay line is at rest (all zeros).
    pub fn at_rest(&self) -> LowpassFilter {
        LowpassFilter {
            sections: self.sections.clone(),
            state: vec![[0.0; 2]; self.sections.len()],
        }
    }

    /// A streaming filter in steady state for a constant input `value`.
    pub fn warm(&self, value: f64) -> LowpassFilter {
        let mut f = self.at_rest();
        f.reset_to(value);
        f
    }
}

fn bilinear(sr: f64, si: f64, k: f64) -> (f64, f64) {
    // (k + s) / (k - s)
    let (nr, ni) = (k + sr, si);
    let (dr, di) = (k - sr, -si);
    let d = dr * dr + di * di;
    ((nr * dr + ni * di) / d, (ni * dr - nr * di) / d)
}

/// Stateful filter; feed one sample at a time.
#[derive(Debug, Clone)]
pub struct LowpassFilter {
    sections: Vec<Section>,
    state: Vec<[f64; 2]>,
}

impl LowpassFilter {
    /// Put every section in the steady state reached by a constant input.
    ///
    /// Sections have unit DC gain, so each one passes `value` through.
    pub fn reset_to(&mut self, value: f64) {
        for (s, st) in self.sections.iter().zip(self.state.iter_mut()) {
            let s2 = (s.b[2] - s.a[1]) * value;
            let s1 = (s.b[1] - s.a[0]) * value + s2;
            *st = [s1, s2];
        }
    }

    pub fn process(&mut self, x: f64) -> f64 {
        let mut v = x;
        for (s, st) in self.sections.iter().zip(self.state.iter_mut()) {
            let y = s.b[0] * v + st[0];
            st[0] = s.b[1] * v - s.a[0] * y + st[1];
            st[1] = s.b[2] * v - s.a[1] * y;
            v = y;
        }
        v
    }
}

/// Causally filters the genuine part of a score series.
///
/// Filtering starts at `valid_from` with the delay line warmed to the first
/// genuine sample; the placeholder prefix is left untouched.
pub fn lowpass_filter(
    series: &ScoreSeries,
    fps: f64,
    cutoff_hz: f64,
    order: usize,
) -> Result<ScoreSeries> {
    let design = Butterworth::lowpass(order, cutoff_hz, fps)?;
    let mut out = series.clone();
    let start = series.valid_from.min(series.scores.len());
    if let Some(&first) = series.scores.get(start) {
        let mut f = design.warm(first);
        for v in &mut out.scores[start..] {
            *v = f.process(*v);
        }
    }
    Ok(out)
}
