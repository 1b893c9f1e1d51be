//! Normalization, Kalman score fusion and ego/non-ego classification.

pub mod kalman;
pub mod kde;

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trackio::{parse_err, parse_field, read_text, write_text};
use crate::video::{Involvement, ScoreSeries};

pub use kalman::{kalman_step, KalmanState};
pub use kde::{fit_normalizer, normalize, LogKde, NormalizationStats};

pub const DEFAULT_ALPHA: f64 = 0.95;
pub const FUSED_HEADER: &str = "video_id,frame,s,x_ffp,x_str,x_int,x_beh";

/// The four score streams, in state-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expert {
    Ffp,
    Str,
    Int,
    Beh,
}

impl Expert {
    pub const ALL: [Expert; 4] = [Expert::Ffp, Expert::Str, Expert::Int, Expert::Beh];

    pub fn name(self) -> &'static str {
        match self {
            Expert::Ffp => "ffp",
            Expert::Str => "str",
            Expert::Int => "int",
            Expert::Beh => "beh",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Expert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Expert {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Expert::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown expert {s:?}")))
    }
}

/// Fitted statistics of all four experts; persisted as a sectioned text file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub ffp: NormalizationStats,
    #[serde(rename = "str")]
    pub str_: NormalizationStats,
    pub int: NormalizationStats,
    pub beh: NormalizationStats,
}

impl EnsembleStats {
    pub fn from_array(s: [NormalizationStats; 4]) -> Self {
        EnsembleStats {
            ffp: s[0],
            str_: s[1],
            int: s[2],
            beh: s[3],
        }
    }

    pub fn as_array(&self) -> [NormalizationStats; 4] {
        [self.ffp, self.str_, self.int, self.beh]
    }

    pub fn get(&self, e: Expert) -> &NormalizationStats {
        match e {
            Expert::Ffp => &self.ffp,
            Expert::Str => &self.str_,
            Expert::Int => &self.int,
            Expert::Beh => &self.beh,
        }
    }

    pub fn threshold(&self) -> f64 {
        ensemble_threshold(&self.as_array())
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("stats serialize")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let s: EnsembleStats =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("stats file: {e}")))?;
        for st in s.as_array() {
            st.validate()?;
        }
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&read_text(path)?).map_err(|e| match e {
            Error::InvalidArgument(msg) => {
                Error::InvalidArgument(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }
}

/// Equal-weight average of the normalized per-expert thresholds.
pub fn ensemble_threshold(stats: &[NormalizationStats; 4]) -> f64 {
    0.25 * stats.iter().map(|s| s.normalized_tau()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterStart {
    /// Re-initialize every frame until all experts produce genuine scores.
    Deferred,
    /// Initialize at frame 0 and filter assigned scores as measurements.
    Immediate,
}

impl FromStr for FilterStart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deferred" => Ok(FilterStart::Deferred),
            "immediate" => Ok(FilterStart::Immediate),
            other => Err(Error::InvalidArgument(format!("unknown filter start {other:?}"))),
        }
    }
}

/// Fused score and full state history of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSeries {
    pub video_id: String,
    pub states: Vec<[f64; 5]>,
    pub filter_start: usize,
}

impl FusedSeries {
    pub fn scores(&self) -> Vec<f64> {
        self.states.iter().map(|s| s[4]).collect()
    }

    pub fn to_score_series(&self) -> ScoreSeries {
        ScoreSeries {
            video_id: self.video_id.clone(),
            scores: self.scores(),
            valid_from: self.filter_start,
        }
    }
}

/// Normalized observation of each expert per frame; frames before an
/// expert's `valid_from` carry its assigned normal score, the fitted mean.
pub fn normalized_observations(
    series: [&ScoreSeries; 4],
    stats: &EnsembleStats,
) -> Result<Vec<[f64; 4]>> {
    let n = series[0].len();
    for s in &series[1..] {
        if s.len() != n || s.video_id != series[0].video_id {
            return Err(Error::ShapeMismatch(format!(
                "expert series differ: {} ({} frames) vs {} ({} frames)",
                series[0].video_id,
                n,
                s.video_id,
                s.len()
            )));
        }
    }
    let st = stats.as_array();
    Ok((0..n)
        .map(|t| {
            let mut o = [0.0; 4];
            for k in 0..4 {
                let raw = if t < series[k].valid_from {
                    st[k].mu
                } else {
                    series[k].scores[t]
                };
                o[k] = st[k].normalize(raw);
            }
            o
        })
        .collect())
}

/// Kalman fusion of the ffp, str, int and beh series (in that order).
pub fn fuse(
    series: [&ScoreSeries; 4],
    stats: &EnsembleStats,
    mode: FilterStart,
) -> Result<FusedSeries> {
    let obs = normalized_observations(series, stats)?;
    if obs.is_empty() {
        return Err(Error::Empty(format!("{}: no frames", series[0].video_id)));
    }
    let start = match mode {
        FilterStart::Immediate => 0,
        FilterStart::Deferred => series
            .iter()
            .map(|s| s.valid_from)
            .max()
            .unwrap_or(0)
            .min(obs.len() - 1),
    };
    let mut states = Vec::with_capacity(obs.len());
    let mut st = KalmanState::initialize(&obs[0])?;
    for (t, o) in obs.iter().enumerate() {
        if t <= start {
            st = KalmanState::initialize(o)?;
        } else {
            st = kalman_step(&st, o)?;
        }
        states.push(st.as_array());
    }
    Ok(FusedSeries {
        video_id: series[0].video_id.clone(),
        states,
        filter_start: start,
    })
}

/// Mean of the largest `ceil(0.1 T)` values.
pub fn top_decile_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = ((values.len() as f64) * 0.1).ceil().max(1.0) as usize;
    v[..k].iter().sum::<f64>() / k as f64
}

/// Ego when the scene states dominate the trajectory states; ties go to non-ego.
pub fn classify_video(states: &[[f64; 5]]) -> Result<Involvement> {
    if states.is_empty() {
        return Err(Error::Empty("empty state history".into()));
    }
    let m: Vec<f64> = (0..4)
        .map(|k| top_decile_mean(&states.iter().map(|s| s[k]).collect::<Vec<_>>()))
        .collect();
    if m[0] + m[1] > m[2] + m[3] {
        Ok(Involvement::Ego)
    } else {
        Ok(Involvement::NonEgo)
    }
}

pub fn format_fused(f: &FusedSeries) -> String {
    let mut out = String::with_capacity(f.states.len() * 96 + 64);
    let _ = writeln!(out, "# filter_start={}", f.filter_start);
    out.push_str(FUSED_HEADER);
    out.push('\n');
    for (t, s) in f.states.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            f.video_id, t, s[4], s[0], s[1], s[2], s[3]
        );
    }
    out
}

pub fn write_fused(path: &Path, f: &FusedSeries) -> Result<()> {
    write_text(path, &format_fused(f))
}

pub fn parse_fused(path: &Path, text: &str) -> Result<FusedSeries> {
    let mut lines = text.lines().enumerate().peekable();
    let meta = crate::trackio::leading_comments(&mut lines);
    let filter_start = match meta.get("filter_start") {
        Some((ln, v)) => parse_field(path, *ln, "filter_start", v)?,
        None => 0,
    };
    match lines.next() {
        Some((_, h)) if h.trim() == FUSED_HEADER => {}
        Some((i, _)) => {
            return Err(parse_err(path, i + 1, format!("expected header {FUSED_HEADER:?}")))
        }
        None => return Err(parse_err(path, 1, "missing header")),
    }
    let mut video_id = None;
    let mut states = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(parse_err(path, ln, format!("expected 7 fields, found {}", f.len())));
        }
        video_id.get_or_insert_with(|| f[0].to_string());
        let frame: usize = parse_field(path, ln, "frame", f[1])?;
        if frame != states.len() {
            return Err(Error::MissingFrame {
                video_id: f[0].to_string(),
                frame: states.len(),
            });
        }
        let mut v = [0.0; 5];
        for (k, name) in ["s", "x_ffp", "x_str", "x_int", "x_beh"].iter().enumerate() {
            v[k] = parse_field(path, ln, name, f[2 + k])?;
        }
        states.push([v[1], v[2], v[3], v[4], v[0]]);
    }
    Ok(FusedSeries {
        video_id: video_id.ok_or_else(|| parse_err(path, 2, "no rows"))?,
        states,
        filter_start,
    })
}

pub fn read_fused(path: &Path) -> Result<FusedSeries> {
    parse_fused(path, &read_text(path)?)
}
