//! Per-video records: object tracks, frame labels and per-frame score series.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// One object's boxes over a run of consecutive frames.
///
/// A tracking gap ends a track; re-acquisition starts a new one with a fresh id.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub object_id: u64,
    pub first_frame: usize,
    pub boxes: Vec<BBox>,
}

impl Track {
    pub fn new(object_id: u64, first_frame: usize, boxes: Vec<BBox>) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::Empty(format!("track {object_id} has no boxes")));
        }
        for b in &boxes {
            b.validate()?;
        }
        Ok(Track {
            object_id,
            first_frame,
            boxes,
        })
    }

    /// One past the last covered frame.
    pub fn end_frame(&self) -> usize {
        self.first_frame + self.boxes.len()
    }

    pub fn contains(&self, frame: usize) -> bool {
        frame >= self.first_frame && frame < self.end_frame()
    }

    pub fn box_at(&self, frame: usize) -> Option<&BBox> {
        frame
            .checked_sub(self.first_frame)
            .and_then(|i| self.boxes.get(i))
    }

    /// Boxes for the inclusive frame range `[start, end]` if fully covered.
    pub fn window(&self, start: usize, end: usize) -> Option<&[BBox]> {
        if start < self.first_frame || end >= self.end_frame() || end < start {
            return None;
        }
        let a = start - self.first_frame;
        let b = end - self.first_frame;
        Some(&self.boxes[a..=b])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Involvement {
    #[serde(rename = "ego")]
    Ego,
    #[serde(rename = "non-ego")]
    NonEgo,
}

impl fmt::Display for Involvement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Involvement::Ego => f.write_str("ego"),
            Involvement::NonEgo => f.write_str("non-ego"),
        }
    }
}

impl FromStr for Involvement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ego" => Ok(Involvement::Ego),
            "non-ego" => Ok(Involvement::NonEgo),
            other => Err(Error::InvalidArgument(format!(
                "unknown involvement tag {other:?}"
            ))),
        }
    }
}

/// A video reduced to what the trajectory experts and the evaluator need.
///
/// `involvement` is `None` for videos without an anomalous event.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub fps: f64,
    pub num_frames: usize,
    pub tracks: Vec<Track>,
    pub frame_labels: Vec<u8>,
    pub category: String,
    pub involvement: Option<Involvement>,
}

impl VideoRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{}: fps must be positive, got {}",
                self.video_id, self.fps
            )));
        }
        if self.frame_labels.len() != self.num_frames {
            return Err(Error::ShapeMismatch(format!(
                "{}: {} labels for {} frames",
                self.video_id,
                self.frame_labels.len(),
                self.num_frames
            )));
        }
        if self.frame_labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument(format!(
                "{}: frame labels must be 0 or 1",
                self.video_id
            )));
        }
        let mut ids = std::collections::HashSet::new();
        for t in &self.tracks {
            if t.boxes.is_empty() || t.end_frame() > self.num_frames {
                return Err(Error::InvalidArgument(format!(
                    "{}: track {} exceeds the video",
                    self.video_id, t.object_id
                )));
            }
            if !ids.insert(t.object_id) {
                return Err(Error::InvalidArgument(format!(
                    "{}: duplicate object id {}",
                    self.video_id, t.object_id
                )));
            }
        }
        if self.anomaly_interval_count() > 1 {
            return Err(Error::InvalidArgument(format!(
                "{}: anomalous frames must form one interval",
                self.video_id
            )));
        }
        Ok(())
    }

    fn anomaly_interval_count(&self) -> usize {
        let mut count = 0;
        let mut prev = 0u8;
        for &l in &self.frame_labels {
            if l == 1 && prev == 0 {
                count += 1;
            }
            prev = l;
        }
        count
    }

    /// Inclusive-exclusive frame range of the anomalous event, if any.
    pub fn anomaly_interval(&self) -> Option<(usize, usize)> {
        let start = self.frame_labels.iter().position(|&l| l == 1)?;
        let len = self.frame_labels[start..]
            .iter()
            .take_while(|&&l| l == 1)
            .count();
        Some((start, start + len))
    }

    pub fn is_anomalous(&self) -> bool {
        self.frame_labels.contains(&1)
    }

    /// Tracks present at `frame`.
    pub fn tracks_at(&self, frame: usize) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(move |t| t.contains(frame))
    }
}

/// Per-frame anomaly scores of one expert on one video.
///
/// Frames before `valid_from` did not have enough history for a genuine
/// score; their values are placeholders to be replaced by an assigned
/// normal score (see [`ScoreSeries::with_assigned_prefix`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub video_id: String,
    pub scores: Vec<f64>,
    pub valid_from: usize,
}

impl ScoreSeries {
    pub fn new(video_id: impl Into<String>, scores: Vec<f64>, valid_from: usize) -> Result<Self> {
        let video_id = video_id.into();
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("{video_id}: score at frame {i}")));
        }
        Ok(ScoreSeries {
            video_id,
            scores,
            valid_from,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Copy with every frame before `valid_from` set to `value`.
    pub fn with_assigned_prefix(&self, value: f64) -> ScoreSeries {
        let mut out = self.clone();
        let n = self.valid_from.min(out.scores.len());
        out.scores[..n].fill(value);
        out
    }

    /// Scores from `valid_from` on.
    pub fn valid_scores(&self) -> &[f64] {
        &self.scores[self.valid_from.min(self.scores.len())..]
    }
}
