//! Frame-level AUC and F1 over concatenated per-video scores.
//!
//! The raw protocol concatenates scores as produced. The legacy protocol
//! min-max normalizes each video first, which leaks the fact that every video
//! holds an anomaly and inflates the metrics; it is kept for comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{Involvement, ScoreSeries, VideoRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Raw,
    LegacyMinmax,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Protocol::Raw),
            "legacy_minmax" => Ok(Protocol::LegacyMinmax),
            other => Err(Error::InvalidArgument(format!("unknown protocol {other:?}"))),
        }
    }
}

fn check_labels(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!("label {l} is not 0/1")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Points of the ROC curve `(fpr, tpr, threshold)`, from the strictest
/// threshold down; tied scores move together.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64, f64)>> {
    let (pos, neg) = check_labels(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "ROC needs both positive and negative frames".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0, f64::INFINITY)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64, s));
    }
    Ok(points)
}

/// Area under the ROC curve by the trapezoidal rule.
///
/// Equals the probability that a random positive frame outscores a random
/// negative one, ties counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let pts = roc_points(scores, labels)?;
    Ok(pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metrics for the decision `score > tau`.
pub fn f1_at(scores: &[f64], labels: &[u8], tau: f64) -> Result<PrecisionRecall> {
    let (pos, _) = check_labels(scores, labels)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (s, l) in scores.iter().zip(labels) {
        if *s > tau {
            if *l == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if pos == 0 { 0.0 } else { tp as f64 / pos as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PrecisionRecall {
        precision,
        recall,
        f1,
    })
}

/// Rescales to `[0, 1]`; a constant series maps to all zeros.
pub fn minmax(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
}

/// Scores of one video with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    pub video_id: String,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub category: String,
    pub involvement: Option<Involvement>,
}

impl LabeledScores {
    pub fn from_video(series: &ScoreSeries, video: &VideoRecord) -> Result<Self> {
        if series.len() != video.frame_labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}: {} scores for {} labelled frames",
                video.video_id,
                series.len(),
                video.frame_labels.len()
            )));
        }
        Ok(LabeledScores {
            video_id: video.video_id.clone(),
            scores: series.scores.clone(),
            labels: video.frame_labels.clone(),
            category: video.category.clone(),
            involvement: video.involvement,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// `None` when the subset holds only one label class.
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub frames: usize,
    pub anomalous_frames: usize,
    pub videos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub protocol: Protocol,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub frames: usize,
    pub anomalous_frames: usize,
    pub videos: usize,
    pub per_category: BTreeMap<String, ClassMetrics>,
    pub per_involvement: BTreeMap<String, ClassMetrics>,
}

fn concat(videos: &[&LabeledScores], protocol: Protocol) -> (Vec<f64>, Vec<u8>) {
    let mut s = Vec::new();
    let mut l = Vec::new();
    for v in videos {
        match protocol {
            Protocol::Raw => s.extend_from_slice(&v.scores),
            Protocol::LegacyMinmax => s.extend(minmax(&v.scores)),
        }
        l.extend_from_slice(&v.labels);
    }
    (s, l)
}

fn subset_metrics(videos: &[&LabeledScores], protocol: Protocol, tau: f64) -> Result<ClassMetrics> {
    let (s, l) = concat(videos, protocol);
    let pr = f1_at(&s, &l, tau)?;
    let positives = l.iter().filter(|&&x| x == 1).count();
    let auc = if positives > 0 && positives < l.len() {
        Some(auc(&s, &l)?)
    } else {
        None
    };
    Ok(ClassMetrics {
        auc,
        precision: pr.precision,
        recall: pr.recall,
        f1: pr.f1,
        frames: l.len(),
        anomalous_frames: positives,
        videos: videos.len(),
    })
}

/// Frame-level metrics over all videos plus per-category and per-involvement subsets.
///
/// With the legacy protocol `tau` applies to min-max normalized scores.
pub fn evaluate(videos: &[LabeledScores], protocol: Protocol, tau: f64) -> Result<EvalResult> {
    if videos.is_empty() {
        return Err(Error::Empty("no videos to evaluate".into()));
    }
    for v in videos {
        if v.labels.len() != v.scores.len() {
            return Err(Error::ShapeMismatch(format!(
                "video {}: {} scores but {} labels",
                v.video_id,
                v.scores.len(),
                v.labels.len()
            )));
        }
    }
    let all: Vec<&LabeledScores> = videos.iter().collect();
    let (s, l) = concat(&all, protocol);
    let overall_auc = auc(&s, &l)?;
    let pr = f1_at(&s, &l, tau)?;

    let mut by_cat: BTreeMap<String, Vec<&LabeledScores>> = BTreeMap::new();
    let mut by_inv: BTreeMap<String, Vec<&LabeledScores>> = BTreeMap::new();
    for v in videos {
        by_cat.entry(v.category.clone()).or_default().push(v);
        let tag = v
            .involvement
            .map(|i| i.to_string())
            .unwrap_or_else(|| "none".into());
        by_inv.entry(tag).or_default().push(v);
    }
    let per_category = by_cat
        .into_iter()
        .map(|(k, vs)| Ok((k, subset_metrics(&vs, protocol, tau)?)))
        .collect::<Result<_>>()?;
    let per_involvement = by_inv
        .into_iter()
        .map(|(k, vs)| Ok((k, subset_metrics(&vs, protocol, tau)?)))
        .collect::<Result<_>>()?;

    Ok(EvalResult {
        protocol,
        auc: overall_auc,
        precision: pr.precision,
        recall: pr.recall,
        f1: pr.f1,
        threshold: tau,
        frames: l.len(),
        anomalous_frames: l.iter().filter(|&&x| x == 1).count(),
        videos: videos.len(),
        per_category,
        per_involvement,
    })
}

impl EvalResult {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "protocol     {:?}", self.protocol);
        let _ = writeln!(
            out,
            "videos       {} ({} frames, {} anomalous)",
            self.videos, self.frames, self.anomalous_frames
        );
        let _ = writeln!(out, "threshold    {}", self.threshold);
        let _ = writeln!(out, "AUC          {:.4}", self.auc);
        let _ = writeln!(
            out,
            "F1           {:.4} (precision {:.4}, recall {:.4})",
            self.f1, self.precision, self.recall
        );
        for (title, map) in [
            ("category", &self.per_category),
            ("involvement", &self.per_involvement),
        ] {
            let _ = writeln!(out, "\nper {title}:");
            for (k, m) in map {
                let auc = m.auc.map_or("   n/a".to_string(), |a| format!("{a:.4}"));
                let _ = writeln!(
                    out,
                    "  {k:<16} videos {:>4}  AUC {auc}  F1 {:.4}",
                    m.videos, m.f1
                );
            }
        }
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("EvalResult serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            if l != 1 {
                continue;
            }
            for (j, &m) in labels.iter().enumerate() {
                if m != 0 {
                    continue;
                }
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    fn fixture() -> Vec<LabeledScores> {
        let mk = |id: &str, s: [f64; 5]| LabeledScores {
            video_id: id.into(),
            scores: s.to_vec(),
            labels: vec![0, 0, 1, 1, 1],
            category: "demo".into(),
            involvement: Some(Involvement::NonEgo),
        };
        vec![
            mk("A", [0.3, 0.5, 0.6, 0.7, 0.6]),
            mk("B", [1.2, 1.0, 1.6, 2.0, 1.8]),
        ]
    }

    #[test]
    fn auc_basic_cases() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auc(&[0.1], &[0, 1]).is_err());
    }

    #[test]
    fn auc_chance_level() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let s: Vec<f64> = (0..20000).map(|_| rng.gen()).collect();
        let l: Vec<u8> = (0..20000).map(|_| rng.gen_range(0..2)).collect();
        assert!((auc(&s, &l).unwrap() - 0.5).abs() < 0.02);
    }

    #[test]
    fn metrics_example_raw_vs_legacy() {
        let v = fixture();
        let raw = evaluate(&v, Protocol::Raw, 0.65).unwrap();
        assert!((raw.auc - 0.75).abs() < 1e-12);
        let legacy = evaluate(&v, Protocol::LegacyMinmax, 0.65).unwrap();
        assert_eq!(legacy.auc, 1.0);
    }

    #[test]
    fn metrics_example_f1() {
        let v = fixture();
        let (s, l) = concat(&v.iter().collect::<Vec<_>>(), Protocol::Raw);
        let pr = f1_at(&s, &l, 0.65).unwrap();
        let third = 2.0 / 3.0;
        assert!((pr.precision - third).abs() < 1e-12);
        assert!((pr.recall - third).abs() < 1e-12);
        assert!((pr.f1 - third).abs() < 1e-12);
    }

    #[test]
    fn f1_threshold_extremes() {
        let s = [0.1, 0.4, 0.6, 0.9];
        let l = [0, 1, 0, 1];
        let low = f1_at(&s, &l, -1.0).unwrap();
        assert_eq!(low.recall, 1.0);
        assert_eq!(low.precision, 0.5);
        let high = f1_at(&s, &l, 10.0).unwrap();
        assert_eq!((high.precision, high.recall, high.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn single_video_protocols_agree() {
        let v = vec![fixture().remove(1)];
        let raw = evaluate(&v, Protocol::Raw, 0.5).unwrap();
        let legacy = evaluate(&v, Protocol::LegacyMinmax, 0.5).unwrap();
        assert_eq!(raw.auc, legacy.auc);
    }

    #[test]
    fn minmax_constant_video() {
        assert_eq!(minmax(&[2.0, 2.0, 2.0]), vec![0.0; 3]);
        assert_eq!(minmax(&[1.0, 3.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn per_class_keys_follow_categories() {
        let mut v = fixture();
        v[1].category = "other".into();
        v.push(LabeledScores {
            video_id: "C".into(),
            scores: vec![0.1, 0.2],
            labels: vec![0, 0],
            category: "normal".into(),
            involvement: None,
        });
        let r = evaluate(&v, Protocol::Raw, 0.65).unwrap();
        let keys: Vec<&str> = r.per_category.keys().map(String::as_str).collect();
        assert_eq!(keys, ["demo", "normal", "other"]);
        assert_eq!(r.per_category["normal"].auc, None);
        let inv: Vec<&str> = r.per_involvement.keys().map(String::as_str).collect();
        assert_eq!(inv, ["non-ego", "none"]);
        assert!(r.to_text().contains("AUC"));
        let parsed: EvalResult = toml::from_str(&r.to_toml()).unwrap();
        assert_eq!(parsed, r);
    }

    #[test]
    fn mismatched_labels_name_the_video() {
        let mut v = fixture();
        v[1].labels.pop();
        let err = evaluate(&v, Protocol::Raw, 0.5).unwrap_err().to_string();
        assert!(err.contains("video B"), "{err}");
    }

    proptest! {
        #[test]
        fn trapezoid_equals_pairwise(
            data in prop::collection::vec((0u8..20, 0u8..2), 2..300)
        ) {
            let s: Vec<f64> = data.iter().map(|d| d.0 as f64 / 4.0).collect();
            let l: Vec<u8> = data.iter().map(|d| d.1).collect();
            prop_assume!(l.contains(&0) && l.contains(&1));
            let a = auc(&s, &l).unwrap();
            prop_assert!((a - pairwise_auc(&s, &l)).abs() < 1e-9);
        }

        #[test]
        fn auc_invariant_under_monotone_map(
            data in prop::collection::vec((-5.0..5.0f64, 0u8..2), 2..200)
        ) {
            let s: Vec<f64> = data.iter().map(|d| d.0).collect();
            let l: Vec<u8> = data.iter().map(|d| d.1).collect();
            prop_assume!(l.contains(&0) && l.contains(&1));
            let mapped: Vec<f64> = s.iter().map(|x| (0.7 * x).exp() + 3.0).collect();
            prop_assert!((auc(&s, &l).unwrap() - auc(&mapped, &l).unwrap()).abs() < 1e-12);
        }
    }
}
