//! Deterministic synthetic driving scenarios in normalized box space.
//!
//! Objects follow constant-speed, constant-turn-rate center motion with a
//! slow exponential size drift (approach or recede). Anomalies are injected
//! into that motion before additive Gaussian observation noise is applied.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scene::{SceneScores, FFP_VALID_FROM, STR_VALID_FROM};
use crate::trackio::write_video;
use crate::video::{Involvement, ScoreSeries, Track, VideoRecord};

/// Noisy widths and heights are clipped to at least this value.
pub const MIN_SIZE: f64 = 2e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    None,
    PairCollision,
    Zigzag,
    SuddenStop,
}

impl AnomalyKind {
    pub const INJECTED: [AnomalyKind; 3] = [
        AnomalyKind::PairCollision,
        AnomalyKind::Zigzag,
        AnomalyKind::SuddenStop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyKind::None => "none",
            AnomalyKind::PairCollision => "pair_collision",
            AnomalyKind::Zigzag => "zigzag",
            AnomalyKind::SuddenStop => "sudden_stop",
        }
    }

    /// Category tag written to the video metadata.
    pub fn category(self) -> &'static str {
        match self {
            AnomalyKind::None => "normal",
            other => other.name(),
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            AnomalyKind::None,
            AnomalyKind::PairCollision,
            AnomalyKind::Zigzag,
            AnomalyKind::SuddenStop,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown anomaly kind {s:?}")))
    }
}

/// Ranges of the normal motion model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Kinematics {
    /// Center speed range, normalized units per frame.
    pub min_speed: f64,
    pub max_speed: f64,
    /// Maximum absolute heading change per frame (radians).
    pub turn_rate: f64,
    /// Maximum absolute log-size change per frame.
    pub size_rate: f64,
    pub min_height: f64,
    pub max_height: f64,
    /// Width-to-height ratio range.
    pub min_aspect: f64,
    pub max_aspect: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Kinematics {
            min_speed: 0.001,
            max_speed: 0.006,
            turn_rate: 0.01,
            size_rate: 0.002,
            min_height: 0.08,
            max_height: 0.2,
            min_aspect: 0.8,
            max_aspect: 1.6,
        }
    }
}

/// Strength of the injected anomalies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Severity {
    /// Fraction of the labeled interval spent closing in before contact.
    pub closing_frac: f64,
    /// Center jitter STD of both objects after contact, per frame.
    pub impact_jitter: f64,
    /// Log-size jitter STD after contact, per frame.
    pub impact_size_jitter: f64,
    /// Peak lateral offset of the zigzag.
    pub zigzag_amplitude: f64,
    pub zigzag_hz: f64,
    /// Speed of the object that stops, per frame.
    pub stop_speed: f64,
}

impl Default for Severity {
    fn default() -> Self {
        Severity {
            closing_frac: 0.2,
            impact_jitter: 0.01,
            impact_size_jitter: 0.05,
            zigzag_amplitude: 0.03,
            zigzag_hz: 1.0,
            stop_speed: 0.006,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub video_id: String,
    pub seed: u64,
    pub num_frames: usize,
    pub fps: f64,
    pub num_objects: usize,
    pub anomaly_kind: AnomalyKind,
    pub anomaly_start_frac: f64,
    pub anomaly_end_frac: f64,
    pub noise_std: f64,
    pub kinematics: Kinematics,
    pub severity: Severity,
}

impl ScenarioSpec {
    pub fn normal(video_id: impl Into<String>, seed: u64) -> Self {
        ScenarioSpec {
            video_id: video_id.into(),
            seed,
            num_frames: 120,
            fps: 10.0,
            num_objects: 3,
            anomaly_kind: AnomalyKind::None,
            anomaly_start_frac: 0.5,
            anomaly_end_frac: 1.0,
            noise_std: 0.0015,
            kinematics: Kinematics::default(),
            severity: Severity::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.kinematics;
        let ok = 0.0 <= self.anomaly_start_frac
            && self.anomaly_start_frac < self.anomaly_end_frac
            && self.anomaly_end_frac <= 1.0
            && self.noise_std >= 0.0
            && self.fps > 0.0
            && 0.0 <= k.min_speed
            && k.min_speed <= k.max_speed
            && k.turn_rate >= 0.0
            && k.size_rate >= 0.0
            && 0.0 < k.min_height
            && k.min_height <= k.max_height
            && 0.0 < k.min_aspect
            && k.min_aspect <= k.max_aspect
            && self.severity.closing_frac > 0.0
            && self.severity.closing_frac < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid scenario spec for {}",
                self.video_id
            )))
        }
    }

    /// Labeled frame range `[start, end)`, empty for normal scenarios.
    pub fn interval(&self) -> (usize, usize) {
        if self.anomaly_kind == AnomalyKind::None || self.num_frames == 0 {
            return (0, 0);
        }
        let n = self.num_frames as f64;
        let start = ((self.anomaly_start_frac * n).floor() as usize).min(self.num_frames - 1);
        let end = ((self.anomaly_end_frac * n).round() as usize).clamp(start + 1, self.num_frames);
        (start, end)
    }
}

/// Noiseless center and size of one object per frame.
#[derive(Debug, Clone)]
struct Path2 {
    cx: Vec<f64>,
    cy: Vec<f64>,
    w: Vec<f64>,
    h: Vec<f64>,
    heading: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn simulate_object(rng: &mut ChaCha8Rng, k: &Kinematics, n: usize, speed: Option<f64>) -> Path2 {
    let mut x = uniform(rng, 0.2, 0.8);
    let mut y = uniform(rng, 0.35, 0.7);
    let mut theta = uniform(rng, -std::f64::consts::PI, std::f64::consts::PI);
    let s = speed.unwrap_or_else(|| uniform(rng, k.min_speed, k.max_speed));
    let omega = uniform(rng, -k.turn_rate, k.turn_rate);
    let g = uniform(rng, -k.size_rate, k.size_rate);
    let h0 = uniform(rng, k.min_height, k.max_height);
    let w0 = h0 * uniform(rng, k.min_aspect, k.max_aspect);
    let mut p = Path2 {
        cx: Vec::with_capacity(n),
        cy: Vec::with_capacity(n),
        w: Vec::with_capacity(n),
        h: Vec::with_capacity(n),
        heading: Vec::with_capacity(n),
    };
    for t in 0..n {
        let scale = (g * t as f64).exp();
        p.cx.push(x);
        p.cy.push(y);
        p.w.push(w0 * scale);
        p.h.push(h0 * scale);
        p.heading.push(theta);
        x += s * theta.cos();
        y += s * theta.sin();
        theta += omega;
    }
    p
}

fn inject_collision(
    a: &mut Path2,
    b: &mut Path2,
    (start, end): (usize, usize),
    sev: &Severity,
    rng: &mut ChaCha8Rng,
) {
    let n = a.cx.len();
    let span = end - start;
    let contact = (start + ((span as f64 * sev.closing_frac).round() as usize).max(2)).min(n - 1);
    // the rear object ends up partly overlapping the front one
    let side = if b.cx[start] >= a.cx[start] { 1.0 } else { -1.0 };
    let offset = |t: usize, a: &Path2| side * 0.3 * a.w[t];
    for t in start..contact {
        let u = (t - start) as f64 / (contact - start) as f64;
        let s = u * u;
        b.cx[t] += s * (a.cx[t] + offset(t, a) - b.cx[t]);
        b.cy[t] += s * (a.cy[t] - b.cy[t]);
    }
    let (ax, ay) = (a.cx[contact], a.cy[contact]);
    let (bx, by) = (ax + offset(contact, a), ay);
    let (aw, ah, bw, bh) = (a.w[contact], a.h[contact], b.w[contact], b.h[contact]);
    let jitter = Normal::new(0.0, sev.impact_jitter).expect("finite jitter");
    let size_jitter = Normal::new(0.0, sev.impact_size_jitter).expect("finite jitter");
    for t in contact..n {
        let active = t < end;
        for (p, x, y, w, h) in [(&mut *a, ax, ay, aw, ah), (&mut *b, bx, by, bw, bh)] {
            let (mut dx, mut dy, mut ds) = (0.0, 0.0, 0.0);
            if active {
                dx = jitter.sample(rng);
                dy = jitter.sample(rng);
                ds = size_jitter.sample(rng);
            }
            p.cx[t] = x + dx;
            p.cy[t] = y + dy;
            p.w[t] = w * ds.exp();
            p.h[t] = h * ds.exp();
        }
    }
}

fn inject_zigzag(p: &mut Path2, (start, end): (usize, usize), sev: &Severity, fps: f64) {
    for t in start..end {
        let phase = 2.0 * std::f64::consts::PI * sev.zigzag_hz * (t - start) as f64 / fps;
        let off = sev.zigzag_amplitude * phase.sin();
        let th = p.heading[t];
        p.cx[t] += -th.sin() * off;
        p.cy[t] += th.cos() * off;
    }
}

fn inject_stop(p: &mut Path2, start: usize) {
    let n = p.cx.len();
    for t in start..n {
        p.cx[t] = p.cx[start];
        p.cy[t] = p.cy[start];
        p.w[t] = p.w[start];
        p.h[t] = p.h[start];
    }
}

/// Simulates one video. Injection needs two objects for a collision and one
/// for the other kinds; with fewer objects only the labels are set.
pub fn generate_video(spec: &ScenarioSpec) -> Result<VideoRecord> {
    spec.validate()?;
    let n = spec.num_frames;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let stop_speed = (spec.anomaly_kind == AnomalyKind::SuddenStop).then_some(spec.severity.stop_speed);
    let mut paths: Vec<Path2> = (0..spec.num_objects)
        .map(|i| {
            let speed = if i == 0 { stop_speed } else { None };
            simulate_object(&mut rng, &spec.kinematics, n, speed)
        })
        .collect();
    let interval = spec.interval();
    match spec.anomaly_kind {
        AnomalyKind::None => {}
        AnomalyKind::PairCollision if paths.len() >= 2 => {
            let (first, rest) = paths.split_at_mut(1);
            inject_collision(&mut first[0], &mut rest[0], interval, &spec.severity, &mut rng);
        }
        AnomalyKind::Zigzag if !paths.is_empty() => {
            inject_zigzag(&mut paths[0], interval, &spec.severity, spec.fps)
        }
        AnomalyKind::SuddenStop if !paths.is_empty() => inject_stop(&mut paths[0], interval.0),
        _ => log::warn!(
            "{}: too few objects to inject {}",
            spec.video_id,
            spec.anomaly_kind
        ),
    }

    let noise = (spec.noise_std > 0.0)
        .then(|| Normal::new(0.0, spec.noise_std).expect("finite noise"));
    let draw = |rng: &mut ChaCha8Rng| noise.map_or(0.0, |d| d.sample(rng));
    let mut tracks = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        if n == 0 {
            break;
        }
        let boxes = (0..n)
            .map(|t| BBox {
                cx: p.cx[t] + draw(&mut rng),
                cy: p.cy[t] + draw(&mut rng),
                w: (p.w[t] + draw(&mut rng)).max(MIN_SIZE),
                h: (p.h[t] + draw(&mut rng)).max(MIN_SIZE),
            })
            .collect();
        tracks.push(Track::new(i as u64 + 1, 0, boxes)?);
    }
    let mut frame_labels = vec![0u8; n];
    frame_labels[interval.0..interval.1].fill(1);
    let anomalous = spec.anomaly_kind != AnomalyKind::None;
    let video = VideoRecord {
        video_id: spec.video_id.clone(),
        fps: spec.fps,
        num_frames: n,
        tracks,
        frame_labels,
        category: spec.anomaly_kind.category().to_string(),
        involvement: anomalous.then_some(Involvement::NonEgo),
    };
    video.validate()?;
    Ok(video)
}

/// Settings for a train/test pair of video sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub train_count: usize,
    pub test_count: usize,
    /// Fraction of anomalous test videos.
    pub anomalous_fraction: f64,
    /// Injected kinds, assigned round-robin to anomalous test videos.
    pub kinds: Vec<AnomalyKind>,
    pub seed: u64,
    pub num_frames: usize,
    pub fps: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub noise_std: f64,
    /// Labeled interval of collisions and zigzags, as fractions of the video.
    pub start_frac: (f64, f64),
    pub end_frac: (f64, f64),
    /// Labeled duration after a sudden stop, seconds.
    pub stop_label_secs: f64,
    pub kinematics: Kinematics,
    pub severity: Severity,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            train_count: 100,
            test_count: 200,
            anomalous_fraction: 0.5,
            kinds: AnomalyKind::INJECTED.to_vec(),
            seed: 0,
            num_frames: 240,
            fps: 10.0,
            min_objects: 2,
            max_objects: 4,
            noise_std: 0.0015,
            start_frac: (0.4, 0.55),
            end_frac: (0.9, 1.0),
            stop_label_secs: 3.0,
            kinematics: Kinematics::default(),
            severity: Severity::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.train_count > 0
            && self.test_count > 0
            && (0.0..=1.0).contains(&self.anomalous_fraction)
            && (self.anomalous_fraction == 0.0 || !self.kinds.is_empty())
            && !self.kinds.contains(&AnomalyKind::None)
            && self.min_objects <= self.max_objects
            && self.num_frames > 0
            && self.start_frac.0 <= self.start_frac.1
            && self.end_frac.0 <= self.end_frac.1
            && self.start_frac.1 < self.end_frac.0
            && self.stop_label_secs > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("invalid dataset spec".into()))
        }
    }

    fn scenario(&self, id: String, seed: u64, kind: AnomalyKind) -> ScenarioSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let lo = if kind == AnomalyKind::PairCollision {
            self.min_objects.max(2)
        } else {
            self.min_objects
        };
        let num_objects = rng.gen_range(lo..=self.max_objects.max(lo));
        let start = uniform(&mut rng, self.start_frac.0, self.start_frac.1);
        let end = match kind {
            AnomalyKind::SuddenStop => {
                let dur = self.stop_label_secs * self.fps / self.num_frames as f64;
                (start + dur).min(1.0)
            }
            _ => uniform(&mut rng, self.end_frac.0, self.end_frac.1),
        };
        ScenarioSpec {
            video_id: id,
            seed,
            num_frames: self.num_frames,
            fps: self.fps,
            num_objects,
            anomaly_kind: kind,
            anomaly_start_frac: start,
            anomaly_end_frac: end.max(start + 1e-9).min(1.0),
            noise_std: self.noise_std,
            kinematics: self.kinematics,
            severity: self.severity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<VideoRecord>,
    pub test: Vec<VideoRecord>,
}

/// Normal-only training videos and a test set with `round(fraction * count)`
/// anomalous videos spread evenly through it.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut seeds = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = (0..spec.train_count)
        .map(|i| {
            let s = spec.scenario(format!("train_{i:04}"), seeds.gen(), AnomalyKind::None);
            generate_video(&s)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = spec.test_count;
    let n_anom = (spec.anomalous_fraction * n as f64).round() as usize;
    let mut next_kind = 0;
    let test = (0..n)
        .map(|i| {
            let anomalous = (i + 1) * n_anom / n > i * n_anom / n;
            let kind = if anomalous {
                next_kind += 1;
                spec.kinds[(next_kind - 1) % spec.kinds.len()]
            } else {
                AnomalyKind::None
            };
            generate_video(&spec.scenario(format!("test_{i:04}"), seeds.gen(), kind))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { train, test })
}

/// Writes `train/` and `test/` track and metadata files under `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    for (name, videos) in [("train", &data.train), ("test", &data.test)] {
        let sub = dir.join(name);
        for v in videos {
            write_video(&sub, v)?;
        }
    }
    Ok(())
}

/// Stand-in scene-expert score levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneScoreSpec {
    pub ffp_mean: f64,
    pub ffp_std: f64,
    pub str_mean: f64,
    pub str_std: f64,
    /// Offsets added inside the labeled interval of elevated videos.
    pub ffp_delta: f64,
    pub str_delta: f64,
}

impl Default for SceneScoreSpec {
    fn default() -> Self {
        SceneScoreSpec {
            ffp_mean: -30.0,
            ffp_std: 1.5,
            str_mean: 5.0,
            str_std: 0.5,
            ffp_delta: 6.0,
            str_delta: 2.0,
        }
    }
}

/// Gaussian stand-in scene scores aligned with the video's frames; when
/// `elevated`, the labeled interval is offset by the configured deltas.
pub fn synth_scene_scores(
    video: &VideoRecord,
    spec: &SceneScoreSpec,
    elevated: bool,
    seed: u64,
) -> Result<SceneScores> {
    let ffp_noise = Normal::new(0.0, spec.ffp_std)
        .map_err(|e| Error::InvalidArgument(format!("ffp_std: {e}")))?;
    let str_noise = Normal::new(0.0, spec.str_std)
        .map_err(|e| Error::InvalidArgument(format!("str_std: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ffp = Vec::with_capacity(video.num_frames);
    let mut str_ = Vec::with_capacity(video.num_frames);
    for &label in &video.frame_labels {
        let on = elevated && label == 1;
        ffp.push(spec.ffp_mean + ffp_noise.sample(&mut rng) + if on { spec.ffp_delta } else { 0.0 });
        str_.push(spec.str_mean + str_noise.sample(&mut rng) + if on { spec.str_delta } else { 0.0 });
    }
    let vf = |v: usize| v.min(video.num_frames.saturating_sub(1));
    Ok(SceneScores {
        ffp: ScoreSeries::new(video.video_id.clone(), ffp, vf(FFP_VALID_FROM))?,
        str_: ScoreSeries::new(video.video_id.clone(), str_, vf(STR_VALID_FROM))?,
    })
}
