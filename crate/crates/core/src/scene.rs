//! Scene-expert score and loss formulas on supplied image, flow and disparity
//! planes, plus ingestion of externally produced scene score streams.
//!
//! Planes are stored row-major with interleaved channels: value `(i, j, c)` is
//! at `(i * width + j) * channels + c`, `i` indexing rows.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trackio::{leading_comments, parse_err, parse_field, read_text, write_text};
use crate::video::ScoreSeries;

/// Floor applied to the mean squared error before taking the logarithm.
pub const MSE_FLOOR: f64 = 1e-10;

/// Transition point of the smooth-L1 loss.
pub const SMOOTH_L1_BETA: f64 = 1.0;

pub const SCENE_HEADER: &str = "video_id,frame,s_ffp,s_str";
/// First frame with a genuine frame-prediction score (four past frames needed).
pub const FFP_VALID_FROM: usize = 4;
/// First frame with a genuine reconstruction score.
pub const STR_VALID_FROM: usize = 3;

const PLANE_MAGIC: &[u8; 4] = b"RXPL";

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "plane dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{channels} plane",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("plane value".into()));
        }
        Ok(ImagePlane {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, c: usize) -> f64 {
        self.values[(i * self.width + j) * self.channels + c]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn same_shape(&self, other: &ImagePlane, what: &str) -> Result<()> {
        if (self.height, self.width, self.channels) != (other.height, other.width, other.channels)
        {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.values.len());
        out.extend_from_slice(PLANE_MAGIC);
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != PLANE_MAGIC {
            return Err(Error::InvalidArgument("not a plane fixture".into()));
        }
        let dim = |k: usize| {
            let mut b = [0u8; 4];
            b.copy_from_slice(&bytes[4 + 4 * k..8 + 4 * k]);
            u32::from_le_bytes(b) as usize
        };
        let (h, w, c) = (dim(0), dim(1), dim(2));
        let body = &bytes[16..];
        if body.len() != 8 * h * w * c {
            return Err(Error::ShapeMismatch(format!(
                "plane fixture holds {} bytes for {h}x{w}x{c}",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|ch| f64::from_le_bytes(ch.try_into().expect("chunk of 8")))
            .collect();
        ImagePlane::new(h, w, c, values)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Negative PSNR of a predicted frame: `10 log10(mse)`, values in `[0, 1]`.
///
/// The mean runs over every stored value (pixels times channels).
pub fn psnr_score(predicted: &ImagePlane, actual: &ImagePlane) -> Result<f64> {
    predicted.same_shape(actual, "psnr_score")?;
    let sse: f64 = predicted
        .values
        .iter()
        .zip(&actual.values)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    let mse = (sse / predicted.len() as f64).max(MSE_FLOOR);
    Ok(10.0 * mse.log10())
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < SMOOTH_L1_BETA {
        0.5 * a * a / SMOOTH_L1_BETA
    } else {
        a - 0.5 * SMOOTH_L1_BETA
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FfpLosses {
    pub l2: f64,
    pub grad: f64,
    pub flow: f64,
    pub total: f64,
}

fn gradient_loss(p: &ImagePlane, a: &ImagePlane) -> f64 {
    let mut sum = 0.0;
    for i in 0..p.height {
        for j in 0..p.width {
            for c in 0..p.channels {
                if i > 0 {
                    let dp = (p.at(i, j, c) - p.at(i - 1, j, c)).abs();
                    let da = (a.at(i, j, c) - a.at(i - 1, j, c)).abs();
                    sum += (dp - da).abs();
                }
                if j > 0 {
                    let dp = (p.at(i, j, c) - p.at(i, j - 1, c)).abs();
                    let da = (a.at(i, j, c) - a.at(i, j - 1, c)).abs();
                    sum += (dp - da).abs();
                }
            }
        }
    }
    sum
}

/// Intensity, gradient and flow losses of the frame predictor, with unit weights.
pub fn ffp_losses(
    pred_img: &ImagePlane,
    target_img: &ImagePlane,
    pred_flow: &ImagePlane,
    target_flow: &ImagePlane,
) -> Result<FfpLosses> {
    pred_img.same_shape(target_img, "ffp image")?;
    pred_flow.same_shape(target_flow, "ffp flow")?;
    let l2 = pred_img
        .values
        .iter()
        .zip(&target_img.values)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    let grad = gradient_loss(pred_img, target_img);
    let flow = pred_flow
        .values
        .iter()
        .zip(&target_flow.values)
        .map(|(p, a)| smooth_l1(p - a))
        .sum();
    Ok(FfpLosses {
        l2,
        grad,
        flow,
        total: l2 + grad + flow,
    })
}

pub fn l1_loss(recon: &ImagePlane, orig: &ImagePlane) -> f64 {
    recon
        .values
        .iter()
        .zip(&orig.values)
        .map(|(r, o)| (r - o).abs())
        .sum()
}

/// Squared forward differences along both spatial axes.
pub fn total_variation(p: &ImagePlane) -> f64 {
    let mut sum = 0.0;
    for i in 0..p.height {
        for j in 0..p.width {
            for c in 0..p.channels {
                if i > 0 {
                    let d = p.at(i, j, c) - p.at(i - 1, j, c);
                    sum += d * d;
                }
                if j > 0 {
                    let d = p.at(i, j, c) - p.at(i, j - 1, c);
                    sum += d * d;
                }
            }
        }
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrWeights {
    pub disparity: f64,
    pub tv: f64,
}

impl Default for StrWeights {
    fn default() -> Self {
        StrWeights {
            disparity: 100.0,
            tv: 0.1,
        }
    }
}

/// Reconstruction score of the spatio-temporal autoencoder, equal to its training loss.
pub fn str_score(
    recon_disp: &ImagePlane,
    disp: &ImagePlane,
    recon_flow: &ImagePlane,
    flow: &ImagePlane,
    weights: StrWeights,
) -> Result<f64> {
    recon_disp.same_shape(disp, "str disparity")?;
    recon_flow.same_shape(flow, "str flow")?;
    let data = weights.disparity * l1_loss(recon_disp, disp) + l1_loss(recon_flow, flow);
    let smooth =
        weights.disparity * total_variation(recon_disp) + total_variation(recon_flow);
    Ok(data + weights.tv * smooth)
}

/// Clips raw disparity at `upper` and scales it into `[0, 1]`.
pub fn normalize_disparity(raw: &ImagePlane, upper: f64) -> Result<ImagePlane> {
    if !(upper > 0.0) {
        return Err(Error::InvalidArgument("disparity bound must be positive".into()));
    }
    let values = raw.values.iter().map(|v| v.clamp(0.0, upper) / upper).collect();
    ImagePlane::new(raw.height, raw.width, raw.channels, values)
}

/// Frame-prediction and reconstruction score streams of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneScores {
    pub ffp: ScoreSeries,
    pub str_: ScoreSeries,
}

pub fn format_scene_scores(s: &SceneScores) -> Result<String> {
    if s.ffp.len() != s.str_.len() || s.ffp.video_id != s.str_.video_id {
        return Err(Error::ShapeMismatch(
            "scene score series must cover the same video".into(),
        ));
    }
    let mut out = String::with_capacity(s.ffp.len() * 48 + 64);
    let _ = writeln!(
        out,
        "# valid_from_ffp={} valid_from_str={}",
        s.ffp.valid_from, s.str_.valid_from
    );
    out.push_str(SCENE_HEADER);
    out.push('\n');
    for (frame, (a, b)) in s.ffp.scores.iter().zip(&s.str_.scores).enumerate() {
        let _ = writeln!(out, "{},{},{},{}", s.ffp.video_id, frame, a, b);
    }
    Ok(out)
}

pub fn write_scene_scores(path: &Path, s: &SceneScores) -> Result<()> {
    write_text(path, &format_scene_scores(s)?)
}

pub fn parse_scene_scores(path: &Path, text: &str) -> Result<SceneScores> {
    let mut lines = text.lines().enumerate().peekable();
    let meta = leading_comments(&mut lines);
    let vf = |key: &str| -> Result<usize> {
        match meta.get(key) {
            Some((ln, v)) => parse_field(path, *ln, key, v),
            None => Err(parse_err(path, 1, format!("missing '# {key}=' metadata"))),
        }
    };
    let (vf_ffp, vf_str) = (vf("valid_from_ffp")?, vf("valid_from_str")?);
    match lines.next() {
        Some((_, h)) if h.trim() == SCENE_HEADER => {}
        Some((i, _)) => {
            return Err(parse_err(path, i + 1, format!("expected header {SCENE_HEADER:?}")))
        }
        None => return Err(parse_err(path, 1, "missing header")),
    }
    let mut video_id: Option<String> = None;
    let (mut ffp, mut str_) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(parse_err(path, ln, format!("expected 4 fields, found {}", f.len())));
        }
        match &video_id {
            None => video_id = Some(f[0].to_string()),
            Some(v) if v != f[0] => {
                return Err(parse_err(path, ln, format!("mixed video ids {v:?} and {:?}", f[0])))
            }
            _ => {}
        }
        let frame: usize = parse_field(path, ln, "frame", f[1])?;
        if frame != ffp.len() {
            return Err(Error::MissingFrame {
                video_id: f[0].to_string(),
                frame: ffp.len(),
            });
        }
        let a: f64 = parse_field(path, ln, "s_ffp", f[2])?;
        let b: f64 = parse_field(path, ln, "s_str", f[3])?;
        if !(a.is_finite() && b.is_finite()) {
            return Err(parse_err(path, ln, "non-finite score"));
        }
        ffp.push(a);
        str_.push(b);
    }
    let video_id = video_id.ok_or_else(|| parse_err(path, 2, "no score rows"))?;
    Ok(SceneScores {
        ffp: ScoreSeries::new(video_id.clone(), ffp, vf_ffp)?,
        str_: ScoreSeries::new(video_id, str_, vf_str)?,
    })
}

/// Loads the two scene score streams of one video.
pub fn load_scene_scores(path: &Path) -> Result<(ScoreSeries, ScoreSeries)> {
    let s = parse_scene_scores(path, &read_text(path)?)?;
    Ok((s.ffp, s.str_))
}
