//! Text file formats for tracks, video metadata and score series.
//!
//! Track file (`<video_id>.tracks.csv`), one box per line, sorted by frame then object:
//!
//! ```text
//! video_id,frame,object_id,cx,cy,w,h
//! ```
//!
//! Metadata sidecar (`<video_id>.meta`), `key=value` lines in this order:
//! `video_id`, `fps`, `num_frames`, `category`, `involvement` (`ego`, `non-ego`
//! or `none`), `frame_labels` (comma separated 0/1).
//!
//! Score series (`<video_id>.csv`): a `# valid_from=<n>` line, then
//! `video_id,frame,score`.
//!
//! Frames are 0-based. Reals are written in shortest round-trip decimal form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::video::{Involvement, ScoreSeries, Track, VideoRecord};

pub const TRACK_HEADER: &str = "video_id,frame,object_id,cx,cy,w,h";
pub const SCORE_HEADER: &str = "video_id,frame,score";
pub const TRACK_SUFFIX: &str = ".tracks.csv";
pub const META_SUFFIX: &str = ".meta";

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    name: &str,
    raw: &str,
) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("field {name}: cannot parse {raw:?}")))
}

pub fn track_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}{TRACK_SUFFIX}"))
}

pub fn meta_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}{META_SUFFIX}"))
}

pub fn format_tracks(video: &VideoRecord) -> String {
    let mut rows: Vec<(usize, u64, &BBox)> = video
        .tracks
        .iter()
        .flat_map(|t| {
            t.boxes
                .iter()
                .enumerate()
                .map(move |(k, b)| (t.first_frame + k, t.object_id, b))
        })
        .collect();
    rows.sort_by_key(|&(f, id, _)| (f, id));
    let mut out = String::with_capacity(rows.len() * 64);
    out.push_str(TRACK_HEADER);
    out.push('\n');
    for (frame, id, b) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            video.video_id, frame, id, b.cx, b.cy, b.w, b.h
        );
    }
    out
}

pub fn format_meta(video: &VideoRecord) -> String {
    let labels: Vec<String> = video.frame_labels.iter().map(|l| l.to_string()).collect();
    let involvement = video
        .involvement
        .map(|i| i.to_string())
        .unwrap_or_else(|| "none".into());
    format!(
        "video_id={}\nfps={}\nnum_frames={}\ncategory={}\ninvolvement={}\nframe_labels={}\n",
        video.video_id,
        video.fps,
        video.num_frames,
        video.category,
        involvement,
        labels.join(",")
    )
}

/// Writes `<video_id>.tracks.csv` and `<video_id>.meta` into `dir`.
pub fn write_video(dir: &Path, video: &VideoRecord) -> Result<()> {
    write_text(&track_path(dir, &video.video_id), &format_tracks(video))?;
    write_text(&meta_path(dir, &video.video_id), &format_meta(video))
}

struct Meta {
    video_id: String,
    fps: f64,
    num_frames: usize,
    category: String,
    involvement: Option<Involvement>,
    frame_labels: Vec<u8>,
}

const META_KEYS: [&str; 6] = [
    "video_id",
    "fps",
    "num_frames",
    "category",
    "involvement",
    "frame_labels",
];

fn parse_meta(path: &Path, text: &str) -> Result<Meta> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != META_KEYS.len() {
        return Err(parse_err(
            path,
            lines.len() + 1,
            format!("expected {} keys, found {}", META_KEYS.len(), lines.len()),
        ));
    }
    let mut values = Vec::with_capacity(META_KEYS.len());
    for (i, (line, key)) in lines.iter().zip(META_KEYS).enumerate() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, i + 1, "expected key=value"))?;
        if k.trim() != key {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected key {key:?}, found {:?}", k.trim()),
            ));
        }
        values.push(v.trim());
    }
    let involvement = match values[4] {
        "none" => None,
        tag => Some(
            tag.parse::<Involvement>()
                .map_err(|e| parse_err(path, 5, e.to_string()))?,
        ),
    };
    let frame_labels = if values[5].is_empty() {
        Vec::new()
    } else {
        values[5]
            .split(',')
            .map(|s| parse_field::<u8>(path, 6, "frame_labels", s))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(Meta {
        video_id: values[0].to_string(),
        fps: parse_field(path, 2, "fps", values[1])?,
        num_frames: parse_field(path, 3, "num_frames", values[2])?,
        category: values[3].to_string(),
        involvement,
        frame_labels,
    })
}

fn parse_tracks(path: &Path, text: &str, video_id: &str) -> Result<Vec<Track>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACK_HEADER => {}
        _ => return Err(parse_err(path, 1, format!("expected header {TRACK_HEADER:?}"))),
    }
    let mut per_object: BTreeMap<u64, Vec<(usize, BBox)>> = BTreeMap::new();
    for (i, line) in lines {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(parse_err(path, ln, format!("expected 7 fields, found {}", f.len())));
        }
        if f[0] != video_id {
            return Err(parse_err(
                path,
                ln,
                format!("video_id {:?} does not match {video_id:?}", f[0]),
            ));
        }
        let frame: usize = parse_field(path, ln, "frame", f[1])?;
        let id: u64 = parse_field(path, ln, "object_id", f[2])?;
        let b = BBox {
            cx: parse_field(path, ln, "cx", f[3])?,
            cy: parse_field(path, ln, "cy", f[4])?,
            w: parse_field(path, ln, "w", f[5])?,
            h: parse_field(path, ln, "h", f[6])?,
        };
        b.validate().map_err(|e| parse_err(path, ln, e.to_string()))?;
        per_object.entry(id).or_default().push((frame, b));
    }
    let mut tracks = Vec::with_capacity(per_object.len());
    for (id, mut rows) in per_object {
        rows.sort_by_key(|r| r.0);
        let first = rows[0].0;
        for (k, (frame, _)) in rows.iter().enumerate() {
            if *frame != first + k {
                return Err(parse_err(
                    path,
                    0,
                    format!("object {id} is not contiguous at frame {frame}"),
                ));
            }
        }
        tracks.push(Track::new(id, first, rows.into_iter().map(|r| r.1).collect())?);
    }
    Ok(tracks)
}

pub fn read_video(dir: &Path, video_id: &str) -> Result<VideoRecord> {
    let mpath = meta_path(dir, video_id);
    let meta = parse_meta(&mpath, &read_text(&mpath)?)?;
    let tpath = track_path(dir, video_id);
    let tracks = parse_tracks(&tpath, &read_text(&tpath)?, &meta.video_id)?;
    let video = VideoRecord {
        video_id: meta.video_id,
        fps: meta.fps,
        num_frames: meta.num_frames,
        tracks,
        frame_labels: meta.frame_labels,
        category: meta.category,
        involvement: meta.involvement,
    };
    video.validate()?;
    Ok(video)
}

/// Video ids with a metadata sidecar in `dir`, sorted.
pub fn list_videos(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(META_SUFFIX)) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn read_videos(dir: &Path) -> Result<Vec<VideoRecord>> {
    list_videos(dir)?
        .iter()
        .map(|id| read_video(dir, id))
        .collect()
}

pub fn format_scores(series: &ScoreSeries) -> String {
    let mut out = String::with_capacity(series.scores.len() * 32 + 64);
    let _ = writeln!(out, "# valid_from={}", series.valid_from);
    out.push_str(SCORE_HEADER);
    out.push('\n');
    for (frame, s) in series.scores.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", series.video_id, frame, s);
    }
    out
}

pub fn write_scores(path: &Path, series: &ScoreSeries) -> Result<()> {
    write_text(path, &format_scores(series))
}

/// Reads `# key=value` comment lines preceding the header.
pub(crate) fn leading_comments<'a>(
    lines: &mut std::iter::Peekable<impl Iterator<Item = (usize, &'a str)>>,
) -> BTreeMap<String, (usize, String)> {
    let mut out = BTreeMap::new();
    while let Some(&(i, line)) = lines.peek() {
        let Some(rest) = line.trim().strip_prefix('#') else {
            break;
        };
        for kv in rest.split_whitespace() {
            if let Some((k, v)) = kv.split_once('=') {
                out.insert(k.to_string(), (i + 1, v.to_string()));
            }
        }
        lines.next();
    }
    out
}

pub fn parse_scores(path: &Path, text: &str) -> Result<ScoreSeries> {
    let mut lines = text.lines().enumerate().peekable();
    let meta = leading_comments(&mut lines);
    let valid_from = match meta.get("valid_from") {
        Some((ln, v)) => parse_field(path, *ln, "valid_from", v)?,
        None => return Err(parse_err(path, 1, "missing '# valid_from=' line")),
    };
    match lines.next() {
        Some((_, h)) if h.trim() == SCORE_HEADER => {}
        Some((i, _)) => return Err(parse_err(path, i + 1, format!("expected header {SCORE_HEADER:?}"))),
        None => return Err(parse_err(path, 1, "missing header")),
    }
    let mut video_id: Option<String> = None;
    let mut scores = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(parse_err(path, ln, format!("expected 3 fields, found {}", f.len())));
        }
        match &video_id {
            None => video_id = Some(f[0].to_string()),
            Some(v) if v != f[0] => {
                return Err(parse_err(path, ln, format!("mixed video ids {v:?} and {:?}", f[0])))
            }
            _ => {}
        }
        let frame: usize = parse_field(path, ln, "frame", f[1])?;
        if frame != scores.len() {
            return Err(Error::MissingFrame {
                video_id: f[0].to_string(),
                frame: scores.len(),
            });
        }
        let s: f64 = parse_field(path, ln, "score", f[2])?;
        if !s.is_finite() {
            return Err(parse_err(path, ln, "non-finite score"));
        }
        scores.push(s);
    }
    let video_id = video_id.ok_or_else(|| parse_err(path, 2, "no score rows"))?;
    ScoreSeries::new(video_id, scores, valid_from)
}

pub fn read_scores(path: &Path) -> Result<ScoreSeries> {
    parse_scores(path, &read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_video() -> VideoRecord {
        let b = |x: f64| BBox::new(x, 0.5, 0.1, 0.2).unwrap();
        VideoRecord {
            video_id: "vid7".into(),
            fps: 10.0,
            num_frames: 6,
            tracks: vec![
                Track::new(0, 0, vec![b(0.1), b(0.1000000001), b(0.3)]).unwrap(),
                Track::new(4, 2, vec![b(0.7), b(0.6), b(1.0 / 3.0), b(0.2)]).unwrap(),
            ],
            frame_labels: vec![0, 0, 1, 1, 0, 0],
            category: "zigzag".into(),
            involvement: Some(Involvement::NonEgo),
        }
    }

    #[test]
    fn video_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample_video();
        write_video(dir.path(), &v).unwrap();
        assert_eq!(list_videos(dir.path()).unwrap(), vec!["vid7".to_string()]);
        let back = read_video(dir.path(), "vid7").unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn meta_field_order_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample_video();
        write_video(dir.path(), &v).unwrap();
        let p = meta_path(dir.path(), "vid7");
        let text = read_text(&p).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(1, 2);
        write_text(&p, &lines.join("\n")).unwrap();
        let err = read_video(dir.path(), "vid7").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn track_gap_is_rejected() {
        let text = format!("{TRACK_HEADER}\nv,0,1,0.5,0.5,0.1,0.1\nv,2,1,0.5,0.5,0.1,0.1\n");
        assert!(parse_tracks(Path::new("x"), &text, "v").is_err());
        let text = format!("{TRACK_HEADER}\nv,0,1,0.5,0.5,abc,0.1\n");
        let err = parse_tracks(Path::new("x"), &text, "v").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("field w"), "{err}");
    }

    #[test]
    fn score_round_trip_and_gap() {
        let s = ScoreSeries::new("a", vec![0.1, -2.5e-7, 3.0, 1.0 / 7.0], 2).unwrap();
        let text = format_scores(&s);
        assert_eq!(parse_scores(Path::new("s"), &text).unwrap(), s);

        let gap = "# valid_from=0\nvideo_id,frame,score\na,0,1\na,2,1\n";
        match parse_scores(Path::new("s"), gap) {
            Err(Error::MissingFrame { frame, .. }) => assert_eq!(frame, 1),
            other => panic!("expected missing frame, got {other:?}"),
        }
    }
}
