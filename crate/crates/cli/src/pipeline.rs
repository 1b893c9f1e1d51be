//! Pipeline stages. Each stage reads and writes only the files of the
//! layout below, so stages can be re-run independently.
//!
//! ```text
//! data/{train,test}/<id>.tracks.csv, <id>.meta
//! data/scene/{train,test}/<id>.scene.csv
//! weights/{interaction,behavior}.json, <expert>.train.toml
//! scores/{train,test}/{int,beh}/<id>.csv
//! scores/fused/<id>.fused.csv, scores/stats.toml
//! report/report_<source>.{txt,toml}, roc_<source>.csv, classification.csv
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use roadex_core::eval::{evaluate, roc_points, EvalResult, LabeledScores, Protocol};
use roadex_core::fusion::{
    classify_video, fit_normalizer, fuse, read_fused, write_fused, EnsembleStats, Expert, FilterStart,
    FusedSeries, NormalizationStats,
};
use roadex_core::scene::{load_scene_scores, write_scene_scores};
use roadex_core::simgen::{generate_dataset, synth_scene_scores, write_dataset};
use roadex_core::trackio::{read_scores, read_videos, write_scores};
use roadex_core::{Involvement, ScoreSeries, VideoRecord};
use roadex_experts::{BehaviorExpert, InteractionExpert, TrainReport};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const SPLITS: [&str; 2] = ["train", "test"];

/// Trajectory expert selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryExpert {
    Interaction,
    Behavior,
}

impl TrajectoryExpert {
    pub const ALL: [TrajectoryExpert; 2] = [TrajectoryExpert::Interaction, TrajectoryExpert::Behavior];

    pub fn name(self) -> &'static str {
        match self {
            TrajectoryExpert::Interaction => "interaction",
            TrajectoryExpert::Behavior => "behavior",
        }
    }

    pub fn expert(self) -> Expert {
        match self {
            TrajectoryExpert::Interaction => Expert::Int,
            TrajectoryExpert::Behavior => Expert::Beh,
        }
    }
}

/// Score stream to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Fused,
    Expert(Expert),
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Fused => "fused",
            Source::Expert(e) => e.name(),
        }
    }
}

impl FromStr for Source {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "fused" {
            Ok(Source::Fused)
        } else {
            Ok(Source::Expert(s.parse()?))
        }
    }
}

/// Artifact locations derived from the configured directories.
#[derive(Debug, Clone)]
pub struct Layout {
    pub data: PathBuf,
    pub weights: PathBuf,
    pub scores: PathBuf,
    pub report: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Layout {
            data: cfg.paths.data_dir.clone(),
            weights: cfg.paths.weights_dir.clone(),
            scores: cfg.paths.scores_dir.clone(),
            report: cfg.paths.report_dir.clone(),
        }
    }

    pub fn videos(&self, split: &str) -> PathBuf {
        self.data.join(split)
    }

    pub fn scene(&self, split: &str, id: &str) -> PathBuf {
        self.data.join("scene").join(split).join(format!("{id}.scene.csv"))
    }

    pub fn weights(&self, e: TrajectoryExpert) -> PathBuf {
        self.weights.join(format!("{}.json", e.name()))
    }

    pub fn train_report(&self, e: TrajectoryExpert) -> PathBuf {
        self.weights.join(format!("{}.train.toml", e.name()))
    }

    pub fn expert_scores(&self, split: &str, e: Expert, id: &str) -> PathBuf {
        self.scores.join(split).join(e.name()).join(format!("{id}.csv"))
    }

    pub fn fused(&self, id: &str) -> PathBuf {
        self.scores.join("fused").join(format!("{id}.fused.csv"))
    }

    pub fn stats(&self) -> PathBuf {
        self.scores.join("stats.toml")
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn require(path: &Path, what: &str, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput {
            what: what.to_string(),
            path: path.to_path_buf(),
            stage,
        })
    }
}

fn remove_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

/// Runs `f` over `items` on at most `jobs` threads, preserving order.
pub fn parallel_map<T, U, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Scores every video with `f`, logging per-video wall time.
pub fn score_videos<F>(stage: &str, videos: &[VideoRecord], jobs: usize, f: F) -> Result<Vec<ScoreSeries>>
where
    F: Fn(&VideoRecord) -> Result<ScoreSeries> + Sync + Send,
{
    parallel_map(videos, jobs, |v| {
        let t = Instant::now();
        let s = f(v)?;
        log::debug!(
            "stage={stage} video={} ms={:.1}",
            v.video_id,
            t.elapsed().as_secs_f64() * 1e3
        );
        Ok(s)
    })
}

/// Fits each expert's normalizer on the genuine frames of normal videos.
/// `train` holds, per video, the series of ffp, str, int and beh.
pub fn fit_ensemble_stats(train: &[[ScoreSeries; 4]], alpha: f64) -> Result<EnsembleStats> {
    let mut stats = Vec::with_capacity(4);
    for e in Expert::ALL {
        let samples: Vec<f64> = train
            .iter()
            .flat_map(|s| s[e.index()].valid_scores().iter().copied())
            .collect();
        let st: NormalizationStats = fit_normalizer(&samples, alpha).map_err(|err| {
            CliError::Invalid(format!("fitting the {} normalizer: {err}", e.name()))
        })?;
        stats.push(st);
    }
    let arr: [NormalizationStats; 4] = stats.try_into().expect("four experts");
    Ok(EnsembleStats::from_array(arr))
}

pub fn fuse_all(
    test: &[[ScoreSeries; 4]],
    stats: &EnsembleStats,
    mode: FilterStart,
    jobs: usize,
) -> Result<Vec<FusedSeries>> {
    parallel_map(test, jobs, |s| {
        Ok(fuse([&s[0], &s[1], &s[2], &s[3]], stats, mode)?)
    })
}

pub fn labeled(series: &[ScoreSeries], videos: &[VideoRecord]) -> Result<Vec<LabeledScores>> {
    if series.len() != videos.len() {
        return Err(CliError::Invalid(format!(
            "{} score series for {} videos",
            series.len(),
            videos.len()
        )));
    }
    series
        .iter()
        .zip(videos)
        .map(|(s, v)| {
            if s.video_id != v.video_id {
                return Err(CliError::Invalid(format!(
                    "score series {} paired with video {}",
                    s.video_id, v.video_id
                )));
            }
            Ok(LabeledScores::from_video(s, v)?)
        })
        .collect()
}

/// Predicted involvement per fused video.
pub fn classify_all(fused: &[FusedSeries]) -> Result<Vec<(String, Involvement)>> {
    fused
        .iter()
        .map(|f| Ok((f.video_id.clone(), classify_video(&f.states)?)))
        .collect()
}

/// Per-class accuracy over videos that carry an involvement label.
pub fn classification_accuracy(
    predicted: &[(String, Involvement)],
    videos: &[VideoRecord],
) -> BTreeMap<Involvement, (usize, usize)> {
    let truth: BTreeMap<&str, Option<Involvement>> =
        videos.iter().map(|v| (v.video_id.as_str(), v.involvement)).collect();
    let mut out: BTreeMap<Involvement, (usize, usize)> = BTreeMap::new();
    for (id, p) in predicted {
        if let Some(Some(t)) = truth.get(id.as_str()) {
            let e = out.entry(*t).or_default();
            e.1 += 1;
            if p == t {
                e.0 += 1;
            }
        }
    }
    out
}

/// Seed of the stand-in scene scores of video `index` of `split`.
pub fn scene_seed(seed: u64, split: &str, index: usize) -> u64 {
    let salt: u64 = if split == "train" { 0x7261 } else { 0x7465 };
    seed ^ (salt << 32) ^ index as u64
}

/// Writes the dataset and stand-in scene scores; replaces earlier output.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(usize, usize)> {
    let t = Instant::now();
    let layout = Layout::new(cfg);
    let data = generate_dataset(&cfg.dataset_spec())?;
    for split in SPLITS {
        remove_dir(&layout.videos(split))?;
    }
    remove_dir(&layout.data.join("scene"))?;
    write_dataset(&layout.data, &data)?;
    for (split, videos) in [("train", &data.train), ("test", &data.test)] {
        for (i, v) in videos.iter().enumerate() {
            let s = synth_scene_scores(v, &cfg.scene, false, scene_seed(cfg.seed, split, i))?;
            write_scene_scores(&layout.scene(split, &v.video_id), &s)?;
        }
    }
    log::info!(
        "stage=simulate train={} test={} ms={:.0}",
        data.train.len(),
        data.test.len(),
        t.elapsed().as_secs_f64() * 1e3
    );
    Ok((data.train.len(), data.test.len()))
}

fn read_split(layout: &Layout, split: &str) -> Result<Vec<VideoRecord>> {
    let dir = layout.videos(split);
    require(&dir, &format!("{split} videos"), "simulate")?;
    let videos = read_videos(&dir)?;
    if videos.is_empty() {
        return Err(CliError::MissingInput {
            what: format!("{split} videos"),
            path: dir,
            stage: "simulate",
        });
    }
    Ok(videos)
}

/// Trains one expert on the training split and saves its weights.
pub fn cmd_train(cfg: &RunConfig, which: TrajectoryExpert) -> Result<TrainReport> {
    let t = Instant::now();
    let layout = Layout::new(cfg);
    let train = read_split(&layout, "train")?;
    let report = match which {
        TrajectoryExpert::Interaction => {
            let mut e = InteractionExpert::new(cfg.interaction_config())?;
            let r = e.train(&train, &[])?;
            e.save(&layout.weights(which))?;
            r
        }
        TrajectoryExpert::Behavior => {
            let mut e = BehaviorExpert::new(cfg.behavior_config())?;
            let r = e.train(&train, &[])?;
            e.save(&layout.weights(which))?;
            r
        }
    };
    let text = toml::to_string(&report).map_err(|e| CliError::Invalid(e.to_string()))?;
    write_text(&layout.train_report(which), &text)?;
    log::info!(
        "stage=train expert={} loss={} checksum={} ms={:.0}",
        which.name(),
        report.final_loss(),
        report.checksum,
        t.elapsed().as_secs_f64() * 1e3
    );
    Ok(report)
}

/// A trained expert ready for scoring.
pub enum Scorer {
    Interaction(InteractionExpert),
    Behavior(BehaviorExpert),
}

impl Scorer {
    pub fn load(cfg: &RunConfig, which: TrajectoryExpert) -> Result<Self> {
        let path = Layout::new(cfg).weights(which);
        require(&path, &format!("{} weights", which.name()), "train")?;
        Ok(match which {
            TrajectoryExpert::Interaction => {
                Scorer::Interaction(InteractionExpert::load(cfg.interaction_config(), &path)?)
            }
            TrajectoryExpert::Behavior => Scorer::Behavior(BehaviorExpert::load(cfg.behavior_config(), &path)?),
        })
    }

    pub fn score(&self, v: &VideoRecord) -> Result<ScoreSeries> {
        Ok(match self {
            Scorer::Interaction(e) => e.score(v)?,
            Scorer::Behavior(e) => e.score(v)?,
        })
    }
}

/// Scores both splits with one trained expert.
pub fn cmd_score(cfg: &RunConfig, which: TrajectoryExpert, jobs: usize) -> Result<usize> {
    let layout = Layout::new(cfg);
    let scorer = Scorer::load(cfg, which)?;
    let mut n = 0;
    for split in SPLITS {
        let t = Instant::now();
        let videos = read_split(&layout, split)?;
        let stage = format!("score.{}", which.name());
        let series = score_videos(&stage, &videos, jobs, |v| scorer.score(v))?;
        let dir = layout.scores.join(split).join(which.expert().name());
        remove_dir(&dir)?;
        for s in &series {
            write_scores(&layout.expert_scores(split, which.expert(), &s.video_id), s)?;
        }
        n += series.len();
        log::info!(
            "stage=score expert={} split={split} videos={} ms={:.0}",
            which.name(),
            series.len(),
            t.elapsed().as_secs_f64() * 1e3
        );
    }
    Ok(n)
}

/// The four expert series of every video of `split`.
pub fn load_expert_series(layout: &Layout, split: &str, videos: &[VideoRecord]) -> Result<Vec<[ScoreSeries; 4]>> {
    videos
        .iter()
        .map(|v| {
            let id = &v.video_id;
            let scene = layout.scene(split, id);
            require(&scene, "scene scores", "simulate")?;
            let (ffp, str_) = load_scene_scores(&scene)?;
            let mut traj = Vec::with_capacity(2);
            for which in TrajectoryExpert::ALL {
                let p = layout.expert_scores(split, which.expert(), id);
                require(&p, &format!("{} scores", which.name()), "score")?;
                traj.push(read_scores(&p)?);
            }
            let beh = traj.pop().expect("two experts");
            let int = traj.pop().expect("two experts");
            Ok([ffp, str_, int, beh])
        })
        .collect()
}

/// Fits normalizers on the training split and fuses the test split.
pub fn cmd_fuse(cfg: &RunConfig, mode: FilterStart, jobs: usize) -> Result<EnsembleStats> {
    let t = Instant::now();
    let layout = Layout::new(cfg);
    let train = read_split(&layout, "train")?;
    let stats = fit_ensemble_stats(&load_expert_series(&layout, "train", &train)?, cfg.fusion.alpha)?;
    stats.write(&layout.stats())?;
    let test = read_split(&layout, "test")?;
    let fused = fuse_all(&load_expert_series(&layout, "test", &test)?, &stats, mode, jobs)?;
    remove_dir(&layout.scores.join("fused"))?;
    for f in &fused {
        write_fused(&layout.fused(&f.video_id), f)?;
    }
    log::info!(
        "stage=fuse mode={mode:?} videos={} tau={} ms={:.0}",
        fused.len(),
        stats.threshold(),
        t.elapsed().as_secs_f64() * 1e3
    );
    Ok(stats)
}

fn load_fused(layout: &Layout, videos: &[VideoRecord]) -> Result<Vec<FusedSeries>> {
    videos
        .iter()
        .map(|v| {
            let p = layout.fused(&v.video_id);
            require(&p, "fused scores", "fuse")?;
            Ok(read_fused(&p)?)
        })
        .collect()
}

/// Evaluates one score stream of the test split; writes text and TOML
/// reports, and the ROC points when `roc` is set.
pub fn cmd_eval(
    cfg: &RunConfig,
    source: Source,
    protocol: Protocol,
    tau: Option<f64>,
    roc: bool,
) -> Result<EvalResult> {
    let layout = Layout::new(cfg);
    let test = read_split(&layout, "test")?;
    let series: Vec<ScoreSeries> = match source {
        Source::Fused => load_fused(&layout, &test)?.iter().map(|f| f.to_score_series()).collect(),
        Source::Expert(e) => load_expert_series(&layout, "test", &test)?
            .into_iter()
            .map(|s| s[e.index()].clone())
            .collect(),
    };
    let tau = match tau.or(cfg.eval.tau) {
        Some(t) => t,
        None => {
            require(&layout.stats(), "normalizer statistics", "fuse")?;
            let stats = EnsembleStats::read(&layout.stats())?;
            match source {
                Source::Fused => stats.threshold(),
                Source::Expert(e) => stats.get(e).tau,
            }
        }
    };
    let data = labeled(&series, &test)?;
    let result = evaluate(&data, protocol, tau)?;
    let stem = format!("report_{}", source.name());
    write_text(&layout.report.join(format!("{stem}.txt")), &result.to_text())?;
    write_text(&layout.report.join(format!("{stem}.toml")), &result.to_toml())?;
    if roc {
        let mut s = Vec::new();
        let mut l = Vec::new();
        for d in &data {
            s.extend(match protocol {
                Protocol::Raw => d.scores.clone(),
                Protocol::LegacyMinmax => roadex_core::eval::minmax(&d.scores),
            });
            l.extend_from_slice(&d.labels);
        }
        let mut out = String::from("threshold,fpr,tpr\n");
        for (fpr, tpr, th) in roc_points(&s, &l)? {
            let _ = writeln!(out, "{th},{fpr},{tpr}");
        }
        write_text(&layout.report.join(format!("roc_{}.csv", source.name())), &out)?;
    }
    log::info!(
        "stage=eval source={} protocol={protocol:?} auc={} f1={}",
        source.name(),
        result.auc,
        result.f1
    );
    Ok(result)
}

/// Classifies every fused test video and writes `classification.csv`.
pub fn cmd_classify(cfg: &RunConfig) -> Result<BTreeMap<Involvement, (usize, usize)>> {
    let layout = Layout::new(cfg);
    let test = read_split(&layout, "test")?;
    let fused = load_fused(&layout, &test)?;
    let predicted = classify_all(&fused)?;
    let mut out = String::from("video_id,predicted,actual\n");
    for ((id, p), v) in predicted.iter().zip(&test) {
        let actual = v.involvement.map_or("none".to_string(), |i| i.to_string());
        let _ = writeln!(out, "{id},{p},{actual}");
    }
    write_text(&layout.report.join("classification.csv"), &out)?;
    let acc = classification_accuracy(&predicted, &test);
    for (class, (hit, n)) in &acc {
        log::info!("stage=classify class={class} correct={hit} of={n}");
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(id: &str, involvement: Option<Involvement>) -> VideoRecord {
        VideoRecord {
            video_id: id.into(),
            fps: 10.0,
            num_frames: 1,
            tracks: Vec::new(),
            frame_labels: vec![0],
            category: "x".into(),
            involvement,
        }
    }

    #[test]
    fn source_parses_fused_and_experts() {
        assert_eq!("fused".parse::<Source>().unwrap(), Source::Fused);
        assert_eq!("beh".parse::<Source>().unwrap(), Source::Expert(Expert::Beh));
        assert!("scene".parse::<Source>().is_err());
        assert_eq!(Source::Expert(Expert::Str).name(), "str");
    }

    #[test]
    fn accuracy_counts_labeled_videos_only() {
        let videos = [
            video("a", Some(Involvement::Ego)),
            video("b", Some(Involvement::Ego)),
            video("c", Some(Involvement::NonEgo)),
            video("d", None),
        ];
        let predicted = vec![
            ("a".to_string(), Involvement::Ego),
            ("b".to_string(), Involvement::NonEgo),
            ("c".to_string(), Involvement::NonEgo),
            ("d".to_string(), Involvement::Ego),
        ];
        let acc = classification_accuracy(&predicted, &videos);
        assert_eq!(acc[&Involvement::Ego], (1, 2));
        assert_eq!(acc[&Involvement::NonEgo], (1, 1));
        assert_eq!(acc.len(), 2);
    }

    #[test]
    fn labeled_rejects_misaligned_series() {
        let s = ScoreSeries::new("b", vec![0.0], 0).unwrap();
        assert!(labeled(&[s.clone()], &[video("a", None)]).is_err());
        assert!(labeled(&[s], &[]).is_err());
    }

    #[test]
    fn stats_need_enough_normal_frames() {
        let s = |n: usize| ScoreSeries::new("v", (0..n).map(|i| i as f64).collect(), 0).unwrap();
        let few = [[s(5), s(5), s(5), s(5)]];
        let err = fit_ensemble_stats(&few, 0.95).unwrap_err();
        assert!(err.to_string().contains("ffp"), "{err}");
        let many = [[s(50), s(50), s(50), s(50)]];
        assert!(fit_ensemble_stats(&many, 0.95).unwrap().threshold().is_finite());
    }

    #[test]
    fn scene_seeds_differ_by_split_and_index() {
        assert_ne!(scene_seed(1, "train", 0), scene_seed(1, "test", 0));
        assert_ne!(scene_seed(1, "train", 0), scene_seed(1, "train", 1));
        assert_eq!(scene_seed(1, "test", 3), scene_seed(1, "test", 3));
    }
}
