//! Interaction expert: reconstructs short trajectories of nearby object
//! pairs with a GRU autoencoder and scores the scaled reconstruction error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use roadex_core::{distance_score, BBox, ScoreSeries, VideoRecord};
use roadex_nn::{Activation, Adam, Grads, GruCell, Init, Linear, Mlp, ParamId, ParamStore, Tape, Var};

use crate::common::{check_positive, epoch_order, population_std, LowpassConfig, TrainReport};
use crate::error::{ExpertError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InteractionConfig {
    /// History horizon in frames.
    pub t_int: usize,
    /// Pairs kept per window.
    pub n_max: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub encoder_mlp: Vec<usize>,
    pub decoder_mlp: Vec<usize>,
    /// Hidden widths of the output head; a final 8-wide layer is appended.
    pub decoder_out_mlp: Vec<usize>,
    /// Lower clip of the coordinate-STD normalizer.
    pub tau_std: f64,
    pub lowpass: LowpassConfig,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Frame stride between training windows.
    pub window_stride: usize,
    /// Cap on windows drawn per epoch.
    pub max_samples_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        InteractionConfig {
            t_int: 3,
            n_max: 20,
            latent_dim: 4,
            hidden: 128,
            encoder_mlp: vec![32, 64],
            decoder_mlp: vec![32, 64],
            decoder_out_mlp: vec![64],
            tau_std: 1e-3,
            lowpass: LowpassConfig::default(),
            batch: 64,
            lr: 2e-4,
            epochs: 20,
            window_stride: 1,
            max_samples_per_epoch: None,
            seed: 0,
        }
    }
}

impl InteractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_int < 2 {
            return Err(ExpertError::InvalidConfig("t_int must be at least 2".into()));
        }
        check_positive("n_max", self.n_max)?;
        check_positive("latent_dim", self.latent_dim)?;
        check_positive("hidden", self.hidden)?;
        check_positive("batch", self.batch)?;
        check_positive("window_stride", self.window_stride)?;
        if !(self.tau_std > 0.0) || !(self.lr > 0.0) {
            return Err(ExpertError::InvalidConfig("tau_std and lr must be positive".into()));
        }
        Ok(())
    }

    /// First frame with a full history window.
    pub fn valid_from(&self) -> usize {
        self.t_int - 1
    }
}

/// Boxes of two objects over one history window; `ids.0 < ids.1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWindow {
    pub ids: (u64, u64),
    pub end_frame: usize,
    pub boxes_i: Vec<BBox>,
    pub boxes_j: Vec<BBox>,
    pub distance: f64,
}

impl PairWindow {
    pub fn len(&self) -> usize {
        self.boxes_i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes_i.is_empty()
    }

    /// Mean box height over both objects and the window.
    pub fn mean_height(&self) -> f64 {
        let n = 2 * self.len();
        self.boxes_i.iter().chain(&self.boxes_j).map(|b| b.h).sum::<f64>() / n as f64
    }

    /// Mean over the eight coordinates of their STD over the window,
    /// clipped below at `tau_std`.
    pub fn coordinate_std(&self, tau_std: f64) -> f64 {
        let mut total = 0.0;
        for boxes in [&self.boxes_i, &self.boxes_j] {
            for c in 0..4 {
                total += population_std(boxes.iter().map(move |b| b.to_array()[c]));
            }
        }
        (total / 8.0).max(tau_std)
    }

    /// Flattened `[X_i, X_j]` per frame.
    fn inputs(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.boxes_i.iter().zip(&self.boxes_j).map(|(a, b)| {
            a.to_array().into_iter().chain(b.to_array()).collect()
        })
    }

    fn anchors(&self) -> Vec<f64> {
        self.boxes_i[0]
            .to_array()
            .into_iter()
            .chain(self.boxes_j[0].to_array())
            .collect()
    }
}

/// All pairs of tracks present over `[end - t_int + 1, end]`, ranked by
/// distance score then by id pair, truncated to `n_max`.
pub fn select_pairs(video: &VideoRecord, end: usize, t_int: usize, n_max: usize) -> Vec<PairWindow> {
    if end + 1 < t_int || end >= video.num_frames {
        return Vec::new();
    }
    let start = end + 1 - t_int;
    let mut present: Vec<(u64, &[BBox])> = video
        .tracks
        .iter()
        .filter_map(|t| t.window(start, end).map(|w| (t.object_id, w)))
        .collect();
    present.sort_by_key(|(id, _)| *id);
    let mut pairs = Vec::new();
    for a in 0..present.len() {
        for b in a + 1..present.len() {
            let (ia, wa) = present[a];
            let (ib, wb) = present[b];
            pairs.push(PairWindow {
                ids: (ia, ib),
                end_frame: end,
                boxes_i: wa.to_vec(),
                boxes_j: wb.to_vec(),
                distance: distance_score(wa, wb),
            });
        }
    }
    pairs.sort_by(|p, q| p.distance.total_cmp(&q.distance).then(p.ids.cmp(&q.ids)));
    pairs.truncate(n_max);
    pairs
}

/// Scaled reconstruction error of a pair:
/// `sum_id sum_k sqrt(|X~ - X|^2 / (lambda_h lambda_std))`.
pub fn pair_loss(original: &PairWindow, recon: &[Vec<BBox>; 2], tau_std: f64) -> f64 {
    let scale = original.mean_height() * original.coordinate_std(tau_std);
    let mut total = 0.0;
    for (orig, rec) in [&original.boxes_i, &original.boxes_j].into_iter().zip(recon) {
        for (x, y) in orig.iter().zip(rec) {
            let sq: f64 = x
                .to_array()
                .iter()
                .zip(y.to_array())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += (sq / scale).sqrt();
        }
    }
    total
}

/// Layer handles of the autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionNet {
    pub encoder: Mlp,
    pub encoder_gru: GruCell,
    pub to_latent: Linear,
    pub sos: ParamId,
    pub decoder: Mlp,
    pub decoder_gru: GruCell,
    pub head: Mlp,
    pub hidden: usize,
}

fn relu_stack(widths: &[usize]) -> Vec<(usize, Activation)> {
    widths.iter().map(|&w| (w, Activation::Relu)).collect()
}

impl InteractionNet {
    pub fn build(store: &mut ParamStore, cfg: &InteractionConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let encoder = Mlp::new(store, rng, "int.enc", 8, &relu_stack(&cfg.encoder_mlp))?;
        let enc_out = if cfg.encoder_mlp.is_empty() { 8 } else { encoder.output_dim() };
        let encoder_gru = GruCell::new(store, rng, "int.enc_gru", enc_out, cfg.hidden)?;
        let to_latent = Linear::new(store, rng, "int.z", cfg.hidden, cfg.latent_dim)?;
        let sos = store.add("int.sos", 8, 1, Init::Uniform(0.1), rng)?;
        let dec_in = 8 + cfg.latent_dim;
        let decoder = Mlp::new(store, rng, "int.dec", dec_in, &relu_stack(&cfg.decoder_mlp))?;
        let dec_out = if cfg.decoder_mlp.is_empty() { dec_in } else { decoder.output_dim() };
        let decoder_gru = GruCell::new(store, rng, "int.dec_gru", dec_out, cfg.hidden)?;
        let mut head_spec = relu_stack(&cfg.decoder_out_mlp);
        head_spec.push((8, Activation::Identity));
        let head = Mlp::new(store, rng, "int.head", cfg.hidden, &head_spec)?;
        Ok(InteractionNet {
            encoder,
            encoder_gru,
            to_latent,
            sos,
            decoder,
            decoder_gru,
            head,
            hidden: cfg.hidden,
        })
    }

    /// Records the autoencoder on `tape`; returns the reconstructed boxes
    /// `[X~_i, X~_j]` per frame as 8-vectors.
    pub fn reconstruct(&self, tape: &mut Tape, store: &ParamStore, pair: &PairWindow) -> Vec<Var> {
        let mut h = tape.input(vec![0.0; self.hidden]);
        for x in pair.inputs() {
            let x = tape.input(x);
            let e = self.encoder.apply(tape, store, x);
            h = self.encoder_gru.step(tape, store, e, h);
        }
        let z = self.to_latent.apply(tape, store, h);
        let z = tape.relu(z);
        let anchors = pair.anchors();
        let mut hd = tape.input(vec![0.0; self.hidden]);
        let mut prev = tape.param(store, self.sos);
        let mut out = Vec::with_capacity(pair.len());
        for _ in 0..pair.len() {
            let inp = tape.concat(&[prev, z]);
            let d = self.decoder.apply(tape, store, inp);
            hd = self.decoder_gru.step(tape, store, d, hd);
            let p = self.head.apply(tape, store, hd);
            out.push(tape.apply_boxes(&anchors, p));
            prev = p;
        }
        out
    }

    /// Scaled reconstruction loss of one pair, recorded on `tape`.
    pub fn loss(&self, tape: &mut Tape, store: &ParamStore, pair: &PairWindow, tau_std: f64) -> Var {
        let recon = self.reconstruct(tape, store, pair);
        let inv_scale = 1.0 / (pair.mean_height() * pair.coordinate_std(tau_std));
        let mut terms = Vec::with_capacity(2 * pair.len());
        for (x, r) in pair.inputs().zip(recon) {
            let target = tape.input(x);
            let d = tape.sub(r, target);
            let sq = tape.mul(d, d);
            for off in [0, 4] {
                let part = tape.slice(sq, off, 4);
                let s = tape.sum(part);
                let s = tape.scale(s, inv_scale);
                terms.push(tape.sqrt(s));
            }
        }
        let all = tape.concat(&terms);
        tape.sum(all)
    }

    /// Mean loss over `pairs`; accumulates the gradient of the mean when
    /// `grads` is given.
    pub fn batch_loss(
        &self,
        store: &ParamStore,
        pairs: &[&PairWindow],
        tau_std: f64,
        mut grads: Option<&mut Grads>,
    ) -> Result<f64> {
        let mut total = 0.0;
        let w = 1.0 / pairs.len().max(1) as f64;
        for p in pairs {
            let mut tape = Tape::new();
            let l = self.loss(&mut tape, store, p, tau_std);
            let l = tape.scale(l, w);
            total += tape.value(l)[0];
            if let Some(g) = grads.as_deref_mut() {
                tape.backward(store, l, g)?;
            }
        }
        Ok(total)
    }
}

/// Trained (or freshly initialized) interaction expert.
#[derive(Debug, Clone)]
pub struct InteractionExpert {
    pub config: InteractionConfig,
    pub net: InteractionNet,
    pub store: ParamStore,
}

impl InteractionExpert {
    pub fn new(config: InteractionConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let net = InteractionNet::build(&mut store, &config, &mut rng)?;
        Ok(InteractionExpert { config, net, store })
    }

    /// Builds the architecture from `config` and loads weights into it.
    pub fn load(config: InteractionConfig, path: &std::path::Path) -> Result<Self> {
        let mut e = Self::new(config)?;
        e.store.load_into(path)?;
        Ok(e)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Ok(self.store.save(path)?)
    }

    pub fn reconstruct_pair(&self, pair: &PairWindow) -> Result<[Vec<BBox>; 2]> {
        if pair.len() != self.config.t_int || pair.boxes_j.len() != self.config.t_int {
            return Err(ExpertError::InvalidConfig(format!(
                "pair window has {} frames, expected {}",
                pair.len(),
                self.config.t_int
            )));
        }
        let mut tape = Tape::new();
        let rec = self.net.reconstruct(&mut tape, &self.store, pair);
        let mut out = [Vec::new(), Vec::new()];
        for v in rec {
            let x = tape.value(v);
            out[0].push(BBox::from_array([x[0], x[1], x[2], x[3]]));
            out[1].push(BBox::from_array([x[4], x[5], x[6], x[7]]));
        }
        Ok(out)
    }

    pub fn pair_loss(&self, pair: &PairWindow) -> Result<f64> {
        let rec = self.reconstruct_pair(pair)?;
        Ok(pair_loss(pair, &rec, self.config.tau_std))
    }

    /// Training windows: every selected pair at every `window_stride`-th frame.
    pub fn windows(&self, videos: &[VideoRecord]) -> Vec<PairWindow> {
        let c = &self.config;
        let mut out = Vec::new();
        for v in videos {
            for end in (c.valid_from()..v.num_frames).step_by(c.window_stride) {
                out.extend(select_pairs(v, end, c.t_int, c.n_max));
            }
        }
        out
    }

    pub fn mean_loss(&self, windows: &[PairWindow]) -> Result<f64> {
        let refs: Vec<&PairWindow> = windows.iter().collect();
        self.net.batch_loss(&self.store, &refs, self.config.tau_std, None)
    }

    /// Adam on the mean pair loss over minibatches of windows.
    pub fn train(&mut self, train: &[VideoRecord], validation: &[VideoRecord]) -> Result<TrainReport> {
        let windows = self.windows(train);
        if windows.is_empty() {
            return Err(ExpertError::NoTrainingSamples(
                "no pair of tracks is co-present over a full history window".into(),
            ));
        }
        let val = self.windows(validation);
        let c = self.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ 0x5eed);
        let mut opt = Adam::new(&self.store, c.lr);
        let mut grads = Grads::zeros_like(&self.store);
        let mut report = TrainReport {
            initial_loss: self.mean_loss(&windows)?,
            samples: windows.len(),
            ..TrainReport::default()
        };
        log::info!(
            "interaction: {} windows, initial loss {:.6}",
            windows.len(),
            report.initial_loss
        );
        for epoch in 0..c.epochs {
            let order = epoch_order(windows.len(), c.max_samples_per_epoch, &mut rng);
            let mut sum = 0.0;
            for chunk in order.chunks(c.batch) {
                let batch: Vec<&PairWindow> = chunk.iter().map(|&i| &windows[i]).collect();
                grads.clear();
                let l = self.net.batch_loss(&self.store, &batch, c.tau_std, Some(&mut grads))?;
                opt.step(&mut self.store, &grads)?;
                sum += l * batch.len() as f64;
            }
            let epoch_loss = sum / order.len() as f64;
            report.epoch_losses.push(epoch_loss);
            if val.is_empty() {
                log::info!("interaction: epoch {} loss {:.6}", epoch + 1, epoch_loss);
            } else {
                let vl = self.mean_loss(&val)?;
                report.validation_losses.push(vl);
                log::info!(
                    "interaction: epoch {} loss {:.6} validation {:.6}",
                    epoch + 1,
                    epoch_loss,
                    vl
                );
            }
        }
        report.checksum = self.store.checksum();
        Ok(report)
    }

    /// Unfiltered per-frame mean pair loss; frames before the first full
    /// window and frames without pairs score 0.
    pub fn raw_scores(&self, video: &VideoRecord) -> Result<ScoreSeries> {
        let c = &self.config;
        let mut scores = vec![0.0; video.num_frames];
        for (end, s) in scores.iter_mut().enumerate().skip(c.valid_from()) {
            let pairs = select_pairs(video, end, c.t_int, c.n_max);
            if pairs.is_empty() {
                continue;
            }
            let mut total = 0.0;
            for p in &pairs {
                total += self.pair_loss(p)?;
            }
            *s = total / pairs.len() as f64;
        }
        let vf = c.valid_from().min(video.num_frames.saturating_sub(1));
        Ok(ScoreSeries::new(video.video_id.clone(), scores, vf)?)
    }

    /// Low-pass filtered frame scores.
    pub fn score(&self, video: &VideoRecord) -> Result<ScoreSeries> {
        let raw = self.raw_scores(video)?;
        self.config.lowpass.apply(&raw, video.fps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use roadex_core::Track;

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox { cx, cy, w, h }
    }

    fn video(tracks: Vec<Track>, n: usize) -> VideoRecord {
        VideoRecord {
            video_id: "v".into(),
            fps: 10.0,
            num_frames: n,
            tracks,
            frame_labels: vec![0; n],
            category: "normal".into(),
            involvement: None,
        }
    }

    fn still(id: u64, cx: f64, n: usize) -> Track {
        Track::new(id, 0, vec![bx(cx, 0.5, 0.1, 0.1); n]).unwrap()
    }

    fn tiny() -> InteractionConfig {
        InteractionConfig {
            hidden: 6,
            latent_dim: 3,
            encoder_mlp: vec![5],
            decoder_mlp: vec![5],
            decoder_out_mlp: vec![4],
            ..InteractionConfig::default()
        }
    }

    #[test]
    fn small_scenes_return_all_pairs() {
        let v = video((1..=3).map(|i| still(i, 0.2 * i as f64, 5)).collect(), 5);
        let p = select_pairs(&v, 4, 3, 20);
        assert_eq!(p.len(), 3);
        let v1 = video(vec![still(1, 0.5, 5)], 5);
        assert!(select_pairs(&v1, 4, 3, 20).is_empty());
        assert!(select_pairs(&v, 1, 3, 20).is_empty());
    }

    #[test]
    fn pairs_require_full_window() {
        let late = Track::new(2, 3, vec![bx(0.4, 0.5, 0.1, 0.1); 2]).unwrap();
        let v = video(vec![still(1, 0.5, 5), late], 5);
        assert!(select_pairs(&v, 4, 3, 20).is_empty());
        assert_eq!(select_pairs(&v, 4, 2, 20).len(), 1);
    }

    #[test]
    fn pair_loss_closed_form_for_static_pair() {
        let w = PairWindow {
            ids: (1, 2),
            end_frame: 2,
            boxes_i: vec![bx(0.5, 0.5, 0.2, 0.2); 3],
            boxes_j: vec![bx(0.5, 0.5, 0.2, 0.2); 3],
            distance: 0.0,
        };
        assert_eq!(pair_loss(&w, &[w.boxes_i.clone(), w.boxes_j.clone()], 1e-3), 0.0);
        // error of 0.01 in cx for every box: e = 1e-4
        let shifted: Vec<BBox> = w.boxes_i.iter().map(|b| bx(b.cx + 0.01, b.cy, b.w, b.h)).collect();
        let l = pair_loss(&w, &[shifted.clone(), shifted], 1e-3);
        let expect = 6.0 * (1e-4f64 / (0.2 * 1e-3)).sqrt();
        assert!((l - expect).abs() < 1e-12, "{l} vs {expect}");
    }

    #[test]
    fn halving_heights_scales_by_sqrt2() {
        let mk = |h: f64| PairWindow {
            ids: (1, 2),
            end_frame: 2,
            boxes_i: vec![bx(0.5, 0.5, 0.2, h); 3],
            boxes_j: vec![bx(0.3, 0.5, 0.2, h); 3],
            distance: 0.0,
        };
        let err = |w: &PairWindow| {
            let r = |bs: &Vec<BBox>| bs.iter().map(|b| bx(b.cx + 0.02, b.cy, b.w, b.h)).collect();
            pair_loss(w, &[r(&w.boxes_i), r(&w.boxes_j)], 1e-3)
        };
        let (a, b) = (err(&mk(0.2)), err(&mk(0.1)));
        assert!((b / a - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_head_reconstructs_anchors() {
        let mut e = InteractionExpert::new(tiny()).unwrap();
        for (l, _) in &e.net.head.layers {
            l.zero(&mut e.store);
        }
        let v = video(
            vec![
                Track::new(1, 0, (0..3).map(|t| bx(0.2 + 0.01 * t as f64, 0.5, 0.1, 0.2)).collect()).unwrap(),
                Track::new(2, 0, (0..3).map(|t| bx(0.6, 0.5 + 0.01 * t as f64, 0.1, 0.2)).collect()).unwrap(),
            ],
            3,
        );
        let p = &select_pairs(&v, 2, 3, 20)[0];
        let r = e.reconstruct_pair(p).unwrap();
        assert!(r[0].iter().all(|b| *b == p.boxes_i[0]));
        assert!(r[1].iter().all(|b| *b == p.boxes_j[0]));
    }

    #[test]
    fn tape_loss_matches_pair_loss() {
        let e = InteractionExpert::new(tiny()).unwrap();
        let v = video(
            vec![
                Track::new(1, 0, (0..3).map(|t| bx(0.2 + 0.01 * t as f64, 0.5, 0.1, 0.2)).collect()).unwrap(),
                Track::new(2, 0, (0..3).map(|t| bx(0.4, 0.52, 0.1, 0.1 + 0.01 * t as f64)).collect()).unwrap(),
            ],
            3,
        );
        let p = &select_pairs(&v, 2, 3, 20)[0];
        let direct = e.pair_loss(p).unwrap();
        let via = e.net.batch_loss(&e.store, &[p], e.config.tau_std, None).unwrap();
        assert!((direct - via).abs() < 1e-12);
    }

    #[test]
    fn wrong_window_length_rejected() {
        let e = InteractionExpert::new(tiny()).unwrap();
        let w = PairWindow {
            ids: (1, 2),
            end_frame: 1,
            boxes_i: vec![bx(0.5, 0.5, 0.2, 0.2); 2],
            boxes_j: vec![bx(0.5, 0.5, 0.2, 0.2); 2],
            distance: 0.0,
        };
        assert!(e.reconstruct_pair(&w).is_err());
    }

    #[test]
    fn lone_track_scores_zero() {
        let e = InteractionExpert::new(tiny()).unwrap();
        let v = video(vec![still(1, 0.5, 12)], 12);
        let s = e.raw_scores(&v).unwrap();
        assert!(s.scores.iter().all(|&x| x == 0.0));
        assert_eq!(s.valid_from, 2);
    }
}
