//! Behavior expert: predicts each object's future boxes from its history and
//! scores how much predictions of the same frame made at different times
//! disagree, scaled by the predicted box height.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use roadex_core::{apply_transform, BBox, ScoreSeries, Track, TransformParams, VideoRecord};
use roadex_nn::{gru_step, mlp_apply, Activation, Adam, Grads, GruCell, Linear, Mlp, ParamId, ParamStore, Tape, Var};

use crate::common::{check_positive, epoch_order, population_std, LowpassConfig, TrainReport};
use crate::error::{ExpertError, Result};

/// Lower bound of the input standardization STD.
pub const INPUT_STD_FLOOR: f64 = 1e-6;

/// How the coordinate spread is scaled by the mean predicted height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeightRule {
    /// Small (distant) objects score higher for the same spread.
    Divide,
    Multiply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    /// Prediction horizon in frames.
    pub delta: usize,
    pub box_encoder_mlp: Vec<usize>,
    /// Appends the displacement from the object's previous box (zero at its
    /// first frame) to the encoder input.
    pub motion_input: bool,
    pub hidden: usize,
    /// Hidden widths of the output head; a final 4-wide layer is appended.
    pub decoder_out_mlp: Vec<usize>,
    pub height_rule: HeightRule,
    pub lowpass: LowpassConfig,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Frames per truncated back-propagation chunk.
    pub chunk_len: usize,
    /// Cap on tracks visited per epoch.
    pub max_tracks_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        BehaviorConfig {
            delta: 10,
            box_encoder_mlp: vec![512, 64],
            motion_input: true,
            hidden: 512,
            decoder_out_mlp: vec![32],
            height_rule: HeightRule::Divide,
            lowpass: LowpassConfig::default(),
            batch: 16,
            lr: 5e-4,
            epochs: 20,
            chunk_len: 10,
            max_tracks_per_epoch: None,
            seed: 0,
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("delta", self.delta)?;
        check_positive("hidden", self.hidden)?;
        check_positive("batch", self.batch)?;
        check_positive("chunk_len", self.chunk_len)?;
        if !(self.lr > 0.0) {
            return Err(ExpertError::InvalidConfig("lr must be positive".into()));
        }
        Ok(())
    }

    /// First frame that can hold two predictions.
    pub fn valid_from(&self) -> usize {
        2
    }
}

/// Predicted future boxes per object, keyed by the frame they were made at.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionBuffer {
    delta: usize,
    entries: BTreeMap<u64, VecDeque<(usize, Vec<BBox>)>>,
}

impl PredictionBuffer {
    pub fn new(delta: usize) -> Self {
        PredictionBuffer {
            delta,
            entries: BTreeMap::new(),
        }
    }

    /// Stores `preds[k - 1]`, the prediction for frame `origin + k`.
    pub fn insert(&mut self, object: u64, origin: usize, preds: Vec<BBox>) {
        let q = self.entries.entry(object).or_default();
        q.push_back((origin, preds));
        while q.len() > self.delta {
            q.pop_front();
        }
    }

    /// Predictions for `frame` made at origins `frame - delta ..= frame - 1`.
    pub fn predictions_for(&self, object: u64, frame: usize) -> Vec<BBox> {
        let Some(q) = self.entries.get(&object) else {
            return Vec::new();
        };
        q.iter()
            .filter(|(o, p)| *o < frame && frame - o <= self.delta.min(p.len()))
            .map(|(o, p)| p[frame - o - 1])
            .collect()
    }

    /// Drops predictions that can no longer cover `frame` or later.
    pub fn expire(&mut self, frame: usize) {
        for q in self.entries.values_mut() {
            while q.front().is_some_and(|(o, _)| o + self.delta < frame) {
                q.pop_front();
            }
        }
        self.entries.retain(|_, q| !q.is_empty());
    }

    pub fn objects(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }
}

/// Mean coordinate STD across predictions of one frame, scaled by their
/// mean height; 0 with fewer than two predictions.
pub fn consistency_score(preds: &[BBox], rule: HeightRule) -> f64 {
    if preds.len() < 2 {
        return 0.0;
    }
    let spread = (0..4)
        .map(|c| population_std(preds.iter().map(move |b| b.to_array()[c])))
        .sum::<f64>()
        / 4.0;
    let height = preds.iter().map(|b| b.h).sum::<f64>() / preds.len() as f64;
    match rule {
        HeightRule::Divide => spread / height,
        HeightRule::Multiply => spread * height,
    }
}

/// Layer handles of the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorNet {
    pub encoder: Mlp,
    pub encoder_gru: GruCell,
    pub bridge: Linear,
    pub decoder_gru: GruCell,
    pub head: Mlp,
    pub hidden: usize,
    pub motion_input: bool,
    /// Per-feature mean and STD of the encoder input over the training set.
    pub input_mean: ParamId,
    pub input_std: ParamId,
}

impl BehaviorNet {
    pub fn build(store: &mut ParamStore, cfg: &BehaviorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let spec: Vec<_> = cfg.box_encoder_mlp.iter().map(|&w| (w, Activation::Relu)).collect();
        let input = if cfg.motion_input { 8 } else { 4 };
        let input_mean = store.add_buffer("beh.input_mean", input, 1, vec![0.0; input])?;
        let input_std = store.add_buffer("beh.input_std", input, 1, vec![1.0; input])?;
        let encoder = Mlp::new(store, rng, "beh.enc", input, &spec)?;
        let enc_out = if spec.is_empty() { input } else { encoder.output_dim() };
        let encoder_gru = GruCell::new(store, rng, "beh.enc_gru", enc_out, cfg.hidden)?;
        let bridge = Linear::new(store, rng, "beh.bridge", cfg.hidden, cfg.hidden)?;
        let decoder_gru = GruCell::new(store, rng, "beh.dec_gru", 4, cfg.hidden)?;
        let mut head_spec: Vec<_> = cfg.decoder_out_mlp.iter().map(|&w| (w, Activation::Relu)).collect();
        head_spec.push((4, Activation::Identity));
        let head = Mlp::new(store, rng, "beh.head", cfg.hidden, &head_spec)?;
        Ok(BehaviorNet {
            encoder,
            encoder_gru,
            bridge,
            decoder_gru,
            head,
            hidden: cfg.hidden,
            motion_input: cfg.motion_input,
            input_mean,
            input_std,
        })
    }

    fn raw_input(&self, b: &BBox, prev: Option<&BBox>) -> Vec<f64> {
        let a = b.to_array();
        let mut x = a.to_vec();
        if self.motion_input {
            let p = prev.map_or(a, |p| p.to_array());
            x.extend(a.iter().zip(p).map(|(u, v)| u - v));
        }
        x
    }

    /// Sets the input standardization from every frame of `tracks`.
    pub fn fit_input_stats(&self, store: &mut ParamStore, tracks: &[&Track]) {
        let rows: Vec<Vec<f64>> = tracks
            .iter()
            .flat_map(|tr| (0..tr.boxes.len()).map(|t| self.raw_input(&tr.boxes[t], t.checked_sub(1).map(|p| &tr.boxes[p]))))
            .collect();
        if rows.is_empty() {
            return;
        }
        let dim = rows[0].len();
        let mean: Vec<f64> = (0..dim).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64).collect();
        let std: Vec<f64> = (0..dim)
            .map(|c| population_std(rows.iter().map(move |r| r[c])).max(INPUT_STD_FLOOR))
            .collect();
        store.get_mut(self.input_mean).copy_from_slice(&mean);
        store.get_mut(self.input_std).copy_from_slice(&std);
    }

    /// Standardized encoder input for `b`, given the object's box one
    /// frame earlier.
    pub fn input(&self, store: &ParamStore, b: &BBox, prev: Option<&BBox>) -> Vec<f64> {
        let mut x = self.raw_input(b, prev);
        let (m, s) = (store.get(self.input_mean), store.get(self.input_std));
        for ((v, m), s) in x.iter_mut().zip(m).zip(s) {
            *v = (*v - m) / s;
        }
        x
    }

    pub fn encode_step(&self, store: &ParamStore, b: &BBox, prev: Option<&BBox>, state: &[f64]) -> Vec<f64> {
        let e = mlp_apply(store, &self.encoder, &self.input(store, b, prev));
        gru_step(store, &self.encoder_gru, &e, state)
    }

    /// `steps` future boxes relative to `anchor`, the box at the origin.
    pub fn predict_future(&self, store: &ParamStore, state: &[f64], anchor: &BBox, steps: usize) -> Vec<BBox> {
        let mut h = self.bridge.eval(store, state);
        let mut prev = vec![0.0; 4];
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            h = gru_step(store, &self.decoder_gru, &prev, &h);
            let p = mlp_apply(store, &self.head, &h);
            out.push(apply_transform(anchor, &TransformParams::from_array([p[0], p[1], p[2], p[3]])));
            prev = p;
        }
        out
    }

    fn encode_on(&self, tape: &mut Tape, store: &ParamStore, b: &BBox, prev: Option<&BBox>, h: Var) -> Var {
        let x = tape.input(self.input(store, b, prev));
        let e = self.encoder.apply(tape, store, x);
        self.encoder_gru.step(tape, store, e, h)
    }

    fn predict_on(&self, tape: &mut Tape, store: &ParamStore, state: Var, anchor: &BBox, steps: usize) -> Vec<Var> {
        let mut h = self.bridge.apply(tape, store, state);
        let mut prev = tape.input(vec![0.0; 4]);
        let anchor = anchor.to_array();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            h = self.decoder_gru.step(tape, store, prev, h);
            let p = self.head.apply(tape, store, h);
            out.push(tape.apply_boxes(&anchor, p));
            prev = p;
        }
        out
    }

    /// Mean squared box error over every origin in `boxes[start..start+len]`
    /// and every available future step up to `delta`, with the encoder
    /// state entering the chunk as a constant. Returns the loss (scaled by
    /// `weight` before differentiation) and the state after the chunk.
    #[allow(clippy::too_many_arguments)]
    pub fn chunk_loss(
        &self,
        store: &ParamStore,
        boxes: &[BBox],
        state: &[f64],
        start: usize,
        len: usize,
        delta: usize,
        weight: f64,
        grads: Option<&mut Grads>,
    ) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let mut h = tape.input(state.to_vec());
        let mut terms = Vec::new();
        let end = (start + len).min(boxes.len());
        for t in start..end {
            let prev = t.checked_sub(1).map(|p| &boxes[p]);
            h = self.encode_on(&mut tape, store, &boxes[t], prev, h);
            let steps = delta.min(boxes.len() - 1 - t);
            if steps == 0 {
                continue;
            }
            let preds = self.predict_on(&mut tape, store, h, &boxes[t], steps);
            for (k, p) in preds.into_iter().enumerate() {
                let target = tape.input(boxes[t + 1 + k].to_array().to_vec());
                let d = tape.sub(p, target);
                let sq = tape.mul(d, d);
                terms.push(tape.sum(sq));
            }
        }
        let next_state = tape.value(h).to_vec();
        if terms.is_empty() {
            return Ok((0.0, next_state));
        }
        let n = 4 * terms.len();
        let all = tape.concat(&terms);
        let total = tape.sum(all);
        let loss = tape.scale(total, weight / n as f64);
        let value = tape.value(loss)[0];
        if let Some(g) = grads {
            tape.backward(store, loss, g)?;
        }
        Ok((value, next_state))
    }
}

/// Trained (or freshly initialized) behavior expert.
#[derive(Debug, Clone)]
pub struct BehaviorExpert {
    pub config: BehaviorConfig,
    pub net: BehaviorNet,
    pub store: ParamStore,
}

impl BehaviorExpert {
    pub fn new(config: BehaviorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let net = BehaviorNet::build(&mut store, &config, &mut rng)?;
        Ok(BehaviorExpert { config, net, store })
    }

    pub fn load(config: BehaviorConfig, path: &std::path::Path) -> Result<Self> {
        let mut e = Self::new(config)?;
        e.store.load_into(path)?;
        Ok(e)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Ok(self.store.save(path)?)
    }

    pub fn encode_step(&self, b: &BBox, prev: Option<&BBox>, state: &[f64]) -> Vec<f64> {
        self.net.encode_step(&self.store, b, prev, state)
    }

    pub fn predict_future(&self, state: &[f64], anchor: &BBox) -> Vec<BBox> {
        self.net.predict_future(&self.store, state, anchor, self.config.delta)
    }

    pub fn zero_state(&self) -> Vec<f64> {
        vec![0.0; self.config.hidden]
    }

    /// Mean training loss over whole tracks, without updating.
    pub fn mean_loss(&self, tracks: &[&Track]) -> Result<f64> {
        let c = &self.config;
        let (mut sum, mut n) = (0.0, 0usize);
        for tr in tracks {
            let mut state = self.zero_state();
            for start in (0..tr.boxes.len()).step_by(c.chunk_len) {
                let (l, s) = self.net.chunk_loss(&self.store, &tr.boxes, &state, start, c.chunk_len, c.delta, 1.0, None)?;
                state = s;
                if start + 1 < tr.boxes.len() {
                    sum += l;
                    n += 1;
                }
            }
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }

    /// Truncated back-propagation through each track in chunks of
    /// `chunk_len` frames, carrying the encoder state forward between
    /// chunks; one Adam step per `batch` chunks.
    pub fn train(&mut self, train: &[VideoRecord], validation: &[VideoRecord]) -> Result<TrainReport> {
        let tracks: Vec<&Track> = train.iter().flat_map(|v| &v.tracks).filter(|t| t.boxes.len() >= 2).collect();
        if tracks.is_empty() {
            return Err(ExpertError::NoTrainingSamples("no track spans two frames".into()));
        }
        let val: Vec<&Track> = validation.iter().flat_map(|v| &v.tracks).filter(|t| t.boxes.len() >= 2).collect();
        let c = self.config.clone();
        self.net.fit_input_stats(&mut self.store, &tracks);
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ 0xbe4a);
        let mut opt = Adam::new(&self.store, c.lr);
        let mut grads = Grads::zeros_like(&self.store);
        let samples = tracks.iter().map(|t| t.boxes.len().div_ceil(c.chunk_len)).sum();
        let mut report = TrainReport {
            initial_loss: self.mean_loss(&tracks)?,
            samples,
            ..TrainReport::default()
        };
        log::info!("behavior: {} tracks, initial loss {:.3e}", tracks.len(), report.initial_loss);
        let w = 1.0 / c.batch as f64;
        for epoch in 0..c.epochs {
            let order = epoch_order(tracks.len(), c.max_tracks_per_epoch, &mut rng);
            let (mut sum, mut n, mut pending) = (0.0, 0usize, 0usize);
            grads.clear();
            for &ti in &order {
                let boxes = &tracks[ti].boxes;
                let mut state = self.zero_state();
                for start in (0..boxes.len() - 1).step_by(c.chunk_len) {
                    let (l, s) = self.net.chunk_loss(&self.store, boxes, &state, start, c.chunk_len, c.delta, w, Some(&mut grads))?;
                    state = s;
                    sum += l / w;
                    n += 1;
                    pending += 1;
                    if pending == c.batch {
                        opt.step(&mut self.store, &grads)?;
                        grads.clear();
                        pending = 0;
                    }
                }
            }
            if pending > 0 {
                grads.scale(c.batch as f64 / pending as f64);
                opt.step(&mut self.store, &grads)?;
                grads.clear();
            }
            let epoch_loss = sum / n.max(1) as f64;
            report.epoch_losses.push(epoch_loss);
            if val.is_empty() {
                log::info!("behavior: epoch {} loss {:.3e}", epoch + 1, epoch_loss);
            } else {
                let vl = self.mean_loss(&val)?;
                report.validation_losses.push(vl);
                log::info!("behavior: epoch {} loss {:.3e} validation {:.3e}", epoch + 1, epoch_loss, vl);
            }
        }
        report.checksum = self.store.checksum();
        Ok(report)
    }

    /// Mean center distance between the one-step prediction and the next
    /// observed box, over every origin with a successor.
    pub fn one_step_center_error(&self, videos: &[VideoRecord]) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for tr in videos.iter().flat_map(|v| &v.tracks) {
            let mut state = self.zero_state();
            for t in 0..tr.boxes.len() {
                let prev = t.checked_sub(1).map(|p| &tr.boxes[p]);
                state = self.encode_step(&tr.boxes[t], prev, &state);
                if t + 1 < tr.boxes.len() {
                    let p = self.net.predict_future(&self.store, &state, &tr.boxes[t], 1)[0];
                    let q = tr.boxes[t + 1];
                    sum += (p.cx - q.cx).hypot(p.cy - q.cy);
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Unfiltered per-frame mean consistency score over objects holding at
    /// least two predictions for the frame (including objects no longer
    /// tracked); 0 when there are none.
    pub fn raw_scores(&self, video: &VideoRecord) -> Result<ScoreSeries> {
        let c = &self.config;
        let mut buffer = PredictionBuffer::new(c.delta);
        let mut states: HashMap<u64, Vec<f64>> = HashMap::new();
        let mut scores = vec![0.0; video.num_frames];
        for (t, s) in scores.iter_mut().enumerate() {
            buffer.expire(t);
            let per_object: Vec<f64> = buffer
                .objects()
                .map(|o| buffer.predictions_for(o, t))
                .filter(|p| p.len() >= 2)
                .map(|p| consistency_score(&p, c.height_rule))
                .collect();
            if !per_object.is_empty() {
                *s = per_object.iter().sum::<f64>() / per_object.len() as f64;
            }
            for tr in video.tracks_at(t) {
                let b = tr.box_at(t).expect("track covers frame");
                let state = states.entry(tr.object_id).or_insert_with(|| self.zero_state());
                let prev = t.checked_sub(1).and_then(|p| tr.box_at(p));
                *state = self.net.encode_step(&self.store, b, prev, state);
                let preds = self.net.predict_future(&self.store, state, b, c.delta);
                buffer.insert(tr.object_id, t, preds);
            }
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
