//! A deliberately small per-pixel segmentation model: two dense layers over a
//! handful of feature channels with a logistic output. It stands in for a
//! real backbone so the cross-supervision machinery can be trained and tested
//! in seconds, and its gradients are written out by hand to stay exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::CameraView;
use crate::grid::{BinaryMask, PixelGrid, ProbMap};
use crate::losses::{
    binarize, cross_supervision_loss, labeled_loss, prior_loss, LossWeights,
};
use crate::rectification::{reparam_coeffs, RectifiedPairing};
use crate::synth::Dataset;
use crate::transfer::{
    belief_transfer_rectified, silhouette_transfer, transfer_backward, DepthSampling,
};

/// Feature channels fed to the model: three shading/texture channels plus the
/// two normalized pixel coordinates.
pub const FEATURE_CHANNELS: usize = 5;

/// Default hidden width of the perceptron.
pub const HIDDEN_UNITS: usize = 16;

/// Planar multi-channel feature image (channel-major storage).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureImage {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        FeatureImage {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::BadLength {
                width,
                height,
                got: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature image",
            });
        }
        Ok(FeatureImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Weights of the two-layer per-pixel perceptron (tanh hidden layer, logistic
/// output). One flat weight vector shared by every view in a training step.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    channels: usize,
    hidden: usize,
    /// hidden x channels, row-major per hidden unit.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ModelWeights {
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        ModelWeights {
            channels,
            hidden,
            w1: vec![0.0; hidden * channels],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Xavier-uniform initialization from a fixed seed.
    pub fn init(channels: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = ModelWeights::zeros(channels, hidden);
        let l1 = (6.0 / (channels + hidden) as f64).sqrt();
        for v in w.w1.iter_mut() {
            *v = rng.gen_range(-l1..l1);
        }
        let l2 = (6.0 / (hidden + 1) as f64).sqrt();
        for v in w.w2.iter_mut() {
            *v = rng.gen_range(-l2..l2);
        }
        w
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    fn check_features(&self, features: &FeatureImage) -> Result<()> {
        if features.channels() != self.channels {
            return Err(Error::BadChannels {
                expected: self.channels,
                got: features.channels(),
            });
        }
        Ok(())
    }
}

/// Gradient accumulator with the same shape as [`ModelWeights`].
#[derive(Debug, Clone)]
pub struct WeightGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl WeightGrads {
    pub fn zeros_like(w: &ModelWeights) -> Self {
        WeightGrads {
            w1: vec![0.0; w.w1.len()],
            b1: vec![0.0; w.b1.len()],
            w2: vec![0.0; w.w2.len()],
            b2: 0.0,
        }
    }

    pub fn add(&mut self, other: &WeightGrads) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += b;
        }
        self.b2 += other.b2;
    }

    pub fn scale(&mut self, s: f64) {
        for v in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
        {
            *v *= s;
        }
        self.b2 *= s;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-pixel forward pass. Output is strictly inside (0, 1).
pub fn forward(features: &FeatureImage, w: &ModelWeights) -> Result<ProbMap> {
    w.check_features(features)?;
    let (width, height) = (features.width(), features.height());
    let mut out = Vec::with_capacity(width * height);
    let mut hidden = vec![0.0; w.hidden];
    for y in 0..height {
        for x in 0..width {
            for (k, h) in hidden.iter_mut().enumerate() {
                let mut pre = w.b1[k];
                let row = &w.w1[k * w.channels..(k + 1) * w.channels];
                for (c, wc) in row.iter().enumerate() {
                    pre += wc * features.get(c, x, y);
                }
                *h = pre.tanh();
            }
            let mut logit = w.b2;
            for (h, w2) in hidden.iter().zip(&w.w2) {
                logit += w2 * h;
            }
            out.push(sigmoid(logit));
        }
    }
    ProbMap::from_vec(width, height, out)
}

/// Reverse-mode gradients of sum(upstream * output) with respect to the
/// weights. Pixels are accumulated in scan order, so results are
/// deterministic.
pub fn backward(
    features: &FeatureImage,
    w: &ModelWeights,
    upstream: &PixelGrid,
) -> Result<WeightGrads> {
    w.check_features(features)?;
    if upstream.width() != features.width() || upstream.height() != features.height() {
        return Err(Error::SizeMismatch {
            want_w: features.width(),
            want_h: features.height(),
            got_w: upstream.width(),
            got_h: upstream.height(),
        });
    }
    let mut grads = WeightGrads::zeros_like(w);
    let mut hidden = vec![0.0; w.hidden];
    for y in 0..features.height() {
        for x in 0..features.width() {
            let g_out = upstream.get(x, y);
            if g_out == 0.0 {
                continue;
            }
            for (k, h) in hidden.iter_mut().enumerate() {
                let mut pre = w.b1[k];
                let row = &w.w1[k * w.channels..(k + 1) * w.channels];
                for (c, wc) in row.iter().enumerate() {
                    pre += wc * features.get(c, x, y);
                }
                *h = pre.tanh();
            }
            let mut logit = w.b2;
            for (h, w2) in hidden.iter().zip(&w.w2) {
                logit += w2 * h;
            }
            let p = sigmoid(logit);
            let d_logit = g_out * p * (1.0 - p);
            grads.b2 += d_logit;
            for (k, h) in hidden.iter().enumerate() {
                grads.w2[k] += d_logit * h;
                let d_pre = d_logit * w.w2[k] * (1.0 - h * h);
                grads.b1[k] += d_pre;
                for c in 0..w.channels {
                    grads.w1[k * w.channels + c] += d_pre * features.get(c, x, y);
                }
            }
        }
    }
    Ok(grads)
}

/// Adaptive-moment gradient descent state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, w: &mut ModelWeights, grads: &WeightGrads) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        let params = w
            .w1
            .iter_mut()
            .chain(w.b1.iter_mut())
            .chain(w.w2.iter_mut())
            .chain(std::iter::once(&mut w.b2));
        let gs = grads
            .w1
            .iter()
            .chain(&grads.b1)
            .chain(&grads.w2)
            .chain(std::iter::once(&grads.b2));
        for (i, (p, &g)) in params.zip(gs).enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            *p -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// One view's role in a triplet: its input, camera, and whichever of ground
/// truth (labeled) or frozen pseudo-mask (unlabeled) it carries.
#[derive(Clone, Copy)]
pub struct TripletView<'a> {
    pub features: &'a FeatureImage,
    pub camera: &'a CameraView,
    pub truth: Option<&'a BinaryMask>,
    pub pseudo: Option<&'a BinaryMask>,
}

/// Three views that cross-supervise each other: the rotation schedule uses
/// each view as the target once, with the other two as sources. Construction
/// builds the three rectified pairings, so a batch that exists is guaranteed
/// pairwise non-degenerate.
pub struct TripletBatch<'a> {
    views: [TripletView<'a>; 3],
    pairings: Vec<RectifiedPairing>,
}

impl<'a> TripletBatch<'a> {
    pub fn new(views: [TripletView<'a>; 3]) -> Result<Self> {
        for v in &views {
            let out = v.camera.crop().out_size;
            if v.features.width() != out || v.features.height() != out {
                return Err(Error::BadTriplet);
            }
        }
        let mut pairings = Vec::with_capacity(3);
        for t in 0..3 {
            let (a, b) = ((t + 1) % 3, (t + 2) % 3);
            pairings.push(reparam_coeffs(
                views[t].camera,
                &[views[a].camera, views[b].camera],
            )?);
        }
        Ok(TripletBatch { views, pairings })
    }

    pub fn views(&self) -> &[TripletView<'a>; 3] {
        &self.views
    }
}

/// Loss components of one optimizer step (already weighted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub total: f64,
    pub labeled: f64,
    pub cross: f64,
    pub prior: f64,
}

/// One shared-weight triplet step: labeled views contribute the supervised
/// loss, every view takes the target role once for the cross-supervision
/// loss (sources receive gradient through the transfer), unlabeled views
/// contribute the bootstrapping prior against their frozen pseudo-masks, and
/// a single optimizer update applies the summed gradients.
pub fn train_step(
    batch: &TripletBatch,
    w: &mut ModelWeights,
    weights: &LossWeights,
    opt: &mut Adam,
) -> Result<StepRecord> {
    let preds: Vec<ProbMap> = batch
        .views
        .iter()
        .map(|v| forward(v.features, w))
        .collect::<Result<_>>()?;
    let mut map_grads: Vec<PixelGrid> = preds
        .iter()
        .map(|p| PixelGrid::zeros(p.width(), p.height()))
        .collect();

    let mut rec = StepRecord {
        total: 0.0,
        labeled: 0.0,
        cross: 0.0,
        prior: 0.0,
    };
    for (i, view) in batch.views.iter().enumerate() {
        if let Some(truth) = view.truth {
            let (l, g) = labeled_loss(&preds[i], truth)?;
            rec.labeled += l;
            for (acc, gv) in map_grads[i].as_mut_slice().iter_mut().zip(g.as_slice()) {
                *acc += gv;
            }
        } else if let (Some(pseudo), true) = (view.pseudo, weights.lambda_p > 0.0) {
            let (l, g) = prior_loss(&preds[i], pseudo)?;
            rec.prior += weights.lambda_p * l;
            for (acc, gv) in map_grads[i].as_mut_slice().iter_mut().zip(g.as_slice()) {
                *acc += weights.lambda_p * gv;
            }
        }
    }

    if weights.lambda_s > 0.0 {
        for t in 0..3 {
            let (a, b) = ((t + 1) % 3, (t + 2) % 3);
            let sources = [
                (&preds[a], batch.views[a].camera),
                (&preds[b], batch.views[b].camera),
            ];
            let (transferred, record) =
                belief_transfer_rectified(&sources, batch.views[t].camera, &batch.pairings[t])?;
            let (l, g_target, g_transferred) =
                cross_supervision_loss(&preds[t], &transferred)?;
            rec.cross += weights.lambda_s * l;
            for (acc, gv) in map_grads[t]
                .as_mut_slice()
                .iter_mut()
                .zip(g_target.as_slice())
            {
                *acc += weights.lambda_s * gv;
            }
            let mut upstream = g_transferred;
            for v in upstream.as_mut_slice() {
                *v *= weights.lambda_s;
            }
            let source_grads = transfer_backward(&record, &upstream)?;
            for (dst, src) in [a, b].into_iter().zip(&source_grads) {
                for (acc, gv) in map_grads[dst].as_mut_slice().iter_mut().zip(src.as_slice()) {
                    *acc += gv;
                }
            }
        }
    }

    rec.total = rec.labeled + rec.cross + rec.prior;
    if !rec.total.is_finite() {
        return Err(Error::NonFinite {
            what: "triplet step loss",
        });
    }

    let mut grads = WeightGrads::zeros_like(w);
    for (view, g_map) in batch.views.iter().zip(&map_grads) {
        grads.add(&backward(view.features, w, g_map)?);
    }
    opt.step(w, &grads);
    Ok(rec)
}

/// Hyperparameters of [`train`]. `steps` counts optimizer updates, warmup
/// included; after warmup, each cycle runs one triplet update followed by
/// `supervised_interleave` labeled-only updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub warmup_steps: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub eval_every: usize,
    pub supervised_interleave: usize,
    /// Depth samples for the bootstrap silhouette transfer.
    pub depth_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            warmup_steps: 500,
            lr: 1e-3,
            weights: LossWeights::default(),
            seed: 7,
            eval_every: 250,
            supervised_interleave: 1,
            depth_count: 256,
        }
    }
}

/// One row of the training metric history: segmentation quality over the
/// unlabeled views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    pub mean_iou: f64,
    pub pixel_accuracy: f64,
}

/// Resumable training state: everything a checkpoint must persist to
/// continue a run bit-exactly.
#[derive(Clone)]
pub struct TrainState {
    pub weights: ModelWeights,
    pub opt: Adam,
    pub rng: ChaCha8Rng,
    pub step: usize,
    /// Frozen pseudo-masks per dataset view (None for labeled views, and for
    /// all views until the bootstrap has run).
    pub pseudo: Vec<Option<BinaryMask>>,
    pub history: Vec<EvalPoint>,
}

/// Driver for the semi-supervised loop: labeled-only warmup, a one-shot
/// bootstrap of pseudo-masks from the warmed-up predictions, then triplet
/// cross-supervision interleaved with supervised updates.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    config: TrainConfig,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self> {
        let labeled = dataset.labeled_indices();
        if labeled.len() < 2 {
            return Err(Error::BadConfig(
                "training needs at least 2 labeled views".into(),
            ));
        }
        if dataset.unlabeled_indices().is_empty() {
            return Err(Error::BadConfig("no unlabeled views to train for".into()));
        }
        if config.steps < config.warmup_steps || config.eval_every == 0 {
            return Err(Error::BadConfig(
                "steps must cover the warmup and eval_every must be positive".into(),
            ));
        }
        let weights = ModelWeights::init(FEATURE_CHANNELS, HIDDEN_UNITS, config.seed);
        let opt = Adam::new(config.lr, weights.n_params());
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
        let state = TrainState {
            weights,
            opt,
            rng,
            step: 0,
            pseudo: vec![None; dataset.views.len()],
            history: Vec::new(),
        };
        Ok(Trainer {
            dataset,
            config,
            state,
        })
    }

    /// Continue from a checkpointed state (see [`TrainState`]).
    pub fn resume(dataset: &'a Dataset, config: TrainConfig, state: TrainState) -> Result<Self> {
        if state.pseudo.len() != dataset.views.len() {
            return Err(Error::BadConfig(
                "checkpoint pseudo-mask count does not match the dataset".into(),
            ));
        }
        Ok(Trainer {
            dataset,
            config,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn supervised_step(&mut self) -> Result<()> {
        let labeled = self.dataset.labeled_indices();
        let pick = labeled[self.state.rng.gen_range(0..labeled.len())];
        let view = &self.dataset.views[pick];
        let pred = forward(&view.features, &self.state.weights)?;
        let truth = view.truth.as_ref().expect("labeled view carries truth");
        let (_, g) = labeled_loss(&pred, truth)?;
        let grads = backward(&view.features, &self.state.weights, &g)?;
        self.state.opt.step(&mut self.state.weights, &grads);
        Ok(())
    }

    /// Build ẑ for every unlabeled view: binarize the warmed-up predictions
    /// of the labeled views and run the binary silhouette transfer. Frozen
    /// from here on.
    ///
    /// Only labeled views feed the transfer. After the warmup their
    /// predictions are trustworthy, so ẑ approximates their visual hull — a
    /// superset of the true silhouette, which is the safe direction for a
    /// mask that only ever suppresses. Unlabeled predictions are excluded
    /// because their errors are consistent across views (appearance mostly
    /// is), and the transfer's intersection would turn any shared false
    /// negative into a permanent hole. Dilation guards the same premise
    /// (sources must cover their silhouettes) against single-pixel noise.
    fn bootstrap(&mut self) -> Result<()> {
        let labeled = self.dataset.labeled_indices();
        let mut sources: Vec<(BinaryMask, usize)> = Vec::with_capacity(labeled.len());
        for &i in &labeled {
            let pred = forward(&self.dataset.views[i].features, &self.state.weights)?;
            sources.push((binarize(&pred, 0.5)?.dilate(1), i));
        }
        for j in self.dataset.unlabeled_indices() {
            let cam = &self.dataset.views[j].camera;
            let distance = (cam.center() - self.dataset.bound_center).norm();
            let sampling = DepthSampling::around(
                distance,
                self.dataset.bound_radius,
                self.config.depth_count,
            )?;
            let pairs: Vec<(&BinaryMask, &CameraView)> = sources
                .iter()
                .map(|(mask, i)| (mask, &self.dataset.views[*i].camera))
                .collect();
            self.state.pseudo[j] = Some(silhouette_transfer(&pairs, cam, &sampling)?);
        }
        Ok(())
    }

    /// Sample a pairwise non-degenerate triplet: distinct views, labeled
    /// representation forced with probability 1/2.
    fn sample_triplet(&mut self) -> Result<[usize; 3]> {
        let n = self.dataset.views.len();
        let labeled = self.dataset.labeled_indices();
        let mut last_err = Error::BadTriplet;
        for _ in 0..64 {
            let mut picks: Vec<usize> = Vec::with_capacity(3);
            if self.state.rng.gen_bool(0.5) {
                picks.push(labeled[self.state.rng.gen_range(0..labeled.len())]);
            }
            while picks.len() < 3 {
                let c = self.state.rng.gen_range(0..n);
                if !picks.contains(&c) {
                    picks.push(c);
                }
            }
            let views: Vec<TripletView> = picks
                .iter()
                .map(|&i| self.triplet_view(i))
                .collect();
            match TripletBatch::new([views[0], views[1], views[2]]) {
                Ok(_) => return Ok([picks[0], picks[1], picks[2]]),
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }

    fn triplet_view(&self, i: usize) -> TripletView<'_> {
        let view = &self.dataset.views[i];
        TripletView {
            features: &view.features,
            camera: &view.camera,
            truth: view.truth.as_ref(),
            pseudo: self.state.pseudo[i].as_ref(),
        }
    }

    fn evaluate(&mut self) -> Result<()> {
        let unlabeled = self.dataset.unlabeled_indices();
        let mut iou_sum = 0.0;
        let mut acc_sum = 0.0;
        for &i in &unlabeled {
            let pred = forward(&self.dataset.views[i].features, &self.state.weights)?;
            let mask = binarize(&pred, 0.5)?;
            iou_sum += crate::eval::iou(&mask, &self.dataset.eval_truth[i])?;
            acc_sum += crate::eval::pixel_accuracy(&mask, &self.dataset.eval_truth[i])?;
        }
        let k = unlabeled.len() as f64;
        self.state.history.push(EvalPoint {
            step: self.state.step,
            mean_iou: iou_sum / k,
            pixel_accuracy: acc_sum / k,
        });
        Ok(())
    }

    /// Run up to `max_new` optimizer updates (all remaining ones if None),
    /// recording metrics every `eval_every` steps and at the end.
    pub fn run(&mut self, max_new: Option<usize>) -> Result<()> {
        let stop = match max_new {
            Some(k) => (self.state.step + k).min(self.config.steps),
            None => self.config.steps,
        };
        let supervised_only =
            self.config.weights.lambda_s == 0.0 && self.config.weights.lambda_p == 0.0;
        while self.state.step < stop {
            let s = self.state.step;
            if s >= self.config.warmup_steps
                && self.config.weights.lambda_p > 0.0
                && self
                    .dataset
                    .unlabeled_indices()
                    .iter()
                    .all(|&j| self.state.pseudo[j].is_none())
            {
                self.bootstrap()?;
            }
            let cycle = 1 + self.config.supervised_interleave;
            let triplet_slot =
                s >= self.config.warmup_steps && (s - self.config.warmup_steps) % cycle == 0;
            if supervised_only || !triplet_slot {
                self.supervised_step()?;
            } else {
                let picks = self.sample_triplet()?;
                let dataset = self.dataset;
                let TrainState {
                    weights,
                    opt,
                    pseudo,
                    ..
                } = &mut self.state;
                let view = |i: usize| TripletView {
                    features: &dataset.views[i].features,
                    camera: &dataset.views[i].camera,
                    truth: dataset.views[i].truth.as_ref(),
                    pseudo: pseudo[i].as_ref(),
                };
                let batch = TripletBatch::new([view(picks[0]), view(picks[1]), view(picks[2])])?;
                train_step(&batch, weights, &self.config.weights, opt)?;
            }
            self.state.step += 1;
            if self.state.step % self.config.eval_every == 0 || self.state.step == self.config.steps
            {
                self.evaluate()?;
            }
        }
        Ok(())
    }
}

/// Full training run: returns the final weights and the metric history.
pub fn train(dataset: &Dataset, config: TrainConfig) -> Result<(ModelWeights, Vec<EvalPoint>)> {
    let mut trainer = Trainer::new(dataset, config)?;
    trainer.run(None)?;
    let TrainState {
        weights, history, ..
    } = trainer.state;
    Ok((weights, history))
}
