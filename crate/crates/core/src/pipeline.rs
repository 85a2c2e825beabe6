//! The two stages wired together: a fixed bilinear bridge from the reconstructed
//! background to the segmenter resolution, the multi-task loss, the three-step
//! training schedule and end-to-end inference.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::background::{synthesize_gt_background, EncoderDecoder, EncoderDecoderProfile};
use crate::conv::{bilinear_matrix, resize_bilinear};
use crate::data::eval::{csv_error, Evaluation};
use crate::data::sample::resize_image;
use crate::data::{EvalReport, FrameSample, Grouping, Normalization};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{update_running_stats, Forward, InitScheme, NetworkSpec, ParamStore};
use crate::optim::SgdState;
use crate::segmentation::{build_mcfcn, flatten_labels, mask_from_probs, LabelMap, Mask, MaskMode, McfcnProfile, ProbabilityMap};
use crate::tensor::Tensor;

pub const STAGE1_PREFIX: &str = "stage1.";
pub const STAGE2_PREFIX: &str = "stage2.";
pub const BRIDGE_ROWS: &str = "bridge.rows";
pub const BRIDGE_COLS: &str = "bridge.cols";

/// Both network profiles plus the segmenter input size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub stage1: EncoderDecoderProfile,
    pub stage2: McfcnProfile,
    pub stage2_size: usize,
}

impl ModelConfig {
    /// 32 → 64 with the small trunks.
    pub fn desk() -> Self {
        ModelConfig {
            stage1: EncoderDecoderProfile::desk(),
            stage2: McfcnProfile::desk(6),
            stage2_size: 64,
        }
    }

    /// 128 → 961 with DCGAN/VGG-style widths.
    pub fn paper() -> Self {
        ModelConfig {
            stage1: EncoderDecoderProfile::paper(),
            stage2: McfcnProfile::paper(6),
            stage2_size: 961,
        }
    }

    /// The same model with a single-image (3-channel) segmenter.
    pub fn single_image(mut self) -> Self {
        self.stage2.in_channels = 3;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.stage2_size == 0 {
            return Err(Error::invalid("stage-2 size must be positive"));
        }
        Ok(())
    }
}

/// Resizes `[N,3,S1,S1]` to `[N,3,S2,S2]` with half-pixel bilinear interpolation.
/// Equal sizes return the input unchanged.
pub fn bilinear_bridge(background: &Tensor, target: usize) -> Result<Tensor> {
    if target == 0 {
        return Err(Error::invalid("bridge target size must be positive"));
    }
    resize_bilinear(background, target, target)
}

/// `l_rec + λ·l_seg`.
pub fn joint_loss(l_rec: f64, l_seg: f64, lambda: f64) -> Result<f64> {
    if !l_rec.is_finite() || !l_seg.is_finite() {
        return Err(Error::NonFinite(format!("joint loss of {l_rec} and {l_seg}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    Ok(l_rec + lambda * l_seg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Encoder-decoder alone on the reconstruction loss.
    Stage1,
    /// Segmenter alone on the segmentation loss, encoder-decoder frozen.
    Stage2,
    /// Both networks on the multi-task loss.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub scope: Scope,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub steps: Vec<StepSpec>,
    #[serde(default = "default_init")]
    pub init: InitScheme,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_lambda() -> f64 {
    1.0
}

fn default_init() -> InitScheme {
    InitScheme::Normal { std: 0.01 }
}

fn default_momentum() -> f64 {
    0.9
}

impl TrainingConfig {
    /// Batch sizes 4/2/1, learning rates 1e-4/1e-3/1e-5, 20000/6000/3000 iterations,
    /// weights from `Normal(0, 0.01²)`.
    pub fn paper() -> Self {
        TrainingConfig {
            lambda: 1.0,
            steps: vec![
                StepSpec {
                    batch_size: 4,
                    learning_rate: 1e-4,
                    iterations: 20_000,
                    scope: Scope::Stage1,
                },
                StepSpec {
                    batch_size: 2,
                    learning_rate: 1e-3,
                    iterations: 6_000,
                    scope: Scope::Stage2,
                },
                StepSpec {
                    batch_size: 1,
                    learning_rate: 1e-5,
                    iterations: 3_000,
                    scope: Scope::Joint,
                },
            ],
            init: InitScheme::Normal { std: 0.01 },
            momentum: 0.9,
            seed: 0,
        }
    }

    /// CPU-sized schedule: 2000/1000/500 iterations with He-scaled initial weights.
    pub fn desk() -> Self {
        TrainingConfig {
            lambda: 1.0,
            steps: vec![
                StepSpec {
                    batch_size: 4,
                    learning_rate: 5e-5,
                    iterations: 2000,
                    scope: Scope::Stage1,
                },
                StepSpec {
                    batch_size: 2,
                    learning_rate: 2e-2,
                    iterations: 1000,
                    scope: Scope::Stage2,
                },
                StepSpec {
                    batch_size: 1,
                    learning_rate: 2e-5,
                    iterations: 500,
                    scope: Scope::Joint,
                },
            ],
            init: InitScheme::He,
            momentum: 0.9,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scopes: Vec<Scope> = self.steps.iter().map(|s| s.scope).collect();
        if scopes != [Scope::Stage1, Scope::Stage2, Scope::Joint] {
            return Err(Error::Config(format!(
                "the schedule must have exactly three steps scoped stage1, stage2, joint; got {scopes:?}"
            )));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.batch_size == 0 {
                return Err(Error::Config(format!("step {} has batch size 0", i + 1)));
            }
            if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) {
                return Err(Error::Config(format!("step {} has learning rate {}", i + 1, s.learning_rate)));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0,1), got {}", self.momentum)));
        }
        if let InitScheme::Normal { std } = self.init {
            if !(std > 0.0 && std.is_finite()) {
                return Err(Error::Config(format!("init std must be positive, got {std}")));
            }
        }
        Ok(())
    }
}

/// Network inputs for one sample, already resized and normalised.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    /// `[3,S1,S1]`
    pub frame1: Tensor,
    /// `[3,S2,S2]`
    pub frame2: Tensor,
    /// `[3,S1,S1]` reconstruction target, when a clean background is known.
    pub target: Option<Tensor>,
    /// `S2 × S2`
    pub labels: LabelMap,
}

/// Parameters of both stages, the fixed bridge and the input normalisation.
#[derive(Clone, Debug)]
pub struct TwoStageModel {
    pub config: ModelConfig,
    pub encoder: EncoderDecoder,
    pub segmenter: NetworkSpec,
    pub params: ParamStore,
    pub normalization: Normalization,
}

impl TwoStageModel {
    /// Builds the networks and the bridge. Network parameters are left empty.
    pub fn new(config: ModelConfig, normalization: Normalization) -> Result<Self> {
        config.validate()?;
        let encoder = EncoderDecoder::new(config.stage1.clone())?;
        let segmenter = build_mcfcn(&config.stage2)?;
        let mut params = ParamStore::new();
        let (s1, s2) = (config.stage1.input_size, config.stage2_size);
        params.insert(BRIDGE_ROWS, bilinear_matrix(s1, s2), false);
        params.insert(BRIDGE_COLS, bilinear_matrix(s1, s2), false);
        Ok(TwoStageModel {
            config,
            encoder,
            segmenter,
            params,
            normalization,
        })
    }

    /// Builds the model and draws fresh weights for both stages from `seed`.
    pub fn initialized(config: ModelConfig, normalization: Normalization, init: InitScheme, seed: u64) -> Result<Self> {
        let mut m = TwoStageModel::new(config, normalization)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.encoder.spec.init_params_with(&mut m.params, init, &mut rng);
        m.segmenter.init_params_with(&mut m.params, init, &mut rng);
        Ok(m)
    }

    /// Rebuilds a model around loaded parameters, checking every declared shape.
    pub fn from_params(config: ModelConfig, normalization: Normalization, params: ParamStore) -> Result<Self> {
        let mut m = TwoStageModel::new(config, normalization)?;
        let expected_bridge = m.params.clone();
        m.params = params;
        m.check_ready()?;
        for name in [BRIDGE_ROWS, BRIDGE_COLS] {
            let p = m.params.get(name).ok_or_else(|| Error::Graph(format!("missing `{name}`")))?;
            if p.trainable || p.value.shape() != expected_bridge.value(name).map(|t| t.shape()).unwrap_or(&[]) {
                return Err(Error::shape(format!("`{name}` does not match the model sizes")));
            }
        }
        Ok(m)
    }

    pub fn uses_background(&self) -> bool {
        self.config.stage2.in_channels == 6
    }

    pub fn check_ready(&self) -> Result<()> {
        self.encoder.spec.check_params(&self.params)?;
        self.segmenter.check_params(&self.params)
    }

    pub fn prepare(&self, sample: &FrameSample) -> Result<PreparedSample> {
        let (s1, s2) = (self.config.stage1.input_size, self.config.stage2_size);
        let n = &self.normalization;
        Ok(PreparedSample {
            frame1: n.normalize(&resize_image(&sample.image, s1)?)?,
            frame2: n.normalize(&resize_image(&sample.image, s2)?)?,
            target: match &sample.gt_background {
                Some(bg) => Some(n.normalize(&resize_image(bg, s1)?)?),
                None => None,
            },
            labels: sample.labels.resize_nearest(s2, s2),
        })
    }

    /// Appends stage 1, the bridge and stage 2 to `g`. Returns the stage-1 forward,
    /// the stage-2 forward and the probability node.
    fn forward_graph(
        &self,
        g: &mut Graph,
        batch: &[&PreparedSample],
        train_stage1: bool,
        train_stage2: bool,
        training: bool,
    ) -> Result<(Forward, Forward, crate::NodeId)> {
        let f1 = Tensor::stack(&batch.iter().map(|s| s.frame1.clone()).collect::<Vec<_>>())?;
        let f2 = Tensor::stack(&batch.iter().map(|s| s.frame2.clone()).collect::<Vec<_>>())?;
        let x1 = g.input(f1);
        let stage1 = self.encoder.spec.forward(g, &self.params, x1, train_stage1, training)?;
        let x2 = g.input(f2);
        let seg_input = if self.uses_background() {
            let rows = g.input(self.params.value(BRIDGE_ROWS).cloned().ok_or_else(|| Error::Graph("bridge missing".into()))?);
            let cols = g.input(self.params.value(BRIDGE_COLS).cloned().ok_or_else(|| Error::Graph("bridge missing".into()))?);
            let bridged = g.resize(stage1.output, rows, cols)?;
            g.concat_channels(x2, bridged)?
        } else {
            x2
        };
        let stage2 = self.segmenter.forward(g, &self.params, seg_input, train_stage2, training)?;
        let probs = g.softmax_channels(stage2.output)?;
        Ok((stage1, stage2, probs))
    }
}

/// One line of the loss history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    /// 1-based, counted across all steps.
    pub iteration: usize,
    pub l_rec: Option<f64>,
    pub l_seg: Option<f64>,
    pub joint: f64,
}

pub fn write_loss_csv<W: Write>(out: W, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "l_rec", "l_seg", "joint"]).map_err(csv_error)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in history {
        w.write_record([r.iteration.to_string(), fmt(r.l_rec), fmt(r.l_seg), format!("{:e}", r.joint)])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Replaces missing clean backgrounds with the label-masked temporal median of each
/// sequence.
pub fn fill_missing_backgrounds(samples: &mut [FrameSample]) -> Result<()> {
    let mut by_seq: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_seq.entry(s.sequence_id.clone()).or_default().push(i);
    }
    for idx in by_seq.values() {
        if idx.iter().all(|&i| samples[i].gt_background.is_some()) {
            continue;
        }
        let frames: Vec<FrameSample> = idx.iter().map(|&i| samples[i].clone()).collect();
        let gt = synthesize_gt_background(&frames)?;
        for &i in idx {
            if samples[i].gt_background.is_none() {
                samples[i].gt_background = Some(gt.image.clone());
            }
        }
    }
    Ok(())
}

/// Which losses one iteration produced.
struct IterationLoss {
    l_rec: Option<f64>,
    l_seg: Option<f64>,
    joint: f64,
}

fn train_iteration(
    model: &mut TwoStageModel,
    batch: &[&PreparedSample],
    scope: Scope,
    lambda: f64,
    sgd: &mut SgdState,
) -> Result<IterationLoss> {
    let mut g = Graph::new();
    let s2 = model.config.stage2_size;
    let n = batch.len() as f64;
    let rec_term = |g: &mut Graph, out: crate::NodeId| -> Result<crate::NodeId> {
        let targets = batch
            .iter()
            .map(|s| {
                s.target
                    .clone()
                    .ok_or_else(|| Error::Data("sample has no reconstruction target".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let t = g.input(Tensor::stack(&targets)?);
        let se = g.squared_error(out, t)?;
        // Sum over pixels and channels, averaged over the batch.
        g.scale(se, 1.0 / n)
    };

    let (loss, l_rec, l_seg, fwds, prefixes) = match scope {
        Scope::Stage1 => {
            let x1 = g.input(Tensor::stack(&batch.iter().map(|s| s.frame1.clone()).collect::<Vec<_>>())?);
            let f1 = model.encoder.spec.forward(&mut g, &model.params, x1, true, true)?;
            let lr = rec_term(&mut g, f1.output)?;
            (lr, Some(lr), None, vec![f1], vec![STAGE1_PREFIX])
        }
        Scope::Stage2 | Scope::Joint => {
            let joint = scope == Scope::Joint;
            let (f1, f2, probs) = model.forward_graph(&mut g, batch, joint, true, true)?;
            let labels: Vec<LabelMap> = batch.iter().map(|s| s.labels.clone()).collect();
            let flat = flatten_labels(&labels, s2, s2)?;
            let ls = g.masked_nll(probs, &flat)?;
            if joint {
                let lr = rec_term(&mut g, f1.output)?;
                let weighted = g.scale(ls, lambda)?;
                let total = g.add(lr, weighted)?;
                (total, Some(lr), Some(ls), vec![f1, f2], vec![STAGE1_PREFIX, STAGE2_PREFIX])
            } else {
                (ls, None, Some(ls), vec![f2], vec![STAGE2_PREFIX])
            }
        }
    };
    let joint = g.value(loss).item();
    if !joint.is_finite() {
        return Err(Error::NonFinite(format!("training loss {joint}")));
    }
    g.backward(loss)?;
    let grads = g.param_grads();
    let names: Vec<String> = prefixes
        .iter()
        .flat_map(|p| model.params.trainable_names(p))
        .filter(|n| !n.ends_with("running_mean") && !n.ends_with("running_var"))
        .collect();
    sgd.step(&mut model.params, names.iter().map(String::as_str), &grads)?;
    for f in &fwds {
        update_running_stats(&mut model.params, &g, f)?;
    }
    Ok(IterationLoss {
        l_rec: l_rec.map(|id| g.value(id).item()),
        l_seg: l_seg.map(|id| g.value(id).item()),
        joint,
    })
}

/// Progress notifications from [`run_training_schedule`].
pub enum TrainingEvent<'a> {
    Iteration(&'a LossRecord),
    StepFinished { step: usize, model: &'a TwoStageModel },
}

/// Runs the three steps in order on `data`. Step 1 uses samples with a clean
/// background, steps 2 and 3 use samples with at least one scorable label.
/// A fresh optimiser state is used for each step.
pub fn run_training_schedule(
    model: &mut TwoStageModel,
    config: &TrainingConfig,
    data: &[FrameSample],
    mut observer: impl FnMut(TrainingEvent<'_>) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    config.validate()?;
    model.check_ready()?;
    if data.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    let prepared = data.iter().map(|s| model.prepare(s)).collect::<Result<Vec<_>>>()?;
    let mut history = Vec::new();
    let mut iteration = 0;
    for (k, step) in config.steps.iter().enumerate() {
        let pool: Vec<&PreparedSample> = prepared
            .iter()
            .filter(|p| match step.scope {
                Scope::Stage1 => p.target.is_some(),
                Scope::Stage2 => p.labels.scorable() > 0,
                Scope::Joint => p.target.is_some() && p.labels.scorable() > 0,
            })
            .collect();
        if step.iterations > 0 && pool.is_empty() {
            return Err(Error::Data(format!("no usable samples for step {}", k + 1)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1 + k as u64));
        let mut order: Vec<usize> = (0..pool.len()).collect();
        let mut cursor = order.len();
        let mut sgd = SgdState::new(step.learning_rate, config.momentum)?;
        for _ in 0..step.iterations {
            let mut batch = Vec::with_capacity(step.batch_size);
            while batch.len() < step.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(pool[order[cursor]]);
                cursor += 1;
            }
            let loss = train_iteration(model, &batch, step.scope, config.lambda, &mut sgd)?;
            iteration += 1;
            let record = LossRecord {
                step: k + 1,
                iteration,
                l_rec: loss.l_rec,
                l_seg: loss.l_seg,
                joint: loss.joint,
            };
            observer(TrainingEvent::Iteration(&record))?;
            history.push(record);
        }
        observer(TrainingEvent::StepFinished { step: k + 1, model })?;
    }
    Ok(history)
}

/// Outputs of [`infer_end_to_end`].
#[derive(Clone, Debug)]
pub struct Inference {
    /// `[N,3,S1,S1]` reconstructed backgrounds in `[0,1]` image range (unclamped).
    pub background: Tensor,
    /// Probabilities at `S2 × S2`.
    pub probs: ProbabilityMap,
    pub masks: Vec<Mask>,
}

/// Stage 1 → bridge → concat → stage 2 → argmax mask, for `[3,H,W]` frames in `[0,1]`.
pub fn infer_end_to_end(model: &TwoStageModel, frames: &[Tensor]) -> Result<Inference> {
    model.check_ready()?;
    if frames.is_empty() {
        return Err(Error::invalid("no frames to infer"));
    }
    let (s1, s2) = (model.config.stage1.input_size, model.config.stage2_size);
    let n = &model.normalization;
    let prepared = frames
        .iter()
        .map(|f| {
            Ok(PreparedSample {
                frame1: n.normalize(&resize_image(f, s1)?)?,
                frame2: n.normalize(&resize_image(f, s2)?)?,
                target: None,
                labels: LabelMap::filled(s2, s2, -1),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PreparedSample> = prepared.iter().collect();
    let mut g = Graph::new();
    let (f1, _, probs) = model.forward_graph(&mut g, &refs, false, false, false)?;
    let probs = ProbabilityMap::new(g.value(probs).clone())?;
    let masks = mask_from_probs(&probs, MaskMode::Argmax)?;
    Ok(Inference {
        background: n.denormalize(g.value(f1.output))?,
        probs,
        masks,
    })
}

/// Runs inference in small batches and scores the masks against each sample's labels
/// (resized to the segmenter resolution). Returns the sequence/category/overall reports.
pub fn evaluate_model(model: &TwoStageModel, samples: &[FrameSample], category: &str) -> Result<Vec<EvalReport>> {
    let s2 = model.config.stage2_size;
    let mut ev = Evaluation::new();
    for chunk in samples.chunks(4) {
        let frames: Vec<Tensor> = chunk.iter().map(|s| s.image.clone()).collect();
        let out = infer_end_to_end(model, &frames)?;
        for (s, m) in chunk.iter().zip(&out.masks) {
            ev.add_frame(category, &s.sequence_id, s.frame_index, m, &s.labels.resize_nearest(s2, s2))?;
        }
    }
    ev.reports()
}

/// The overall F-measure of [`evaluate_model`].
pub fn overall_f_measure(model: &TwoStageModel, samples: &[FrameSample]) -> Result<f64> {
    let reports = evaluate_model(model, samples, "default")?;
    reports
        .iter()
        .find(|r| r.level == Grouping::Overall)
        .map(|r| r.f_measure)
        .ok_or(Error::NoScorablePixels)
}

/// Mean squared error between the reconstruction and each sample's clean background,
/// both at the stage-1 resolution in `[0,1]` image range.
pub fn reconstruction_mse(model: &TwoStageModel, samples: &[FrameSample]) -> Result<f64> {
    let s1 = model.config.stage1.input_size;
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(4) {
        let frames: Vec<Tensor> = chunk.iter().map(|s| s.image.clone()).collect();
        let out = infer_end_to_end(model, &frames)?;
        for (i, s) in chunk.iter().enumerate() {
            let bg = s
                .gt_background
                .as_ref()
                .ok_or_else(|| Error::Data("sample has no clean background".into()))?;
            let truth = resize_image(bg, s1)?;
            let got = out.background.batch_item(i)?;
            total += got.mean_squared_error(&truth)? * truth.len() as f64;
            count += truth.len();
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            stage1: EncoderDecoderProfile {
                input_size: 8,
                channel_progression: vec![4],
                latent_channels: 4,
                use_batchnorm: false,
            },
            stage2: McfcnProfile {
                in_channels: 6,
                stage_channels: vec![4, 4],
                fc6_dilation: 2,
                output_stride: 2,
                num_classes: 2,
                head_channels: 4,
                use_batchnorm: false,
            },
            stage2_size: 12,
        }
    }

    #[test]
    fn bridge_examples() {
        let x = Tensor::uniform(vec![1, 3, 5, 5], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(bilinear_bridge(&x, 5).unwrap(), x);
        let c = bilinear_bridge(&Tensor::full(vec![2, 3, 4, 4], 0.3), 9).unwrap();
        assert_eq!(c.shape(), &[2, 3, 9, 9]);
        assert!(c.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn joint_loss_examples() {
        assert_eq!(joint_loss(2.0, 3.0, 1.0).unwrap(), 5.0);
        assert_eq!(joint_loss(2.0, 3.0, 0.0).unwrap(), 2.0);
        assert!(joint_loss(f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn paper_schedule_values() {
        let p = TrainingConfig::paper();
        p.validate().unwrap();
        let b: Vec<usize> = p.steps.iter().map(|s| s.batch_size).collect();
        assert_eq!(b, vec![4, 2, 1]);
        let it: Vec<usize> = p.steps.iter().map(|s| s.iterations).collect();
        assert_eq!(it, vec![20_000, 6_000, 3_000]);
        let lr: Vec<f64> = p.steps.iter().map(|s| s.learning_rate).collect();
        assert_eq!(lr, vec![1e-4, 1e-3, 1e-5]);
        assert_eq!(p.init, InitScheme::Normal { std: 0.01 });
        assert_eq!(p.lambda, 1.0);
    }

    #[test]
    fn schedule_shape_is_enforced() {
        let mut c = TrainingConfig::desk();
        c.steps.swap(0, 1);
        assert!(c.validate().is_err());
        let mut c = TrainingConfig::desk();
        c.steps.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn inference_shapes_and_determinism() {
        let m = TwoStageModel::initialized(tiny_config(), Normalization::default(), InitScheme::He, 3).unwrap();
        let f = Tensor::uniform(vec![3, 10, 10], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let a = infer_end_to_end(&m, std::slice::from_ref(&f)).unwrap();
        let b = infer_end_to_end(&m, &[f]).unwrap();
        assert_eq!(a.background.shape(), &[1, 3, 8, 8]);
        assert_eq!(a.probs.probs.shape(), &[1, 2, 12, 12]);
        assert_eq!((a.masks[0].height(), a.masks[0].width()), (12, 12));
        assert_eq!(a.background, b.background);
        assert_eq!(a.probs.probs, b.probs.probs);
    }

    #[test]
    fn uninitialised_model_refuses_inference() {
        let m = TwoStageModel::new(tiny_config(), Normalization::default()).unwrap();
        assert!(infer_end_to_end(&m, &[Tensor::zeros(vec![3, 8, 8])]).is_err());
    }

    #[test]
    fn backgrounds_are_filled_per_sequence() {
        let mk = |v: f64, seq: &str| {
            FrameSample::new(Tensor::full(vec![3, 2, 2], v), LabelMap::filled(2, 2, 0), seq, 1).unwrap()
        };
        let mut s = vec![mk(0.1, "a"), mk(0.3, "a"), mk(0.8, "b")];
        fill_missing_backgrounds(&mut s).unwrap();
        assert!((s[0].gt_background.as_ref().unwrap().data()[0] - 0.2).abs() < 1e-15);
        assert_eq!(s[2].gt_background.as_ref().unwrap().data()[0], 0.8);
    }

    #[test]
    fn loss_csv_header() {
        let h = [LossRecord {
            step: 1,
            iteration: 1,
            l_rec: Some(1.5),
            l_seg: None,
            joint: 1.5,
        }];
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &h).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "iteration,l_rec,l_seg,joint\n1,1.5e0,,1.5e0\n");
    }
}
