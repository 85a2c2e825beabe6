//! Second stage: the multi-channel fully-convolutional segmenter.
//!
//! The trunk is a small dilated-convolution network in the DeepLab-LargeFOV mould:
//! stride-2 stages down to `output_stride`, one dilation-2 stage, an `fc6` analog with
//! dilation `fc6_dilation`, two 1×1 layers and a fixed bilinear resize of the 2-class
//! logits back to the input resolution. The first layer takes either the 6-channel
//! frame ⧺ background stack or, for the single-image baseline, the 3-channel frame.

use serde::{Deserialize, Serialize};

use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::graph::{self, Activation, Graph};
use crate::nn::{LayerKind, LayerSpec, NetworkSpec, ParamStore};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 2;
pub const IGNORE_LABEL: i8 = -1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McfcnProfile {
    pub in_channels: usize,
    pub stage_channels: Vec<usize>,
    #[serde(default = "default_fc6_dilation")]
    pub fc6_dilation: usize,
    pub output_stride: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    pub head_channels: usize,
    #[serde(default)]
    pub use_batchnorm: bool,
}

fn default_fc6_dilation() -> usize {
    6
}

fn default_classes() -> usize {
    NUM_CLASSES
}

impl McfcnProfile {
    /// Desk-scale trunk: stages `[16,32,64,64]`, output stride 4.
    pub fn desk(in_channels: usize) -> Self {
        McfcnProfile {
            in_channels,
            stage_channels: vec![16, 32, 64, 64],
            fc6_dilation: 6,
            output_stride: 4,
            num_classes: NUM_CLASSES,
            head_channels: 64,
            use_batchnorm: false,
        }
    }

    /// VGG-16 widths at output stride 8 with a 1024-wide head.
    pub fn paper(in_channels: usize) -> Self {
        McfcnProfile {
            in_channels,
            stage_channels: vec![64, 128, 256, 512, 512],
            fc6_dilation: 6,
            output_stride: 8,
            num_classes: NUM_CLASSES,
            head_channels: 1024,
            use_batchnorm: false,
        }
    }

    fn downsampling_stages(&self) -> usize {
        self.output_stride.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 3 && self.in_channels != 6 {
            return Err(Error::invalid(format!(
                "segmenter input must have 3 or 6 channels, got {}",
                self.in_channels
            )));
        }
        if self.num_classes != NUM_CLASSES {
            return Err(Error::invalid("the segmenter is fixed to 2 classes"));
        }
        if !self.output_stride.is_power_of_two() {
            return Err(Error::invalid(format!(
                "output stride must be a power of two, got {}",
                self.output_stride
            )));
        }
        if self.downsampling_stages() > self.stage_channels.len() {
            return Err(Error::invalid("not enough stages to reach the output stride"));
        }
        if self.stage_channels.contains(&0) || self.head_channels == 0 || self.fc6_dilation == 0 {
            return Err(Error::invalid("zero width or dilation in segmenter profile"));
        }
        Ok(())
    }
}

/// Builds the segmenter network under the parameter prefix `stage2`.
pub fn build_mcfcn(profile: &McfcnProfile) -> Result<NetworkSpec> {
    profile.validate()?;
    let mut layers = Vec::new();
    let relu = Activation::Relu;
    let push_block = |layers: &mut Vec<LayerSpec>, name: String, spec: ConvSpec, act: bool| {
        layers.push(LayerSpec {
            name: name.clone(),
            kind: LayerKind::Conv { spec },
        });
        if profile.use_batchnorm && act {
            layers.push(LayerSpec {
                name: format!("{name}_bn"),
                kind: LayerKind::BatchNorm {
                    channels: spec.out_channels,
                },
            });
        }
        if act {
            layers.push(LayerSpec {
                name: format!("{name}_act"),
                kind: LayerKind::Act { activation: relu },
            });
        }
    };
    let down = profile.downsampling_stages();
    let mut c = profile.in_channels;
    for (i, &width) in profile.stage_channels.iter().enumerate() {
        let (stride, dilation) = if i < down {
            (2, 1)
        } else if i == down {
            (1, 2)
        } else {
            (1, 1)
        };
        let spec = ConvSpec::new(c, width, 3)
            .stride(stride)
            .dilation(dilation)
            .padding(dilation);
        push_block(&mut layers, format!("conv{}", i + 1), spec, true);
        c = width;
    }
    let d = profile.fc6_dilation;
    push_block(
        &mut layers,
        "fc6".into(),
        ConvSpec::new(c, profile.head_channels, 3).dilation(d).padding(d),
        true,
    );
    push_block(
        &mut layers,
        "fc7".into(),
        ConvSpec::new(profile.head_channels, profile.head_channels, 1),
        true,
    );
    push_block(
        &mut layers,
        "fc8".into(),
        ConvSpec::new(profile.head_channels, profile.num_classes, 1),
        false,
    );
    layers.push(LayerSpec {
        name: "upsample".into(),
        kind: LayerKind::UpsampleToInput,
    });
    Ok(NetworkSpec {
        name: "stage2".into(),
        in_channels: profile.in_channels,
        layers,
    })
}

/// Per-pixel labels in `{0, 1, -1}`; `-1` is ignored by the loss and by scoring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    values: Vec<i8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, values: Vec<i8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{} labels for a {height}x{width} map",
                values.len()
            )));
        }
        if let Some(&bad) = values.iter().find(|&&v| !(-1..=1).contains(&v)) {
            return Err(Error::InvalidLabel { value: bad as i32 });
        }
        Ok(LabelMap {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: i8) -> Self {
        LabelMap {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> i8 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: i8) {
        debug_assert!((-1..=1).contains(&v));
        self.values[y * self.width + x] = v;
    }

    pub fn scorable(&self) -> usize {
        self.values.iter().filter(|&&v| v != IGNORE_LABEL).count()
    }

    pub fn has_foreground(&self) -> bool {
        self.values.contains(&1)
    }

    /// Nearest-neighbour resample (pixel centres).
    pub fn resize_nearest(&self, height: usize, width: usize) -> LabelMap {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as usize).min(self.height - 1);
            for x in 0..width {
                let sx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as usize).min(self.width - 1);
                values.push(self.get(sy, sx));
            }
        }
        LabelMap {
            height,
            width,
            values,
        }
    }
}

/// Binary foreground mask, `1` = foreground.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{} mask values for {height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Mask {
            height,
            width,
            values,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            values: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x] == 1
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// `true` when every foreground pixel of `self` is also foreground in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.values
            .iter()
            .zip(&other.values)
            .all(|(&a, &b)| a == 0 || b == 1)
    }

    pub fn resize_nearest(&self, height: usize, width: usize) -> Mask {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as usize).min(self.height - 1);
            for x in 0..width {
                let sx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as usize).min(self.width - 1);
                values.push(self.values[sy * self.width + sx]);
            }
        }
        Mask {
            height,
            width,
            values,
        }
    }
}

/// Softmax output `[N,2,H,W]`; channel 1 is foreground.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    pub probs: Tensor,
}

impl ProbabilityMap {
    pub fn new(probs: Tensor) -> Result<Self> {
        let (_, k, _, _) = probs.dims4()?;
        if k != NUM_CLASSES {
            return Err(Error::shape(format!("probability map needs 2 channels, got {k}")));
        }
        Ok(ProbabilityMap { probs })
    }

    pub fn batch(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.probs.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.probs.shape()[3]
    }

    pub fn foreground(&self, b: usize, y: usize, x: usize) -> f64 {
        let (h, w) = (self.height(), self.width());
        self.probs.data()[((b * 2 + 1) * h + y) * w + x]
    }

    pub fn background(&self, b: usize, y: usize, x: usize) -> f64 {
        let (h, w) = (self.height(), self.width());
        self.probs.data()[(b * 2 * h + y) * w + x]
    }
}

/// Stacks frame (channels 0..3) and background (channels 3..6).
pub fn concat_channels(frame: &Tensor, background: &Tensor) -> Result<Tensor> {
    graph::concat_channels(frame, background)
}

/// Full-resolution class probabilities for `input` (`[N,in_channels,H,W]`).
pub fn segment(net: &NetworkSpec, store: &ParamStore, input: &Tensor) -> Result<ProbabilityMap> {
    let (_, c, _, _) = input.dims4()?;
    if c != net.in_channels {
        return Err(Error::shape(format!(
            "segmenter expects {} channels, got {c}",
            net.in_channels
        )));
    }
    let mut g = Graph::new();
    let x = g.input(input.clone());
    let f = net.forward(&mut g, store, x, false, false)?;
    let p = g.softmax_channels(f.output)?;
    ProbabilityMap::new(g.value(p).clone())
}

/// Flattens per-sample label maps into the `N·H·W` layout used by the loss op.
pub fn flatten_labels(labels: &[LabelMap], height: usize, width: usize) -> Result<Vec<i8>> {
    let mut out = Vec::with_capacity(labels.len() * height * width);
    for l in labels {
        if (l.height, l.width) != (height, width) {
            return Err(Error::shape(format!(
                "label map {}x{} does not match probability map {height}x{width}",
                l.height, l.width
            )));
        }
        out.extend_from_slice(&l.values);
    }
    Ok(out)
}

/// Mean negative log-probability of the true class over non-ignored pixels.
pub fn segmentation_loss(probs: &ProbabilityMap, labels: &[LabelMap]) -> Result<f64> {
    if labels.len() != probs.batch() {
        return Err(Error::shape(format!(
            "{} label maps for a batch of {}",
            labels.len(),
            probs.batch()
        )));
    }
    let flat = flatten_labels(labels, probs.height(), probs.width())?;
    let mut g = Graph::new();
    let p = g.input(probs.probs.clone());
    let l = g.masked_nll(p, &flat)?;
    Ok(g.value(l).item())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskMode {
    /// Larger channel wins; ties go to background.
    Argmax,
    /// Foreground where `P_fg > θ`.
    Threshold(f64),
}

/// One mask per batch item.
pub fn mask_from_probs(probs: &ProbabilityMap, mode: MaskMode) -> Result<Vec<Mask>> {
    if let MaskMode::Threshold(t) = mode {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::invalid(format!("threshold must lie in (0,1), got {t}")));
        }
    }
    let (h, w) = (probs.height(), probs.width());
    (0..probs.batch())
        .map(|b| {
            let mut values = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    let fg = probs.foreground(b, y, x);
                    let on = match mode {
                        MaskMode::Argmax => fg > probs.background(b, y, x),
                        MaskMode::Threshold(t) => fg > t,
                    };
                    values.push(on as u8);
                }
            }
            Mask::new(h, w, values)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probs(fg: &[f64], h: usize, w: usize) -> ProbabilityMap {
        let mut data: Vec<f64> = fg.iter().map(|p| 1.0 - p).collect();
        data.extend_from_slice(fg);
        ProbabilityMap::new(Tensor::new(vec![1, 2, h, w], data).unwrap()).unwrap()
    }

    #[test]
    fn first_layer_takes_six_channels() {
        let net = build_mcfcn(&McfcnProfile::desk(6)).unwrap();
        let first = net.param_shapes().into_iter().next().unwrap();
        assert_eq!(first.name, "stage2.conv1.weight");
        assert_eq!(first.shape, vec![16, 6, 3, 3]);
        assert_eq!(McfcnProfile::desk(6).fc6_dilation, 6);
        let fc6 = net
            .layers
            .iter()
            .find_map(|l| match (&l.name[..], &l.kind) {
                ("fc6", LayerKind::Conv { spec }) => Some(*spec),
                _ => None,
            })
            .unwrap();
        assert_eq!(fc6.dilation, 6);
    }

    #[test]
    fn baseline_differs_only_in_first_layer() {
        let six = build_mcfcn(&McfcnProfile::desk(6)).unwrap();
        let three = build_mcfcn(&McfcnProfile::desk(3)).unwrap();
        assert_eq!(six.parameter_count() - three.parameter_count(), 3 * 9 * 16);
        let s6 = six.param_shapes();
        let s3 = three.param_shapes();
        assert_eq!(s6.len(), s3.len());
        for (a, b) in s6.iter().zip(&s3).skip(1) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn invalid_profiles_rejected() {
        assert!(build_mcfcn(&McfcnProfile::desk(4)).is_err());
        let mut p = McfcnProfile::desk(6);
        p.output_stride = 3;
        assert!(build_mcfcn(&p).is_err());
    }

    #[test]
    fn output_resolution_matches_input() {
        for size in [64, 61, 961] {
            let net = build_mcfcn(&McfcnProfile::desk(6)).unwrap();
            assert_eq!(net.output_shape([1, 6, size, size]).unwrap(), [1, 2, size, size]);
        }
        let paper = build_mcfcn(&McfcnProfile::paper(6)).unwrap();
        assert_eq!(paper.output_shape([1, 6, 961, 961]).unwrap(), [1, 2, 961, 961]);
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = build_mcfcn(&McfcnProfile::desk(6)).unwrap();
        let mut store = ParamStore::new();
        net.init_params(&mut store, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        let x = Tensor::randn(vec![1, 6, 16, 16], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let p = segment(&net, &store, &x).unwrap();
        assert!(p.probs.data().iter().all(|&v| v == 0.5));
        assert!(matches!(
            segment(&net, &store, &Tensor::zeros(vec![1, 3, 16, 16])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn concat_layout() {
        let a = Tensor::full(vec![1, 3, 8, 8], 1.0);
        let b = Tensor::full(vec![1, 3, 8, 8], 2.0);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 6, 8, 8]);
        assert!(c.data()[..192].iter().all(|&v| v == 1.0));
        assert!(c.data()[192..].iter().all(|&v| v == 2.0));
        assert!(concat_channels(&a, &Tensor::zeros(vec![1, 3, 8, 7])).is_err());
        let x = Tensor::randn(vec![1, 3, 4, 4], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let xx = concat_channels(&x, &x).unwrap();
        assert_eq!(&xx.data()[..16], &xx.data()[48..64]);
    }

    #[test]
    fn loss_examples() {
        let p = probs(&[1.0, 0.0], 1, 2);
        let l = LabelMap::new(1, 2, vec![1, 0]).unwrap();
        assert_eq!(segmentation_loss(&p, &[l]).unwrap(), 0.0);

        let p = probs(&[0.5], 1, 1);
        let l = LabelMap::new(1, 1, vec![1]).unwrap();
        assert!((segmentation_loss(&p, &[l]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let p = probs(&[0.2, 0.9], 1, 2);
        let l = LabelMap::filled(1, 2, IGNORE_LABEL);
        assert_eq!(segmentation_loss(&p, &[l]).unwrap(), 0.0);
    }

    #[test]
    fn label_alphabet_enforced() {
        assert!(matches!(LabelMap::new(1, 2, vec![0, 2]), Err(Error::InvalidLabel { value: 2 })));
    }

    #[test]
    fn mask_rules() {
        let p = probs(&[0.6, 0.5, 0.4], 1, 3);
        let m = &mask_from_probs(&p, MaskMode::Argmax).unwrap()[0];
        assert_eq!(m.values(), &[1, 0, 0]);
        let m = &mask_from_probs(&p, MaskMode::Threshold(0.5)).unwrap()[0];
        assert_eq!(m.values(), &[1, 0, 0]);
        assert!(mask_from_probs(&p, MaskMode::Threshold(1.0)).is_err());
    }

    #[test]
    fn nearest_resize_of_labels() {
        let l = LabelMap::new(2, 2, vec![0, 1, -1, 0]).unwrap();
        let up = l.resize_nearest(4, 4);
        assert_eq!(up.get(0, 3), 1);
        assert_eq!(up.get(3, 0), -1);
        assert_eq!(up.resize_nearest(2, 2), l);
    }
}
