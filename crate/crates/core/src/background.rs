//! First stage: the all-convolutional encoder-decoder that reconstructs a clean
//! background image from a frame.
//!
//! Encoder: 4×4 stride-2 convolutions with leaky ReLU (slope 0.2), then a 3×3
//! convolution to the latent width. Decoder: mirrored 4×4 stride-2 transposed
//! convolutions with ReLU, ending in three `tanh` channels.

use serde::{Deserialize, Serialize};

use crate::conv::ConvSpec;
use crate::data::FrameSample;
use crate::error::{Error, Result};
use crate::graph::{self, Activation, Graph};
use crate::nn::{LayerKind, LayerSpec, NetworkSpec, ParamStore};
use crate::tensor::Tensor;

pub const ENCODER_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderDecoderProfile {
    pub input_size: usize,
    pub channel_progression: Vec<usize>,
    pub latent_channels: usize,
    #[serde(default)]
    pub use_batchnorm: bool,
}

impl EncoderDecoderProfile {
    pub fn desk() -> Self {
        EncoderDecoderProfile {
            input_size: 32,
            channel_progression: vec![16, 32, 64],
            latent_channels: 128,
            use_batchnorm: false,
        }
    }

    /// 128×128 input with DCGAN-style widths.
    pub fn paper() -> Self {
        EncoderDecoderProfile {
            input_size: 128,
            channel_progression: vec![64, 128, 256, 512],
            latent_channels: 1024,
            use_batchnorm: false,
        }
    }

    pub fn latent_extent(&self) -> usize {
        self.input_size >> self.channel_progression.len()
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.channel_progression.len();
        if stages == 0 {
            return Err(Error::invalid("encoder needs at least one stride-2 stage"));
        }
        if self.channel_progression.contains(&0) || self.latent_channels == 0 {
            return Err(Error::invalid("zero channel width in encoder profile"));
        }
        let step = 1usize << stages;
        if self.input_size == 0 || !self.input_size.is_multiple_of(step) {
            return Err(Error::invalid(format!(
                "input size {} is not divisible by 2^{stages}",
                self.input_size
            )));
        }
        Ok(())
    }
}

/// Builds the encoder-decoder under the parameter prefix `stage1`.
pub fn build_encoder_decoder(profile: &EncoderDecoderProfile) -> Result<NetworkSpec> {
    profile.validate()?;
    let mut layers = Vec::new();
    let leaky = Activation::LeakyRelu {
        slope: ENCODER_LEAKY_SLOPE,
    };
    let push = |layers: &mut Vec<LayerSpec>, name: &str, kind: LayerKind, bn: Option<usize>, act: Activation| {
        layers.push(LayerSpec {
            name: name.to_string(),
            kind,
        });
        if let (true, Some(channels)) = (profile.use_batchnorm, bn) {
            layers.push(LayerSpec {
                name: format!("{name}_bn"),
                kind: LayerKind::BatchNorm { channels },
            });
        }
        layers.push(LayerSpec {
            name: format!("{name}_act"),
            kind: LayerKind::Act { activation: act },
        });
    };

    let mut c = 3;
    for (i, &width) in profile.channel_progression.iter().enumerate() {
        let spec = ConvSpec::new(c, width, 4).stride(2).padding(1);
        // No normalisation on the first layer, as in DCGAN.
        let bn = (i > 0).then_some(width);
        push(&mut layers, &format!("enc{}", i + 1), LayerKind::Conv { spec }, bn, leaky);
        c = width;
    }
    let spec = ConvSpec::new(c, profile.latent_channels, 3).padding(1);
    push(
        &mut layers,
        "latent",
        LayerKind::Conv { spec },
        Some(profile.latent_channels),
        leaky,
    );

    c = profile.latent_channels;
    let stages = profile.channel_progression.len();
    for i in (0..stages).rev() {
        let out = if i == 0 { 3 } else { profile.channel_progression[i - 1] };
        let spec = ConvSpec::new(c, out, 4).stride(2).padding(1);
        let name = format!("dec{}", stages - i);
        if i == 0 {
            push(&mut layers, &name, LayerKind::ConvTranspose { spec }, None, Activation::Tanh);
        } else {
            push(
                &mut layers,
                &name,
                LayerKind::ConvTranspose { spec },
                Some(out),
                Activation::Relu,
            );
        }
        c = out;
    }
    Ok(NetworkSpec {
        name: "stage1".into(),
        in_channels: 3,
        layers,
    })
}

/// A built encoder-decoder bound to its profile.
#[derive(Clone, Debug)]
pub struct EncoderDecoder {
    pub profile: EncoderDecoderProfile,
    pub spec: NetworkSpec,
}

impl EncoderDecoder {
    pub fn new(profile: EncoderDecoderProfile) -> Result<Self> {
        let spec = build_encoder_decoder(&profile)?;
        Ok(EncoderDecoder { profile, spec })
    }

    pub fn check_input(&self, frame: &Tensor) -> Result<()> {
        let (_, c, h, w) = frame.dims4()?;
        let s = self.profile.input_size;
        if c != 3 || h != s || w != s {
            return Err(Error::shape(format!(
                "encoder-decoder expects [N,3,{s},{s}], got {:?}",
                frame.shape()
            )));
        }
        Ok(())
    }
}

/// One inference pass: `[N,3,S,S]` normalised frame to its reconstructed background.
pub fn reconstruct(net: &EncoderDecoder, store: &ParamStore, frame: &Tensor) -> Result<Tensor> {
    net.check_input(frame)?;
    let mut g = Graph::new();
    let x = g.input(frame.clone());
    let f = net.spec.forward(&mut g, store, x, false, false)?;
    Ok(g.value(f.output).clone())
}

/// Sum of squared differences between reconstruction and target background.
pub fn reconstruction_loss(background: &Tensor, target: &Tensor) -> Result<f64> {
    graph::squared_error(background, target)
}

/// A per-sequence background target built from label maps.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthBackground {
    /// `[3,H,W]` in `[0,1]`.
    pub image: Tensor,
    /// Number of background-labelled observations behind each pixel.
    pub coverage: Vec<u32>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-pixel, per-channel median over the frames where the pixel is labelled
/// background; pixels never labelled background fall back to the median over all frames.
pub fn synthesize_gt_background(frames: &[FrameSample]) -> Result<GroundTruthBackground> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Data("cannot synthesise a background from zero frames".into()))?;
    let (_, h, w) = first.image.dims3()?;
    for f in frames {
        if f.image.shape() != first.image.shape() {
            return Err(Error::shape("frames of one sequence must share a size"));
        }
    }
    let plane = h * w;
    let mut image = Tensor::zeros(vec![3, h, w]);
    let mut coverage = vec![0u32; plane];
    let mut buf = Vec::with_capacity(frames.len());
    for p in 0..plane {
        let bg_frames: Vec<&FrameSample> = frames.iter().filter(|f| f.labels.values()[p] == 0).collect();
        coverage[p] = bg_frames.len() as u32;
        for c in 0..3 {
            buf.clear();
            if bg_frames.is_empty() {
                buf.extend(frames.iter().map(|f| f.image.data()[c * plane + p]));
            } else {
                buf.extend(bg_frames.iter().map(|f| f.image.data()[c * plane + p]));
            }
            image.data_mut()[c * plane + p] = median(&mut buf);
        }
    }
    Ok(GroundTruthBackground { image, coverage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::LabelMap;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn latent_extent_and_output_shape() {
        let paper = EncoderDecoderProfile::paper();
        assert_eq!(paper.latent_extent(), 128 / 16);
        let net = build_encoder_decoder(&paper).unwrap();
        assert_eq!(net.output_shape([2, 3, 128, 128]).unwrap(), [2, 3, 128, 128]);
        let desk = build_encoder_decoder(&EncoderDecoderProfile::desk()).unwrap();
        assert_eq!(desk.output_shape([1, 3, 32, 32]).unwrap(), [1, 3, 32, 32]);
    }

    #[test]
    fn indivisible_input_rejected() {
        let mut p = EncoderDecoderProfile::desk();
        p.input_size = 36;
        assert!(build_encoder_decoder(&p).is_err());
    }

    #[test]
    fn desk_forward_is_finite() {
        let net = EncoderDecoder::new(EncoderDecoderProfile::desk()).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        net.spec.init_params(&mut store, 0.05, &mut rng);
        let x = Tensor::uniform(vec![2, 3, 32, 32], -0.5, 0.5, &mut rng);
        let y = reconstruct(&net, &store, &x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 32, 32]);
        assert!(y.all_finite());
        assert!(reconstruct(&net, &store, &Tensor::zeros(vec![1, 3, 16, 16])).is_err());
    }

    #[test]
    fn zero_network_outputs_tanh_of_zero() {
        let net = EncoderDecoder::new(EncoderDecoderProfile::desk()).unwrap();
        let mut store = ParamStore::new();
        net.spec.init_params(&mut store, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        let x = Tensor::uniform(vec![1, 3, 32, 32], -0.5, 0.5, &mut ChaCha8Rng::seed_from_u64(1));
        let y = reconstruct(&net, &store, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_examples() {
        let b = Tensor::full(vec![2, 2, 3], 0.25);
        assert_eq!(reconstruction_loss(&b, &b).unwrap(), 0.0);
        let shifted = b.map(|v| v + 1.0);
        assert_eq!(reconstruction_loss(&shifted, &b).unwrap(), 12.0);
        assert!(reconstruction_loss(&b, &Tensor::zeros(vec![12])).is_err());
    }

    fn frame(value: f64, label: i8) -> FrameSample {
        FrameSample::new(
            Tensor::full(vec![3, 1, 1], value),
            LabelMap::filled(1, 1, label),
            "s",
            0,
        )
        .unwrap()
    }

    #[test]
    fn median_over_background_observations() {
        let frames = [frame(0.1, 0), frame(0.9, 1), frame(0.2, 0), frame(0.4, 0), frame(0.3, 0)];
        let gt = synthesize_gt_background(&frames).unwrap();
        assert!((gt.image.data()[0] - 0.25).abs() < 1e-15);
        assert_eq!(gt.coverage, vec![4]);
    }

    #[test]
    fn fallback_when_never_background() {
        let frames = [frame(0.1, 1), frame(0.9, 1), frame(0.2, -1)];
        let gt = synthesize_gt_background(&frames).unwrap();
        assert_eq!(gt.image.data()[0], 0.2);
        assert_eq!(gt.coverage, vec![0]);
        assert!(synthesize_gt_background(&[]).is_err());
    }
}
