//! Layer descriptors, the named parameter registry and network forward passes.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{bilinear_matrix, ConvSpec};
use crate::error::{Error, Result};
use crate::graph::{Activation, Graph, NodeId};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// Named tensors shared by every network of a model. Names are `<net>.<layer>.<role>`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        self.entries.insert(name.into(), Param { value, trainable });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    fn require(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Graph(format!("parameter `{name}` is not initialised")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    /// Trainable parameter names under `prefix` (e.g. `"stage1."`).
    pub fn trainable_names(&self, prefix: &str) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(k, p)| p.trainable && k.starts_with(prefix))
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Order-stable checksum of every tensor under `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (k, p) in self.entries.iter().filter(|(k, _)| k.starts_with(prefix)) {
            for b in k.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
            }
            h = (h ^ p.value.checksum()).wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv { spec: ConvSpec },
    ConvTranspose { spec: ConvSpec },
    Act { activation: Activation },
    BatchNorm { channels: usize },
    /// Fixed (non-trainable) bilinear upsampling by an integer factor.
    Upsample { factor: usize },
    /// Fixed bilinear resize back to the spatial extent of the network input.
    UpsampleToInput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Random weights; `fan_in` is the number of inputs feeding one output value.
    Normal { fan_in: usize },
    Zeros,
    Ones,
}

/// How random weights are scaled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    /// The same standard deviation for every layer.
    Normal { std: f64 },
    /// `std = sqrt(2 / fan_in)` per layer, suited to ReLU stacks trained from scratch.
    He,
}

impl InitScheme {
    pub fn std(self, fan_in: usize) -> f64 {
        match self {
            InitScheme::Normal { std } => std,
            InitScheme::He => (2.0 / fan_in.max(1) as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub init: Init,
}

/// An ordered list of layers under a parameter prefix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub in_channels: usize,
    pub layers: Vec<LayerSpec>,
}

/// Output of [`NetworkSpec::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    pub output: NodeId,
    /// Batch-norm nodes that used batch statistics, keyed by layer prefix.
    pub batch_norms: Vec<(String, NodeId)>,
}

impl NetworkSpec {
    fn key(&self, layer: &LayerSpec, role: &str) -> String {
        format!("{}.{}.{}", self.name, layer.name, role)
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, trainable, init| {
            out.push(ParamShape {
                name,
                shape,
                trainable,
                init,
            })
        };
        for layer in &self.layers {
            match &layer.kind {
                LayerKind::Conv { spec } => {
                    let fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
                    push(
                        self.key(layer, "weight"),
                        spec.weight_shape().to_vec(),
                        true,
                        Init::Normal { fan_in },
                    );
                    if spec.has_bias {
                        push(self.key(layer, "bias"), vec![spec.out_channels], true, Init::Zeros);
                    }
                }
                LayerKind::ConvTranspose { spec } => {
                    let taps = spec.in_channels * spec.kernel_h * spec.kernel_w;
                    let fan_in = (taps / (spec.stride * spec.stride)).max(1);
                    push(
                        self.key(layer, "weight"),
                        spec.transposed_weight_shape().to_vec(),
                        true,
                        Init::Normal { fan_in },
                    );
                    if spec.has_bias {
                        push(self.key(layer, "bias"), vec![spec.out_channels], true, Init::Zeros);
                    }
                }
                LayerKind::BatchNorm { channels } => {
                    push(self.key(layer, "gamma"), vec![*channels], true, Init::Ones);
                    push(self.key(layer, "beta"), vec![*channels], true, Init::Zeros);
                    push(self.key(layer, "running_mean"), vec![*channels], false, Init::Zeros);
                    push(self.key(layer, "running_var"), vec![*channels], false, Init::Ones);
                }
                LayerKind::Act { .. } | LayerKind::Upsample { .. } | LayerKind::UpsampleToInput => {}
            }
        }
        out
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }

    /// Draws weights from `Normal(0, std²)`; biases and shifts start at zero, scales at one.
    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, std: f64, rng: &mut R) {
        self.init_params_with(store, InitScheme::Normal { std }, rng)
    }

    pub fn init_params_with<R: Rng + ?Sized>(&self, store: &mut ParamStore, scheme: InitScheme, rng: &mut R) {
        for p in self.param_shapes() {
            let value = match p.init {
                Init::Normal { fan_in } => Tensor::randn(p.shape.clone(), 0.0, scheme.std(fan_in), rng),
                Init::Zeros => Tensor::zeros(p.shape.clone()),
                Init::Ones => Tensor::ones(p.shape.clone()),
            };
            store.insert(p.name, value, p.trainable);
        }
    }

    /// Checks that `store` holds every parameter with the declared shape.
    pub fn check_params(&self, store: &ParamStore) -> Result<()> {
        for p in self.param_shapes() {
            let have = store.require(&p.name)?;
            if have.value.shape() != p.shape.as_slice() {
                return Err(Error::shape(format!(
                    "parameter `{}` has shape {:?}, network declares {:?}",
                    p.name,
                    have.value.shape(),
                    p.shape
                )));
            }
        }
        Ok(())
    }

    /// Symbolic output shape for an `[N,C,H,W]` input.
    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let [n, mut c, mut h, mut w] = input;
        let (in_h, in_w) = (h, w);
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "{} expects {} input channels, got {c}",
                self.name, self.in_channels
            )));
        }
        for layer in &self.layers {
            match &layer.kind {
                LayerKind::Conv { spec } => {
                    if spec.in_channels != c {
                        return Err(Error::shape(format!("layer {} channel mismatch", layer.name)));
                    }
                    (h, w) = spec.output_extent(h, w)?;
                    c = spec.out_channels;
                }
                LayerKind::ConvTranspose { spec } => {
                    if spec.in_channels != c {
                        return Err(Error::shape(format!("layer {} channel mismatch", layer.name)));
                    }
                    (h, w) = spec.transposed_output_extent(h, w)?;
                    c = spec.out_channels;
                }
                LayerKind::BatchNorm { channels } => {
                    if *channels != c {
                        return Err(Error::shape(format!("layer {} channel mismatch", layer.name)));
                    }
                }
                LayerKind::Upsample { factor } => {
                    h *= factor;
                    w *= factor;
                }
                LayerKind::UpsampleToInput => (h, w) = (in_h, in_w),
                LayerKind::Act { .. } => {}
            }
        }
        Ok([n, c, h, w])
    }

    /// Appends the network to `graph`. `trainable` makes the parameters require grad;
    /// `training` selects batch statistics for batch-norm layers.
    pub fn forward(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        input: NodeId,
        trainable: bool,
        training: bool,
    ) -> Result<Forward> {
        let mut x = input;
        let (_, _, in_h, in_w) = graph.value(input).dims4()?;
        let mut batch_norms = Vec::new();
        for layer in &self.layers {
            x = match &layer.kind {
                LayerKind::Conv { spec } => {
                    let (w, b) = self.weight_and_bias(graph, store, layer, spec, trainable)?;
                    graph.conv2d(x, w, b, *spec)?
                }
                LayerKind::ConvTranspose { spec } => {
                    let (w, b) = self.weight_and_bias(graph, store, layer, spec, trainable)?;
                    graph.conv_transpose2d(x, w, b, *spec, None)?
                }
                LayerKind::Act { activation } => graph.activation(x, *activation)?,
                LayerKind::BatchNorm { .. } => {
                    let gk = self.key(layer, "gamma");
                    let bk = self.key(layer, "beta");
                    let gamma = graph.param(&gk, store.require(&gk)?.value.clone(), trainable);
                    let beta = graph.param(&bk, store.require(&bk)?.value.clone(), trainable);
                    if training {
                        let id = graph.batch_norm(x, gamma, beta, None, BN_EPS)?;
                        batch_norms.push((format!("{}.{}", self.name, layer.name), id));
                        id
                    } else {
                        let mean = store.require(&self.key(layer, "running_mean"))?.value.clone();
                        let var = store.require(&self.key(layer, "running_var"))?.value.clone();
                        graph.batch_norm(x, gamma, beta, Some((mean.data(), var.data())), BN_EPS)?
                    }
                }
                LayerKind::Upsample { factor } => {
                    let (_, _, h, w) = graph.value(x).dims4()?;
                    let rows = graph.input(bilinear_matrix(h, h * factor));
                    let cols = graph.input(bilinear_matrix(w, w * factor));
                    graph.resize(x, rows, cols)?
                }
                LayerKind::UpsampleToInput => {
                    let (_, _, h, w) = graph.value(x).dims4()?;
                    if (h, w) == (in_h, in_w) {
                        x
                    } else {
                        let rows = graph.input(bilinear_matrix(h, in_h));
                        let cols = graph.input(bilinear_matrix(w, in_w));
                        graph.resize(x, rows, cols)?
                    }
                }
            };
        }
        Ok(Forward {
            output: x,
            batch_norms,
        })
    }

    fn weight_and_bias(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        layer: &LayerSpec,
        spec: &ConvSpec,
        trainable: bool,
    ) -> Result<(NodeId, Option<NodeId>)> {
        let wk = self.key(layer, "weight");
        let w = graph.param(&wk, store.require(&wk)?.value.clone(), trainable);
        let b = if spec.has_bias {
            let bk = self.key(layer, "bias");
            Some(graph.param(&bk, store.require(&bk)?.value.clone(), trainable))
        } else {
            None
        };
        Ok((w, b))
    }
}

/// Folds the batch statistics of a training forward pass into the running averages.
pub fn update_running_stats(store: &mut ParamStore, graph: &Graph, forward: &Forward) -> Result<()> {
    for (prefix, id) in &forward.batch_norms {
        let (mean, var) = graph
            .batch_norm_stats(*id)
            .ok_or_else(|| Error::Graph(format!("{prefix} is not a batch-norm node")))?;
        for (role, stat) in [("running_mean", mean), ("running_var", var)] {
            let key = format!("{prefix}.{role}");
            let p = store
                .get_mut(&key)
                .ok_or_else(|| Error::Graph(format!("missing `{key}`")))?;
            for (r, s) in p.value.data_mut().iter_mut().zip(stat) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * s;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> NetworkSpec {
        NetworkSpec {
            name: "net".into(),
            in_channels: 2,
            layers: vec![
                LayerSpec {
                    name: "c1".into(),
                    kind: LayerKind::Conv {
                        spec: ConvSpec::new(2, 3, 3).padding(1),
                    },
                },
                LayerSpec {
                    name: "bn1".into(),
                    kind: LayerKind::BatchNorm { channels: 3 },
                },
                LayerSpec {
                    name: "a1".into(),
                    kind: LayerKind::Act {
                        activation: Activation::Relu,
                    },
                },
                LayerSpec {
                    name: "up".into(),
                    kind: LayerKind::Upsample { factor: 2 },
                },
            ],
        }
    }

    #[test]
    fn init_then_forward_matches_symbolic_shape() {
        let net = tiny();
        let mut store = ParamStore::new();
        net.init_params(&mut store, 0.01, &mut ChaCha8Rng::seed_from_u64(0));
        net.check_params(&store).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::ones(vec![2, 2, 5, 5]));
        let f = net.forward(&mut g, &store, x, true, true).unwrap();
        assert_eq!(g.value(f.output).shape(), &net.output_shape([2, 2, 5, 5]).unwrap());
        assert_eq!(f.batch_norms.len(), 1);
        update_running_stats(&mut store, &g, &f).unwrap();
        assert!(!store.get("net.bn1.running_mean").unwrap().trainable);
    }

    #[test]
    fn check_params_reports_shape_mismatch() {
        let net = tiny();
        let mut store = ParamStore::new();
        net.init_params(&mut store, 0.01, &mut ChaCha8Rng::seed_from_u64(0));
        store.insert("net.c1.weight", Tensor::zeros(vec![3, 2, 1, 1]), true);
        assert!(matches!(net.check_params(&store), Err(Error::Shape(_))));
    }

    #[test]
    fn checksum_is_prefix_scoped() {
        let mut s = ParamStore::new();
        s.insert("a.x", Tensor::ones(vec![2]), true);
        s.insert("b.x", Tensor::ones(vec![2]), true);
        let a = s.checksum("a.");
        s.get_mut("b.x").unwrap().value.data_mut()[0] = 5.0;
        assert_eq!(a, s.checksum("a."));
        assert_ne!(s.checksum(""), ParamStore::new().checksum(""));
    }
}
