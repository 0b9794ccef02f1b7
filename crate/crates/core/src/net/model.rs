//! The deeply supervised network: backbone, six side heads, short
//! connections and the fusion layer.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::net::config::{BackboneSpec, NetworkConfig, ShortConnectionGraph, SideHeadSpec, INIT_BLEND_WEIGHT, NUM_SIDES};
use crate::params::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Input spatial dims must be a multiple of the deepest tap's stride.
pub const INPUT_MULTIPLE: usize = 32;

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
    pad: usize,
}

impl ConvLayer {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let bound = (1.0 / (cin * k * k) as f64).sqrt();
        let weight = store.insert(format!("{name}.weight"), Tensor::uniform([cout, cin, k, k], bound, rng))?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros([1, cout, 1, 1]))?;
        Ok(Self {
            weight,
            bias,
            pad: k / 2,
        })
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, b, 1, self.pad)
    }
}

#[derive(Debug, Clone)]
struct SideHead {
    convs: [ConvLayer; 2],
    score: ConvLayer,
    upsample: usize,
}

/// A short connection and its learnable weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: ParamId,
}

/// Graph handles for one forward pass.
#[derive(Debug, Clone)]
pub struct SideVars {
    /// Pre-sigmoid head outputs at input resolution.
    pub a_hat: [Var; NUM_SIDES],
    /// Maps after short-connection combination.
    pub r_tilde: [Var; NUM_SIDES],
    pub fusion: [Var; NUM_SIDES],
}

/// Materialized maps of one forward pass, all `1×1×H×W`.
#[derive(Debug, Clone)]
pub struct SideActivations<T> {
    pub a_hat: Vec<Tensor<T>>,
    pub r_tilde: Vec<Tensor<T>>,
    /// `h(R̃ᵐ)` per side.
    pub z_side: Vec<Tensor<T>>,
    /// Inference fusion over sides 2–4.
    pub z_fuse: Tensor<T>,
    pub z_final: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetworkConfig,
    connections: ShortConnectionGraph,
    store: ParamStore<T>,
    backbone: Vec<Vec<ConvLayer>>,
    heads: Vec<SideHead>,
    edges: Vec<Edge>,
    fusion: [ParamId; NUM_SIDES],
}

/// `Σ weights[i]·maps[i]` outside the graph.
fn blend<T: Scalar>(maps: &[&Tensor<T>], weights: &[T]) -> Tensor<T> {
    let mut out = Tensor::zeros(maps[0].shape());
    for (m, &w) in maps.iter().zip(weights) {
        out.data_mut()
            .iter_mut()
            .zip(m.data())
            .for_each(|(o, &v)| *o += w * v);
    }
    out
}

impl<T: Scalar> Network<T> {
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let backbone_spec: &BackboneSpec = &config.backbone;
        backbone_spec.validate()?;
        let head_spec: SideHeadSpec = config.heads()?;
        head_spec.validate()?;
        let connections = config.connections()?;

        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new();
        let mut backbone = Vec::with_capacity(5);
        let mut cin = backbone_spec.in_channels;
        for (s, (&count, &width)) in backbone_spec
            .conv_counts
            .iter()
            .zip(&backbone_spec.channels)
            .enumerate()
        {
            let mut stage = Vec::with_capacity(count);
            for c in 0..count {
                let name = format!("backbone.stage{}.conv{}", s + 1, c + 1);
                stage.push(ConvLayer::new(&mut store, &name, cin, width, 3, &mut rng)?);
                cin = width;
            }
            backbone.push(stage);
        }

        let mut heads = Vec::with_capacity(NUM_SIDES);
        for m in 1..=NUM_SIDES {
            let width = head_spec.channels[m - 1];
            let k = head_spec.kernels[m - 1];
            let name = format!("side{m}");
            let first = ConvLayer::new(&mut store, &format!("{name}.conv1"), backbone_spec.tap_channels(m), width, k, &mut rng)?;
            let second = ConvLayer::new(&mut store, &format!("{name}.conv2"), width, width, k, &mut rng)?;
            let score = ConvLayer::new(&mut store, &format!("{name}.score"), width, 1, 1, &mut rng)?;
            heads.push(SideHead {
                convs: [first, second],
                score,
                upsample: BackboneSpec::tap_stride(m),
            });
        }

        let init = T::lit(INIT_BLEND_WEIGHT);
        let mut edges = Vec::with_capacity(connections.edges().len());
        for &(from, to) in connections.edges() {
            let weight = store.insert(format!("short.{from}to{to}"), Tensor::scalar(init))?;
            edges.push(Edge { from, to, weight });
        }
        let mut fusion = Vec::with_capacity(NUM_SIDES);
        for m in 1..=NUM_SIDES {
            fusion.push(store.insert(format!("fuse.{m}"), Tensor::scalar(init))?);
        }
        let net = Self {
            config: config.clone(),
            connections,
            store,
            backbone,
            heads,
            edges,
            fusion: fusion.try_into().expect("six fusion weights"),
        };
        log::debug!("built network with {} parameters", net.parameter_count());
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn connections(&self) -> &ShortConnectionGraph {
        &self.connections
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn fusion_ids(&self) -> [ParamId; NUM_SIDES] {
        self.fusion
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.count()
    }

    /// Current fusion weights `f₁..f₆`.
    pub fn fusion_weights(&self) -> [T; NUM_SIDES] {
        self.fusion.map(|id| self.store.get(id).item())
    }

    pub fn set_short_weight(&mut self, from: usize, to: usize, value: T) -> Result<()> {
        let edge = self
            .edges
            .iter()
            .find(|e| e.from == from && e.to == to)
            .ok_or_else(|| Error::Config(format!("no short connection ({from}, {to})")))?;
        self.store.get_mut(edge.weight).data_mut()[0] = value;
        Ok(())
    }

    /// Same architecture with parameters converted to `U`.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            connections: self.connections.clone(),
            store: self.store.cast(),
            backbone: self.backbone.clone(),
            heads: self.heads.clone(),
            edges: self.edges.clone(),
            fusion: self.fusion,
        }
    }

    pub fn check_input(image: &Tensor<T>) -> Result<()> {
        let [n, c, h, w] = image.shape();
        if n != 1 || c != 3 {
            return Err(Error::Input(format!(
                "expected a single 3-channel image, got shape {:?}",
                image.shape()
            )));
        }
        if h == 0 || w == 0 || h % INPUT_MULTIPLE != 0 || w % INPUT_MULTIPLE != 0 {
            return Err(Error::Input(format!(
                "image is {h}×{w}; spatial dims must be positive multiples of {INPUT_MULTIPLE} (pad the input first)"
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `g` and returns the side-output handles.
    pub fn forward_graph(&self, g: &mut Graph<T>, image: &Tensor<T>) -> Result<SideVars> {
        self.forward_graph_with(g, &self.store, image)
    }

    /// As [`Network::forward_graph`] but reading parameters from `store`,
    /// which must have this network's layout (e.g. a perturbed copy).
    pub fn forward_graph_with(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        image: &Tensor<T>,
    ) -> Result<SideVars> {
        Self::check_input(image)?;
        if store.len() != self.store.len() {
            return Err(Error::Config(format!(
                "parameter store has {} entries, network expects {}",
                store.len(),
                self.store.len()
            )));
        }
        let mut x = g.input(image.clone());
        let mut taps = Vec::with_capacity(NUM_SIDES);
        for (s, stage) in self.backbone.iter().enumerate() {
            if s > 0 {
                x = g.maxpool2d(x)?;
            }
            for layer in stage {
                let y = layer.apply(g, store, x)?;
                x = g.relu(y);
            }
            taps.push(x);
        }
        taps.push(g.maxpool2d(x)?);

        let mut a_hat = Vec::with_capacity(NUM_SIDES);
        for (head, &tap) in self.heads.iter().zip(&taps) {
            let mut h = tap;
            for conv in &head.convs {
                let y = conv.apply(g, store, h)?;
                h = g.relu(y);
            }
            let score = head.score.apply(g, store, h)?;
            a_hat.push(g.bilinear_upsample(score, head.upsample)?);
        }
        let a_hat: [Var; NUM_SIDES] = a_hat.try_into().expect("six heads");

        let edge_vars: Vec<(usize, usize, Var)> = self
            .edges
            .iter()
            .map(|e| (e.from, e.to, g.param(store, e.weight)))
            .collect();
        let r_tilde = combine_side_activations(g, &a_hat, &edge_vars)?;
        let fusion = self.fusion.map(|id| g.param(store, id));
        Ok(SideVars {
            a_hat,
            r_tilde,
            fusion,
        })
    }

    /// Full forward pass with inference-time fusion (sides 2–4 only).
    pub fn forward(&self, image: &Tensor<T>) -> Result<SideActivations<T>> {
        let mut g = Graph::new();
        let vars = self.forward_graph(&mut g, image)?;
        let a_hat: Vec<_> = vars.a_hat.iter().map(|&v| g.value(v).clone()).collect();
        let r_tilde: Vec<_> = vars.r_tilde.iter().map(|&v| g.value(v).clone()).collect();
        let z_side: Vec<_> = r_tilde.iter().map(crate::ops::sigmoid_forward).collect();
        let (z_fuse, z_final) = inference_maps(&r_tilde, &z_side, &self.fusion_weights());
        Ok(SideActivations {
            a_hat,
            r_tilde,
            z_side,
            z_fuse,
            z_final,
        })
    }

    /// Final saliency map in `[0, 1]`, shape `1×1×H×W`.
    pub fn infer(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(image)?.z_final)
    }
}

/// Combines head outputs along the short connections, deepest side first:
/// `R̃⁶ = Â⁶`, `R̃ᵐ = Σ_{i→m} r_iᵐ·R̃ⁱ + Âᵐ`. `edges` holds `(from, to, weight)`.
pub fn combine_side_activations<T: Scalar>(
    g: &mut Graph<T>,
    a_hat: &[Var; NUM_SIDES],
    edges: &[(usize, usize, Var)],
) -> Result<[Var; NUM_SIDES]> {
    let mut r_tilde = *a_hat;
    for m in (1..=NUM_SIDES).rev() {
        let mut sources = Vec::new();
        let mut weights = Vec::new();
        for &(from, to, w) in edges {
            if to == m {
                if from <= m || from > NUM_SIDES {
                    return Err(Error::Config(format!(
                        "short connection ({from}, {to}) is not deeper-to-shallower"
                    )));
                }
                sources.push(r_tilde[from - 1]);
                weights.push(w);
            }
        }
        if !sources.is_empty() {
            let mixed = g.weighted_sum(&sources, &weights)?;
            r_tilde[m - 1] = g.add(mixed, a_hat[m - 1])?;
        }
    }
    Ok(r_tilde)
}

/// Inference fusion `h(Σ_{m=2..4} f_m·R̃ᵐ)` and the final map, the mean of
/// that fusion with `Z̃₂, Z̃₃, Z̃₄`. `f₁, f₅, f₆` are dropped, not renormalized.
pub fn inference_maps<T: Scalar>(
    r_tilde: &[Tensor<T>],
    z_side: &[Tensor<T>],
    fusion: &[T; NUM_SIDES],
) -> (Tensor<T>, Tensor<T>) {
    let fused = blend(&[&r_tilde[1], &r_tilde[2], &r_tilde[3]], &fusion[1..4]);
    let z_fuse = crate::ops::sigmoid_forward(&fused);
    let quarter = T::lit(0.25);
    let z_final = blend(
        &[&z_fuse, &z_side[1], &z_side[2], &z_side[3]],
        &[quarter; 4],
    );
    (z_fuse, z_final)
}
