//! The wavelet-domain fusion network.
//!
//! Three 2C-channel inputs (LDR + linearized pair per frame) pass through a
//! weight-shared encoder with two DWT levels; the deepest low-frequency
//! components are fused by an attention-gated merging module working one
//! DWT level deeper; two frequency-guided upsampling stages consume the
//! skip-connected sub-bands; a global residual from the reference frame's
//! first features feeds the output convolution.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdr::REFERENCE_FRAME;
use crate::tensor::{Conv2dSpec, Graph, NodeId, Shape, Tensor};
use crate::wavelet::{dwt2_node, idwt2_node, BandNodes, WaveletKind};

/// Negative slope of the leaky rectifier used after feature convolutions.
pub const ACT_SLOPE: f64 = 0.01;

/// Architecture and loss hyperparameters. Stored alongside every
/// checkpoint and validated on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature channels at every level.
    pub width: usize,
    /// Image channels C of each LDR frame (network inputs carry 2C).
    pub color_channels: usize,
    pub wavelet: WaveletKind,
    /// Ablation: bypass the attention masks (support frames pass unmasked).
    pub no_attention: bool,
    /// Ablation: fuse high-frequency groups by pixel mean instead of convs.
    pub avg_hf_fusion: bool,
    /// Ablation: forward all four sub-bands (not only LL) to the next
    /// encoder stage and into the merger.
    pub forward_all_bands: bool,
    /// Ablation: train without the Sobel term (training-time only).
    pub no_sobel: bool,
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 64,
            color_channels: 3,
            wavelet: WaveletKind::Haar,
            no_attention: false,
            avg_hf_fusion: false,
            forward_all_bands: false,
            no_sobel: false,
            lambda: 0.25,
            mu: 5000.0,
            gamma: 2.2,
        }
    }
}

impl ModelConfig {
    pub fn with_width(width: usize) -> Self {
        ModelConfig {
            width,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.color_channels == 0 {
            return Err(Error::Config(
                "width and color_channels must be positive".into(),
            ));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.mu <= 0.0 || self.gamma <= 0.0 {
            return Err(Error::Config(format!(
                "mu and gamma must be positive, got mu={} gamma={}",
                self.mu, self.gamma
            )));
        }
        Ok(())
    }

    /// The effective Sobel weight: zero when the ablation disables it.
    pub fn effective_lambda(&self) -> f64 {
        if self.no_sobel {
            0.0
        } else {
            self.lambda
        }
    }

    /// Channel count of the tensors entering the merging module.
    fn merge_channels(&self) -> usize {
        if self.forward_all_bands {
            4 * self.width
        } else {
            self.width
        }
    }
}

/// Ordered, named parameter store. Iteration order is the architecture
/// definition order and stable across runs.
#[derive(Clone, Debug)]
pub struct ModelParams {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    fn with_capacity(n: usize) -> Self {
        ModelParams {
            names: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            index: HashMap::with_capacity(n),
        }
    }

    fn push(&mut self, name: String, value: Tensor) {
        debug_assert!(!self.index.contains_key(&name), "duplicate param {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?;
        if self.values[i].shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter '{name}' has shape {} but got {}",
                self.values[i].shape(),
                value.shape()
            )));
        }
        self.values[i] = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn audit_finite(&self) -> Result<()> {
        for (name, t) in self.iter() {
            t.audit_finite(name)?;
        }
        Ok(())
    }

    /// Rebuilds a parameter store from (name, tensor) records, checking
    /// names and shapes against what `cfg` defines.
    pub fn from_records(cfg: &ModelConfig, records: Vec<(String, Tensor)>) -> Result<Self> {
        let specs = parameter_specs(cfg);
        if records.len() != specs.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters but the architecture defines {}",
                records.len(),
                specs.len()
            )));
        }
        let by_name: HashMap<&str, &Shape> = specs.iter().map(|(n, s)| (n.as_str(), s)).collect();
        let mut params = ModelParams::with_capacity(specs.len());
        for (name, tensor) in records {
            match by_name.get(name.as_str()) {
                None => {
                    return Err(Error::Config(format!(
                        "checkpoint parameter '{name}' is not part of this architecture"
                    )))
                }
                Some(&&shape) if shape != tensor.shape() => {
                    return Err(Error::Shape(format!(
                        "parameter '{name}': checkpoint shape {} vs architecture {shape}",
                        tensor.shape()
                    )));
                }
                _ => params.push(name, tensor),
            }
        }
        Ok(params)
    }
}

fn conv_spec(name: &str, out_ch: usize, in_ch: usize) -> [(String, Shape); 2] {
    [
        (format!("{name}.weight"), Shape::new(out_ch, in_ch, 3, 3)),
        (format!("{name}.bias"), Shape::new(1, out_ch, 1, 1)),
    ]
}

/// The full (name, shape) parameter list implied by a config. Ordering is
/// the single source of truth for checkpoints and optimizer state.
pub fn parameter_specs(cfg: &ModelConfig) -> Vec<(String, Shape)> {
    let w = cfg.width;
    let m = cfg.merge_channels();
    let enc2_in = if cfg.forward_all_bands { 4 * w } else { w };
    let mut specs = Vec::new();
    let mut push = |pair: [(String, Shape); 2]| specs.extend(pair);

    push(conv_spec("enc.conv1", w, 2 * cfg.color_channels));
    push(conv_spec("enc.conv2", w, enc2_in));

    if !cfg.no_attention {
        for frame in ["att1", "att3"] {
            push(conv_spec(&format!("merge.{frame}.conv1"), m, 2 * m));
            push(conv_spec(&format!("merge.{frame}.conv2"), m, m));
        }
    }
    push(conv_spec("merge.fuse", w, 3 * m));
    for k in 1..=9 {
        push(conv_spec(&format!("merge.res{k}.conv1"), w, w));
        push(conv_spec(&format!("merge.res{k}.conv2"), w, w));
    }

    for tag in ["fgu2", "fgu1"] {
        if !cfg.no_attention {
            for frame in ["att1", "att3"] {
                push(conv_spec(&format!("{tag}.{frame}.conv1"), w, 2 * w));
                push(conv_spec(&format!("{tag}.{frame}.conv2"), w, w));
            }
        }
        if !cfg.avg_hf_fusion {
            for group in ["lh", "hl", "hh"] {
                push(conv_spec(&format!("{tag}.{group}.conv1"), w, 3 * w));
                push(conv_spec(&format!("{tag}.{group}.conv2"), w, w));
            }
        }
        push(conv_spec(&format!("{tag}.ll_fuse"), w, 4 * w));
        push(conv_spec(&format!("{tag}.squeeze"), w, w));
    }

    push(conv_spec("out", cfg.color_channels, w));
    specs
}

/// Deterministic parameter initialization: fan-in-scaled normal weights,
/// zero biases, and zero weights for the closing convolution of every
/// residual block so each block starts as the identity.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let specs = parameter_specs(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::with_capacity(specs.len());
    for (name, shape) in specs {
        let is_bias = name.ends_with(".bias");
        let zero_init = is_bias || (name.contains(".res") && name.contains("conv2"));
        let tensor = if zero_init {
            Tensor::zeros(shape)
        } else {
            let fan_in = shape.channels * shape.height * shape.width;
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is positive");
            Tensor::from_fn(shape, |_, _, _, _| normal.sample(&mut rng))
        };
        params.push(name, tensor);
    }
    Ok(params)
}

/// Parameter leaves bound into one graph for a single forward pass.
pub struct ParamBinding<'p> {
    params: &'p ModelParams,
    nodes: Vec<NodeId>,
}

impl<'p> ParamBinding<'p> {
    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.params
            .index
            .get(name)
            .map(|&i| self.nodes[i])
            .ok_or_else(|| Error::Config(format!("parameter '{name}' is not bound")))
    }

    pub fn node_ids(&self) -> &[NodeId] {
        &self.nodes
    }
}

/// Inserts every parameter as a graph leaf. `trainable` controls whether
/// gradients flow to them.
pub fn bind_params<'p>(
    g: &mut Graph,
    params: &'p ModelParams,
    trainable: bool,
) -> Result<ParamBinding<'p>> {
    let mut nodes = Vec::with_capacity(params.len());
    for (_, tensor) in params.iter() {
        nodes.push(g.leaf(tensor.clone(), trainable)?);
    }
    Ok(ParamBinding { params, nodes })
}

fn conv(g: &mut Graph, x: NodeId, bind: &ParamBinding, name: &str) -> Result<NodeId> {
    let w = bind.node(&format!("{name}.weight"))?;
    let b = bind.node(&format!("{name}.bias"))?;
    g.conv2d(x, w, b, Conv2dSpec::same3x3())
}

fn conv_act(g: &mut Graph, x: NodeId, bind: &ParamBinding, name: &str) -> Result<NodeId> {
    let y = conv(g, x, bind, name)?;
    g.leaky_relu(y, ACT_SLOPE)
}

/// Per-frame encoder results kept for skip connections and merging.
pub struct EncoderOutput {
    /// Reference frame's post-conv1 features (global residual source).
    pub ref_features: NodeId,
    /// Level-1 bands per frame, at half resolution.
    pub level1: [BandNodes; 3],
    /// Level-2 bands per frame, at quarter resolution.
    pub level2: [BandNodes; 3],
    /// Per-frame tensors entering the merging module (deepest LL, or the
    /// full band stack under the all-bands ablation).
    pub merge_input: [NodeId; 3],
}

fn check_encode_input(shapes: [Shape; 3], cfg: &ModelConfig) -> Result<()> {
    let first = shapes[0];
    for s in shapes {
        if s != first {
            return Err(Error::Shape(format!("frame shapes differ: {s} vs {first}")));
        }
    }
    if first.channels != 2 * cfg.color_channels {
        return Err(Error::Shape(format!(
            "expected {} input channels (LDR + linearized), got {}",
            2 * cfg.color_channels,
            first.channels
        )));
    }
    if first.height % 8 != 0 || first.width % 8 != 0 || first.height == 0 || first.width == 0 {
        return Err(Error::Geometry(format!(
            "spatial extents must be positive multiples of 8, got {first}"
        )));
    }
    Ok(())
}

/// Runs the shared encoder over the three frames.
pub fn encode(
    g: &mut Graph,
    inputs: [NodeId; 3],
    bind: &ParamBinding,
    cfg: &ModelConfig,
) -> Result<EncoderOutput> {
    check_encode_input(inputs.map(|n| g.shape(n)), cfg)?;
    let mut ref_features = None;
    let mut level1 = Vec::with_capacity(3);
    let mut level2 = Vec::with_capacity(3);
    let mut merge_input = Vec::with_capacity(3);

    for (i, &input) in inputs.iter().enumerate() {
        let f1 = conv_act(g, input, bind, "enc.conv1")?;
        if i == REFERENCE_FRAME {
            ref_features = Some(f1);
        }
        let b1 = dwt2_node(g, f1, cfg.wavelet)?;
        let next = if cfg.forward_all_bands {
            g.concat_channels(&[b1.ll, b1.lh, b1.hl, b1.hh])?
        } else {
            b1.ll
        };
        let f2 = conv_act(g, next, bind, "enc.conv2")?;
        let b2 = dwt2_node(g, f2, cfg.wavelet)?;
        let deepest = if cfg.forward_all_bands {
            g.concat_channels(&[b2.ll, b2.lh, b2.hl, b2.hh])?
        } else {
            b2.ll
        };
        level1.push(b1);
        level2.push(b2);
        merge_input.push(deepest);
    }

    Ok(EncoderOutput {
        ref_features: ref_features.expect("reference frame visited"),
        level1: [level1[0], level1[1], level1[2]],
        level2: [level2[0], level2[1], level2[2]],
        merge_input: [merge_input[0], merge_input[1], merge_input[2]],
    })
}

/// Attention mask in (0, 1): conv -> activation -> conv -> sigmoid over the
/// concatenated reference and support features.
pub fn attention_mask(
    g: &mut Graph,
    reference: NodeId,
    support: NodeId,
    bind: &ParamBinding,
    prefix: &str,
) -> Result<NodeId> {
    if g.shape(reference) != g.shape(support) {
        return Err(Error::Shape(format!(
            "attention_mask: reference {} vs support {}",
            g.shape(reference),
            g.shape(support)
        )));
    }
    let cat = g.concat_channels(&[reference, support])?;
    let hidden = conv_act(g, cat, bind, &format!("{prefix}.conv1"))?;
    let logits = conv(g, hidden, bind, &format!("{prefix}.conv2"))?;
    g.sigmoid(logits)
}

/// Residual stack: `n` blocks of conv -> activation -> conv with additive
/// skip. Blocks whose closing conv is zero-initialized start as identity.
pub fn residual_stack(
    g: &mut Graph,
    mut x: NodeId,
    bind: &ParamBinding,
    prefix: &str,
    blocks: usize,
) -> Result<NodeId> {
    for k in 1..=blocks {
        let h = conv_act(g, x, bind, &format!("{prefix}.res{k}.conv1"))?;
        let h = conv(g, h, bind, &format!("{prefix}.res{k}.conv2"))?;
        x = g.add(x, h)?;
    }
    Ok(x)
}

fn masked_supports(
    g: &mut Graph,
    frames: [NodeId; 3],
    bind: &ParamBinding,
    cfg: &ModelConfig,
    prefix: &str,
) -> Result<(NodeId, NodeId)> {
    if cfg.no_attention {
        return Ok((frames[0], frames[2]));
    }
    let m1 = attention_mask(g, frames[1], frames[0], bind, &format!("{prefix}.att1"))?;
    let m3 = attention_mask(g, frames[1], frames[2], bind, &format!("{prefix}.att3"))?;
    Ok((g.mul(m1, frames[0])?, g.mul(m3, frames[2])?))
}

/// Attention-gated fusion of the three deepest low-frequency components,
/// with one further DWT level and the residual stack in between.
pub fn merge(
    g: &mut Graph,
    inputs: [NodeId; 3],
    bind: &ParamBinding,
    cfg: &ModelConfig,
) -> Result<NodeId> {
    let (s1, s3) = masked_supports(g, inputs, bind, cfg, "merge")?;
    let cat = g.concat_channels(&[s1, inputs[1], s3])?;
    let fused = conv_act(g, cat, bind, "merge.fuse")?;
    let b3 = dwt2_node(g, fused, cfg.wavelet)?;
    let deep = residual_stack(g, b3.ll, bind, "merge", 9)?;
    idwt2_node(
        g,
        &BandNodes {
            ll: deep,
            lh: b3.lh,
            hl: b3.hl,
            hh: b3.hh,
        },
        cfg.wavelet,
    )
}

/// Frequency-guided upsampling: fuses per-frame sub-bands groupwise, gates
/// the low-frequency side with attention, reconstructs via IDWT at doubled
/// resolution and squeezes with one convolution.
pub fn fgu(
    g: &mut Graph,
    bands: &[BandNodes; 3],
    fused_below: NodeId,
    bind: &ParamBinding,
    cfg: &ModelConfig,
    tag: &str,
) -> Result<NodeId> {
    if g.shape(fused_below) != g.shape(bands[0].ll) {
        return Err(Error::Shape(format!(
            "fgu {tag}: fused input {} does not match band shape {}",
            g.shape(fused_below),
            g.shape(bands[0].ll)
        )));
    }

    let fuse_group = |g: &mut Graph, parts: [NodeId; 3], group: &str| -> Result<NodeId> {
        if cfg.avg_hf_fusion {
            let s = g.add(parts[0], parts[1])?;
            let s = g.add(s, parts[2])?;
            g.scale(s, 1.0 / 3.0)
        } else {
            let cat = g.concat_channels(&parts)?;
            let h = conv_act(g, cat, bind, &format!("{tag}.{group}.conv1"))?;
            conv_act(g, h, bind, &format!("{tag}.{group}.conv2"))
        }
    };
    let lh = fuse_group(g, [bands[0].lh, bands[1].lh, bands[2].lh], "lh")?;
    let hl = fuse_group(g, [bands[0].hl, bands[1].hl, bands[2].hl], "hl")?;
    let hh = fuse_group(g, [bands[0].hh, bands[1].hh, bands[2].hh], "hh")?;

    let lls = [bands[0].ll, bands[1].ll, bands[2].ll];
    let (s1, s3) = masked_supports(g, lls, bind, cfg, tag)?;
    let cat = g.concat_channels(&[s1, lls[1], s3, fused_below])?;
    let ll = conv_act(g, cat, bind, &format!("{tag}.ll_fuse"))?;

    let up = idwt2_node(g, &BandNodes { ll, lh, hl, hh }, cfg.wavelet)?;
    conv_act(g, up, bind, &format!("{tag}.squeeze"))
}

/// Full forward pass from preprocessed inputs to the predicted HDR image
/// (unclamped; clamp at zero before tone mapping or metrics).
pub fn forward(
    g: &mut Graph,
    inputs: [NodeId; 3],
    bind: &ParamBinding,
    cfg: &ModelConfig,
) -> Result<NodeId> {
    let enc = encode(g, inputs, bind, cfg)?;
    let fused2 = merge(g, enc.merge_input, bind, cfg)?;
    let f1 = fgu(g, &enc.level2, fused2, bind, cfg, "fgu2")?;
    let f0 = fgu(g, &enc.level1, f1, bind, cfg, "fgu1")?;
    let pre = g.add(f0, enc.ref_features)?;
    conv(g, pre, bind, "out")
}

/// Convenience inference entry point: binds parameters untracked, runs the
/// forward pass and returns the predicted HDR tensor.
pub fn predict(params: &ModelParams, cfg: &ModelConfig, inputs: &[Tensor; 3]) -> Result<Tensor> {
    let mut g = Graph::new();
    let bind = bind_params(&mut g, params, false)?;
    let nodes = [
        g.leaf(inputs[0].clone(), false)?,
        g.leaf(inputs[1].clone(), false)?,
        g.leaf(inputs[2].clone(), false)?,
    ];
    let out = forward(&mut g, nodes, &bind, cfg)?;
    Ok(g.value(out).clone())
}

/// Full-frame inference on a bracket: builds the 2C-channel inputs, pads
/// to a multiple of 8 by edge replication, runs the network and crops the
/// prediction back. Output is clamped at zero (linear radiance domain).
pub fn predict_sample(
    params: &ModelParams,
    cfg: &ModelConfig,
    sample: &crate::hdr::BracketSample,
) -> Result<Tensor> {
    let inputs = crate::hdr::build_input(sample, cfg.gamma)?;
    let original = sample.ldr[0].shape();
    let padded = [
        crate::data::pad_to_multiple(&inputs[0], 8),
        crate::data::pad_to_multiple(&inputs[1], 8),
        crate::data::pad_to_multiple(&inputs[2], 8),
    ];
    let pred = predict(params, cfg, &padded)?;
    let cropped = crate::data::crop_to(&pred, original.height, original.width);
    Ok(cropped.map(|v| v.max(0.0)))
}
