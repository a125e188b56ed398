//! The segmentation network.
//!
//! ```text
//! image ──CNN_1──────────────────────────► I_embed ─┬──────────────┐
//! expression ─encode─► R_embed ─tile─► R_overlay ──┤              │
//! elements ─DNN─► E_i ─attention(R_embed)─► project ─CNN_2─► E_proc┤
//!                                                  concat─CNN_3─► F ─(+)─CNN_4─► upsample ─► softmax
//! ```
//!
//! All feature maps share the grid `(H / s) × (W / s)` where `s` is the output
//! stride. The ablation switches replace the image branch or the element
//! branch by a zero map of the same shape, so every configuration keeps the
//! same parameter set.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, Axis, Gradients, Graph, Padding, ParamId, ParamStore, Var};
use crate::element::{attend_elements, element_features, embed_elements, DenseLayer, Element};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::overlay::{project_elements, tile_average_baseline};
use crate::tensor::Tensor;
use crate::text::TextEncoder;

pub const KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub output_stride: usize,
    pub d_text: usize,
    pub d_embed: usize,
    pub hash_seed: u64,
    /// Hidden widths of the element network; the last layer maps to `d_embed`.
    pub element_hidden: Vec<usize>,
    /// Number of dense layers in the shared attention projection.
    pub attention_layers: usize,
    /// Output channels of each backbone convolution. The first log2(s) use
    /// stride 2; the last entry is the image feature depth.
    pub backbone_channels: Vec<usize>,
    /// Output channels of the convolution applied to the element field map.
    pub element_channels: usize,
    /// Width of the first fusion convolution.
    pub fusion_channels: usize,
    pub use_image: bool,
    pub use_elements: bool,
    pub use_projection: bool,
    pub max_elements: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            output_stride: 4,
            d_text: crate::text::DEFAULT_DIM,
            d_embed: crate::text::DEFAULT_DIM,
            hash_seed: crate::text::DEFAULT_SEED,
            element_hidden: vec![64],
            attention_layers: 1,
            backbone_channels: vec![16, 32, 32],
            element_channels: 16,
            fusion_channels: 32,
            use_image: true,
            use_elements: true,
            use_projection: true,
            max_elements: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let s = self.output_stride;
        if s == 0 || !s.is_power_of_two() {
            return fail(format!("output stride {s} must be a power of two"));
        }
        if self.height == 0 || self.width == 0 || self.height % s != 0 || self.width % s != 0 {
            return fail(format!(
                "image {}x{} must be positive and divisible by stride {s}",
                self.height, self.width
            ));
        }
        if s.trailing_zeros() as usize > self.backbone_channels.len() {
            return fail(format!(
                "stride {s} needs {} strided backbone layers, have {}",
                s.trailing_zeros(),
                self.backbone_channels.len()
            ));
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return fail("backbone channels must be non-empty and positive".into());
        }
        if self.d_text == 0 || self.element_channels == 0 || self.fusion_channels == 0 {
            return fail("feature widths must be positive".into());
        }
        if self.element_hidden.contains(&0) {
            return fail("element hidden widths must be positive".into());
        }
        if self.d_embed != self.d_text {
            return fail(format!(
                "d_embed ({}) must equal d_text ({}) so the attention projection is shared",
                self.d_embed, self.d_text
            ));
        }
        if self.attention_layers == 0 {
            return fail("attention needs at least one layer".into());
        }
        if self.use_projection && !self.use_elements {
            return fail("use_projection requires use_elements".into());
        }
        if !self.use_image && !self.use_elements {
            return fail("at least one of use_image and use_elements must be set".into());
        }
        if self.max_elements == 0 {
            return fail("max_elements must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.output_stride, self.width / self.output_stride)
    }

    pub fn image_depth(&self) -> usize {
        *self.backbone_channels.last().expect("validated")
    }

    pub fn text_encoder(&self) -> TextEncoder {
        TextEncoder::new(self.d_text, self.hash_seed)
    }

    /// Stride of backbone layer `i`.
    pub fn backbone_stride(&self, i: usize) -> usize {
        if i < self.output_stride.trailing_zeros() as usize {
            2
        } else {
            1
        }
    }

    /// Same hyperparameters with the three ablation switches replaced.
    pub fn with_ablation(&self, use_image: bool, use_elements: bool, use_projection: bool) -> Self {
        Self {
            use_image,
            use_elements,
            use_projection,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    backbone: Vec<ConvLayer>,
    element_dnn: Vec<DenseLayer>,
    attention: Vec<DenseLayer>,
    cnn2: ConvLayer,
    cnn3: [ConvLayer; 2],
    cnn4: ConvLayer,
}

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-a..=a)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

struct Builder {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl Builder {
    fn conv(&mut self, name: &str, cin: usize, cout: usize) -> Result<ConvLayer> {
        let k2 = KERNEL * KERNEL;
        let kernel = glorot(&mut self.rng, &[KERNEL, KERNEL, cin, cout], k2 * cin, k2 * cout);
        Ok(ConvLayer {
            kernel: self.store.register(format!("{name}.kernel"), kernel)?,
            bias: self.store.register(format!("{name}.bias"), Tensor::zeros(&[cout]))?,
        })
    }

    fn dense(&mut self, name: &str, n: usize, m: usize) -> Result<DenseLayer> {
        let weights = glorot(&mut self.rng, &[n, m], n, m);
        Ok(DenseLayer {
            weights: self.store.register(format!("{name}.weights"), weights)?,
            bias: self.store.register(format!("{name}.bias"), Tensor::zeros(&[m]))?,
        })
    }
}

impl Layout {
    fn build(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut b = Builder {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut cin = 3;
        let mut backbone = Vec::new();
        for (i, &c) in config.backbone_channels.iter().enumerate() {
            backbone.push(b.conv(&format!("backbone.{i}"), cin, c)?);
            cin = c;
        }
        let mut element_dnn = Vec::new();
        let mut n = 4 + config.d_text;
        for (i, &h) in config.element_hidden.iter().enumerate() {
            element_dnn.push(b.dense(&format!("element.{i}"), n, h)?);
            n = h;
        }
        element_dnn.push(b.dense(&format!("element.{}", config.element_hidden.len()), n, config.d_embed)?);
        let attention = (0..config.attention_layers)
            .map(|i| b.dense(&format!("attention.{i}"), config.d_embed, config.d_embed))
            .collect::<Result<_>>()?;
        let d_img = config.image_depth();
        let cnn2 = b.conv("cnn2", config.d_embed, config.element_channels)?;
        let cat = config.d_text + d_img + config.element_channels;
        let cnn3 = [
            b.conv("cnn3.0", cat, config.fusion_channels)?,
            b.conv("cnn3.1", config.fusion_channels, d_img)?,
        ];
        let cnn4 = b.conv("cnn4", d_img, 2)?;
        Ok((
            Layout {
                backbone,
                element_dnn,
                attention,
                cnn2,
                cnn3,
                cnn4,
            },
            b.store,
        ))
    }
}

/// Per-pixel class probabilities (background, referred) and their logits,
/// both H × W × 2.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationOutput {
    pub probs: Tensor,
    pub logits: Tensor,
}

impl SegmentationOutput {
    pub fn height(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.probs.shape()[1]
    }

    /// Probability that pixel (row, col) is referred to.
    pub fn referred(&self, row: usize, col: usize) -> f32 {
        self.probs.at3(row, col, 1)
    }

    /// Output whose referred-class probability is `p` (row-major H × W).
    pub fn from_referred(height: usize, width: usize, p: &[f32]) -> Result<Self> {
        if p.len() != height * width {
            return Err(Error::shape("from_referred", &[height, width], &[p.len()]));
        }
        let probs: Vec<f32> = p.iter().flat_map(|&q| [1.0 - q, q]).collect();
        let logits = p
            .iter()
            .flat_map(|&q| {
                let q = q.clamp(1e-7, 1.0 - 1e-7);
                [0.0, (q / (1.0 - q)).ln()]
            })
            .collect();
        Ok(Self {
            probs: Tensor::new(vec![height, width, 2], probs)?,
            logits: Tensor::new(vec![height, width, 2], logits)?,
        })
    }
}

/// Pixel with the highest referred-class probability; ties go to the
/// smallest row, then the smallest column.
pub fn predict_pixel(output: &SegmentationOutput) -> (usize, usize) {
    let w = output.width();
    let mut best = (0usize, f32::NEG_INFINITY);
    for (i, cell) in output.probs.data().chunks_exact(2).enumerate() {
        if cell[1] > best.1 {
            best = (i, cell[1]);
        }
    }
    (best.0 / w, best.0 % w)
}

pub const DEFAULT_THRESHOLD: f32 = 0.5;

/// Pixels whose referred-class probability reaches `threshold`.
pub fn predict_mask(output: &SegmentationOutput, threshold: f32) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("predict_mask", format!("threshold {threshold} outside (0, 1)")));
    }
    let data = output
        .probs
        .data()
        .chunks_exact(2)
        .map(|c| u8::from(c[1] >= threshold))
        .collect();
    BinaryMask::new(output.height(), output.width(), data)
}

/// Handles to the intermediate maps of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Trace {
    pub image_embed: Var,
    pub expression_overlay: Var,
    pub element_field: Option<Var>,
    pub element_features: Var,
    pub fused: Var,
    pub logits_low: Var,
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct SegmentationNet {
    config: ModelConfig,
    encoder: TextEncoder,
    layout: Layout,
    params: ParamStore,
}

impl SegmentationNet {
    /// Builds the network with freshly initialized parameters from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, params) = Layout::build(&config, config.seed)?;
        Ok(Self {
            encoder: config.text_encoder(),
            config,
            layout,
            params,
        })
    }

    /// Builds the network around existing parameters, which must match the
    /// layout `config` implies in names and shapes.
    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let fresh = Self::new(config)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for ((_, n1, t1), (_, n2, t2)) in fresh.params.iter().zip(params.iter()) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(Error::Config(format!(
                    "parameter {n2:?} {:?} does not match expected {n1:?} {:?}",
                    t2.shape(),
                    t1.shape()
                )));
            }
        }
        Ok(Self { params, ..fresh })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder(&self) -> &TextEncoder {
        &self.encoder
    }

    pub fn backbone(&self) -> &[ConvLayer] {
        &self.layout.backbone
    }

    pub fn element_dnn(&self) -> &[DenseLayer] {
        &self.layout.element_dnn
    }

    pub fn attention(&self) -> &[DenseLayer] {
        &self.layout.attention
    }

    pub fn cnn2(&self) -> ConvLayer {
        self.layout.cnn2
    }

    pub fn cnn3(&self) -> [ConvLayer; 2] {
        self.layout.cnn3
    }

    pub fn cnn4(&self) -> ConvLayer {
        self.layout.cnn4
    }

    fn conv(g: &mut Graph<'_>, x: Var, layer: ConvLayer, stride: usize, relu: bool) -> Result<Var> {
        let k = g.param(layer.kernel);
        let b = g.param(layer.bias);
        let y = g.conv2d(x, k, b, stride, Padding::Same)?;
        Ok(if relu { g.relu(y) } else { y })
    }

    pub fn check_input(&self, image: &Tensor, elements: &[Element]) -> Result<()> {
        let c = &self.config;
        if image.shape() != [c.height, c.width, 3] {
            return Err(Error::shape("forward", image.shape(), &[c.height, c.width, 3]));
        }
        if elements.len() > c.max_elements {
            return Err(Error::invalid(
                "forward",
                format!("{} elements exceed the cap of {}", elements.len(), c.max_elements),
            ));
        }
        Ok(())
    }

    /// Records the full forward pass on `g` and returns the intermediate handles.
    pub fn forward_graph(
        &self,
        g: &mut Graph<'_>,
        image: &Tensor,
        elements: &[Element],
        expression: &str,
    ) -> Result<Trace> {
        self.check_input(image, elements)?;
        let c = &self.config;
        let (hf, wf) = c.grid();

        let image_embed = if c.use_image {
            let mut x = g.input(image.clone());
            for (i, layer) in self.layout.backbone.iter().enumerate() {
                x = Self::conv(g, x, *layer, c.backbone_stride(i), true)?;
            }
            x
        } else {
            g.input(Tensor::zeros(&[hf, wf, c.image_depth()]))
        };

        let r_embed = g.input(Tensor::from_vec(self.encoder.encode(expression).into_vec()));
        let expression_overlay = g.tile_spatial(r_embed, hf, wf)?;

        let (element_field, element_features_map) = if c.use_elements {
            let attended = if elements.is_empty() {
                None
            } else {
                let x = g.input(element_features(elements, &self.encoder)?);
                let e = embed_elements(g, x, &self.layout.element_dnn)?;
                Some(attend_elements(g, r_embed, e, &self.layout.attention)?.attended)
            };
            let field = if c.use_projection {
                let boxes: Vec<_> = elements.iter().map(|e| e.bbox).collect();
                project_elements(g, attended, &boxes, hf, wf, c.d_embed)?
            } else {
                tile_average_baseline(g, attended, hf, wf, c.d_embed)?
            };
            let processed = Self::conv(g, field, self.layout.cnn2, 1, true)?;
            (Some(field), processed)
        } else {
            (None, g.input(Tensor::zeros(&[hf, wf, c.element_channels])))
        };

        let cat = g.concat_depth(&[expression_overlay, image_embed, element_features_map])?;
        let f = Self::conv(g, cat, self.layout.cnn3[0], 1, true)?;
        let f = Self::conv(g, f, self.layout.cnn3[1], 1, true)?;
        let fused = g.add(image_embed, f)?;
        let logits_low = Self::conv(g, fused, self.layout.cnn4, 1, false)?;
        let logits = g.upsample_nearest(logits_low, c.output_stride)?;
        Ok(Trace {
            image_embed,
            expression_overlay,
            element_field,
            element_features: element_features_map,
            fused,
            logits_low,
            logits,
        })
    }

    pub fn forward(&self, image: &Tensor, elements: &[Element], expression: &str) -> Result<SegmentationOutput> {
        let mut g = Graph::new(&self.params);
        let trace = self.forward_graph(&mut g, image, elements, expression)?;
        let probs = g.softmax(trace.logits, Axis::Depth);
        Ok(SegmentationOutput {
            probs: g.value(probs).clone(),
            logits: g.value(trace.logits).clone(),
        })
    }

    /// Cross-entropy loss against `target` and its parameter gradients.
    pub fn loss_and_grad(
        &self,
        image: &Tensor,
        elements: &[Element],
        expression: &str,
        target: &BinaryMask,
    ) -> Result<(f32, Gradients)> {
        let mut g = Graph::new(&self.params);
        let trace = self.forward_graph(&mut g, image, elements, expression)?;
        let loss = g.cross_entropy(trace.logits, target.data())?;
        let value = g.value(loss).data()[0];
        Ok((value, g.backward(loss)?))
    }

    /// Writes the parameter checkpoint to `path` and the config as JSON to
    /// [`config_path`]`(path)`.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.params, path)?;
        let cfg_path = config_path(path);
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        fs::write(&cfg_path, json + "\n").map_err(|e| Error::io(cfg_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg_path = config_path(path);
        let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config: ModelConfig =
            serde_json::from_str(&text).map_err(|e| Error::format(&cfg_path, e.to_string()))?;
        Self::with_params(config, checkpoint::load(path)?)
    }

    /// Loads a checkpoint, refusing it unless it was saved under `expected`.
    pub fn load_with_config(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let net = Self::load(path)?;
        if net.config() != expected {
            return Err(Error::Config(format!(
                "{} was saved under a different model config",
                path.display()
            )));
        }
        Ok(net)
    }
}

/// Sidecar JSON file holding the model config of checkpoint `ckpt`.
pub fn config_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::BBox;

    fn small_config() -> ModelConfig {
        ModelConfig {
            height: 16,
            width: 16,
            d_text: 16,
            d_embed: 16,
            element_hidden: vec![8],
            backbone_channels: vec![4, 8, 8],
            element_channels: 4,
            fusion_channels: 8,
            ..ModelConfig::default()
        }
    }

    fn image(cfg: &ModelConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.height * cfg.width * 3;
        Tensor::new(vec![cfg.height, cfg.width, 3], (0..n).map(|_| rng.gen()).collect()).unwrap()
    }

    fn elements() -> Vec<Element> {
        vec![
            Element::new("send", BBox::new(0.1, 0.1, 0.4, 0.3).unwrap()),
            Element::new("menu", BBox::new(0.5, 0.6, 0.9, 0.8).unwrap()),
        ]
    }

    #[test]
    fn config_invariants() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = [
            ModelConfig { height: 62, ..ModelConfig::default() },
            ModelConfig { output_stride: 3, ..ModelConfig::default() },
            ModelConfig { output_stride: 16, ..ModelConfig::default() },
            ModelConfig::default().with_ablation(true, false, true),
            ModelConfig::default().with_ablation(false, false, false),
            ModelConfig { d_embed: 32, ..ModelConfig::default() },
        ];
        for cfg in bad {
            assert!(SegmentationNet::new(cfg).is_err());
        }
    }

    #[test]
    fn zero_parameters_give_uniform_output() {
        let cfg = small_config();
        let mut net = SegmentationNet::new(cfg.clone()).unwrap();
        let ids: Vec<_> = net.params().ids().collect();
        for id in ids {
            net.params_mut().get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let out = net.forward(&image(&cfg, 1), &elements(), "the send button").unwrap();
        assert!(out.probs.data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn output_shapes_and_normalization() {
        let cfg = small_config();
        let net = SegmentationNet::new(cfg.clone()).unwrap();
        let out = net.forward(&image(&cfg, 2), &elements(), "menu").unwrap();
        assert_eq!(out.probs.shape(), &[16, 16, 2]);
        for cell in out.probs.data().chunks(2) {
            assert!((cell[0] + cell[1] - 1.0).abs() <= 1e-6);
            assert!(cell.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn intermediate_shapes_share_grid() {
        let cfg = small_config();
        let net = SegmentationNet::new(cfg.clone()).unwrap();
        let mut g = Graph::new(net.params());
        let t = net.forward_graph(&mut g, &image(&cfg, 3), &elements(), "send").unwrap();
        assert_eq!(g.value(t.image_embed).shape(), &[4, 4, 8]);
        assert_eq!(g.value(t.expression_overlay).shape(), &[4, 4, 16]);
        assert_eq!(g.value(t.element_features).shape(), &[4, 4, 4]);
        assert_eq!(g.value(t.fused).shape(), &[4, 4, 8]);
        assert_eq!(g.value(t.logits).shape(), &[16, 16, 2]);
    }

    #[test]
    fn residual_passes_image_features_when_fusion_is_zero() {
        let cfg = small_config();
        let mut net = SegmentationNet::new(cfg.clone()).unwrap();
        let zeroed: Vec<ParamId> = net
            .cnn3()
            .iter()
            .chain(std::iter::once(&net.cnn2()))
            .flat_map(|l| [l.kernel, l.bias])
            .collect();
        for id in zeroed {
            net.params_mut().get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new(net.params());
        let t = net.forward_graph(&mut g, &image(&cfg, 4), &elements(), "send").unwrap();
        assert_eq!(g.value(t.fused).data(), g.value(t.image_embed).data());
    }

    #[test]
    fn elements_ignored_without_element_branch() {
        let cfg = small_config().with_ablation(true, false, false);
        let net = SegmentationNet::new(cfg.clone()).unwrap();
        let img = image(&cfg, 5);
        let a = net.forward(&img, &elements(), "send").unwrap();
        let b = net.forward(&img, &elements()[..1], "send").unwrap();
        let c = net.forward(&img, &[], "send").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn no_elements_still_runs() {
        let cfg = small_config();
        let net = SegmentationNet::new(cfg.clone()).unwrap();
        let out = net.forward(&image(&cfg, 6), &[], "anything").unwrap();
        assert!(out.probs.is_finite());
    }

    #[test]
    fn element_cap_and_image_shape_checked() {
        let cfg = ModelConfig { max_elements: 1, ..small_config() };
        let net = SegmentationNet::new(cfg.clone()).unwrap();
        assert!(net.forward(&image(&cfg, 7), &elements(), "x").is_err());
        assert!(net.forward(&Tensor::zeros(&[8, 8, 3]), &[], "x").is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = SegmentationNet::new(small_config()).unwrap();
        let b = SegmentationNet::new(small_config()).unwrap();
        let c = SegmentationNet::new(ModelConfig { seed: 9, ..small_config() }).unwrap();
        assert!(a.params().same_values(b.params()));
        assert!(!a.params().same_values(c.params()));
        // Biases start at zero.
        for (_, name, t) in a.params().iter() {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn predict_pixel_and_mask() {
        let mut p = vec![0.1f32; 12];
        p[7] = 0.9;
        let out = SegmentationOutput::from_referred(3, 4, &p).unwrap();
        assert_eq!(predict_pixel(&out), (1, 3));
        let uniform = SegmentationOutput::from_referred(3, 4, &[0.5; 12]).unwrap();
        assert_eq!(predict_pixel(&uniform), (0, 0));
        let hi = SegmentationOutput::from_referred(2, 2, &[0.6; 4]).unwrap();
        assert_eq!(predict_mask(&hi, 0.5).unwrap().count(), 4);
        let lo = SegmentationOutput::from_referred(2, 2, &[0.4; 4]).unwrap();
        assert_eq!(predict_mask(&lo, 0.5).unwrap().count(), 0);
        assert!(predict_mask(&lo, 1.0).is_err());
        assert!(predict_mask(&lo, 0.0).is_err());
    }

    #[test]
    fn checkpoint_requires_matching_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let net = SegmentationNet::new(small_config()).unwrap();
        net.save(&path).unwrap();
        let back = SegmentationNet::load(&path).unwrap();
        assert!(back.params().same_values(net.params()));
        assert_eq!(back.config(), net.config());
        let other = ModelConfig { seed: 1, ..small_config() };
        assert!(SegmentationNet::load_with_config(&path, &other).is_err());
        let wider = ModelConfig { fusion_channels: 6, ..small_config() };
        assert!(SegmentationNet::with_params(wider, back.params().clone()).is_err());
    }
}
