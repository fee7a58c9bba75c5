//! Residual MLP over tabular feature vectors, with an optional 1-d
//! convolutional stem, full manual backprop, per-group freezing for
//! fine-tuning, and a small binary checkpoint format.
//!
//! Parameter groups are named `conv_stem` (when present), `hidden0`,
//! `hidden1`, ... and `output`, in forward order. Initialization draws
//! every weight from `U(-1, 1) * sqrt(2 / fan_in)` out of a single
//! `ChaCha8Rng` stream seeded once, walking groups in forward order and
//! each weight matrix in row-major order; biases start at zero.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stem convolution kernel width.
pub const CONV_KERNEL: usize = 5;
/// Stem convolution stride.
pub const CONV_STRIDE: usize = 2;
/// Default stem output channels.
pub const STEM_CHANNELS_DEFAULT: usize = 4;

const MAGIC: &[u8; 4] = b"FLMD";
const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input dim and class count must be positive, got {input_dim} and {n_classes}")]
    BadDims { input_dim: usize, n_classes: usize },
    #[error("hidden widths must be positive")]
    ZeroWidth,
    #[error("conv stem needs at least {kernel} input features, got {dim}")]
    ConvTooSmall { dim: usize, kernel: usize },
    #[error("stem_channels must be positive")]
    ZeroChannels,
    #[error("no parameter group named {0}")]
    UnknownGroup(String),
    #[error("input has {got} features, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("gradient shape mismatch")]
    GradShape,
    #[error("checkpoint io for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u8),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Architecture knobs. Input width and class count come from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_true")]
    pub residual: bool,
    #[serde(default)]
    pub conv_stem: bool,
    #[serde(default = "default_stem_channels")]
    pub stem_channels: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_true() -> bool {
    true
}

fn default_stem_channels() -> usize {
    STEM_CHANNELS_DEFAULT
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            residual: true,
            conv_stem: false,
            stem_channels: STEM_CHANNELS_DEFAULT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum LayerKind {
    /// 1 input channel, `kernel`/`stride` fixed; weight rows are output
    /// channels, columns are kernel taps. `out_w` is the per-channel
    /// output width.
    Conv { out_w: usize },
    /// `relu(x W + b)`, plus `x` itself when `residual` is set (widths
    /// match).
    Hidden { residual: bool },
    /// Plain linear head.
    Output,
}

#[derive(Debug, Clone)]
struct Layer {
    name: String,
    kind: LayerKind,
    w: Array2<f64>,
    b: Array1<f64>,
    trainable: bool,
}

impl Layer {
    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { .. } => CONV_KERNEL,
            _ => self.w.nrows(),
        }
    }
}

/// Gradients in the same group order as the model.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    groups: Vec<(Array2<f64>, Array1<f64>)>,
}

impl ModelGrads {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Weight and bias gradients of group `i`.
    pub fn group(&self, i: usize) -> Option<(&Array2<f64>, &Array1<f64>)> {
        self.groups.get(i).map(|(w, b)| (w, b))
    }

    pub fn group_mut(&mut self, i: usize) -> Option<(&mut Array2<f64>, &mut Array1<f64>)> {
        self.groups.get_mut(i).map(|(w, b)| (w, b))
    }

    /// Zeroes every entry, keeping the shapes.
    pub fn clear(&mut self) {
        for (w, b) in &mut self.groups {
            w.fill(0.0);
            b.fill(0.0);
        }
    }
}

/// Per-layer activations captured during the forward pass.
pub struct ForwardCache {
    /// (input to the layer, pre-activation output) per layer.
    taps: Vec<(Array2<f64>, Array2<f64>)>,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    spec: ModelSpec,
    input_dim: usize,
    n_classes: usize,
    layers: Vec<Layer>,
    class_names: Option<Vec<String>>,
}

fn draw_weights(rng: &mut ChaCha8Rng, w: &mut Array2<f64>, fan_in: usize) {
    let scale = (2.0 / fan_in as f64).sqrt();
    for v in w.iter_mut() {
        *v = rng.random_range(-1.0..1.0) * scale;
    }
}

impl Mlp {
    pub fn init(
        spec: &ModelSpec,
        input_dim: usize,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if input_dim == 0 || n_classes == 0 {
            return Err(ModelError::BadDims { input_dim, n_classes });
        }
        if spec.hidden.iter().any(|&h| h == 0) {
            return Err(ModelError::ZeroWidth);
        }

        let mut layers = Vec::new();
        let mut width = input_dim;
        if spec.conv_stem {
            if spec.stem_channels == 0 {
                return Err(ModelError::ZeroChannels);
            }
            if input_dim < CONV_KERNEL {
                return Err(ModelError::ConvTooSmall { dim: input_dim, kernel: CONV_KERNEL });
            }
            let out_w = (input_dim - CONV_KERNEL) / CONV_STRIDE + 1;
            layers.push(Layer {
                name: "conv_stem".into(),
                kind: LayerKind::Conv { out_w },
                w: Array2::zeros((spec.stem_channels, CONV_KERNEL)),
                b: Array1::zeros(spec.stem_channels),
                trainable: true,
            });
            width = spec.stem_channels * out_w;
        }
        for (i, &h) in spec.hidden.iter().enumerate() {
            layers.push(Layer {
                name: format!("hidden{i}"),
                kind: LayerKind::Hidden { residual: spec.residual && width == h },
                w: Array2::zeros((width, h)),
                b: Array1::zeros(h),
                trainable: true,
            });
            width = h;
        }
        layers.push(Layer {
            name: "output".into(),
            kind: LayerKind::Output,
            w: Array2::zeros((width, n_classes)),
            b: Array1::zeros(n_classes),
            trainable: true,
        });

        let mut model =
            Self { spec: spec.clone(), input_dim, n_classes, layers, class_names: None };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let fan_in = layer.fan_in();
            draw_weights(&mut rng, &mut layer.w, fan_in);
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Class name per output column, when known. Recorded so datasets
    /// loaded later can renumber their labels to this model's id space.
    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn set_class_names(&mut self, names: Vec<String>) -> Result<(), ModelError> {
        if names.len() != self.n_classes {
            return Err(ModelError::BadDims { input_dim: self.input_dim, n_classes: names.len() });
        }
        self.class_names = Some(names);
        Ok(())
    }

    /// Group names in forward order.
    pub fn group_names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }

    pub fn is_trainable(&self, group: &str) -> Result<bool, ModelError> {
        self.layers
            .iter()
            .find(|l| l.name == group)
            .map(|l| l.trainable)
            .ok_or_else(|| ModelError::UnknownGroup(group.into()))
    }

    pub fn set_trainable(&mut self, group: &str, flag: bool) -> Result<(), ModelError> {
        let layer = self
            .layers
            .iter_mut()
            .find(|l| l.name == group)
            .ok_or_else(|| ModelError::UnknownGroup(group.into()))?;
        layer.trainable = flag;
        Ok(())
    }

    /// Freezes everything, then re-enables the named groups.
    pub fn set_trainable_only(&mut self, groups: &[&str]) -> Result<(), ModelError> {
        for name in groups {
            // validate up front so a bad name cannot half-apply
            self.is_trainable(name)?;
        }
        for layer in &mut self.layers {
            layer.trainable = groups.contains(&layer.name.as_str());
        }
        Ok(())
    }

    /// Redraws one group's weights from a fresh stream and zeroes its bias.
    pub fn reinit_group(&mut self, group: &str, seed: u64) -> Result<(), ModelError> {
        let layer = self
            .layers
            .iter_mut()
            .find(|l| l.name == group)
            .ok_or_else(|| ModelError::UnknownGroup(group.into()))?;
        let fan_in = layer.fan_in();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        draw_weights(&mut rng, &mut layer.w, fan_in);
        layer.b.fill(0.0);
        Ok(())
    }

    fn conv_forward(layer: &Layer, out_w: usize, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let n = x.nrows();
        let channels = layer.w.nrows();
        let mut pre = Array2::<f64>::zeros((n, channels * out_w));
        for r in 0..n {
            for ch in 0..channels {
                for t in 0..out_w {
                    let mut acc = layer.b[ch];
                    for j in 0..CONV_KERNEL {
                        acc += layer.w[[ch, j]] * x[[r, CONV_STRIDE * t + j]];
                    }
                    pre[[r, ch * out_w + t]] = acc;
                }
            }
        }
        pre
    }

    fn forward_inner(
        &self,
        x: ArrayView2<'_, f64>,
        mut taps: Option<&mut Vec<(Array2<f64>, Array2<f64>)>>,
    ) -> Result<Array2<f64>, ModelError> {
        if x.ncols() != self.input_dim {
            return Err(ModelError::InputDim { expected: self.input_dim, got: x.ncols() });
        }
        let mut cur = x.to_owned();
        for layer in &self.layers {
            let pre = match layer.kind {
                LayerKind::Conv { out_w } => Self::conv_forward(layer, out_w, &cur.view()),
                _ => cur.dot(&layer.w) + &layer.b,
            };
            let out = match layer.kind {
                LayerKind::Output => pre.clone(),
                LayerKind::Hidden { residual: true } => pre.mapv(|v| v.max(0.0)) + &cur,
                _ => pre.mapv(|v| v.max(0.0)),
            };
            if let Some(taps) = taps.as_deref_mut() {
                taps.push((cur, pre));
            }
            cur = out;
        }
        Ok(cur)
    }

    /// Logits for a batch.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ModelError> {
        self.forward_inner(x, None)
    }

    /// Logits plus the activations backward needs.
    pub fn forward_cached(
        &self,
        x: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, ForwardCache), ModelError> {
        let mut taps = Vec::with_capacity(self.layers.len());
        let logits = self.forward_inner(x, Some(&mut taps))?;
        Ok((logits, ForwardCache { taps }))
    }

    /// Backpropagates a logit gradient into per-group parameter gradients.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_logits: ArrayView2<'_, f64>,
    ) -> Result<ModelGrads, ModelError> {
        if cache.taps.len() != self.layers.len() {
            return Err(ModelError::GradShape);
        }
        let last = cache.taps.last().expect("at least the output layer");
        if grad_logits.dim() != last.1.dim() {
            return Err(ModelError::GradShape);
        }

        let mut groups: Vec<(Array2<f64>, Array1<f64>)> = self
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.len())))
            .collect();

        let mut gout = grad_logits.to_owned();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (x_in, pre) = &cache.taps[idx];
            match layer.kind {
                LayerKind::Conv { out_w } => {
                    let gpre = &gout * &pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    let (dw, db) = &mut groups[idx];
                    let n = x_in.nrows();
                    let channels = layer.w.nrows();
                    let mut gx = Array2::<f64>::zeros(x_in.dim());
                    for r in 0..n {
                        for ch in 0..channels {
                            for t in 0..out_w {
                                let g = gpre[[r, ch * out_w + t]];
                                if g == 0.0 {
                                    continue;
                                }
                                db[ch] += g;
                                for j in 0..CONV_KERNEL {
                                    dw[[ch, j]] += g * x_in[[r, CONV_STRIDE * t + j]];
                                    gx[[r, CONV_STRIDE * t + j]] += g * layer.w[[ch, j]];
                                }
                            }
                        }
                    }
                    gout = gx;
                }
                LayerKind::Hidden { residual } => {
                    let gpre = &gout * &pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    let (dw, db) = &mut groups[idx];
                    *dw = x_in.t().dot(&gpre);
                    *db = gpre.sum_axis(Axis(0));
                    let mut gx = gpre.dot(&layer.w.t());
                    if residual {
                        gx += &gout;
                    }
                    gout = gx;
                }
                LayerKind::Output => {
                    let (dw, db) = &mut groups[idx];
                    *dw = x_in.t().dot(&gout);
                    *db = gout.sum_axis(Axis(0));
                    gout = gout.dot(&layer.w.t());
                }
            }
        }
        Ok(ModelGrads { groups })
    }

    /// One SGD step over the trainable groups only.
    pub fn sgd_step(&mut self, grads: &ModelGrads, lr: f64) -> Result<(), ModelError> {
        if grads.groups.len() != self.layers.len() {
            return Err(ModelError::GradShape);
        }
        for (layer, (dw, db)) in self.layers.iter_mut().zip(&grads.groups) {
            if !layer.trainable {
                continue;
            }
            if dw.dim() != layer.w.dim() || db.len() != layer.b.len() {
                return Err(ModelError::GradShape);
            }
            layer.w.scaled_add(-lr, dw);
            layer.b.scaled_add(-lr, db);
        }
        Ok(())
    }

    // ── checkpointing ────────────────────────────────────────────────────

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let wrap = |source| ModelError::Io { path: path.display().to_string(), source };
        let header = Header {
            input_dim: self.input_dim,
            n_classes: self.n_classes,
            spec: self.spec.clone(),
            trainable: self.layers.iter().map(|l| l.trainable).collect(),
            class_names: self.class_names.clone(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| ModelError::Corrupt(format!("header encode: {e}")))?;

        let file = File::create(path).map_err(wrap)?;
        let mut out = BufWriter::new(file);
        out.write_all(MAGIC).map_err(wrap)?;
        out.write_all(&[FORMAT_VERSION]).map_err(wrap)?;
        out.write_all(&(header_json.len() as u32).to_le_bytes()).map_err(wrap)?;
        out.write_all(&header_json).map_err(wrap)?;
        for layer in &self.layers {
            for v in layer.w.iter() {
                out.write_all(&v.to_le_bytes()).map_err(wrap)?;
            }
            for v in layer.b.iter() {
                out.write_all(&v.to_le_bytes()).map_err(wrap)?;
            }
        }
        out.flush().map_err(wrap)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let wrap = |source| ModelError::Io { path: path.display().to_string(), source };
        let file = File::open(path).map_err(wrap)?;
        let mut inp = BufReader::new(file);

        let mut magic = [0u8; 4];
        inp.read_exact(&mut magic).map_err(wrap)?;
        if &magic != MAGIC {
            return Err(ModelError::BadMagic);
        }
        let mut version = [0u8; 1];
        inp.read_exact(&mut version).map_err(wrap)?;
        if version[0] != FORMAT_VERSION {
            return Err(ModelError::BadVersion(version[0]));
        }
        let mut len4 = [0u8; 4];
        inp.read_exact(&mut len4).map_err(wrap)?;
        let mut header_json = vec![0u8; u32::from_le_bytes(len4) as usize];
        inp.read_exact(&mut header_json).map_err(wrap)?;
        let header: Header = serde_json::from_slice(&header_json)
            .map_err(|e| ModelError::Corrupt(format!("header decode: {e}")))?;

        let mut model = Mlp::init(&header.spec, header.input_dim, header.n_classes, 0)?;
        model.class_names = header.class_names;
        if header.trainable.len() != model.layers.len() {
            return Err(ModelError::Corrupt(format!(
                "{} trainable flags for {} groups",
                header.trainable.len(),
                model.layers.len()
            )));
        }
        let mut buf = [0u8; 8];
        for (layer, &flag) in model.layers.iter_mut().zip(&header.trainable) {
            layer.trainable = flag;
            for v in layer.w.iter_mut() {
                inp.read_exact(&mut buf).map_err(|_| ModelError::Corrupt("truncated data".into()))?;
                *v = f64::from_le_bytes(buf);
            }
            for v in layer.b.iter_mut() {
                inp.read_exact(&mut buf).map_err(|_| ModelError::Corrupt("truncated data".into()))?;
                *v = f64::from_le_bytes(buf);
            }
        }
        let mut extra = [0u8; 1];
        match inp.read(&mut extra) {
            Ok(0) => Ok(model),
            Ok(_) => Err(ModelError::Corrupt("trailing bytes".into())),
            Err(source) => Err(wrap(source)),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    input_dim: usize,
    n_classes: usize,
    spec: ModelSpec,
    trainable: Vec<bool>,
    #[serde(default)]
    class_names: Option<Vec<String>>,
}
