//! The detection model: adaptive feature mask, dynamic convolution,
//! attention-based temporal encoder, stacked GRU layers, LSTM layers each
//! followed by self-attention, residual joins with normalization, dropout,
//! and a sigmoid head. Every component can be toggled off for ablation.

use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::data::window::SequenceBatch;
use crate::error::{Error, Result};
use crate::layers::{
    conv1d_forward, dense_forward, gru_layer_forward, layer_norm_forward, lstm_layer_forward,
    self_attention_forward, AttentionParams, ConvParams, DenseParams, GruParams, LayerNormParams,
    LstmParams,
};
use crate::params::{ParamId, ParamStore};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "curricuids-checkpoint-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelToggles {
    pub use_feature_mask: bool,
    pub use_conv: bool,
    pub use_encoder: bool,
    pub use_self_attention: bool,
    pub use_residual: bool,
    pub use_layernorm: bool,
    pub use_dropout: bool,
}

impl Default for ModelToggles {
    fn default() -> Self {
        ModelToggles {
            use_feature_mask: true,
            use_conv: true,
            use_encoder: true,
            use_self_attention: true,
            use_residual: true,
            use_layernorm: true,
            use_dropout: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_features: usize,
    pub window: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub encoder_dim: usize,
    pub gru_layers: usize,
    pub gru_units: usize,
    pub lstm_layers: usize,
    pub lstm_units: usize,
    pub attention_dim: usize,
    pub dropout_rate: f64,
    pub layer_norm_eps: f64,
    pub toggles: ModelToggles,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults: 3 GRU + 3 LSTM layers, sized to keep the audit
    /// comfortably under a 100k-parameter budget.
    pub fn desk_default(n_features: usize, window: usize) -> Self {
        ModelConfig {
            n_features,
            window,
            conv_channels: 16,
            conv_kernel: 3,
            encoder_dim: 16,
            gru_layers: 3,
            gru_units: 24,
            lstm_layers: 3,
            lstm_units: 24,
            attention_dim: 24,
            dropout_rate: 0.2,
            layer_norm_eps: 1e-5,
            toggles: ModelToggles::default(),
            seed: 0,
        }
    }

    /// Tiny dims for exhaustive toggle tests.
    pub fn tiny(n_features: usize, window: usize) -> Self {
        ModelConfig {
            n_features,
            window,
            conv_channels: 4,
            conv_kernel: 3,
            encoder_dim: 4,
            gru_layers: 1,
            gru_units: 3,
            lstm_layers: 1,
            lstm_units: 3,
            attention_dim: 3,
            dropout_rate: 0.2,
            layer_norm_eps: 1e-5,
            toggles: ModelToggles::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.window == 0 {
            return Err(Error::InvalidConfig("n_features and window must be positive".into()));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::EvenKernel(self.conv_kernel));
        }
        if self.toggles.use_conv && self.conv_channels == 0 {
            return Err(Error::InvalidConfig("conv_channels must be positive".into()));
        }
        if self.toggles.use_encoder && self.encoder_dim == 0 {
            return Err(Error::InvalidConfig("encoder_dim must be positive".into()));
        }
        if self.gru_layers > 0 && self.gru_units == 0 {
            return Err(Error::InvalidConfig("gru_units must be positive".into()));
        }
        if self.lstm_layers > 0 && self.lstm_units == 0 {
            return Err(Error::InvalidConfig("lstm_units must be positive".into()));
        }
        if self.toggles.use_self_attention && self.lstm_layers > 0 && self.attention_dim == 0 {
            return Err(Error::InvalidConfig("attention_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must lie in [0,1)".into()));
        }
        Ok(())
    }
}

/// Dropout behaviour for one forward pass. `Seeded` draws the keep mask
/// from the given seed, so repeated calls with the same seed are identical
/// (training steps pass a fresh derived seed; gradient checks reuse one).
#[derive(Debug, Clone, Copy)]
pub enum DropoutMode {
    Off,
    Seeded(u64),
}

#[derive(Debug, Clone)]
enum BlockKind {
    FeatureMask(DenseParams),
    Conv(ConvParams),
    Encoder(AttentionParams),
    Gru(GruParams),
    Lstm {
        lstm: LstmParams,
        attn: Option<AttentionParams>,
    },
}

#[derive(Debug, Clone)]
struct Block {
    kind: BlockKind,
    res_proj: Option<DenseParams>,
    norm: Option<LayerNormParams>,
}

/// The assembled model: configuration, parameters, and the subset of the
/// original feature indices it consumes.
#[derive(Debug, Clone)]
pub struct IdsModel<S> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
    pub active_features: Vec<usize>,
    blocks: Vec<Block>,
    head: DenseParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerAudit {
    pub entries: Vec<(String, usize)>,
    pub total: usize,
    /// 32-bit storage estimate: 4 bytes per parameter.
    pub approx_bytes: usize,
}

impl<S: Scalar> IdsModel<S> {
    /// Assemble the layer stack for a config. Initialization is fully
    /// determined by `config.seed`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        let active = (0..config.n_features).collect();
        Self::build_with_active(config, active)
    }

    fn build_with_active(config: ModelConfig, active_features: Vec<usize>) -> Result<Self> {
        config.validate()?;
        if active_features.len() != config.n_features {
            return Err(Error::InvalidConfig(
                "active feature count must match n_features".into(),
            ));
        }
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(derive_seed(config.seed, 0x6d6f64));
        let mut blocks = Vec::new();
        let t = &config.toggles;
        let mut width = config.n_features;

        let mut push_block = |store: &mut ParamStore<S>,
                              rng: &mut crate::rng::SeededRng,
                              name: &str,
                              kind: BlockKind,
                              in_dim: usize,
                              out_dim: usize,
                              with_norm: bool|
         -> usize {
            let res_proj = if t.use_residual && in_dim != out_dim {
                Some(DenseParams::init(
                    store,
                    rng,
                    &format!("{name}.res_proj"),
                    in_dim,
                    out_dim,
                ))
            } else {
                None
            };
            let norm = if t.use_layernorm && with_norm {
                Some(LayerNormParams::init(store, &format!("{name}.ln"), out_dim))
            } else {
                None
            };
            blocks.push(Block {
                kind,
                res_proj,
                norm,
            });
            out_dim
        };

        if t.use_feature_mask {
            // the mask emits gated input features; normalizing across the
            // feature axis would defeat the per-feature gate semantics and
            // make feature removal distort every row's statistics, so this
            // block skips the layer norm
            let dense = DenseParams::init(&mut store, &mut rng, "feature_mask", width, width);
            width = push_block(
                &mut store,
                &mut rng,
                "feature_mask",
                BlockKind::FeatureMask(dense),
                width,
                width,
                false,
            );
        }
        if t.use_conv {
            let conv = ConvParams::init(
                &mut store,
                &mut rng,
                "conv",
                config.conv_kernel,
                width,
                config.conv_channels,
            );
            width = push_block(
                &mut store,
                &mut rng,
                "conv",
                BlockKind::Conv(conv),
                width,
                config.conv_channels,
                true,
            );
        }
        if t.use_encoder {
            let attn = AttentionParams::init(&mut store, &mut rng, "encoder", width, config.encoder_dim);
            width = push_block(
                &mut store,
                &mut rng,
                "encoder",
                BlockKind::Encoder(attn),
                width,
                config.encoder_dim,
                true,
            );
        }
        for i in 1..=config.gru_layers {
            let name = format!("gru{i}");
            let gru = GruParams::init(&mut store, &mut rng, &name, width, config.gru_units);
            width = push_block(
                &mut store,
                &mut rng,
                &name,
                BlockKind::Gru(gru),
                width,
                config.gru_units,
                true,
            );
        }
        for i in 1..=config.lstm_layers {
            let name = format!("lstm{i}");
            let lstm = LstmParams::init(&mut store, &mut rng, &name, width, config.lstm_units);
            let (attn, out_dim) = if t.use_self_attention {
                let a = AttentionParams::init(
                    &mut store,
                    &mut rng,
                    &format!("{name}.attn"),
                    config.lstm_units,
                    config.attention_dim,
                );
                (Some(a), config.attention_dim)
            } else {
                (None, config.lstm_units)
            };
            width = push_block(
                &mut store,
                &mut rng,
                &name,
                BlockKind::Lstm { lstm, attn },
                width,
                out_dim,
                true,
            );
        }
        let head = DenseParams::init(&mut store, &mut rng, "head", width, 1);

        Ok(IdsModel {
            config,
            params: store,
            active_features,
            blocks,
            head,
        })
    }

    /// Record the forward pass on a tape and return the `[batch]`
    /// probability node.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<S>,
        batch: &SequenceBatch,
        dropout: DropoutMode,
    ) -> Result<NodeId> {
        self.forward_tape_with(&self.params, tape, batch, dropout)
    }

    /// Forward against an external parameter store with the same layout
    /// (e.g. a perturbed clone during gradient checking).
    pub fn forward_tape_with(
        &self,
        store: &ParamStore<S>,
        tape: &mut Tape<S>,
        batch: &SequenceBatch,
        dropout: DropoutMode,
    ) -> Result<NodeId> {
        if batch.n_features != self.active_features.len() {
            return Err(Error::FeatureCountMismatch {
                expected: self.active_features.len(),
                got: batch.n_features,
            });
        }
        let b = batch.len();
        let w = batch.window_len;
        let f = batch.n_features;
        let data: Vec<S> = batch.windows.iter().map(|&v| S::from_f64_c(v)).collect();
        let x = tape.constant(Tensor::new(vec![b, w, f], data)?);
        let mut cur = x;
        for block in &self.blocks {
            let input = cur;
            let mut out = match &block.kind {
                BlockKind::FeatureMask(dense) => {
                    let gate_pre = dense_forward(tape, store, dense, input)?;
                    let gate = tape.sigmoid(gate_pre);
                    tape.mul(input, gate)?
                }
                BlockKind::Conv(conv) => {
                    // softplus keeps the stack smooth end to end, so
                    // finite-difference verification stays well-posed
                    let y = conv1d_forward(tape, store, conv, input)?;
                    tape.softplus(y)
                }
                BlockKind::Encoder(attn) => {
                    self_attention_forward(tape, store, attn, input)?.output
                }
                BlockKind::Gru(gru) => gru_layer_forward(tape, store, gru, input)?,
                BlockKind::Lstm { lstm, attn } => {
                    let h = lstm_layer_forward(tape, store, lstm, input)?;
                    match attn {
                        Some(a) => self_attention_forward(tape, store, a, h)?.output,
                        None => h,
                    }
                }
            };
            if self.config.toggles.use_residual {
                let res = match &block.res_proj {
                    Some(proj) => dense_forward(tape, store, proj, input)?,
                    None => input,
                };
                out = tape.add(out, res)?;
            }
            if let Some(norm) = &block.norm {
                out = layer_norm_forward(
                    tape,
                    store,
                    norm,
                    out,
                    S::from_f64_c(self.config.layer_norm_eps),
                )?;
            }
            cur = out;
        }

        // last-timestep representation feeds the head
        let last = tape.time_slice(cur, w - 1)?;
        let last = match (self.config.toggles.use_dropout, dropout) {
            (true, DropoutMode::Seeded(seed)) if self.config.dropout_rate > 0.0 => {
                let n = tape.value(last).numel();
                let keep = S::from_f64_c(1.0 / (1.0 - self.config.dropout_rate));
                let mut rng = rng_from_seed(seed);
                let mask: Vec<S> = (0..n)
                    .map(|_| {
                        if crate::rng::uniform(&mut rng, 0.0, 1.0) < self.config.dropout_rate {
                            S::zero()
                        } else {
                            keep
                        }
                    })
                    .collect();
                tape.dropout(last, mask)?
            }
            _ => last,
        };
        let logit = dense_forward(tape, store, &self.head, last)?;
        let prob = tape.sigmoid(logit);
        tape.reshape(prob, vec![b])
    }

    /// Deterministic inference (dropout off).
    pub fn forward(&self, batch: &SequenceBatch) -> Result<Vec<S>> {
        let mut tape = Tape::new();
        let p = self.forward_tape(&mut tape, batch, DropoutMode::Off)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Forward + binary cross-entropy loss node against the batch labels.
    pub fn loss_tape(
        &self,
        tape: &mut Tape<S>,
        batch: &SequenceBatch,
        dropout: DropoutMode,
    ) -> Result<NodeId> {
        self.loss_tape_with(&self.params, tape, batch, dropout)
    }

    pub fn loss_tape_with(
        &self,
        store: &ParamStore<S>,
        tape: &mut Tape<S>,
        batch: &SequenceBatch,
        dropout: DropoutMode,
    ) -> Result<NodeId> {
        let p = self.forward_tape_with(store, tape, batch, dropout)?;
        let labels: Vec<S> = batch.labels.iter().map(|&y| S::from_f64_c(y as f64)).collect();
        tape.bce_loss(p, &labels)
    }

    /// Per-layer parameter audit in construction order.
    pub fn parameter_count(&self) -> LayerAudit {
        let mut entries: Vec<(String, usize)> = Vec::new();
        for (_, p) in self.params.iter() {
            let layer = p.name.split('.').next().unwrap_or(&p.name).to_string();
            match entries.last_mut() {
                Some((name, count)) if *name == layer => *count += p.value.numel(),
                _ => entries.push((layer, p.value.numel())),
            }
        }
        let total = entries.iter().map(|(_, c)| c).sum();
        LayerAudit {
            entries,
            total,
            approx_bytes: total * 4,
        }
    }

    /// Mean sigmoid gate per input feature over a batch: the readable
    /// ranking the adaptive feature mask learns. Empty when the mask
    /// toggle is off.
    pub fn mask_gate_means(&self, batch: &SequenceBatch) -> Result<Vec<S>> {
        let dense = match self.blocks.first() {
            Some(Block {
                kind: BlockKind::FeatureMask(d),
                ..
            }) => d,
            _ => return Ok(Vec::new()),
        };
        let b = batch.len();
        let w = batch.window_len;
        let f = batch.n_features;
        let mut tape = Tape::new();
        let data: Vec<S> = batch.windows.iter().map(|&v| S::from_f64_c(v)).collect();
        let x = tape.constant(Tensor::new(vec![b, w, f], data)?);
        let gate_pre = dense_forward(&mut tape, &self.params, dense, x)?;
        let gate = tape.sigmoid(gate_pre);
        let gv = tape.value(gate).data();
        let mut means = vec![S::zero(); f];
        for row in gv.chunks(f) {
            for (m, &g) in means.iter_mut().zip(row) {
                *m += g;
            }
        }
        let n = S::from_f64_c((b * w) as f64);
        for m in &mut means {
            *m = *m / n;
        }
        Ok(means)
    }

    /// Rebuild the model for a reduced feature set. Parameters whose shape
    /// survives the width change keep their trained weights; input-facing
    /// tensors are sliced along the feature axes so the restricted model
    /// computes the same function the full model computed on the kept
    /// columns. `reinit_seed` seeds any tensor that can be neither copied
    /// nor sliced.
    pub fn restrict_features(&self, keep: &[usize], reinit_seed: u64) -> Result<IdsModel<S>> {
        if keep.is_empty() {
            return Err(Error::EmptyKeepSet);
        }
        let mut sorted = keep.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut keep_positions = Vec::with_capacity(sorted.len());
        for k in &sorted {
            match self.active_features.iter().position(|a| a == k) {
                Some(pos) => keep_positions.push(pos),
                None => {
                    return Err(Error::InvalidConfig(format!(
                        "feature {k} is not active in the current model"
                    )))
                }
            }
        }
        let f_old = self.active_features.len();
        let f_new = sorted.len();
        let mut config = self.config.clone();
        config.n_features = f_new;
        config.seed = reinit_seed;
        let mut fresh = Self::build_with_active(config, sorted)?;
        for i in 0..fresh.params.len() {
            let id = ParamId(i);
            let name = fresh.params.get(id).name.clone();
            let new_shape = fresh.params.get(id).value.shape().to_vec();
            let Some(old_id) = self.params.id_of(&name) else {
                continue;
            };
            let old = self.params.get(old_id);
            let old_shape = old.value.shape().to_vec();
            if old_shape == new_shape {
                fresh.params.get_mut(id).value = old.value.clone();
            } else if let Some(sliced) =
                slice_feature_axes(&old.value, &new_shape, f_old, f_new, &keep_positions)
            {
                fresh.params.get_mut(id).value = sliced;
            }
            // anything else keeps its fresh initialization
        }
        Ok(fresh)
    }

    /// Serialize to the versioned JSON checkpoint envelope (tensors stored
    /// as base64 little-endian f32).
    pub fn to_checkpoint(&self) -> Checkpoint {
        let layers = self
            .params
            .iter()
            .map(|(_, p)| {
                let mut bytes = Vec::with_capacity(p.value.numel() * 4);
                for v in p.value.data() {
                    bytes.extend_from_slice(&(v.to_f64_c() as f32).to_le_bytes());
                }
                CheckpointTensor {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    data: base64::engine::general_purpose::STANDARD.encode(&bytes),
                    trainable: p.trainable,
                }
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            active_features: self.active_features.clone(),
            layers,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<IdsModel<S>> {
        if ck.format_version != CHECKPOINT_FORMAT {
            return Err(Error::BadCheckpoint(format!(
                "expected {CHECKPOINT_FORMAT}, found {}",
                ck.format_version
            )));
        }
        let mut model = Self::build_with_active(ck.config.clone(), ck.active_features.clone())?;
        for tensor in &ck.layers {
            let id = model.params.id_of(&tensor.name).ok_or_else(|| {
                Error::BadCheckpoint(format!("unknown parameter {:?}", tensor.name))
            })?;
            let expected = model.params.get(id).value.shape().to_vec();
            if expected != tensor.shape {
                return Err(Error::BadCheckpoint(format!(
                    "parameter {:?} has shape {:?}, expected {:?}",
                    tensor.name, tensor.shape, expected
                )));
            }
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(&tensor.data)
                .map_err(|e| Error::BadCheckpoint(e.to_string()))?;
            if bytes.len() != tensor.shape.iter().product::<usize>() * 4 {
                return Err(Error::BadCheckpoint(format!(
                    "parameter {:?} has a truncated payload",
                    tensor.name
                )));
            }
            let data: Vec<S> = bytes
                .chunks_exact(4)
                .map(|c| S::from_f64_c(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            model.params.get_mut(id).value = Tensor::new(tensor.shape.clone(), data)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path.as_ref(), json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<IdsModel<S>> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::IoFailure(format!("{}: {e}", path.as_ref().display())))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        Self::from_checkpoint(&ck)
    }
}

/// Slice a tensor along every axis that shrank from the old feature width
/// to the new one, keeping the given positions. Returns None when the
/// shapes differ in any other way.
fn slice_feature_axes<S: Scalar>(
    old: &Tensor<S>,
    new_shape: &[usize],
    f_old: usize,
    f_new: usize,
    keep_positions: &[usize],
) -> Option<Tensor<S>> {
    let old_shape = old.shape();
    if old_shape.len() != new_shape.len() {
        return None;
    }
    let mut slice_axes = Vec::new();
    for (axis, (&o, &n)) in old_shape.iter().zip(new_shape).enumerate() {
        if o == n {
            continue;
        }
        if o == f_old && n == f_new {
            slice_axes.push(axis);
        } else {
            return None;
        }
    }
    if slice_axes.is_empty() {
        return None;
    }
    // gather: walk every output coordinate, map sliced axes through
    // keep_positions
    let rank = new_shape.len();
    let numel: usize = new_shape.iter().product();
    let mut old_strides = vec![1usize; rank];
    for axis in (0..rank.saturating_sub(1)).rev() {
        old_strides[axis] = old_strides[axis + 1] * old_shape[axis + 1];
    }
    let mut data = Vec::with_capacity(numel);
    let mut coord = vec![0usize; rank];
    for _ in 0..numel {
        let mut src = 0usize;
        for axis in 0..rank {
            let c = if slice_axes.contains(&axis) {
                keep_positions[coord[axis]]
            } else {
                coord[axis]
            };
            src += c * old_strides[axis];
        }
        data.push(old.data()[src]);
        // odometer increment
        for axis in (0..rank).rev() {
            coord[axis] += 1;
            if coord[axis] < new_shape[axis] {
                break;
            }
            coord[axis] = 0;
        }
    }
    Tensor::new(new_shape.to_vec(), data).ok()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
    pub trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: String,
    pub config: ModelConfig,
    pub active_features: Vec<usize>,
    pub layers: Vec<CheckpointTensor>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::matrix::FlowRecord;
    use crate::data::window::windowize;
    use crate::gradcheck::grad_check;

    fn batch(b: usize, w: usize, f: usize, seed: u64) -> SequenceBatch {
        let mut rng = rng_from_seed(seed);
        let records: Vec<FlowRecord> = (0..b * w)
            .map(|i| FlowRecord {
                features: (0..f)
                    .map(|_| crate::rng::uniform(&mut rng, -1.5, 1.5))
                    .collect(),
                label: (i % 2) as u8,
                stage_tag: String::new(),
            })
            .collect();
        let mut out = SequenceBatch::empty(w, f);
        for chunk in records.chunks(w) {
            out.extend(&windowize(chunk, w, 1));
        }
        out
    }

    #[test]
    fn degenerate_stack_is_logistic_regression() {
        let mut cfg = ModelConfig::tiny(5, 4);
        cfg.toggles = ModelToggles {
            use_feature_mask: false,
            use_conv: false,
            use_encoder: false,
            use_self_attention: false,
            use_residual: false,
            use_layernorm: false,
            use_dropout: false,
        };
        cfg.gru_layers = 0;
        cfg.lstm_layers = 0;
        let m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        let audit = m.parameter_count();
        assert_eq!(audit.entries.len(), 1);
        assert_eq!(audit.entries[0], ("head".to_string(), 6)); // 5 weights + bias
        let p = m.forward(&batch(3, 4, 5, 1)).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn default_audit_lists_three_gru_and_three_lstm() {
        let cfg = ModelConfig::desk_default(12, 10);
        let m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        let audit = m.parameter_count();
        let grus = audit.entries.iter().filter(|(n, _)| n.starts_with("gru")).count();
        let lstms = audit
            .entries
            .iter()
            .filter(|(n, _)| n.starts_with("lstm"))
            .count();
        assert_eq!(grus, 3);
        assert_eq!(lstms, 3);
        assert!(audit.total <= 100_000, "audit total {}", audit.total);
        assert_eq!(audit.approx_bytes, audit.total * 4);
    }

    #[test]
    fn same_seed_builds_identical_params() {
        let cfg = ModelConfig::desk_default(8, 6);
        let a: IdsModel<f64> = IdsModel::build(cfg.clone()).unwrap();
        let b: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        for ((_, pa), (_, pb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.value.data(), pb.value.data());
        }
    }

    #[test]
    fn zeroed_head_outputs_half() {
        let cfg = ModelConfig::tiny(4, 3);
        let mut m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        let wid = m.params.id_of("head.w").unwrap();
        m.params.get_mut(wid).value.fill(0.0);
        let p = m.forward(&batch(2, 3, 4, 3)).unwrap();
        for v in p {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_forward_is_deterministic_and_batch_invariant() {
        let cfg = ModelConfig::desk_default(6, 5);
        let m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        let data = batch(6, 5, 6, 9);
        let p1 = m.forward(&data).unwrap();
        let p2 = m.forward(&data).unwrap();
        assert_eq!(p1, p2);
        // permuting the batch permutes the outputs
        let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
        let permuted = data.take(&perm);
        let pp = m.forward(&permuted).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            assert!((pp[i] - p1[src]).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_stay_in_open_interval() {
        let cfg = ModelConfig::desk_default(6, 5);
        let m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        // extreme inputs
        let mut data = batch(4, 5, 6, 11);
        for v in &mut data.windows {
            *v *= 100.0;
        }
        let p = m.forward(&data).unwrap();
        assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn feature_count_mismatch_is_rejected() {
        let cfg = ModelConfig::tiny(4, 3);
        let m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        let wrong = batch(2, 3, 5, 1);
        assert!(matches!(
            m.forward(&wrong),
            Err(Error::FeatureCountMismatch { expected: 4, got: 5 })
        ));
    }

    #[test]
    fn gru_parameter_count_formula() {
        // GRU d_in=8, d_h=16: 3 gates x (8*16 + 16*16 + 16) = 1200
        let mut cfg = ModelConfig::tiny(8, 3);
        cfg.toggles = ModelToggles {
            use_feature_mask: false,
            use_conv: false,
            use_encoder: false,
            use_self_attention: false,
            use_residual: false,
            use_layernorm: false,
            use_dropout: false,
        };
        cfg.gru_layers = 1;
        cfg.gru_units = 16;
        cfg.lstm_layers = 0;
        let m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        let audit = m.parameter_count();
        let gru_entry = audit.entries.iter().find(|(n, _)| n == "gru1").unwrap();
        assert_eq!(gru_entry.1, 1200);
    }

    #[test]
    fn dense_head_parameter_count() {
        let mut cfg = ModelConfig::tiny(10, 2);
        cfg.toggles = ModelToggles {
            use_feature_mask: false,
            use_conv: false,
            use_encoder: false,
            use_self_attention: false,
            use_residual: false,
            use_layernorm: false,
            use_dropout: false,
        };
        cfg.gru_layers = 0;
        cfg.lstm_layers = 0;
        let m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        assert_eq!(m.parameter_count().total, 11);
    }

    #[test]
    fn restrict_keep_all_preserves_recurrent_weights() {
        let cfg = ModelConfig::desk_default(8, 5);
        let m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        let keep: Vec<usize> = (0..8).collect();
        let r = m.restrict_features(&keep, 99).unwrap();
        for (_, p) in m.params.iter() {
            let rid = r.params.id_of(&p.name).unwrap();
            assert_eq!(
                r.params.get(rid).value.shape(),
                p.value.shape(),
                "{} shape",
                p.name
            );
            assert_eq!(
                r.params.get(rid).value.data(),
                p.value.data(),
                "{} weights carried over",
                p.name
            );
        }
    }

    #[test]
    fn restrict_drops_columns_and_rebuilds_input_layers() {
        let cfg = ModelConfig::desk_default(20, 5);
        let m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        let keep: Vec<usize> = (0..18).collect();
        let r = m.restrict_features(&keep, 7).unwrap();
        assert_eq!(r.config.n_features, 18);
        assert_eq!(r.active_features, keep);
        let mask_w = r.params.id_of("feature_mask.w").unwrap();
        assert_eq!(r.params.get(mask_w).value.shape(), &[18, 18]);
        // recurrent weights survive (shapes unchanged)
        for name in ["gru2.update.u", "lstm1.forget.w", "head.w"] {
            let old = m.params.id_of(name).unwrap();
            let new = r.params.id_of(name).unwrap();
            assert_eq!(
                m.params.get(old).value.data(),
                r.params.get(new).value.data(),
                "{name}"
            );
        }
        // restricted forward runs on data with dropped columns removed
        let full = batch(3, 5, 20, 21);
        let reduced = full.select_features(&keep);
        let p = r.forward(&reduced).unwrap();
        assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn restrict_matches_fresh_build_shapes() {
        let cfg = ModelConfig::desk_default(10, 5);
        let m: IdsModel<f64> = IdsModel::build(cfg.clone()).unwrap();
        let keep: Vec<usize> = vec![0, 2, 3, 5, 7, 8, 9];
        let r = m.restrict_features(&keep, 13).unwrap();
        let mut fresh_cfg = cfg;
        fresh_cfg.n_features = keep.len();
        fresh_cfg.seed = 13;
        let fresh: IdsModel<f64> = IdsModel::build(fresh_cfg).unwrap();
        assert_eq!(r.params.len(), fresh.params.len());
        for ((_, a), (_, b)) in r.params.iter().zip(fresh.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape(), "{}", a.name);
        }
    }

    #[test]
    fn restrict_rejects_empty_keep_set() {
        let cfg = ModelConfig::tiny(4, 3);
        let m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        assert!(matches!(
            m.restrict_features(&[], 1),
            Err(Error::EmptyKeepSet)
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let cfg = ModelConfig::tiny(5, 4);
        let m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        m.save(&p1).unwrap();
        let loaded: IdsModel<f64> = IdsModel::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap(),
            "load-then-save reproduces the checkpoint bytes"
        );
        // forward agrees within f32 storage precision
        let data = batch(3, 4, 5, 5);
        let pa = m.forward(&data).unwrap();
        let pb = loaded.forward(&data).unwrap();
        for (a, b) in pa.iter().zip(&pb) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn checkpoint_rejects_wrong_version() {
        let cfg = ModelConfig::tiny(4, 3);
        let m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        let mut ck = m.to_checkpoint();
        ck.format_version = "something-else".into();
        assert!(matches!(
            IdsModel::<f64>::from_checkpoint(&ck),
            Err(Error::BadCheckpoint(_))
        ));
    }

    /// Every toggle combination builds and passes a finite-difference
    /// check at tiny dims. Probe points use a small symmetric jitter so
    /// gradients are generic but activations stay away from saturated
    /// probabilities, where finite differences lose their footing.
    #[test]
    fn all_toggle_combinations_build_and_grad_check() {
        let mut worst: f64 = 0.0;
        for bits in 0..128u32 {
            let toggles = ModelToggles {
                use_feature_mask: bits & 1 != 0,
                use_conv: bits & 2 != 0,
                use_encoder: bits & 4 != 0,
                use_self_attention: bits & 8 != 0,
                use_residual: bits & 16 != 0,
                use_layernorm: bits & 32 != 0,
                use_dropout: bits & 64 != 0,
            };
            let mut cfg = ModelConfig::tiny(4, 2);
            cfg.toggles = toggles;
            cfg.layer_norm_eps = 1e-2;
            cfg.seed = 1000 + bits as u64;
            let mut m: IdsModel<f64> = IdsModel::build(cfg).unwrap();
            let mut jrng = rng_from_seed(derive_seed(31337, bits as u64));
            for i in 0..m.params.len() {
                let id = ParamId(i);
                for v in m.params.get_mut(id).value.data_mut() {
                    *v += crate::rng::uniform(&mut jrng, -0.1, 0.1);
                }
            }
            let data = batch(2, 2, 4, 200 + bits as u64);
            let dropout = DropoutMode::Seeded(derive_seed(7, bits as u64));

            let mut tape = Tape::new();
            let loss = m.loss_tape(&mut tape, &data, dropout).unwrap();
            tape.backward(loss, &mut m.params).unwrap();

            let mut store = m.params.clone();
            let err = grad_check(
                &mut store,
                |p| {
                    let mut t = Tape::new();
                    let l = m.loss_tape_with(p, &mut t, &data, dropout)?;
                    Ok(t.value(l).item())
                },
                1e-4,
            )
            .unwrap();
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst toggle-combination error: {worst}");
    }
}
