//! Edge compression: global magnitude pruning with mask-preserving
//! fine-tuning, per-tensor 8-bit affine quantization, and size accounting.

use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::curriculum::{CurriculumConfig, StageDataset};
use crate::data::window::SequenceBatch;
use crate::error::{Error, Result};
use crate::model::{DropoutMode, IdsModel, ModelConfig};
use crate::optim::AdamState;
use crate::params::ParamId;
use crate::rng::{derive_seed, rng_from_seed};

pub const QUANTIZED_FORMAT: &str = "curricuids-quantized-v1";

/// Per-tensor keep masks (false = weight pinned to zero).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneMask {
    pub masks: Vec<(String, Vec<bool>)>,
    pub target_sparsity: f64,
    pub achieved_sparsity: f64,
}

impl PruneMask {
    /// Re-zero every masked weight (applied after each optimizer step
    /// during fine-tuning).
    pub fn apply(&self, model: &mut IdsModel<f64>) {
        for (i, (_, mask)) in self.masks.iter().enumerate() {
            let data = model.params.get_mut(ParamId(i)).value.data_mut();
            for (v, &keep) in data.iter_mut().zip(mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn holds(&self, model: &IdsModel<f64>) -> bool {
        self.masks.iter().enumerate().all(|(i, (_, mask))| {
            model
                .params
                .get(ParamId(i))
                .value
                .data()
                .iter()
                .zip(mask)
                .all(|(v, &keep)| keep || *v == 0.0)
        })
    }
}

/// Zero the smallest-magnitude weights per tensor to reach the target
/// sparsity (ties broken toward lower flat indices). Optionally fine-tune
/// with the mask re-applied after every optimizer step.
pub fn prune_magnitude(
    model: &IdsModel<f64>,
    target_sparsity: f64,
    fine_tune: Option<(&StageDataset, usize, &CurriculumConfig)>,
) -> Result<(IdsModel<f64>, PruneMask)> {
    if !(0.0..1.0).contains(&target_sparsity) {
        return Err(Error::InvalidConfig(format!(
            "target sparsity must lie in [0,1), got {target_sparsity}"
        )));
    }
    let mut pruned = model.clone();
    let mut masks = Vec::with_capacity(pruned.params.len());
    let mut zeroed = 0usize;
    let mut total = 0usize;
    for i in 0..pruned.params.len() {
        let id = ParamId(i);
        let name = pruned.params.get(id).name.clone();
        let data = pruned.params.get_mut(id).value.data_mut();
        let n = data.len();
        total += n;
        let n_zero = ((n as f64) * target_sparsity).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            data[a]
                .abs()
                .partial_cmp(&data[b].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut mask = vec![true; n];
        for &idx in order.iter().take(n_zero) {
            data[idx] = 0.0;
            mask[idx] = false;
        }
        zeroed += n_zero;
        masks.push((name, mask));
    }
    let prune_mask = PruneMask {
        masks,
        target_sparsity,
        achieved_sparsity: if total > 0 { zeroed as f64 / total as f64 } else { 0.0 },
    };

    if let Some((stage, epochs, cfg)) = fine_tune {
        fine_tune_masked(&mut pruned, &prune_mask, stage, epochs, cfg)?;
    }
    Ok((pruned, prune_mask))
}

fn fine_tune_masked(
    model: &mut IdsModel<f64>,
    mask: &PruneMask,
    stage: &StageDataset,
    epochs: usize,
    cfg: &CurriculumConfig,
) -> Result<()> {
    use rand::seq::SliceRandom;
    let train = stage.train.select_features(&model.active_features);
    let mut adam = AdamState::new(&model.params, cfg.learning_rate);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(
            cfg.seed,
            0xf17e ^ (epoch as u64),
        )));
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train.take(chunk);
            let mut tape = Tape::new();
            let dropout =
                DropoutMode::Seeded(derive_seed(cfg.seed, 0xf1d0 ^ ((epoch as u64) << 20) ^ step as u64));
            let loss = model.loss_tape(&mut tape, &batch, dropout)?;
            if !tape.value(loss).item().is_finite() {
                return Err(Error::DivergenceDetected {
                    stage: stage.stage_index,
                    epoch,
                });
            }
            tape.backward(loss, &mut model.params)?;
            adam.step(&mut model.params);
            mask.apply(model);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub scale: f64,
    pub zero_point: i32,
    pub values: Vec<i8>,
}

impl QuantizedTensor {
    pub fn dequantized(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|&q| (q as i32 - self.zero_point) as f64 * self.scale)
            .collect()
    }
}

/// 8-bit affine quantization of every parameter tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub format_version: String,
    pub config: ModelConfig,
    pub active_features: Vec<usize>,
    pub tensors: Vec<QuantizedTensor>,
}

/// Per-tensor affine quantization: `scale = (max-min)/255` (1 when the
/// tensor is constant), `zero_point = round(-min/scale) - 128` clamped to
/// the int8 range, `q = clamp(round(w/scale) + zero_point, -128, 127)`.
pub fn quantize(model: &IdsModel<f64>) -> Result<QuantizedModel> {
    let mut tensors = Vec::with_capacity(model.params.len());
    for (_, p) in model.params.iter() {
        if !p.value.is_finite() {
            return Err(Error::NonFiniteWeight(p.name.clone()));
        }
        let data = p.value.data();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if data.is_empty() {
            lo = 0.0;
            hi = 0.0;
        }
        // the representable range must include zero, otherwise the
        // zero-point clamp breaks the scale/2 round-trip bound on
        // single-sign tensors (and pruned zeros would shift)
        lo = lo.min(0.0);
        hi = hi.max(0.0);
        let scale = if hi > lo { (hi - lo) / 255.0 } else { 1.0 };
        let zero_point = ((-lo / scale).round() as i64 - 128).clamp(-128, 127) as i32;
        let values = data
            .iter()
            .map(|&w| ((w / scale).round() as i64 + zero_point as i64).clamp(-128, 127) as i8)
            .collect();
        tensors.push(QuantizedTensor {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            scale,
            zero_point,
            values,
        });
    }
    Ok(QuantizedModel {
        format_version: QUANTIZED_FORMAT.to_string(),
        config: model.config.clone(),
        active_features: model.active_features.clone(),
        tensors,
    })
}

impl QuantizedModel {
    /// Reconstruct a 32-bit float model for inference.
    pub fn dequantize(&self) -> Result<IdsModel<f32>> {
        let mut model: IdsModel<f32> = IdsModel::build(self.config.clone())?;
        model.active_features = self.active_features.clone();
        // rebuild at the stored width when features were restricted
        if self.active_features.len() != self.config.n_features {
            return Err(Error::BadCheckpoint(
                "active feature count disagrees with config".into(),
            ));
        }
        for t in &self.tensors {
            let id = model
                .params
                .id_of(&t.name)
                .ok_or_else(|| Error::BadCheckpoint(format!("unknown tensor {:?}", t.name)))?;
            let expected = model.params.get(id).value.shape().to_vec();
            if expected != t.shape {
                return Err(Error::BadCheckpoint(format!(
                    "tensor {:?} shape {:?} vs model {:?}",
                    t.name, t.shape, expected
                )));
            }
            let data: Vec<f32> = t.dequantized().iter().map(|&v| v as f32).collect();
            model.params.get_mut(id).value = crate::tensor::Tensor::new(t.shape.clone(), data)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let envelope = QuantizedCheckpoint::from_model(self);
        std::fs::write(path.as_ref(), serde_json::to_string(&envelope)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<QuantizedModel> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::IoFailure(format!("{}: {e}", path.as_ref().display())))?;
        let envelope: QuantizedCheckpoint = serde_json::from_str(&text)?;
        envelope.into_model()
    }
}

/// Wire format: same envelope shape as float checkpoints with int8 payloads.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuantizedCheckpoint {
    format_version: String,
    config: ModelConfig,
    active_features: Vec<usize>,
    layers: Vec<QuantizedCheckpointTensor>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuantizedCheckpointTensor {
    name: String,
    shape: Vec<usize>,
    scale: f64,
    zero_point: i32,
    data: String,
}

impl QuantizedCheckpoint {
    fn from_model(qm: &QuantizedModel) -> Self {
        QuantizedCheckpoint {
            format_version: qm.format_version.clone(),
            config: qm.config.clone(),
            active_features: qm.active_features.clone(),
            layers: qm
                .tensors
                .iter()
                .map(|t| {
                    let bytes: Vec<u8> = t.values.iter().map(|&v| v as u8).collect();
                    QuantizedCheckpointTensor {
                        name: t.name.clone(),
                        shape: t.shape.clone(),
                        scale: t.scale,
                        zero_point: t.zero_point,
                        data: base64::engine::general_purpose::STANDARD.encode(&bytes),
                    }
                })
                .collect(),
        }
    }

    fn into_model(self) -> Result<QuantizedModel> {
        if self.format_version != QUANTIZED_FORMAT {
            return Err(Error::BadCheckpoint(format!(
                "expected {QUANTIZED_FORMAT}, found {}",
                self.format_version
            )));
        }
        let tensors = self
            .layers
            .into_iter()
            .map(|t| {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(&t.data)
                    .map_err(|e| Error::BadCheckpoint(e.to_string()))?;
                Ok(QuantizedTensor {
                    name: t.name,
                    shape: t.shape,
                    scale: t.scale,
                    zero_point: t.zero_point,
                    values: bytes.iter().map(|&b| b as i8).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantizedModel {
            format_version: QUANTIZED_FORMAT.to_string(),
            config: self.config,
            active_features: self.active_features,
            tensors,
        })
    }
}

/// Dequantize and run the float32 forward pass.
pub fn quantized_forward(qm: &QuantizedModel, batch: &SequenceBatch) -> Result<Vec<f64>> {
    let model = qm.dequantize()?;
    Ok(model.forward(batch)?.iter().map(|&p| p as f64).collect())
}

impl crate::metrics::ProbabilityScorer for QuantizedModel {
    fn score_batch(&self, batch: &SequenceBatch) -> Result<Vec<f64>> {
        quantized_forward(self, batch)
    }

    fn active_features(&self) -> Vec<usize> {
        self.active_features.clone()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeReport {
    pub parameter_total: usize,
    pub float_bytes: usize,
    pub quantized_bytes: usize,
    pub compression_ratio: f64,
}

/// Bytes for one quantized tensor: payload + scale/zero-point + a shape
/// header (dimension count and extents, 4 bytes each). With the sparse
/// option, high-sparsity payloads count as (index, value) pairs instead.
fn tensor_bytes(t: &QuantizedTensor, sparse: bool) -> usize {
    let header = 8 + 4 + 4 + 4 * t.shape.len();
    let dense = t.values.len();
    if sparse {
        let zero_q = ((0.0f64 / t.scale).round() as i64 + t.zero_point as i64).clamp(-128, 127) as i8;
        let nnz = t.values.iter().filter(|&&v| v != zero_q).count();
        header + dense.min(4 + 5 * nnz)
    } else {
        header + dense
    }
}

pub fn size_report(qm: &QuantizedModel, sparse: bool) -> SizeReport {
    let parameter_total: usize = qm.tensors.iter().map(|t| t.values.len()).sum();
    let float_bytes = parameter_total * 4;
    let quantized_bytes: usize = qm.tensors.iter().map(|t| tensor_bytes(t, sparse)).sum();
    SizeReport {
        parameter_total,
        float_bytes,
        quantized_bytes,
        compression_ratio: if quantized_bytes > 0 {
            float_bytes as f64 / quantized_bytes as f64
        } else {
            0.0
        },
    }
}

/// 4-bytes-per-parameter size in kilobytes (divide by 1024).
pub fn float_kilobytes(parameter_total: usize) -> f64 {
    (parameter_total * 4) as f64 / 1024.0
}
