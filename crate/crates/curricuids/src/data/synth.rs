//! Desk-scale synthetic flow generator with the same stage taxonomy as the
//! real datasets.
//!
//! Records are emitted in contiguous single-class runs so windowing never
//! mixes classes. Attacks of stage `k` differ from normal traffic in one
//! dedicated two-feature group: early stages carry plain mean shifts
//! (separable from single records), while the final stage carries an
//! alternating high-frequency signature whose window mean stays close to
//! normal — a classifier without temporal context sees little of it. Two
//! decoy features are pure noise made negatively label-correlated through
//! label-dependent sign flips; they exist to exercise un-learning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::matrix::FlowRecord;
use crate::data::stage::StagePlan;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, standard_normal, SeededRng};

/// AR(1) coefficient of the background process.
pub const AR_PHI: f64 = 0.5;
/// Mean shift of the easiest attack stage, in noise units.
pub const SHIFT_EASY: f64 = 3.0;
/// Decay of the shift per later stage (stage difficulty ramp).
pub const SHIFT_DECAY: f64 = 0.7;
/// Mild positive shift that earlier-stage attacks leave on feature groups
/// whose own stage comes later. Keeps every signal group weakly engaged
/// from stage 2 on, so per-stage un-learning never sees a signal feature
/// as pure noise before its stage arrives.
pub const PRE_SHIFT: f64 = 1.0;
/// Amplitude of the alternating signature of the final stage.
pub const OSC_AMP: f64 = 2.2;
/// Residual mean shift of the final stage (what a window-mean model sees).
pub const OSC_SHIFT: f64 = 0.35;
/// Scale of the decoy features relative to `noise`.
pub const DECOY_SCALE: f64 = 0.8;
/// Probability that an attack run flips its decoy sign. The flip is decided
/// per run so window averaging cannot distil the decoys into a strong
/// signal; a mean-based classifier only catches the flipped fraction.
pub const DECOY_FLIP: f64 = 0.25;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Attack runs generated per attack stage.
    pub n_per_stage: usize,
    /// Normal runs; defaults to `n_per_stage x (number of attack stages)`.
    pub normal_runs: Option<usize>,
    /// Records per contiguous run (one class per run).
    pub run_len: usize,
    pub n_features: usize,
    /// Innovation scale of the AR(1) background noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_stage: 60,
            normal_runs: None,
            run_len: 10,
            n_features: 12,
            noise: 1.0,
            seed: 0,
        }
    }
}

/// What the generator actually planted, for use as a test oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorTruth {
    /// stage index -> feature indices that distinguish its attacks
    pub stage_feature_groups: BTreeMap<usize, Vec<usize>>,
    /// stage index whose signature is temporal (alternating), if any
    pub temporal_stage: Option<usize>,
    pub decoy_features: Vec<usize>,
    pub feature_names: Vec<String>,
    pub config: SynthConfig,
}

struct Ar1 {
    state: f64,
    noise: f64,
}

impl Ar1 {
    fn next(&mut self, rng: &mut SeededRng) -> f64 {
        self.state = AR_PHI * self.state + self.noise * standard_normal(rng);
        self.state
    }
}

/// Generate labeled flow records for the given plan.
pub fn synthesize_dataset(
    cfg: &SynthConfig,
    plan: &StagePlan,
) -> Result<(Vec<FlowRecord>, GeneratorTruth)> {
    if cfg.n_features < 8 {
        return Err(Error::InvalidConfig(format!(
            "need at least 8 features, got {}",
            cfg.n_features
        )));
    }
    if cfg.n_per_stage == 0 || cfg.run_len == 0 {
        return Err(Error::InvalidConfig(
            "n_per_stage and run_len must be positive".into(),
        ));
    }
    plan.validate()?;
    let n_attack_stages = plan.n_stages() - 1;
    if n_attack_stages == 0 {
        return Err(Error::InvalidConfig("plan has no attack stages".into()));
    }
    if 2 * n_attack_stages + 2 > cfg.n_features {
        return Err(Error::InvalidConfig(format!(
            "{} attack stages need {} features, got {}",
            n_attack_stages,
            2 * n_attack_stages + 2,
            cfg.n_features
        )));
    }

    let f = cfg.n_features;
    let decoys = vec![f - 2, f - 1];
    let mut stage_feature_groups = BTreeMap::new();
    for g in 1..=n_attack_stages {
        let stage_index = g + 1;
        stage_feature_groups.insert(stage_index, vec![2 * (g - 1), 2 * g - 1]);
    }
    let temporal_stage = if n_attack_stages >= 2 {
        Some(n_attack_stages + 1)
    } else {
        None
    };

    // run schedule: (stage_index, tag) repeated per requested count,
    // interleaved round-robin so the emitted file mixes classes
    let normal_runs = cfg.normal_runs.unwrap_or(cfg.n_per_stage * n_attack_stages);
    let mut queues: Vec<(usize, String, usize)> = Vec::new();
    queues.push((1, plan.stages[0].label_patterns[0].clone(), normal_runs));
    for s in &plan.stages[1..] {
        let tag = s
            .label_patterns
            .iter()
            .find(|p| *p != "*")
            .cloned()
            .unwrap_or_else(|| s.name.clone());
        queues.push((s.index, tag, cfg.n_per_stage));
    }

    let mut records = Vec::new();
    let mut emitted = vec![0usize; queues.len()];
    loop {
        let mut any = false;
        for (qi, (stage_index, tag, count)) in queues.iter().enumerate() {
            if emitted[qi] >= *count {
                continue;
            }
            any = true;
            let run_seed = derive_seed(cfg.seed, (qi as u64) << 32 | emitted[qi] as u64);
            emit_run(
                cfg,
                *stage_index,
                tag,
                run_seed,
                &stage_feature_groups,
                temporal_stage,
                &decoys,
                &mut records,
            );
            emitted[qi] += 1;
        }
        if !any {
            break;
        }
    }

    let feature_names = (0..f).map(|i| format!("f{i:02}")).collect();
    Ok((
        records,
        GeneratorTruth {
            stage_feature_groups,
            temporal_stage,
            decoy_features: decoys,
            feature_names,
            config: cfg.clone(),
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn emit_run(
    cfg: &SynthConfig,
    stage_index: usize,
    tag: &str,
    run_seed: u64,
    groups: &BTreeMap<usize, Vec<usize>>,
    temporal_stage: Option<usize>,
    decoys: &[usize],
    out: &mut Vec<FlowRecord>,
) {
    let mut rng = rng_from_seed(run_seed);
    let f = cfg.n_features;
    let label = if stage_index == 1 { 0u8 } else { 1u8 };
    let attack_group: &[usize] = groups
        .get(&stage_index)
        .map(|v| v.as_slice())
        .unwrap_or(&[]);
    let is_temporal = temporal_stage == Some(stage_index);
    // with noise = 0 the shifts stay; everything stochastic vanishes
    let unit = if cfg.noise == 0.0 { 1.0 } else { cfg.noise };
    let shift = if label == 1 {
        if is_temporal {
            OSC_SHIFT * unit
        } else {
            // group g gets SHIFT_EASY * SHIFT_DECAY^(g-1)
            let g = stage_index - 1;
            SHIFT_EASY * SHIFT_DECAY.powi(g as i32 - 1) * unit
        }
    } else {
        0.0
    };
    let mut ar: Vec<Ar1> = (0..f)
        .map(|_| Ar1 {
            state: 0.0,
            noise: cfg.noise,
        })
        .collect();
    // one flip decision per decoy per run
    let decoy_flip: Vec<bool> = decoys
        .iter()
        .map(|_| label == 1 && crate::rng::uniform(&mut rng, 0.0, 1.0) < DECOY_FLIP)
        .collect();

    for t in 0..cfg.run_len {
        let mut features = vec![0.0; f];
        for (j, feat) in features.iter_mut().enumerate() {
            *feat = ar[j].next(&mut rng);
        }
        if label == 1 {
            for &j in attack_group {
                if is_temporal {
                    let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
                    features[j] = sign * OSC_AMP * unit + shift + 0.5 * features[j];
                } else {
                    features[j] += shift;
                }
            }
            // later-stage groups get a mild engagement shift so they never
            // look like pure noise to per-stage un-learning
            for (_, group) in groups.range((stage_index + 1)..) {
                for &j in group {
                    features[j] += PRE_SHIFT * unit;
                }
            }
        }
        for (&d, &flip) in decoys.iter().zip(&decoy_flip) {
            let magnitude = (cfg.noise * standard_normal(&mut rng)).abs() * DECOY_SCALE;
            features[d] = if flip { -magnitude } else { magnitude };
        }
        out.push(FlowRecord {
            features,
            label,
            stage_tag: tag.to_string(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::stage::{build_stage_plan, DatasetKind};

    fn four_stage_plan() -> StagePlan {
        build_stage_plan(DatasetKind::EdgeIIoT).unwrap()
    }

    #[test]
    fn zero_noise_separates_stage_two_deterministically() {
        let cfg = SynthConfig {
            noise: 0.0,
            n_per_stage: 3,
            ..Default::default()
        };
        let (records, truth) = synthesize_dataset(&cfg, &four_stage_plan()).unwrap();
        let group = &truth.stage_feature_groups[&2];
        for r in &records {
            if r.stage_tag.contains("os fingerprint") {
                for &j in group {
                    assert!(r.features[j] > 1.0, "stage-2 attack feature shifted");
                }
            }
            if r.label == 0 {
                for &j in group {
                    assert_eq!(r.features[j], 0.0, "normal group-1 feature is zero");
                }
            }
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let cfg = SynthConfig {
            n_per_stage: 4,
            ..Default::default()
        };
        let plan = four_stage_plan();
        let (a, _) = synthesize_dataset(&cfg, &plan).unwrap();
        let (b, _) = synthesize_dataset(&cfg, &plan).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn run_structure_is_contiguous_single_class() {
        let cfg = SynthConfig {
            n_per_stage: 2,
            run_len: 5,
            ..Default::default()
        };
        let (records, _) = synthesize_dataset(&cfg, &four_stage_plan()).unwrap();
        for chunk in records.chunks(5) {
            assert!(chunk.iter().all(|r| r.stage_tag == chunk[0].stage_tag));
        }
    }

    #[test]
    fn rejects_too_few_features() {
        let cfg = SynthConfig {
            n_features: 7,
            ..Default::default()
        };
        assert!(matches!(
            synthesize_dataset(&cfg, &four_stage_plan()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn decoys_anti_correlate_with_label() {
        let cfg = SynthConfig {
            n_per_stage: 40,
            ..Default::default()
        };
        let (records, truth) = synthesize_dataset(&cfg, &four_stage_plan()).unwrap();
        for &d in &truth.decoy_features {
            let mean = |label: u8| {
                let vals: Vec<f64> = records
                    .iter()
                    .filter(|r| r.label == label)
                    .map(|r| r.features[d])
                    .collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            assert!(
                mean(1) < mean(0) - 0.2,
                "decoy {d}: normal mean {} attack mean {}",
                mean(0),
                mean(1)
            );
        }
    }

    #[test]
    fn temporal_stage_hides_from_window_means() {
        let cfg = SynthConfig {
            n_per_stage: 40,
            ..Default::default()
        };
        let plan = four_stage_plan();
        let (records, truth) = synthesize_dataset(&cfg, &plan).unwrap();
        let temporal = truth.temporal_stage.unwrap();
        let group = &truth.stage_feature_groups[&temporal];
        let tag_of_temporal = records
            .iter()
            .find(|r| plan.match_stage(&r.stage_tag) == Some(temporal))
            .unwrap()
            .stage_tag
            .clone();
        // per-run means of the temporal group stay near OSC_SHIFT, far
        // below the oscillation amplitude itself
        for chunk in records.chunks(cfg.run_len) {
            if chunk[0].stage_tag != tag_of_temporal {
                continue;
            }
            for &j in group {
                let mean: f64 =
                    chunk.iter().map(|r| r.features[j]).sum::<f64>() / chunk.len() as f64;
                assert!(
                    mean.abs() < OSC_AMP,
                    "window mean {mean} should hide the oscillation"
                );
                let amp: f64 = chunk
                    .iter()
                    .map(|r| r.features[j].abs())
                    .sum::<f64>()
                    / chunk.len() as f64;
                assert!(amp > 1.0, "per-record magnitude stays large");
            }
        }
    }
}
