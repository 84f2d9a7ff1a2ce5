//! Property tests for invariants that hold over whole input
//! families rather than single examples.

use proptest::prelude::*;

use curricuids::autodiff::Tape;
use curricuids::compress::quantize;
use curricuids::data::split::{stratified_split_indices, SplitSpec};
use curricuids::data::table::{clean_table, Cell, RawTable};
use curricuids::model::{IdsModel, ModelConfig};
use curricuids::params::ParamId;
use curricuids::tensor::Tensor;
use curricuids::xai::{select_drop_set, ImportanceSummary};

fn cell_strategy() -> impl Strategy<Value = Cell> {
    prop_oneof![
        3 => (-50.0f64..50.0).prop_map(Cell::Number),
        1 => prop_oneof![Just("tcp"), Just("udp"), Just("icmp")]
            .prop_map(|s| Cell::Text(s.to_string())),
        1 => Just(Cell::Missing),
    ]
}

fn table_strategy() -> impl Strategy<Value = RawTable> {
    (2usize..5, 1usize..24).prop_flat_map(|(n_cols, n_rows)| {
        let row = proptest::collection::vec(cell_strategy(), n_cols);
        proptest::collection::vec(row, n_rows).prop_map(move |mut rows| {
            for r in &mut rows {
                let tag = if matches!(r[n_cols - 1], Cell::Number(v) if v > 0.0) {
                    "attack"
                } else {
                    "normal"
                };
                r[n_cols - 1] = Cell::Text(tag.to_string());
            }
            RawTable {
                column_names: (0..n_cols).map(|c| format!("c{c}")).collect(),
                rows,
                label_column: format!("c{}", n_cols - 1),
            }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// clean(clean(t)) == clean(t) whenever cleaning succeeds at all.
    #[test]
    fn cleaning_is_idempotent(table in table_strategy(), z in 1.0f64..6.0) {
        if let Ok(once) = clean_table(&table, z) {
            let twice = clean_table(&once, z).expect("second clean succeeds");
            prop_assert_eq!(once, twice);
        }
    }

    /// Splits partition the index set and per-class counts stay within one
    /// sample of the exact proportions.
    #[test]
    fn split_partitions_with_proportions(
        n0 in 2usize..60,
        n1 in 2usize..60,
        seed in 0u64..1000,
    ) {
        let mut labels = vec![0u8; n0];
        labels.extend(vec![1u8; n1]);
        let spec = SplitSpec { seed, ..Default::default() };
        let s = stratified_split_indices(&labels, &spec).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        let expect: Vec<usize> = (0..labels.len()).collect();
        prop_assert_eq!(all, expect);
        for class in [0u8, 1] {
            let n_class = labels.iter().filter(|&&y| y == class).count() as f64;
            let test_c = s.test.iter().filter(|&&i| labels[i] == class).count() as f64;
            prop_assert!((test_c - 0.2 * n_class).abs() <= 1.0);
        }
    }

    /// Quantization round-trip error stays within scale/2 for arbitrary
    /// weight values.
    #[test]
    fn quantization_round_trip_bound(values in proptest::collection::vec(-20.0f64..20.0, 1..64)) {
        let mut cfg = ModelConfig::tiny(4, 2);
        cfg.toggles.use_conv = false;
        cfg.toggles.use_encoder = false;
        cfg.gru_layers = 0;
        cfg.lstm_layers = 0;
        let mut model: IdsModel<f64> = IdsModel::build(cfg).unwrap();
        // overwrite the mask weights with the arbitrary values (padded)
        let id = model.params.id_of("feature_mask.w").unwrap();
        let n = model.params.get(id).value.numel();
        let mut data = values.clone();
        data.resize(n, 0.0);
        model.params.get_mut(ParamId(id.0)).value = Tensor::new(vec![4, 4], data).unwrap();
        let qm = quantize(&model).unwrap();
        for ((_, p), t) in model.params.iter().zip(&qm.tensors) {
            for (orig, deq) in p.value.data().iter().zip(t.dequantized()) {
                prop_assert!((orig - deq).abs() <= t.scale / 2.0 + 1e-12);
            }
        }
    }

    /// dropset(t1) is a subset of dropset(t2) whenever t1 < t2.
    #[test]
    fn drop_set_monotone(
        weights in proptest::collection::vec(-0.5f64..0.5, 2..12),
        t1 in -0.4f64..0.4,
        delta in 0.0f64..0.4,
    ) {
        let summary = ImportanceSummary {
            selection_frequency: vec![1.0; weights.len()],
            mean_weights: weights,
            n_instances: 5,
        };
        let t2 = t1 + delta;
        let (d1, _) = select_drop_set(&summary, t1);
        let (d2, _) = select_drop_set(&summary, t2);
        for j in &d1 {
            prop_assert!(d2.contains(j), "t1 {} t2 {} feature {}", t1, t2, j);
        }
    }

    /// Binary cross-entropy is non-negative for any probabilities/labels.
    #[test]
    fn bce_is_non_negative(
        probs in proptest::collection::vec(0.0f64..1.0, 1..16),
        label_bits in proptest::collection::vec(any::<bool>(), 1..16),
    ) {
        let n = probs.len().min(label_bits.len());
        let mut tape: Tape<f64> = Tape::new();
        let p = tape.constant(Tensor::new(vec![n], probs[..n].to_vec()).unwrap());
        let labels: Vec<f64> = label_bits[..n].iter().map(|&b| b as u8 as f64).collect();
        let loss = tape.bce_loss(p, &labels).unwrap();
        prop_assert!(tape.value(loss).item() >= 0.0);
    }
}
