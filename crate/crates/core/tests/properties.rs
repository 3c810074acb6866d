use lanechange::evaluation::{confusion, metrics};
use lanechange::events::Label;
use lanechange::features::{Channel, FeatureConfig, FeatureSequence, NeighborSlot, Normalizer};
use lanechange::nn::{init_params, NetworkDims, NetworkParams};
use lanechange::training::rmsprop_update;
use proptest::prelude::*;

fn labels() -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec((0.0f64..=1.0, any::<bool>()), 0..60)
}

proptest! {
    #[test]
    fn metrics_match_a_direct_tally(pairs in labels(), threshold in 0.05f64..0.95) {
        let probs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<Label> = pairs.iter().map(|p| Label::from_bool(p.1)).collect();
        let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
        for &(p, y) in &pairs {
            match (p >= threshold, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let m = metrics(&confusion(&probs, &ys, threshold).unwrap());
        prop_assert_eq!((m.counts.tp, m.counts.fp, m.counts.tn, m.counts.fn_), (tp, fp, tn, fn_));
        let n = pairs.len();
        prop_assert_eq!(m.accuracy, (n > 0).then(|| (tp + tn) as f64 / n as f64));
        prop_assert_eq!(m.precision, (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64));
        prop_assert_eq!(m.recall, (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64));
    }

    #[test]
    fn feature_width_is_slots_times_channels(
        slot_mask in 1u8..=255,
        channel_mask in 1u8..8,
        n in 1usize..16,
    ) {
        let slots: Vec<NeighborSlot> = NeighborSlot::ALL.iter().enumerate().filter(|(i, _)| slot_mask >> i & 1 == 1).map(|p| *p.1).collect();
        let channels: Vec<Channel> = Channel::ALL.iter().enumerate().filter(|(i, _)| channel_mask >> i & 1 == 1).map(|p| *p.1).collect();
        let cfg = FeatureConfig::new(&slots, &channels).with_n(n).canonicalized().unwrap();
        prop_assert_eq!(cfg.width(), slots.len() * channels.len());
        prop_assert_eq!(cfg.total(), n * slots.len() * channels.len());
    }

    #[test]
    fn normalized_training_data_lies_in_unit_box(
        rows in prop::collection::vec(prop::collection::vec(-500.0f64..500.0, 6), 2..12),
    ) {
        let seqs: Vec<FeatureSequence<f64>> = rows
            .chunks(2)
            .filter(|c| c.len() == 2)
            .map(|c| FeatureSequence::new(2, 6, c.concat(), Label::Keep).unwrap())
            .collect();
        prop_assume!(!seqs.is_empty());
        let norm = Normalizer::fit(&seqs).unwrap();
        for s in &seqs {
            for v in norm.apply(s).unwrap().values {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn rmsprop_matches_scalar_formula(
        g in prop::collection::vec(-10.0f64..10.0, 1..20),
        s0 in 0.0f64..5.0,
        lr in 1e-5f64..1e-1,
    ) {
        let mut p = vec![0.5; g.len()];
        let mut s = vec![s0; g.len()];
        rmsprop_update(&mut p, &g, &mut s, lr, 0.9, 1e-8);
        for (k, &gk) in g.iter().enumerate() {
            let s_ref = 0.9 * s0 + 0.1 * gk * gk;
            prop_assert!((s[k] - s_ref).abs() <= 1e-12 * s_ref.max(1.0));
            let p_ref = 0.5 - lr * gk / (s_ref.sqrt() + 1e-8);
            prop_assert!((p[k] - p_ref).abs() <= 1e-12);
        }
    }

    #[test]
    fn flat_parameters_round_trip(width in 1usize..8, hidden in 1usize..6, seed in any::<u64>()) {
        let dims = NetworkDims::new(width, hidden);
        let p: NetworkParams<f64> = init_params(seed, &dims);
        let flat = p.to_flat();
        prop_assert_eq!(flat.len(), p.len());
        prop_assert_eq!(NetworkParams::from_flat(&dims, &flat).unwrap(), p);
    }
}
