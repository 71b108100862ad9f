use proptest::prelude::*;

use tgt::config::ModelConfig;
use tgt::decoder::DecodeOptions;
use tgt::metrics::{evaluate, levenshtein, precision_recall_f1, Prediction};
use tgt::synthdata::{generate_dataset, trailer_length, GeneratorConfig};
use tgt::training::{Checkpoint, TrainConfig, Trainer};

fn tiny_data() -> GeneratorConfig {
    GeneratorConfig { d: 8, n_range: [10, 14], m_range: [2, 4], clusters: 3, ..Default::default() }
}

fn tiny_model() -> ModelConfig {
    ModelConfig { d_model: 8, heads: 2, ff_dim: 16, context_layers: 1, decoder_layers: 1, max_positions: 32, ..ModelConfig::desk() }
}

proptest! {
    #[test]
    fn levenshtein_is_a_metric(a in prop::collection::vec(0u8..4, 0..8), b in prop::collection::vec(0u8..4, 0..8), c in prop::collection::vec(0u8..4, 0..8)) {
        let d = |x: &[u8], y: &[u8]| levenshtein(x, y);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert!(d(&a, &b) >= a.len().abs_diff(b.len()));
        prop_assert!(d(&a, &b) <= a.len().max(b.len()));
    }

    #[test]
    fn scores_stay_in_the_unit_interval(pred in prop::collection::vec(1usize..10, 1..8), gt in prop::collection::vec(prop::option::of(1usize..10), 1..8)) {
        let s = precision_recall_f1(&pred, &gt, 1, None).unwrap();
        for v in [s.precision, s.recall, s.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(s.hits <= pred.len().min(gt.len()));
    }

    #[test]
    fn trailer_length_is_monotone_and_in_range(n0 in 5usize..50, span in 0usize..100, m0 in 1usize..5, mspan in 0usize..5) {
        let m1 = (m0 + mspan).min(n0);
        let cfg = GeneratorConfig { n_range: [n0, n0 + span], m_range: [m0.min(m1), m1], ..Default::default() };
        let lens: Vec<usize> = (n0..=n0 + span).map(|n| trailer_length(&cfg, n)).collect();
        prop_assert!(lens.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(lens.iter().all(|&m| (cfg.m_range[0]..=cfg.m_range[1]).contains(&m)));
    }
}

#[test]
fn checkpoint_bytes_round_trip_after_training() {
    let (examples, _) = generate_dataset(&tiny_data(), 6).unwrap();
    let mut t = Trainer::new(tiny_model(), TrainConfig { total_steps: Some(3), batch_size: 2, ..Default::default() }).unwrap();
    t.run(&examples, None, |_| {}).unwrap();
    let ck = t.checkpoint();
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.step, 3);
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn masked_decode_never_repeats_and_scores_consistently() {
    let (examples, _) = generate_dataset(&tiny_data(), 4).unwrap();
    let t = Trainer::new(tiny_model(), TrainConfig::default()).unwrap();
    let preds: Vec<Prediction> = examples
        .iter()
        .map(|e| {
            let opts = DecodeOptions { no_repeat: true, topk: 3, ..DecodeOptions::new(e.movie.len()) };
            let d = t.model.decode_autoregressive(&t.store, &e.movie, None, &opts).unwrap();
            let mut seen = d.matched_indices.clone();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), d.matched_indices.len());
            Prediction::from(&d)
        })
        .collect();
    let report = evaluate("untrained", &examples, &preds, &[1, 3]).unwrap();
    assert!(report.by_k[0].f1 <= report.by_k[1].f1);
}

#[test]
fn generated_corpus_is_seed_stable() {
    let a = generate_dataset(&tiny_data(), 5).unwrap();
    let b = generate_dataset(&tiny_data(), 5).unwrap();
    assert_eq!(a.0, b.0);
    let other = generate_dataset(&GeneratorConfig { seed: 1, ..tiny_data() }, 5).unwrap();
    assert_ne!(a.0[0].movie, other.0[0].movie);
}
