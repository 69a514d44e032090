use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xattr_core::eval::planted_instance;
use xattr_core::model::vocab::{residue_letter, PAD};
use xattr_core::model::{
    forward_with_capture, score_gradients, sequence_score, tokenize, AttentionKind, Chain, MhcClass, ModelConfig,
    TriSequenceInput, WeightSet,
};
use xattr_core::tensor::Matrix;

fn random_seq(rng: &mut impl Rng, len: usize) -> String {
    let aa = b"ACDEFGHIKLMNPQRSTVWY";
    (0..len).map(|_| aa[rng.gen_range(0..20)] as char).collect()
}

fn small_model(rng: &mut ChaCha8Rng, seed: u64) -> WeightSet {
    let cfg = ModelConfig {
        n_enc_layers: rng.gen_range(1..=2),
        n_dec_layers: rng.gen_range(1..=2),
        n_heads: 2,
        d_model: [4, 8, 12][rng.gen_range(0..3)],
        d_ff: 8,
        max_len: 12,
        seed,
        ..ModelConfig::default()
    };
    WeightSet::init_random(&cfg).unwrap()
}

fn random_input(rng: &mut ChaCha8Rng, max: usize) -> TriSequenceInput {
    let (a, b, e) = (rng.gen_range(1..=max), rng.gen_range(1..=max), rng.gen_range(1..=max));
    let (a, b, e) = (random_seq(rng, a), random_seq(rng, b), random_seq(rng, e));
    TriSequenceInput::from_sequences(&a, &b, &e, MhcClass::II).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn captured_attention_is_row_stochastic_with_declared_shapes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = small_model(&mut rng, seed);
        let input = random_input(&mut rng, 6);
        let b = forward_with_capture(&input, &w).unwrap();
        for site in &b.sites {
            let rows = input.tokens(site.id.query).len();
            let cols = input.tokens(site.id.key).len();
            prop_assert_eq!(site.id.kind == AttentionKind::Cross, site.id.query != site.id.key);
            for h in &site.heads {
                prop_assert_eq!(h.a.shape(), (rows, cols));
                for s in h.a.row_sums() {
                    prop_assert!((s - 1.0).abs() < 1e-9, "{} row sum {}", site.id, s);
                }
            }
        }
    }

    #[test]
    fn padding_suffix_leaves_score_unchanged(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = small_model(&mut rng, seed);
        let input = random_input(&mut rng, 6);
        let mut padded = input.clone();
        for chain in Chain::ALL {
            let extra = rng.gen_range(0..=12 - input.tokens(chain).len());
            padded.tokens_mut(chain).extend(std::iter::repeat(PAD).take(extra));
        }
        let (s0, s1) = (sequence_score(&input, &w).unwrap(), sequence_score(&padded, &w).unwrap());
        prop_assert!((s0 - s1).abs() < 1e-9, "{} vs {}", s0, s1);
    }
}

#[test]
fn gradient_steps_lower_the_loss() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = small_model(&mut rng, seed);
        let input = random_input(&mut rng, 6);
        let start = sequence_score(&input, &w).unwrap();
        for _ in 0..5 {
            let (_, grads) = score_gradients(&input, &w).unwrap();
            for (name, g) in grads {
                let m = w.get_mut(&name).unwrap();
                let stepped = m.add(&g.scale(0.05)).unwrap();
                *m = stepped;
            }
        }
        let end = sequence_score(&input, &w).unwrap();
        assert!(end > start, "seed {seed}: loss {} -> {}", -start, -end);
    }
}

#[test]
fn uniform_logits_score_minus_log_vocab() {
    let cfg = ModelConfig::default();
    let mut w = WeightSet::init_random(&cfg).unwrap();
    w.set("epitope.unembed", Matrix::zeros(cfg.d_model, cfg.vocab_size)).unwrap();
    let input = TriSequenceInput::from_sequences("CASSF", "CAVW", "GILGFVFTL", MhcClass::I).unwrap();
    let s = sequence_score(&input, &w).unwrap();
    assert!((s + (cfg.vocab_size as f64).ln()).abs() < 1e-12, "{s}");
}

#[test]
fn capture_is_deterministic_and_skips_pad_targets() {
    let w = WeightSet::init_random(&ModelConfig::default().with_seed(9)).unwrap();
    let mut input = TriSequenceInput::from_sequences("CASSF", "CAVW", "GILGF", MhcClass::I).unwrap();
    input.epitope.extend([PAD, PAD]);
    let a = forward_with_capture(&input, &w).unwrap();
    let b = forward_with_capture(&input, &w).unwrap();
    assert_eq!(a, b);
    let n = input.epitope.len();
    assert_eq!(a.target_log_probs.len(), n);
    // <EOS> and the two padding slots predict padding or nothing.
    assert!(a.target_log_probs[n - 3..].iter().all(Option::is_none));
    assert!(a.target_log_probs[..n - 3].iter().all(Option::is_some));
}

#[test]
fn tokenizer_frames_and_rejects_empty() {
    assert!(tokenize("").is_err());
    assert_eq!(tokenize("ACD").unwrap().len(), 5);
}

#[test]
fn planted_epitope_outscores_a_shuffled_one() {
    let mut wins = 0;
    for seed in 0..100u64 {
        let inst = planted_instance(seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = inst.input.clone();
        let span = shuffled.residue_span(Chain::Epitope);
        let original: String = shuffled.epitope[span.clone()].iter().map(|&t| residue_letter(t).unwrap()).collect();
        loop {
            shuffled.epitope[span.clone()].shuffle(&mut rng);
            let now: String = shuffled.epitope[span.clone()].iter().map(|&t| residue_letter(t).unwrap()).collect();
            if now != original {
                break;
            }
        }
        if sequence_score(&inst.input, &inst.weights).unwrap() > sequence_score(&shuffled, &inst.weights).unwrap() {
            wins += 1;
        }
    }
    assert!(wins >= 95, "planted epitope won in {wins}/100 seeds");
}
