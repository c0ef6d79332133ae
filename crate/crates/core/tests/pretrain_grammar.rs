use dart_core::mlm::{build_vocab, evaluate_masked, pretrain, Corpus, MlmConfig, PretrainConfig, ToyMlmModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model() -> ToyMlmModel {
    let vocab = build_vocab(&["[UNK]", "a", "b"], 2).unwrap();
    let mut cfg = MlmConfig::toy(vocab.len());
    cfg.d_model = 32;
    cfg.n_heads = 2;
    cfg.d_ff = 64;
    cfg.max_len = 16;
    ToyMlmModel::new(cfg, vocab, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
}

#[test]
fn cyclic_grammar_is_learned_and_loss_trends_down() {
    let mut m = model();
    let v = m.vocab().clone();
    let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
    let train = Corpus::cyclic(&[a, b], 400, 10, 1);
    let held = Corpus::cyclic(&[a, b], 100, 10, 2);

    // the grammar is a deterministic bigram, so the lookup oracle is perfect
    for s in held.sentences() {
        for w in s.windows(2) {
            assert_eq!(w[1], if w[0] == a { b } else { a });
        }
    }

    let history = pretrain(&mut m, &train, &PretrainConfig::new(500, 16, 3e-3, 7)).unwrap();
    assert_eq!(history.step_losses.len(), 500);
    let eval = evaluate_masked(&m, &held, 0.15, 11).unwrap();
    assert!(eval.accuracy > 0.9, "held-out accuracy {}", eval.accuracy);

    let window: Vec<f32> = history
        .step_losses
        .chunks(100)
        .map(|c| c.iter().sum::<f32>() / c.len() as f32)
        .collect();
    for w in window.windows(2) {
        assert!(w[1] <= w[0], "100-step mean loss rose: {window:?}");
    }
}
