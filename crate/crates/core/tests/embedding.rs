use easytune::embedkit::{self, Corpus, EmbeddingModel, SkipGramConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 8] = ["cat", "dog", "fish", "bird", "tree", "rock", "lake", "hill"];

fn corpus(seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Corpus::default();
    for i in 0..60 {
        let len = rng.gen_range(3..9);
        let tokens = (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string()).collect();
        corpus.push(format!("doc{i}"), tokens);
    }
    corpus
}

fn trained(seed: u64) -> EmbeddingModel {
    let cfg = SkipGramConfig {
        dim: 6,
        window: 2,
        negatives: 3,
        epochs: 2,
        min_count: 1,
        seed,
        ..SkipGramConfig::default()
    };
    embedkit::train_skipgram(&corpus(seed), &cfg).unwrap()
}

#[test]
fn softmax_normalizes_on_trained_models() {
    for seed in 0..10 {
        let model = trained(seed);
        for center in model.words() {
            let total: f64 = model
                .words()
                .iter()
                .map(|t| embedkit::softmax_prob(&model, center, t).unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "seed {seed}, center {center}: {total}");
        }
    }
}

fn token_list() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(
        prop_oneof![
            4 => proptest::sample::select(WORDS.to_vec()).prop_map(String::from),
            1 => Just("unseen".to_string()),
        ],
        0..12,
    )
}

proptest! {
    #[test]
    fn unit_vector_is_additive_over_token_union(a in token_list(), b in token_list()) {
        let model = trained(3);
        let joined: Vec<String> = a.iter().chain(&b).cloned().collect();
        let whole = embedkit::ku_vector(&model, &joined);
        let parts: Vec<f64> = embedkit::ku_vector(&model, &a)
            .iter()
            .zip(embedkit::ku_vector(&model, &b))
            .map(|(x, y)| x + y)
            .collect();
        prop_assert_eq!(whole.len(), model.dim());
        for (w, p) in whole.iter().zip(&parts) {
            prop_assert!((w - p).abs() < 1e-9 * (1.0 + w.abs()), "{} vs {}", w, p);
        }
    }
}
