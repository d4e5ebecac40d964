use proptest::prelude::*;
use pseudorel_core::dense::{
    batch_gradient, batch_loss, cosine_lr, dense_search, encode, ranknet_loss, rsv_dense, train, train_step,
    EncoderParams, Gradient, MAX_SEQ_LEN,
};
use pseudorel_core::labeling::{DevQuery, DevSet};
use pseudorel_core::{
    Document, DocumentStore, DualEncoder, EncoderConfig, Error, Query, Similarity, TokenizerConfig, TrainConfig,
    Triplet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tk() -> TokenizerConfig {
    TokenizerConfig::default()
}

fn small_model(seed: u64, similarity: Similarity, tied: bool) -> DualEncoder {
    DualEncoder::random(&EncoderConfig {
        dim: 4,
        buckets: 32,
        hash_seed: seed,
        init_seed: seed,
        tied,
        similarity,
    })
    .unwrap()
}

const WORDS: [&str; 12] = [
    "alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta", "iota", "kappa", "lambda", "mu",
];

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..6);
    (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_batch(rng: &mut ChaCha8Rng) -> Vec<Triplet> {
    (0..rng.gen_range(1..4))
        .map(|_| Triplet::new(&random_text(rng), &random_text(rng), &random_text(rng)))
        .collect()
}

#[test]
fn encode_is_mean_of_hashed_rows() {
    // Find a hash seed that keeps the two tokens in distinct buckets.
    let (params, ba, bb) = (0..)
        .find_map(|seed| {
            let p = EncoderParams::from_table(2, 4, seed, vec![0.0; 8]).unwrap();
            let (a, b) = (p.bucket("a"), p.bucket("b"));
            (a != b).then_some((p, a, b))
        })
        .unwrap();
    let mut params = params;
    params.row_mut(ba).copy_from_slice(&[1.0, 0.0]);
    params.row_mut(bb).copy_from_slice(&[0.0, 1.0]);
    assert_eq!(encode(&params, &tk(), "a b"), [0.5, 0.5]);
    assert_eq!(encode(&params, &tk(), "a a b"), [2.0 / 3.0, 1.0 / 3.0]);
    assert_eq!(encode(&params, &tk(), ""), [0.0, 0.0]);
    assert_eq!(encode(&params, &tk(), " ,. "), [0.0, 0.0]);
}

#[test]
fn encode_truncates_and_is_deterministic() {
    let p = EncoderParams::new_random(8, 512, 3, 4).unwrap();
    let long: Vec<String> = (0..MAX_SEQ_LEN + 50).map(|i| format!("w{i}")).collect();
    let head = long[..MAX_SEQ_LEN].join(" ");
    assert_eq!(encode(&p, &tk(), &long.join(" ")), encode(&p, &tk(), &head));
    assert_eq!(encode(&p, &tk(), "x y"), encode(&p, &tk(), "x y"));
    assert_eq!(p, EncoderParams::new_random(8, 512, 3, 4).unwrap());
}

#[test]
fn rsv_dense_examples() {
    assert_eq!(rsv_dense(Similarity::Dot, &[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    assert_eq!(rsv_dense(Similarity::Dot, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert!((rsv_dense(Similarity::Cosine, &[2.0, 0.0], &[3.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(rsv_dense(Similarity::Cosine, &[0.0, 0.0], &[3.0, 0.0]).unwrap(), 0.0);
    assert!(matches!(
        rsv_dense(Similarity::Dot, &[1.0], &[1.0, 2.0]),
        Err(Error::DimensionMismatch { left: 1, right: 2 })
    ));
}

#[test]
fn ranknet_values() {
    assert!((ranknet_loss(0.3, 0.3, 1.0) - std::f64::consts::LN_2).abs() <= 1e-12);
    // tests/oracles/frozen_values.py
    assert!((ranknet_loss(2.0, 0.0, 1.0) - 0.126_928_011_042_972_5).abs() < 1e-15);
    let big = ranknet_loss(-1000.0, 0.0, 1.0);
    assert!((big - 1000.0).abs() < 1e-9);
    assert!(ranknet_loss(1000.0, 0.0, 1.0) >= 0.0);
    let mut prev = f64::INFINITY;
    for i in -40..=40 {
        let l = ranknet_loss(f64::from(i) * 0.5, 0.0, 1.0);
        assert!(l < prev);
        prev = l;
    }
}

#[test]
fn cosine_schedule() {
    assert_eq!(cosine_lr(0.1, 0, 100), 0.1);
    assert!((cosine_lr(0.1, 50, 100) - 0.05).abs() < 1e-15);
    assert!(cosine_lr(0.1, 100, 100).abs() < 1e-15);
}

fn perturbed_loss(model: &DualEncoder, batch: &[Triplet], doc: bool, idx: usize, h: f64) -> f64 {
    let mut m = model.clone();
    let table = if doc {
        m.doc.as_mut().unwrap().table_mut()
    } else {
        m.query.table_mut()
    };
    table[idx] += h;
    batch_loss(&m, &tk(), batch, 1.0)
}

fn check_side(
    model: &DualEncoder,
    batch: &[Triplet],
    grad: &std::collections::BTreeMap<usize, Vec<f64>>,
    doc: bool,
) -> f64 {
    let dim = model.dim();
    let buckets = model.query.buckets();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for b in 0..buckets {
        for j in 0..dim {
            let idx = b * dim + j;
            let numeric =
                (perturbed_loss(model, batch, doc, idx, h) - perturbed_loss(model, batch, doc, idx, -h)) / (2.0 * h);
            let analytic = grad.get(&b).map_or(0.0, |row| row[j]);
            let scale = analytic.abs().max(numeric.abs());
            let err = if scale < 1e-8 {
                0.0
            } else {
                (analytic - numeric).abs() / scale
            };
            worst = worst.max(err);
        }
    }
    worst
}

/// Worst relative error between the analytic gradient and central
/// differences over every parameter of the model.
fn max_gradient_error(model: &DualEncoder, batch: &[Triplet]) -> f64 {
    let (_, grad): (f64, Gradient) = batch_gradient(model, &tk(), batch, 1.0);
    let mut worst = check_side(model, batch, &grad.query, false);
    if !model.is_tied() {
        worst = worst.max(check_side(model, batch, &grad.doc, true));
    } else {
        assert!(grad.doc.is_empty());
    }
    worst
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for seed in 0..20u64 {
        let similarity = if seed % 2 == 0 {
            Similarity::Dot
        } else {
            Similarity::Cosine
        };
        let tied = seed % 4 < 2;
        let model = small_model(seed, similarity, tied);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let batch = random_batch(&mut rng);
        let err = max_gradient_error(&model, &batch);
        assert!(err <= 1e-4, "seed {seed} ({similarity:?}, tied={tied}): {err}");
    }
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let mut model = small_model(1, Similarity::Dot, false);
    let before = model.clone();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..Default::default()
    };
    let batch = vec![Triplet::new("alpha beta", "alpha", "gamma")];
    train_step(&mut model, &tk(), &batch, &cfg, 0).unwrap();
    assert_eq!(model, before);
}

#[test]
fn frozen_doc_table_is_untouched() {
    let mut model = small_model(2, Similarity::Cosine, false);
    let doc_before = model.doc.clone().unwrap();
    let query_before = model.query.clone();
    let cfg = TrainConfig {
        freeze_doc_encoder: true,
        ..Default::default()
    };
    let batch = vec![Triplet::new("alpha beta", "alpha delta", "gamma")];
    for step in 0..10 {
        train_step(&mut model, &tk(), &batch, &cfg, step).unwrap();
    }
    let doc_bits: Vec<u64> = model
        .doc
        .as_ref()
        .unwrap()
        .table()
        .iter()
        .map(|x| x.to_bits())
        .collect();
    let before_bits: Vec<u64> = doc_before.table().iter().map(|x| x.to_bits()).collect();
    assert_eq!(doc_bits, before_bits);
    assert_ne!(model.query, query_before);
}

#[test]
fn freezing_a_tied_model_is_rejected() {
    let mut model = small_model(2, Similarity::Dot, true);
    let cfg = TrainConfig {
        freeze_doc_encoder: true,
        ..Default::default()
    };
    let batch = vec![Triplet::new("a", "b", "c")];
    assert!(train_step(&mut model, &tk(), &batch, &cfg, 0).is_err());
}

#[test]
fn sgd_reduces_loss_on_a_fixed_batch() {
    let mut model = small_model(5, Similarity::Dot, true);
    let batch = vec![
        Triplet::new("alpha beta", "alpha beta gamma", "delta eps"),
        Triplet::new("zeta eta", "zeta eta theta", "iota kappa"),
    ];
    let cfg = TrainConfig {
        learning_rate: 0.5,
        steps: 200,
        ..Default::default()
    };
    let first = batch_loss(&model, &tk(), &batch, 1.0);
    for step in 0..200 {
        train_step(&mut model, &tk(), &batch, &cfg, step).unwrap();
    }
    assert!(batch_loss(&model, &tk(), &batch, 1.0) < first);
}

fn tiny_corpus() -> DocumentStore {
    DocumentStore::from_documents(
        [
            "alpha beta",
            "gamma delta",
            "eps zeta",
            "alpha gamma",
            "",
            "mu lambda kappa",
        ]
        .iter()
        .enumerate()
        .map(|(i, t)| Document::new(format!("d{i}"), "", *t)),
    )
    .unwrap()
}

fn tiny_dev() -> DevSet {
    DevSet {
        n_pos: 1,
        n_neg: 2,
        queries: vec![DevQuery {
            query_id: "q".into(),
            query_text: "alpha".into(),
            positives: vec!["d0".into()],
            negatives: vec!["d1".into(), "d2".into()],
        }],
    }
}

#[test]
fn zero_steps_returns_initial_model() {
    let model = small_model(3, Similarity::Dot, true);
    let cfg = TrainConfig {
        steps: 0,
        ..Default::default()
    };
    let triplets = vec![Triplet::new("alpha", "alpha beta", "gamma delta")];
    let report = train(model.clone(), &tk(), &triplets, &tiny_dev(), &tiny_corpus(), &cfg).unwrap();
    assert_eq!(report.best.model, model);
    assert_eq!(report.best.step, 0);
    assert_eq!(report.evals.len(), 1);
    assert!(report.losses.is_empty());
}

#[test]
fn training_is_deterministic_and_keeps_best_checkpoint() {
    let model = small_model(4, Similarity::Dot, true);
    let cfg = TrainConfig {
        steps: 30,
        eval_every: 10,
        batch_size: 2,
        learning_rate: 0.3,
        seed: 9,
        ..Default::default()
    };
    let triplets = vec![
        Triplet::new("alpha", "alpha beta", "gamma delta"),
        Triplet::new("alpha", "alpha beta", "eps zeta"),
        Triplet::new("gamma", "gamma delta", "eps zeta"),
    ];
    let a = train(model.clone(), &tk(), &triplets, &tiny_dev(), &tiny_corpus(), &cfg).unwrap();
    let b = train(model, &tk(), &triplets, &tiny_dev(), &tiny_corpus(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.evals.iter().map(|e| e.0).collect::<Vec<_>>(), [0, 10, 20, 30]);
    let max = a.evals.iter().map(|e| e.1).fold(f64::MIN, f64::max);
    assert_eq!(a.best.dev_ndcg, max);
    let first_max = a.evals.iter().find(|e| e.1 == max).unwrap().0;
    assert_eq!(a.best.step, first_max);
    assert_eq!(a.losses.len(), 30);
}

#[test]
fn training_rejects_empty_triplets() {
    let model = small_model(4, Similarity::Dot, true);
    assert!(train(model, &tk(), &[], &tiny_dev(), &tiny_corpus(), &TrainConfig::default()).is_err());
}

#[test]
fn dense_search_matches_per_document_scoring() {
    let store = tiny_corpus();
    for similarity in [Similarity::Dot, Similarity::Cosine] {
        let model = small_model(6, similarity, false);
        let q = Query::new("q", "alpha gamma");
        let ranking = dense_search(&model, &tk(), &store, &q, 100).unwrap();
        let qv = model.encode_query(&tk(), &q.text);
        let mut expected: Vec<(String, f64)> = store
            .iter()
            .map(|d| {
                let dv = model.encode_doc(&tk(), &d.full_text());
                (d.id.clone(), rsv_dense(similarity, &qv, &dv).unwrap())
            })
            .collect();
        expected.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let got: Vec<(String, f64)> = ranking.entries.iter().map(|e| (e.doc_id.clone(), e.score)).collect();
        assert_eq!(got, expected);
        assert_eq!(dense_search(&model, &tk(), &store, &q, 2).unwrap().entries.len(), 2);
    }
}

#[test]
fn empty_query_under_cosine_ranks_by_doc_id() {
    let store = tiny_corpus();
    let model = small_model(7, Similarity::Cosine, true);
    let ranking = dense_search(&model, &tk(), &store, &Query::new("q", "..."), 100).unwrap();
    assert!(ranking.entries.iter().all(|e| e.score == 0.0));
    assert_eq!(
        ranking.doc_ids().collect::<Vec<_>>(),
        ["d0", "d1", "d2", "d3", "d4", "d5"]
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn ranking_is_scale_invariant(seed in 0u64..1000, c in 0.1f64..10.0, cosine in any::<bool>()) {
        let similarity = if cosine { Similarity::Cosine } else { Similarity::Dot };
        let store = tiny_corpus();
        let model = small_model(seed, similarity, false);
        let mut scaled = model.clone();
        scaled.scale(c);
        let q = Query::new("q", "alpha beta mu");
        let a = dense_search(&model, &tk(), &store, &q, 100).unwrap();
        let b = dense_search(&scaled, &tk(), &store, &q, 100).unwrap();
        // Scores can only collide after scaling if they nearly tied before.
        let distinct = a.entries.windows(2).all(|w| (w[0].score - w[1].score).abs() > 1e-9);
        if distinct {
            prop_assert_eq!(a.doc_ids().collect::<Vec<_>>(), b.doc_ids().collect::<Vec<_>>());
        }
    }
}
