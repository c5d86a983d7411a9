mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use relmark_core::classifier::{
    load_model, save_model, softmax, train_with_vocabulary, FeatureVector,
};
use relmark_core::corpus::{
    compute_stats, parse_dataset, serialize_dataset, validate_instance, FieldMapping, ParseOptions,
};
use relmark_core::eval::{
    accuracy, compare_models, confusion, micro_f1, per_class_f1, strict_f1, Score,
};
use relmark_core::classifier::ExternalScoreFile;
use relmark_core::router::{merge_predictions, pair_key, partition_dataset};
use relmark_core::*;

const TYPES: [&str; 5] = ["ORG", "PERS", "DATE", "GPE", "MONEY"];

prop_compose! {
    fn arb_instance()(
        n in 2usize..12,
        seed in any::<u64>(),
        st in 0usize..5,
        ot in 0usize..5,
        rel in 0usize..4,
    ) -> TokenizedInstance {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // two disjoint non-empty spans
        let a = rng.gen_range(0..n - 1);
        let b = rng.gen_range(a + 1..n);
        let c = rng.gen_range(b..n);
        let d = rng.gen_range(c + 1..=n);
        let (first, second) = ((a, b), (c, d));
        let (subj, obj) = if rng.gen_bool(0.5) { (first, second) } else { (second, first) };
        TokenizedInstance {
            id: format!("i{seed:x}"),
            tokens: (0..n).map(|i| format!("t{}", (seed >> (i % 60)) % 7)).collect(),
            subj: EntitySpan::new(subj.0, subj.1, EntityType::new(TYPES[st]).unwrap()),
            obj: EntitySpan::new(obj.0, obj.1, EntityType::new(TYPES[ot]).unwrap()),
            relation: Some(RelationLabel::new(["no_relation", "r1", "r2", "r3"][rel])),
        }
    }
}

fn vocab_of(names: &[String]) -> LabelVocabulary {
    LabelVocabulary::new(
        names.iter().map(|n| RelationLabel::new(n.as_str())),
        Some(&RelationLabel::no_relation()),
    )
    .unwrap()
}

fn to_labels(v: &[String]) -> Vec<RelationLabel> {
    v.iter().map(|s| RelationLabel::new(s.as_str())).collect()
}

proptest! {
    #[test]
    fn generated_instances_are_valid(inst in arb_instance()) {
        prop_assert!(validate_instance(&inst).is_ok());
    }

    #[test]
    fn marker_length_law(inst in arb_instance()) {
        let n = inst.tokens.len();
        let typed = insert_markers(&inst, MarkerScheme::TypedPunct).unwrap();
        prop_assert_eq!(typed.tokens.len(), n + 10);
        let em = insert_markers(&inst, MarkerScheme::EntityMarker).unwrap();
        prop_assert_eq!(em.tokens.len(), n + 4);
        let mask = insert_markers(&inst, MarkerScheme::EntityMask).unwrap();
        prop_assert_eq!(mask.tokens.len() as isize, n as isize + 2 - inst.subj.len() as isize - inst.obj.len() as isize);
        let none = insert_markers(&inst, MarkerScheme::None).unwrap();
        prop_assert_eq!(&none.tokens, &inst.tokens);
    }

    #[test]
    fn markers_preserve_tokens_and_spans(inst in arb_instance()) {
        for (scheme, open, close) in [(MarkerScheme::TypedPunct, 4, 1), (MarkerScheme::EntityMarker, 1, 1)] {
            let m = insert_markers(&inst, scheme).unwrap();
            prop_assert_eq!(&m.tokens[m.subj.start..m.subj.end], &inst.tokens[inst.subj.start..inst.subj.end]);
            prop_assert_eq!(&m.tokens[m.obj.start..m.obj.end], &inst.tokens[inst.obj.start..inst.obj.end]);
            let mut inserted = std::collections::HashSet::new();
            for s in [&m.subj, &m.obj] {
                inserted.extend(s.start - open..s.start);
                inserted.extend(s.end..s.end + close);
            }
            let kept: Vec<&String> = m.tokens.iter().enumerate().filter(|(i, _)| !inserted.contains(i)).map(|(_, t)| t).collect();
            let orig: Vec<&String> = inst.tokens.iter().collect();
            prop_assert_eq!(kept, orig);
        }
    }

    #[test]
    fn typed_punct_marker_counts(inst in arb_instance()) {
        let m = insert_markers(&inst, MarkerScheme::TypedPunct).unwrap();
        for glyph in ["@", "#", "*", "^"] {
            prop_assert_eq!(m.tokens.iter().filter(|t| *t == glyph).count(), 2);
        }
        prop_assert_eq!(&m.tokens[m.subj.start - 4], "@");
        prop_assert_eq!(&m.tokens[m.subj.end], "@");
        prop_assert_eq!(&m.tokens[m.obj.start - 4], "#");
        prop_assert_eq!(&m.tokens[m.obj.end], "#");
    }

    #[test]
    fn marking_twice_is_rejected(inst in arb_instance()) {
        let m = insert_markers(&inst, MarkerScheme::TypedPunct).unwrap();
        let again = TokenizedInstance { tokens: m.tokens, subj: m.subj, obj: m.obj, ..inst };
        prop_assert!(insert_markers(&again, MarkerScheme::TypedPunct).is_err());
    }

    #[test]
    fn parse_serialize_round_trip(data in prop::collection::vec(arb_instance(), 0..8)) {
        let mut buf = Vec::new();
        serialize_dataset(&data, &FieldMapping::default(), &mut buf).unwrap();
        let parsed = parse_dataset(buf.as_slice(), &ParseOptions::default()).unwrap();
        prop_assert_eq!(parsed.instances, data);
    }

    #[test]
    fn stats_histograms_consistent(mut data in prop::collection::vec(arb_instance(), 1..20), rot in 0usize..20) {
        let a = compute_stats(&data).unwrap();
        prop_assert_eq!(a.relations.values().sum::<usize>(), data.len());
        prop_assert_eq!(a.pairs.values().sum::<usize>(), data.len());
        let k = rot % data.len();
        data.rotate_left(k);
        data.reverse();
        let b = compute_stats(&data).unwrap();
        prop_assert_eq!(a.relations, b.relations);
        prop_assert_eq!(a.pairs, b.pairs);
    }

    #[test]
    fn partition_then_merge(data in prop::collection::vec(arb_instance(), 0..30)) {
        // unique ids
        let data: Vec<TokenizedInstance> = data.into_iter().enumerate().map(|(i, mut d)| { d.id = format!("x{i}"); d }).collect();
        let p = partition_dataset(&data, &KeySet::default());
        prop_assert_eq!(p.len(), data.len());
        let mut all: Vec<&str> = p.buckets.iter().flat_map(|(_, b)| b.iter()).chain(&p.residual).map(|i| i.id.as_str()).collect();
        all.sort();
        let mut expect: Vec<&str> = data.iter().map(|i| i.id.as_str()).collect();
        expect.sort();
        prop_assert_eq!(all, expect);
        for (k, b) in &p.buckets {
            prop_assert!(b.iter().all(|i| pair_key(i) == *k));
        }
        prop_assert!(p.residual.iter().all(|i| !KeySet::default().contains(&pair_key(i))));

        let mut per_bucket: Vec<(String, Vec<PredictionRecord>)> = p.buckets.iter()
            .map(|(k, b)| (k.to_string(), b.iter().map(|i| PredictionRecord::new(i.id.clone(), "r1".into())).collect()))
            .collect();
        per_bucket.push(("residual".into(), p.residual.iter().map(|i| PredictionRecord::new(i.id.clone(), "r1".into())).collect()));
        per_bucket.reverse();
        let reference: Vec<String> = data.iter().map(|i| i.id.clone()).collect();
        let merged = merge_predictions(per_bucket, &reference).unwrap();
        let ids: Vec<String> = merged.into_iter().map(|r| r.id).collect();
        prop_assert_eq!(ids, reference);
    }

    #[test]
    fn softmax_shift_invariance(scores in prop::collection::vec(-50.0f64..50.0, 1..10), c in -100.0f64..100.0) {
        let p = softmax(&scores);
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let q = softmax(&shifted);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(relmark_core::classifier::argmax(&p), relmark_core::classifier::argmax(&q));
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn micro_f1_ignores_correct_no(seed in any::<u64>(), extra in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut gold, mut pred, names) = random_case(&mut rng);
        let v = vocab_of(&names);
        let no = RelationLabel::no_relation();
        let before = micro_f1(&confusion(&to_labels(&gold), &to_labels(&pred), &v).unwrap(), &no).unwrap();
        for _ in 0..extra {
            gold.push(NO.into());
            pred.push(NO.into());
        }
        let after = micro_f1(&confusion(&to_labels(&gold), &to_labels(&pred), &v).unwrap(), &no).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn confusion_is_order_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (gold, pred, names) = random_case(&mut rng);
        let v = vocab_of(&names);
        let a = confusion(&to_labels(&gold), &to_labels(&pred), &v).unwrap();
        let mut pairs: Vec<(String, String)> = gold.into_iter().zip(pred).collect();
        pairs.reverse();
        let (g2, p2): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
        let b = confusion(&to_labels(&g2), &to_labels(&p2), &v).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn perfect_predictions_score_one(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (gold, _, names) = random_case(&mut rng);
        let v = vocab_of(&names);
        let cm = confusion(&to_labels(&gold), &to_labels(&gold), &v).unwrap();
        prop_assert_eq!(accuracy(&cm).unwrap(), 1.0);
        for c in per_class_f1(&cm) {
            if c.support > 0 {
                prop_assert_eq!(c.f1, 1.0);
            }
        }
    }
}

#[test]
fn strict_not_above_accuracy_alt_mode_equals_micro() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let (gold, pred, names) = random_case(&mut rng);
        let v = vocab_of(&names);
        let (g, p) = (to_labels(&gold), to_labels(&pred));
        let cm = confusion(&g, &p, &v).unwrap();
        let no = RelationLabel::no_relation();
        if let Score::Defined(s) = strict_f1(&g, &p, &no).unwrap() {
            assert!(s <= accuracy(&cm).unwrap() + 1e-15);
        }
        let (alt, _) = relmark_core::eval::strict_f1_with(&g, &p, &no, relmark_core::eval::StrictMode::NoExcludedMicro).unwrap();
        let micro = micro_f1(&cm, &no).unwrap();
        match (alt, micro) {
            (Score::Defined(a), Score::Defined(b)) => assert!((a - b).abs() < 1e-12),
            (a, b) => assert_eq!(a, b),
        }
    }
}

#[test]
fn compare_models_independent_of_source_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (gold, _, names) = random_case(&mut rng);
    let v = vocab_of(&names);
    let instances: Vec<TokenizedInstance> = gold
        .iter()
        .enumerate()
        .map(|(i, g)| TokenizedInstance {
            id: format!("g{i}"),
            tokens: vec!["a".into(), "b".into()],
            subj: EntitySpan::new(0, 1, EntityType::new("ORG").unwrap()),
            obj: EntitySpan::new(1, 2, EntityType::new("ORG").unwrap()),
            relation: Some(g.as_str().into()),
        })
        .collect();
    let sources: Vec<ExternalScoreFile> = (0..3)
        .map(|s| {
            use rand::Rng;
            ExternalScoreFile {
                name: format!("model-{s}"),
                records: gold
                    .iter()
                    .enumerate()
                    .map(|(i, g)| {
                        let l = if rng.gen_bool(0.6) { g.clone() } else { names[rng.gen_range(0..names.len())].clone() };
                        PredictionRecord::new(format!("g{i}"), l.as_str().into())
                    })
                    .collect(),
            }
        })
        .collect();
    let no = RelationLabel::no_relation();
    let fwd = compare_models(&sources, &instances, &v, &no).unwrap();
    let mut rev_sources = sources.clone();
    rev_sources.reverse();
    let rev = compare_models(&rev_sources, &instances, &v, &no).unwrap();
    for row in &fwd.rows {
        let other = rev.row(&row.name).unwrap();
        assert_eq!(row, other);
    }
}

fn toy_pairs(split: &[TokenizedInstance], scheme: MarkerScheme) -> Vec<(MarkedInstance, RelationLabel)> {
    split
        .iter()
        .map(|i| (insert_markers(i, scheme).unwrap(), i.relation.clone().unwrap()))
        .collect()
}

#[test]
fn full_batch_loss_is_monotone_on_separable_data() {
    let split = synthetic::verb_corpus(3, 10, 0);
    let data = toy_pairs(&split.train, MarkerScheme::TypedPunct);
    let cfg = TrainConfig { batch_size: data.len(), epochs: 30, ..Default::default() };
    let vocab = LabelVocabulary::from_observed(data.iter().map(|(_, l)| l)).unwrap();
    let (_, losses) = train_with_vocabulary(&data, vocab, &cfg).unwrap();
    assert_eq!(losses.len(), 30);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0], "loss rose: {losses:?}");
    }
    assert!(losses[29] < losses[0]);
}

#[test]
fn seeded_training_is_deterministic() {
    let split = synthetic::verb_corpus(9, 10, 5);
    let data = toy_pairs(&split.train, MarkerScheme::TypedPunct);
    let cfg = TrainConfig { seed: 123, ..Default::default() };
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    let c = train(&data, &TrainConfig { seed: 124, ..cfg }).unwrap();
    assert_ne!(a.fingerprint(), c.fingerprint());
}

#[test]
fn saved_model_predicts_identically() {
    let split = synthetic::verb_corpus(21, 25, 25);
    let data = toy_pairs(&split.train, MarkerScheme::TypedPunct);
    let model = train(&data, &TrainConfig::default()).unwrap();
    let mut buf = Vec::new();
    save_model(&model, &mut buf).unwrap();
    let back = load_model(buf.as_slice()).unwrap();
    let fixture = toy_pairs(&split.test, MarkerScheme::TypedPunct);
    assert_eq!(fixture.len(), 100);
    for (m, _) in &fixture {
        assert_eq!(predict(&model, m).unwrap(), predict(&back, m).unwrap());
    }
}

#[test]
fn predictions_are_distributions() {
    let split = synthetic::type_pair_corpus(2, 5, 5);
    let data = toy_pairs(&split.train, MarkerScheme::EntityMask);
    let model = train(&data, &TrainConfig::default()).unwrap();
    for (m, _) in toy_pairs(&split.test, MarkerScheme::EntityMask) {
        let p = predict(&model, &m).unwrap();
        let probs = p.probabilities.unwrap();
        assert!(probs.iter().all(|&x| x >= 0.0));
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let best = relmark_core::classifier::argmax(&probs);
        assert_eq!(model.labels().get(best), Some(&p.label));
    }
}

#[test]
fn stats_pair_histogram_fixture() {
    let mk = |id: usize, s: &str, o: &str| TokenizedInstance {
        id: id.to_string(),
        tokens: vec!["a".into(), "b".into(), "c".into()],
        subj: EntitySpan::new(0, 1, EntityType::new(s).unwrap()),
        obj: EntitySpan::new(2, 3, EntityType::new(o).unwrap()),
        relation: Some("r".into()),
    };
    let data = vec![
        mk(1, "ORG", "GPE"),
        mk(2, "PERS", "TITLE"),
        mk(3, "ORG", "GPE"),
        mk(4, "ORG", "DATE"),
        mk(5, "PERS", "TITLE"),
        mk(6, "ORG", "GPE"),
    ];
    let stats = compute_stats(&data).unwrap();
    let hist: BTreeMap<String, usize> = stats.pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let expect: BTreeMap<String, usize> =
        [("ORG-GPE", 3), ("PERS-TITLE", 2), ("ORG-DATE", 1)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    assert_eq!(hist, expect);
}

#[test]
fn feature_vector_from_entries_keeps_dimension() {
    let f = FeatureVector::from_entries(16, vec![(15, 1.0)]);
    assert_eq!(f.dim(), 16);
}
