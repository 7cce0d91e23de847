mod common;

use std::collections::BTreeMap;
use std::fs;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scg_core::complexity::complexity_from_corpus;
use scg_core::ingest::{corpus_stats, load_dataset, AnnotatedDocument, Corpus, EventMention, Split, TypeInventory};
use scg_core::instruction::{gen_dataset, gen_records, manifest_path, Demarcation, DatasetManifest, InstructionRecord, ResponseMode};
use scg_core::prompting::{
    build_prompt, EmbeddingIndex, ExampleOrder, ExampleSelector, HashEmbedder, PromptConfig, PromptMode, ANSWER_FORMAT,
};
use scg_core::scg::{build_scg, read_graphs, write_graphs, SemanticCausalGraph};
use scg_core::templates::INSTRUCTION_TEMPLATES;
use scg_core::Error;
use serde_json::Value;

use common::*;

#[test]
fn fixture_corpus_loads_with_expected_shape() {
    let train = fixture(Split::Train);
    assert_eq!(train.name, "mini");
    assert_eq!(train.len(), 10);
    let stats = corpus_stats(&train);
    assert_eq!((stats.doc_count, stats.event_count, stats.type_count), (10, 12, 8));
    assert!((stats.negative_doc_ratio - 0.2).abs() < 1e-12);
    let te = fixture(Split::Test);
    let d = te.get("te-02").unwrap();
    assert_eq!(d.events[1].trigger_span.slice(&d.text), Some("détained"));
}

#[test]
fn corpus_write_and_reload_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    for split in [Split::Train, Split::Dev, Split::Test] {
        let corpus = fixture(split);
        let path = dir.path().join(format!("{split}.jsonl"));
        corpus.write_jsonl(&path).unwrap();
        let again = load_dataset(&path, &corpus.type_inventory, split).unwrap();
        assert_eq!(again.documents, corpus.documents);
    }
}

#[test]
fn ingest_rejects_bad_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let schema = schema();
    let cases = [
        (r#"{"doc_id":"a","text":"they fired","events":[{"trigger":"fire","span":[5,10],"type":"Attack"}]}"#, "mismatch"),
        (r#"{"doc_id":"a","text":"they fired","events":[{"trigger":"fired","span":[5,30],"type":"Attack"}]}"#, "span"),
        (r#"{"doc_id":"a","text":"they fired","events":[{"trigger":"fired","span":[5,10],"type":"Bombard"}]}"#, "type"),
        ("{\"doc_id\":\"a\",\"text\":\"x\"}\n{\"doc_id\":\"a\",\"text\":\"y\"}", "duplicate"),
        ("{not json", "malformed"),
    ];
    for (body, label) in cases {
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, body).unwrap();
        let err = load_dataset(&path, &schema, Split::Train).unwrap_err();
        let ok = match label {
            "mismatch" => matches!(err, Error::SpanMismatch { .. }),
            "span" => matches!(err, Error::InvalidSpan { .. }),
            "type" => matches!(err, Error::UnknownEventType { .. }),
            "duplicate" => matches!(err, Error::DuplicateDocId(_)),
            _ => matches!(err, Error::MalformedRecord { .. }),
        };
        assert!(ok, "{label}: got {err:?}");
    }
}

#[test]
fn graph_file_round_trip_for_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let graphs: Vec<SemanticCausalGraph> = fixture(Split::Train).documents.iter().map(|d| build_scg(d).unwrap()).collect();
    let path = dir.path().join("graphs.jsonl");
    write_graphs(&path, &graphs).unwrap();
    assert_eq!(read_graphs(&path).unwrap(), graphs);
    let first: Value = serde_json::from_str(fs::read_to_string(&path).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["source_doc_id"], "tr-01");
    assert_eq!(first["nodes"]["trigger"][0]["text"], "fired");
    assert_eq!(first["edges"]["et_ey"], serde_json::json!([[1, 2]]));
}

#[test]
fn built_graphs_have_one_type_edge_per_mention() {
    for split in [Split::Train, Split::Dev, Split::Test] {
        for doc in fixture(split).documents {
            let g = build_scg(&doc).unwrap();
            assert!(g.is_valid(), "{}", doc.doc_id);
            let sub = g.causal_subgraph().unwrap();
            assert_eq!(sub.edges_et_ey.len(), doc.events.len());
            assert!(sub.edges_et_et.is_empty());
            let mut a: Vec<_> = sub.mentions();
            let mut b = doc.events.clone();
            a.sort_by_key(|m| m.trigger_span);
            b.sort_by_key(|m| m.trigger_span);
            assert_eq!(a, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_graphs_survive_serialization(seed in any::<u64>()) {
        let g = random_valid_graph(&mut ChaCha8Rng::seed_from_u64(seed));
        let line = g.to_json_line().unwrap();
        prop_assert!(!line.contains('\n'));
        let back = SemanticCausalGraph::from_json_line(&line).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert!(back.is_valid());
    }

    #[test]
    fn metric_roles_swap_under_gold_prediction_exchange(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let docs = rng.gen_range(1..4);
        let gold = random_gold(&mut rng, docs);
        let mut fwd = scg_core::metrics::DocCounts::default();
        let mut bwd = scg_core::metrics::DocCounts::default();
        for doc in &gold.documents {
            let g: Vec<(String, String)> = doc.events.iter().map(|m| (m.trigger_text.clone(), m.event_type.clone())).collect();
            let p = random_pairs(&mut rng, &doc.events);
            fwd = fwd + scg_core::metrics::doc_counts(&g, &p);
            bwd = bwd + scg_core::metrics::doc_counts(&p, &g);
        }
        let a = scg_core::metrics::ScoreReport::from_counts(fwd, 0, docs);
        let b = scg_core::metrics::ScoreReport::from_counts(bwd, 0, docs);
        for (x, y) in [(a.ec, b.ec), (a.ti, b.ti), (a.tc, b.tc)] {
            prop_assert_eq!(x.precision, y.recall);
            prop_assert_eq!(x.recall, y.precision);
            prop_assert!((x.f1 - y.f1).abs() < 1e-12);
        }
    }
}

#[test]
fn instruction_records_have_the_documented_line_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("train.scg.jsonl");
    let manifest = gen_dataset(&fixture(Split::Train), ResponseMode::Scg, 9, &Demarcation::default(), &out).unwrap();
    let body = fs::read_to_string(&out).unwrap();
    let lines: Vec<Value> = body.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 10);
    let first = &lines[0];
    assert_eq!(first["input"], "Troops fired at dawn near the border.");
    assert_eq!(first["output"], "Event trigger: fired ; Event type: Attack");
    assert_eq!(first["meta"]["doc_id"], "tr-01");
    assert_eq!(first["meta"]["mode"], "scg");
    let tid = first["meta"]["template_id"].as_u64().unwrap() as usize;
    assert_eq!(first["instruction"], INSTRUCTION_TEMPLATES[tid - 1]);
    assert_eq!(lines[5]["output"], "None");

    let on_disk: DatasetManifest = serde_json::from_str(&fs::read_to_string(manifest_path(&out)).unwrap()).unwrap();
    assert_eq!(on_disk, manifest);
    assert_eq!(manifest.records_file, "train.scg.jsonl");
    assert_eq!(manifest.template_counts.values().sum::<usize>(), 10);

    for line in body.lines() {
        let r = InstructionRecord::from_json_line(line).unwrap();
        assert_eq!(r.to_json_line().unwrap(), line);
    }
}

#[test]
fn standard_records_drop_triggers() {
    let records = gen_records(&fixture(Split::Train), ResponseMode::Standard, 9, &Demarcation::default()).unwrap();
    let tr02 = records.iter().find(|r| r.doc_id == "tr-02").unwrap();
    assert_eq!(tr02.response_text, "Event type: Die\nEvent type: Attack");
    let scg = gen_records(&fixture(Split::Train), ResponseMode::Scg, 9, &Demarcation::default()).unwrap();
    let ids = |rs: &[InstructionRecord]| rs.iter().map(|r| r.template_id).collect::<Vec<_>>();
    assert_eq!(ids(&records), ids(&scg), "template choice is independent of mode");
}

#[test]
fn template_choice_is_uniform() {
    let docs: Vec<AnnotatedDocument> = (0..12_000)
        .map(|i| AnnotatedDocument {
            doc_id: format!("u{i}"),
            text: "quiet".into(),
            events: vec![],
            split: Split::Train,
        })
        .collect();
    let corpus = Corpus::new("u", docs, TypeInventory::new(["Attack"]).unwrap()).unwrap();
    let records = gen_records(&corpus, ResponseMode::Scg, 2024, &Demarcation::default()).unwrap();
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for r in &records {
        *counts.entry(r.template_id).or_insert(0) += 1;
    }
    assert_eq!(counts.len(), 20);
    let n = records.len() as f64;
    let mean = n / 20.0;
    let sigma = (n * 0.05 * 0.95).sqrt();
    for (id, c) in counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sigma, "template {id}: {c} vs {mean}");
    }
}

#[test]
fn different_seeds_change_template_draws() {
    let train = fixture(Split::Train);
    let a = gen_records(&train, ResponseMode::Scg, 1, &Demarcation::default()).unwrap();
    let b = gen_records(&train, ResponseMode::Scg, 2, &Demarcation::default()).unwrap();
    assert_ne!(
        a.iter().map(|r| r.template_id).collect::<Vec<_>>(),
        b.iter().map(|r| r.template_id).collect::<Vec<_>>()
    );
}

#[test]
fn fixture_complexity_matches_hand_count() {
    // 79 whitespace tokens over 10 docs, 12 triggers (one multi-word), 8 types
    let r = complexity_from_corpus(&fixture(Split::Train)).unwrap();
    assert!((r.atl - 7.9).abs() < 1e-12);
    assert!((r.tpd - 1.2).abs() < 1e-12);
    assert_eq!(r.et, 8.0);
    assert!((r.mtr - 1.0 / 12.0).abs() < 1e-12);
    assert!((r.c - 11.307384).abs() < 1e-6);
}

#[test]
fn zero_shot_prompt_lists_schema_and_target_only() {
    let train = fixture(Split::Train);
    let target = fixture(Split::Test).documents.remove(0);
    let spec = build_prompt(PromptMode::ZeroShot, &target, &train, &train.type_inventory, &ExampleSelector::None, &PromptConfig::default()).unwrap();
    let req = spec.to_request();
    let system = req.system.unwrap();
    for t in train.type_inventory.iter() {
        assert!(system.contains(&format!("\n{t}")), "{t} missing");
    }
    assert!(system.ends_with(ANSWER_FORMAT));
    assert_eq!(req.user, "Text: Tanks rolled into the city at noon.\nAnswer:");
}

#[test]
fn six_shot_random_is_seeded_per_target() {
    let train = fixture(Split::Train);
    let test = fixture(Split::Test);
    let cfg = PromptConfig::default();
    let pick = |seed: u64, i: usize| {
        build_prompt(PromptMode::SixShot, &test.documents[i], &train, &train.type_inventory, &ExampleSelector::Random { seed }, &cfg)
            .unwrap()
            .examples
            .iter()
            .map(|e| e.doc_id.clone())
            .collect::<Vec<_>>()
    };
    let a = pick(5, 0);
    assert_eq!(a.len(), 6);
    assert_eq!(a, pick(5, 0));
    let mut uniq = a.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), 6, "drawn without replacement");
    assert!((1..test.len()).any(|i| pick(5, i) != a) || pick(6, 0) != a);
}

#[test]
fn rag_examples_are_the_nearest_training_texts() {
    let train = fixture(Split::Train);
    let embedder = HashEmbedder::new(256);
    let index = EmbeddingIndex::build(&train, &embedder, 3).unwrap();
    // a training text as target: it must be its own nearest neighbour
    let target = train.get("tr-07").unwrap().clone();
    let selector = ExampleSelector::Retrieval { index: &index, embedder: &embedder };

    let last = build_prompt(PromptMode::SixShotRag, &target, &train, &train.type_inventory, &selector, &PromptConfig::default()).unwrap();
    assert_eq!(last.examples.len(), 6);
    assert_eq!(last.examples.last().unwrap().doc_id, "tr-07");

    let query = embedder.embed_one(&target.text);
    let oracle = oracle_top_k(&query, index.entries(), 6);
    let mut got: Vec<String> = last.examples.iter().map(|e| e.doc_id.clone()).collect();
    got.reverse();
    assert_eq!(got, oracle);

    let cfg = PromptConfig {
        example_order: ExampleOrder::MostSimilarFirst,
        ..PromptConfig::default()
    };
    let first = build_prompt(PromptMode::SixShotRag, &target, &train, &train.type_inventory, &selector, &cfg).unwrap();
    assert_eq!(first.examples[0].doc_id, "tr-07");
    assert!(first.examples[0].response.contains("Event trigger: opened fire ; Event type: Attack"));
}

#[test]
fn prompting_needs_enough_examples_and_a_matching_selector() {
    let small = Corpus::new(
        "s",
        vec![AnnotatedDocument {
            doc_id: "s1".into(),
            text: "they fired".into(),
            events: vec![EventMention::new("fired", (5, 10), "Attack")],
            split: Split::Train,
        }],
        schema(),
    )
    .unwrap();
    let target = fixture(Split::Test).documents.remove(0);
    let err = build_prompt(PromptMode::SixShot, &target, &small, &small.type_inventory, &ExampleSelector::Random { seed: 0 }, &PromptConfig::default()).unwrap_err();
    assert!(matches!(err, Error::NotEnoughExamples { needed: 6, available: 1 }));
    let train = fixture(Split::Train);
    assert!(build_prompt(PromptMode::SixShotRag, &target, &train, &train.type_inventory, &ExampleSelector::None, &PromptConfig::default()).is_err());
}
