#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::mpsc;

use rand::seq::SliceRandom;
use rand::Rng;
use scg_core::ingest::{load_dataset, AnnotatedDocument, CharSpan, Corpus, EventMention, Split, TypeInventory};
use scg_core::scg::{ContextNode, NodeId, SemanticCausalGraph, TriggerNode, TypeNode};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini")
}

pub fn schema() -> TypeInventory {
    TypeInventory::load(fixture_dir().join("types.txt")).unwrap()
}

pub fn fixture(split: Split) -> Corpus {
    load_dataset(fixture_dir().join(format!("{split}.jsonl")), &schema(), split).unwrap()
}

/// Random valid graph: unique ids across classes, one type edge per trigger,
/// trigger chains only forward along a random permutation (so acyclic).
pub fn random_valid_graph<R: Rng>(rng: &mut R) -> SemanticCausalGraph {
    let contexts = rng.gen_range(0..3);
    let triggers = rng.gen_range(0..8);
    let types = if triggers == 0 { rng.gen_range(0..2) } else { rng.gen_range(1..5) };
    let mut ids: Vec<u32> = (0..(contexts + triggers + types) as u32 * 3).collect();
    ids.shuffle(rng);
    let mut ids = ids.into_iter().map(NodeId);

    let mut g = SemanticCausalGraph {
        source_doc_id: format!("g{}", rng.gen::<u32>()),
        ..Default::default()
    };
    let ctx: Vec<NodeId> = (0..contexts).map(|_| ids.next().unwrap()).collect();
    let trg: Vec<NodeId> = (0..triggers).map(|_| ids.next().unwrap()).collect();
    let typ: Vec<NodeId> = (0..types).map(|_| ids.next().unwrap()).collect();
    for &c in &ctx {
        g.context_nodes.insert(c, ContextNode { span: CharSpan::new(0, 50) });
    }
    for (i, &t) in trg.iter().enumerate() {
        g.trigger_nodes.insert(
            t,
            TriggerNode {
                text: format!("w{i}"),
                span: CharSpan::new(i * 3, i * 3 + 2),
            },
        );
    }
    for (i, &y) in typ.iter().enumerate() {
        g.type_nodes.insert(y, TypeNode { label: format!("Type{i}") });
    }
    for &t in &trg {
        g.edges_et_ey.insert((t, *typ.choose(rng).unwrap()));
        for &c in &ctx {
            if rng.gen_bool(0.5) {
                g.edges_co_et.insert((c, t));
            }
        }
    }
    let mut order = trg.clone();
    order.shuffle(rng);
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            if rng.gen_bool(0.25) {
                g.edges_et_et.insert((order[i], order[j]));
            }
        }
    }
    g
}

/// Nodes reachable from `from` along `edges` (including `from`).
pub fn reachable(edges: &BTreeSet<(NodeId, NodeId)>, from: NodeId) -> HashSet<NodeId> {
    let mut seen = HashSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        for &(a, b) in edges {
            if a == n && seen.insert(b) {
                queue.push_back(b);
            }
        }
    }
    seen
}

/// Random corpus over a tiny vocabulary so matches and near-misses are common.
pub const TRIGGER_VOCAB: [&str; 5] = ["attack", "fire", "move", "meet", "die"];
pub const TYPE_VOCAB: [&str; 4] = ["Attack", "Movement", "Meet", "Die"];

pub fn random_gold<R: Rng>(rng: &mut R, docs: usize) -> Corpus {
    let mut documents = Vec::new();
    for d in 0..docs {
        let words: Vec<&str> = (0..rng.gen_range(1..8)).map(|_| *TRIGGER_VOCAB.choose(rng).unwrap()).collect();
        let text = words.join(" ");
        let mut events = Vec::new();
        let mut offset = 0;
        for w in &words {
            if rng.gen_bool(0.5) {
                events.push(EventMention::new(*w, (offset, offset + w.len()), *TYPE_VOCAB.choose(rng).unwrap()));
            }
            offset += w.len() + 1;
        }
        documents.push(AnnotatedDocument {
            doc_id: format!("r{d}"),
            text,
            events,
            split: Split::Test,
        });
    }
    Corpus::new("random", documents, TypeInventory::new(TYPE_VOCAB).unwrap()).unwrap()
}

pub fn random_pairs<R: Rng>(rng: &mut R, gold: &[EventMention]) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for m in gold {
        if !rng.gen_bool(0.6) {
            continue;
        }
        let trigger = if rng.gen_bool(0.8) { m.trigger_text.clone() } else { TRIGGER_VOCAB.choose(rng).unwrap().to_string() };
        let ty = if rng.gen_bool(0.7) { m.event_type.clone() } else { TYPE_VOCAB.choose(rng).unwrap().to_string() };
        out.push((trigger, ty));
    }
    for _ in 0..rng.gen_range(0..3) {
        out.push((TRIGGER_VOCAB.choose(rng).unwrap().to_string(), TYPE_VOCAB.choose(rng).unwrap().to_string()));
    }
    if !out.is_empty() && rng.gen_bool(0.2) {
        let dup = out[0].clone();
        out.push(dup);
    }
    out.shuffle(rng);
    out
}

/// Exhaustive-sort oracle for cosine top-k, computed on unit-normalized
/// copies with a stable sort. Independent of the library's ranking path.
pub fn oracle_top_k(query: &[f32], entries: &[(String, Vec<f32>)], k: usize) -> Vec<String> {
    let unit = |v: &[f32]| {
        let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        v.iter().map(|x| *x as f64 / n).collect::<Vec<f64>>()
    };
    let q = unit(query);
    let mut sims: Vec<(usize, f64)> = entries
        .iter()
        .enumerate()
        .map(|(i, (_, v))| (i, unit(v).iter().zip(&q).map(|(a, b)| a * b).sum()))
        .collect();
    // stable: equal keys keep ascending position
    sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    sims.into_iter().take(k).map(|(i, _)| entries[i].0.clone()).collect()
}

/// One captured HTTP request.
#[derive(Debug, Clone)]
pub struct Captured {
    pub request_line: String,
    pub headers: BTreeMap<String, String>,
    pub body: String,
}

/// Serves the canned `(status, body)` responses, one per connection, in order.
pub fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = BTreeMap::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
                }
            }
            let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(Captured {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: String::from_utf8(buf).unwrap(),
            })
            .unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (url, rx)
}
