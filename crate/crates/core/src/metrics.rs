//! EC / TI / TC micro precision, recall and F1.
//!
//! Matching is per document by multiset intersection over normalized strings:
//! trigger strings for TI, event-type strings for EC and (trigger, type) pairs
//! for TC. Counts are summed over documents before P/R/F1 are taken.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AnnotatedDocument, Corpus};
use crate::parser::{normalize, ParseStatus, PredictionSet};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub true_positives: usize,
    pub predicted_count: usize,
    pub gold_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricScore {
    pub fn from_counts(true_positives: usize, predicted_count: usize, gold_count: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(true_positives, predicted_count);
        let recall = ratio(true_positives, gold_count);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            true_positives,
            predicted_count,
            gold_count,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub pred: usize,
    pub gold: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            pred: self.pred + o.pred,
            gold: self.gold + o.gold,
        }
    }
}

/// Size of the multiset intersection (min-count per element).
pub fn multiset_intersection<T: Eq + Hash>(a: impl IntoIterator<Item = T>, b: impl IntoIterator<Item = T>) -> usize {
    let mut counts: HashMap<T, usize> = HashMap::new();
    for x in a {
        *counts.entry(x).or_insert(0) += 1;
    }
    let mut hit = 0;
    for x in b {
        if let Some(c) = counts.get_mut(&x) {
            if *c > 0 {
                *c -= 1;
                hit += 1;
            }
        }
    }
    hit
}

pub fn match_counts<T: Eq + Hash + Clone>(gold: &[T], pred: &[T]) -> Counts {
    Counts {
        tp: multiset_intersection(gold.iter().cloned(), pred.iter().cloned()),
        pred: pred.len(),
        gold: gold.len(),
    }
}

/// Per-document counts for the three metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DocCounts {
    pub ec: Counts,
    pub ti: Counts,
    pub tc: Counts,
}

impl std::ops::Add for DocCounts {
    type Output = DocCounts;

    fn add(self, o: DocCounts) -> DocCounts {
        DocCounts {
            ec: self.ec + o.ec,
            ti: self.ti + o.ti,
            tc: self.tc + o.tc,
        }
    }
}

/// What EC compares within a document.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcUnit {
    /// One type per mention, matched as a multiset.
    #[default]
    Mention,
    /// The set of distinct types in the document. Under this unit TC is no
    /// longer bounded by EC.
    DocumentSet,
}

/// Counts one document from raw (trigger, type) pairs; strings are normalized here.
pub fn doc_counts(gold: &[(String, String)], pred: &[(String, String)]) -> DocCounts {
    doc_counts_with(gold, pred, EcUnit::Mention)
}

pub fn doc_counts_with(gold: &[(String, String)], pred: &[(String, String)], ec_unit: EcUnit) -> DocCounts {
    let norm = |v: &[(String, String)]| -> Vec<(String, String)> { v.iter().map(|(t, y)| (normalize(t), normalize(y))).collect() };
    let gold = norm(gold);
    let pred = norm(pred);
    let triggers = |v: &[(String, String)]| v.iter().map(|(t, _)| t.clone()).collect::<Vec<_>>();
    let types = |v: &[(String, String)]| {
        let mut t: Vec<String> = v.iter().map(|(_, y)| y.clone()).collect();
        if ec_unit == EcUnit::DocumentSet {
            t.sort();
            t.dedup();
        }
        t
    };
    DocCounts {
        ec: match_counts(&types(&gold), &types(&pred)),
        ti: match_counts(&triggers(&gold), &triggers(&pred)),
        tc: match_counts(&gold, &pred),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub ec: MetricScore,
    pub ti: MetricScore,
    pub tc: MetricScore,
    pub parse_failure_count: usize,
    pub doc_count: usize,
}

impl ScoreReport {
    pub fn from_counts(c: DocCounts, parse_failure_count: usize, doc_count: usize) -> Self {
        let m = |c: Counts| MetricScore::from_counts(c.tp, c.pred, c.gold);
        Self {
            ec: m(c.ec),
            ti: m(c.ti),
            tc: m(c.tc),
            parse_failure_count,
            doc_count,
        }
    }

    /// Fixed-width table with F1 and P/R in percent.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<6}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}\n",
            "metric", "P", "R", "F1", "tp", "pred", "gold"
        );
        for (name, m) in [("EC", &self.ec), ("TI", &self.ti), ("TC", &self.tc)] {
            s.push_str(&format!(
                "{:<6}{:>8.2}{:>8.2}{:>8.2}{:>8}{:>8}{:>8}\n",
                name,
                m.precision * 100.0,
                m.recall * 100.0,
                m.f1 * 100.0,
                m.true_positives,
                m.predicted_count,
                m.gold_count
            ));
        }
        s.push_str(&format!("docs {}  parse failures {}\n", self.doc_count, self.parse_failure_count));
        s
    }
}

fn gold_pairs(doc: &AnnotatedDocument) -> Vec<(String, String)> {
    doc.events.iter().map(|m| (m.trigger_text.clone(), m.event_type.clone())).collect()
}

/// Scores predictions against a gold split. Documents without a prediction
/// count as empty predictions; a prediction for an unknown doc is an error.
pub fn score(gold: &Corpus, predictions: &BTreeMap<String, PredictionSet>) -> Result<ScoreReport> {
    score_with(gold, predictions, EcUnit::Mention)
}

pub fn score_with(gold: &Corpus, predictions: &BTreeMap<String, PredictionSet>, ec_unit: EcUnit) -> Result<ScoreReport> {
    let index = gold.index();
    if let Some(unknown) = predictions.keys().find(|id| !index.contains_key(id.as_str())) {
        return Err(Error::UnknownDocId(unknown.clone()));
    }
    let mut total = DocCounts::default();
    let mut failures = 0;
    for doc in &gold.documents {
        let pred: Vec<(String, String)> = match predictions.get(&doc.doc_id) {
            Some(p) => {
                if p.status == ParseStatus::Failed {
                    failures += 1;
                }
                p.pairs.iter().map(|x| (x.trigger.clone(), x.event_type.clone())).collect()
            }
            None => Vec::new(),
        };
        total = total + doc_counts_with(&gold_pairs(doc), &pred, ec_unit);
    }
    Ok(ScoreReport::from_counts(total, failures, gold.documents.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn hand_derived_example() {
        let gold = pairs(&[("kill", "Attack"), ("march", "Movement")]);
        let pred = pairs(&[("kill", "Attack"), ("march", "Transport")]);
        let r = ScoreReport::from_counts(doc_counts(&gold, &pred), 0, 1);
        assert_eq!(r.ti.f1, 1.0);
        assert_eq!(r.tc.f1, 0.5);
        assert_eq!(r.ec.f1, 0.5);
    }

    #[test]
    fn document_set_ec_ignores_repeats() {
        let gold = pairs(&[("a", "Attack"), ("b", "Attack")]);
        let pred = pairs(&[("a", "Attack")]);
        assert_eq!(doc_counts(&gold, &pred).ec, Counts { tp: 1, pred: 1, gold: 2 });
        assert_eq!(doc_counts_with(&gold, &pred, EcUnit::DocumentSet).ec, Counts { tp: 1, pred: 1, gold: 1 });
    }

    #[test]
    fn zero_conventions() {
        let m = MetricScore::from_counts(0, 0, 0);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = MetricScore::from_counts(0, 3, 0);
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn duplicates_do_not_inflate() {
        let gold = pairs(&[("kill", "Attack")]);
        let once = doc_counts(&gold, &pairs(&[("kill", "Attack")]));
        let twice = doc_counts(&gold, &pairs(&[("kill", "Attack"), ("kill", "Attack")]));
        let a = ScoreReport::from_counts(once, 0, 1);
        let b = ScoreReport::from_counts(twice, 0, 1);
        assert!(b.tc.precision < a.tc.precision);
        assert_eq!(b.tc.recall, a.tc.recall);
    }

    #[test]
    fn matching_is_normalized() {
        let c = doc_counts(&pairs(&[("Opened  fire", "Attack")]), &pairs(&[(" opened fire", "ATTACK")]));
        assert_eq!(c.tc.tp, 1);
    }

    #[test]
    fn table_has_three_rows() {
        let r = ScoreReport::from_counts(DocCounts::default(), 2, 5);
        let t = r.table();
        assert!(t.contains("EC") && t.contains("TI") && t.contains("TC"));
        assert!(t.contains("parse failures 2"));
    }
}
