//! Dataset complexity: average token length (ATL), triggers per document
//! (TPD), event-type count (ET), multi-word trigger ratio (MTR), and their
//! L2 norm C.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub atl: f64,
    pub tpd: f64,
    pub et: f64,
    pub mtr: f64,
    pub c: f64,
}

pub fn complexity_from_metrics(atl: f64, tpd: f64, et: f64, mtr: f64) -> Result<f64> {
    for (name, v) in [("ATL", atl), ("TPD", tpd), ("ET", et), ("MTR", mtr)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be a finite non-negative number, got {v}")));
        }
    }
    Ok((atl * atl + mtr * mtr + tpd * tpd + et * et).sqrt())
}

/// Whitespace tokenization throughout; a trigger is multi-word when its
/// whitespace-split form has more than one token.
pub fn complexity_from_corpus(corpus: &Corpus) -> Result<ComplexityReport> {
    if corpus.documents.is_empty() {
        return Err(Error::InvalidArgument(format!("corpus `{}` is empty", corpus.name)));
    }
    let docs = corpus.documents.len() as f64;
    let tokens: usize = corpus.documents.iter().map(|d| d.text.split_whitespace().count()).sum();
    let triggers: Vec<&str> = corpus
        .documents
        .iter()
        .flat_map(|d| d.events.iter().map(|m| m.trigger_text.as_str()))
        .collect();
    let multi = triggers.iter().filter(|t| t.split_whitespace().nth(1).is_some()).count();

    let atl = tokens as f64 / docs;
    let tpd = triggers.len() as f64 / docs;
    let et = corpus.type_inventory.len() as f64;
    let mtr = if triggers.is_empty() {
        0.0
    } else {
        multi as f64 / triggers.len() as f64
    };
    Ok(ComplexityReport {
        atl,
        tpd,
        et,
        mtr,
        c: complexity_from_metrics(atl, tpd, et, mtr)?,
    })
}

impl ComplexityReport {
    pub fn table(&self) -> String {
        format!(
            "{:>10}{:>8}{:>8}{:>8}{:>10}\n{:>10.2}{:>8.2}{:>8}{:>8.2}{:>10.2}\n",
            "ATL", "TPD", "ET", "MTR", "C", self.atl, self.tpd, self.et, self.mtr, self.c
        )
    }
}
