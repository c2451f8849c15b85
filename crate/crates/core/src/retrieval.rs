//! Table retrieval: caption summary, exact match, BM25 fallback.

use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::bio::SlotBinding;
use crate::corpus::TableCorpus;
use crate::dialogue::{DialogueState, Event};
use crate::llm::{prompts, ChatRequest, LlmBackend, Message, Stage};
use crate::registry::{DomainId, DomainRef, UNKNOWN_INTENT};
use crate::templates::{substitute, TemplatePack};
use crate::text::{normalize, terms};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// Okapi BM25 over captions.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    captions: Vec<String>,
    tf: Vec<HashMap<String, usize>>,
    lengths: Vec<usize>,
    idf: HashMap<String, f64>,
    avgdl: f64,
    k1: f64,
    b: f64,
}

/// `ln((N - df + 0.5) / (df + 0.5) + 1)`; never negative.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    ((n_docs as f64 - df as f64 + 0.5) / (df as f64 + 0.5) + 1.0).ln()
}

impl Bm25Index {
    pub fn build<I, S>(captions: I, k1: f64, b: f64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let captions: Vec<String> = captions.into_iter().map(|c| c.as_ref().to_string()).collect();
        let mut tf = Vec::with_capacity(captions.len());
        let mut lengths = Vec::with_capacity(captions.len());
        let mut df: HashMap<String, usize> = HashMap::new();
        for c in &captions {
            let ts = terms(c);
            lengths.push(ts.len());
            let mut counts: HashMap<String, usize> = HashMap::new();
            for t in ts {
                *counts.entry(t).or_default() += 1;
            }
            for t in counts.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            tf.push(counts);
        }
        let n = captions.len();
        let avgdl = if n == 0 {
            0.0
        } else {
            lengths.iter().sum::<usize>() as f64 / n as f64
        };
        let idf = df.iter().map(|(t, d)| (t.clone(), idf(n, *d))).collect();
        Self {
            captions,
            tf,
            lengths,
            idf,
            avgdl,
            k1,
            b,
        }
    }

    pub fn standard<I, S>(captions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::build(captions, DEFAULT_K1, DEFAULT_B)
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    pub fn captions(&self) -> &[String] {
        &self.captions
    }

    /// Score of document `i`. Repeated query terms count once per
    /// occurrence.
    pub fn score(&self, query_terms: &[String], i: usize) -> f64 {
        let dl = self.lengths[i] as f64;
        let norm = if self.avgdl > 0.0 {
            1.0 - self.b + self.b * dl / self.avgdl
        } else {
            1.0
        };
        let mut s = 0.0;
        for q in query_terms {
            let Some(&f) = self.tf[i].get(q) else { continue };
            let f = f as f64;
            s += self.idf[q] * f * (self.k1 + 1.0) / (f + self.k1 * norm);
        }
        s
    }
}

/// Scores this close count as tied. Equal scores reached by different
/// arithmetic paths can differ in the last bits.
const TIE: f64 = 1e-9;

/// Top `k` captions by score, ties by caption.
pub fn bm25_rank(query: &str, index: &Bm25Index, k: usize) -> Vec<(String, f64)> {
    let q = terms(query);
    let mut scored: Vec<(String, f64)> = (0..index.len())
        .map(|i| (index.captions[i].clone(), index.score(&q, i)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut start = 0;
    while start < scored.len() {
        let lead = scored[start].1;
        let end = start + scored[start..].iter().take_while(|x| lead - x.1 <= TIE).count();
        scored[start..end].sort_by(|a, b| a.0.cmp(&b.0));
        start = end;
    }
    scored.truncate(k);
    scored
}

pub fn exact_match<'a>(summary: &str, captions: &'a [String]) -> Option<&'a str> {
    let s = normalize(summary);
    captions.iter().find(|c| normalize(c) == s).map(String::as_str)
}

/// Global and per-domain indexes.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    pub global: Bm25Index,
    pub domains: IndexMap<DomainId, Bm25Index>,
}

impl RetrievalIndex {
    pub fn build(corpus: &TableCorpus, k1: f64, b: f64) -> Self {
        let global = Bm25Index::build(corpus.captions(), k1, b);
        let domains = DomainId::ALL
            .iter()
            .map(|d| (*d, Bm25Index::build(corpus.list_captions(*d), k1, b)))
            .collect();
        Self { global, domains }
    }

    pub fn for_domain(&self, domain: DomainRef) -> &Bm25Index {
        match domain {
            DomainRef::Known(d) if !self.domains[&d].is_empty() => &self.domains[&d],
            _ => &self.global,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Bm25Summary,
    Bm25Dialogue,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Bm25Summary => "bm25_summary",
            Method::Bm25Dialogue => "bm25_dialogue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub captions: Vec<String>,
    pub method: Method,
    /// Empty for exact matches.
    pub scores: Vec<f64>,
    pub summary: Option<String>,
}

impl RetrievalOutcome {
    pub fn top(&self) -> Option<&str> {
        self.captions.first().map(String::as_str)
    }
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, ds: &DialogueState, intents: &[String], slots: &SlotBinding) -> Option<String>;
}

/// Fills the caption pattern of the template the intents select.
pub struct ReferenceSummarizer<'a> {
    pub pack: &'a TemplatePack,
}

impl Summarizer for ReferenceSummarizer<'_> {
    fn summarize(&self, _ds: &DialogueState, intents: &[String], slots: &SlotBinding) -> Option<String> {
        if intents.is_empty() || intents == [UNKNOWN_INTENT] {
            return None;
        }
        let t = self.pack.by_intents(intents)?;
        substitute(&t.from_clarification, slots).ok().map(|(s, _)| s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryExample {
    pub dialogue: String,
    pub caption: String,
}

/// Intent → few-shot examples.
pub type SummaryBank = IndexMap<String, Vec<SummaryExample>>;

pub struct LlmSummarizer<'a> {
    pub llm: &'a dyn LlmBackend,
    pub bank: &'a SummaryBank,
}

impl Summarizer for LlmSummarizer<'_> {
    fn summarize(&self, ds: &DialogueState, intents: &[String], _slots: &SlotBinding) -> Option<String> {
        let examples: Vec<&SummaryExample> = match intents.iter().find_map(|i| self.bank.get(i)) {
            Some(v) => v.iter().collect(),
            None => self.bank.values().flatten().take(5).collect(),
        };
        let shots = examples
            .iter()
            .map(|e| format!("Conversation:\n{}\nTitle: {}", e.dialogue, e.caption))
            .collect::<Vec<_>>()
            .join("\n\n");
        let system = prompts::fill(prompts::SUMMARIZE, &[("examples", &shots)]);
        let req = ChatRequest::new(
            Stage::Summarize,
            vec![Message::system(system), Message::user(ds.transcript())],
        );
        let out = self.llm.complete(&req).ok()?;
        let line = out.lines().find(|l| !l.trim().is_empty())?.trim();
        let line = line.strip_prefix("Title:").unwrap_or(line).trim();
        (!line.is_empty()).then(|| line.to_string())
    }
}

/// Number of ranked captions kept in an outcome.
pub const KEEP: usize = 5;

/// Summary then exact match; BM25 on the summary when that fails; BM25 on
/// the user side of the dialogue when there is no summary.
pub fn retrieve(
    ds: &mut DialogueState,
    intents: &[String],
    slots: &SlotBinding,
    domain: DomainRef,
    corpus: &TableCorpus,
    index: &RetrievalIndex,
    summarizer: &dyn Summarizer,
) -> RetrievalOutcome {
    let summary = summarizer.summarize(ds, intents, slots);
    let pool: Vec<String> = match domain {
        DomainRef::Known(d) => corpus.list_captions(d).to_vec(),
        DomainRef::Unknown => corpus.captions().map(str::to_string).collect(),
    };
    let bm25 = index.for_domain(domain);
    let outcome = match &summary {
        Some(s) => match exact_match(s, &pool).or_else(|| exact_match(s, index.global.captions())) {
            Some(c) => RetrievalOutcome {
                captions: vec![c.to_string()],
                method: Method::Exact,
                scores: Vec::new(),
                summary: summary.clone(),
            },
            None => ranked(bm25_rank(s, bm25, KEEP), Method::Bm25Summary, summary.clone()),
        },
        None => ranked(bm25_rank(&ds.user_text(), bm25, KEEP), Method::Bm25Dialogue, None),
    };
    ds.record(Event::Retrieval {
        summary: outcome.summary.clone(),
        method: outcome.method.as_str().to_string(),
        captions: outcome.captions.clone(),
        scores: outcome.scores.clone(),
    });
    outcome
}

fn ranked(r: Vec<(String, f64)>, method: Method, summary: Option<String>) -> RetrievalOutcome {
    let (captions, scores) = r.into_iter().unzip();
    RetrievalOutcome {
        captions,
        method,
        scores,
        summary,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verbatim_caption_ranks_first() {
        let idx = Bm25Index::standard([
            "Shanghai Pudong Property Sales",
            "Beijing Land Auctions",
            "2021 Enterprise Finance",
        ]);
        let r = bm25_rank("Beijing Land Auctions", &idx, 10);
        assert_eq!(r[0].0, "Beijing Land Auctions");
        assert_eq!(r.len(), 3);
    }

    #[test]
    fn no_overlap_gives_zero_scores_in_caption_order() {
        let idx = Bm25Index::standard(["b", "c", "a"]);
        let r = bm25_rank("zzz", &idx, 10);
        assert_eq!(r.iter().map(|x| x.0.as_str()).collect::<Vec<_>>(), vec!["a", "b", "c"]);
        assert!(r.iter().all(|x| x.1 == 0.0));
    }

    #[test]
    fn rounding_does_not_break_ties() {
        // With an average length of 3, tf 1 at length 1 and tf 3 at length
        // 5 score the same.
        let idx = Bm25Index::standard(["pudong auction sales pudong pudong", "pudong", "land tower price"]);
        let r = bm25_rank("pudong", &idx, 3);
        assert!((r[0].1 - r[1].1).abs() < 1e-9);
        assert_eq!(r[0].0, "pudong");
    }

    #[test]
    fn exact_match_is_strict() {
        let caps = vec!["Beijing Land Auctions".to_string()];
        assert_eq!(
            exact_match(" beijing land  auctions", &caps),
            Some("Beijing Land Auctions")
        );
        assert_eq!(exact_match("Beijing Land Auction", &caps), None);
    }
}
