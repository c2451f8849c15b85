//! BIO slot tagging over the shared tokenizer.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::text::{tokenize, Token};

/// Slot type → concrete value.
pub type SlotBinding = IndexMap<String, String>;

#[derive(Debug, Error, PartialEq)]
pub enum BioError {
    #[error("value {value:?} for slot {slot} not found at a token boundary in {question:?}")]
    ValueNotLocatable {
        slot: String,
        value: String,
        question: String,
    },
    #[error("tag sequence length {tags} does not match token count {tokens}")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("tag {tag} at position {pos} does not continue a span of the same slot")]
    DanglingInside { pos: usize, tag: String },
    #[error("tokens do not match the question text")]
    TokenMismatch,
    #[error("malformed tag {0:?}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B(String),
    I(String),
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(s) => write!(f, "B-{s}"),
            Tag::I(s) => write!(f, "I-{s}"),
        }
    }
}

impl FromStr for Tag {
    type Err = BioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::O);
        }
        match s.split_once('-') {
            Some(("B", t)) if !t.is_empty() => Ok(Tag::B(t.to_string())),
            Some(("I", t)) if !t.is_empty() => Ok(Tag::I(t.to_string())),
            _ => Err(BioError::Malformed(s.to_string())),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct BioTagSequence {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

/// A slot value located in the question by byte offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotSpan {
    pub slot: String,
    pub start: usize,
    pub end: usize,
}

impl BioTagSequence {
    pub fn all_outside(question: &str) -> Self {
        let tokens: Vec<String> = tokenize(question).into_iter().map(|t| t.text).collect();
        let tags = vec![Tag::O; tokens.len()];
        Self { tokens, tags }
    }

    pub fn validate(&self) -> Result<(), BioError> {
        if self.tokens.len() != self.tags.len() {
            return Err(BioError::LengthMismatch {
                tokens: self.tokens.len(),
                tags: self.tags.len(),
            });
        }
        let mut prev: Option<&str> = None;
        for (pos, tag) in self.tags.iter().enumerate() {
            match tag {
                Tag::O => prev = None,
                Tag::B(s) => prev = Some(s),
                Tag::I(s) => {
                    if prev != Some(s.as_str()) {
                        return Err(BioError::DanglingInside {
                            pos,
                            tag: tag.to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Spans as (slot, first token index, one past last token index).
    pub fn token_spans(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut open: Option<(String, usize)> = None;
        for (i, tag) in self.tags.iter().enumerate() {
            match tag {
                Tag::I(_) => {}
                other => {
                    if let Some((s, from)) = open.take() {
                        out.push((s, from, i));
                    }
                    if let Tag::B(s) = other {
                        open = Some((s.clone(), i));
                    }
                }
            }
        }
        if let Some((s, from)) = open {
            out.push((s, from, self.tags.len()));
        }
        out
    }

    /// Recovers slot values from `question`, which must be the text the
    /// sequence was derived from. The first span of each slot type wins.
    pub fn decode(&self, question: &str) -> Result<SlotBinding, BioError> {
        self.validate()?;
        let toks = tokenize(question);
        if toks.len() != self.tokens.len() || toks.iter().zip(&self.tokens).any(|(a, b)| &a.text != b) {
            return Err(BioError::TokenMismatch);
        }
        let mut out = SlotBinding::new();
        for (slot, from, to) in self.token_spans() {
            let value = &question[toks[from].start..toks[to - 1].end];
            out.entry(slot).or_insert_with(|| value.to_string());
        }
        Ok(out)
    }
}

/// Tags tokens covered by known byte spans. Every span must start and end on
/// token boundaries.
pub fn tags_from_spans(question: &str, spans: &[SlotSpan]) -> Result<BioTagSequence, BioError> {
    let toks = tokenize(question);
    let mut tags = vec![Tag::O; toks.len()];
    for span in spans {
        let first = toks.iter().position(|t| t.start == span.start);
        let last = toks.iter().position(|t| t.end == span.end);
        let (Some(first), Some(last)) = (first, last) else {
            return Err(BioError::ValueNotLocatable {
                slot: span.slot.clone(),
                value: question.get(span.start..span.end).unwrap_or_default().to_string(),
                question: question.to_string(),
            });
        };
        tags[first] = Tag::B(span.slot.clone());
        for t in tags.iter_mut().take(last + 1).skip(first + 1) {
            *t = Tag::I(span.slot.clone());
        }
    }
    Ok(BioTagSequence {
        tokens: toks.into_iter().map(|t| t.text).collect(),
        tags,
    })
}

fn aligned(toks: &[Token], start: usize, end: usize) -> bool {
    toks.iter().any(|t| t.start == start) && toks.iter().any(|t| t.end == end)
}

/// Locates each bound value in the question and tags it.
///
/// Longer values are placed first so that a short value never claims a
/// substring of a longer one; each value takes its first free
/// token-aligned occurrence.
pub fn derive_bio_tags(question: &str, binding: &SlotBinding) -> Result<BioTagSequence, BioError> {
    let toks = tokenize(question);
    let mut order: Vec<(&String, &String)> = binding.iter().collect();
    order.sort_by_key(|x| std::cmp::Reverse(x.1.len()));
    let mut spans: Vec<SlotSpan> = Vec::new();
    for (slot, value) in order {
        let found = question
            .match_indices(value.as_str())
            .map(|(i, _)| (i, i + value.len()))
            .find(|&(s, e)| {
                !value.is_empty() && aligned(&toks, s, e) && spans.iter().all(|o| e <= o.start || s >= o.end)
            });
        match found {
            Some((start, end)) => spans.push(SlotSpan {
                slot: slot.clone(),
                start,
                end,
            }),
            None => {
                return Err(BioError::ValueNotLocatable {
                    slot: slot.clone(),
                    value: value.clone(),
                    question: question.to_string(),
                })
            }
        }
    }
    tags_from_spans(question, &spans)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, &str)]) -> SlotBinding {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn single_city_slot() {
        let bio = derive_bio_tags("prices in Shanghai", &bind(&[("City", "Shanghai")])).unwrap();
        assert_eq!(bio.tags, vec![Tag::O, Tag::O, Tag::B("City".into())]);
    }

    #[test]
    fn no_slots_is_all_outside() {
        let bio = derive_bio_tags("rank all projects", &SlotBinding::new()).unwrap();
        assert!(bio.tags.iter().all(|t| *t == Tag::O));
        assert_eq!(bio.tags.len(), 3);
    }

    #[test]
    fn adjacent_multi_token_values_do_not_overlap() {
        let q = "show Golden Bay Plaza Sunrise Garden Phase Two now";
        let b = bind(&[
            ("ProjectName", "Golden Bay Plaza"),
            ("Other", "Sunrise Garden Phase Two"),
        ]);
        let bio = derive_bio_tags(q, &b).unwrap();
        bio.validate().unwrap();
        // independent span check: substring offsets from the raw question
        let spans = bio.token_spans();
        assert_eq!(spans.len(), 2);
        let toks = tokenize(q);
        for (slot, from, to) in spans {
            let text = &q[toks[from].start..toks[to - 1].end];
            assert_eq!(text, b[&slot]);
        }
        assert_eq!(bio.decode(q).unwrap(), b);
    }

    #[test]
    fn value_inside_longer_value_takes_next_occurrence() {
        let q = "Shanghai Tower sales in Shanghai";
        let b = bind(&[("City", "Shanghai"), ("ProjectName", "Shanghai Tower")]);
        let bio = derive_bio_tags(q, &b).unwrap();
        let decoded = bio.decode(q).unwrap();
        assert_eq!(decoded["City"], "Shanghai");
        assert_eq!(decoded["ProjectName"], "Shanghai Tower");
        assert_eq!(bio.tags[4], Tag::B("City".into()));
    }

    #[test]
    fn unlocatable_value_is_an_error() {
        let err = derive_bio_tags("prices in Beijing", &bind(&[("City", "Shanghai")])).unwrap_err();
        assert!(matches!(err, BioError::ValueNotLocatable { .. }));
        // partial-token matches do not count
        assert!(derive_bio_tags("prices in Shanghaiwide", &bind(&[("City", "Shanghai")])).is_err());
    }

    #[test]
    fn dangling_inside_rejected() {
        let bio = BioTagSequence {
            tokens: vec!["a".into(), "b".into()],
            tags: vec![Tag::O, Tag::I("City".into())],
        };
        assert!(matches!(bio.validate(), Err(BioError::DanglingInside { pos: 1, .. })));
        let bio = BioTagSequence {
            tokens: vec!["a".into(), "b".into()],
            tags: vec![Tag::B("Year".into()), Tag::I("City".into())],
        };
        assert!(bio.validate().is_err());
    }

    #[test]
    fn tag_serde_is_plain_string() {
        let json = serde_json::to_string(&vec![Tag::O, Tag::B("City".into()), Tag::I("City".into())]).unwrap();
        assert_eq!(json, r#"["O","B-City","I-City"]"#);
        let back: Vec<Tag> = serde_json::from_str(&json).unwrap();
        assert_eq!(back.len(), 3);
        assert!(serde_json::from_str::<Tag>("\"X-City\"").is_err());
    }
}
