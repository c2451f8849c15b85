//! Tokenization and string normalization shared by tagging, retrieval and
//! value lookup.

/// A token with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_latin(c: char) -> bool {
    c.is_ascii() || ('\u{00C0}'..='\u{024F}').contains(&c) || ('\u{1E00}'..='\u{1EFF}').contains(&c)
}

/// Splits text into tokens.
///
/// Latin text is split on whitespace, with leading and trailing ASCII
/// punctuation broken off into single-character tokens. Any other script
/// is split per character.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut chunk_start: Option<usize> = None;
    let flush = |out: &mut Vec<Token>, from: usize, to: usize| {
        if from < to {
            split_latin_chunk(text, from, to, out);
        }
    };
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = chunk_start.take() {
                flush(&mut out, s, i);
            }
        } else if !is_latin(c) {
            if let Some(s) = chunk_start.take() {
                flush(&mut out, s, i);
            }
            out.push(Token {
                text: c.to_string(),
                start: i,
                end: i + c.len_utf8(),
            });
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    if let Some(s) = chunk_start {
        flush(&mut out, s, text.len());
    }
    out
}

fn split_latin_chunk(text: &str, from: usize, to: usize, out: &mut Vec<Token>) {
    let chunk = &text[from..to];
    let mut lead = 0;
    for c in chunk.chars() {
        if c.is_ascii_punctuation() {
            lead += 1;
        } else {
            break;
        }
    }
    let bytes = chunk.as_bytes();
    // all-punctuation chunk: one token per char
    if lead == chunk.len() {
        for (i, c) in chunk.char_indices() {
            out.push(Token {
                text: c.to_string(),
                start: from + i,
                end: from + i + 1,
            });
        }
        return;
    }
    let mut trail = 0;
    while trail < bytes.len() - lead && bytes[bytes.len() - 1 - trail].is_ascii_punctuation() {
        trail += 1;
    }
    for i in 0..lead {
        out.push(Token {
            text: chunk[i..i + 1].to_string(),
            start: from + i,
            end: from + i + 1,
        });
    }
    let core_end = chunk.len() - trail;
    out.push(Token {
        text: chunk[lead..core_end].to_string(),
        start: from + lead,
        end: from + core_end,
    });
    for i in core_end..chunk.len() {
        out.push(Token {
            text: chunk[i..i + 1].to_string(),
            start: from + i,
            end: from + i + 1,
        });
    }
}

/// Trim, collapse internal whitespace runs and fold case.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

/// Lower-cased token texts, as used for lexical ranking.
pub fn terms(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !(t.text.len() == 1 && t.text.as_bytes()[0].is_ascii_punctuation()))
        .map(|t| t.text.to_lowercase())
        .collect()
}
