use std::fmt::Write as _;
use std::io::BufRead;

use super::{Domain, HybridSequence, Vocabulary};
use crate::error::Result;

/// A line that did not yield a sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct ParsedLog {
    pub vocab: Vocabulary,
    pub sequences: Vec<HybridSequence>,
    pub rejected: Vec<Rejection>,
}

/// Parses an interaction log.
///
/// Each non-comment line is `<account>\t<tag>:<item>( <tag>:<item>)*`.
/// Malformed lines are collected in [`ParsedLog::rejected`] and do not
/// touch the vocabulary; only I/O failures abort.
pub fn parse_log<R: BufRead>(reader: R) -> Result<ParsedLog> {
    let mut out = ParsedLog::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match tokenize(line) {
            Ok((account, items)) => {
                let account = out.vocab.intern_account(account);
                let events = items
                    .into_iter()
                    .map(|(d, raw)| out.vocab.intern_item(d, raw))
                    .collect();
                out.sequences.push(HybridSequence::new(account, events));
            }
            Err(reason) => out.rejected.push(Rejection {
                line: i + 1,
                reason,
            }),
        }
    }
    Ok(out)
}

pub fn parse_log_str(text: &str) -> ParsedLog {
    parse_log(text.as_bytes()).expect("reading from memory cannot fail")
}

type Tokens<'a> = (&'a str, Vec<(Domain, &'a str)>);

fn tokenize(line: &str) -> std::result::Result<Tokens<'_>, String> {
    let (account, rest) = line
        .split_once('\t')
        .ok_or_else(|| "missing tab after account id".to_string())?;
    let account = account.trim();
    if account.is_empty() {
        return Err("empty account id".into());
    }
    let mut items = Vec::new();
    for tok in rest.split_whitespace() {
        let (tag, raw) = tok
            .split_once(':')
            .ok_or_else(|| format!("token '{tok}' lacks a domain tag"))?;
        let domain = Domain::from_tag(tag).ok_or_else(|| format!("unknown domain tag '{tag}'"))?;
        if raw.is_empty() {
            return Err(format!("token '{tok}' has an empty item id"));
        }
        items.push((domain, raw));
    }
    if items.len() < 2 {
        return Err("too short".into());
    }
    Ok((account, items))
}

/// Serializes sequences back to the log format.
pub fn write_log(vocab: &Vocabulary, sequences: &[HybridSequence]) -> String {
    let mut out = String::new();
    for seq in sequences {
        out.push_str(vocab.account_name(seq.account).unwrap_or("?"));
        out.push('\t');
        for (i, ev) in seq.events.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}:{}", ev.domain, vocab.item_name(*ev).unwrap_or("?"));
        }
        out.push('\n');
    }
    out
}
