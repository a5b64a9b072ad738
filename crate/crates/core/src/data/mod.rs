//! Interaction logs, vocabularies and the synthetic shared-account corpus.

mod log;
mod split;
mod synth;

use std::fmt;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

pub use self::log::{parse_log, parse_log_str, write_log, ParsedLog, Rejection};
pub use self::split::{split_sequences, Split, DEFAULT_SPLIT_RATIOS};
pub use self::synth::{generate_synthetic, write_labels, SyntheticCorpus, SyntheticSpec};

/// One of the two item domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::A, Domain::B];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Domain::A => 0,
            Domain::B => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Domain::A => "A",
            Domain::B => "B",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Domain> {
        match tag {
            "A" => Some(Domain::A),
            "B" => Some(Domain::B),
            _ => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A dense per-domain item index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemRef {
    pub domain: Domain,
    pub index: usize,
}

impl ItemRef {
    pub fn new(domain: Domain, index: usize) -> Self {
        ItemRef { domain, index }
    }
}

/// One account's time-ordered, domain-tagged interaction list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridSequence {
    pub account: usize,
    pub events: Vec<ItemRef>,
}

impl HybridSequence {
    pub fn new(account: usize, events: Vec<ItemRef>) -> Self {
        HybridSequence { account, events }
    }

    /// Item indices of the domain-filtered subsequence, in log order.
    pub fn domain_items(&self, domain: Domain) -> impl Iterator<Item = usize> + '_ {
        self.events
            .iter()
            .filter(move |e| e.domain == domain)
            .map(|e| e.index)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Bijective maps between raw identifiers and dense indices, one per
/// domain plus one for accounts. Indices are assigned in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    accounts: IndexSet<String>,
    items: [IndexSet<String>; 2],
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern_account(&mut self, raw: &str) -> usize {
        intern(&mut self.accounts, raw)
    }

    pub fn intern_item(&mut self, domain: Domain, raw: &str) -> ItemRef {
        ItemRef::new(domain, intern(&mut self.items[domain.index()], raw))
    }

    pub fn account_index(&self, raw: &str) -> Option<usize> {
        self.accounts.get_index_of(raw)
    }

    pub fn item_index(&self, domain: Domain, raw: &str) -> Option<ItemRef> {
        self.items[domain.index()]
            .get_index_of(raw)
            .map(|i| ItemRef::new(domain, i))
    }

    pub fn account_name(&self, index: usize) -> Option<&str> {
        self.accounts.get_index(index).map(String::as_str)
    }

    pub fn item_name(&self, item: ItemRef) -> Option<&str> {
        self.items[item.domain.index()]
            .get_index(item.index)
            .map(String::as_str)
    }

    pub fn n_accounts(&self) -> usize {
        self.accounts.len()
    }

    pub fn n_items(&self, domain: Domain) -> usize {
        self.items[domain.index()].len()
    }

    pub fn sizes(&self) -> VocabSizes {
        VocabSizes {
            accounts: self.n_accounts(),
            items_a: self.n_items(Domain::A),
            items_b: self.n_items(Domain::B),
        }
    }
}

fn intern(set: &mut IndexSet<String>, raw: &str) -> usize {
    match set.get_index_of(raw) {
        Some(i) => i,
        None => set.insert_full(raw.to_owned()).0,
    }
}

/// Node counts `n`, `p`, `q` of a corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub accounts: usize,
    pub items_a: usize,
    pub items_b: usize,
}

impl VocabSizes {
    pub fn items(&self, domain: Domain) -> usize {
        match domain {
            Domain::A => self.items_a,
            Domain::B => self.items_b,
        }
    }
}
