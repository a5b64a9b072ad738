//! The cross-domain sequential graph: two undirected account–item graphs
//! and two directed item–item transition graphs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Domain, HybridSequence, ItemRef, VocabSizes, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphOptions {
    /// When off, both transition graphs are left empty.
    pub include_sequential_edges: bool,
    /// Transition edges seen fewer times than this are dropped.
    pub min_edge_count: u32,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            include_sequential_edges: true,
            min_edge_count: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct DomainGraph {
    /// account -> sorted (item, count)
    account_items: Vec<Vec<(usize, u32)>>,
    /// item -> sorted accounts
    item_accounts: Vec<Vec<usize>>,
    /// item -> sorted (successor, count)
    successors: Vec<Vec<(usize, u32)>>,
    /// item -> sorted (predecessor, count)
    predecessors: Vec<Vec<(usize, u32)>>,
}

/// Immutable CDS graph built from training sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdsGraph {
    sizes: VocabSizes,
    options: GraphOptions,
    domains: [DomainGraph; 2],
}

/// Neighborhood of an item node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemNeighbors {
    pub accounts: Vec<usize>,
    pub predecessors: Vec<usize>,
    pub successors: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub accounts: usize,
    pub items_a: usize,
    pub items_b: usize,
    /// Distinct edges in G_A, G_B, G_C, G_D.
    pub edges_ga: usize,
    pub edges_gb: usize,
    pub edges_gc: usize,
    pub edges_gd: usize,
    /// degree -> number of nodes, per relation
    pub account_degree_a: BTreeMap<usize, usize>,
    pub account_degree_b: BTreeMap<usize, usize>,
    pub item_degree_a: BTreeMap<usize, usize>,
    pub item_degree_b: BTreeMap<usize, usize>,
}

/// Builds the CDS graph.
///
/// Account–item edges collapse repeated interactions into one edge with a
/// count. Transition edges join consecutive items of each domain-filtered
/// subsequence, so `A1 -> A2` exists even when B items sit between them.
pub fn build_cds_graph(
    train: &[HybridSequence],
    sizes: VocabSizes,
    options: &GraphOptions,
) -> Result<CdsGraph> {
    if train.is_empty() {
        return Err(Error::Data("no sequences".into()));
    }
    if options.min_edge_count < 1 {
        return Err(Error::Config("min_edge_count must be at least 1".into()));
    }
    for seq in train {
        if seq.account >= sizes.accounts {
            return Err(Error::Index {
                what: "account",
                index: seq.account,
                size: sizes.accounts,
            });
        }
        for ev in &seq.events {
            let size = sizes.items(ev.domain);
            if ev.index >= size {
                return Err(Error::Index {
                    what: "item",
                    index: ev.index,
                    size,
                });
            }
        }
    }

    let mut account_item: [BTreeMap<(usize, usize), u32>; 2] = Default::default();
    let mut transitions: [BTreeMap<(usize, usize), u32>; 2] = Default::default();
    for seq in train {
        for ev in &seq.events {
            *account_item[ev.domain.index()]
                .entry((seq.account, ev.index))
                .or_default() += 1;
        }
        if options.include_sequential_edges {
            for d in Domain::BOTH {
                let items: Vec<usize> = seq.domain_items(d).collect();
                for w in items.windows(2) {
                    *transitions[d.index()].entry((w[0], w[1])).or_default() += 1;
                }
            }
        }
    }

    let domains = Domain::BOTH.map(|d| {
        let n_items = sizes.items(d);
        let mut g = DomainGraph {
            account_items: vec![Vec::new(); sizes.accounts],
            item_accounts: vec![Vec::new(); n_items],
            successors: vec![Vec::new(); n_items],
            predecessors: vec![Vec::new(); n_items],
        };
        // BTreeMap iteration keeps every adjacency list sorted
        for (&(a, i), &c) in &account_item[d.index()] {
            g.account_items[a].push((i, c));
            g.item_accounts[i].push(a);
        }
        for (&(u, v), &c) in &transitions[d.index()] {
            if c >= options.min_edge_count {
                g.successors[u].push((v, c));
                g.predecessors[v].push((u, c));
            }
        }
        for p in &mut g.predecessors {
            p.sort_unstable();
        }
        g
    });

    Ok(CdsGraph {
        sizes,
        options: options.clone(),
        domains,
    })
}

impl CdsGraph {
    pub fn sizes(&self) -> VocabSizes {
        self.sizes
    }

    pub fn options(&self) -> &GraphOptions {
        &self.options
    }

    pub fn n_accounts(&self) -> usize {
        self.sizes.accounts
    }

    pub fn n_items(&self, domain: Domain) -> usize {
        self.sizes.items(domain)
    }

    /// Items the account interacted with in `domain`, ascending by index.
    pub fn user_neighbors(&self, account: usize, domain: Domain) -> Result<&[(usize, u32)]> {
        self.check_account(account)?;
        Ok(&self.domains[domain.index()].account_items[account])
    }

    pub fn item_neighbors(&self, item: ItemRef) -> Result<ItemNeighbors> {
        self.check_item(item)?;
        let g = &self.domains[item.domain.index()];
        Ok(ItemNeighbors {
            accounts: g.item_accounts[item.index].clone(),
            predecessors: g.predecessors[item.index].iter().map(|p| p.0).collect(),
            successors: g.successors[item.index].iter().map(|s| s.0).collect(),
        })
    }

    pub(crate) fn item_accounts(&self, item: ItemRef) -> &[usize] {
        &self.domains[item.domain.index()].item_accounts[item.index]
    }

    pub(crate) fn predecessors(&self, item: ItemRef) -> &[(usize, u32)] {
        &self.domains[item.domain.index()].predecessors[item.index]
    }

    /// All account–item edges of one domain as `(account, item, count)`.
    pub fn account_item_edges(
        &self,
        domain: Domain,
    ) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.domains[domain.index()]
            .account_items
            .iter()
            .enumerate()
            .flat_map(|(a, items)| items.iter().map(move |&(i, c)| (a, i, c)))
    }

    /// All transition edges of one domain as `(from, to, count)`.
    pub fn transition_edges(
        &self,
        domain: Domain,
    ) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.domains[domain.index()]
            .successors
            .iter()
            .enumerate()
            .flat_map(|(u, succ)| succ.iter().map(move |&(v, c)| (u, v, c)))
    }

    pub fn stats(&self) -> GraphStats {
        let hist = |lens: &mut dyn Iterator<Item = usize>| {
            let mut h = BTreeMap::new();
            for l in lens {
                *h.entry(l).or_insert(0) += 1;
            }
            h
        };
        let [ga, gb] = &self.domains;
        let item_degree = |g: &DomainGraph| {
            hist(&mut (0..g.item_accounts.len()).map(|i| {
                g.item_accounts[i].len() + g.successors[i].len() + g.predecessors[i].len()
            }))
        };
        GraphStats {
            accounts: self.sizes.accounts,
            items_a: self.sizes.items_a,
            items_b: self.sizes.items_b,
            edges_ga: ga.account_items.iter().map(Vec::len).sum(),
            edges_gb: gb.account_items.iter().map(Vec::len).sum(),
            edges_gc: ga.successors.iter().map(Vec::len).sum(),
            edges_gd: gb.successors.iter().map(Vec::len).sum(),
            account_degree_a: hist(&mut ga.account_items.iter().map(Vec::len)),
            account_degree_b: hist(&mut gb.account_items.iter().map(Vec::len)),
            item_degree_a: item_degree(ga),
            item_degree_b: item_degree(gb),
        }
    }

    /// Renders the four edge lists (`ga`, `gb`, `gc`, `gd`) as
    /// `src\tdst\tcount` text using raw identifiers.
    pub fn export_tsv(&self, vocab: &Vocabulary) -> [(&'static str, String); 4] {
        let acct = |a: usize| vocab.account_name(a).unwrap_or("?").to_owned();
        let item = |d: Domain, i: usize| {
            vocab
                .item_name(ItemRef::new(d, i))
                .unwrap_or("?")
                .to_owned()
        };
        let ai = |d: Domain| {
            let mut s = String::new();
            for (a, i, c) in self.account_item_edges(d) {
                let _ = writeln!(s, "{}\t{}\t{}", acct(a), item(d, i), c);
            }
            s
        };
        let tr = |d: Domain| {
            let mut s = String::new();
            for (u, v, c) in self.transition_edges(d) {
                let _ = writeln!(s, "{}\t{}\t{}", item(d, u), item(d, v), c);
            }
            s
        };
        [
            ("ga.tsv", ai(Domain::A)),
            ("gb.tsv", ai(Domain::B)),
            ("gc.tsv", tr(Domain::A)),
            ("gd.tsv", tr(Domain::B)),
        ]
    }

    fn check_account(&self, account: usize) -> Result<()> {
        if account >= self.sizes.accounts {
            return Err(Error::Index {
                what: "account",
                index: account,
                size: self.sizes.accounts,
            });
        }
        Ok(())
    }

    fn check_item(&self, item: ItemRef) -> Result<()> {
        let size = self.sizes.items(item.domain);
        if item.index >= size {
            return Err(Error::Index {
                what: "item",
                index: item.index,
                size,
            });
        }
        Ok(())
    }
}
