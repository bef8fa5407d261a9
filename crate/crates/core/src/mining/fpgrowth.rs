//! FP-growth over transactions of dense `u32` item ids.

use std::collections::HashMap;

use super::MiningError;

#[derive(Debug, Clone, PartialEq)]
pub struct FrequentItemset {
    /// Sorted ascending.
    pub items: Vec<u32>,
    pub count: usize,
    pub support: f64,
}

/// Smallest count `c` with `c / n >= min_support`, evaluated in `f64` exactly
/// as the support itself is.
pub fn min_count(n: usize, min_support: f64) -> usize {
    let frequent = |c: usize| c as f64 / n as f64 >= min_support;
    let mut c = (min_support * n as f64).ceil().max(1.0) as usize;
    while c > 1 && frequent(c - 1) {
        c -= 1;
    }
    while c <= n && !frequent(c) {
        c += 1;
    }
    c
}

struct Node {
    item: u32,
    count: usize,
    parent: usize,
    children: Vec<usize>,
}

const ROOT: usize = 0;

struct Tree {
    nodes: Vec<Node>,
    /// Frequent items from most to least frequent, with their node lists.
    header: Vec<(u32, usize, Vec<usize>)>,
}

impl Tree {
    fn build(patterns: &[(Vec<u32>, usize)], min_count: usize) -> Option<Tree> {
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for (items, n) in patterns {
            for &i in items {
                *counts.entry(i).or_default() += n;
            }
        }
        let mut frequent: Vec<(u32, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        if frequent.is_empty() {
            return None;
        }
        frequent.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let rank: HashMap<u32, usize> = frequent.iter().enumerate().map(|(r, &(i, _))| (i, r)).collect();

        let mut tree = Tree {
            nodes: vec![Node {
                item: u32::MAX,
                count: 0,
                parent: ROOT,
                children: Vec::new(),
            }],
            header: frequent.iter().map(|&(i, c)| (i, c, Vec::new())).collect(),
        };
        let mut path: Vec<usize> = Vec::new();
        for (items, n) in patterns {
            path.clear();
            path.extend(items.iter().filter_map(|i| rank.get(i).copied()));
            path.sort_unstable();
            path.dedup();
            let mut cur = ROOT;
            for &r in &path {
                let item = tree.header[r].0;
                let found = tree.nodes[cur]
                    .children
                    .iter()
                    .copied()
                    .find(|&c| tree.nodes[c].item == item);
                cur = match found {
                    Some(c) => c,
                    None => {
                        let id = tree.nodes.len();
                        tree.nodes.push(Node {
                            item,
                            count: 0,
                            parent: cur,
                            children: Vec::new(),
                        });
                        tree.nodes[cur].children.push(id);
                        tree.header[r].2.push(id);
                        id
                    }
                };
                tree.nodes[cur].count += n;
            }
        }
        Some(tree)
    }

    fn prefix_paths(&self, nodes: &[usize]) -> Vec<(Vec<u32>, usize)> {
        let mut base = Vec::with_capacity(nodes.len());
        for &n in nodes {
            let mut items = Vec::new();
            let mut cur = self.nodes[n].parent;
            while cur != ROOT {
                items.push(self.nodes[cur].item);
                cur = self.nodes[cur].parent;
            }
            if !items.is_empty() {
                base.push((items, self.nodes[n].count));
            }
        }
        base
    }
}

fn mine(
    patterns: &[(Vec<u32>, usize)],
    min_count: usize,
    suffix: &mut Vec<u32>,
    out: &mut Vec<(Vec<u32>, usize)>,
) {
    let Some(tree) = Tree::build(patterns, min_count) else {
        return;
    };
    for (item, count, nodes) in tree.header.iter().rev() {
        suffix.push(*item);
        let mut found = suffix.clone();
        found.sort_unstable();
        out.push((found, *count));
        let base = tree.prefix_paths(nodes);
        if !base.is_empty() {
            mine(&base, min_count, suffix, out);
        }
        suffix.pop();
    }
}

/// All itemsets whose relative frequency is at least `min_support`, sorted
/// lexicographically by item ids. Duplicate items inside a transaction count once.
pub fn fpgrowth(transactions: &[Vec<u32>], min_support: f64) -> Result<Vec<FrequentItemset>, MiningError> {
    if !(min_support > 0.0 && min_support <= 1.0) {
        return Err(MiningError::InvalidSupport(min_support));
    }
    if transactions.is_empty() {
        return Err(MiningError::EmptyTransactions);
    }
    let n = transactions.len();
    let threshold = min_count(n, min_support);
    let patterns: Vec<(Vec<u32>, usize)> = transactions.iter().map(|t| (t.clone(), 1)).collect();
    let mut found = Vec::new();
    mine(&patterns, threshold, &mut Vec::new(), &mut found);
    found.sort_unstable();
    Ok(found
        .into_iter()
        .map(|(items, count)| FrequentItemset {
            items,
            count,
            support: count as f64 / n as f64,
        })
        .collect())
}
