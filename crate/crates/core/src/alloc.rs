//! Allocation-record analytics: the prefix-inclusion tree, coverage and
//! approximate max aggregates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use serde::Serialize;

use crate::address::{range_to_prefixes, AddressUniverse, Prefix};
use crate::error::{Error, Result};

/// Default coverage threshold for approximate max aggregates.
pub const DEFAULT_AGGREGATE_THRESHOLD: f64 = 0.51;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixRecord {
    pub prefix: Prefix,
    pub label: String,
    pub attributes: BTreeMap<String, String>,
}

impl PrefixRecord {
    pub fn new(prefix: Prefix, label: impl Into<String>) -> Self {
        PrefixRecord {
            prefix,
            label: label.into(),
            attributes: BTreeMap::new(),
        }
    }
}

/// Read `prefix,label[,key=value...]` rows. The prefix column may also hold
/// an inclusive address range `first-last`, which expands to its minimal
/// CIDR cover with one record per block. A leading `prefix,label` header and
/// `#` comment lines are skipped.
pub fn parse_records<R: Read>(reader: R, universe: AddressUniverse) -> Result<Vec<PrefixRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Config(format!("record file: {e}")))?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        let field = |k: usize| row.get(k).unwrap_or("");
        if i == 0 && field(0).eq_ignore_ascii_case("prefix") {
            continue;
        }
        if row.len() == 1 && field(0).is_empty() {
            continue;
        }
        let bad = || Error::InvalidPrefix(format!("line {line}: {}", field(0)));
        let prefixes = match field(0).split_once('-') {
            Some((a, b)) => {
                let lo = universe.parse_value(a).and_then(|r| r.ok()).ok_or_else(bad)?;
                let hi = universe.parse_value(b).and_then(|r| r.ok()).ok_or_else(bad)?;
                range_to_prefixes(lo, hi, universe)?
            }
            None => vec![Prefix::parse(field(0), universe).map_err(|_| bad())?],
        };
        let attributes: BTreeMap<String, String> = (2..row.len())
            .filter_map(|k| field(k).split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        for prefix in prefixes {
            out.push(PrefixRecord {
                prefix,
                label: field(1).to_string(),
                attributes: attributes.clone(),
            });
        }
    }
    Ok(out)
}

/// Two records named the same prefix; the later label was kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collision {
    pub prefix: Prefix,
    pub dropped: String,
    pub kept: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub record: PrefixRecord,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
}

/// Forest of records with an edge from each record to its closest enclosing
/// record. Nodes are stored in address order (shorter prefixes first on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionTree {
    pub universe: AddressUniverse,
    pub nodes: Vec<TreeNode>,
    pub roots: Vec<usize>,
    pub collisions: Vec<Collision>,
}

/// Sort key placing a prefix by its first address, then by length.
fn start_key(p: &Prefix) -> (u128, u32) {
    let start = if p.len() == 0 {
        0
    } else {
        p.index() << (128 - p.len())
    };
    (start, p.len())
}

pub fn build_inclusion_tree(records: Vec<PrefixRecord>, universe: AddressUniverse) -> InclusionTree {
    let mut unique: BTreeMap<(u128, u32), PrefixRecord> = BTreeMap::new();
    let mut collisions = Vec::new();
    for rec in records {
        let key = start_key(&rec.prefix);
        if let Some(old) = unique.insert(key, rec) {
            let kept = &unique[&key];
            collisions.push(Collision {
                prefix: old.prefix,
                dropped: old.label,
                kept: kept.label.clone(),
            });
        }
    }

    let mut nodes: Vec<TreeNode> = Vec::with_capacity(unique.len());
    let mut roots = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    for rec in unique.into_values() {
        while let Some(&top) = stack.last() {
            if nodes[top].record.prefix.contains(&rec.prefix) {
                break;
            }
            stack.pop();
        }
        let id = nodes.len();
        let parent = stack.last().copied();
        let depth = parent.map_or(0, |p| nodes[p].depth + 1);
        match parent {
            Some(p) => nodes[p].children.push(id),
            None => roots.push(id),
        }
        nodes.push(TreeNode {
            record: rec,
            parent,
            children: Vec::new(),
            depth,
        });
        stack.push(id);
    }
    InclusionTree {
        universe,
        nodes,
        roots,
        collisions,
    }
}

impl InclusionTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn find(&self, prefix: &Prefix) -> Option<usize> {
        let key = start_key(prefix);
        self.nodes
            .binary_search_by(|n| start_key(&n.record.prefix).cmp(&key))
            .ok()
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].children.is_empty()
    }

    /// Leaf records below `id` (excluding `id` itself).
    pub fn leaves_under(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut todo: Vec<usize> = self.nodes[id].children.iter().rev().copied().collect();
        while let Some(n) = todo.pop() {
            if self.is_leaf(n) {
                out.push(n);
            } else {
                todo.extend(self.nodes[n].children.iter().rev());
            }
        }
        out
    }

    /// Index range of nodes whose prefix lies inside `ancestor`.
    fn inside(&self, ancestor: &Prefix) -> std::ops::Range<usize> {
        let lo = start_key(ancestor);
        let from = self.nodes.partition_point(|n| start_key(&n.record.prefix) < lo);
        let to = from
            + self.nodes[from..]
                .iter()
                .take_while(|n| ancestor.contains(&n.record.prefix))
                .count();
        from..to
    }
}

/// Share of `ancestor`'s span covered by records strictly longer than it.
pub fn percent_covered(tree: &InclusionTree, ancestor: &Prefix) -> f64 {
    let mut covered = 0.0;
    let mut last: Option<Prefix> = None;
    for n in &tree.nodes[tree.inside(ancestor)] {
        let p = n.record.prefix;
        if p.len() <= ancestor.len() || last.is_some_and(|l| l.contains(&p)) {
            continue;
        }
        covered += 2f64.powi(-((p.len() - ancestor.len()) as i32));
        last = Some(p);
    }
    covered
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub prefix: Prefix,
    pub coverage: f64,
}

/// Walk from the parent record toward its leaf records and emit the first
/// prefix on each path whose coverage reaches `threshold`.
pub fn approx_max_aggregates(tree: &InclusionTree, parent: usize, threshold: f64) -> Vec<Aggregate> {
    // Leaves come back in address order and are pairwise disjoint, so the
    // leaves under any prefix form a contiguous slice.
    let leaves: Vec<Prefix> = tree
        .leaves_under(parent)
        .into_iter()
        .map(|i| tree.nodes[i].record.prefix)
        .collect();
    let mut out = Vec::new();
    let mut todo = vec![(tree.nodes[parent].record.prefix, &leaves[..])];
    while let Some((x, inside)) = todo.pop() {
        let coverage = percent_covered(tree, &x);
        if coverage >= threshold {
            out.push(Aggregate { prefix: x, coverage });
            continue;
        }
        if inside.first() == Some(&x) {
            continue;
        }
        let right = x.child(true);
        let split = inside.partition_point(|l| !right.contains(l));
        // Right pushed first so output follows address order.
        for (c, part) in [(right, &inside[split..]), (x.child(false), &inside[..split])] {
            if !part.is_empty() {
                todo.push((c, part));
            }
        }
    }
    out
}

/// For each leaf under `parent`, the number of aggregates strictly between
/// the leaf and the parent record.
pub fn added_levels(tree: &InclusionTree, parent: usize, aggregates: &[Aggregate]) -> Vec<(usize, usize)> {
    let top = tree.nodes[parent].record.prefix;
    tree.leaves_under(parent)
        .into_iter()
        .map(|leaf| {
            let lp = tree.nodes[leaf].record.prefix;
            let n = aggregates
                .iter()
                .filter(|a| a.prefix != top && a.prefix != lp && a.prefix.contains(&lp))
                .count();
            (leaf, n)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WidthDepthStats {
    /// Child count of every record with at least one child.
    pub degrees: Vec<usize>,
    /// Depth of every record.
    pub depths: Vec<usize>,
}

pub fn width_depth_stats(tree: &InclusionTree) -> WidthDepthStats {
    WidthDepthStats {
        degrees: tree
            .nodes
            .iter()
            .map(|n| n.children.len())
            .filter(|&d| d > 0)
            .collect(),
        depths: tree.nodes.iter().map(|n| n.depth).collect(),
    }
}

/// `(value, count, P(X >= value))` for each distinct value.
pub fn ccdf(values: &[usize]) -> Vec<(usize, usize, f64)> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    let total = values.len() as f64;
    let mut remaining = values.len();
    counts
        .into_iter()
        .map(|(v, c)| {
            let row = (v, c, remaining as f64 / total);
            remaining -= c;
            row
        })
        .collect()
}

/// CSV with header `<name>,count,ccdf`.
pub fn ccdf_csv(name: &str, values: &[usize]) -> String {
    let mut out = format!("{name},count,ccdf\n");
    for (v, c, p) in ccdf(values) {
        let _ = writeln!(out, "{v},{c},{p}");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationRun {
    pub label: String,
    pub first: Prefix,
    pub blocks: usize,
    /// Length of the largest aligned prefix inside the run.
    pub aggregate_len: u32,
}

/// Group adjacent equal-length blocks with the same label into runs and
/// report the shortest aligned prefix that fits in each run.
pub fn max_aggregation_runs(
    blocks: &[(Prefix, String)],
    universe: AddressUniverse,
) -> Result<Vec<AggregationRun>> {
    let Some(len) = blocks.first().map(|(p, _)| p.len()) else {
        return Ok(Vec::new());
    };
    if blocks.iter().any(|(p, _)| p.len() != len) {
        return Err(Error::Config(String::from("blocks must share one prefix length")));
    }
    let mut sorted = blocks.to_vec();
    sorted.sort_by_key(|(p, _)| p.index());
    let mut runs: Vec<(Prefix, Prefix, String, usize)> = Vec::new();
    for (p, label) in sorted {
        match runs.last_mut() {
            Some((_, last, l, n)) if *l == label && last.index() + 1 == p.index() => {
                *last = p;
                *n += 1;
            }
            _ => runs.push((p, p, label, 1)),
        }
    }
    runs.into_iter()
        .map(|(first, last, label, n)| {
            let lo = first.first_value(universe);
            let hi = last.last_value(universe);
            let aggregate_len = range_to_prefixes(lo, hi, universe)?
                .iter()
                .map(Prefix::len)
                .min()
                .expect("nonempty range");
            Ok(AggregationRun {
                label,
                first,
                blocks: n,
                aggregate_len,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::Family;
    use proptest::prelude::*;

    fn u() -> AddressUniverse {
        AddressUniverse::v4()
    }

    fn p(text: &str) -> Prefix {
        Prefix::parse(text, u()).unwrap()
    }

    fn tree(prefixes: &[&str]) -> InclusionTree {
        build_inclusion_tree(
            prefixes.iter().map(|s| PrefixRecord::new(p(s), "org")).collect(),
            u(),
        )
    }

    fn node(t: &InclusionTree, s: &str) -> usize {
        t.find(&p(s)).unwrap()
    }

    #[test]
    fn chain_and_roots() {
        let t = tree(&["10.1.2.0/24", "10.0.0.0/8", "10.1.0.0/16"]);
        let depths: Vec<usize> = ["10.0.0.0/8", "10.1.0.0/16", "10.1.2.0/24"]
            .iter()
            .map(|s| t.nodes[node(&t, s)].depth)
            .collect();
        assert_eq!(depths, vec![0, 1, 2]);
        assert_eq!(width_depth_stats(&t).degrees, vec![1, 1]);
        let t = tree(&["10.0.0.0/8", "11.0.0.0/8"]);
        assert_eq!(t.roots.len(), 2);
    }

    #[test]
    fn interposed_prefix_becomes_middle_of_chain() {
        let t = tree(&["10.0.0.0/8", "10.0.0.0/10", "10.0.0.0/9"]);
        let n9 = node(&t, "10.0.0.0/9");
        assert_eq!(t.nodes[n9].parent, Some(node(&t, "10.0.0.0/8")));
        assert_eq!(t.nodes[node(&t, "10.0.0.0/10")].parent, Some(n9));
    }

    #[test]
    fn star_stats() {
        let t = tree(&[
            "10.0.0.0/8",
            "10.1.0.0/16",
            "10.2.0.0/16",
            "10.3.0.0/16",
            "10.4.0.0/16",
            "10.5.0.0/16",
        ]);
        let s = width_depth_stats(&t);
        assert_eq!(s.degrees, vec![5]);
        let mut d = s.depths.clone();
        d.sort_unstable();
        assert_eq!(d, vec![0, 1, 1, 1, 1, 1]);
        assert_eq!(ccdf(&s.depths), vec![(0, 1, 1.0), (1, 5, 5.0 / 6.0)]);
        assert!(ccdf_csv("depth", &s.depths).starts_with("depth,count,ccdf\n0,1,1\n"));
    }

    #[test]
    fn duplicate_prefix_keeps_last_label() {
        let recs = vec![
            PrefixRecord::new(p("10.0.0.0/8"), "first"),
            PrefixRecord::new(p("10.0.0.0/8"), "second"),
        ];
        let t = build_inclusion_tree(recs, u());
        assert_eq!(t.len(), 1);
        assert_eq!(t.nodes[0].record.label, "second");
        assert_eq!(t.collisions[0].dropped, "first");
    }

    #[test]
    fn coverage_examples() {
        let t = tree(&["10.0.0.0/8", "10.0.0.0/9"]);
        assert_eq!(percent_covered(&t, &p("10.0.0.0/8")), 0.5);
        let t = tree(&["10.0.0.0/8", "10.0.0.0/9", "10.128.0.0/9", "10.0.0.0/10"]);
        assert_eq!(percent_covered(&t, &p("10.0.0.0/8")), 1.0);
        let t = tree(&["10.0.0.0/18", "10.0.4.0/22"]);
        assert_eq!(percent_covered(&t, &p("10.0.0.0/18")), 0.0625);
        assert_eq!(percent_covered(&t, &p("10.0.4.0/22")), 0.0);
        assert_eq!(percent_covered(&t, &p("192.0.2.0/24")), 0.0);
    }

    fn slash22_cluster(base: &str) -> Vec<String> {
        let b: std::net::Ipv4Addr = base.parse().unwrap();
        let b = u32::from(b);
        (0..4)
            .map(|i| format!("{}/24", std::net::Ipv4Addr::from(b + (i << 8))))
            .collect()
    }

    #[test]
    fn single_cluster_aggregates_to_its_block() {
        let mut prefixes = vec!["10.0.0.0/18".to_string()];
        prefixes.extend(slash22_cluster("10.0.16.0"));
        let refs: Vec<&str> = prefixes.iter().map(String::as_str).collect();
        let t = tree(&refs);
        let top = node(&t, "10.0.0.0/18");
        let aggs = approx_max_aggregates(&t, top, DEFAULT_AGGREGATE_THRESHOLD);
        assert_eq!(aggs.len(), 1);
        assert_eq!(aggs[0].prefix, p("10.0.16.0/22"));
        assert_eq!(aggs[0].coverage, 1.0);
        let path = ["10.0.0.0/19", "10.0.16.0/20", "10.0.16.0/21"];
        let cov: Vec<f64> = path.iter().map(|s| percent_covered(&t, &p(s))).collect();
        assert_eq!(cov, vec![0.125, 0.25, 0.5]);
        assert!(added_levels(&t, top, &aggs).iter().all(|&(_, n)| n == 1));
    }

    #[test]
    fn two_clusters_give_two_aggregates() {
        let mut prefixes = vec!["10.0.0.0/18".to_string()];
        prefixes.extend(slash22_cluster("10.0.4.0"));
        prefixes.extend(slash22_cluster("10.0.40.0"));
        let refs: Vec<&str> = prefixes.iter().map(String::as_str).collect();
        let t = tree(&refs);
        let aggs = approx_max_aggregates(&t, node(&t, "10.0.0.0/18"), 0.51);
        let got: Vec<Prefix> = aggs.iter().map(|a| a.prefix).collect();
        assert_eq!(got, vec![p("10.0.4.0/22"), p("10.0.40.0/22")]);
    }

    #[test]
    fn tiled_parent_is_its_own_aggregate() {
        let t = tree(&["10.0.0.0/8", "10.0.0.0/9", "10.128.0.0/9"]);
        let top = node(&t, "10.0.0.0/8");
        let aggs = approx_max_aggregates(&t, top, 0.51);
        assert_eq!(
            aggs,
            vec![Aggregate {
                prefix: p("10.0.0.0/8"),
                coverage: 1.0
            }]
        );
        assert!(added_levels(&t, top, &aggs).iter().all(|&(_, n)| n == 0));
    }

    #[test]
    fn coverage_is_not_monotone_with_uneven_leaves() {
        // A leaf /9 on the left and a lone /16 on the right: the /8 is
        // covered just over half, but its right /9 child almost not at all.
        let t = tree(&["10.0.0.0/8", "10.0.0.0/9", "10.128.0.0/16"]);
        let top = percent_covered(&t, &p("10.0.0.0/8"));
        let right = percent_covered(&t, &p("10.128.0.0/9"));
        assert!(top > 0.5 && right < 0.01);
    }

    #[test]
    fn coverage_grows_toward_a_single_cluster() {
        for base in ["10.0.4.0", "10.0.60.0", "10.0.32.0"] {
            let mut prefixes = vec!["10.0.0.0/18".to_string()];
            prefixes.extend(slash22_cluster(base));
            let refs: Vec<&str> = prefixes.iter().map(String::as_str).collect();
            let t = tree(&refs);
            let leaf = p(&format!("{base}/22"));
            let cov: Vec<f64> = (18..=22)
                .map(|l| percent_covered(&t, &leaf.truncate(l)))
                .collect();
            assert!(cov.windows(2).all(|w| w[0] <= w[1]), "{cov:?}");
        }
    }

    #[test]
    fn runs_of_slash8s() {
        let blocks = |start: u128, n: u128, label: &str| -> Vec<(Prefix, String)> {
            (start..start + n)
                .map(|i| (Prefix::new(i, 8).unwrap(), label.to_string()))
                .collect()
        };
        let r = max_aggregation_runs(&blocks(80, 16, "RIPE"), u()).unwrap();
        assert_eq!((r.len(), r[0].aggregate_len, r[0].blocks), (1, 4, 16));
        let r = max_aggregation_runs(&blocks(81, 16, "RIPE"), u()).unwrap();
        assert_eq!(r[0].aggregate_len, 5);
        let r = max_aggregation_runs(&blocks(7, 1, "ARIN"), u()).unwrap();
        assert_eq!(r[0].aggregate_len, 8);
        let mut mixed = blocks(80, 4, "RIPE");
        mixed.extend(blocks(84, 4, "APNIC"));
        mixed.extend(blocks(90, 2, "RIPE"));
        let r = max_aggregation_runs(&mixed, u()).unwrap();
        let lens: Vec<(String, u32)> = r.iter().map(|x| (x.label.clone(), x.aggregate_len)).collect();
        assert_eq!(
            lens,
            vec![("RIPE".into(), 6), ("APNIC".into(), 6), ("RIPE".into(), 7)]
        );
    }

    #[test]
    fn record_csv_ingestion() {
        let text = "prefix,label\n# comment\n10.0.0.0/8,\"Acme, Inc.\",rir=ARIN\n0.3.0.0-0.5.255.255,RIPE\n";
        let recs = parse_records(text.as_bytes(), u()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].label, "Acme, Inc.");
        assert_eq!(recs[0].attributes["rir"], "ARIN");
        assert_eq!(recs[1].prefix.display(Family::V4).to_string(), "0.3.0.0/16");
        assert_eq!(recs[2].prefix.display(Family::V4).to_string(), "0.4.0.0/15");
        assert!(parse_records("10.0.0.1/8,x\n".as_bytes(), u()).is_err());
    }

    /// Direct parent by brute force: the longest strictly containing record.
    fn oracle_parents(prefixes: &[Prefix]) -> Vec<Option<Prefix>> {
        prefixes
            .iter()
            .map(|c| {
                prefixes
                    .iter()
                    .filter(|q| q.len() < c.len() && q.contains(c))
                    .max_by_key(|q| q.len())
                    .copied()
            })
            .collect()
    }

    fn nested_fixture(seed: u64, n: usize) -> Vec<Prefix> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut out: Vec<Prefix> = Vec::new();
        while out.len() < n {
            // Grow mostly inside existing records so nesting is deep.
            let p = if !out.is_empty() && rng.random_bool(0.8) {
                let base = out[rng.random_range(0..out.len())];
                let extra = rng.random_range(1..=6).min(32 - base.len());
                let idx = (base.index() << extra) | rng.random_range(0..1u128 << extra);
                Prefix::new(idx, base.len() + extra).unwrap()
            } else {
                let len = rng.random_range(4..=24);
                Prefix::new(rng.random_range(0..1u128 << len), len).unwrap()
            };
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn edges_match_brute_force() {
        for seed in 0..3 {
            let prefixes = nested_fixture(seed, 1000);
            let t = build_inclusion_tree(prefixes.iter().map(|&q| PrefixRecord::new(q, "x")).collect(), u());
            for (q, expect) in prefixes.iter().zip(oracle_parents(&prefixes)) {
                let got = t.nodes[t.find(q).unwrap()]
                    .parent
                    .map(|i| t.nodes[i].record.prefix);
                assert_eq!(got, expect);
            }
        }
    }

    #[test]
    fn stats_match_brute_force() {
        let prefixes = nested_fixture(9, 100);
        let t = build_inclusion_tree(prefixes.iter().map(|&q| PrefixRecord::new(q, "x")).collect(), u());
        let parents = oracle_parents(&prefixes);
        let depth_of = |i: usize| {
            let mut d = 0;
            let mut cur = parents[i];
            while let Some(pp) = cur {
                d += 1;
                cur = parents[prefixes.iter().position(|x| *x == pp).unwrap()];
            }
            d
        };
        let mut depths: Vec<usize> = (0..prefixes.len()).map(depth_of).collect();
        let mut degrees: Vec<usize> = prefixes
            .iter()
            .map(|x| parents.iter().filter(|pp| **pp == Some(*x)).count())
            .filter(|&d| d > 0)
            .collect();
        let s = width_depth_stats(&t);
        let (mut gd, mut gg) = (s.depths.clone(), s.degrees.clone());
        depths.sort_unstable();
        degrees.sort_unstable();
        gd.sort_unstable();
        gg.sort_unstable();
        assert_eq!((gd, gg), (depths, degrees));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn aggregates_cross_once_and_do_not_nest(seed in any::<u64>(), threshold in 0.3f64..0.9) {
            let prefixes = nested_fixture(seed, 200);
            let t = build_inclusion_tree(prefixes.iter().map(|&q| PrefixRecord::new(q, "x")).collect(), u());
            for id in 0..t.len() {
                if t.is_leaf(id) {
                    continue;
                }
                let top = t.nodes[id].record.prefix;
                let aggs = approx_max_aggregates(&t, id, threshold);
                for (i, a) in aggs.iter().enumerate() {
                    prop_assert!(a.coverage >= threshold);
                    if a.prefix != top {
                        let up = a.prefix.parent().unwrap();
                        prop_assert!(percent_covered(&t, &up) < threshold);
                    }
                    for b in &aggs[i + 1..] {
                        prop_assert!(!a.prefix.contains(&b.prefix) && !b.prefix.contains(&a.prefix));
                    }
                }
                prop_assert!(added_levels(&t, id, &aggs).iter().all(|&(_, n)| n <= 1));
            }
        }
    }
}
