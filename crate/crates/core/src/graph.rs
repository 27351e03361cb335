//! User–item interaction graphs: ingestion, persistence, summary statistics
//! and overlap-based similar-user ground truth.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

const GRAPH_MAGIC: &[u8; 4] = b"WSFG";
const GRAPH_VERSION: u32 = 1;

/// Layout of an interaction text file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// `user<TAB>item`
    TsvPairs,
    /// `user<TAB>item<TAB>rating<TAB>timestamp`; rating and timestamp are
    /// validated as numbers and dropped.
    TsvRated,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv_pairs" => Ok(InputFormat::TsvPairs),
            "tsv_rated" => Ok(InputFormat::TsvRated),
            other => Err(Error::Invalid(format!("unknown input format `{other}`"))),
        }
    }
}

/// Bipartite implicit-feedback graph. Users and items live in separate
/// dense index spaces; adjacency lists are sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    user_items: Vec<Vec<u32>>,
    item_users: Vec<Vec<u32>>,
    num_edges: usize,
}

impl InteractionGraph {
    /// Builds a graph from `(user, item)` pairs. Duplicates collapse.
    pub fn from_edges<I>(num_users: usize, num_items: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        binio::to_u32(num_users, "num_users")?;
        binio::to_u32(num_items, "num_items")?;
        let mut user_items = vec![Vec::new(); num_users];
        for (u, i) in edges {
            if u as usize >= num_users {
                return Err(Error::OutOfRange {
                    what: "user index",
                    index: u as usize,
                    bound: num_users,
                });
            }
            if i as usize >= num_items {
                return Err(Error::OutOfRange {
                    what: "item index",
                    index: i as usize,
                    bound: num_items,
                });
            }
            user_items[u as usize].push(i);
        }
        let mut item_users = vec![Vec::new(); num_items];
        let mut num_edges = 0;
        for (u, items) in user_items.iter_mut().enumerate() {
            items.sort_unstable();
            items.dedup();
            num_edges += items.len();
            for &i in items.iter() {
                // users visited in ascending order, so item lists stay sorted
                item_users[i as usize].push(u as u32);
            }
        }
        binio::to_u32(num_edges, "num_edges")?;
        Ok(InteractionGraph {
            num_users,
            num_items,
            user_items,
            item_users,
            num_edges,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// Sorted items the user interacted with, N(u).
    pub fn items_of(&self, user: usize) -> &[u32] {
        &self.user_items[user]
    }

    /// Sorted users that interacted with the item.
    pub fn users_of(&self, item: usize) -> &[u32] {
        &self.item_users[item]
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.user_items[user].len()
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.item_users[item].len()
    }

    /// All edges in `(user, item)` lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.user_items
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u as u32, i)))
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            num_users: self.num_users,
            num_items: self.num_items,
            num_edges: self.num_edges,
        }
    }

    /// Serialises to the `WSFG` binary format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * self.num_edges);
        out.extend_from_slice(GRAPH_MAGIC);
        binio::put_u32(&mut out, GRAPH_VERSION);
        // sizes were range-checked at construction
        binio::put_u32(&mut out, self.num_users as u32);
        binio::put_u32(&mut out, self.num_items as u32);
        binio::put_u32(&mut out, self.num_edges as u32);
        for (u, i) in self.edges() {
            binio::put_u32(&mut out, u);
            binio::put_u32(&mut out, i);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4).ok() != Some(GRAPH_MAGIC.as_slice()) {
            return Err(Error::Format("not a WSFE graph file".into()));
        }
        let version = r.u32()?;
        if version != GRAPH_VERSION {
            return Err(Error::Format(format!("unsupported graph version {version}")));
        }
        let num_users = r.u32()? as usize;
        let num_items = r.u32()? as usize;
        let num_edges = r.u32()? as usize;
        let payload = r.take(num_edges * 8)?;
        let edges = payload.chunks_exact(8).map(|c| {
            (
                u32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                u32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        });
        let g = InteractionGraph::from_edges(num_users, num_items, edges)?;
        if g.num_edges != num_edges {
            return Err(Error::Format("graph file contains duplicate edges".into()));
        }
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_all(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&binio::read_all(path.as_ref())?)
    }
}

/// Summary counts of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphStats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_edges: usize,
}

impl GraphStats {
    /// Edges per user; zero for a graph without users.
    pub fn avg_interactions(&self) -> f64 {
        if self.num_users == 0 {
            0.0
        } else {
            self.num_edges as f64 / self.num_users as f64
        }
    }
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "users={} items={} edges={} avg_interactions={:.2}",
            self.num_users,
            self.num_items,
            self.num_edges,
            self.avg_interactions()
        )
    }
}

/// Dense index assignment for the raw identifiers of an input file, in
/// order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
    user_index: HashMap<String, u32>,
    item_index: HashMap<String, u32>,
}

impl IdMaps {
    pub fn user_index(&self, id: &str) -> Option<u32> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<u32> {
        self.item_index.get(id).copied()
    }

    fn intern(
        names: &mut Vec<String>,
        index: &mut HashMap<String, u32>,
        id: &str,
        what: &'static str,
    ) -> Result<u32> {
        if let Some(&ix) = index.get(id) {
            return Ok(ix);
        }
        let ix = binio::to_u32(names.len(), what)?;
        names.push(id.to_owned());
        index.insert(id.to_owned(), ix);
        Ok(ix)
    }
}

/// Parses interaction text. Fields are tab-separated; `::` is accepted as
/// an alternative separator for MovieLens-style `.dat` files.
pub fn parse_interactions(text: &str, format: InputFormat) -> Result<(InteractionGraph, IdMaps)> {
    let mut maps = IdMaps::default();
    let mut edges = Vec::new();
    let mut saw_line = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        saw_line = true;
        let line_no = lineno + 1;
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split("::").collect()
        };
        let expected = match format {
            InputFormat::TsvPairs => 2,
            InputFormat::TsvRated => 4,
        };
        if fields.len() != expected {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        if fields[..2].iter().any(|f| f.trim().is_empty()) {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty identifier".into(),
            });
        }
        if format == InputFormat::TsvRated {
            fields[2].trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid rating `{}`", fields[2]),
            })?;
            fields[3].trim().parse::<i64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid timestamp `{}`", fields[3]),
            })?;
        }
        let u = IdMaps::intern(&mut maps.users, &mut maps.user_index, fields[0].trim(), "num_users")?;
        let i = IdMaps::intern(&mut maps.items, &mut maps.item_index, fields[1].trim(), "num_items")?;
        edges.push((u, i));
    }
    if !saw_line {
        return Err(Error::EmptyInput);
    }
    let graph = InteractionGraph::from_edges(maps.users.len(), maps.items.len(), edges)?;
    Ok((graph, maps))
}

pub fn load_interactions(
    path: impl AsRef<Path>,
    format: InputFormat,
) -> Result<(InteractionGraph, IdMaps)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, format)
}

/// Users most similar to a query by co-interaction count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthRanking {
    pub query: usize,
    /// `(user, overlap)` with overlap non-increasing, ties by ascending user.
    pub ranked: Vec<(usize, usize)>,
}

impl GroundTruthRanking {
    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn users(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranked.iter().map(|&(u, _)| u)
    }
}

/// Top-`depth` users by `|N(query) ∩ N(v)|`, excluding the query itself
/// and users with no overlap.
pub fn build_ground_truth(
    graph: &InteractionGraph,
    query: usize,
    depth: usize,
) -> Result<GroundTruthRanking> {
    if query >= graph.num_users {
        return Err(Error::OutOfRange {
            what: "query user",
            index: query,
            bound: graph.num_users,
        });
    }
    if depth == 0 {
        return Err(Error::Invalid("ground-truth depth must be at least 1".into()));
    }
    let mut counts = vec![0usize; graph.num_users];
    for &item in graph.items_of(query) {
        for &v in graph.users_of(item as usize) {
            counts[v as usize] += 1;
        }
    }
    counts[query] = 0;
    let mut ranked: Vec<(usize, usize)> = counts
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(depth);
    Ok(GroundTruthRanking { query, ranked })
}

/// Ground truth for many queries; output order follows `queries`.
pub fn build_ground_truth_many(
    graph: &InteractionGraph,
    queries: &[usize],
    depth: usize,
    exec: Exec,
) -> Result<Vec<GroundTruthRanking>> {
    par::map_range(queries.len(), exec, |k| build_ground_truth(graph, queries[k], depth))
        .into_iter()
        .collect()
}

/// Renders rankings as `query<TAB>neighbor<TAB>overlap` lines.
pub fn ground_truth_tsv(rankings: &[GroundTruthRanking]) -> String {
    let mut out = String::new();
    for r in rankings {
        for &(v, c) in &r.ranked {
            out.push_str(&format!("{}\t{}\t{}\n", r.query, v, c));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(num_users: usize, num_items: usize, edges: &[(u32, u32)]) -> InteractionGraph {
        InteractionGraph::from_edges(num_users, num_items, edges.iter().copied()).unwrap()
    }

    #[test]
    fn duplicate_lines_collapse() {
        let (g, maps) = parse_interactions("a\ti1\na\ti1\nb\ti2\n", InputFormat::TsvPairs).unwrap();
        assert_eq!((g.num_users(), g.num_items(), g.num_edges()), (2, 2, 2));
        assert_eq!(maps.user_index("b"), Some(1));
        assert_eq!(maps.item_index("i2"), Some(1));
    }

    #[test]
    fn empty_file_is_rejected() {
        let err = parse_interactions("", InputFormat::TsvPairs).unwrap_err();
        assert_eq!(err.to_string(), "empty input");
        assert!(matches!(
            parse_interactions("\n  \n", InputFormat::TsvPairs),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_interactions("a\ti\nb\n", InputFormat::TsvPairs).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        // pair file read as rated
        let err = parse_interactions("a\ti\n", InputFormat::TsvRated).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_interactions("a\ti\t4\t97x\n", InputFormat::TsvRated).unwrap_err();
        assert!(err.to_string().contains("timestamp"));
    }

    #[test]
    fn rated_and_movielens_separators() {
        let tsv = "1\t10\t5\t978300760\n1\t11\t3\t978302109\n2\t10\t4\t978301968\n";
        let dat = "1::10::5::978300760\n1::11::3::978302109\n2::10::4::978301968\n";
        let (a, _) = parse_interactions(tsv, InputFormat::TsvRated).unwrap();
        let (b, _) = parse_interactions(dat, InputFormat::TsvRated).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_edges(), 3);
    }

    #[test]
    fn out_of_range_edges_rejected() {
        assert!(InteractionGraph::from_edges(1, 1, [(0, 1)]).is_err());
        assert!(InteractionGraph::from_edges(1, 1, [(1, 0)]).is_err());
    }

    #[test]
    fn stats_average() {
        let g = graph(2, 3, &[(0, 0), (0, 1), (1, 2)]);
        assert_eq!(format!("{:.2}", g.stats().avg_interactions()), "1.50");
        let g = graph(1, 0, &[]);
        assert_eq!(format!("{:.2}", g.stats().avg_interactions()), "0.00");
        assert_eq!(g.stats().to_string(), "users=1 items=0 edges=0 avg_interactions=0.00");
    }

    #[test]
    fn ground_truth_small_example() {
        // q=0: {1,2,3}; a=1: {2,3}; b=2: {3}
        let g = graph(3, 4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let gt = build_ground_truth(&g, 0, 2).unwrap();
        assert_eq!(gt.ranked, vec![(1, 2), (2, 1)]);
    }

    #[test]
    fn ground_truth_excludes_zero_overlap() {
        let g = graph(3, 3, &[(0, 0), (1, 1), (2, 2)]);
        assert!(build_ground_truth(&g, 0, 5).unwrap().is_empty());
    }

    #[test]
    fn ground_truth_ties_by_user_index() {
        let g = graph(4, 1, &[(0, 0), (3, 0), (1, 0), (2, 0)]);
        let gt = build_ground_truth(&g, 2, 2).unwrap();
        assert_eq!(gt.ranked, vec![(0, 1), (1, 1)]);
    }

    #[test]
    fn ground_truth_errors() {
        let g = graph(2, 1, &[(0, 0)]);
        assert!(matches!(build_ground_truth(&g, 2, 1), Err(Error::OutOfRange { .. })));
        assert!(build_ground_truth(&g, 0, 0).is_err());
    }

    #[test]
    fn binary_rejects_bad_magic_and_truncation() {
        let g = graph(2, 2, &[(0, 0), (1, 1)]);
        let mut bytes = g.to_bytes();
        assert_eq!(InteractionGraph::from_bytes(&bytes).unwrap(), g);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            InteractionGraph::from_bytes(&bytes),
            Err(Error::Truncated { .. })
        ));
        assert!(InteractionGraph::from_bytes(b"WSFE\x01\0\0\0").is_err());
    }

    #[test]
    fn ground_truth_tsv_format() {
        let g = graph(3, 4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let gt = build_ground_truth(&g, 0, 2).unwrap();
        assert_eq!(ground_truth_tsv(&[gt]), "0\t1\t2\n0\t2\t1\n");
    }
}
