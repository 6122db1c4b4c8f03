//! Region adjacency graphs.
//!
//! The on-disk format is whitespace separated ASCII: the region count `n`,
//! then one record per region `index k nb_1 ... nb_k`. Region indices may be
//! 0-based or 1-based; the base is detected from the file.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::SymSparseMatrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    neighbours: Vec<Vec<usize>>,
    component_of: Vec<usize>,
    n_components: usize,
    /// Number of one-sided adjacency entries that were mirrored while parsing.
    asymmetric_repairs: usize,
}

/// Index base detected while parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexBase {
    Zero,
    One,
}

struct Token<'a> {
    text: &'a str,
    line: usize,
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    text.lines()
        .enumerate()
        .flat_map(|(i, l)| l.split_whitespace().map(move |t| Token { text: t, line: i + 1 }))
        .collect()
}

fn parse_usize(tok: &Token<'_>, what: &str) -> Result<usize> {
    tok.text.parse::<usize>().map_err(|_| Error::Parse {
        line: tok.line,
        message: format!("expected {what}, found '{}'", tok.text),
    })
}

impl Graph {
    /// Builds a graph from (possibly one-sided) neighbour lists.
    ///
    /// One-sided entries are mirrored, duplicates collapsed. Self-loops and
    /// out-of-range indices are rejected.
    pub fn from_neighbours(lists: Vec<Vec<usize>>) -> Result<Self> {
        let n = lists.len();
        if n == 0 {
            return Err(Error::InvalidGraph("graph has no regions".into()));
        }
        let mut nb: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, list) in lists.iter().enumerate() {
            for &j in list {
                if j >= n {
                    return Err(Error::InvalidGraph(format!(
                        "neighbour {j} of region {i} is out of range (n = {n})"
                    )));
                }
                if j == i {
                    return Err(Error::InvalidGraph(format!("region {i} lists itself as a neighbour")));
                }
                nb[i].push(j);
            }
        }
        for list in nb.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        let mut repairs = 0;
        let mut extra: Vec<(usize, usize)> = Vec::new();
        for (i, list) in nb.iter().enumerate() {
            for &j in list {
                if nb[j].binary_search(&i).is_err() {
                    extra.push((j, i));
                }
            }
        }
        for (j, i) in extra {
            if let Err(pos) = nb[j].binary_search(&i) {
                nb[j].insert(pos, i);
                repairs += 1;
            }
        }
        let (component_of, n_components) = label_components(&nb);
        Ok(Self {
            neighbours: nb,
            component_of,
            n_components,
            asymmetric_repairs: repairs,
        })
    }

    /// Builds a graph from an undirected edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut lists = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!("edge ({a}, {b}) out of range")));
            }
            lists[a].push(b);
            lists[b].push(a);
        }
        Self::from_neighbours(lists)
    }

    /// Rook-adjacency lattice with `rows * cols` regions, row-major numbering.
    pub fn lattice(rows: usize, cols: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < rows {
                    edges.push((i, i + cols));
                }
            }
        }
        Self::from_edges(rows * cols, &edges)
    }

    /// Parses the adjacency file format.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_base(text).map(|(g, _)| g)
    }

    /// Parses and also reports the detected index base.
    pub fn parse_with_base(text: &str) -> Result<(Self, IndexBase)> {
        let tokens = tokenize(text);
        let mut it = tokens.iter();
        let first = it.next().ok_or(Error::Parse {
            line: 1,
            message: "empty graph file".into(),
        })?;
        let n = parse_usize(first, "region count")?;
        if n == 0 {
            return Err(Error::Parse {
                line: first.line,
                message: "region count must be positive".into(),
            });
        }

        // (raw region index, line, raw neighbour indices)
        let mut records: Vec<(usize, usize, Vec<(usize, usize)>)> = Vec::with_capacity(n);
        for rec in 0..n {
            let idx_tok = it.next().ok_or_else(|| Error::Parse {
                line: tokens.last().map_or(1, |t| t.line),
                message: format!("expected {n} region records, found {rec}"),
            })?;
            let idx = parse_usize(idx_tok, "region index")?;
            let k_tok = it.next().ok_or_else(|| Error::Parse {
                line: idx_tok.line,
                message: format!("record for region {idx} is missing its neighbour count"),
            })?;
            let k = parse_usize(k_tok, "neighbour count")?;
            let mut nbs = Vec::with_capacity(k);
            for _ in 0..k {
                let t = it.next().ok_or_else(|| Error::Parse {
                    line: k_tok.line,
                    message: format!("region {idx} declares {k} neighbours but the file ended"),
                })?;
                nbs.push((parse_usize(t, "neighbour index")?, t.line));
            }
            records.push((idx, idx_tok.line, nbs));
        }
        if let Some(extra) = it.next() {
            return Err(Error::Parse {
                line: extra.line,
                message: format!("unexpected token '{}' after {n} region records", extra.text),
            });
        }

        let any_zero = records
            .iter()
            .any(|(i, _, nbs)| *i == 0 || nbs.iter().any(|(j, _)| *j == 0));
        let base = if any_zero {
            IndexBase::Zero
        } else {
            let mut idx: Vec<usize> = records.iter().map(|r| r.0).collect();
            idx.sort_unstable();
            if idx.iter().enumerate().all(|(p, &v)| v == p + 1) {
                IndexBase::One
            } else {
                return Err(Error::Parse {
                    line: records[0].1,
                    message: "cannot determine index base: no index is 0 and region indices do not span 1..n"
                        .into(),
                });
            }
        };
        let offset = match base {
            IndexBase::Zero => 0,
            IndexBase::One => 1,
        };

        let mut lists: Vec<Option<Vec<usize>>> = vec![None; n];
        for (raw, line, nbs) in records {
            let i = raw - offset;
            if i >= n {
                return Err(Error::Parse {
                    line,
                    message: format!("region index {raw} out of range for n = {n}"),
                });
            }
            if lists[i].is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate record for region {raw}"),
                });
            }
            let mut list = Vec::with_capacity(nbs.len());
            for (j_raw, jl) in nbs {
                if j_raw < offset || j_raw - offset >= n {
                    return Err(Error::Parse {
                        line: jl,
                        message: format!("neighbour index {j_raw} out of range for n = {n}"),
                    });
                }
                let j = j_raw - offset;
                if j == i {
                    return Err(Error::Parse {
                        line: jl,
                        message: format!("region {raw} lists itself as a neighbour"),
                    });
                }
                list.push(j);
            }
            lists[i] = Some(list);
        }
        // n records with distinct in-range indices cover every region
        let lists = lists.into_iter().map(|l| l.unwrap_or_default()).collect();
        Ok((Self::from_neighbours(lists)?, base))
    }

    /// Writes the normalized (0-based, sorted) representation.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.n_regions());
        for (i, nb) in self.neighbours.iter().enumerate() {
            let _ = write!(out, "{} {}", i, nb.len());
            for j in nb {
                let _ = write!(out, " {j}");
            }
            out.push('\n');
        }
        out
    }

    pub fn n_regions(&self) -> usize {
        self.neighbours.len()
    }

    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.neighbours[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbours[i].len()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbours.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn component_of(&self) -> &[usize] {
        &self.component_of
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn asymmetric_repairs(&self) -> usize {
        self.asymmetric_repairs
    }

    /// Region lists per component, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_components];
        for (i, &c) in self.component_of.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// Relabels regions: region `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_regions();
        if perm.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: perm.len() });
        }
        let mut lists = vec![Vec::new(); n];
        for (i, nb) in self.neighbours.iter().enumerate() {
            lists[perm[i]] = nb.iter().map(|&j| perm[j]).collect();
        }
        Self::from_neighbours(lists)
    }

    /// Besag structure matrix: degree on the diagonal, -1 for each neighbour pair.
    pub fn besag_precision(&self) -> SymSparseMatrix {
        let mut trip = Vec::with_capacity(self.n_regions() + self.n_edges());
        for (i, nb) in self.neighbours.iter().enumerate() {
            trip.push((i, i, nb.len() as f64));
            for &j in nb.iter().filter(|&&j| j < i) {
                trip.push((i, j, -1.0));
            }
        }
        SymSparseMatrix::from_triplets(self.n_regions(), &trip)
            .expect("graph indices are in range by construction")
    }
}

/// Breadth-first component labelling; labels follow the smallest member index.
pub fn connected_components(g: &Graph) -> (Vec<usize>, usize) {
    label_components(&g.neighbours)
}

fn label_components(nb: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let n = nb.len();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            for &w in &nb[v] {
                if label[w] == usize::MAX {
                    label[w] = next;
                    queue.push_back(w);
                }
            }
        }
        next += 1;
    }
    (label, next)
}
