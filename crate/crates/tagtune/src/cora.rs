//! Converter for the Cora citation dump (`cora.content` + `cora.cites`).
//!
//! `cora.content` has one paper per line: id, binary word attributes, class
//! label, whitespace separated. `cora.cites` lists `cited citing` id pairs.
//! Citations are made undirected; self-citations, repeats and pairs naming
//! unknown papers are dropped and counted. The dump carries no raw text, so
//! each node's text is its active attribute words as `w<index>`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use tagtune_core::graph::TextAttributedGraph;
use tagtune_core::linalg::Matrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CoraStats {
    pub papers: usize,
    pub edges: usize,
    pub self_citations: usize,
    pub duplicate_citations: usize,
    pub unknown_citations: usize,
}

pub fn load_cora(content: &Path, cites: &Path) -> Result<(TextAttributedGraph, CoraStats)> {
    let content_text = fs::read_to_string(content).map_err(Error::io(content))?;
    let cites_text = fs::read_to_string(cites).map_err(Error::io(cites))?;
    parse_cora(&content_text, &cites_text, content, cites)
}

pub fn parse_cora(content: &str, cites: &str, content_path: &Path, cites_path: &Path) -> Result<(TextAttributedGraph, CoraStats)> {
    let format_err = |path: &Path, line: usize, message: String| Error::Format { path: path.to_path_buf(), line, message };
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut label_names: Vec<&str> = Vec::new();
    let mut width = None;
    for (i, line) in content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(format_err(content_path, i + 1, "expected id, attributes and label".into()));
        }
        let attrs = &fields[1..fields.len() - 1];
        if *width.get_or_insert(attrs.len()) != attrs.len() {
            return Err(format_err(content_path, i + 1, format!("{} attributes, expected {}", attrs.len(), width.unwrap_or(0))));
        }
        let row = attrs
            .iter()
            .map(|a| a.parse::<f64>().map_err(|e| format_err(content_path, i + 1, format!("attribute {a:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if ids.insert(fields[0], rows.len()).is_some() {
            return Err(format_err(content_path, i + 1, format!("duplicate paper id {}", fields[0])));
        }
        rows.push(row);
        label_names.push(fields[fields.len() - 1]);
    }
    let n = rows.len();
    let dim = width.unwrap_or(0);

    let label_space: Vec<String> = label_names.iter().copied().collect::<BTreeSet<_>>().into_iter().map(String::from).collect();
    let class_of: BTreeMap<&str, usize> = label_space.iter().enumerate().map(|(c, l)| (l.as_str(), c)).collect();
    let labels = label_names.iter().map(|l| Some(class_of[l])).collect();

    let mut stats = CoraStats { papers: n, ..CoraStats::default() };
    let mut edges = BTreeSet::new();
    for (i, line) in cites.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(format_err(cites_path, i + 1, "expected two paper ids".into()));
        }
        let (Some(&a), Some(&b)) = (ids.get(fields[0]), ids.get(fields[1])) else {
            stats.unknown_citations += 1;
            continue;
        };
        if a == b {
            stats.self_citations += 1;
        } else if !edges.insert((a.min(b), a.max(b))) {
            stats.duplicate_citations += 1;
        }
    }
    stats.edges = edges.len();

    let texts = rows
        .iter()
        .map(|r| r.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(k, _)| format!("w{k}")).collect::<Vec<_>>().join(" "))
        .collect();
    let features = Matrix::from_vec(n, dim, rows.into_iter().flatten().collect())?;
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let graph = TextAttributedGraph::new(label_space, texts, features, labels, &edges)?;
    Ok((graph, stats))
}
