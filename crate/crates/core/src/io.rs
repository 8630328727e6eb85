//! Reading edge lists, node tables and design descriptions.
//!
//! Edge files have the header `src,dst` with 0-based integer ids. Node files
//! carry an `id` column plus any of `eligible`, `block`, `D`, `Y`, `p` and
//! covariates `x*`; other columns are kept as raw text and may be named by a
//! design description. Every error names the file, and where it applies the column
//! and unit id.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::graph::{Graph, LoadReport};

fn file_err(path: &Path, message: impl Into<String>) -> Error {
    Error::File {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| file_err(path, e.to_string()))
}

/// Reads a `src,dst` edge list over units `0..n`. With `n = None` the size is
/// one past the largest id.
pub fn read_edges(path: &Path, n: Option<usize>, directed: bool) -> Result<(Graph, LoadReport)> {
    let mut rdr = reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| file_err(path, e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| file_err(path, format!("missing column {name:?}")))
    };
    let (cs, cd) = (col("src")?, col("dst")?);
    let mut edges = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| file_err(path, e.to_string()))?;
        let parse = |c: usize, name: &str| -> Result<usize> {
            let v = rec.get(c).unwrap_or("");
            v.parse().map_err(|_| {
                file_err(
                    path,
                    format!("row {}: column {name:?} has non-integer id {v:?}", line + 2),
                )
            })
        };
        edges.push((parse(cs, "src")?, parse(cd, "dst")?));
    }
    let size = match n {
        Some(n) => n,
        None => edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0),
    };
    if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= size || b >= size) {
        return Err(file_err(
            path,
            format!("edge ({a}, {b}) references a unit outside 0..{size}"),
        ));
    }
    let (g, report) =
        Graph::from_edges(size, &edges, directed).map_err(|e| file_err(path, e.to_string()))?;
    if report.duplicates > 0 || report.self_loops > 0 {
        log::warn!(
            "{}: dropped {} duplicate edges and {} self-loops",
            path.display(),
            report.duplicates,
            report.self_loops
        );
    }
    Ok((g, report))
}

/// A node table sorted by unit id.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTable {
    pub path: String,
    pub eligible: Option<Vec<bool>>,
    pub d: Option<Vec<u8>>,
    pub y: Option<Vec<f64>>,
    pub p: Option<Vec<f64>>,
    pub covariate_names: Vec<String>,
    /// Unit-major covariate rows.
    pub x: Vec<Vec<f64>>,
    columns: Vec<(String, Vec<String>)>,
}

impl NodeTable {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn raw_column(&self, name: &str) -> Option<&[String]> {
        self.columns
            .iter()
            .find(|(h, _)| h == name)
            .map(|(_, v)| v.as_slice())
    }

    /// Maps the labels of a text column to dense indices in first-seen order.
    pub fn factor_column(&self, name: &str) -> Result<Vec<usize>> {
        let raw = self.raw_column(name).ok_or_else(|| Error::File {
            path: self.path.clone(),
            message: format!("missing column {name:?}"),
        })?;
        let mut seen: Vec<&str> = Vec::new();
        let mut out = Vec::with_capacity(raw.len());
        for (i, v) in raw.iter().enumerate() {
            if v.is_empty() {
                return Err(Error::File {
                    path: self.path.clone(),
                    message: format!("column {name:?} is empty for unit {i}"),
                });
            }
            let k = match seen.iter().position(|s| s == v) {
                Some(k) => k,
                None => {
                    seen.push(v);
                    seen.len() - 1
                }
            };
            out.push(k);
        }
        Ok(out)
    }

    pub fn require_d(&self) -> Result<&[u8]> {
        self.d.as_deref().ok_or_else(|| Error::File {
            path: self.path.clone(),
            message: "missing column \"D\"".into(),
        })
    }

    pub fn require_y(&self) -> Result<&[f64]> {
        self.y.as_deref().ok_or_else(|| Error::File {
            path: self.path.clone(),
            message: "missing column \"Y\"".into(),
        })
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Reads a node table. Ids must be exactly `0..n` in any order.
pub fn read_nodes(path: &Path) -> Result<NodeTable> {
    let mut rdr = reader(path)?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| file_err(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let id_col = headers
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| file_err(path, "missing column \"id\""))?;
    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| file_err(path, e.to_string()))?;
        let v = rec.get(id_col).unwrap_or("");
        let id = v.parse().map_err(|_| {
            file_err(
                path,
                format!("row {}: id {v:?} is not an integer", line + 2),
            )
        })?;
        rows.push((id, rec));
    }
    rows.sort_by_key(|r| r.0);
    for (k, (id, _)) in rows.iter().enumerate() {
        if *id != k {
            return Err(file_err(
                path,
                format!(
                    "ids must be 0..{} without gaps or repeats; found {id} at rank {k}",
                    rows.len()
                ),
            ));
        }
    }
    let columns: Vec<(String, Vec<String>)> = headers
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != id_col)
        .map(|(c, h)| {
            (
                h.clone(),
                rows.iter()
                    .map(|(_, r)| r.get(c).unwrap_or("").to_string())
                    .collect(),
            )
        })
        .collect();
    let typed = |name: &str| columns.iter().find(|(h, _)| h == name).map(|(_, v)| v);
    fn convert<T>(
        path: &Path,
        name: &str,
        vals: &[String],
        f: impl Fn(&str) -> Option<T>,
        what: &str,
    ) -> Result<Vec<T>> {
        vals.iter()
            .enumerate()
            .map(|(i, v)| {
                if v.is_empty() {
                    return Err(file_err(
                        path,
                        format!("column {name:?} is missing a value for unit {i}"),
                    ));
                }
                f(v).ok_or_else(|| {
                    file_err(
                        path,
                        format!("column {name:?} for unit {i}: {v:?} is not {what}"),
                    )
                })
            })
            .collect()
    }
    let eligible = typed("eligible")
        .map(|v| convert(path, "eligible", v, parse_bool, "0/1"))
        .transpose()?;
    let d = typed("D")
        .map(|v| convert(path, "D", v, |s| s.parse::<u8>().ok(), "an arm index"))
        .transpose()?;
    let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
    let y = typed("Y")
        .map(|v| convert(path, "Y", v, num, "a finite number"))
        .transpose()?;
    let p = typed("p")
        .map(|v| convert(path, "p", v, num, "a finite number"))
        .transpose()?;
    let covariate_names: Vec<String> = columns
        .iter()
        .map(|(h, _)| h)
        .filter(|h| h.starts_with('x'))
        .cloned()
        .collect();
    let mut x = vec![Vec::with_capacity(covariate_names.len()); rows.len()];
    for name in &covariate_names {
        let col = convert(
            path,
            name,
            typed(name).expect("listed column"),
            num,
            "a finite number",
        )?;
        for (row, v) in x.iter_mut().zip(col) {
            row.push(v);
        }
    }
    Ok(NodeTable {
        path: path.display().to_string(),
        eligible,
        d,
        y,
        p,
        covariate_names,
        x,
        columns,
    })
}

/// Design as written in a run config. `p = None` reads the node table's `p`
/// column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    IidBernoulli {
        #[serde(default)]
        p: Option<f64>,
    },
    BlockComplete {
        #[serde(default = "default_block_col")]
        block_col: String,
        treat_frac: f64,
    },
    SequentialNeighbor {
        #[serde(default)]
        p: Option<f64>,
        multiplier: f64,
    },
}

fn default_block_col() -> String {
    "block".into()
}

fn unit_probs(p: Option<f64>, nodes: &NodeTable) -> Result<Vec<f64>> {
    match p {
        Some(p) => Ok(vec![p; nodes.n()]),
        None => nodes.p.clone().ok_or_else(|| Error::File {
            path: nodes.path.clone(),
            message: "design needs per-unit probabilities but column \"p\" is missing".into(),
        }),
    }
}

pub fn build_design(spec: &DesignSpec, nodes: &NodeTable, graph: &Arc<Graph>) -> Result<Design> {
    if graph.n() != nodes.n() {
        return Err(Error::Data(format!(
            "graph has {} units but node table {} has {}",
            graph.n(),
            nodes.path,
            nodes.n()
        )));
    }
    let eligible = nodes.eligible.clone();
    match spec {
        DesignSpec::IidBernoulli { p } => Design::iid(unit_probs(*p, nodes)?, eligible),
        DesignSpec::BlockComplete {
            block_col,
            treat_frac,
        } => Design::block_complete_frac(&nodes.factor_column(block_col)?, eligible, *treat_frac),
        DesignSpec::SequentialNeighbor { p, multiplier } => {
            Design::sequential(unit_probs(*p, nodes)?, eligible, *multiplier, graph.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn edges_roundtrip() {
        let f = file("src,dst\n0,1\n1,2\n1,0\n");
        let (g, rep) = read_edges(f.path(), None, false).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(rep.duplicates, 1);
        assert!(read_edges(f.path(), Some(2), false).is_err());
        let bad = file("src,dst\n0,a\n");
        let msg = read_edges(bad.path(), None, false).unwrap_err().to_string();
        assert!(msg.contains("dst"), "{msg}");
    }

    #[test]
    fn nodes_sorted_and_typed() {
        let f = file("id,D,Y,x1,x2,school,p\n1,0,2.5,1,0,b,0.5\n0,1,1.0,0,1,a,0.5\n");
        let t = read_nodes(f.path()).unwrap();
        assert_eq!(t.d.as_deref(), Some(&[1u8, 0][..]));
        assert_eq!(t.covariate_names, vec!["x1", "x2"]);
        assert_eq!(t.x[1], vec![1.0, 0.0]);
        assert_eq!(t.factor_column("school").unwrap(), vec![0, 1]);
    }

    #[test]
    fn missing_values_name_the_unit() {
        let f = file("id,D,p\n0,1,0.5\n1,0,\n");
        let msg = read_nodes(f.path()).unwrap_err().to_string();
        assert!(msg.contains("unit 1") && msg.contains("\"p\""), "{msg}");
        let gap = file("id,D\n0,1\n2,0\n");
        assert!(read_nodes(gap.path()).is_err());
    }

    #[test]
    fn design_spec_json() {
        let s: DesignSpec = serde_json::from_str(
            r#"{"kind":"block_complete","block_col":"block","treat_frac":0.5}"#,
        )
        .unwrap();
        assert_eq!(
            s,
            DesignSpec::BlockComplete {
                block_col: "block".into(),
                treat_frac: 0.5
            }
        );
        let s: DesignSpec = serde_json::from_str(r#"{"kind":"iid_bernoulli","p":0.5}"#).unwrap();
        assert_eq!(s, DesignSpec::IidBernoulli { p: Some(0.5) });
    }
}
