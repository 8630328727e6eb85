//! Network representation and the topological quantities used by kernels,
//! exposure mappings and diagnostics.
//!
//! A [`Graph`] keeps two neighbor views. `out_neighbors` follows the input
//! direction and is what exposure counting uses. The symmetric view adds
//! `i–j` whenever either direction exists; every distance in this module is
//! measured on it.

use std::collections::VecDeque;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Hop count reported for unreachable nodes or nodes beyond a BFS cap.
pub const UNREACHABLE: u32 = u32::MAX;

/// Counts of input edges dropped while building a [`Graph`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct LoadReport {
    pub duplicates: usize,
    pub self_loops: usize,
}

#[derive(Debug)]
pub struct Graph {
    n: usize,
    out: Vec<Vec<usize>>,
    directed: bool,
    sym: OnceLock<Vec<Vec<usize>>>,
}

impl Clone for Graph {
    fn clone(&self) -> Self {
        let sym = OnceLock::new();
        if let Some(s) = self.sym.get() {
            let _ = sym.set(s.clone());
        }
        Graph {
            n: self.n,
            out: self.out.clone(),
            directed: self.directed,
            sym,
        }
    }
}

/// Which neighbor lists a degree statistic is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegreeView {
    Out,
    Symmetric,
}

impl Graph {
    /// Builds a graph from an edge list. Self-loops and repeated edges are
    /// dropped and counted in the returned report. For undirected graphs each
    /// edge is stored in both directions.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        directed: bool,
    ) -> Result<(Graph, LoadReport)> {
        let mut out = vec![Vec::new(); n];
        let mut report = LoadReport::default();
        for &(a, b) in edges {
            for u in [a, b] {
                if u >= n {
                    return Err(Error::UnitOutOfRange { unit: u, n });
                }
            }
            if a == b {
                report.self_loops += 1;
                continue;
            }
            out[a].push(b);
            if !directed {
                out[b].push(a);
            }
        }
        let mut raw = 0usize;
        let mut kept = 0usize;
        for list in &mut out {
            raw += list.len();
            list.sort_unstable();
            list.dedup();
            kept += list.len();
        }
        report.duplicates = if directed {
            raw - kept
        } else {
            (raw - kept) / 2
        };
        Ok((
            Graph {
                n,
                out,
                directed,
                sym: OnceLock::new(),
            },
            report,
        ))
    }

    /// Graph with `n` units and no links.
    pub fn empty(n: usize) -> Graph {
        Graph {
            n,
            out: vec![Vec::new(); n],
            directed: false,
            sym: OnceLock::new(),
        }
    }

    pub(crate) fn from_sorted_lists(out: Vec<Vec<usize>>, directed: bool) -> Graph {
        Graph {
            n: out.len(),
            out,
            directed,
            sym: OnceLock::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Input-direction neighbors of `i`.
    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out[i]
    }

    /// Neighbors of `i` in the symmetric view.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.symmetric_lists()[i]
    }

    /// Number of stored directed links (each undirected edge counts twice).
    pub fn arc_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    fn symmetric_lists(&self) -> &[Vec<usize>] {
        if !self.directed {
            return &self.out;
        }
        self.sym.get_or_init(|| {
            let mut s = self.out.clone();
            for (i, list) in self.out.iter().enumerate() {
                for &j in list {
                    s[j].push(i);
                }
            }
            for list in &mut s {
                list.sort_unstable();
                list.dedup();
            }
            s
        })
    }

    /// Undirected copy built from the symmetric view.
    pub fn symmetrized(&self) -> Graph {
        Graph::from_sorted_lists(self.symmetric_lists().to_vec(), false)
    }

    /// Relabels units so that old unit `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(Error::Shape(format!(
                "permutation has {} entries for {} units",
                perm.len(),
                self.n
            )));
        }
        let mut out = vec![Vec::new(); self.n];
        for (i, list) in self.out.iter().enumerate() {
            let mut mapped: Vec<usize> = list.iter().map(|&j| perm[j]).collect();
            mapped.sort_unstable();
            out[perm[i]] = mapped;
        }
        Ok(Graph::from_sorted_lists(out, self.directed))
    }

    fn check_unit(&self, i: usize) -> Result<()> {
        if i >= self.n {
            Err(Error::UnitOutOfRange { unit: i, n: self.n })
        } else {
            Ok(())
        }
    }
}

/// Hop distances from one source on the symmetric view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceProfile {
    pub source: usize,
    pub dist: Vec<u32>,
    pub cap: Option<u32>,
}

impl DistanceProfile {
    /// Finite distance to `j`, or `None` when unreachable or beyond the cap.
    pub fn get(&self, j: usize) -> Option<u32> {
        match self.dist[j] {
            UNREACHABLE => None,
            d => Some(d),
        }
    }
}

/// Reusable breadth-first search over the symmetric view. Keeps its buffers
/// between sources so per-source work is proportional to what is visited.
pub(crate) struct Bfs {
    stamp: Vec<u32>,
    dist: Vec<u32>,
    epoch: u32,
    queue: VecDeque<usize>,
}

impl Bfs {
    pub(crate) fn new(n: usize) -> Self {
        Bfs {
            stamp: vec![0; n],
            dist: vec![0; n],
            epoch: 0,
            queue: VecDeque::new(),
        }
    }

    /// Visits every node within `cap` hops of `source` (all reachable nodes if
    /// `cap` is `None`) in nondecreasing distance order.
    pub(crate) fn run(
        &mut self,
        g: &Graph,
        source: usize,
        cap: Option<u32>,
        mut visit: impl FnMut(usize, u32),
    ) {
        let adj = g.symmetric_lists();
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        let epoch = self.epoch;
        self.queue.clear();
        self.stamp[source] = epoch;
        self.dist[source] = 0;
        self.queue.push_back(source);
        while let Some(u) = self.queue.pop_front() {
            let du = self.dist[u];
            visit(u, du);
            if cap.is_some_and(|c| du >= c) {
                continue;
            }
            for &v in &adj[u] {
                if self.stamp[v] != epoch {
                    self.stamp[v] = epoch;
                    self.dist[v] = du + 1;
                    self.queue.push_back(v);
                }
            }
        }
    }
}

pub fn bfs_distances(g: &Graph, source: usize, cap: Option<u32>) -> Result<DistanceProfile> {
    g.check_unit(source)?;
    let mut dist = vec![UNREACHABLE; g.n()];
    Bfs::new(g.n()).run(g, source, cap, |v, d| dist[v] = d);
    Ok(DistanceProfile { source, dist, cap })
}

/// `{j : ℓ(i, j) ≤ depth}` as a sorted list; always contains `i`.
pub fn k_neighborhood(g: &Graph, i: usize, depth: u32) -> Result<Vec<usize>> {
    g.check_unit(i)?;
    let mut out = Vec::new();
    Bfs::new(g.n()).run(g, i, Some(depth), |v, _| out.push(v));
    out.sort_unstable();
    Ok(out)
}

/// Per-unit neighborhood sizes `|N(i, depth)|`.
pub fn neighborhood_sizes(g: &Graph, depth: u32) -> Vec<usize> {
    (0..g.n())
        .into_par_iter()
        .map_init(
            || Bfs::new(g.n()),
            |bfs, i| {
                let mut count = 0usize;
                bfs.run(g, i, Some(depth), |_, _| count += 1);
                count
            },
        )
        .collect()
}

/// `n⁻¹ Σ_i |N(i, depth)|^power`.
pub fn neighborhood_moment(g: &Graph, depth: u32, power: u32) -> f64 {
    if g.n() == 0 {
        return 0.0;
    }
    let sizes = neighborhood_sizes(g, depth);
    let total: f64 = sizes.iter().map(|&s| (s as f64).powi(power as i32)).sum();
    total / g.n() as f64
}

/// Distance histogram per source: `counts[i][s] = |{j : ℓ(i, j) = s}|`.
fn shell_counts(g: &Graph) -> Vec<Vec<usize>> {
    (0..g.n())
        .into_par_iter()
        .map_init(
            || Bfs::new(g.n()),
            |bfs, i| {
                let mut counts: Vec<usize> = Vec::new();
                bfs.run(g, i, None, |_, d| {
                    let d = d as usize;
                    if counts.len() <= d {
                        counts.resize(d + 1, 0);
                    }
                    counts[d] += 1;
                });
                counts
            },
        )
        .collect()
}

/// Average boundary sizes `M∂(s)` for every `s` up to the largest finite
/// distance in the graph.
pub fn boundary_profile(g: &Graph) -> Vec<f64> {
    let shells = shell_counts(g);
    let len = shells.iter().map(Vec::len).max().unwrap_or(0);
    let mut acc = vec![0usize; len];
    for row in &shells {
        for (s, &c) in row.iter().enumerate() {
            acc[s] += c;
        }
    }
    let n = g.n().max(1) as f64;
    acc.into_iter().map(|c| c as f64 / n).collect()
}

/// `M∂(s) = n⁻¹ Σ_i |{j : ℓ(i, j) = s}|`.
pub fn boundary_sizes(g: &Graph, s: u32) -> f64 {
    if g.n() == 0 {
        return 0.0;
    }
    let total: usize = (0..g.n())
        .into_par_iter()
        .map_init(
            || Bfs::new(g.n()),
            |bfs, i| {
                let mut count = 0usize;
                bfs.run(g, i, Some(s), |_, d| {
                    if d == s {
                        count += 1;
                    }
                });
                count
            },
        )
        .sum();
    total as f64 / g.n() as f64
}

/// `J(s) = Σ_{i,j : ℓ(i,j)=s} r_i r_j` for every finite `s`, where `r` holds
/// per-unit kernel row sums.
pub fn j_count_profile(g: &Graph, row_sums: &[f64]) -> Result<Vec<f64>> {
    if row_sums.len() != g.n() {
        return Err(Error::Shape(format!(
            "{} row sums for {} units",
            row_sums.len(),
            g.n()
        )));
    }
    let per_source: Vec<Vec<f64>> = (0..g.n())
        .into_par_iter()
        .map_init(
            || Bfs::new(g.n()),
            |bfs, i| {
                let mut acc: Vec<f64> = Vec::new();
                bfs.run(g, i, None, |j, d| {
                    let d = d as usize;
                    if acc.len() <= d {
                        acc.resize(d + 1, 0.0);
                    }
                    acc[d] += row_sums[j];
                });
                acc.iter_mut().for_each(|a| *a *= row_sums[i]);
                acc
            },
        )
        .collect();
    let len = per_source.iter().map(Vec::len).max().unwrap_or(0);
    let mut total = vec![0.0; len];
    for row in &per_source {
        for (s, &v) in row.iter().enumerate() {
            total[s] += v;
        }
    }
    Ok(total)
}

pub fn j_count(g: &Graph, s: u32, row_sums: &[f64]) -> Result<f64> {
    let profile = j_count_profile(g, row_sums)?;
    Ok(profile.get(s as usize).copied().unwrap_or(0.0))
}

/// Connected components of the symmetric view, each sorted, ordered by their
/// smallest member.
pub fn connected_components(g: &Graph) -> Vec<Vec<usize>> {
    let mut seen = vec![false; g.n()];
    let mut comps = Vec::new();
    let mut bfs = Bfs::new(g.n());
    for s in 0..g.n() {
        if seen[s] {
            continue;
        }
        let mut comp = Vec::new();
        bfs.run(g, s, None, |v, _| {
            seen[v] = true;
            comp.push(v);
        });
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Largest component of the symmetric view; ties go to the component with
/// the smallest unit id.
pub fn largest_component(g: &Graph) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::new();
    for comp in connected_components(g) {
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

/// Mean hop distance over ordered pairs `i ≠ j` of the largest component.
/// Returns 0 when that component is a single unit.
pub fn average_path_length(g: &Graph) -> f64 {
    let comp = largest_component(g);
    if comp.len() < 2 {
        if g.n() > 0 {
            log::warn!("largest component is a singleton; average path length reported as 0");
        }
        return 0.0;
    }
    let total: u64 = comp
        .par_iter()
        .map_init(
            || Bfs::new(g.n()),
            |bfs, &i| {
                let mut acc = 0u64;
                bfs.run(g, i, None, |_, d| acc += d as u64);
                acc
            },
        )
        .sum();
    let m = comp.len() as f64;
    total as f64 / (m * (m - 1.0))
}

/// `n⁻¹ Σ_i Σ_j A_ij` on the requested view.
pub fn average_degree(g: &Graph, view: DegreeView) -> f64 {
    if g.n() == 0 {
        return 0.0;
    }
    let arcs: usize = match view {
        DegreeView::Out => g.out.iter().map(Vec::len).sum(),
        DegreeView::Symmetric => g.symmetric_lists().iter().map(Vec::len).sum(),
    };
    arcs as f64 / g.n() as f64
}

/// `B_ij = 1((A²)_ij ≥ 1, A_ij = 0, i ≠ j)` on the input direction: units
/// that share a friend without being directly linked.
pub fn common_friend_graph(g: &Graph) -> Graph {
    let lists: Vec<Vec<usize>> = (0..g.n())
        .into_par_iter()
        .map(|i| {
            let direct = &g.out[i];
            let mut two: Vec<usize> = direct
                .iter()
                .flat_map(|&k| g.out[k].iter().copied())
                .filter(|&j| j != i && direct.binary_search(&j).is_err())
                .collect();
            two.sort_unstable();
            two.dedup();
            two
        })
        .collect();
    Graph::from_sorted_lists(lists, g.directed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2)], false).unwrap().0
    }

    fn complete(n: usize) -> Graph {
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                e.push((i, j));
            }
        }
        Graph::from_edges(n, &e, false).unwrap().0
    }

    #[test]
    fn bfs_on_chain_and_disconnected() {
        assert_eq!(
            bfs_distances(&path3(), 0, None).unwrap().dist,
            vec![0, 1, 2]
        );
        let g = Graph::empty(2);
        let p = bfs_distances(&g, 0, None).unwrap();
        assert_eq!(p.get(0), Some(0));
        assert_eq!(p.get(1), None);
        assert!(matches!(
            bfs_distances(&g, 2, None),
            Err(Error::UnitOutOfRange { .. })
        ));
    }

    #[test]
    fn bfs_cap_hides_far_nodes() {
        let p = bfs_distances(&path3(), 0, Some(1)).unwrap();
        assert_eq!(p.dist, vec![0, 1, UNREACHABLE]);
    }

    #[test]
    fn load_report_counts_dropped_edges() {
        let (g, r) = Graph::from_edges(3, &[(0, 1), (1, 0), (0, 1), (2, 2)], false).unwrap();
        assert_eq!(
            r,
            LoadReport {
                duplicates: 2,
                self_loops: 1
            }
        );
        assert_eq!(g.out_neighbors(0), &[1]);
        let (g, r) = Graph::from_edges(3, &[(0, 1), (1, 0), (0, 1)], true).unwrap();
        assert_eq!(r.duplicates, 1);
        assert_eq!(g.out_neighbors(1), &[0]);
        assert!(Graph::from_edges(2, &[(0, 5)], false).is_err());
    }

    #[test]
    fn neighborhoods_and_moments() {
        assert_eq!(k_neighborhood(&path3(), 0, 1).unwrap(), vec![0, 1]);
        assert_eq!(k_neighborhood(&path3(), 1, 0).unwrap(), vec![1]);
        assert_eq!(neighborhood_moment(&Graph::empty(5), 3, 2), 1.0);
        assert_eq!(neighborhood_moment(&complete(3), 1, 2), 9.0);
    }

    #[test]
    fn boundary_sizes_small_cases() {
        assert_eq!(boundary_sizes(&path3(), 0), 1.0);
        assert!((boundary_sizes(&path3(), 1) - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(boundary_sizes(&path3(), 7), 0.0);
        let prof = boundary_profile(&path3());
        assert_eq!(prof.len(), 3);
        assert!((prof[2] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn j_count_small_cases() {
        let k3 = complete(3);
        assert_eq!(j_count(&k3, 1, &[3.0, 3.0, 3.0]).unwrap(), 54.0);
        assert_eq!(j_count(&k3, 5, &[3.0, 3.0, 3.0]).unwrap(), 0.0);
        assert!(j_count(&k3, 1, &[1.0]).is_err());
    }

    #[test]
    fn path_length_and_degree() {
        assert_eq!(average_path_length(&complete(4)), 1.0);
        assert!((average_path_length(&path3()) - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(average_path_length(&Graph::empty(3)), 0.0);
        assert_eq!(average_degree(&complete(3), DegreeView::Symmetric), 2.0);
        assert_eq!(average_degree(&Graph::empty(4), DegreeView::Out), 0.0);
    }

    #[test]
    fn path_length_uses_largest_component() {
        // component {0,1,2} (path) and {3,4} (edge)
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (3, 4)], false)
            .unwrap()
            .0;
        assert_eq!(largest_component(&g), vec![0, 1, 2]);
        assert!((average_path_length(&g) - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn directed_views() {
        let g = Graph::from_edges(3, &[(0, 1), (2, 1)], true).unwrap().0;
        assert_eq!(g.out_neighbors(1), &[] as &[usize]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(average_degree(&g, DegreeView::Out), 2.0 / 3.0);
        assert_eq!(average_degree(&g, DegreeView::Symmetric), 4.0 / 3.0);
        assert_eq!(bfs_distances(&g, 0, None).unwrap().dist, vec![0, 1, 2]);
    }

    #[test]
    fn common_friends() {
        let b = common_friend_graph(&path3());
        assert_eq!(b.out_neighbors(0), &[2]);
        assert_eq!(b.out_neighbors(1), &[] as &[usize]);
        assert_eq!(b.out_neighbors(2), &[0]);
        assert_eq!(common_friend_graph(&complete(3)).arc_count(), 0);
    }
}
