//! Randomization mechanisms and generalized propensity scores.
//!
//! A [`Design`] draws treatment vectors `D ∈ {0, …, arms−1}^n`. Ineligible
//! units are always assigned arm 0. Propensities `π_i(t) = P(T_i = t)` come
//! from closed forms where they exist ([`exact_propensity`]), from exhaustive
//! enumeration of small assignment spaces ([`enumerate_propensity`]), or from
//! Monte Carlo ([`mc_propensity`]).

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exposure::{ComponentKind, ExposureEvaluator, ExposureMapping};
use crate::graph::Graph;
use crate::rng::stream_rng;

pub const DEFAULT_MC_DRAWS: usize = 100_000;

/// Draws per parallel work unit in Monte-Carlo loops.
const CHUNK: usize = 512;

#[derive(Debug, Clone)]
pub struct Block {
    /// Eligible members, sorted.
    pub members: Vec<usize>,
    /// `counts[a - 1]` units receive arm `a`; the rest stay at arm 0.
    pub counts: Vec<usize>,
}

impl Block {
    fn assigned(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Probability that a given member receives arm `arm`.
    fn arm_prob(&self, arm: u8) -> f64 {
        let m = self.members.len() as f64;
        if arm == 0 {
            (self.members.len() - self.assigned()) as f64 / m
        } else {
            self.counts[arm as usize - 1] as f64 / m
        }
    }
}

#[derive(Debug, Clone)]
pub enum DesignKind {
    IidBernoulli {
        p: Vec<f64>,
    },
    BlockComplete {
        blocks: Vec<Block>,
        block_of: Vec<Option<usize>>,
    },
    SequentialNeighbor {
        p: Vec<f64>,
        multiplier: f64,
        graph: Arc<Graph>,
    },
}

#[derive(Debug, Clone)]
pub struct Design {
    kind: DesignKind,
    eligible: Vec<bool>,
    arms: u8,
}

fn check_probs(p: &[f64], eligible: &[bool]) -> Result<Vec<f64>> {
    if p.len() != eligible.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} units",
            p.len(),
            eligible.len()
        )));
    }
    p.iter()
        .zip(eligible)
        .enumerate()
        .map(|(i, (&pi, &e))| {
            if !(0.0..=1.0).contains(&pi) {
                Err(Error::Data(format!(
                    "unit {i}: treatment probability {pi} is outside [0, 1]"
                )))
            } else {
                Ok(if e { pi } else { 0.0 })
            }
        })
        .collect()
}

fn eligibility(eligible: Option<Vec<bool>>, n: usize) -> Result<Vec<bool>> {
    let e = eligible.unwrap_or_else(|| vec![true; n]);
    if e.len() != n {
        return Err(Error::Shape(format!(
            "eligibility mask has {} entries for {n} units",
            e.len()
        )));
    }
    Ok(e)
}

impl Design {
    /// Independent Bernoulli(p_i) assignment.
    pub fn iid(p: Vec<f64>, eligible: Option<Vec<bool>>) -> Result<Self> {
        let eligible = eligibility(eligible, p.len())?;
        let p = check_probs(&p, &eligible)?;
        Ok(Design {
            kind: DesignKind::IidBernoulli { p },
            eligible,
            arms: 2,
        })
    }

    pub fn iid_constant(n: usize, p: f64) -> Result<Self> {
        Self::iid(vec![p; n], None)
    }

    /// Complete randomization within blocks with binary treatment:
    /// `treated[b]` eligible units of block `b` get arm 1.
    pub fn block_complete(
        block_of: &[usize],
        eligible: Option<Vec<bool>>,
        treated: &[usize],
    ) -> Result<Self> {
        let counts: Vec<Vec<usize>> = treated.iter().map(|&k| vec![k]).collect();
        Self::block_complete_arms(block_of, eligible, &counts)
    }

    /// Complete randomization within blocks over several arms:
    /// `counts[b][a - 1]` eligible units of block `b` get arm `a`.
    pub fn block_complete_arms(
        block_of: &[usize],
        eligible: Option<Vec<bool>>,
        counts: &[Vec<usize>],
    ) -> Result<Self> {
        let n = block_of.len();
        let eligible = eligibility(eligible, n)?;
        let arm_count = counts.iter().map(Vec::len).max().unwrap_or(1);
        if arm_count + 1 > u8::MAX as usize {
            return Err(Error::Config(format!(
                "{arm_count} treatment arms exceed the limit"
            )));
        }
        let mut blocks: Vec<Block> = counts
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.resize(arm_count, 0);
                Block {
                    members: Vec::new(),
                    counts: c,
                }
            })
            .collect();
        let mut block_id = vec![None; n];
        for i in 0..n {
            if !eligible[i] {
                continue;
            }
            let b = block_of[i];
            if b >= blocks.len() {
                return Err(Error::Data(format!(
                    "unit {i} is in block {b}, but only {} block counts were given",
                    blocks.len()
                )));
            }
            blocks[b].members.push(i);
            block_id[i] = Some(b);
        }
        for (b, block) in blocks.iter().enumerate() {
            if block.assigned() > block.members.len() {
                return Err(Error::Config(format!(
                    "block {b} assigns {} units but has {} eligible members",
                    block.assigned(),
                    block.members.len()
                )));
            }
        }
        Ok(Design {
            kind: DesignKind::BlockComplete {
                blocks,
                block_of: block_id,
            },
            eligible,
            arms: arm_count as u8 + 1,
        })
    }

    /// Block design treating `round(frac · m_b)` units of each block, with
    /// halves rounded away from zero. Block ids are arbitrary labels.
    pub fn block_complete_frac(
        block_of: &[usize],
        eligible: Option<Vec<bool>>,
        frac: f64,
    ) -> Result<Self> {
        Self::block_complete_arm_fracs(block_of, eligible, &[frac])
    }

    /// Multi-arm version of [`Design::block_complete_frac`]: arm `a` gets
    /// `round(fracs[a - 1] · m_b)` members of each block.
    pub fn block_complete_arm_fracs(
        block_of: &[usize],
        eligible: Option<Vec<bool>>,
        fracs: &[f64],
    ) -> Result<Self> {
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || fracs.iter().sum::<f64>() > 1.0 + 1e-12
        {
            return Err(Error::Config(format!(
                "arm fractions {fracs:?} must lie in [0, 1] and sum to at most 1"
            )));
        }
        let eligible = eligibility(eligible, block_of.len())?;
        let nb = block_of
            .iter()
            .zip(&eligible)
            .filter(|(_, &e)| e)
            .map(|(&b, _)| b + 1)
            .max()
            .unwrap_or(0);
        let mut sizes = vec![0usize; nb];
        for (&b, &e) in block_of.iter().zip(&eligible) {
            if e {
                sizes[b] += 1;
            }
        }
        let counts: Vec<Vec<usize>> = sizes
            .iter()
            .map(|&m| {
                let mut left = m;
                fracs
                    .iter()
                    .map(|f| {
                        let k = ((f * m as f64).round() as usize).min(left);
                        left -= k;
                        k
                    })
                    .collect()
            })
            .collect();
        Self::block_complete_arms(block_of, Some(eligible), &counts)
    }

    /// Units processed in uniformly random order; unit `i` is treated with
    /// probability `p_i`, or `min(1, multiplier · p_i)` once any of its
    /// neighbors in the symmetric view is already treated.
    pub fn sequential(
        p: Vec<f64>,
        eligible: Option<Vec<bool>>,
        multiplier: f64,
        graph: Arc<Graph>,
    ) -> Result<Self> {
        if graph.n() != p.len() {
            return Err(Error::Shape(format!(
                "{} probabilities for {} units",
                p.len(),
                graph.n()
            )));
        }
        if !(multiplier >= 0.0 && multiplier.is_finite()) {
            return Err(Error::Config(format!(
                "sequential multiplier {multiplier} must be >= 0"
            )));
        }
        let eligible = eligibility(eligible, p.len())?;
        let p = check_probs(&p, &eligible)?;
        Ok(Design {
            kind: DesignKind::SequentialNeighbor {
                p,
                multiplier,
                graph,
            },
            eligible,
            arms: 2,
        })
    }

    pub fn kind(&self) -> &DesignKind {
        &self.kind
    }

    pub fn n(&self) -> usize {
        self.eligible.len()
    }

    pub fn eligible(&self) -> &[bool] {
        &self.eligible
    }

    pub fn arms(&self) -> u8 {
        self.arms
    }

    pub fn describe(&self) -> &'static str {
        match self.kind {
            DesignKind::IidBernoulli { .. } => "iid_bernoulli",
            DesignKind::BlockComplete { .. } => "block_complete",
            DesignKind::SequentialNeighbor { .. } => "sequential_neighbor",
        }
    }

    /// Draws one assignment into `d` using `rng`.
    pub fn draw_into(&self, rng: &mut ChaCha8Rng, d: &mut [u8]) {
        d.iter_mut().for_each(|x| *x = 0);
        match &self.kind {
            DesignKind::IidBernoulli { p } => {
                for (di, &pi) in d.iter_mut().zip(p) {
                    *di = (rng.random::<f64>() < pi) as u8;
                }
            }
            DesignKind::BlockComplete { blocks, .. } => {
                let mut scratch = Vec::new();
                for block in blocks {
                    scratch.clear();
                    scratch.extend_from_slice(&block.members);
                    let (chosen, _) = scratch.partial_shuffle(rng, block.assigned());
                    let mut pos = 0;
                    for (a, &c) in block.counts.iter().enumerate() {
                        for &u in &chosen[pos..pos + c] {
                            d[u] = a as u8 + 1;
                        }
                        pos += c;
                    }
                }
            }
            DesignKind::SequentialNeighbor {
                p,
                multiplier,
                graph,
            } => {
                let mut order: Vec<usize> = (0..d.len()).filter(|&i| self.eligible[i]).collect();
                order.shuffle(rng);
                for i in order {
                    let boosted = graph.neighbors(i).iter().any(|&j| d[j] == 1);
                    let prob = if boosted {
                        (p[i] * multiplier).min(1.0)
                    } else {
                        p[i]
                    };
                    d[i] = (rng.random::<f64>() < prob) as u8;
                }
            }
        }
    }

    /// Assignment for draw `index` of the stream keyed by `seed`.
    pub fn draw_indexed(&self, seed: u64, index: u64) -> Vec<u8> {
        let mut d = vec![0; self.n()];
        self.draw_into(&mut stream_rng(seed, index), &mut d);
        d
    }

    /// Marginal `P(D_i ∈ arms)` for designs where it has a closed form.
    fn unit_arm_prob(&self, i: usize, arms: &[u8]) -> Option<f64> {
        match &self.kind {
            DesignKind::IidBernoulli { p } => Some(
                arms.iter()
                    .map(|&a| match a {
                        0 => 1.0 - p[i],
                        1 => p[i],
                        _ => 0.0,
                    })
                    .sum(),
            ),
            DesignKind::BlockComplete { blocks, block_of } => Some(match block_of[i] {
                None => arms.contains(&0) as u8 as f64,
                Some(b) => arms
                    .iter()
                    .filter(|&&a| (a as usize) <= blocks[b].counts.len())
                    .map(|&a| blocks[b].arm_prob(a))
                    .sum(),
            }),
            DesignKind::SequentialNeighbor { .. } => None,
        }
    }
}

pub fn draw_assignment(d: &Design, seed: u64) -> Vec<u8> {
    d.draw_indexed(seed, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityMethod {
    Exact,
    Enumerated { assignments: usize },
    MonteCarlo { draws: usize, seed: u64 },
    Supplied,
}

/// `π_i(t)` for every unit and exposure value, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensityTable {
    n: usize,
    support: usize,
    pi: Vec<f64>,
    pub method: PropensityMethod,
    pub mc_std_err: Option<Vec<f64>>,
}

impl PropensityTable {
    /// Table from a row-major `n × support` array. Rows must lie in `[0, 1]`
    /// and sum to one within `1e-9`.
    pub fn new(n: usize, support: usize, pi: Vec<f64>, method: PropensityMethod) -> Result<Self> {
        if pi.len() != n * support {
            return Err(Error::Shape(format!(
                "propensity array has {} entries, expected {n} × {support}",
                pi.len()
            )));
        }
        for i in 0..n {
            let row = &pi[i * support..(i + 1) * support];
            if let Some(&p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::Data(format!(
                    "unit {i}: propensity {p} is outside [0, 1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Data(format!(
                    "unit {i}: propensities sum to {s}, not 1"
                )));
            }
        }
        Ok(PropensityTable {
            n,
            support,
            pi,
            method,
            mc_std_err: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn support(&self) -> usize {
        self.support
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.pi[i * self.support..(i + 1) * self.support]
    }

    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.pi[i * self.support + t]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }

    /// Monte-Carlo standard error of cell `(i, t)`, if estimated by MC.
    pub fn std_err(&self, i: usize, t: usize) -> Option<f64> {
        self.mc_std_err.as_ref().map(|se| se[i * self.support + t])
    }

    /// Rows for the listed units, in that order.
    pub fn restrict(&self, units: &[usize]) -> PropensityTable {
        let mut pi = Vec::with_capacity(units.len() * self.support);
        for &i in units {
            pi.extend_from_slice(self.row(i));
        }
        let mc_std_err = self.mc_std_err.as_ref().map(|se| {
            units
                .iter()
                .flat_map(|&i| se[i * self.support..(i + 1) * self.support].iter().copied())
                .collect()
        });
        PropensityTable {
            n: units.len(),
            support: self.support,
            pi,
            method: self.method.clone(),
            mc_std_err,
        }
    }
}

/// `C(m − k, s) / C(m, s)`: the chance that none of `k` fixed members of a
/// block of size `m` lands among `s` members drawn without replacement.
fn none_drawn(m: usize, k: usize, s: usize) -> f64 {
    if k + s > m {
        return 0.0;
    }
    (0..k)
        .map(|r| (m - s - r) as f64 / (m - r) as f64)
        .product()
}

/// Probability that no unit in `units` has an arm in `arms`.
fn none_in_filter(design: &Design, units: &[usize], arms: &[u8]) -> Option<f64> {
    match &design.kind {
        DesignKind::IidBernoulli { .. } => Some(
            units
                .iter()
                .map(|&j| 1.0 - design.unit_arm_prob(j, arms).unwrap())
                .product(),
        ),
        DesignKind::BlockComplete { blocks, block_of } => {
            let mut per_block = vec![0usize; blocks.len()];
            for &j in units {
                match block_of[j] {
                    Some(b) => per_block[b] += 1,
                    None if arms.contains(&0) => return Some(0.0),
                    None => {}
                }
            }
            Some(
                blocks
                    .iter()
                    .zip(&per_block)
                    .filter(|(_, &k)| k > 0)
                    .map(|(block, &k)| {
                        let m = block.members.len();
                        let s: usize = arms
                            .iter()
                            .map(|&a| match a {
                                0 => m - block.assigned(),
                                a => block.counts.get(a as usize - 1).copied().unwrap_or(0),
                            })
                            .sum();
                        none_drawn(m, k, s)
                    })
                    .product(),
            )
        }
        DesignKind::SequentialNeighbor { .. } => None,
    }
}

/// Closed-form propensities.
///
/// Supported pairs: any single component under IID Bernoulli or block
/// complete randomization, and factorials of distinct component kinds under
/// IID Bernoulli. Everything else returns [`Error::UnsupportedPropensity`].
pub fn exact_propensity(m: &ExposureMapping, d: &Design, g: &Graph) -> Result<PropensityTable> {
    if g.n() != d.n() {
        return Err(Error::Shape(format!(
            "design covers {} units, graph has {}",
            d.n(),
            g.n()
        )));
    }
    let unsupported = || Error::UnsupportedPropensity {
        mapping: m.describe(),
        design: d.describe().into(),
    };
    let comps = m.components();
    let distinct = {
        let mut kinds: Vec<ComponentKind> = comps.iter().map(|c| c.kind).collect();
        kinds.sort_by_key(|k| k.locality());
        kinds.dedup();
        kinds.len() == comps.len()
    };
    match d.kind {
        DesignKind::SequentialNeighbor { .. } => return Err(unsupported()),
        DesignKind::BlockComplete { .. } if comps.len() > 1 => return Err(unsupported()),
        DesignKind::IidBernoulli { .. } if !distinct => return Err(unsupported()),
        _ => {}
    }
    if m.arms() < d.arms() {
        return Err(Error::Config(format!(
            "design uses {} arms but the mapping declares {}",
            d.arms(),
            m.arms()
        )));
    }
    let eval = ExposureEvaluator::new(m, g);
    let n = g.n();
    let c = comps.len();
    let support = m.support_size();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            // marginal probability that each component is on
            let on: Vec<f64> = comps
                .iter()
                .enumerate()
                .map(|(k, comp)| {
                    let arms = comp.arm_filter.arms();
                    match eval.component_graph(k) {
                        None => d.unit_arm_prob(i, arms).unwrap(),
                        Some(src) => 1.0 - none_in_filter(d, src.out_neighbors(i), arms).unwrap(),
                    }
                })
                .collect();
            (0..support)
                .map(|t| {
                    (0..c)
                        .map(|k| {
                            if m.component_bit(t, k) == 1 {
                                on[k]
                            } else {
                                1.0 - on[k]
                            }
                        })
                        .product()
                })
                .collect()
        })
        .collect();
    PropensityTable::new(n, support, rows.concat(), PropensityMethod::Exact)
}

/// Visits every assignment the design can produce together with its
/// probability, if there are at most `limit` of them. Returns the number of
/// assignments, or `None` when the space is larger or not enumerable.
pub fn for_each_assignment(
    design: &Design,
    limit: usize,
    mut visit: impl FnMut(&[u8], f64),
) -> Option<usize> {
    let n = design.n();
    match &design.kind {
        DesignKind::IidBernoulli { p } => {
            let free: Vec<usize> = (0..n).filter(|&i| p[i] > 0.0 && p[i] < 1.0).collect();
            if free.len() >= usize::BITS as usize - 1 || (1usize << free.len()) > limit {
                return None;
            }
            let mut d: Vec<u8> = p.iter().map(|&pi| (pi >= 1.0) as u8).collect();
            for mask in 0..(1usize << free.len()) {
                let mut prob = 1.0;
                for (b, &i) in free.iter().enumerate() {
                    let on = (mask >> b) & 1 == 1;
                    d[i] = on as u8;
                    prob *= if on { p[i] } else { 1.0 - p[i] };
                }
                visit(&d, prob);
            }
            Some(1usize << free.len())
        }
        DesignKind::BlockComplete { blocks, .. } => {
            let mut per_block: Vec<Vec<Vec<u8>>> = Vec::with_capacity(blocks.len());
            let mut total = 1usize;
            for block in blocks {
                let count = multinomial(block.members.len(), &block.counts)?;
                total = total.checked_mul(count).filter(|&t| t <= limit)?;
                let mut out = Vec::with_capacity(count);
                let mut remaining = block.counts.clone();
                let mut cur = vec![0u8; block.members.len()];
                arrangements(
                    0,
                    &mut remaining,
                    block.members.len() - block.assigned(),
                    &mut cur,
                    &mut out,
                );
                per_block.push(out);
            }
            let prob = 1.0 / total as f64;
            let mut d = vec![0u8; n];
            let mut idx = vec![0usize; blocks.len()];
            loop {
                for (b, block) in blocks.iter().enumerate() {
                    for (&u, &a) in block.members.iter().zip(&per_block[b][idx[b]]) {
                        d[u] = a;
                    }
                }
                visit(&d, prob);
                let mut b = 0;
                loop {
                    if b == blocks.len() {
                        return Some(total);
                    }
                    idx[b] += 1;
                    if idx[b] < per_block[b].len() {
                        break;
                    }
                    idx[b] = 0;
                    b += 1;
                }
            }
        }
        DesignKind::SequentialNeighbor { .. } => None,
    }
}

fn multinomial(m: usize, counts: &[usize]) -> Option<usize> {
    let mut total: u128 = 1;
    let mut left = m as u128;
    for &c in counts {
        let mut binom: u128 = 1;
        for r in 0..c as u128 {
            binom = binom * (left - r) / (r + 1);
            if binom > usize::MAX as u128 {
                return None;
            }
        }
        total = total.checked_mul(binom)?;
        left -= c as u128;
    }
    usize::try_from(total).ok()
}

fn arrangements(
    pos: usize,
    remaining: &mut [usize],
    zeros: usize,
    cur: &mut Vec<u8>,
    out: &mut Vec<Vec<u8>>,
) {
    if pos == cur.len() {
        out.push(cur.clone());
        return;
    }
    if zeros > 0 {
        cur[pos] = 0;
        arrangements(pos + 1, remaining, zeros - 1, cur, out);
    }
    for a in 0..remaining.len() {
        if remaining[a] > 0 {
            remaining[a] -= 1;
            cur[pos] = a as u8 + 1;
            arrangements(pos + 1, remaining, zeros, cur, out);
            remaining[a] += 1;
        }
    }
}

/// Exact propensities by summing over every possible assignment. Returns
/// `None` when the design has more than `limit` assignments.
pub fn enumerate_propensity(
    m: &ExposureMapping,
    d: &Design,
    g: &Graph,
    limit: usize,
) -> Result<Option<PropensityTable>> {
    let eval = ExposureEvaluator::new(m, g);
    let support = m.support_size();
    let n = g.n();
    let mut pi = vec![0.0; n * support];
    let mut t = vec![0usize; n];
    let mut failure = None;
    let count = for_each_assignment(d, limit, |dv, prob| {
        if failure.is_some() {
            return;
        }
        if let Err(e) = eval.evaluate_into(dv, &mut t) {
            failure = Some(e);
            return;
        }
        for (i, &ti) in t.iter().enumerate() {
            pi[i * support + ti] += prob;
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    match count {
        None => Ok(None),
        Some(assignments) => {
            // enumeration sums may drift from 1 by rounding; renormalize rows
            for row in pi.chunks_mut(support) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= s);
            }
            PropensityTable::new(n, support, pi, PropensityMethod::Enumerated { assignments })
                .map(Some)
        }
    }
}

/// Runs `draws` indexed assignments in parallel, folding each realized
/// exposure vector into a per-chunk accumulator.
pub(crate) fn count_exposures(
    eval: &ExposureEvaluator,
    d: &Design,
    draws: usize,
    seed: u64,
    support: usize,
) -> Result<Vec<u64>> {
    let n = d.n();
    let chunks = draws.div_ceil(CHUNK);
    let partial: Vec<Result<Vec<u64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; n * support];
            let mut dv = vec![0u8; n];
            let mut t = vec![0usize; n];
            for r in c * CHUNK..((c + 1) * CHUNK).min(draws) {
                d.draw_into(&mut stream_rng(seed, r as u64), &mut dv);
                eval.evaluate_into(&dv, &mut t).map_err(|e| Error::Draw {
                    draw: r,
                    seed,
                    source: Box::new(e),
                })?;
                for (i, &ti) in t.iter().enumerate() {
                    counts[i * support + ti] += 1;
                }
            }
            Ok(counts)
        })
        .collect();
    let mut total = vec![0u64; n * support];
    for p in partial {
        for (a, b) in total.iter_mut().zip(p?) {
            *a += b;
        }
    }
    Ok(total)
}

/// Monte-Carlo propensities `π̂_i(t) = R⁻¹ Σ_r 1(T_i^(r) = t)` with standard
/// errors `sqrt(π̂(1 − π̂)/R)`. Draw `r` uses stream `r` of `seed`.
pub fn mc_propensity(
    m: &ExposureMapping,
    d: &Design,
    g: &Graph,
    draws: usize,
    seed: u64,
) -> Result<PropensityTable> {
    if draws == 0 {
        return Err(Error::Config(
            "Monte-Carlo propensities need at least one draw".into(),
        ));
    }
    if g.n() != d.n() {
        return Err(Error::Shape(format!(
            "design covers {} units, graph has {}",
            d.n(),
            g.n()
        )));
    }
    let support = m.support_size();
    let eval = ExposureEvaluator::new(m, g);
    let counts = count_exposures(&eval, d, draws, seed, support)?;
    let r = draws as f64;
    let pi: Vec<f64> = counts.iter().map(|&c| c as f64 / r).collect();
    let se = pi.iter().map(|&p| (p * (1.0 - p) / r).sqrt()).collect();
    let mut table = PropensityTable::new(
        g.n(),
        support,
        pi,
        PropensityMethod::MonteCarlo { draws, seed },
    )?;
    table.mc_std_err = Some(se);
    Ok(table)
}

/// Exact propensities when a closed form exists, Monte Carlo otherwise.
pub fn propensity(
    m: &ExposureMapping,
    d: &Design,
    g: &Graph,
    draws: usize,
    seed: u64,
) -> Result<PropensityTable> {
    match exact_propensity(m, d, g) {
        Err(Error::UnsupportedPropensity { .. }) => mc_propensity(m, d, g, draws, seed),
        other => other,
    }
}
