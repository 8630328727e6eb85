//! Finite-support exposure mappings `T_i = T(i, D, A)`.
//!
//! A mapping is a factorial of one to three binary components. Each component
//! asks whether some set of units around `i` contains a unit whose arm lies in
//! the component's `arm_filter`:
//!
//! | component                        | units inspected                         | K |
//! |----------------------------------|-----------------------------------------|---|
//! | `direct`                         | `i` itself                              | 0 |
//! | `any_treated_neighbor`           | out-neighbors of `i`                    | 1 |
//! | `any_treated_friend_of_friend`   | common-friend graph of the symmetric view | 2 |
//!
//! The support is every bit tuple, ordered lexicographically with the first
//! component most significant. Exposure values are stored as indices into
//! that order, so `(b_0, …, b_{c-1})` has index `Σ_k b_k 2^{c-1-k}`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::design::PropensityTable;
use crate::error::{Error, Result};
use crate::graph::{common_friend_graph, Graph};

pub const MAX_COMPONENTS: usize = 3;

/// Per-unit exposure values as indices into [`ExposureMapping::support`].
pub type ExposureVector = Vec<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Direct,
    AnyTreatedNeighbor,
    #[serde(alias = "friend_of_friend")]
    AnyTreatedFriendOfFriend,
}

impl ComponentKind {
    pub fn locality(self) -> u32 {
        match self {
            ComponentKind::Direct => 0,
            ComponentKind::AnyTreatedNeighbor => 1,
            ComponentKind::AnyTreatedFriendOfFriend => 2,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ComponentKind::Direct => "direct",
            ComponentKind::AnyTreatedNeighbor => "any_treated_neighbor",
            ComponentKind::AnyTreatedFriendOfFriend => "any_treated_friend_of_friend",
        }
    }
}

/// Arm values that count as "treated" for one component.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArmFilter(Vec<u8>);

impl ArmFilter {
    pub fn new(mut arms: Vec<u8>) -> Self {
        arms.sort_unstable();
        arms.dedup();
        ArmFilter(arms)
    }

    pub fn arms(&self) -> &[u8] {
        &self.0
    }

    #[inline]
    pub fn contains(&self, arm: u8) -> bool {
        self.0.contains(&arm)
    }
}

impl Default for ArmFilter {
    fn default() -> Self {
        ArmFilter(vec![1])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Component {
    pub kind: ComponentKind,
    pub arm_filter: ArmFilter,
}

impl Component {
    pub fn new(kind: ComponentKind) -> Self {
        Component {
            kind,
            arm_filter: ArmFilter::default(),
        }
    }

    pub fn with_filter(kind: ComponentKind, arms: Vec<u8>) -> Self {
        Component {
            kind,
            arm_filter: ArmFilter::new(arms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "MappingSpec", into = "MappingSpec")]
pub struct ExposureMapping {
    components: Vec<Component>,
    arms: u8,
}

impl ExposureMapping {
    /// Factorial mapping over `components` with binary treatment arms.
    pub fn factorial(components: Vec<Component>) -> Result<Self> {
        Self::with_arms(components, 2)
    }

    /// Factorial mapping whose treatment vector takes values in `0..arms`.
    pub fn with_arms(components: Vec<Component>, arms: u8) -> Result<Self> {
        if components.is_empty() || components.len() > MAX_COMPONENTS {
            return Err(Error::Config(format!(
                "an exposure mapping needs 1 to {MAX_COMPONENTS} components, got {}",
                components.len()
            )));
        }
        if arms < 2 {
            return Err(Error::Config(format!(
                "at least two arms are required, got {arms}"
            )));
        }
        for c in &components {
            if let Some(&a) = c.arm_filter.arms().iter().find(|&&a| a >= arms) {
                return Err(Error::Config(format!(
                    "{} filter names arm {a}, but arms run 0..{arms}",
                    c.kind.name()
                )));
            }
        }
        Ok(ExposureMapping { components, arms })
    }

    pub fn single(kind: ComponentKind) -> Self {
        ExposureMapping {
            components: vec![Component::new(kind)],
            arms: 2,
        }
    }

    pub fn direct() -> Self {
        Self::single(ComponentKind::Direct)
    }

    pub fn any_treated_neighbor() -> Self {
        Self::single(ComponentKind::AnyTreatedNeighbor)
    }

    pub fn friend_of_friend() -> Self {
        Self::single(ComponentKind::AnyTreatedFriendOfFriend)
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn arms(&self) -> u8 {
        self.arms
    }

    /// Locality constant `K`: the largest component radius.
    pub fn locality(&self) -> u32 {
        self.components
            .iter()
            .map(|c| c.kind.locality())
            .max()
            .unwrap_or(0)
    }

    pub fn support_size(&self) -> usize {
        1 << self.components.len()
    }

    /// Support tuples in index order.
    pub fn support(&self) -> Vec<Vec<u8>> {
        (0..self.support_size()).map(|t| self.decode(t)).collect()
    }

    /// Bit tuple for exposure index `t`.
    pub fn decode(&self, t: usize) -> Vec<u8> {
        let c = self.components.len();
        (0..c).map(|k| ((t >> (c - 1 - k)) & 1) as u8).collect()
    }

    /// Projection of exposure index `t` onto component `k`.
    pub fn component_bit(&self, t: usize, k: usize) -> u8 {
        let c = self.components.len();
        ((t >> (c - 1 - k)) & 1) as u8
    }

    /// Human-readable label: `"1"` for one component, `"(0,1)"` otherwise.
    pub fn label(&self, t: usize) -> String {
        let bits = self.decode(t);
        if bits.len() == 1 {
            bits[0].to_string()
        } else {
            let inner: Vec<String> = bits.iter().map(u8::to_string).collect();
            format!("({})", inner.join(","))
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.support_size()).map(|t| self.label(t)).collect()
    }

    /// Short description used in error messages.
    pub fn describe(&self) -> String {
        let names: Vec<&str> = self.components.iter().map(|c| c.kind.name()).collect();
        if names.len() == 1 {
            names[0].to_string()
        } else {
            format!("factorial({})", names.join(", "))
        }
    }

    pub fn check_arms(&self, d: &[u8]) -> Result<()> {
        match d.iter().position(|&a| a >= self.arms) {
            Some(unit) => Err(Error::ArmOutOfRange {
                unit,
                arm: d[unit],
                arms: self.arms,
            }),
            None => Ok(()),
        }
    }
}

/// Precomputed neighbor structure for evaluating one mapping on one graph
/// many times, as Monte-Carlo loops do.
#[derive(Debug, Clone)]
pub struct ExposureEvaluator {
    mapping: ExposureMapping,
    sources: Vec<Option<Arc<Graph>>>,
    n: usize,
}

impl ExposureEvaluator {
    pub fn new(mapping: &ExposureMapping, g: &Graph) -> Self {
        let mut out: Option<Arc<Graph>> = None;
        let mut fof: Option<Arc<Graph>> = None;
        let sources = mapping
            .components
            .iter()
            .map(|c| match c.kind {
                ComponentKind::Direct => None,
                ComponentKind::AnyTreatedNeighbor => {
                    Some(out.get_or_insert_with(|| Arc::new(g.clone())).clone())
                }
                ComponentKind::AnyTreatedFriendOfFriend => Some(
                    fof.get_or_insert_with(|| Arc::new(common_friend_graph(&g.symmetrized())))
                        .clone(),
                ),
            })
            .collect();
        ExposureEvaluator {
            mapping: mapping.clone(),
            sources,
            n: g.n(),
        }
    }

    pub fn mapping(&self) -> &ExposureMapping {
        &self.mapping
    }

    pub(crate) fn component_graph(&self, k: usize) -> Option<&Graph> {
        self.sources[k].as_deref()
    }

    pub fn evaluate(&self, d: &[u8]) -> Result<ExposureVector> {
        let mut out = vec![0; self.n];
        self.evaluate_into(d, &mut out)?;
        Ok(out)
    }

    pub fn evaluate_into(&self, d: &[u8], out: &mut [usize]) -> Result<()> {
        if d.len() != self.n || out.len() != self.n {
            return Err(Error::Shape(format!(
                "treatment vector has {} entries for {} units",
                d.len(),
                self.n
            )));
        }
        self.mapping.check_arms(d)?;
        self.evaluate_unchecked(d, out);
        Ok(())
    }

    pub(crate) fn evaluate_unchecked(&self, d: &[u8], out: &mut [usize]) {
        for (i, slot) in out.iter_mut().enumerate() {
            let mut t = 0usize;
            for (c, src) in self.mapping.components.iter().zip(&self.sources) {
                let bit = match src {
                    None => c.arm_filter.contains(d[i]),
                    Some(g) => g
                        .out_neighbors(i)
                        .iter()
                        .any(|&j| c.arm_filter.contains(d[j])),
                };
                t = (t << 1) | bit as usize;
            }
            *slot = t;
        }
    }
}

pub fn compute_exposures(m: &ExposureMapping, d: &[u8], g: &Graph) -> Result<ExposureVector> {
    ExposureEvaluator::new(m, g).evaluate(d)
}

/// `(𝒯, K)` for a mapping.
pub fn exposure_support(m: &ExposureMapping) -> (Vec<Vec<u8>>, u32) {
    (m.support(), m.locality())
}

/// Units with strictly interior propensities for every exposure value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveSample {
    pub units: Vec<usize>,
    /// `Σ_i π_i(t)` over retained units, the expected size of each cell.
    pub expected_counts: Vec<f64>,
}

impl EffectiveSample {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Realized cell sizes `n̂(t) = Σ_i 1(T_i = t)` over retained units, with
    /// `t` indexed by population unit id.
    pub fn cell_counts(&self, t: &[usize], support: usize) -> Vec<usize> {
        let mut counts = vec![0; support];
        for &i in &self.units {
            counts[t[i]] += 1;
        }
        counts
    }
}

pub fn effective_sample(m: &ExposureMapping, pi: &PropensityTable) -> Result<EffectiveSample> {
    let support = m.support_size();
    if pi.support() != support {
        return Err(Error::Shape(format!(
            "propensity table has {} columns, mapping support has {support}",
            pi.support()
        )));
    }
    let mut units = Vec::new();
    let mut expected = vec![0.0; support];
    for i in 0..pi.n() {
        let row = pi.row(i);
        if row.iter().all(|&p| p > 0.0 && p < 1.0) {
            units.push(i);
            for (e, &p) in expected.iter_mut().zip(row) {
                *e += p;
            }
        }
    }
    if units.is_empty() {
        return Err(Error::EmptyEffectiveSample);
    }
    Ok(EffectiveSample {
        units,
        expected_counts: expected,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FilterSpec {
    List(Vec<u8>),
    Object { treated: Vec<u8> },
}

#[derive(Serialize, Deserialize)]
struct ComponentSpec {
    kind: ComponentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arm_filter: Option<FilterSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MappingSpec {
    Factorial {
        kind: FactorialTag,
        components: Vec<ComponentSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        arms: Option<u8>,
    },
    Single {
        #[serde(flatten)]
        component: ComponentSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        arms: Option<u8>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FactorialTag {
    Factorial,
}

impl From<ComponentSpec> for Component {
    fn from(s: ComponentSpec) -> Self {
        let arms = match s.arm_filter {
            None => vec![1],
            Some(FilterSpec::List(v)) | Some(FilterSpec::Object { treated: v }) => v,
        };
        Component::with_filter(s.kind, arms)
    }
}

impl From<&Component> for ComponentSpec {
    fn from(c: &Component) -> Self {
        let arm_filter = (c.arm_filter != ArmFilter::default())
            .then(|| FilterSpec::List(c.arm_filter.arms().to_vec()));
        ComponentSpec {
            kind: c.kind,
            arm_filter,
        }
    }
}

impl TryFrom<MappingSpec> for ExposureMapping {
    type Error = Error;

    fn try_from(spec: MappingSpec) -> Result<Self> {
        match spec {
            MappingSpec::Factorial {
                components, arms, ..
            } => ExposureMapping::with_arms(
                components.into_iter().map(Component::from).collect(),
                arms.unwrap_or(2),
            ),
            MappingSpec::Single { component, arms } => {
                ExposureMapping::with_arms(vec![component.into()], arms.unwrap_or(2))
            }
        }
    }
}

impl From<ExposureMapping> for MappingSpec {
    fn from(m: ExposureMapping) -> Self {
        let arms = (m.arms != 2).then_some(m.arms);
        if m.components.len() == 1 {
            MappingSpec::Single {
                component: (&m.components[0]).into(),
                arms,
            }
        } else {
            MappingSpec::Factorial {
                kind: FactorialTag::Factorial,
                components: m.components.iter().map(ComponentSpec::from).collect(),
                arms,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2)], false).unwrap().0
    }

    #[test]
    fn any_treated_neighbor_on_path() {
        let t = compute_exposures(
            &ExposureMapping::any_treated_neighbor(),
            &[1, 0, 0],
            &path3(),
        );
        assert_eq!(t.unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn factorial_direct_by_neighbor() {
        let g = Graph::from_edges(2, &[(0, 1)], false).unwrap().0;
        let m = ExposureMapping::factorial(vec![
            Component::new(ComponentKind::Direct),
            Component::new(ComponentKind::AnyTreatedNeighbor),
        ])
        .unwrap();
        let t = compute_exposures(&m, &[1, 0], &g).unwrap();
        assert_eq!(m.decode(t[0]), vec![1, 0]);
        assert_eq!(m.decode(t[1]), vec![0, 1]);
        assert_eq!(m.labels(), vec!["(0,0)", "(0,1)", "(1,0)", "(1,1)"]);
        assert_eq!(m.locality(), 1);
    }

    #[test]
    fn support_and_locality() {
        let (s, k) = exposure_support(&ExposureMapping::direct());
        assert_eq!((s, k), (vec![vec![0], vec![1]], 0));
        assert_eq!(ExposureMapping::friend_of_friend().locality(), 2);
    }

    #[test]
    fn friend_of_friend_skips_direct_links() {
        let t = compute_exposures(&ExposureMapping::friend_of_friend(), &[1, 0, 0], &path3());
        assert_eq!(t.unwrap(), vec![0, 0, 1]);
    }

    #[test]
    fn arm_filters_and_range_checks() {
        let m = ExposureMapping::with_arms(
            vec![Component::with_filter(
                ComponentKind::AnyTreatedNeighbor,
                vec![1],
            )],
            4,
        )
        .unwrap();
        let g = path3();
        assert_eq!(
            compute_exposures(&m, &[3, 2, 1], &g).unwrap(),
            vec![0, 1, 0]
        );
        assert!(matches!(
            compute_exposures(&ExposureMapping::direct(), &[0, 2, 0], &g),
            Err(Error::ArmOutOfRange {
                unit: 1,
                arm: 2,
                ..
            })
        ));
        assert!(ExposureMapping::with_arms(
            vec![Component::with_filter(ComponentKind::Direct, vec![5])],
            2
        )
        .is_err());
    }

    #[test]
    fn json_round_trip() {
        let js = r#"{"kind":"factorial","components":[{"kind":"direct"},
            {"kind":"any_treated_neighbor","arm_filter":{"treated":[1,3]}}],"arms":4}"#;
        let m: ExposureMapping = serde_json::from_str(js).unwrap();
        assert_eq!(m.components()[1].arm_filter.arms(), &[1, 3]);
        assert_eq!(m.arms(), 4);
        let back: ExposureMapping =
            serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let d: ExposureMapping = serde_json::from_str(r#"{"kind":"direct"}"#).unwrap();
        assert_eq!(d, ExposureMapping::direct());
        assert!(
            serde_json::from_str::<ExposureMapping>(r#"{"kind":"factorial","components":[]}"#)
                .is_err()
        );
    }
}
