//! Rollout state and the concept-level path extension rules.
//!
//! One group trajectory drives every path of a rollout. A step either
//! stays in the current group or leaps to another one; a leap first
//! attaches a connection concept to each live path (`connect`), then every
//! live path takes one relation hop inside the current group (`retrieve`).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::embeddings::{avg_embedding, cosine, EmbeddingTable, GroupVectors};
use crate::error::{Error, Result};
use crate::kg::{ConceptIdx, GroupIdx, KnowledgeGraph, LabelIdx};
use crate::linker::{initial_group, scarce_group, KeywordSet};

/// Label rendered for a leap step.
pub const GROUP_LEAP: &str = "group leap";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepLabel {
    Relation(LabelIdx),
    GroupLeap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PathStep {
    /// `None` only for the origin.
    pub label: Option<StepLabel>,
    pub concept: ConceptIdx,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReasoningPath {
    steps: Vec<PathStep>,
}

impl ReasoningPath {
    pub fn new(origin: ConceptIdx) -> Self {
        Self {
            steps: vec![PathStep {
                label: None,
                concept: origin,
            }],
        }
    }

    pub fn origin(&self) -> ConceptIdx {
        self.steps[0].concept
    }

    pub fn steps(&self) -> &[PathStep] {
        &self.steps
    }

    pub fn tail(&self) -> ConceptIdx {
        self.steps[self.steps.len() - 1].concept
    }

    pub fn concepts(&self) -> impl Iterator<Item = ConceptIdx> + '_ {
        self.steps.iter().map(|s| s.concept)
    }

    pub fn distinct_concepts(&self) -> BTreeSet<ConceptIdx> {
        self.concepts().collect()
    }

    /// Mean embedding over the path's distinct concepts.
    pub fn average(&self, table: &EmbeddingTable) -> Vec<f64> {
        avg_embedding(table, self.distinct_concepts()).expect("paths are never empty")
    }

    pub fn push(&mut self, label: StepLabel, concept: ConceptIdx) {
        self.steps.push(PathStep {
            label: Some(label),
            concept,
        });
    }

    pub fn to_dump(&self, kg: &KnowledgeGraph) -> PathDump {
        PathDump {
            patient: None,
            origin: kg.id(self.origin()).to_string(),
            steps: self.steps[1..]
                .iter()
                .map(|s| DumpStep {
                    label: match s.label {
                        Some(StepLabel::Relation(l)) => kg.label(l).to_string(),
                        _ => GROUP_LEAP.to_string(),
                    },
                    concept: kg.id(s.concept).to_string(),
                })
                .collect(),
        }
    }
}

/// Path dump line: `{"origin": id, "steps": [{"label", "concept"}, ...]}`.
/// The origin is not repeated inside `steps`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathDump {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient: Option<String>,
    pub origin: String,
    pub steps: Vec<DumpStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpStep {
    pub label: String,
    pub concept: String,
}

/// Per-patient quantities that stay fixed across rollouts.
#[derive(Debug, Clone)]
pub struct QueryContext {
    pub keywords: KeywordSet,
    pub initial_group: GroupIdx,
    pub scarce_group: GroupIdx,
    /// Average embedding of every keyword.
    pub keyword_avg: Vec<f64>,
}

impl QueryContext {
    pub fn new(keywords: KeywordSet, kg: &KnowledgeGraph, table: &EmbeddingTable) -> Result<Self> {
        let initial_group = initial_group(&keywords)?;
        let scarce_group = scarce_group(&keywords, kg);
        let keyword_avg = avg_embedding(table, keywords.concepts())?;
        Ok(Self {
            keywords,
            initial_group,
            scarce_group,
            keyword_avg,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutState {
    t: usize,
    horizon: usize,
    current: GroupIdx,
    previous: GroupIdx,
    scarce: GroupIdx,
    explored: BTreeSet<ConceptIdx>,
    keywords: Vec<ConceptIdx>,
    paths: Vec<ReasoningPath>,
    frozen: Vec<bool>,
}

/// What a single environment step did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub requested: GroupIdx,
    /// False when the requested group differed but offered no connection
    /// point, so the step degraded to a stay.
    pub leapt: bool,
    pub leaps: Vec<Option<ConceptIdx>>,
    pub retrieved: Vec<Option<ConceptIdx>>,
}

/// Seeds one path per keyword lying in `initial`.
pub fn init_rollout(
    ks: &KeywordSet,
    kg: &KnowledgeGraph,
    initial: GroupIdx,
    scarce: GroupIdx,
    horizon: usize,
) -> Result<RolloutState> {
    let paths: Vec<ReasoningPath> = ks
        .concepts()
        .filter(|&c| kg.group_of_idx(c) == initial)
        .map(ReasoningPath::new)
        .collect();
    if paths.is_empty() {
        return Err(Error::NoInitialKeywords);
    }
    let explored = paths.iter().map(ReasoningPath::origin).collect();
    Ok(RolloutState {
        t: 0,
        horizon,
        current: initial,
        previous: initial,
        scarce,
        explored,
        keywords: ks.concepts().collect(),
        frozen: vec![false; paths.len()],
        paths,
    })
}

impl RolloutState {
    pub fn from_context(ctx: &QueryContext, kg: &KnowledgeGraph, horizon: usize) -> Result<Self> {
        init_rollout(&ctx.keywords, kg, ctx.initial_group, ctx.scarce_group, horizon)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_finished(&self) -> bool {
        self.t >= self.horizon
    }

    /// Most recently visited group.
    pub fn current_group(&self) -> GroupIdx {
        self.current
    }

    /// Group visited before `current_group`.
    pub fn previous_group(&self) -> GroupIdx {
        self.previous
    }

    pub fn scarce_group(&self) -> GroupIdx {
        self.scarce
    }

    pub fn explored(&self) -> &BTreeSet<ConceptIdx> {
        &self.explored
    }

    pub fn paths(&self) -> &[ReasoningPath] {
        &self.paths
    }

    pub fn into_paths(self) -> Vec<ReasoningPath> {
        self.paths
    }

    pub fn is_frozen(&self, path: usize) -> bool {
        self.frozen[path]
    }
}

/// `[k_current ‖ k_scarce]`, length 4d.
pub fn group_state(rs: &RolloutState, gv: &GroupVectors) -> Vec<f64> {
    let mut s = Vec::with_capacity(2 * gv.width());
    s.extend_from_slice(gv.get(rs.current));
    s.extend_from_slice(gv.get(rs.scarce));
    s
}

/// Mean embedding of the explored concepts, before the learned projection.
pub fn raw_concept_avg(rs: &RolloutState, table: &EmbeddingTable) -> Result<Vec<f64>> {
    avg_embedding(table, rs.explored.iter().copied())
}

/// One row per group, in group order: `[k_current ‖ k_candidate]`.
pub fn action_matrix(rs: &RolloutState, gv: &GroupVectors) -> Vec<Vec<f64>> {
    let from = gv.get(rs.current);
    (0..gv.len() as u32)
        .map(|g| {
            let mut row = Vec::with_capacity(2 * gv.width());
            row.extend_from_slice(from);
            row.extend_from_slice(gv.get(GroupIdx(g)));
            row
        })
        .collect()
}

/// Concepts of `target` already on some path, plus keywords of `target`
/// not yet on any path.
pub fn leap_candidates(rs: &RolloutState, kg: &KnowledgeGraph, target: GroupIdx) -> BTreeSet<ConceptIdx> {
    rs.explored
        .iter()
        .chain(rs.keywords.iter())
        .copied()
        .filter(|&c| kg.group_of_idx(c) == target)
        .collect()
}

fn best_by<F>(candidates: impl Iterator<Item = ConceptIdx>, mut score: F) -> Option<ConceptIdx>
where
    F: FnMut(ConceptIdx) -> f64,
{
    let mut best: Option<(ConceptIdx, f64)> = None;
    for c in candidates {
        let s = score(c);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best.map(|(c, _)| c)
}

/// Attaches a connection concept from `target` to every live path: the
/// candidate most cosine-similar to that path's average embedding, ties to
/// the smallest id. Returns the chosen concept per path. Does not change
/// the rollout's group; see [`step`].
pub fn connect(
    rs: &mut RolloutState,
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    target: GroupIdx,
) -> Vec<Option<ConceptIdx>> {
    let candidates = leap_candidates(rs, kg, target);
    let mut chosen = vec![None; rs.paths.len()];
    if candidates.is_empty() {
        return chosen;
    }
    for (i, path) in rs.paths.iter_mut().enumerate() {
        if rs.frozen[i] {
            continue;
        }
        let avg = path.average(table);
        let leap = best_by(candidates.iter().copied(), |c| cosine(table.vector(c), &avg))
            .expect("candidate set is non-empty");
        path.push(StepLabel::GroupLeap, leap);
        rs.explored.insert(leap);
        chosen[i] = Some(leap);
    }
    chosen
}

/// Extends every live path by one relation hop inside the current group,
/// picking the neighbor maximizing the mean of its cosine with the keyword
/// average and with the path average. Ties go to the smallest (label, id).
/// A path whose tail has no neighbor in the group is frozen.
pub fn retrieve(
    rs: &mut RolloutState,
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    keyword_avg: &[f64],
) -> Vec<Option<ConceptIdx>> {
    let group = rs.current;
    let mut chosen = vec![None; rs.paths.len()];
    for (i, path) in rs.paths.iter_mut().enumerate() {
        if rs.frozen[i] {
            continue;
        }
        let avg = path.average(table);
        let mut best: Option<(LabelIdx, ConceptIdx, f64)> = None;
        for (label, c) in kg.neighbors_in_group_idx(path.tail(), group) {
            let v = table.vector(c);
            let s = 0.5 * (cosine(v, keyword_avg) + cosine(v, &avg));
            if best.is_none_or(|(_, _, b)| s > b) {
                best = Some((label, c, s));
            }
        }
        match best {
            Some((label, c, _)) => {
                path.push(StepLabel::Relation(label), c);
                rs.explored.insert(c);
                chosen[i] = Some(c);
            }
            None => rs.frozen[i] = true,
        }
    }
    chosen
}

/// Advances the rollout by one group action.
pub fn step(
    rs: &mut RolloutState,
    action: GroupIdx,
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    keyword_avg: &[f64],
) -> Result<StepOutcome> {
    if rs.is_finished() {
        return Err(Error::RolloutFinished(rs.horizon));
    }
    if action.index() >= kg.group_count() {
        return Err(Error::UnknownGroup(format!("#{}", action.0)));
    }
    let mut leaps = vec![None; rs.paths.len()];
    let mut leapt = false;
    if action != rs.current && !leap_candidates(rs, kg, action).is_empty() {
        leaps = connect(rs, kg, table, action);
        leapt = true;
    }
    rs.previous = rs.current;
    if leapt {
        rs.current = action;
    }
    let retrieved = retrieve(rs, kg, table, keyword_avg);
    rs.t += 1;
    Ok(StepOutcome {
        requested: action,
        leapt,
        leaps,
        retrieved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KgBuilder;

    /// Groups A (a1..a3), B (b1, b2), C (c1). Embeddings in 2d.
    fn fixture() -> (KnowledgeGraph, EmbeddingTable) {
        let mut b = KgBuilder::new();
        for (id, g) in [("a1", "A"), ("a2", "A"), ("a3", "A"), ("b1", "B"), ("b2", "B"), ("c1", "C")] {
            b.add_concept(id, id, g).unwrap();
        }
        b.add_edge("a1", "r", "a2").unwrap();
        b.add_edge("a2", "r", "a3").unwrap();
        b.add_edge("a3", "r", "a1").unwrap();
        b.add_edge("b1", "s", "b2").unwrap();
        b.add_edge("a1", "x", "b1").unwrap();
        let kg = b.build().unwrap();
        let rows = vec![
            vec![1.0, 0.0],
            vec![0.9, 0.1],
            vec![0.8, 0.3],
            vec![0.2, 1.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.2],
        ];
        let t = EmbeddingTable::from_rows(&kg, rows).unwrap();
        (kg, t)
    }

    fn ctx(kg: &KnowledgeGraph, t: &EmbeddingTable, ids: &[&str]) -> QueryContext {
        let cs: Vec<_> = ids.iter().map(|i| kg.concept(i).unwrap()).collect();
        QueryContext::new(KeywordSet::from_concepts(kg, &cs), kg, t).unwrap()
    }

    #[test]
    fn init_seeds_initial_group_keywords() {
        let (kg, t) = fixture();
        let q = ctx(&kg, &t, &["a1", "a2", "b1"]);
        let rs = RolloutState::from_context(&q, &kg, 5).unwrap();
        assert_eq!(rs.paths().len(), 2);
        assert_eq!(rs.explored().len(), 2);
        assert_eq!(rs.current_group(), q.initial_group);
        assert_eq!(rs.previous_group(), q.initial_group);
        assert_eq!(rs.t(), 0);

        let ks = KeywordSet::from_concepts(&kg, &[kg.concept("b1").unwrap()]);
        assert!(matches!(
            init_rollout(&ks, &kg, GroupIdx(0), GroupIdx(2), 5),
            Err(Error::NoInitialKeywords)
        ));
    }

    #[test]
    fn stay_adds_no_leap() {
        let (kg, t) = fixture();
        let q = ctx(&kg, &t, &["a1"]);
        let mut rs = RolloutState::from_context(&q, &kg, 3).unwrap();
        let out = step(&mut rs, GroupIdx(0), &kg, &t, &q.keyword_avg).unwrap();
        assert!(!out.leapt);
        let p = &rs.paths()[0];
        assert_eq!(p.steps().len(), 2);
        assert!(p.steps().iter().all(|s| s.label != Some(StepLabel::GroupLeap)));
        assert_eq!(kg.id(p.tail()).as_str(), "a2");
    }

    #[test]
    fn leap_then_retrieve_grows_by_two() {
        let (kg, t) = fixture();
        let q = ctx(&kg, &t, &["a1", "a2", "b1"]);
        let mut rs = RolloutState::from_context(&q, &kg, 3).unwrap();
        let out = step(&mut rs, GroupIdx(1), &kg, &t, &q.keyword_avg).unwrap();
        assert!(out.leapt);
        assert_eq!(rs.current_group(), GroupIdx(1));
        assert_eq!(rs.previous_group(), GroupIdx(0));
        for p in rs.paths() {
            assert_eq!(p.steps().len(), 3);
            assert_eq!(p.steps()[1].label, Some(StepLabel::GroupLeap));
            assert_eq!(kg.id(p.steps()[1].concept).as_str(), "b1");
            assert_eq!(kg.id(p.tail()).as_str(), "b2");
        }
        assert_eq!(rs.explored().len(), 4);
    }

    #[test]
    fn empty_candidates_degrade_to_stay() {
        let (kg, t) = fixture();
        let q = ctx(&kg, &t, &["a1"]);
        let mut rs = RolloutState::from_context(&q, &kg, 3).unwrap();
        let out = step(&mut rs, GroupIdx(2), &kg, &t, &q.keyword_avg).unwrap();
        assert!(!out.leapt);
        assert_eq!(rs.current_group(), GroupIdx(0));
        assert_eq!(rs.paths()[0].steps().len(), 2);
    }

    #[test]
    fn dead_end_freezes_path() {
        let (kg, t) = fixture();
        let q = ctx(&kg, &t, &["a1", "b2"]);
        let mut rs = RolloutState::from_context(&q, &kg, 3).unwrap();
        step(&mut rs, GroupIdx(1), &kg, &t, &q.keyword_avg).unwrap();
        // leap to b2 (only candidate), b2 has no out-edges
        assert!(rs.is_frozen(0));
        let before = rs.paths()[0].clone();
        step(&mut rs, GroupIdx(0), &kg, &t, &q.keyword_avg).unwrap();
        step(&mut rs, GroupIdx(1), &kg, &t, &q.keyword_avg).unwrap();
        assert_eq!(rs.paths()[0], before);
        assert!(matches!(
            step(&mut rs, GroupIdx(1), &kg, &t, &q.keyword_avg),
            Err(Error::RolloutFinished(3))
        ));
    }

    #[test]
    fn state_vectors() {
        let (kg, t) = fixture();
        let gv = GroupVectors::build(&kg, &t).unwrap();
        let q = ctx(&kg, &t, &["a1", "a2"]);
        let rs = RolloutState::from_context(&q, &kg, 3).unwrap();
        let s = group_state(&rs, &gv);
        assert_eq!(s.len(), 4 * t.dim());
        assert_eq!(&s[..4], gv.get(GroupIdx(0)));
        assert_eq!(&s[4..], gv.get(q.scarce_group));
        let rows = action_matrix(&rs, &gv);
        assert_eq!(rows.len(), kg.group_count());
        assert_eq!(&rows[2][4..], gv.get(GroupIdx(2)));
        let avg = raw_concept_avg(&rs, &t).unwrap();
        let expected = avg_embedding(&t, [kg.concept("a1").unwrap(), kg.concept("a2").unwrap()]).unwrap();
        assert_eq!(avg, expected);
    }

    #[test]
    fn dump_format() {
        let (kg, t) = fixture();
        let q = ctx(&kg, &t, &["a1", "b1"]);
        let mut rs = RolloutState::from_context(&q, &kg, 2).unwrap();
        step(&mut rs, GroupIdx(1), &kg, &t, &q.keyword_avg).unwrap();
        let dump = rs.paths()[0].to_dump(&kg);
        assert_eq!(
            serde_json::to_string(&dump).unwrap(),
            r#"{"origin":"a1","steps":[{"label":"group leap","concept":"b1"},{"label":"s","concept":"b2"}]}"#
        );
    }
}
