//! Immutable knowledge graph with a semantic-group partition.
//!
//! Concepts, groups and relation labels are interned into dense indices
//! whose order matches the lexicographic order of their identifiers, so
//! iterating by index is iterating in identifier order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

pub const CONCEPTS_HEADER: &str = "id\tname\tgroup";
pub const RELATIONS_HEADER: &str = "src\trelation\tdst";

/// Separator between synonyms inside the `name` column.
pub const SYNONYM_SEPARATOR: char = '|';

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(String);

impl ConceptId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Group identifiers double as display names (`Disorders`, `Chemicals & Drugs`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SemanticGroupId(String);

impl SemanticGroupId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SemanticGroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConceptIdx(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupIdx(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelIdx(pub u32);

impl ConceptIdx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl GroupIdx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl LabelIdx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationEdge {
    pub src: ConceptIdx,
    pub label: LabelIdx,
    pub dst: ConceptIdx,
}

/// Collects concepts and triples by identifier, then interns them.
#[derive(Debug, Default)]
pub struct KgBuilder {
    concepts: BTreeMap<String, (String, String)>,
    edges: BTreeSet<(String, String, String)>,
}

impl KgBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_concept(&mut self, id: &str, name: &str, group: &str) -> Result<()> {
        if id.is_empty() || name.is_empty() || group.is_empty() {
            return Err(Error::Malformed("empty field".into()));
        }
        if self.concepts.contains_key(id) {
            return Err(Error::DuplicateConcept(id.to_string()));
        }
        self.concepts
            .insert(id.to_string(), (name.to_string(), group.to_string()));
        Ok(())
    }

    /// Duplicate triples are silently merged.
    pub fn add_edge(&mut self, src: &str, label: &str, dst: &str) -> Result<()> {
        if label.is_empty() {
            return Err(Error::Malformed("empty relation label".into()));
        }
        for id in [src, dst] {
            if !self.concepts.contains_key(id) {
                return Err(Error::UnknownConcept(id.to_string()));
            }
        }
        if src == dst {
            return Err(Error::SelfLoop(src.to_string()));
        }
        self.edges
            .insert((src.to_string(), label.to_string(), dst.to_string()));
        Ok(())
    }

    pub fn build(self) -> Result<KnowledgeGraph> {
        if self.concepts.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let group_names: BTreeSet<&str> = self.concepts.values().map(|(_, g)| g.as_str()).collect();
        if group_names.len() < 2 {
            return Err(Error::TooFewGroups(group_names.len()));
        }
        let groups: Vec<SemanticGroupId> = group_names
            .iter()
            .map(|g| SemanticGroupId(g.to_string()))
            .collect();
        let group_index: HashMap<String, GroupIdx> = groups
            .iter()
            .enumerate()
            .map(|(i, g)| (g.0.clone(), GroupIdx(i as u32)))
            .collect();

        let mut ids = Vec::with_capacity(self.concepts.len());
        let mut names = Vec::with_capacity(self.concepts.len());
        let mut raw_names = Vec::with_capacity(self.concepts.len());
        let mut lexicon_names = Vec::with_capacity(self.concepts.len());
        let mut concept_group = Vec::with_capacity(self.concepts.len());
        let mut members = vec![Vec::new(); groups.len()];
        let mut concept_index = HashMap::with_capacity(self.concepts.len());
        for (i, (id, (name, group))) in self.concepts.into_iter().enumerate() {
            let idx = ConceptIdx(i as u32);
            let g = group_index[&group];
            let mut variants: Vec<String> = name
                .split(SYNONYM_SEPARATOR)
                .map(text::normalize)
                .filter(|n| !n.is_empty())
                .collect();
            variants.dedup();
            let display = name
                .split(SYNONYM_SEPARATOR)
                .next()
                .unwrap_or(&name)
                .trim()
                .to_string();
            concept_index.insert(id.clone(), idx);
            ids.push(ConceptId(id));
            raw_names.push(name.clone());
            names.push(display);
            lexicon_names.push(variants);
            concept_group.push(g);
            members[g.index()].push(idx);
        }

        let mut lexicon: HashMap<String, ConceptIdx> = HashMap::new();
        let mut max_name_tokens = 0;
        for (i, variants) in lexicon_names.iter().enumerate() {
            for v in variants {
                max_name_tokens = max_name_tokens.max(v.split(' ').count());
                // concepts iterate in id order, so the first claimant is the smallest id
                lexicon.entry(v.clone()).or_insert(ConceptIdx(i as u32));
            }
        }

        let labels: Vec<String> = self
            .edges
            .iter()
            .map(|(_, l, _)| l.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let label_index: HashMap<&str, LabelIdx> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), LabelIdx(i as u32)))
            .collect();

        let mut edges: Vec<RelationEdge> = self
            .edges
            .iter()
            .map(|(s, l, d)| RelationEdge {
                src: concept_index[s],
                label: label_index[l.as_str()],
                dst: concept_index[d],
            })
            .collect();
        edges.sort();

        let mut adjacency = vec![Vec::new(); ids.len()];
        for e in &edges {
            adjacency[e.src.index()].push((e.label, e.dst));
        }
        for list in &mut adjacency {
            list.sort();
        }

        Ok(KnowledgeGraph {
            ids,
            names,
            raw_names,
            lexicon_names,
            lexicon,
            max_name_tokens,
            concept_group,
            concept_index,
            groups,
            group_index,
            members,
            labels,
            edges,
            adjacency,
        })
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    ids: Vec<ConceptId>,
    names: Vec<String>,
    raw_names: Vec<String>,
    lexicon_names: Vec<Vec<String>>,
    lexicon: HashMap<String, ConceptIdx>,
    max_name_tokens: usize,
    concept_group: Vec<GroupIdx>,
    concept_index: HashMap<String, ConceptIdx>,
    groups: Vec<SemanticGroupId>,
    group_index: HashMap<String, GroupIdx>,
    members: Vec<Vec<ConceptIdx>>,
    labels: Vec<String>,
    edges: Vec<RelationEdge>,
    adjacency: Vec<Vec<(LabelIdx, ConceptIdx)>>,
}

impl KnowledgeGraph {
    pub fn concept_count(&self) -> usize {
        self.ids.len()
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn concepts(&self) -> impl ExactSizeIterator<Item = ConceptIdx> {
        (0..self.ids.len() as u32).map(ConceptIdx)
    }

    pub fn groups(&self) -> impl ExactSizeIterator<Item = GroupIdx> {
        (0..self.groups.len() as u32).map(GroupIdx)
    }

    pub fn concept(&self, id: &str) -> Result<ConceptIdx> {
        self.concept_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownConcept(id.to_string()))
    }

    pub fn group(&self, id: &str) -> Result<GroupIdx> {
        self.group_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownGroup(id.to_string()))
    }

    pub fn id(&self, c: ConceptIdx) -> &ConceptId {
        &self.ids[c.index()]
    }

    /// Display name (first synonym, original casing).
    pub fn name(&self, c: ConceptIdx) -> &str {
        &self.names[c.index()]
    }

    /// Normalized name variants used by the linker.
    pub fn lexicon_names(&self, c: ConceptIdx) -> &[String] {
        &self.lexicon_names[c.index()]
    }

    /// Concept whose normalized name (or synonym) equals `normalized`;
    /// shared names resolve to the smallest concept id.
    pub fn lookup_name(&self, normalized: &str) -> Option<ConceptIdx> {
        self.lexicon.get(normalized).copied()
    }

    /// Longest concept name, in tokens.
    pub fn max_name_tokens(&self) -> usize {
        self.max_name_tokens
    }

    pub fn group_id(&self, g: GroupIdx) -> &SemanticGroupId {
        &self.groups[g.index()]
    }

    pub fn label(&self, l: LabelIdx) -> &str {
        &self.labels[l.index()]
    }

    pub fn group_of_idx(&self, c: ConceptIdx) -> GroupIdx {
        self.concept_group[c.index()]
    }

    pub fn members(&self, g: GroupIdx) -> &[ConceptIdx] {
        &self.members[g.index()]
    }

    pub fn edges(&self) -> &[RelationEdge] {
        &self.edges
    }

    /// Forward neighbors sorted by (label, concept id).
    pub fn out_edges(&self, c: ConceptIdx) -> &[(LabelIdx, ConceptIdx)] {
        &self.adjacency[c.index()]
    }

    pub fn neighbors_in_group_idx(
        &self,
        c: ConceptIdx,
        g: GroupIdx,
    ) -> impl Iterator<Item = (LabelIdx, ConceptIdx)> + '_ {
        self.adjacency[c.index()]
            .iter()
            .copied()
            .filter(move |&(_, n)| self.concept_group[n.index()] == g)
    }

    /// Forward neighbors of `c` that belong to group `k`, ordered by (label, id).
    pub fn neighbors_in_group(&self, c: &str, k: &str) -> Result<Vec<(&str, &ConceptId)>> {
        let c = self.concept(c)?;
        let g = self.group(k)?;
        Ok(self
            .neighbors_in_group_idx(c, g)
            .map(|(l, n)| (self.label(l), self.id(n)))
            .collect())
    }

    pub fn concepts_in_group(&self, k: &str) -> Result<Vec<&ConceptId>> {
        let g = self.group(k)?;
        Ok(self.members(g).iter().map(|&c| self.id(c)).collect())
    }

    pub fn group_of(&self, c: &str) -> Result<&SemanticGroupId> {
        let c = self.concept(c)?;
        Ok(self.group_id(self.group_of_idx(c)))
    }

    pub fn write_tsv(&self, concepts: &Path, relations: &Path) -> Result<()> {
        let mut out = String::from(CONCEPTS_HEADER);
        out.push('\n');
        for c in self.concepts() {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                self.id(c),
                self.raw_names[c.index()],
                self.group_id(self.group_of_idx(c))
            ));
        }
        write_file(concepts, &out)?;

        let mut out = String::from(RELATIONS_HEADER);
        out.push('\n');
        for e in &self.edges {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                self.id(e.src),
                self.label(e.label),
                self.id(e.dst)
            ));
        }
        write_file(relations, &out)
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn split_fields(line: &str, expected: usize) -> Result<Vec<&str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != expected {
        return Err(Error::Malformed(format!(
            "expected {expected} tab-separated fields, found {}",
            fields.len()
        )));
    }
    Ok(fields)
}

fn check_header(path: &Path, line: Option<&str>, expected: &str) -> Result<()> {
    match line {
        Some(h) if h.trim_end_matches('\r') == expected => Ok(()),
        Some(h) => Err(Error::at(
            path,
            1,
            Error::Malformed(format!("expected header `{}`, found `{}`", expected.escape_default(), h.escape_default())),
        )),
        None => Err(Error::at(path, 1, Error::Malformed("missing header".into()))),
    }
}

/// Loads `concepts.tsv` and `relations.tsv`. Errors carry the offending line.
pub fn load_kg(concepts_path: &Path, relations_path: &Path) -> Result<KnowledgeGraph> {
    let mut builder = KgBuilder::new();

    let text = read_file(concepts_path)?;
    let mut lines = text.lines();
    check_header(concepts_path, lines.next(), CONCEPTS_HEADER)?;
    for (i, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let n = i + 2;
        let f = split_fields(line, 3).map_err(|e| Error::at(concepts_path, n, e))?;
        builder
            .add_concept(f[0], f[1], f[2])
            .map_err(|e| Error::at(concepts_path, n, e))?;
    }

    let text = read_file(relations_path)?;
    let mut lines = text.lines();
    check_header(relations_path, lines.next(), RELATIONS_HEADER)?;
    for (i, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let n = i + 2;
        let f = split_fields(line, 3).map_err(|e| Error::at(relations_path, n, e))?;
        builder
            .add_edge(f[0], f[1], f[2])
            .map_err(|e| Error::at(relations_path, n, e))?;
    }

    builder.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> KnowledgeGraph {
        let mut b = KgBuilder::new();
        b.add_concept("C1", "chest pain", "Disorders").unwrap();
        b.add_concept("C2", "aspirin", "Chemicals & Drugs").unwrap();
        b.add_concept("C3", "cough", "Disorders").unwrap();
        b.add_concept("C4", "fever", "Disorders").unwrap();
        b.add_concept("C5", "lung", "Anatomy").unwrap();
        b.add_edge("C1", "may cause", "C4").unwrap();
        b.add_edge("C1", "associated with", "C3").unwrap();
        b.add_edge("C1", "finding site of", "C5").unwrap();
        b.add_edge("C1", "associated with", "C3").unwrap();
        b.build().unwrap()
    }

    #[test]
    fn neighbors_filtered_by_group_and_sorted() {
        let kg = fixture();
        let n = kg.neighbors_in_group("C1", "Disorders").unwrap();
        let got: Vec<(&str, &str)> = n.iter().map(|(l, c)| (*l, c.as_str())).collect();
        assert_eq!(got, vec![("associated with", "C3"), ("may cause", "C4")]);
        assert!(kg.neighbors_in_group("C2", "Disorders").unwrap().is_empty());
        assert!(matches!(
            kg.neighbors_in_group("nope", "Disorders"),
            Err(Error::UnknownConcept(_))
        ));
    }

    #[test]
    fn duplicate_triples_are_merged() {
        assert_eq!(fixture().edge_count(), 3);
    }

    #[test]
    fn group_lookup_is_partition() {
        let kg = fixture();
        assert_eq!(kg.group_count(), 3);
        for c in kg.concepts() {
            let g = kg.group_of(kg.id(c).as_str()).unwrap();
            let members = kg.concepts_in_group(g.as_str()).unwrap();
            assert!(members.contains(&kg.id(c)));
        }
        assert!(kg.group_of("C9").is_err());
        assert!(kg.concepts_in_group("Nope").is_err());
    }

    #[test]
    fn builder_rejects_bad_input() {
        let mut b = KgBuilder::new();
        b.add_concept("A", "a", "G1").unwrap();
        assert!(matches!(b.add_concept("A", "b", "G1"), Err(Error::DuplicateConcept(_))));
        assert!(matches!(b.add_edge("A", "r", "X9"), Err(Error::UnknownConcept(id)) if id == "X9"));
        assert!(matches!(b.add_edge("A", "r", "A"), Err(Error::SelfLoop(_))));
        assert!(matches!(b.build(), Err(Error::TooFewGroups(1))));
        assert!(matches!(KgBuilder::new().build(), Err(Error::EmptyGraph)));
    }

    #[test]
    fn synonyms_normalized() {
        let mut b = KgBuilder::new();
        b.add_concept("A", "Heart Attack|Myocardial infarction", "Disorders").unwrap();
        b.add_concept("B", "x", "Anatomy").unwrap();
        let kg = b.build().unwrap();
        let a = kg.concept("A").unwrap();
        assert_eq!(kg.name(a), "Heart Attack");
        assert_eq!(kg.lexicon_names(a), ["heart attack", "myocardial infarction"]);
    }
}
