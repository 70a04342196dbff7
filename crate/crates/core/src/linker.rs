//! Lexicon-based concept linking and keyword group statistics.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{ConceptIdx, GroupIdx, KnowledgeGraph};
use crate::text;

/// One line of the patient corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientInput {
    pub id: String,
    pub pre_admission: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

pub fn read_corpus(path: &Path) -> Result<Vec<PatientInput>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PatientInput =
            serde_json::from_str(&line).map_err(|e| Error::at(path, i + 1, e.into()))?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// A linked concept and the token span `[start, end)` it matched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keyword {
    pub concept: ConceptIdx,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordSet {
    keywords: Vec<Keyword>,
    histogram: Vec<usize>,
}

impl KeywordSet {
    pub fn keywords(&self) -> &[Keyword] {
        &self.keywords
    }

    pub fn concepts(&self) -> impl Iterator<Item = ConceptIdx> + '_ {
        self.keywords.iter().map(|k| k.concept)
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    /// Keyword count per group, indexed by group.
    pub fn histogram(&self) -> &[usize] {
        &self.histogram
    }

    /// Builds a set from concept indices directly (first occurrence wins).
    pub fn from_concepts(kg: &KnowledgeGraph, concepts: &[ConceptIdx]) -> Self {
        let mut set = Self {
            keywords: Vec::new(),
            histogram: vec![0; kg.group_count()],
        };
        for (i, &c) in concepts.iter().enumerate() {
            set.push(kg, c, i, i + 1, kg.name(c).to_string());
        }
        set
    }

    fn push(&mut self, kg: &KnowledgeGraph, c: ConceptIdx, start: usize, end: usize, surface: String) {
        if self.keywords.iter().any(|k| k.concept == c) {
            return;
        }
        self.histogram[kg.group_of_idx(c).index()] += 1;
        self.keywords.push(Keyword {
            concept: c,
            start,
            end,
            surface,
        });
    }
}

/// Greedy left-to-right longest match of normalized concept names over the
/// normalized token stream. Matches never overlap; a concept matched twice
/// is recorded once, at its first span.
pub fn link_concepts(text: &str, kg: &KnowledgeGraph) -> KeywordSet {
    let tokens = text::tokens(text);
    let mut set = KeywordSet {
        keywords: Vec::new(),
        histogram: vec![0; kg.group_count()],
    };
    let max = kg.max_name_tokens();
    let mut i = 0;
    while i < tokens.len() {
        let longest = (1..=max.min(tokens.len() - i)).rev().find_map(|len| {
            let candidate = tokens[i..i + len].join(" ");
            kg.lookup_name(&candidate).map(|c| (len, c, candidate))
        });
        match longest {
            Some((len, c, surface)) => {
                set.push(kg, c, i, i + len, surface);
                i += len;
            }
            None => i += 1,
        }
    }
    set
}

/// Group holding the most keywords; ties go to the smallest group id.
pub fn initial_group(ks: &KeywordSet) -> Result<GroupIdx> {
    if ks.is_empty() {
        return Err(Error::Empty("keyword set"));
    }
    let mut best = 0;
    for (g, &n) in ks.histogram.iter().enumerate() {
        if n > ks.histogram[best] {
            best = g;
        }
    }
    Ok(GroupIdx(best as u32))
}

/// Group holding the fewest keywords, zero counts included; ties go to the
/// smallest group id.
pub fn scarce_group(ks: &KeywordSet, kg: &KnowledgeGraph) -> GroupIdx {
    let hist = &ks.histogram;
    debug_assert_eq!(hist.len(), kg.group_count());
    let mut best = 0;
    for (g, &n) in hist.iter().enumerate() {
        if n < hist[best] {
            best = g;
        }
    }
    GroupIdx(best as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KgBuilder;

    fn kg() -> KnowledgeGraph {
        let mut b = KgBuilder::new();
        b.add_concept("D1", "chest pain", "A").unwrap();
        b.add_concept("D2", "exertional chest pain", "A").unwrap();
        b.add_concept("D3", "aspirin", "B").unwrap();
        b.add_concept("D4", "cough", "C").unwrap();
        b.add_concept("D5", "pain", "A").unwrap();
        b.build().unwrap()
    }

    #[test]
    fn single_match() {
        let kg = kg();
        let ks = link_concepts("Patient reports chest pain today.", &kg);
        let ids: Vec<&str> = ks.concepts().map(|c| kg.id(c).as_str()).collect();
        assert_eq!(ids, ["D1"]);
        assert_eq!(ks.keywords()[0].start, 2);
        assert_eq!(ks.keywords()[0].end, 4);
    }

    #[test]
    fn longest_match_wins() {
        let kg = kg();
        let ks = link_concepts("Exertional chest-pain; then PAIN and aspirin, aspirin.", &kg);
        let ids: Vec<&str> = ks.concepts().map(|c| kg.id(c).as_str()).collect();
        assert_eq!(ids, ["D2", "D5", "D3"]);
        assert_eq!(ks.histogram(), [2, 1, 0]);
        assert!(link_concepts("", &kg).is_empty());
    }

    #[test]
    fn group_statistics() {
        let kg = kg();
        let c = |id| kg.concept(id).unwrap();
        let ks = KeywordSet::from_concepts(&kg, &[c("D1"), c("D2"), c("D5"), c("D3")]);
        assert_eq!(initial_group(&ks).unwrap(), GroupIdx(0));
        assert_eq!(scarce_group(&ks, &kg), GroupIdx(2));

        // tie between A and B on the max, and between B and C on the min
        let ks = KeywordSet::from_concepts(&kg, &[c("D3"), c("D1")]);
        assert_eq!(initial_group(&ks).unwrap(), GroupIdx(0));
        assert_eq!(scarce_group(&ks, &kg), GroupIdx(2));
        let ks = KeywordSet::from_concepts(&kg, &[c("D4"), c("D3")]);
        assert_eq!(scarce_group(&ks, &kg), GroupIdx(0));

        let empty = KeywordSet::from_concepts(&kg, &[]);
        assert!(initial_group(&empty).is_err());
        assert_eq!(scarce_group(&empty, &kg), GroupIdx(0));
    }

    #[test]
    fn corpus_line_format() {
        let p: PatientInput =
            serde_json::from_str(r#"{"id":"p1","pre_admission":"cough"}"#).unwrap();
        assert_eq!(p.reference, None);
        assert_eq!(serde_json::to_string(&p).unwrap(), r#"{"id":"p1","pre_admission":"cough"}"#);
    }
}
