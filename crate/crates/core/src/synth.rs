//! Seeded synthetic knowledge graphs and patient corpora with an
//! information-gap structure: pre-admission keywords cluster in one
//! dominant group while reference texts also mention concepts of two fixed
//! gap groups (Disorders and Chemicals & Drugs under the default names).

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{pseudo_embeddings, EmbeddingTable};
use crate::error::{Error, Result};
use crate::kg::{ConceptIdx, GroupIdx, KgBuilder, KnowledgeGraph};
use crate::linker::{write_jsonl, PatientInput};
use crate::text;

pub const GROUP_NAMES: [&str; 15] = [
    "Activities & Behaviors",
    "Anatomy",
    "Chemicals & Drugs",
    "Concepts & Ideas",
    "Devices",
    "Disorders",
    "Genes & Molecular Sequences",
    "Geographic Areas",
    "Living Beings",
    "Objects",
    "Occupations",
    "Organizations",
    "Phenomena",
    "Physiology",
    "Procedures",
];

pub const RELATION_LABELS: [&str; 8] = [
    "associated with",
    "causes",
    "treats",
    "located in",
    "part of",
    "may prevent",
    "diagnosed by",
    "interacts with",
];

/// Gap groups per dominant group.
pub const GAP_GROUPS: usize = 2;

const PRE_TEMPLATES: [&str; 6] = [
    "Patient presents with {}.",
    "History is notable for {}.",
    "Reports worsening {} over several days.",
    "Chief complaint recorded as {}.",
    "Known allergy noted to {}.",
    "Family mentions prior {}.",
];

const REF_TEMPLATES: [&str; 6] = [
    "Continue monitoring {} at home.",
    "Follow up regarding {} with your physician.",
    "Return promptly if {} recurs.",
    "Your care team addressed {} during admission.",
    "Discuss {} at the next clinic visit.",
    "Keep a written record of {} changes.",
];

const ONSETS: [&str; 18] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "pr", "tr",
];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
const CODAS: [&str; 6] = ["", "n", "r", "l", "s", "x"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub groups: usize,
    pub concepts_per_group: usize,
    pub p_intra: f64,
    pub p_cross: f64,
    pub patients: usize,
    /// Keywords drawn from the dominant group. Every patient additionally
    /// gets one keyword per gap group and one distractor keyword.
    pub keywords_per_patient: usize,
    pub truth_per_patient: usize,
    /// Fraction of ground-truth concepts placed in the gap groups.
    pub skew: f64,
    /// Hop budget for ground-truth placement.
    pub horizon: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            groups: 15,
            concepts_per_group: 50,
            p_intra: 0.04,
            p_cross: 0.002,
            patients: 200,
            keywords_per_patient: 4,
            truth_per_patient: 6,
            skew: 0.8,
            horizon: 5,
            dim: 32,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Checks the fields the graph generator reads.
    pub fn validate_graph(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.groups < 2 {
            return bad("need at least 2 groups");
        }
        if self.concepts_per_group < 2 {
            return bad("need at least 2 concepts per group");
        }
        for (name, p) in [("p_intra", self.p_intra), ("p_cross", self.p_cross), ("skew", self.skew)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_graph()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.keywords_per_patient == 0 || self.keywords_per_patient > self.concepts_per_group {
            return bad("keywords_per_patient must be in 1..=concepts_per_group");
        }
        Ok(())
    }

    pub fn group_name(&self, g: usize) -> String {
        match GROUP_NAMES.get(g) {
            Some(n) if self.groups <= GROUP_NAMES.len() => n.to_string(),
            _ => format!("Group {:02}", g + 1),
        }
    }

    /// Number of ground-truth concepts placed outside the dominant group.
    pub fn gap_truth(&self) -> usize {
        (self.skew * self.truth_per_patient as f64).round() as usize
    }
}

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn template_vocabulary() -> HashSet<String> {
    PRE_TEMPLATES
        .iter()
        .chain(REF_TEMPLATES.iter())
        .flat_map(|t| text::tokens(t))
        .collect()
}

fn pronounceable(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(ONSETS.choose(rng).unwrap());
        s.push_str(VOWELS.choose(rng).unwrap());
    }
    s.push_str(CODAS.choose(rng).unwrap());
    s
}

pub fn concept_id(spec: &SynthSpec, g: usize, i: usize) -> String {
    format!("S{:06}", g * spec.concepts_per_group + i)
}

/// Concepts with unique single-token names, intra-group edges with a
/// forced bidirectional spanning tree, and sparse cross-group edges.
pub fn gen_kg(spec: &SynthSpec) -> Result<KnowledgeGraph> {
    spec.validate_graph()?;
    let mut rng = derived_rng(spec.seed, 1);
    let reserved = template_vocabulary();
    let mut taken: HashSet<String> = HashSet::new();
    let mut b = KgBuilder::new();
    let n = spec.concepts_per_group;
    for g in 0..spec.groups {
        let group = spec.group_name(g);
        for i in 0..n {
            let name = loop {
                let cand = pronounceable(&mut rng);
                if !reserved.contains(&cand) && !text::is_stopword(&cand) && taken.insert(cand.clone()) {
                    break cand;
                }
            };
            b.add_concept(&concept_id(spec, g, i), &name, &group)?;
        }
    }
    let label = |rng: &mut ChaCha8Rng| *RELATION_LABELS.choose(rng).unwrap();
    let mut present: HashSet<(usize, usize)> = HashSet::new();
    for g in 0..spec.groups {
        let base = g * n;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut tree: HashSet<(usize, usize)> = HashSet::new();
        for k in 1..n {
            let parent = order[rng.random_range(0..k)];
            tree.insert((base + order[k], base + parent));
            tree.insert((base + parent, base + order[k]));
        }
        for u in 0..n {
            for v in 0..n {
                if u == v {
                    continue;
                }
                let pair = (base + u, base + v);
                let coin = rng.random_bool(spec.p_intra);
                if coin || tree.contains(&pair) {
                    present.insert(pair);
                }
            }
        }
    }
    let total = spec.groups * n;
    for u in 0..total {
        for v in 0..total {
            if u / n != v / n && rng.random_bool(spec.p_cross) {
                present.insert((u, v));
            }
        }
    }
    let mut pairs: Vec<_> = present.into_iter().collect();
    pairs.sort_unstable();
    for (u, v) in pairs {
        let l = label(&mut rng);
        b.add_edge(
            &concept_id(spec, u / n, u % n),
            l,
            &concept_id(spec, v / n, v % n),
        )?;
    }
    b.build()
}

/// Groups preferred as gap groups, by name.
pub const GAP_GROUP_NAMES: [&str; GAP_GROUPS] = ["Disorders", "Chemicals & Drugs"];

/// Group indices that reference texts reach into but pre-admission texts
/// barely touch: the named preferences when the spec has them, otherwise
/// the highest-numbered groups.
pub fn gap_groups(spec: &SynthSpec) -> Vec<usize> {
    let mut gaps: Vec<usize> = GAP_GROUP_NAMES
        .iter()
        .filter_map(|name| (0..spec.groups).find(|&g| spec.group_name(g) == *name))
        .collect();
    for g in (0..spec.groups).rev() {
        if gaps.len() >= GAP_GROUPS.min(spec.groups - 1) {
            break;
        }
        if !gaps.contains(&g) {
            gaps.push(g);
        }
    }
    gaps.sort_unstable();
    gaps
}

/// Within-group hop distances from `sources`, up to `limit` hops.
pub fn group_distances(
    kg: &KnowledgeGraph,
    sources: &[ConceptIdx],
    limit: usize,
) -> Vec<(ConceptIdx, usize)> {
    let mut seen: BTreeSet<ConceptIdx> = sources.iter().copied().collect();
    let mut queue: VecDeque<(ConceptIdx, usize)> = sources.iter().map(|&c| (c, 0)).collect();
    let mut out = Vec::new();
    while let Some((c, dist)) = queue.pop_front() {
        if dist > 0 {
            out.push((c, dist));
        }
        if dist == limit {
            continue;
        }
        let g = kg.group_of_idx(c);
        for (_, nb) in kg.neighbors_in_group_idx(c, g) {
            if seen.insert(nb) {
                queue.push_back((nb, dist + 1));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPatient {
    pub input: PatientInput,
    pub dominant: GroupIdx,
    pub keywords: Vec<ConceptIdx>,
    pub truth: Vec<ConceptIdx>,
}

/// Picks `count` concepts reachable from `sources`, nearest first, ties in
/// random order.
fn pick_near(
    kg: &KnowledgeGraph,
    sources: &[ConceptIdx],
    exclude: &BTreeSet<ConceptIdx>,
    count: usize,
    limit: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ConceptIdx> {
    let mut reach: Vec<_> = group_distances(kg, sources, limit)
        .into_iter()
        .filter(|(c, _)| !exclude.contains(c))
        .collect();
    reach.shuffle(rng);
    reach.sort_by_key(|&(_, d)| d);
    reach.into_iter().take(count).map(|(c, _)| c).collect()
}

fn sentences(templates: &[&str], names: &[&str], rng: &mut ChaCha8Rng) -> String {
    names
        .iter()
        .map(|n| templates.choose(rng).unwrap().replace("{}", n))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn gen_patients(spec: &SynthSpec, kg: &KnowledgeGraph) -> Result<Vec<SynthPatient>> {
    spec.validate()?;
    if kg.group_count() != spec.groups || kg.concept_count() != spec.groups * spec.concepts_per_group {
        return Err(Error::Config(format!(
            "graph has {} groups and {} concepts; the spec asks for {} x {}",
            kg.group_count(),
            kg.concept_count(),
            spec.groups,
            spec.concepts_per_group
        )));
    }
    let group_idx = |g: usize| kg.group(&spec.group_name(g));
    let gaps = gap_groups(spec);
    let mut rng = derived_rng(spec.seed, 3);
    let width = spec.patients.max(1).to_string().len().max(4);
    let mut out = Vec::with_capacity(spec.patients);
    let dominant: Vec<usize> = (0..spec.groups).filter(|g| !gaps.contains(g)).collect();
    for p in 0..spec.patients {
        let d = *dominant.choose(&mut rng).unwrap();
        let dom = group_idx(d)?;
        let mut keywords: Vec<ConceptIdx> = kg
            .members(dom)
            .choose_multiple(&mut rng, spec.keywords_per_patient)
            .copied()
            .collect();
        let mut bridges = Vec::new();
        for &g in &gaps {
            let c = *kg.members(group_idx(g)?).choose(&mut rng).unwrap();
            bridges.push(c);
        }
        let others: Vec<usize> = (0..spec.groups).filter(|g| *g != d && !gaps.contains(g)).collect();
        let distractor = others
            .choose(&mut rng)
            .map(|&g| group_idx(g).map(|gi| *kg.members(gi).choose(&mut rng).unwrap()))
            .transpose()?;
        keywords.extend(bridges.iter().copied());
        keywords.extend(distractor);

        let exclude: BTreeSet<ConceptIdx> = keywords.iter().copied().collect();
        let n_gap = if bridges.is_empty() { 0 } else { spec.gap_truth() };
        let n_dom = spec.truth_per_patient - n_gap;
        let dom_sources: Vec<ConceptIdx> = keywords[..spec.keywords_per_patient].to_vec();
        let mut truth = pick_near(kg, &dom_sources, &exclude, n_dom, spec.horizon, &mut rng);
        for (i, &b) in bridges.iter().enumerate() {
            let share = n_gap / bridges.len() + usize::from(i < n_gap % bridges.len());
            truth.extend(pick_near(kg, &[b], &exclude, share, spec.horizon, &mut rng));
        }

        let mut shown = keywords.clone();
        shown.shuffle(&mut rng);
        let kw_names: Vec<&str> = shown.iter().map(|&c| kg.name(c)).collect();
        let mut ref_order = truth.clone();
        ref_order.shuffle(&mut rng);
        let truth_names: Vec<&str> = ref_order.iter().map(|&c| kg.name(c)).collect();
        let reference = sentences(&REF_TEMPLATES, &truth_names, &mut rng);
        out.push(SynthPatient {
            input: PatientInput {
                id: format!("p{:0width$}", p + 1),
                pre_admission: sentences(&PRE_TEMPLATES, &kw_names, &mut rng),
                reference: Some(reference),
            },
            dominant: dom,
            keywords,
            truth,
        });
    }
    Ok(out)
}

pub fn gen_corpus(spec: &SynthSpec, kg: &KnowledgeGraph) -> Result<Vec<PatientInput>> {
    Ok(gen_patients(spec, kg)?.into_iter().map(|p| p.input).collect())
}

pub struct SynthDataset {
    pub kg: KnowledgeGraph,
    pub table: EmbeddingTable,
    pub patients: Vec<SynthPatient>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    let kg = gen_kg(spec)?;
    let table = pseudo_embeddings(&kg, spec.dim, spec.seed)?;
    let patients = gen_patients(spec, &kg)?;
    Ok(SynthDataset { kg, table, patients })
}

pub const CONCEPTS_FILE: &str = "concepts.tsv";
pub const RELATIONS_FILE: &str = "relations.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const PATIENTS_FILE: &str = "patients.jsonl";

impl SynthDataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.kg.write_tsv(&dir.join(CONCEPTS_FILE), &dir.join(RELATIONS_FILE))?;
        self.table.write(&self.kg, &dir.join(EMBEDDINGS_FILE))?;
        let rows: Vec<&PatientInput> = self.patients.iter().map(|p| &p.input).collect();
        write_jsonl(&dir.join(PATIENTS_FILE), &rows)
    }
}
