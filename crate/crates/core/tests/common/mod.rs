//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;

use r2ag::embeddings::EmbeddingTable;
use r2ag::env::{step, QueryContext, RolloutState};
use r2ag::kg::{ConceptIdx, GroupIdx, KgBuilder, KnowledgeGraph};
use r2ag::linker::KeywordSet;
use r2ag::policy::{Matrix, PolicyParams};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LEAP: &str = "group leap";

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..u.len() {
        s += u[i] * v[i];
    }
    s
}

pub fn cos(u: &[f64], v: &[f64]) -> f64 {
    dot(u, v) / (dot(u, u).sqrt() * dot(v, v).sqrt())
}

pub fn mean(vs: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; vs[0].len()];
    for v in vs {
        for i in 0..out.len() {
            out[i] += v[i];
        }
    }
    for x in &mut out {
        *x /= vs.len() as f64;
    }
    out
}

/// Random graph with ≤ `max_concepts` concepts, shuffled ids so that index
/// order says nothing about group, and an embedding palette that makes exact
/// score ties common.
pub fn random_world(rng: &mut ChaCha8Rng, max_concepts: usize) -> (KnowledgeGraph, EmbeddingTable) {
    let groups = rng.random_range(2..=5);
    let per_group = rng.random_range(2..=max_concepts / groups);
    let n = groups * per_group;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut b = KgBuilder::new();
    for (i, id) in ids.iter().enumerate() {
        b.add_concept(&format!("c{id:03}"), &format!("n{id}"), &format!("G{}", i % groups)).unwrap();
    }
    let p = rng.random_range(0.02..0.3);
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.random_bool(p) {
                let label = ["a", "b", "c"][rng.random_range(0..3)];
                b.add_edge(&format!("c{u:03}"), label, &format!("c{v:03}")).unwrap();
            }
        }
    }
    let kg = b.build().unwrap();
    let dim = rng.random_range(2..=6);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        if !rows.is_empty() && rng.random_bool(0.3) {
            let k = rng.random_range(0..rows.len());
            rows.push(rows[k].clone());
        } else {
            rows.push((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        }
    }
    let table = EmbeddingTable::from_rows(&kg, rows).unwrap();
    (kg, table)
}

/// One path as the oracle sees it: concepts plus the label that led to each.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePath {
    pub concepts: Vec<ConceptIdx>,
    pub labels: Vec<String>,
    pub frozen: bool,
}

impl OraclePath {
    fn average(&self, table: &EmbeddingTable) -> Vec<f64> {
        let distinct: BTreeSet<ConceptIdx> = self.concepts.iter().copied().collect();
        let vs: Vec<&[f64]> = distinct.iter().map(|&c| table.vector(c)).collect();
        mean(&vs)
    }

    fn push(&mut self, label: &str, c: ConceptIdx) {
        self.labels.push(label.to_string());
        self.concepts.push(c);
    }
}

pub fn snapshot(rs: &RolloutState, kg: &KnowledgeGraph) -> Vec<OraclePath> {
    rs.paths()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let dump = p.to_dump(kg);
            OraclePath {
                concepts: p.concepts().collect(),
                labels: dump.steps.into_iter().map(|s| s.label).collect(),
                frozen: rs.is_frozen(i),
            }
        })
        .collect()
}

/// Replays one environment step by exhaustive scoring over the raw edge
/// list. Ties go to the smallest concept id for leaps and the smallest
/// (label, id) for retrieval. Returns the new paths and current group.
pub fn oracle_step(
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    paths: &[OraclePath],
    keywords: &[ConceptIdx],
    current: GroupIdx,
    action: GroupIdx,
) -> (Vec<OraclePath>, GroupIdx) {
    let mut paths = paths.to_vec();
    let kw_vecs: Vec<&[f64]> = keywords.iter().map(|&c| table.vector(c)).collect();
    let kw_avg = mean(&kw_vecs);

    let mut pool: Vec<ConceptIdx> = paths.iter().flat_map(|p| p.concepts.clone()).collect();
    pool.extend_from_slice(keywords);
    pool.retain(|&c| kg.group_of_idx(c) == action);
    pool.sort_by(|a, b| kg.id(*a).cmp(kg.id(*b)));
    pool.dedup();

    let mut group = current;
    if action != current && !pool.is_empty() {
        for p in paths.iter_mut().filter(|p| !p.frozen) {
            let avg = p.average(table);
            let mut best = pool[0];
            let mut best_s = cos(table.vector(best), &avg);
            for &c in &pool[1..] {
                let s = cos(table.vector(c), &avg);
                if s > best_s {
                    best = c;
                    best_s = s;
                }
            }
            p.push(LEAP, best);
        }
        group = action;
    }

    for p in paths.iter_mut().filter(|p| !p.frozen) {
        let tail = *p.concepts.last().unwrap();
        let mut cands: Vec<(String, ConceptIdx)> = kg
            .edges()
            .iter()
            .filter(|e| e.src == tail && kg.group_of_idx(e.dst) == group)
            .map(|e| (kg.label(e.label).to_string(), e.dst))
            .collect();
        if cands.is_empty() {
            p.frozen = true;
            continue;
        }
        cands.sort_by(|x, y| (&x.0, kg.id(x.1)).cmp(&(&y.0, kg.id(y.1))));
        let avg = p.average(table);
        let score = |c: ConceptIdx| 0.5 * (cos(table.vector(c), &kw_avg) + cos(table.vector(c), &avg));
        let mut best = 0;
        let mut best_s = score(cands[0].1);
        for (i, &(_, c)) in cands.iter().enumerate().skip(1) {
            let s = score(c);
            if s > best_s {
                best = i;
                best_s = s;
            }
        }
        let (label, c) = cands[best].clone();
        p.push(&label, c);
    }
    (paths, group)
}

/// Runs one random episode on a random graph, checking every step against
/// [`oracle_step`]. Returns (agreeing steps, total steps).
pub fn oracle_episode(rng: &mut ChaCha8Rng) -> (usize, usize) {
    let (kg, table) = random_world(rng, 200);
    let n = kg.concept_count();
    let k = rng.random_range(1..=6.min(n));
    let mut all: Vec<ConceptIdx> = kg.concepts().collect();
    all.shuffle(rng);
    let ks = KeywordSet::from_concepts(&kg, &all[..k]);
    let keywords: Vec<ConceptIdx> = ks.concepts().collect();
    let ctx = QueryContext::new(ks, &kg, &table).unwrap();
    let horizon = 5;
    let mut rs = RolloutState::from_context(&ctx, &kg, horizon).unwrap();
    let mut agree = 0;
    for _ in 0..horizon {
        let action = GroupIdx(rng.random_range(0..kg.group_count() as u32));
        let before = snapshot(&rs, &kg);
        let (expected, group) = oracle_step(&kg, &table, &before, &keywords, rs.current_group(), action);
        step(&mut rs, action, &kg, &table, &ctx.keyword_avg).unwrap();
        if snapshot(&rs, &kg) == expected && rs.current_group() == group {
            agree += 1;
        }
    }
    (agree, horizon)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random policy input of dimension `d`, away from ReLU kinks so that
/// finite differences stay on one side.
pub struct GradFixture {
    pub params: PolicyParams,
    pub s_k: Vec<f64>,
    pub c_avg: Vec<f64>,
    pub actions: Matrix,
    pub action: usize,
}

pub fn grad_fixture(d: usize, seed: u64) -> GradFixture {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let params = r2ag::policy::init_params(d, rng.random()).unwrap();
        let s_k = random_vec(&mut rng, 4 * d);
        let c_avg = random_vec(&mut rng, d);
        let n_actions = rng.random_range(2..=6);
        let rows: Vec<Vec<f64>> = (0..n_actions).map(|_| random_vec(&mut rng, 4 * d)).collect();
        let actions = Matrix::from_rows(&rows).unwrap();
        let action = rng.random_range(0..n_actions);
        let cache = params.forward(&s_k, &c_avg, actions.clone()).unwrap();
        if cache.h1.iter().all(|h| h.abs() > 1e-3) {
            return GradFixture {
                params,
                s_k,
                c_avg,
                actions,
                action,
            };
        }
    }
}

fn entry_mut(p: &mut PolicyParams, which: usize, i: usize) -> &mut f64 {
    let m = match which {
        0 => &mut p.w1,
        1 => &mut p.w2,
        _ => &mut p.m,
    };
    &mut m.as_mut_slice()[i]
}

/// Central differences of `f` over every parameter entry, in W1, W2, M order.
pub fn finite_differences<F>(params: &PolicyParams, eps: f64, f: F) -> Vec<f64>
where
    F: Fn(&PolicyParams) -> f64,
{
    let mut out = Vec::new();
    let mut p = params.clone();
    for which in 0..3 {
        let len = [&params.w1, &params.w2, &params.m][which].as_slice().len();
        for i in 0..len {
            let x = *entry_mut(&mut p, which, i);
            *entry_mut(&mut p, which, i) = x + eps;
            let plus = f(&p);
            *entry_mut(&mut p, which, i) = x - eps;
            let minus = f(&p);
            *entry_mut(&mut p, which, i) = x;
            out.push((plus - minus) / (2.0 * eps));
        }
    }
    out
}

pub fn flatten(g: &r2ag::policy::Gradients) -> Vec<f64> {
    [&g.w1, &g.w2, &g.m].iter().flat_map(|m| m.as_slice().to_vec()).collect()
}

/// Entries below this magnitude on both sides are compared absolutely:
/// structurally zero gradients (the shared `k_current` half of every action
/// row cancels) come out near 1e-17 analytically but carry ~1e-11 of
/// rounding noise in a central difference.
pub const REL_FLOOR: f64 = 1e-6;

/// Largest entry-wise `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// `ln π(a)` recomputed in straight-line code, independent of the policy's
/// own forward pass.
pub fn oracle_log_prob(p: &PolicyParams, s_k: &[f64], c_avg: &[f64], actions: &Matrix, a: usize) -> f64 {
    let d = p.d;
    let mut x = s_k.to_vec();
    for r in 0..d {
        let mut s = 0.0;
        for c in 0..d {
            s += p.m.get(r, c) * c_avg[c];
        }
        x.push(s);
    }
    let mut a1 = vec![0.0; 4 * d];
    for r in 0..4 * d {
        let mut s = 0.0;
        for c in 0..5 * d {
            s += p.w1.get(r, c) * x[c];
        }
        a1[r] = if s > 0.0 { s } else { 0.0 };
    }
    let mut z = vec![0.0; 4 * d];
    for r in 0..4 * d {
        for c in 0..4 * d {
            z[r] += p.w2.get(r, c) * a1[c];
        }
    }
    let logits: Vec<f64> = (0..actions.rows()).map(|i| dot(actions.row(i), &z)).collect();
    let max = logits.iter().cloned().fold(f64::MIN, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[a] - lse
}
