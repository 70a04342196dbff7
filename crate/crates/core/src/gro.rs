//! Group-based retriever optimization: mixture-of-rewards scoring,
//! softmax-relative rewards over G rollouts per patient, and a discounted
//! REINFORCE update.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{avg_embedding, cosine, EmbeddingTable, GroupVectors};
use crate::env::{action_matrix, group_state, raw_concept_avg, step, QueryContext, ReasoningPath, RolloutState};
use crate::error::{Error, Result};
use crate::kg::{ConceptIdx, GroupIdx, KnowledgeGraph};
use crate::linker::{link_concepts, PatientInput};
use crate::policy::{greedy_action, init_params, sample_index, ForwardCache, Gradients, Matrix, PolicyParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Environment steps per rollout (T).
    pub horizon: usize,
    pub gamma: f64,
    /// Weight of the similarity term in the path reward.
    pub lambda: f64,
    /// Rollouts per patient (G).
    pub rollouts: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            gamma: 0.1,
            lambda: 10.0,
            rollouts: 4,
            lr: 1e-3,
            epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return bad("lambda must be non-negative");
        }
        if self.rollouts < 2 {
            return bad("at least 2 rollouts per patient are required");
        }
        if !self.lr.is_finite() {
            return bad("learning rate must be finite");
        }
        Ok(())
    }
}

/// Concepts linked from the reference text, with their mean embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    concepts: BTreeSet<ConceptIdx>,
    avg: Option<Vec<f64>>,
}

impl GroundTruth {
    pub fn new(concepts: BTreeSet<ConceptIdx>, table: &EmbeddingTable) -> Self {
        let avg = avg_embedding(table, concepts.iter().copied()).ok();
        Self { concepts, avg }
    }

    pub fn from_reference(text: &str, kg: &KnowledgeGraph, table: &EmbeddingTable) -> Self {
        Self::new(link_concepts(text, kg).concepts().collect(), table)
    }

    pub fn concepts(&self) -> &BTreeSet<ConceptIdx> {
        &self.concepts
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

/// Hits over the path's distinct concepts plus `lambda` times the cosine
/// between the path average and the ground-truth average.
pub fn path_reward(path: &ReasoningPath, gt: &GroundTruth, table: &EmbeddingTable, lambda: f64) -> f64 {
    let Some(gt_avg) = &gt.avg else {
        tracing::warn!("empty ground-truth concept set, path reward is 0");
        return 0.0;
    };
    let distinct = path.distinct_concepts();
    let hits = distinct.iter().filter(|c| gt.concepts.contains(c)).count();
    hits as f64 + lambda * cosine(&path.average(table), gt_avg)
}

/// Mean path reward over a rollout's paths.
pub fn rollout_reward(
    paths: &[ReasoningPath],
    gt: &GroundTruth,
    table: &EmbeddingTable,
    lambda: f64,
) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::Empty("rollout path list"));
    }
    let total: f64 = paths.iter().map(|p| path_reward(p, gt, table, lambda)).sum();
    Ok(total / paths.len() as f64)
}

/// Softmax of the rollout rewards.
pub fn relative_rewards(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Empty("reward vector"));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::NonFinite(r.to_string()));
    }
    Ok(crate::policy::softmax(rewards))
}

/// How a rollout chooses its group actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Draw from the policy distribution.
    Sample,
    /// Policy argmax.
    Greedy,
    /// Uniform over groups, ignoring the policy.
    Uniform,
}

#[derive(Debug, Clone)]
pub struct RolloutRecord {
    pub actions: Vec<usize>,
    pub caches: Vec<ForwardCache>,
    pub state: RolloutState,
    pub reward: f64,
    pub relative: f64,
}

impl RolloutRecord {
    pub fn paths(&self) -> &[ReasoningPath] {
        self.state.paths()
    }
}

/// Runs one episode of `horizon` group actions. Rewards are left at zero.
#[allow(clippy::too_many_arguments)]
pub fn run_rollout(
    params: &PolicyParams,
    ctx: &QueryContext,
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    gv: &GroupVectors,
    horizon: usize,
    selection: Selection,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutRecord> {
    let mut state = RolloutState::from_context(ctx, kg, horizon)?;
    let mut actions = Vec::with_capacity(horizon);
    let mut caches = Vec::with_capacity(horizon);
    let uniform = vec![1.0 / kg.group_count() as f64; kg.group_count()];
    while !state.is_finished() {
        let s_k = group_state(&state, gv);
        let c_avg = raw_concept_avg(&state, table)?;
        let a = Matrix::from_rows(&action_matrix(&state, gv))?;
        let cache = params.forward(&s_k, &c_avg, a)?;
        let action = match selection {
            Selection::Sample => sample_index(&cache.probs, rng.random()),
            Selection::Greedy => greedy_action(&cache.probs),
            Selection::Uniform => sample_index(&uniform, rng.random()),
        };
        step(&mut state, GroupIdx(action as u32), kg, table, &ctx.keyword_avg)?;
        actions.push(action);
        caches.push(cache);
    }
    Ok(RolloutRecord {
        actions,
        caches,
        state,
        reward: 0.0,
        relative: 0.0,
    })
}

/// `1/G · Σ_i Σ_{t=1..T} γ^(T−t) · R̃_i · ∇ log π(a_t^(i) | s_t^(i))`,
/// using each record's stored `relative` reward. `0⁰ = 1`.
pub fn gro_gradient(params: &PolicyParams, records: &[RolloutRecord], gamma: f64) -> Result<Gradients> {
    if records.is_empty() {
        return Err(Error::Empty("rollout group"));
    }
    let g = records.len() as f64;
    let mut total = Gradients::zeros(params.d);
    for rec in records {
        let horizon = rec.actions.len();
        for (t, (cache, &action)) in rec.caches.iter().zip(&rec.actions).enumerate() {
            let weight = gamma.powi((horizon - (t + 1)) as i32) * rec.relative / g;
            if weight == 0.0 {
                continue;
            }
            total.add_scaled(weight, &params.logprob_backward(cache, action)?);
        }
    }
    Ok(total)
}

/// A linked patient, ready for rollouts.
#[derive(Debug, Clone)]
pub struct PreparedPatient {
    pub id: String,
    pub ctx: QueryContext,
    pub truth: Option<GroundTruth>,
}

pub fn prepare_patient(p: &PatientInput, kg: &KnowledgeGraph, table: &EmbeddingTable) -> Result<PreparedPatient> {
    let keywords = link_concepts(&p.pre_admission, kg);
    if keywords.is_empty() {
        return Err(Error::Unlinkable(p.id.clone(), "no keyword links to the graph"));
    }
    let ctx = QueryContext::new(keywords, kg, table)?;
    let truth = p.reference.as_deref().map(|r| GroundTruth::from_reference(r, kg, table));
    if truth.as_ref().is_some_and(GroundTruth::is_empty) {
        tracing::warn!(patient = %p.id, "reference links to no concept; rewards will be 0");
    }
    Ok(PreparedPatient {
        id: p.id.clone(),
        ctx,
        truth,
    })
}

#[derive(Debug, Clone)]
pub struct PatientUpdate {
    pub gradient: Gradients,
    pub rewards: Vec<f64>,
    pub relative: Vec<f64>,
    pub records: Vec<RolloutRecord>,
}

impl PatientUpdate {
    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

/// Scores sampled rollouts and fills in their absolute and relative rewards.
pub fn score_rollouts(
    records: &mut [RolloutRecord],
    truth: &GroundTruth,
    table: &EmbeddingTable,
    lambda: f64,
) -> Result<()> {
    let rewards = records
        .iter()
        .map(|r| rollout_reward(r.paths(), truth, table, lambda))
        .collect::<Result<Vec<_>>>()?;
    let relative = relative_rewards(&rewards)?;
    for ((rec, r), rr) in records.iter_mut().zip(rewards).zip(relative) {
        rec.reward = r;
        rec.relative = rr;
    }
    Ok(())
}

/// G sampled rollouts from a parameter snapshot and their GRO gradient.
/// Each rollout draws from its own generator seeded off `rng`.
pub fn train_patient(
    params: &PolicyParams,
    patient: &PreparedPatient,
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    gv: &GroupVectors,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PatientUpdate> {
    let truth = patient
        .truth
        .as_ref()
        .ok_or_else(|| Error::Unlinkable(patient.id.clone(), "no reference text"))?;
    let seeds: Vec<u64> = (0..cfg.rollouts).map(|_| rng.random()).collect();
    let mut records = seeds
        .into_iter()
        .map(|s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            run_rollout(params, &patient.ctx, kg, table, gv, cfg.horizon, Selection::Sample, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    score_rollouts(&mut records, truth, table, cfg.lambda)?;
    let gradient = gro_gradient(params, &records, cfg.gamma)?;
    Ok(PatientUpdate {
        gradient,
        rewards: records.iter().map(|r| r.reward).collect(),
        relative: records.iter().map(|r| r.relative).collect(),
        records,
    })
}

/// One training-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub epoch: usize,
    pub patient: String,
    #[serde(rename = "mean_R")]
    pub mean_reward: Option<f64>,
    pub relative_rewards: Vec<f64>,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: Vec<EpisodeLog>,
}

impl TrainOutcome {
    /// Mean rewards of the non-skipped episodes, in training order.
    pub fn episode_rewards(&self) -> Vec<f64> {
        self.log.iter().filter_map(|e| e.mean_reward).collect()
    }
}

/// Trains from a fresh initialization seeded by `cfg.seed`.
pub fn train(
    corpus: &[PatientInput],
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = init_params(table.dim(), cfg.seed)?;
    train_from(params, corpus, kg, table, cfg)
}

/// Per-patient gradient ascent over `cfg.epochs` shuffled passes.
/// Patients without keywords or reference text are logged as skipped.
pub fn train_from(
    mut params: PolicyParams,
    corpus: &[PatientInput],
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    if params.d != table.dim() {
        return Err(Error::Shape(format!(
            "policy d = {} but embeddings have d = {}",
            params.d,
            table.dim()
        )));
    }
    let gv = GroupVectors::build(kg, table)?;
    let prepared: Vec<Option<PreparedPatient>> = corpus
        .iter()
        .map(|p| match prepare_patient(p, kg, table) {
            Ok(pp) if pp.truth.is_some() => Some(pp),
            Ok(_) => {
                tracing::warn!(patient = %p.id, "skipped: no reference text");
                None
            }
            Err(e) => {
                tracing::warn!(patient = %p.id, "skipped: {e}");
                None
            }
        })
        .collect();
    if prepared.iter().all(Option::is_none) {
        return Err(Error::AllSkipped);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs * corpus.len());
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let Some(patient) = &prepared[i] else {
                log.push(EpisodeLog {
                    epoch,
                    patient: corpus[i].id.clone(),
                    mean_reward: None,
                    relative_rewards: Vec::new(),
                    skipped: true,
                });
                continue;
            };
            let update = train_patient(&params, patient, kg, table, &gv, cfg, &mut rng)?;
            if !update.gradient.is_finite() {
                return Err(Error::NonFinite(format!("gradient for patient {}", patient.id)));
            }
            params.ascend(cfg.lr, &update.gradient);
            log.push(EpisodeLog {
                epoch,
                patient: patient.id.clone(),
                mean_reward: Some(update.mean_reward()),
                relative_rewards: update.relative,
                skipped: false,
            });
        }
    }
    Ok(TrainOutcome { params, log })
}

/// Mean rollout reward of a frozen policy: `rollouts` episodes per patient.
pub fn evaluate_policy(
    params: &PolicyParams,
    patients: &[PreparedPatient],
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    selection: Selection,
    seed: u64,
) -> Result<f64> {
    let gv = GroupVectors::build(kg, table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut n = 0usize;
    for p in patients {
        let Some(truth) = &p.truth else { continue };
        for _ in 0..cfg.rollouts {
            let rec = run_rollout(params, &p.ctx, kg, table, &gv, cfg.horizon, selection, &mut rng)?;
            total += rollout_reward(rec.paths(), truth, table, cfg.lambda)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::AllSkipped);
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KgBuilder;

    fn fixture() -> (KnowledgeGraph, EmbeddingTable) {
        let mut b = KgBuilder::new();
        for (id, g) in [("a", "A"), ("b", "A"), ("c", "B"), ("e", "B")] {
            b.add_concept(id, id, g).unwrap();
        }
        let kg = b.build().unwrap();
        let t = EmbeddingTable::from_rows(
            &kg,
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 3f64.sqrt() / 2.0], vec![-1.0, 0.0]],
        )
        .unwrap();
        (kg, t)
    }

    #[test]
    fn reward_is_zero_without_overlap() {
        let (kg, t) = fixture();
        let path = ReasoningPath::new(kg.concept("a").unwrap());
        let gt = GroundTruth::new([kg.concept("b").unwrap()].into(), &t);
        assert_eq!(path_reward(&path, &gt, &t, 10.0), 0.0);
    }

    #[test]
    fn two_hits_half_cosine_gives_seven() {
        // unit vectors at 0°, 60°, 120°, 180°
        let mut b = KgBuilder::new();
        for (id, g) in [("a", "A"), ("c", "A"), ("g", "B"), ("h", "B")] {
            b.add_concept(id, id, g).unwrap();
        }
        let kg = b.build().unwrap();
        let s3 = 3f64.sqrt() / 2.0;
        let t = EmbeddingTable::from_rows(
            &kg,
            vec![vec![1.0, 0.0], vec![0.5, s3], vec![-0.5, s3], vec![-1.0, 0.0]],
        )
        .unwrap();
        let c = |s| kg.concept(s).unwrap();
        // path average at 30°, ground-truth average at 90°
        let mut path = ReasoningPath::new(c("a"));
        path.push(crate::env::StepLabel::GroupLeap, c("c"));
        path.push(crate::env::StepLabel::GroupLeap, c("a"));
        let gt = GroundTruth::new([c("a"), c("c"), c("g"), c("h")].into(), &t);
        assert!((path_reward(&path, &gt, &t, 10.0) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn empty_truth_scores_zero() {
        let (kg, t) = fixture();
        let gt = GroundTruth::new(BTreeSet::new(), &t);
        assert_eq!(path_reward(&ReasoningPath::new(kg.concept("a").unwrap()), &gt, &t, 10.0), 0.0);
    }

    #[test]
    fn rollout_reward_is_mean() {
        let (kg, t) = fixture();
        let c = |s| kg.concept(s).unwrap();
        let gt = GroundTruth::new([c("a"), c("b")].into(), &t);
        let p1 = ReasoningPath::new(c("a"));
        let p2 = ReasoningPath::new(c("e"));
        let r1 = path_reward(&p1, &gt, &t, 10.0);
        let r2 = path_reward(&p2, &gt, &t, 10.0);
        assert_eq!(rollout_reward(std::slice::from_ref(&p1), &gt, &t, 10.0).unwrap(), r1);
        let both = rollout_reward(&[p1, p2], &gt, &t, 10.0).unwrap();
        assert!((both - (r1 + r2) / 2.0).abs() < 1e-12);
        assert!(rollout_reward(&[], &gt, &t, 10.0).is_err());
    }

    #[test]
    fn relative_reward_cases() {
        let r = relative_rewards(&[3.0; 4]).unwrap();
        assert!(r.iter().all(|&x| x == 0.25));
        let r = relative_rewards(&[0.0, 3f64.ln()]).unwrap();
        assert!((r[0] - 0.25).abs() < 1e-10 && (r[1] - 0.75).abs() < 1e-10);
        assert!(relative_rewards(&[1.0, f64::NAN]).is_err());
        assert!(relative_rewards(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { horizon: 0, ..Default::default() },
            TrainConfig { gamma: 1.5, ..Default::default() },
            TrainConfig { lambda: -1.0, ..Default::default() },
            TrainConfig { rollouts: 1, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
