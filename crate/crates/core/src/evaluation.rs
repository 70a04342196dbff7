//! Clinical-efficacy set metrics and ROUGE/BLEU, macro-averaged over
//! patients.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::GeneratedRecord;
use crate::kg::{read_file, KnowledgeGraph};
use crate::linker::{link_concepts, PatientInput};
use crate::text;

/// Content tokens: lowercase, at least two characters, stopwords dropped,
/// deduplicated.
pub fn extract_tokens(text: &str) -> BTreeSet<String> {
    text::tokens(text)
        .into_iter()
        .filter(|t| t.chars().count() >= 2 && !text::is_stopword(t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CeRow {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub jaccard: f64,
    pub hamming: f64,
    /// Set when the prediction was empty, which forces precision to 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_prediction: bool,
}

/// Set metrics of `pred` against `reference`. `None` when the reference is
/// empty; such rows are skipped by the caller.
pub fn ce_metrics<T: Ord>(pred: &BTreeSet<T>, reference: &BTreeSet<T>) -> Option<CeRow> {
    if reference.is_empty() {
        return None;
    }
    let inter = pred.intersection(reference).count() as f64;
    let union = pred.union(reference).count() as f64;
    let precision = if pred.is_empty() { 0.0 } else { inter / pred.len() as f64 };
    let recall = inter / reference.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Some(CeRow {
        precision,
        recall,
        f1,
        jaccard: inter / union,
        hamming: 1.0 - recall,
        empty_prediction: pred.is_empty(),
    })
}

/// Lowercased tokens with stopwords kept.
pub fn nlg_tokens(text: &str) -> Vec<String> {
    text::tokens(text)
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap(pred: &HashMap<&[String], usize>, reference: &HashMap<&[String], usize>) -> usize {
    pred.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

fn f_measure(overlap: f64, pred_total: f64, ref_total: f64) -> f64 {
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / pred_total;
    let r = overlap / ref_total;
    2.0 * p * r / (p + r)
}

/// F1 over n-gram multisets. When neither text has an n-gram of this order
/// the score is 1 for identical token sequences and 0 otherwise.
pub fn rouge_n(pred: &[String], reference: &[String], n: usize) -> f64 {
    let p = ngrams(pred, n);
    let r = ngrams(reference, n);
    let (pt, rt) = (p.values().sum::<usize>(), r.values().sum::<usize>());
    match (pt, rt) {
        (0, 0) => f64::from(u8::from(pred == reference)),
        (0, _) | (_, 0) => 0.0,
        _ => f_measure(clipped_overlap(&p, &r) as f64, pt as f64, rt as f64),
    }
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with equal weight on precision and recall.
pub fn rouge_l(pred: &[String], reference: &[String]) -> f64 {
    match (pred.len(), reference.len()) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        (pl, rl) => f_measure(lcs_len(pred, reference) as f64, pl as f64, rl as f64),
    }
}

/// Geometric mean of modified 1..=n-gram precisions times the brevity
/// penalty. An empty prediction scores 0.
pub fn bleu_n(pred: &[String], reference: &[String], n: usize) -> f64 {
    if pred.is_empty() || n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let p = ngrams(pred, k);
        let total: usize = p.values().sum();
        let overlap = clipped_overlap(&p, &ngrams(reference, k));
        if total == 0 || overlap == 0 {
            return 0.0;
        }
        log_sum += (overlap as f64 / total as f64).ln();
    }
    let (pl, rl) = (pred.len() as f64, reference.len() as f64);
    let bp = if pl < rl { (1.0 - rl / pl).exp() } else { 1.0 };
    bp * (log_sum / n as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NlgRow {
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub bleu1: f64,
    pub bleu2: f64,
}

pub fn nlg_metrics(pred: &str, reference: &str) -> NlgRow {
    let p = nlg_tokens(pred);
    let r = nlg_tokens(reference);
    NlgRow {
        rouge1: rouge_n(&p, &r, 1),
        rouge2: rouge_n(&p, &r, 2),
        rouge_l: rouge_l(&p, &r),
        bleu1: bleu_n(&p, &r, 1),
        bleu2: bleu_n(&p, &r, 2),
    }
}

/// Every metric for one patient. A CE level is `None` when its reference
/// set is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRow {
    pub id: String,
    pub ngram: Option<CeRow>,
    pub concept: Option<CeRow>,
    pub nlg: NlgRow,
}

pub fn score_patient(id: &str, generated: &str, reference: &str, kg: &KnowledgeGraph) -> PatientRow {
    let concepts = |t: &str| link_concepts(t, kg).concepts().collect::<BTreeSet<_>>();
    PatientRow {
        id: id.to_string(),
        ngram: ce_metrics(&extract_tokens(generated), &extract_tokens(reference)),
        concept: ce_metrics(&concepts(generated), &concepts(reference)),
        nlg: nlg_metrics(generated, reference),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CeReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub jaccard: f64,
    pub hamming: f64,
    pub rows: usize,
    /// Patients whose reference set was empty.
    pub skipped: usize,
    pub empty_predictions: usize,
}

impl CeReport {
    /// Plain means of the per-row values.
    pub fn macro_average<'a>(rows: impl IntoIterator<Item = Option<&'a CeRow>>) -> Self {
        let mut rep = CeReport::default();
        for r in rows {
            let Some(r) = r else {
                rep.skipped += 1;
                continue;
            };
            rep.rows += 1;
            rep.precision += r.precision;
            rep.recall += r.recall;
            rep.f1 += r.f1;
            rep.jaccard += r.jaccard;
            rep.hamming += r.hamming;
            rep.empty_predictions += r.empty_prediction as usize;
        }
        if rep.rows > 0 {
            let n = rep.rows as f64;
            rep.precision /= n;
            rep.recall /= n;
            rep.f1 /= n;
            rep.jaccard /= n;
            rep.hamming /= n;
        }
        rep
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NlgReport {
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub rows: usize,
}

impl NlgReport {
    pub fn macro_average<'a>(rows: impl IntoIterator<Item = &'a NlgRow>) -> Self {
        let mut rep = NlgReport::default();
        for r in rows {
            rep.rows += 1;
            rep.rouge1 += r.rouge1;
            rep.rouge2 += r.rouge2;
            rep.rouge_l += r.rouge_l;
            rep.bleu1 += r.bleu1;
            rep.bleu2 += r.bleu2;
        }
        if rep.rows > 0 {
            let n = rep.rows as f64;
            rep.rouge1 /= n;
            rep.rouge2 /= n;
            rep.rouge_l /= n;
            rep.bleu1 /= n;
            rep.bleu2 /= n;
        }
        rep
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeSection {
    pub ngram: CeReport,
    pub concept: CeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ce: CeSection,
    pub nlg: NlgReport,
    #[serde(skip)]
    pub rows: Vec<PatientRow>,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<PatientRow>) -> Self {
        Self {
            ce: CeSection {
                ngram: CeReport::macro_average(rows.iter().map(|r| r.ngram.as_ref())),
                concept: CeReport::macro_average(rows.iter().map(|r| r.concept.as_ref())),
            },
            nlg: NlgReport::macro_average(rows.iter().map(|r| &r.nlg)),
            rows,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One CSV line per patient; empty cells for skipped CE levels.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from(
            "id,ngram_p,ngram_r,ngram_f1,ngram_j,ngram_hl,concept_p,concept_r,concept_f1,concept_j,concept_hl,rouge1,rouge2,rougeL,bleu1,bleu2\n",
        );
        let ce = |r: &Option<CeRow>| match r {
            Some(r) => format!("{},{},{},{},{}", r.precision, r.recall, r.f1, r.jaccard, r.hamming),
            None => ",,,,".to_string(),
        };
        for r in &self.rows {
            let id = if r.id.contains([',', '"', '\n']) {
                format!("\"{}\"", r.id.replace('"', "\"\""))
            } else {
                r.id.clone()
            };
            out.push_str(&format!(
                "{id},{},{},{},{},{},{},{}\n",
                ce(&r.ngram),
                ce(&r.concept),
                r.nlg.rouge1,
                r.nlg.rouge2,
                r.nlg.rouge_l,
                r.nlg.bleu1,
                r.nlg.bleu2
            ));
        }
        out
    }
}

pub fn read_generated(path: &Path) -> Result<Vec<GeneratedRecord>> {
    let mut out = Vec::new();
    for (i, line) in read_file(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::at(path, i + 1, e.into()))?);
    }
    Ok(out)
}

/// Pairs generated records with references by id. Patients without a
/// reference are left out; a generated id missing from the corpus is an
/// error.
pub fn align<'a>(
    generated: &'a [GeneratedRecord],
    corpus: &'a [PatientInput],
) -> Result<Vec<(&'a str, &'a str, &'a str)>> {
    if generated.is_empty() {
        return Err(Error::Empty("generated corpus"));
    }
    let refs: HashMap<&str, &PatientInput> = corpus.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut out = Vec::with_capacity(generated.len());
    for g in generated {
        let p = refs
            .get(g.id.as_str())
            .ok_or_else(|| Error::Corpus(format!("generated id `{}` not in reference corpus", g.id)))?;
        if let Some(r) = &p.reference {
            out.push((g.id.as_str(), g.generated.as_str(), r.as_str()));
        }
    }
    if out.is_empty() {
        return Err(Error::Corpus("no generated id has a reference text".into()));
    }
    Ok(out)
}

pub fn evaluate_corpus(
    generated: &[GeneratedRecord],
    corpus: &[PatientInput],
    kg: &KnowledgeGraph,
) -> Result<EvalReport> {
    let rows = align(generated, corpus)?
        .into_iter()
        .map(|(id, g, r)| score_patient(id, g, r, kg))
        .collect();
    Ok(EvalReport::from_rows(rows))
}
