//! The `r2ag` command line.
//!
//! Settings resolve in one order: built-in defaults, then the flat
//! dotted-key JSON file given with `--config`, then command-line flags.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::embeddings::{load_embeddings, EmbeddingTable, GroupVectors};
use crate::env::PathDump;
use crate::error::{Error, Result};
use crate::evaluation::{align, read_generated, score_patient, CeReport, EvalReport};
use crate::generation::{
    retrieve_for_patient, select_paths, ChatClient, GeneratedRecord, GeneratorConfig, PromptBundle,
    PromptTemplate, StubGenerator, TextGenerator,
};
use crate::gro::{train_from, Selection, TrainConfig};
use crate::kg::{load_kg, write_file, KnowledgeGraph};
use crate::linker::{link_concepts, read_corpus, write_jsonl, PatientInput};
use crate::policy::{init_params, PolicyParams};
use crate::synth::{self, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_ENDPOINT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "r2ag", version, about = "Reinforced reasoning-path retrieval for discharge instruction generation")]
pub struct Cli {
    /// JSON file of flat dotted keys, e.g. {"train.lr": 0.01}
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for generate and eval
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Directory holding the default input and output files
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic graph, embeddings and patient corpus
    Synth(SynthArgs),
    /// Load and check the graph, embeddings and corpus
    Validate(InputArgs),
    /// Train the retriever policy
    Train(TrainArgs),
    /// Dump reasoning paths for the corpus or one patient
    Retrieve(RetrieveArgs),
    /// Generate discharge instructions
    Generate(GenerateArgs),
    /// Score generated instructions against references
    Eval(EvalArgs),
}

#[derive(Debug, Args, Default)]
pub struct InputArgs {
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    #[arg(long)]
    pub relations: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub concepts_per_group: Option<usize>,
    #[arg(long)]
    pub p_intra: Option<f64>,
    #[arg(long)]
    pub p_cross: Option<f64>,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub keywords_per_patient: Option<usize>,
    #[arg(long)]
    pub truth_per_patient: Option<usize>,
    #[arg(long)]
    pub skew: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub train_log: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Only this patient
    #[arg(long)]
    pub patient: Option<String>,
    /// Output file; standard output when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sample actions instead of taking the most probable one
    #[arg(long)]
    pub sample: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Offline deterministic generator instead of the HTTP endpoint
    #[arg(long)]
    pub stub: bool,
    /// Chat-completions URL
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Keep at most this many paths per patient; 0 disables retrieval
    #[arg(long)]
    pub max_paths: Option<usize>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub sample: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    #[arg(long)]
    pub generated: Option<PathBuf>,
    /// Report JSON path
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-patient CSV path
    #[arg(long)]
    pub rows: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSettings {
    pub concepts: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub train_log: Option<PathBuf>,
    pub paths: Option<PathBuf>,
    pub generated: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub rows: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenerateSettings {
    #[serde(flatten)]
    pub client: GeneratorConfig,
    pub stub: bool,
    pub max_paths: Option<usize>,
    pub template: Option<PathBuf>,
    pub sample: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveSettings {
    pub sample: bool,
}

/// Every setting a command may read, after defaults, config file and flags
/// have been merged.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub data_dir: PathBuf,
    pub paths: PathSettings,
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub generate: GenerateSettings,
    pub retrieve: RetrieveSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            data_dir: PathBuf::from("data"),
            paths: PathSettings::default(),
            synth: SynthSpec::default(),
            train: TrainConfig::default(),
            generate: GenerateSettings::default(),
            retrieve: RetrieveSettings::default(),
        }
    }
}

/// Keys that only `seed` controls.
const DERIVED_KEYS: [(&str, &str); 2] = [("synth", "seed"), ("train", "seed")];

fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        if i + 1 == parts.len() {
            if slot.is_object() {
                return Err(Error::Config(format!("`{key}` is a section, not a setting")));
            }
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}

impl RunConfig {
    /// Defaults, then `file` entries, then `flags`; later sources win.
    pub fn resolve(file: Option<&Map<String, Value>>, flags: &[(String, Value)]) -> Result<Self> {
        let mut tree = serde_json::to_value(RunConfig::default())?;
        for (section, key) in DERIVED_KEYS {
            tree[section].as_object_mut().expect("section").remove(key);
        }
        let entries = file.into_iter().flat_map(|m| m.iter()).map(|(k, v)| (k.as_str(), v));
        for (k, v) in entries.chain(flags.iter().map(|(k, v)| (k.as_str(), v))) {
            set_dotted(&mut tree, k, v.clone())?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        cfg.synth.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        if cfg.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn load_file(path: &Path) -> Result<Map<String, Value>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))? {
            Value::Object(m) => Ok(m),
            _ => Err(Error::Config(format!("{}: expected a JSON object", path.display()))),
        }
    }

    fn path(&self, explicit: &Option<PathBuf>, file: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.data_dir.join(file))
    }

    pub fn concepts_path(&self) -> PathBuf {
        self.path(&self.paths.concepts, synth::CONCEPTS_FILE)
    }
    pub fn relations_path(&self) -> PathBuf {
        self.path(&self.paths.relations, synth::RELATIONS_FILE)
    }
    pub fn embeddings_path(&self) -> PathBuf {
        self.path(&self.paths.embeddings, synth::EMBEDDINGS_FILE)
    }
    pub fn corpus_path(&self) -> PathBuf {
        self.path(&self.paths.corpus, synth::PATIENTS_FILE)
    }
    pub fn checkpoint_path(&self) -> PathBuf {
        self.path(&self.paths.checkpoint, "checkpoint.json")
    }
    pub fn train_log_path(&self) -> PathBuf {
        self.path(&self.paths.train_log, "train_log.jsonl")
    }
    pub fn generated_path(&self) -> PathBuf {
        self.path(&self.paths.generated, "generated.jsonl")
    }
    pub fn report_path(&self) -> PathBuf {
        self.path(&self.paths.report, "report.json")
    }
    pub fn rows_path(&self) -> PathBuf {
        self.path(&self.paths.rows, "report_rows.csv")
    }
}

fn push<T: Serialize>(flags: &mut Vec<(String, Value)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        flags.push((key.to_string(), serde_json::to_value(v).expect("flag value serializes")));
    }
}

fn push_inputs(flags: &mut Vec<(String, Value)>, a: &InputArgs) {
    push(flags, "paths.concepts", a.concepts.as_ref());
    push(flags, "paths.relations", a.relations.as_ref());
    push(flags, "paths.embeddings", a.embeddings.as_ref());
    push(flags, "paths.corpus", a.corpus.as_ref());
}

impl Cli {
    /// Flag values as dotted keys, only for flags actually given.
    pub fn flag_entries(&self) -> Vec<(String, Value)> {
        let mut f = Vec::new();
        push(&mut f, "seed", self.seed);
        push(&mut f, "jobs", self.jobs);
        push(&mut f, "data_dir", self.data_dir.as_ref());
        match &self.command {
            Command::Synth(a) => {
                push(&mut f, "synth.groups", a.groups);
                push(&mut f, "synth.concepts_per_group", a.concepts_per_group);
                push(&mut f, "synth.p_intra", a.p_intra);
                push(&mut f, "synth.p_cross", a.p_cross);
                push(&mut f, "synth.patients", a.patients);
                push(&mut f, "synth.keywords_per_patient", a.keywords_per_patient);
                push(&mut f, "synth.truth_per_patient", a.truth_per_patient);
                push(&mut f, "synth.skew", a.skew);
                push(&mut f, "synth.dim", a.dim);
            }
            Command::Validate(a) => push_inputs(&mut f, a),
            Command::Train(a) => {
                push_inputs(&mut f, &a.inputs);
                push(&mut f, "paths.checkpoint", a.checkpoint.as_ref());
                push(&mut f, "paths.train_log", a.train_log.as_ref());
                push(&mut f, "train.horizon", a.horizon);
                push(&mut f, "train.gamma", a.gamma);
                push(&mut f, "train.lambda", a.lambda);
                push(&mut f, "train.rollouts", a.rollouts);
                push(&mut f, "train.lr", a.lr);
                push(&mut f, "train.epochs", a.epochs);
            }
            Command::Retrieve(a) => {
                push_inputs(&mut f, &a.inputs);
                push(&mut f, "paths.checkpoint", a.checkpoint.as_ref());
                push(&mut f, "paths.paths", a.out.as_ref());
                push(&mut f, "retrieve.sample", a.sample.then_some(true));
            }
            Command::Generate(a) => {
                push_inputs(&mut f, &a.inputs);
                push(&mut f, "paths.checkpoint", a.checkpoint.as_ref());
                push(&mut f, "paths.generated", a.out.as_ref());
                push(&mut f, "generate.stub", a.stub.then_some(true));
                push(&mut f, "generate.endpoint", a.endpoint.as_ref());
                push(&mut f, "generate.model", a.model.as_ref());
                push(&mut f, "generate.max_paths", a.max_paths);
                push(&mut f, "generate.template", a.template.as_ref());
                push(&mut f, "generate.sample", a.sample.then_some(true));
            }
            Command::Eval(a) => {
                push_inputs(&mut f, &a.inputs);
                push(&mut f, "paths.generated", a.generated.as_ref());
                push(&mut f, "paths.report", a.report.as_ref());
                push(&mut f, "paths.rows", a.rows.as_ref());
            }
        }
        f
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Endpoint(_) => EXIT_ENDPOINT,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let file = cli.config.as_deref().map(RunConfig::load_file).transpose()?;
    let cfg = RunConfig::resolve(file.as_ref(), &cli.flag_entries())?;
    match &cli.command {
        Command::Synth(_) => cmd_synth(&cfg),
        Command::Validate(_) => cmd_validate(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Retrieve(a) => cmd_retrieve(&cfg, a.patient.as_deref()),
        Command::Generate(_) => cmd_generate(&cfg),
        Command::Eval(_) => cmd_eval(&cfg),
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let ds = synth::generate(&cfg.synth)?;
    ds.write(&cfg.data_dir)?;
    println!(
        "wrote {} concepts, {} edges, {} patients to {}",
        ds.kg.concept_count(),
        ds.kg.edge_count(),
        ds.patients.len(),
        cfg.data_dir.display()
    );
    Ok(())
}

fn load_graph(cfg: &RunConfig) -> Result<KnowledgeGraph> {
    load_kg(&cfg.concepts_path(), &cfg.relations_path())
}

fn load_inputs(cfg: &RunConfig) -> Result<(KnowledgeGraph, EmbeddingTable)> {
    let kg = load_graph(cfg)?;
    let table = load_embeddings(&cfg.embeddings_path(), &kg)?;
    Ok((kg, table))
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<()> {
    let kg = load_graph(cfg)?;
    let mut out = format!(
        "graph: {} concepts, {} groups, {} edges, {} relation labels\n",
        kg.concept_count(),
        kg.group_count(),
        kg.edge_count(),
        kg.label_count()
    );
    for g in kg.groups() {
        out.push_str(&format!("  {}: {} concepts\n", kg.group_id(g), kg.members(g).len()));
    }
    let emb = cfg.embeddings_path();
    if emb.exists() {
        let table = load_embeddings(&emb, &kg)?;
        out.push_str(&format!("embeddings: d = {}\n", table.dim()));
    }
    let corpus_path = cfg.corpus_path();
    if corpus_path.exists() {
        let corpus = read_corpus(&corpus_path)?;
        let linked = corpus.iter().filter(|p| !link_concepts(&p.pre_admission, &kg).is_empty()).count();
        let with_ref = corpus.iter().filter(|p| p.reference.is_some()).count();
        out.push_str(&format!(
            "corpus: {} patients, {} with linked keywords, {} with reference text\n",
            corpus.len(),
            linked,
            with_ref
        ));
    }
    print!("{out}");
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let (kg, table) = load_inputs(cfg)?;
    let corpus = read_corpus(&cfg.corpus_path())?;
    let params = init_params(table.dim(), cfg.train.seed)?;
    let outcome = train_from(params, &corpus, &kg, &table, &cfg.train)?;
    outcome.params.save(&cfg.checkpoint_path())?;
    write_jsonl(&cfg.train_log_path(), &outcome.log)?;
    for epoch in 0..cfg.train.epochs {
        let rewards: Vec<f64> = outcome
            .log
            .iter()
            .filter(|e| e.epoch == epoch)
            .filter_map(|e| e.mean_reward)
            .collect();
        if !rewards.is_empty() {
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            println!("epoch {epoch}: mean rollout reward {mean:.4}");
        }
    }
    println!("checkpoint written to {}", cfg.checkpoint_path().display());
    Ok(())
}

fn load_policy(cfg: &RunConfig, table: &EmbeddingTable) -> Result<PolicyParams> {
    let params = PolicyParams::load(&cfg.checkpoint_path())?;
    if params.d != table.dim() {
        return Err(Error::Shape(format!(
            "checkpoint d = {} but embeddings have d = {}",
            params.d,
            table.dim()
        )));
    }
    Ok(params)
}

fn selection(sample: bool) -> Selection {
    if sample {
        Selection::Sample
    } else {
        Selection::Greedy
    }
}

/// Per-patient generator, so output does not depend on worker scheduling.
fn patient_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn cmd_retrieve(cfg: &RunConfig, patient: Option<&str>) -> Result<()> {
    let (kg, table) = load_inputs(cfg)?;
    let params = load_policy(cfg, &table)?;
    let gv = GroupVectors::build(&kg, &table)?;
    let corpus = read_corpus(&cfg.corpus_path())?;
    let chosen: Vec<(usize, &PatientInput)> = match patient {
        Some(id) => {
            let hit = corpus
                .iter()
                .enumerate()
                .find(|(_, p)| p.id == id)
                .ok_or_else(|| Error::Corpus(format!("no patient `{id}`")))?;
            vec![hit]
        }
        None => corpus.iter().enumerate().collect(),
    };
    let mut dumps = Vec::new();
    for (i, p) in chosen {
        let mut rng = patient_rng(cfg.seed, i);
        let sel = selection(cfg.retrieve.sample);
        match retrieve_for_patient(&params, &p.pre_admission, &kg, &table, &gv, cfg.train.horizon, sel, &mut rng) {
            Ok(paths) => {
                for path in select_paths(paths, &kg, None) {
                    let mut d = path.to_dump(&kg);
                    d.patient = Some(p.id.clone());
                    dumps.push(d);
                }
            }
            Err(e) if patient.is_none() => tracing::warn!(patient = %p.id, "no paths: {e}"),
            Err(e) => return Err(e),
        }
    }
    match &cfg.paths.paths {
        Some(out) => write_jsonl(out, &dumps),
        None => {
            let mut stdout = std::io::stdout().lock();
            for d in &dumps {
                serde_json::to_writer(&mut stdout, d)?;
                writeln!(stdout).map_err(|e| Error::io("<stdout>", e))?;
            }
            Ok(())
        }
    }
}

/// Runs `f` over `items` on up to `jobs` threads; results keep input order.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let (kg, table) = load_inputs(cfg)?;
    let corpus = read_corpus(&cfg.corpus_path())?;
    let settings = &cfg.generate;
    let template = match &settings.template {
        Some(p) => PromptTemplate::load(p)?,
        None => PromptTemplate::default(),
    };
    let retrieval = settings.max_paths != Some(0);
    let policy = if retrieval { Some(load_policy(cfg, &table)?) } else { None };
    let gv = GroupVectors::build(&kg, &table)?;
    let generator: Box<dyn TextGenerator> = if settings.stub {
        Box::new(StubGenerator)
    } else {
        Box::new(ChatClient::new(settings.client.clone())?)
    };

    let results = parallel_map(&corpus, cfg.jobs, |i, p| -> Result<GeneratedRecord> {
        let paths = match &policy {
            Some(params) => {
                let mut rng = patient_rng(cfg.seed, i);
                let sel = selection(settings.sample);
                match retrieve_for_patient(params, &p.pre_admission, &kg, &table, &gv, cfg.train.horizon, sel, &mut rng) {
                    Ok(paths) => select_paths(paths, &kg, settings.max_paths),
                    Err(e) => {
                        tracing::warn!(patient = %p.id, "generating without paths: {e}");
                        Vec::new()
                    }
                }
            }
            None => Vec::new(),
        };
        let bundle = PromptBundle::new(&template, &p.pre_admission, &paths, &kg);
        let generated = generator.generate(&bundle)?;
        let dumps: Vec<PathDump> = paths.iter().map(|path| path.to_dump(&kg)).collect();
        Ok(GeneratedRecord {
            id: p.id.clone(),
            generated,
            paths: dumps,
        })
    });
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_jsonl(&cfg.generated_path(), &records)?;
    println!("wrote {} generations to {}", records.len(), cfg.generated_path().display());
    Ok(())
}

fn percent_row(name: &str, r: &CeReport) -> String {
    format!(
        "{name:<8} P {:6.2}%  R {:6.2}%  F1 {:6.2}%  J {:6.2}%  HL {:6.2}%  ({} rows, {} skipped)\n",
        100.0 * r.precision,
        100.0 * r.recall,
        100.0 * r.f1,
        100.0 * r.jaccard,
        100.0 * r.hamming,
        r.rows,
        r.skipped
    )
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let kg = load_graph(cfg)?;
    let corpus = read_corpus(&cfg.corpus_path())?;
    let generated = read_generated(&cfg.generated_path())?;
    let pairs = align(&generated, &corpus)?;
    let rows = parallel_map(&pairs, cfg.jobs, |_, &(id, g, r)| score_patient(id, g, r, &kg));
    let report = EvalReport::from_rows(rows);
    write_file(&cfg.report_path(), &report.to_json())?;
    write_file(&cfg.rows_path(), &report.rows_csv())?;
    let n = &report.nlg;
    let mut out = percent_row("n-gram", &report.ce.ngram);
    out.push_str(&percent_row("concept", &report.ce.concept));
    out.push_str(&format!(
        "NLG      ROUGE-1 {:6.2}%  ROUGE-2 {:6.2}%  ROUGE-L {:6.2}%  BLEU-1 {:6.2}%  BLEU-2 {:6.2}%\n",
        100.0 * n.rouge1,
        100.0 * n.rouge2,
        100.0 * n.rouge_l,
        100.0 * n.bleu1,
        100.0 * n.bleu2
    ));
    print!("{out}");
    Ok(())
}
