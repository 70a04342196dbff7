//! Recorded outputs for a fixed graph, embedding table and checkpoint.

use r2ag::embeddings::{EmbeddingTable, GroupVectors};
use r2ag::generation::{retrieve_for_patient, select_paths, stub_generate, PromptBundle, PromptTemplate};
use r2ag::gro::Selection;
use r2ag::kg::{KgBuilder, KnowledgeGraph};
use r2ag::policy::{init_params, PolicyParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture() -> (KnowledgeGraph, EmbeddingTable) {
    let mut b = KgBuilder::new();
    for (id, name, group) in [
        ("C01", "cough", "Disorders"),
        ("C02", "pneumonia", "Disorders"),
        ("C03", "fever", "Disorders"),
        ("C04", "lung", "Anatomy"),
        ("C05", "chest", "Anatomy"),
        ("C06", "ceftriaxone", "Chemicals & Drugs"),
        ("C07", "azithromycin", "Chemicals & Drugs"),
        ("C08", "chest x ray", "Procedures"),
    ] {
        b.add_concept(id, name, group).unwrap();
    }
    for (s, l, d) in [
        ("C01", "symptom of", "C02"),
        ("C03", "symptom of", "C02"),
        ("C02", "finding site", "C04"),
        ("C04", "part of", "C05"),
        ("C05", "has part", "C04"),
        ("C06", "may treat", "C02"),
        ("C02", "may be treated by", "C06"),
        ("C02", "may be treated by", "C07"),
        ("C07", "same class", "C06"),
        ("C06", "same class", "C07"),
        ("C08", "examines", "C05"),
        ("C02", "diagnosed by", "C08"),
    ] {
        b.add_edge(s, l, d).unwrap();
    }
    let kg = b.build().unwrap();
    let rows = vec![
        vec![0.9, 0.1, 0.0],
        vec![0.8, 0.3, 0.1],
        vec![0.7, 0.0, 0.4],
        vec![0.1, 0.9, 0.1],
        vec![0.0, 0.8, 0.3],
        vec![0.2, 0.1, 0.9],
        vec![0.3, 0.2, 0.8],
        vec![0.4, 0.5, 0.5],
    ];
    let table = EmbeddingTable::from_rows(&kg, rows).unwrap();
    (kg, table)
}

fn checkpoint() -> PolicyParams {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    init_params(3, 1).unwrap().save(&path).unwrap();
    PolicyParams::load(&path).unwrap()
}

const PRE: &str = "Cough and fever for three days. Chest feels tight.";

#[test]
fn greedy_trace() {
    let (kg, table) = fixture();
    let gv = GroupVectors::build(&kg, &table).unwrap();
    let paths = retrieve_for_patient(
        &checkpoint(),
        PRE,
        &kg,
        &table,
        &gv,
        5,
        Selection::Greedy,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let dumps: Vec<_> = select_paths(paths, &kg, None).iter().map(|p| p.to_dump(&kg)).collect();
    let expected = r#"[{"origin":"C01","steps":[{"label":"group leap","concept":"C05"},{"label":"has part","concept":"C04"},{"label":"group leap","concept":"C01"},{"label":"symptom of","concept":"C02"},{"label":"group leap","concept":"C04"},{"label":"part of","concept":"C05"},{"label":"group leap","concept":"C02"}]},{"origin":"C03","steps":[{"label":"group leap","concept":"C05"},{"label":"has part","concept":"C04"},{"label":"group leap","concept":"C03"},{"label":"symptom of","concept":"C02"},{"label":"group leap","concept":"C04"},{"label":"part of","concept":"C05"},{"label":"group leap","concept":"C02"}]}]"#;
    assert_eq!(serde_json::to_string(&dumps).unwrap(), expected);
}

#[test]
fn prompt_and_stub() {
    let (kg, table) = fixture();
    let gv = GroupVectors::build(&kg, &table).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let paths = retrieve_for_patient(&checkpoint(), PRE, &kg, &table, &gv, 5, Selection::Greedy, &mut rng).unwrap();
    let bundle = PromptBundle::new(&PromptTemplate::default(), PRE, &select_paths(paths, &kg, None), &kg);
    let expected = "\
Pre-admission information (allergies, chief complaint, history of present illness):
Cough and fever for three days. Chest feels tight.

Reasoning paths from a medical knowledge graph:
cough [Disorders] --group leap--> chest [Anatomy] --has part--> lung [Anatomy] --group leap--> cough [Disorders] \
--symptom of--> pneumonia [Disorders] --group leap--> lung [Anatomy] --part of--> chest [Anatomy] --group leap--> pneumonia [Disorders]
fever [Disorders] --group leap--> chest [Anatomy] --has part--> lung [Anatomy] --group leap--> fever [Disorders] \
--symptom of--> pneumonia [Disorders] --group leap--> lung [Anatomy] --part of--> chest [Anatomy] --group leap--> pneumonia [Disorders]

Write the discharge instruction for this patient as plain prose addressed to the patient.";
    assert_eq!(bundle.user_message(), expected);
    assert_eq!(
        stub_generate(&bundle),
        "Cough and fever for three days. Follow up regarding cough. Follow up regarding chest. \
         Follow up regarding lung. Follow up regarding pneumonia. Follow up regarding fever."
    );
    assert_eq!(bundle.system, "You are a clinical documentation assistant. Write the patient's discharge instruction.");
}
