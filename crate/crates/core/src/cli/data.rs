use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::DatasetSpec;
use crate::error::{Error, Result};
use crate::harness::{generate_tasks, load_questions, Dataset, QAExample};
use crate::kg::{load_triples, KnowledgeGraph, Triple, TripleId};

const KB_FILE: &str = "kb.txt";
const TRAIN_FILE: &str = "train.jsonl";
const EVAL_FILE: &str = "eval.jsonl";

/// An example with gold triples spelled out by name, independent of ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleRecord {
    question: String,
    anchors: Vec<String>,
    gold_paths: Vec<Vec<[String; 3]>>,
    answers: Vec<String>,
}

fn names(g: &KnowledgeGraph, id: TripleId) -> [String; 3] {
    let t = g.triple(id).expect("gold triple from this graph");
    [
        g.entity_name(t.subject).to_string(),
        g.relation_name(t.relation).to_string(),
        g.entity_name(t.object).to_string(),
    ]
}

fn resolve(g: &KnowledgeGraph, [s, r, o]: &[String; 3]) -> Result<TripleId> {
    let lookup = || -> Option<TripleId> {
        g.triple_id(Triple { subject: g.entity_id(s)?, relation: g.relation_id(r)?, object: g.entity_id(o)? })
    };
    lookup().ok_or_else(|| Error::InvalidTriple(format!("{s}|{r}|{o} is not in the graph")))
}

fn write_examples(path: &Path, g: &KnowledgeGraph, examples: &[QAExample]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for ex in examples {
        let rec = ExampleRecord {
            question: ex.question.clone(),
            anchors: ex.anchors.clone(),
            gold_paths: ex.gold_paths.iter().map(|p| p.iter().map(|&id| names(g, id)).collect()).collect(),
            answers: ex.answers.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_examples(path: &Path, g: &KnowledgeGraph) -> Result<Vec<QAExample>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExampleRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        let gold_paths = rec
            .gold_paths
            .iter()
            .map(|p| p.iter().map(|t| resolve(g, t)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        out.push(QAExample { question: rec.question, anchors: rec.anchors, gold_paths, answers: rec.answers });
    }
    Ok(out)
}

/// Writes `kb.txt`, `train.jsonl` and `eval.jsonl` under `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let g = &ds.graph;
    let mut kb = String::new();
    for t in g.triples() {
        kb.push_str(&format!("{}|{}|{}\n", g.entity_name(t.subject), g.relation_name(t.relation), g.entity_name(t.object)));
    }
    fs::write(dir.join(KB_FILE), kb)?;
    write_examples(&dir.join(TRAIN_FILE), g, &ds.train)?;
    write_examples(&dir.join(EVAL_FILE), g, &ds.eval)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let graph = load_triples(&fs::read_to_string(dir.join(KB_FILE))?)?;
    let train = read_examples(&dir.join(TRAIN_FILE), &graph)?;
    let eval = read_examples(&dir.join(EVAL_FILE), &graph)?;
    Ok(Dataset { graph: Arc::new(graph), train, eval })
}

/// Materialises the dataset a config names.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match spec {
        DatasetSpec::Synthetic(cfg) => generate_tasks(cfg),
        DatasetSpec::Dir { path } => read_dataset(path),
        DatasetSpec::Metaqa { kb, train, eval, hop } => {
            let graph = load_triples(&fs::read_to_string(kb)?)?;
            let (train_ex, ts) = load_questions(&graph, &fs::read_to_string(train)?, *hop);
            let (eval_ex, es) = load_questions(&graph, &fs::read_to_string(eval)?, *hop);
            info!("questions kept: train {}/{}, eval {}/{}", ts.kept, ts.total, es.kept, es.total);
            if train_ex.is_empty() || eval_ex.is_empty() {
                return Err(Error::Config("no usable questions after loading".into()));
            }
            Ok(Dataset { graph: Arc::new(graph), train: train_ex, eval: eval_ex })
        }
    }
}
