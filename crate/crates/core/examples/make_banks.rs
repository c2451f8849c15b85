//! Writes the few-shot example banks for the demo corpus:
//! five SQL examples per intent and five caption examples per intent.
//!
//!     cargo run -p tabclar-core --example make_banks

use std::path::PathBuf;

use tabclar::corpus::TableCorpus;
use tabclar::genpipe::{generate_dataset, Counts, DatasetConfig};
use tabclar::registry::IntentRegistry;
use tabclar::retrieval::{SummaryBank, SummaryExample};
use tabclar::sqlgen::{SqlBank, SqlExample};
use tabclar::templates::TemplatePack;

const PER_INTENT: usize = 5;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/demo");
    let corpus = TableCorpus::load(&dir.join("manifest.json"))?;
    let intents = IntentRegistry::load(&dir.join("intents.json"))?;
    let pack = TemplatePack::load(&dir.join("templates.json"), corpus.slots()?, &intents)?;
    let config = DatasetConfig {
        counts: Counts {
            specified: 120,
            select: 0,
            from: 0,
            where_: 0,
            mixed: 0,
        },
        split: Default::default(),
        // Distinct from the evaluation seed.
        seed: 7,
        abbreviation: Default::default(),
        paraphrase: false,
        max_attempts: 200,
    };
    let ds = generate_dataset(&corpus, &pack, &config, None)?;
    let mut sql = SqlBank::new();
    let mut summary = SummaryBank::new();
    for (intent, _) in intents.intents() {
        sql.insert(intent.to_string(), Vec::new());
        summary.insert(intent.to_string(), Vec::new());
    }
    for inst in &ds.instances {
        for intent in &inst.intents {
            let s = sql.get_mut(intent).expect("registered intent");
            if s.len() < PER_INTENT && !s.iter().any(|e| e.sql == inst.gold_sql) {
                s.push(SqlExample {
                    question: inst.question.clone(),
                    sql: inst.gold_sql.clone(),
                });
            }
            let c = summary.get_mut(intent).expect("registered intent");
            if c.len() < PER_INTENT {
                c.push(SummaryExample {
                    dialogue: format!("user: {}", inst.question),
                    caption: inst.gold_captions[0].clone(),
                });
            }
        }
    }
    // Intents with few distinct bindings borrow from the same domain.
    for (intent, domain) in intents.intents() {
        for inst in ds.instances.iter().filter(|i| i.domain == domain) {
            let s = sql.get_mut(intent).expect("registered intent");
            if s.len() < PER_INTENT && !s.iter().any(|e| e.sql == inst.gold_sql) {
                s.push(SqlExample {
                    question: inst.question.clone(),
                    sql: inst.gold_sql.clone(),
                });
            }
        }
    }
    for (intent, v) in &sql {
        if v.len() < PER_INTENT {
            return Err(format!("only {} SQL examples for {intent}", v.len()).into());
        }
    }
    let out = dir.join("prompts");
    std::fs::create_dir_all(&out)?;
    std::fs::write(
        out.join("sql_examples.json"),
        serde_json::to_string_pretty(&sql)? + "\n",
    )?;
    std::fs::write(
        out.join("summary_examples.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    println!("wrote {}", out.display());
    Ok(())
}
