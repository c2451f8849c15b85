#![allow(dead_code)]

use std::path::PathBuf;

use tabclar::corpus::TableCorpus;
use tabclar::genpipe::{generate_dataset, Counts, Dataset, DatasetConfig, SplitRatios};
use tabclar::instance::QAInstance;
use tabclar::labels::ScopeErrorType;
use tabclar::registry::DomainId;
use tabclar::registry::IntentRegistry;
use tabclar::templates::TemplatePack;

pub fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/demo")
}

pub struct Demo {
    pub corpus: TableCorpus,
    pub pack: TemplatePack,
    pub intents: IntentRegistry,
}

pub fn demo() -> Demo {
    let dir = demo_dir();
    let corpus = TableCorpus::load(&dir.join("manifest.json")).expect("demo corpus");
    let intents = IntentRegistry::load(&dir.join("intents.json")).expect("intents");
    let pack = TemplatePack::load(&dir.join("templates.json"), corpus.slots().unwrap(), &intents).expect("pack");
    Demo { corpus, pack, intents }
}

pub fn demo_config() -> DatasetConfig {
    DatasetConfig {
        counts: Counts {
            specified: 20,
            select: 4,
            from: 12,
            where_: 16,
            mixed: 28,
        },
        split: SplitRatios::default(),
        seed: 20240611,
        abbreviation: Default::default(),
        paraphrase: false,
        max_attempts: 200,
    }
}

pub fn demo_dataset(d: &Demo) -> Dataset {
    generate_dataset(&d.corpus, &d.pack, &demo_config(), None).expect("demo dataset")
}

fn fold(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Row scan over the columns mapped to `key`.
pub fn exists_in_rows(corpus: &TableCorpus, domain: DomainId, key: &str, value: &str) -> bool {
    let reg = corpus.slots().unwrap();
    let Some(cols) = reg.columns(key, domain) else {
        return false;
    };
    corpus.list_captions(domain).iter().any(|cap| {
        let schema = corpus.schema(cap).unwrap();
        let rows = corpus.table_rows(cap).unwrap();
        cols.iter()
            .filter_map(|c| schema.column_index(c))
            .any(|ci| rows.iter().any(|r| fold(&r[ci].render()) == fold(value)))
    })
}

/// Every way a generated label can be unsound, as messages.
pub fn label_soundness(d: &Demo, instances: &[QAInstance]) -> Vec<String> {
    let reg = d.corpus.slots().unwrap();
    let mut bad = Vec::new();
    for inst in instances {
        let dom = inst.domain;
        let caps: Vec<String> = d.corpus.list_captions(dom).iter().map(|c| fold(c)).collect();
        let q = inst.question_slots();
        for l in &inst.scope_labels {
            let key = reg.resolve(&l.slot_type).unwrap();
            match l.error_type {
                ScopeErrorType::Missing => {
                    if q.contains_key(key) {
                        bad.push(format!("{}: missing {key} is present", inst.id));
                    }
                }
                ScopeErrorType::Error => {
                    let v = fold(&l.slot_content);
                    if exists_in_rows(&d.corpus, dom, key, &l.slot_content) || caps.iter().any(|c| c.contains(&v)) {
                        bad.push(format!("{}: error value {:?} exists", inst.id, l.slot_content));
                    }
                }
                ScopeErrorType::Unmatch => {
                    let values: Vec<(String, String)> = d
                        .corpus
                        .required_scope_slots(dom)
                        .into_iter()
                        .filter_map(|t| q.get(&t).map(|v| (t.clone(), v.clone())))
                        .collect();
                    for (t, v) in &values {
                        if !exists_in_rows(&d.corpus, dom, t, v) {
                            bad.push(format!("{}: unmatch component {t}={v:?} does not exist", inst.id));
                        }
                    }
                    if values.len() < 2 || caps.iter().any(|c| values.iter().all(|(_, v)| c.contains(&fold(v)))) {
                        bad.push(format!("{}: unmatch values {values:?} co-occur", inst.id));
                    }
                }
            }
        }
        for l in &inst.condition_labels {
            let key = reg.resolve(&l.slot_type).unwrap();
            if exists_in_rows(&d.corpus, dom, key, &l.slot_content) {
                bad.push(format!("{}: condition value {:?} exists", inst.id, l.slot_content));
            }
        }
        if d.corpus.execute_in(dom, &inst.gold_sql) != inst.gold_answer {
            bad.push(format!("{}: gold SQL no longer yields the stored answer", inst.id));
        }
    }
    bad
}
