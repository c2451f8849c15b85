mod common;

use std::path::Path;

use proptest::prelude::*;

use tabclar::templates::parse_template;

#[test]
fn demo_templates_round_trip() {
    let d = common::demo();
    for t in d.pack.templates() {
        assert_eq!(&parse_template(&t.to_json()).unwrap(), t, "{}", t.id);
    }
}

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,8}"
}

proptest! {
    #[test]
    fn parsed_templates_survive_serialization(
        words in prop::collection::vec(word(), 1..6),
        slots in prop::sample::subsequence(vec!["City", "District", "Year", "Month"], 0..=4),
        caption_slots in prop::sample::subsequence(vec!["City", "District"], 0..=2),
    ) {
        let mut question = words.join(" ");
        for s in &slots {
            question.push_str(&format!(" {{{s}}}"));
        }
        let caption = caption_slots.iter().map(|s| format!("{{{s}}}")).chain(["Sales".to_string()]).collect::<Vec<_>>().join(" ");
        let filters: Vec<String> = slots.iter().map(|s| format!("{} = '{{{s}}}'", s.to_lowercase())).collect();
        let mut sql = format!("SELECT avg_price FROM \"{caption}\"");
        if !filters.is_empty() {
            sql.push_str(&format!(" WHERE {}", filters.join(" AND ")));
        }
        let raw = serde_json::json!({
            "id": words[0],
            "question_template": question,
            "sql_template": sql,
            "select_clarification": {},
            "from_clarification": caption,
            "intents": ["price_query"],
            "domain": "property",
            "underspec_class": "specified"
        })
        .to_string();
        let t = parse_template(&raw).unwrap();
        let again = parse_template(&t.to_json()).unwrap();
        prop_assert_eq!(&again, &t);
        prop_assert_eq!(again.to_json(), t.to_json());
    }
}

fn rust_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            rust_files(&p, out);
        } else if p.extension().is_some_and(|x| x == "rs") {
            out.push(p);
        }
    }
}

#[test]
fn only_the_model_client_talks_http() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let mut files = Vec::new();
    rust_files(&root.join("src"), &mut files);
    rust_files(&root.join("../cli/src"), &mut files);
    let offenders: Vec<_> = files
        .iter()
        .filter(|p| !p.ends_with("llm.rs"))
        .filter(|p| std::fs::read_to_string(p).unwrap().contains("ureq"))
        .collect();
    assert!(offenders.is_empty(), "{offenders:?}");
}
