mod common;

use tabclar::genpipe::{generate_dataset, Counts, GenError};
use tabclar::instance::write_jsonl;
use tabclar::labels::{Category, ScopeErrorType};

#[test]
fn demo_counts_and_splits() {
    let d = common::demo();
    let ds = common::demo_dataset(&d);
    assert_eq!(ds.instances.len(), 80);
    assert_eq!(ds.count(Category::Specified), 20);
    assert_eq!(ds.count(Category::Select), 4);
    assert_eq!(ds.count(Category::From), 12);
    assert_eq!(ds.count(Category::Where), 16);
    assert_eq!(ds.count(Category::Mixed), 28);
    assert_eq!(ds.split_sizes(), [48, 16, 16]);
    let from_kinds: Vec<ScopeErrorType> = ds
        .instances
        .iter()
        .filter(|i| i.category == Category::From)
        .map(|i| i.scope_labels[0].error_type)
        .collect();
    for k in ScopeErrorType::ALL {
        assert_eq!(from_kinds.iter().filter(|x| **x == k).count(), 4);
    }
    for (n, inst) in ds.instances.iter().enumerate() {
        assert_eq!(inst.id, format!("q{:04}", n + 1));
        inst.check().unwrap();
    }
}

#[test]
fn every_label_is_sound() {
    let d = common::demo();
    let ds = common::demo_dataset(&d);
    let failures = common::label_soundness(&d, &ds.instances);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn same_seed_same_bytes() {
    let d = common::demo();
    let bytes = || {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &common::demo_dataset(&d).instances).unwrap();
        buf
    };
    assert_eq!(bytes(), bytes());
    let mut other = common::demo_config();
    other.seed += 1;
    let mut buf = Vec::new();
    write_jsonl(
        &mut buf,
        &generate_dataset(&d.corpus, &d.pack, &other, None).unwrap().instances,
    )
    .unwrap();
    assert_ne!(buf, bytes());
}

#[test]
fn unreachable_stratum_is_a_shortfall() {
    let d = common::demo();
    let mut cfg = common::demo_config();
    cfg.max_attempts = 20;
    cfg.counts = Counts {
        specified: 0,
        select: 60,
        from: 0,
        where_: 0,
        mixed: 0,
    };
    match generate_dataset(&d.corpus, &d.pack, &cfg, None) {
        Err(GenError::Shortfall(s, partial)) => {
            assert_eq!(s.len(), 1);
            assert_eq!(s[0].category, Category::Select);
            assert!(s[0].got < 60);
            assert_eq!(partial.instances.len(), s[0].got);
        }
        other => panic!("expected a shortfall, got {:?}", other.map(|d| d.instances.len())),
    }
}
