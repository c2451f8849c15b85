mod common;

use tabclar::bio::SlotBinding;
use tabclar::corpus::QueryResult;
use tabclar::dialogue::DialogueState;
use tabclar::instance::QAInstance;
use tabclar::labels::{Category, ConditionLabel};
use tabclar::llm::{Matcher, MockRule, ScriptedMock, Stage};
use tabclar::registry::DomainRef;
use tabclar::retrieval::{retrieve, Method, RetrievalIndex, Summarizer};
use tabclar::simulator::Simulator;
use tabclar::sqlgen::{
    detect_condition_underspec, validate_attempt, ConditionSource, LlmSqlGen, ReferenceSqlGen, SqlBank, SqlGenerator,
    SqlStage, Verdict,
};

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Question slots plus every clarified value, keyed by slot key.
fn resolved_slots(d: &common::Demo, inst: &QAInstance) -> SlotBinding {
    let reg = d.corpus.slots().unwrap();
    let mut s = inst.question_slots();
    for (label, v) in inst.from_clarification.iter().chain(&inst.where_clarification) {
        s.insert(reg.resolve(label).unwrap().to_string(), v.clone());
    }
    s
}

fn of(ds: &[QAInstance], c: Category) -> Vec<&QAInstance> {
    ds.iter().filter(|i| i.category == c).collect()
}

#[test]
fn reference_sql_matches_gold_once_resolved() {
    let d = common::demo();
    let ds = common::demo_dataset(&d);
    let gen = ReferenceSqlGen { pack: &d.pack };
    let mut n = 0;
    for inst in ds.instances.iter().filter(|i| !i.intent_underspec) {
        let sql = gen.generate(
            &DialogueState::new(&inst.question),
            &inst.intents,
            DomainRef::Known(inst.domain),
            &resolved_slots(&d, inst),
            &inst.gold_captions,
        );
        assert_eq!(squash(&sql), squash(&inst.gold_sql), "{}", inst.id);
        let a = validate_attempt(
            &sql,
            DomainRef::Known(inst.domain),
            &resolved_slots(&d, inst),
            &d.corpus,
        );
        assert_eq!(a.verdict, Verdict::Success, "{}", inst.id);
        n += 1;
    }
    assert!(n > 50);
}

#[test]
fn scripted_and_malformed_model_sql() {
    let d = common::demo();
    let ds = common::demo_dataset(&d);
    let inst = &of(&ds.instances, Category::Specified)[0];
    let bank = SqlBank::new();
    let slots = inst.question_slots();
    let dom = DomainRef::Known(inst.domain);
    let state = DialogueState::new(&inst.question);

    let gold = ScriptedMock::new(vec![MockRule {
        stage: Stage::Sqlgen,
        matcher: Matcher::Any,
        response: format!("```sql\n{};\n```", inst.gold_sql),
    }])
    .unwrap();
    let sql = LlmSqlGen {
        llm: &gold,
        bank: &bank,
    }
    .generate(&state, &inst.intents, dom, &slots, &inst.gold_captions);
    assert_eq!(sql, inst.gold_sql);

    let broken = ScriptedMock::new(vec![MockRule {
        stage: Stage::Sqlgen,
        matcher: Matcher::Any,
        response: "SELEC price FROM nowhere WHERE".into(),
    }])
    .unwrap();
    let gen = LlmSqlGen {
        llm: &broken,
        bank: &bank,
    };
    let sim = Simulator::fixed();
    let stage = SqlStage {
        generator: &gen,
        corpus: &d.corpus,
        sim: &sim,
        clarify: true,
    };
    let mut state = DialogueState::new(&inst.question);
    let out = stage.run(
        &mut state,
        inst,
        &inst.intents,
        dom,
        &slots,
        &inst.gold_captions,
        ConditionSource::Reference,
    );
    assert_eq!(out.attempts.len(), 1);
    assert_eq!(out.attempts[0].verdict, Verdict::ExecError);
    assert!(!out.executed());
}

#[test]
fn attempt_verdicts() {
    let d = common::demo();
    let ds = common::demo_dataset(&d);
    let inst = &of(&ds.instances, Category::Specified)[0];
    let dom = DomainRef::Known(inst.domain);
    let slots = inst.question_slots();
    assert_eq!(
        validate_attempt(&inst.gold_sql, dom, &slots, &d.corpus).verdict,
        Verdict::Success
    );

    let a = validate_attempt(
        &format!("SELECT no_such_column FROM \"{}\"", inst.gold_captions[0]),
        dom,
        &slots,
        &d.corpus,
    );
    assert_eq!(a.verdict, Verdict::ExecError);
    assert!(a.result.rows().is_none());
    assert!(format!("{:?}", a.result).contains("no_such_column"));

    let a = validate_attempt("", dom, &slots, &d.corpus);
    assert_eq!(a.result, QueryResult::error("no SQL generated"));

    let a = validate_attempt(
        &format!("SELECT * FROM \"{}\" WHERE 1 = 0", inst.gold_captions[0]),
        dom,
        &slots,
        &d.corpus,
    );
    assert_eq!(a.verdict, Verdict::EmptyOrPartial);
    // every value is real, so nothing to blame
    assert!(detect_condition_underspec(&a, &slots, dom, &d.corpus).is_empty());
}

#[test]
fn abbreviated_names_yield_the_gold_condition_label() {
    let d = common::demo();
    let ds = common::demo_dataset(&d);
    let gen = ReferenceSqlGen { pack: &d.pack };
    let wheres = of(&ds.instances, Category::Where);
    assert_eq!(wheres.len(), 16);
    let mut markers = 0;
    for inst in wheres {
        let dom = DomainRef::Known(inst.domain);
        let slots = inst.question_slots();
        let sql = gen.generate(
            &DialogueState::new(&inst.question),
            &inst.intents,
            dom,
            &slots,
            &inst.gold_captions,
        );
        let a = validate_attempt(&sql, dom, &slots, &d.corpus);
        assert_eq!(a.verdict, Verdict::EmptyOrPartial, "{}", inst.id);
        let labels = detect_condition_underspec(&a, &slots, dom, &d.corpus);
        assert_eq!(labels, inst.condition_labels, "{}", inst.id);
        markers += labels.iter().filter(|l| l.marker() == "not exist").count();
    }
    assert!(markers >= 16);
    let l = ConditionLabel::new("ABC Technology", "enterprise name").unwrap();
    assert_eq!(l.marker(), "not exist");
}

#[test]
fn sql_stage_paths() {
    let d = common::demo();
    let ds = common::demo_dataset(&d);
    let gen = ReferenceSqlGen { pack: &d.pack };
    let sim = Simulator::fixed();
    let stage = SqlStage {
        generator: &gen,
        corpus: &d.corpus,
        sim: &sim,
        clarify: true,
    };
    let run = |inst: &QAInstance, source| {
        let mut state = DialogueState::new(&inst.question);
        stage.run(
            &mut state,
            inst,
            &inst.intents,
            DomainRef::Known(inst.domain),
            &inst.question_slots(),
            &inst.gold_captions,
            source,
        )
    };

    for inst in of(&ds.instances, Category::Where) {
        let out = run(inst, ConditionSource::Reference);
        assert_eq!(out.attempts.len(), 2, "{}", inst.id);
        assert_eq!(out.attempts[1].verdict, Verdict::Success, "{}", inst.id);
        assert_eq!(out.final_result, inst.gold_answer, "{}", inst.id);
        assert_eq!(out.condition_labels_emitted, inst.condition_labels);
    }

    let inst = of(&ds.instances, Category::Where)[0];
    let wrong = ConditionLabel::new(&inst.condition_labels[0].slot_content, "no such slot").unwrap();
    let out = run(inst, ConditionSource::Given(vec![wrong]));
    assert_eq!(out.attempts.len(), 2);
    assert_eq!(out.attempts[0].sql, out.attempts[1].sql);
    assert_eq!(out.final_result, QueryResult::empty());

    let inst = of(&ds.instances, Category::Specified)[0];
    let out = run(inst, ConditionSource::Reference);
    assert_eq!(out.attempts.len(), 1);
    assert_eq!(out.final_result, inst.gold_answer);
    assert!(out.condition_labels_emitted.is_empty());
}

struct Scripted(Option<String>);

impl Summarizer for Scripted {
    fn summarize(&self, _: &DialogueState, _: &[String], _: &SlotBinding) -> Option<String> {
        self.0.clone()
    }
}

#[test]
fn retrieval_methods() {
    let d = common::demo();
    let ds = common::demo_dataset(&d);
    let index = RetrievalIndex::build(&d.corpus, 1.2, 0.75);
    let mut within_three = 0;
    let specified = of(&ds.instances, Category::Specified);
    for inst in &specified {
        let dom = DomainRef::Known(inst.domain);
        let gold = inst.gold_captions[0].clone();
        let go = |s: Option<String>| {
            let mut state = DialogueState::new(&inst.question);
            retrieve(
                &mut state,
                &inst.intents,
                &inst.question_slots(),
                dom,
                &d.corpus,
                &index,
                &Scripted(s),
            )
        };
        let exact = go(Some(gold.clone()));
        assert_eq!((exact.method, exact.top()), (Method::Exact, Some(gold.as_str())));
        assert_eq!(go(None).method, Method::Bm25Dialogue);
        // drop the last character of the caption
        let mut near = gold.clone();
        near.pop();
        let r = go(Some(format!("{near} table")));
        assert_eq!(r.method, Method::Bm25Summary);
        if r.captions.iter().take(3).any(|c| *c == gold) {
            within_three += 1;
        }
    }
    assert_eq!(within_three, specified.len());
}
