//! Detection, retrieval and SQL metrics.

use std::cmp::Ordering;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{QueryResult, Value};
use crate::labels::{ConditionLabel, ScopeErrorType, ScopeLabel};

/// Predicted and gold labels of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub gold_intent: bool,
    pub pred_intent: bool,
    pub gold_scope: Vec<ScopeLabel>,
    pub pred_scope: Vec<ScopeLabel>,
    pub gold_condition: Vec<ConditionLabel>,
    pub pred_condition: Vec<ConditionLabel>,
}

fn same_set<T: PartialEq>(a: &[T], b: &[T]) -> bool {
    a.iter().all(|x| b.contains(x)) && b.iter().all(|x| a.contains(x))
}

impl DetectionOutcome {
    pub fn intent_correct(&self) -> bool {
        self.gold_intent == self.pred_intent
    }

    pub fn scope_correct(&self) -> bool {
        same_set(&self.gold_scope, &self.pred_scope)
    }

    pub fn condition_correct(&self) -> bool {
        same_set(&self.gold_condition, &self.pred_condition)
    }

    pub fn mixed_correct(&self) -> bool {
        self.intent_correct() && self.scope_correct() && self.condition_correct()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub select_acc: f64,
    /// `None` when no instance has the clause underspecified.
    pub select_f1: Option<f64>,
    pub from_acc: f64,
    pub from_f1: Option<f64>,
    pub where_acc: f64,
    pub where_f1: Option<f64>,
    pub mixed_acc: f64,
}

fn frac(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Confusion {
    fn f1(self) -> Option<f64> {
        let d = 2 * self.tp + self.fp + self.fn_;
        (d > 0).then(|| 2.0 * self.tp as f64 / d as f64)
    }

    fn add<T: PartialEq>(&mut self, gold: &[T], pred: &[T]) {
        self.tp += pred.iter().filter(|p| gold.contains(p)).count();
        self.fp += pred.iter().filter(|p| !gold.contains(p)).count();
        self.fn_ += gold.iter().filter(|g| !pred.contains(g)).count();
    }
}

/// Accuracy counts exact label-set matches over every instance. F1 looks
/// only at instances whose gold has the clause underspecified: binary for
/// the intent, label-level for conditions, and label-level macro over
/// Missing/Error/Unmatch for scope (classes with no gold or predicted
/// label are skipped).
pub fn score_detection(outcomes: &[DetectionOutcome]) -> DetectionScores {
    let n = outcomes.len();
    let count = |f: fn(&DetectionOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count();

    let positives: Vec<&DetectionOutcome> = outcomes.iter().filter(|o| o.gold_intent).collect();
    let select_f1 = (!positives.is_empty()).then(|| {
        let tp = positives.iter().filter(|o| o.pred_intent).count();
        Confusion {
            tp,
            fp: 0,
            fn_: positives.len() - tp,
        }
        .f1()
        .unwrap_or(0.0)
    });

    let scoped: Vec<&DetectionOutcome> = outcomes.iter().filter(|o| !o.gold_scope.is_empty()).collect();
    let from_f1 = (!scoped.is_empty()).then(|| {
        let per_class: Vec<f64> = ScopeErrorType::ALL
            .iter()
            .filter_map(|c| {
                let mut m = Confusion::default();
                for o in &scoped {
                    let g: Vec<&ScopeLabel> = o.gold_scope.iter().filter(|l| l.error_type == *c).collect();
                    let p: Vec<&ScopeLabel> = o.pred_scope.iter().filter(|l| l.error_type == *c).collect();
                    m.add(&g, &p);
                }
                m.f1()
            })
            .collect();
        if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().sum::<f64>() / per_class.len() as f64
        }
    });

    let conditioned: Vec<&DetectionOutcome> = outcomes.iter().filter(|o| !o.gold_condition.is_empty()).collect();
    let where_f1 = (!conditioned.is_empty()).then(|| {
        let mut m = Confusion::default();
        for o in &conditioned {
            m.add(&o.gold_condition, &o.pred_condition);
        }
        m.f1().unwrap_or(0.0)
    });

    DetectionScores {
        select_acc: frac(count(DetectionOutcome::intent_correct), n),
        select_f1,
        from_acc: frac(count(DetectionOutcome::scope_correct), n),
        from_f1,
        where_acc: frac(count(DetectionOutcome::condition_correct), n),
        where_f1,
        mixed_acc: frac(count(DetectionOutcome::mixed_correct), n),
    }
}

pub fn set_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut m = Confusion::default();
    m.add(gold, pred);
    m.f1().unwrap_or(0.0)
}

/// Mean per-instance set F1.
pub fn score_retrieval(pred: &[Vec<String>], gold: &[Vec<String>]) -> f64 {
    assert_eq!(pred.len(), gold.len(), "prediction and gold counts differ");
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(gold).map(|(p, g)| set_f1(p, g)).sum::<f64>() / pred.len() as f64
}

static ORDER_BY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\border\s+by\b").unwrap());

pub fn is_ordered(sql: &str) -> bool {
    ORDER_BY.is_match(sql)
}

fn cmp_rows(a: &[Value], b: &[Value]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.canonical_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Rows with columns put in header-name order.
fn by_header(header: &[String], rows: &[Vec<Value>]) -> (Vec<String>, Vec<Vec<Value>>) {
    let mut idx: Vec<usize> = (0..header.len()).collect();
    idx.sort_by(|&a, &b| header[a].cmp(&header[b]).then(a.cmp(&b)));
    let h = idx.iter().map(|&i| header[i].clone()).collect();
    let r = rows
        .iter()
        .map(|row| idx.iter().map(|&i| row[i].clone()).collect())
        .collect();
    (h, r)
}

/// Same columns by name and same rows as a multiset; row order matters
/// only when `ordered`.
pub fn results_match(pred: &QueryResult, gold: &QueryResult, ordered: bool) -> bool {
    let (Some((ph, pr)), Some((gh, gr))) = (pred.rows(), gold.rows()) else {
        return false;
    };
    if pr.len() != gr.len() {
        return false;
    }
    let (ph, mut pr) = by_header(ph, pr);
    let (gh, mut gr) = by_header(gh, gr);
    if ph != gh {
        return false;
    }
    if !ordered {
        pr.sort_by(|a, b| cmp_rows(a, b));
        gr.sort_by(|a, b| cmp_rows(a, b));
    }
    pr.iter().zip(&gr).all(|(a, b)| cmp_rows(a, b).is_eq())
}

/// Inputs to the SQL metrics for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlOutcome {
    /// The last SQL ran without an engine error.
    pub executed: bool,
    pub final_result: QueryResult,
    pub gold_answer: QueryResult,
    pub gold_ordered: bool,
}

impl SqlOutcome {
    pub fn accurate(&self) -> bool {
        results_match(&self.final_result, &self.gold_answer, self.gold_ordered)
    }
}

/// (ECR, EA).
pub fn score_sql(outcomes: &[SqlOutcome]) -> (f64, f64) {
    let n = outcomes.len();
    (
        frac(outcomes.iter().filter(|o| o.executed).count(), n),
        frac(outcomes.iter().filter(|o| o.accurate()).count(), n),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(h: &[&str], r: Vec<Vec<Value>>) -> QueryResult {
        QueryResult::Rows {
            header: h.iter().map(|s| s.to_string()).collect(),
            rows: r,
        }
    }

    #[test]
    fn permuted_rows_and_columns_match_without_order_by() {
        let g = rows(
            &["a", "b"],
            vec![
                vec![Value::Integer(1), Value::Text("x".into())],
                vec![Value::Integer(2), Value::Text("y".into())],
            ],
        );
        let p = rows(
            &["b", "a"],
            vec![
                vec![Value::Text("y".into()), Value::Integer(2)],
                vec![Value::Text("x".into()), Value::Integer(1)],
            ],
        );
        assert!(results_match(&p, &g, false));
        assert!(!results_match(&p, &g, true));
        assert!(!results_match(&QueryResult::error("x"), &g, false));
    }

    #[test]
    fn one_of_two_gold_captions() {
        let f = set_f1(&["a".into()], &["a".into(), "b".into()]);
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn order_by_detection() {
        assert!(is_ordered("select a from t Order  By a"));
        assert!(!is_ordered("select border_by from t"));
    }
}
