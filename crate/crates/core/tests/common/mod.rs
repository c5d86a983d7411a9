//! Brute-force reference implementations computed straight from instance lists.
//! Nothing here calls into the crate's metric code.
#![allow(dead_code)]

use rand::Rng;

/// Labels are plain strings here; `no` is the NO_RELATION sentinel.
pub fn oracle_accuracy(gold: &[String], pred: &[String]) -> f64 {
    let mut correct = 0usize;
    for i in 0..gold.len() {
        if gold[i] == pred[i] {
            correct += 1;
        }
    }
    correct as f64 / gold.len() as f64
}

/// NO-excluded micro F1; `None` when neither gold nor predictions contain a relation.
pub fn oracle_micro_f1(gold: &[String], pred: &[String], no: &str) -> Option<f64> {
    let mut tp = 0usize;
    let mut guessed = 0usize;
    let mut actual = 0usize;
    for i in 0..gold.len() {
        if pred[i] != no {
            guessed += 1;
        }
        if gold[i] != no {
            actual += 1;
            if pred[i] == gold[i] {
                tp += 1;
            }
        }
    }
    if guessed == 0 && actual == 0 {
        return None;
    }
    let p = if guessed == 0 { 0.0 } else { tp as f64 / guessed as f64 };
    let r = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
    Some(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// One-vs-rest F1 and gold support of `label`.
pub fn oracle_class_f1(gold: &[String], pred: &[String], label: &str) -> (f64, usize) {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for i in 0..gold.len() {
        let g = gold[i] == label;
        let p = pred[i] == label;
        if g && p {
            tp += 1;
        } else if p {
            fp += 1;
        } else if g {
            fneg += 1;
        }
    }
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (f, tp + fneg)
}

/// Filtered-set accuracy after dropping correct NO_RELATION predictions.
pub fn oracle_strict_f1(gold: &[String], pred: &[String], no: &str) -> Option<f64> {
    let mut kept = 0usize;
    let mut correct = 0usize;
    for i in 0..gold.len() {
        if gold[i] == no && pred[i] == no {
            continue;
        }
        kept += 1;
        if gold[i] == pred[i] {
            correct += 1;
        }
    }
    if kept == 0 {
        None
    } else {
        Some(correct as f64 / kept as f64)
    }
}

pub const NO: &str = "no_relation";

/// Label set of size `k` (2..=22) with NO_RELATION first.
pub fn label_names(k: usize) -> Vec<String> {
    let mut v = vec![NO.to_string()];
    v.extend((1..k).map(|i| format!("rel_{i:02}")));
    v
}

/// Random (gold, pred, labels) case: n in 1..=200, up to 22 labels, NO_RELATION
/// in the label set and biased to appear often.
pub fn random_case<R: Rng>(rng: &mut R) -> (Vec<String>, Vec<String>, Vec<String>) {
    let k = rng.gen_range(2..=22);
    let n = rng.gen_range(1..=200);
    let labels = label_names(k);
    let draw = |rng: &mut R| {
        if rng.gen_bool(0.4) {
            labels[0].clone()
        } else {
            labels[rng.gen_range(0..k)].clone()
        }
    };
    let gold: Vec<String> = (0..n).map(|_| draw(rng)).collect();
    let pred: Vec<String> = gold
        .iter()
        .map(|g| if rng.gen_bool(0.5) { g.clone() } else { draw(rng) })
        .collect();
    (gold, pred, labels)
}
