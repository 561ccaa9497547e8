//! Overlay evaluation: each violated rule yields a [`Descriptor`] with a
//! deviation score in [0, 1].

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::config::{fmt_number, Comparator, Feature, OverlayRule, RuleSet, Threshold};
use crate::extract::FeatureVector;

const SCALE_FLOOR: f64 = 1e-9;
pub const URGENT_PREFIX: &str = "urgent: ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub rule_id: String,
    pub feature: Feature,
    pub text: String,
    pub deviation: f64,
    pub urgent: bool,
    pub priority: u32,
}

/// Distance from `v` to the compliant region, normalized by the threshold
/// (or the range width) and capped at 1. `None` when `v` complies.
fn deviation(comparator: Comparator, threshold: Threshold, v: f64) -> Option<f64> {
    let (overshoot, scale) = match (comparator, threshold) {
        (Comparator::AtMost, Threshold::Value(t)) => (v - t, t.abs()),
        (Comparator::AtLeast, Threshold::Value(t)) => (t - v, t.abs()),
        (Comparator::WithinRange, Threshold::Range([lo, hi])) => {
            let over = if v < lo {
                lo - v
            } else if v > hi {
                v - hi
            } else {
                0.0
            };
            (over, hi - lo)
        }
        // Validated rules never pair a comparator with the wrong threshold
        // shape.
        _ => return None,
    };
    if overshoot <= 0.0 {
        return None;
    }
    Some((overshoot / scale.max(SCALE_FLOOR)).min(1.0))
}

fn render(rule: &OverlayRule, value: f64, urgent: bool) -> String {
    let body = rule
        .descriptor_template
        .replace("{feature}", rule.feature.as_str())
        .replace("{value}", &fmt_number(value))
        .replace("{threshold}", &rule.threshold.to_string());
    if urgent {
        format!("{URGENT_PREFIX}{body}")
    } else {
        body
    }
}

/// Checks one rule. Returns `None` when the selected feature value satisfies
/// the comparator.
pub fn evaluate_rule(rule: &OverlayRule, features: &FeatureVector) -> Option<Descriptor> {
    let value = features.value(rule.feature);
    let deviation = deviation(rule.comparator, rule.threshold, value)?;
    let urgent = deviation >= rule.urgent_threshold;
    Some(Descriptor {
        rule_id: rule.id.clone(),
        feature: rule.feature,
        text: render(rule, value, urgent),
        deviation,
        urgent,
        priority: rule.priority,
    })
}

/// Total order used for descriptors: urgent first, then larger deviation,
/// then lower priority number, then rule id.
pub fn descriptor_order(a: &Descriptor, b: &Descriptor) -> Ordering {
    b.urgent
        .cmp(&a.urgent)
        .then_with(|| b.deviation.total_cmp(&a.deviation))
        .then_with(|| a.priority.cmp(&b.priority))
        .then_with(|| a.rule_id.cmp(&b.rule_id))
}

pub fn evaluate_all(rules: &RuleSet, features: &FeatureVector) -> Vec<Descriptor> {
    let mut out: Vec<Descriptor> = rules
        .rules()
        .iter()
        .filter_map(|r| evaluate_rule(r, features))
        .collect();
    out.sort_by(descriptor_order);
    out
}
