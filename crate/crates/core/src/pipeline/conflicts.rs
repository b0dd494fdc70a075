use log::warn;
use serde::{Deserialize, Serialize};

use crate::labels::{LabelKind, LabelSchema, LabelSet};

/// Pairs of label names that cannot be active together.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConflictTable {
    pub pairs: Vec<(String, String)>,
}

/// A conflict table resolved against a schema.
#[derive(Debug, Clone, Default)]
pub struct ResolvedConflicts {
    pairs: Vec<((LabelKind, usize), (LabelKind, usize))>,
}

impl ConflictTable {
    pub fn new<S: Into<String>>(pairs: impl IntoIterator<Item = (S, S)>) -> Self {
        Self { pairs: pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect() }
    }

    /// Names absent from the schema cannot fire and are skipped.
    pub fn resolve(&self, schema: &LabelSchema) -> ResolvedConflicts {
        let lookup = |name: &str| {
            schema
                .kind_of(name)
                .and_then(|k| schema.index_of(k, name).map(|i| (k, i)))
        };
        let mut pairs = Vec::new();
        for (a, b) in &self.pairs {
            match (lookup(a), lookup(b)) {
                (Some(x), Some(y)) => pairs.push((x, y)),
                _ => warn!("conflict pair ({a}, {b}) names a label outside the schema; ignored"),
            }
        }
        ResolvedConflicts { pairs }
    }
}

fn is_active(labels: &LabelSet, (kind, idx): (LabelKind, usize)) -> bool {
    let bits = match kind {
        LabelKind::Activity => &labels.activities,
        LabelKind::Context => &labels.contexts,
        LabelKind::User => &labels.user,
    };
    bits.get(idx).copied().unwrap_or(false)
}

impl ResolvedConflicts {
    /// `true` to keep the instance: no configured pair is jointly active.
    pub fn keep(&self, labels: &LabelSet) -> bool {
        !self
            .pairs
            .iter()
            .any(|&(a, b)| is_active(labels, a) && is_active(labels, b))
    }
}

/// Keep/drop decision for one label set.
pub fn filter_conflicts(labels: &LabelSet, schema: &LabelSchema, table: &ConflictTable) -> bool {
    table.resolve(schema).keep(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> LabelSchema {
        LabelSchema::new(
            vec!["sleeping".into(), "running".into(), "sitting".into(), "talking".into()],
            vec!["in_bag".into()],
            vec!["u0".into()],
        )
        .unwrap()
    }

    #[test]
    fn sleeping_while_running_dropped() {
        let s = schema();
        let t = ConflictTable::new([("sleeping", "running")]);
        let l = s
            .encode(&[(LabelKind::Activity, "sleeping"), (LabelKind::Activity, "running"), (LabelKind::User, "u0")])
            .unwrap();
        assert!(!filter_conflicts(&l, &s, &t));
    }

    #[test]
    fn unlisted_pair_kept() {
        let s = schema();
        let t = ConflictTable::new([("sleeping", "running")]);
        let l = s
            .encode(&[(LabelKind::Activity, "sitting"), (LabelKind::Activity, "talking"), (LabelKind::User, "u0")])
            .unwrap();
        assert!(filter_conflicts(&l, &s, &t));
    }

    #[test]
    fn empty_label_set_kept() {
        let s = schema();
        let t = ConflictTable::new([("sleeping", "running"), ("sitting", "in_bag")]);
        let l = s.encode(&[(LabelKind::User, "u0")]).unwrap();
        assert!(filter_conflicts(&l, &s, &t));
    }

    #[test]
    fn cross_kind_pairs() {
        let s = schema();
        let t = ConflictTable::new([("sitting", "in_bag"), ("nope", "sitting")]);
        let l = s
            .encode(&[(LabelKind::Activity, "sitting"), (LabelKind::Context, "in_bag"), (LabelKind::User, "u0")])
            .unwrap();
        assert!(!filter_conflicts(&l, &s, &t));
    }
}
