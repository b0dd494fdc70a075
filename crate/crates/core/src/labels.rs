//! Label schema, multi-hot label sets and the pairing vectors used to form
//! positive/negative pairs for the contrastive loss.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Activity,
    Context,
    User,
}

impl LabelKind {
    pub const ALL: [LabelKind; 3] = [LabelKind::Activity, LabelKind::Context, LabelKind::User];

    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::Activity => "activity",
            LabelKind::Context => "context",
            LabelKind::User => "user",
        }
    }
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "activity" => Ok(LabelKind::Activity),
            "context" => Ok(LabelKind::Context),
            "user" => Ok(LabelKind::User),
            other => Err(Error::Schema(format!("unknown label kind `{other}`"))),
        }
    }
}

/// Which parts of a [`LabelSet`] enter the pairing dot product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PairingScope {
    #[serde(rename = "activity")]
    Activity,
    #[default]
    #[serde(rename = "activity+context")]
    ActivityContext,
    #[serde(rename = "all")]
    All,
}

impl FromStr for PairingScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "activity" => Ok(PairingScope::Activity),
            "activity+context" => Ok(PairingScope::ActivityContext),
            "all" => Ok(PairingScope::All),
            other => Err(Error::Config(format!("unknown pairing scope `{other}`"))),
        }
    }
}

/// Ordered label vocabularies. Index positions are fixed for a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    activity_names: Vec<String>,
    context_names: Vec<String>,
    user_ids: Vec<String>,
}

impl LabelSchema {
    pub fn new(
        activity_names: Vec<String>,
        context_names: Vec<String>,
        user_ids: Vec<String>,
    ) -> Result<Self> {
        for (kind, names) in [
            (LabelKind::Activity, &activity_names),
            (LabelKind::Context, &context_names),
            (LabelKind::User, &user_ids),
        ] {
            let mut seen = HashSet::new();
            for n in names {
                if !seen.insert(n.as_str()) {
                    return Err(Error::Schema(format!("duplicate {kind} label `{n}`")));
                }
            }
        }
        if user_ids.is_empty() {
            return Err(Error::Schema("schema needs at least one user".into()));
        }
        Ok(Self {
            activity_names,
            context_names,
            user_ids,
        })
    }

    pub fn names(&self, kind: LabelKind) -> &[String] {
        match kind {
            LabelKind::Activity => &self.activity_names,
            LabelKind::Context => &self.context_names,
            LabelKind::User => &self.user_ids,
        }
    }

    pub fn len(&self, kind: LabelKind) -> usize {
        self.names(kind).len()
    }

    pub fn num_activities(&self) -> usize {
        self.activity_names.len()
    }

    pub fn num_contexts(&self) -> usize {
        self.context_names.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn index_of(&self, kind: LabelKind, name: &str) -> Option<usize> {
        self.names(kind).iter().position(|n| n == name)
    }

    pub fn name_of(&self, kind: LabelKind, index: usize) -> Option<&str> {
        self.names(kind).get(index).map(String::as_str)
    }

    /// Finds which kind a bare label name belongs to, for conflict tables
    /// that list names without kinds.
    pub fn kind_of(&self, name: &str) -> Option<LabelKind> {
        LabelKind::ALL
            .into_iter()
            .find(|&k| self.index_of(k, name).is_some())
    }

    /// Builds the multi-hot [`LabelSet`] for the labels active in a window.
    pub fn encode<S: AsRef<str>>(&self, active: &[(LabelKind, S)]) -> Result<LabelSet> {
        let mut activities = vec![false; self.num_activities()];
        let mut contexts = vec![false; self.num_contexts()];
        let mut user = vec![false; self.num_users()];
        let mut users_seen = 0usize;
        for (kind, name) in active {
            let name = name.as_ref();
            let idx = self
                .index_of(*kind, name)
                .ok_or_else(|| Error::Schema(format!("unknown {kind} label `{name}`")))?;
            match kind {
                LabelKind::Activity => activities[idx] = true,
                LabelKind::Context => contexts[idx] = true,
                LabelKind::User => {
                    if !user[idx] {
                        users_seen += 1;
                    }
                    user[idx] = true;
                }
            }
        }
        if users_seen != 1 {
            return Err(Error::DataIntegrity(format!(
                "expected exactly one user label, found {users_seen}"
            )));
        }
        LabelSet::new(activities, contexts, user)
    }

    /// Inverse of [`encode`](Self::encode): the active names in schema order.
    pub fn decode(&self, labels: &LabelSet) -> Vec<(LabelKind, String)> {
        let mut out = Vec::new();
        for (kind, bits) in [
            (LabelKind::Activity, &labels.activities),
            (LabelKind::Context, &labels.contexts),
            (LabelKind::User, &labels.user),
        ] {
            for (i, &b) in bits.iter().enumerate() {
                if b {
                    out.push((kind, self.names(kind)[i].clone()));
                }
            }
        }
        out
    }

    /// Writes `label_kind,name,index` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        w.write_record(["label_kind", "name", "index"])
            .map_err(|e| Error::parse(path, e))?;
        for kind in LabelKind::ALL {
            for (i, name) in self.names(kind).iter().enumerate() {
                w.write_record([kind.as_str(), name.as_str(), &i.to_string()])
                    .map_err(|e| Error::parse(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
        let mut by_kind: BTreeMap<LabelKind, Vec<(usize, String)>> = BTreeMap::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::parse(path, e))?;
            if rec.len() != 3 {
                return Err(Error::parse(path, "expected 3 columns"));
            }
            let kind: LabelKind = rec[0].parse()?;
            let idx: usize = rec[2].trim().parse().map_err(|e| Error::parse(path, e))?;
            by_kind
                .entry(kind)
                .or_default()
                .push((idx, rec[1].to_string()));
        }
        let mut take = |kind| -> Result<Vec<String>> {
            let mut rows = by_kind.remove(&kind).unwrap_or_default();
            rows.sort_by_key(|(i, _)| *i);
            for (expect, (i, _)) in rows.iter().enumerate() {
                if *i != expect {
                    return Err(Error::parse(path, format!("{kind} indices are not 0..n")));
                }
            }
            Ok(rows.into_iter().map(|(_, n)| n).collect())
        };
        let a = take(LabelKind::Activity)?;
        let c = take(LabelKind::Context)?;
        let u = take(LabelKind::User)?;
        Self::new(a, c, u)
    }
}

/// Multi-hot activity and context labels plus a one-hot user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub activities: Vec<bool>,
    pub contexts: Vec<bool>,
    pub user: Vec<bool>,
}

impl LabelSet {
    pub fn new(activities: Vec<bool>, contexts: Vec<bool>, user: Vec<bool>) -> Result<Self> {
        let ones = user.iter().filter(|&&b| b).count();
        if ones != 1 {
            return Err(Error::DataIntegrity(format!(
                "user vector must be one-hot, has {ones} active entries"
            )));
        }
        Ok(Self {
            activities,
            contexts,
            user,
        })
    }

    pub fn user_index(&self) -> usize {
        self.user.iter().position(|&b| b).expect("one-hot user")
    }

    pub fn has_activity(&self, idx: usize) -> bool {
        self.activities.get(idx).copied().unwrap_or(false)
    }

    /// Binary vector whose pairwise dot products decide positive pairs.
    pub fn pairing_vector(&self, scope: PairingScope) -> Vec<bool> {
        let mut v = self.activities.clone();
        if matches!(scope, PairingScope::ActivityContext | PairingScope::All) {
            v.extend_from_slice(&self.contexts);
        }
        if scope == PairingScope::All {
            v.extend_from_slice(&self.user);
        }
        v
    }
}

pub fn pairing_dim(schema: &LabelSchema, scope: PairingScope) -> usize {
    match scope {
        PairingScope::Activity => schema.num_activities(),
        PairingScope::ActivityContext => schema.num_activities() + schema.num_contexts(),
        PairingScope::All => {
            schema.num_activities() + schema.num_contexts() + schema.num_users()
        }
    }
}

/// Stacks pairing vectors into a `batch × dim` 0/1 matrix.
pub fn pairing_matrix<'a, I>(labels: I, scope: PairingScope) -> Array2<f64>
where
    I: IntoIterator<Item = &'a LabelSet>,
{
    let rows: Vec<Vec<bool>> = labels
        .into_iter()
        .map(|l| l.pairing_vector(scope))
        .collect();
    let dim = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), dim), |(i, j)| f64::from(u8::from(rows[i][j])))
}

/// Stacks one head's bits into an `n × c` 0/1 matrix.
pub fn head_matrix<'a, I>(labels: I, kind: LabelKind) -> Array2<f64>
where
    I: IntoIterator<Item = &'a LabelSet>,
{
    let rows: Vec<&[bool]> = labels
        .into_iter()
        .map(|l| match kind {
            LabelKind::Activity => l.activities.as_slice(),
            LabelKind::Context => l.contexts.as_slice(),
            LabelKind::User => l.user.as_slice(),
        })
        .collect();
    let dim = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), dim), |(i, j)| f64::from(u8::from(rows[i][j])))
}

/// A labelled time span from an annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub start_s: f64,
    pub end_s: f64,
    pub name: String,
    pub kind: LabelKind,
}

/// Labels whose annotations jointly cover more than half of
/// `[start, end)`. Overlapping spans of the same label are merged first.
pub fn active_labels(annotations: &[Annotation], start: f64, end: f64) -> Vec<(LabelKind, String)> {
    let duration = end - start;
    if duration <= 0.0 {
        return Vec::new();
    }
    let mut spans: BTreeMap<(LabelKind, &str), Vec<(f64, f64)>> = BTreeMap::new();
    for a in annotations {
        let lo = a.start_s.max(start);
        let hi = a.end_s.min(end);
        if hi > lo {
            spans.entry((a.kind, a.name.as_str())).or_default().push((lo, hi));
        }
    }
    let mut out = Vec::new();
    for ((kind, name), mut iv) in spans {
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut covered = 0.0;
        let (mut cur_lo, mut cur_hi) = iv[0];
        for &(lo, hi) in &iv[1..] {
            if lo <= cur_hi {
                cur_hi = cur_hi.max(hi);
            } else {
                covered += cur_hi - cur_lo;
                cur_lo = lo;
                cur_hi = hi;
            }
        }
        covered += cur_hi - cur_lo;
        if covered > 0.5 * duration {
            out.push((kind, name.to_string()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn schema_12_3_5() -> LabelSchema {
        let mut acts = names("act", 12);
        acts[4] = "walking".into();
        acts[7] = "sitting".into();
        acts[8] = "talking_on_phone".into();
        let ctx = vec!["in_bag".into(), "in_hand".into(), "in_pocket".into()];
        LabelSchema::new(acts, ctx, names("user_", 5)).unwrap()
    }

    #[test]
    fn encode_single_activity() {
        let s = schema_12_3_5();
        let l = s
            .encode(&[
                (LabelKind::Activity, "walking"),
                (LabelKind::Context, "in_pocket"),
                (LabelKind::User, "user_3"),
            ])
            .unwrap();
        assert_eq!(l.activities.iter().filter(|&&b| b).count(), 1);
        assert!(l.activities[4]);
        assert_eq!(l.contexts, vec![false, false, true]);
        assert_eq!(l.user_index(), 3);
        assert_eq!(l.user.len(), 5);
    }

    #[test]
    fn encode_multi_label() {
        let s = schema_12_3_5();
        let l = s
            .encode(&[
                (LabelKind::Activity, "sitting"),
                (LabelKind::Activity, "talking_on_phone"),
                (LabelKind::Context, "in_hand"),
                (LabelKind::User, "user_0"),
            ])
            .unwrap();
        assert_eq!(l.activities.iter().filter(|&&b| b).count(), 2);
    }

    #[test]
    fn encode_without_activities_keeps_instance() {
        let s = schema_12_3_5();
        let l = s.encode(&[(LabelKind::User, "user_1")]).unwrap();
        assert!(l.activities.iter().all(|&b| !b));
        assert!(l
            .pairing_vector(PairingScope::ActivityContext)
            .iter()
            .all(|&b| !b));
    }

    #[test]
    fn encode_errors() {
        let s = schema_12_3_5();
        assert!(matches!(
            s.encode(&[(LabelKind::Activity, "flying"), (LabelKind::User, "user_0")]),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            s.encode(&[(LabelKind::Activity, "walking")]),
            Err(Error::DataIntegrity(_))
        ));
        assert!(matches!(
            s.encode(&[(LabelKind::User, "user_0"), (LabelKind::User, "user_1")]),
            Err(Error::DataIntegrity(_))
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(LabelSchema::new(vec!["a".into(), "a".into()], vec![], vec!["u".into()]).is_err());
    }

    #[test]
    fn pairing_vector_concatenates_activities_and_contexts() {
        let l = LabelSet::new(vec![true, false], vec![false, true], vec![true, false, false]).unwrap();
        assert_eq!(
            l.pairing_vector(PairingScope::ActivityContext),
            vec![true, false, false, true]
        );
        assert_eq!(l.pairing_vector(PairingScope::Activity), vec![true, false]);
        assert_eq!(l.pairing_vector(PairingScope::All).len(), 7);
    }

    #[test]
    fn same_user_disjoint_labels_is_negative_pair() {
        let a = LabelSet::new(vec![true, false], vec![true, false], vec![true, false]).unwrap();
        let b = LabelSet::new(vec![false, true], vec![false, true], vec![true, false]).unwrap();
        let dot = |x: &[bool], y: &[bool]| x.iter().zip(y).filter(|(p, q)| **p && **q).count();
        let scope = PairingScope::ActivityContext;
        assert_eq!(dot(&a.pairing_vector(scope), &b.pairing_vector(scope)), 0);
        // including the user bits flips the pair to positive
        let all = PairingScope::All;
        assert_eq!(dot(&a.pairing_vector(all), &b.pairing_vector(all)), 1);
    }

    #[test]
    fn schema_csv_round_trip() {
        let s = schema_12_3_5();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("schema.csv");
        s.write_csv(&p).unwrap();
        assert_eq!(LabelSchema::read_csv(&p).unwrap(), s);
    }

    #[test]
    fn majority_overlap_rule() {
        let ann = vec![
            Annotation { start_s: 0.0, end_s: 1.6, name: "walk".into(), kind: LabelKind::Activity },
            Annotation { start_s: 1.6, end_s: 3.0, name: "sit".into(), kind: LabelKind::Activity },
            Annotation { start_s: 0.0, end_s: 1.0, name: "bag".into(), kind: LabelKind::Context },
            Annotation { start_s: 0.5, end_s: 2.0, name: "bag".into(), kind: LabelKind::Context },
            Annotation { start_s: 0.0, end_s: 1.5, name: "hand".into(), kind: LabelKind::Context },
        ];
        let act = active_labels(&ann, 0.0, 3.0);
        assert!(act.contains(&(LabelKind::Activity, "walk".to_string())));
        assert!(!act.contains(&(LabelKind::Activity, "sit".to_string())));
        // merged spans [0, 2) cover 2/3
        assert!(act.contains(&(LabelKind::Context, "bag".to_string())));
        // exactly half is not a majority
        assert!(!act.contains(&(LabelKind::Context, "hand".to_string())));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(bits_a in proptest::collection::vec(any::<bool>(), 6),
                                    bits_c in proptest::collection::vec(any::<bool>(), 3),
                                    user in 0usize..4) {
            let s = LabelSchema::new(names("a", 6), names("c", 3), names("u", 4)).unwrap();
            let mut active: Vec<(LabelKind, String)> = Vec::new();
            for (i, &b) in bits_a.iter().enumerate() { if b { active.push((LabelKind::Activity, format!("a{i}"))); } }
            for (i, &b) in bits_c.iter().enumerate() { if b { active.push((LabelKind::Context, format!("c{i}"))); } }
            active.push((LabelKind::User, format!("u{user}")));
            let l = s.encode(&active).unwrap();
            prop_assert_eq!(s.decode(&l), active.clone());
            prop_assert_eq!(s.encode(&s.decode(&l)).unwrap(), l);
        }

        #[test]
        fn pairing_dot_iff_shared_label(a1 in proptest::collection::vec(any::<bool>(), 4),
                                        c1 in proptest::collection::vec(any::<bool>(), 2),
                                        a2 in proptest::collection::vec(any::<bool>(), 4),
                                        c2 in proptest::collection::vec(any::<bool>(), 2)) {
            let x = LabelSet::new(a1.clone(), c1.clone(), vec![true]).unwrap();
            let y = LabelSet::new(a2.clone(), c2.clone(), vec![true]).unwrap();
            let px = x.pairing_vector(PairingScope::ActivityContext);
            let py = y.pairing_vector(PairingScope::ActivityContext);
            prop_assert_eq!(px.len(), 6);
            let dot = px.iter().zip(&py).filter(|(p, q)| **p && **q).count();
            let shared = a1.iter().zip(&a2).any(|(p, q)| *p && *q) || c1.iter().zip(&c2).any(|(p, q)| *p && *q);
            prop_assert_eq!(dot > 0, shared);
        }
    }
}
