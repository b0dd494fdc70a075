//! Per-user stratified train/val/test split.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.6, val: 0.2, test: 0.2, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|&v| !(v > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be positive and sum to 1, got {f:?}")));
        }
        Ok(())
    }
}

/// Instance indices per split, each in ascending order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Sizes for `n` items: floor each share, then hand the leftover items
/// to the largest fractional remainders. Equal remainders favour test,
/// then val, then train.
pub fn split_sizes(n: usize, spec: &SplitSpec) -> [usize; 3] {
    let exact = [spec.train * n as f64, spec.val * n as f64, spec.test * n as f64];
    let mut sizes = exact.map(|v| (v + 1e-9).floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>().min(n);
    let rem = [0, 1, 2].map(|i| exact[i] - sizes[i] as f64);
    let mut order = [2usize, 1, 0];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rem[a], rem[b]);
        if (ra - rb).abs() <= 1e-9 {
            b.cmp(&a)
        } else {
            rb.total_cmp(&ra)
        }
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Splits each user's items separately. Users with fewer than 3 items go
/// entirely to train.
pub fn split_by_user<S: AsRef<str>>(users: &[S], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    if users.len() < 5 {
        return Err(Error::invalid(format!("need at least 5 instances to split, got {}", users.len())));
    }
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in users.iter().enumerate() {
        by_user.entry(u.as_ref()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = SplitIndices::default();
    for (user, mut idx) in by_user {
        if idx.len() < 3 {
            warn!("user {user} has only {} instance(s); all assigned to train", idx.len());
            out.train.extend(idx);
            continue;
        }
        idx.shuffle(&mut rng);
        let [n_train, n_val, _] = split_sizes(idx.len(), spec);
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Moves items into the three splits given by `idx`.
pub fn take_split<T>(items: Vec<T>, idx: &SplitIndices) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut slot = vec![0u8; items.len()];
    for &i in &idx.val {
        slot[i] = 1;
    }
    for &i in &idx.test {
        slot[i] = 2;
    }
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    for (item, s) in items.into_iter().zip(slot) {
        match s {
            0 => a.push(item),
            1 => b.push(item),
            _ => c.push(item),
        }
    }
    (a, b, c)
}
