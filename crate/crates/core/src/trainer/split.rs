use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::ForceTrace;
use crate::derive_seed;
use crate::error::{Error, Result};

/// Traces grouped by `(user, task)`.
pub type Groups<'a> = BTreeMap<(String, String), Vec<&'a ForceTrace>>;

/// Train and test traces of one split.
#[derive(Clone, Debug, Default)]
pub struct Split<'a> {
    pub train: Vec<&'a ForceTrace>,
    pub test: Vec<&'a ForceTrace>,
}

/// Shuffle each group with a seed derived from `seed` and the group name,
/// then take the first `n_train` traces for training and the next `n_test`
/// for testing. Groups are visited in key order.
pub fn split_dataset<'a>(groups: &Groups<'a>, n_train: usize, n_test: usize, seed: u64) -> Result<Split<'a>> {
    let mut out = Split::default();
    for ((user, task), traces) in groups {
        let (train, test) = split_group(user, task, traces, n_train, n_test, seed)?;
        out.train.extend(train);
        out.test.extend(test);
    }
    Ok(out)
}

pub(crate) fn split_group<'a>(
    user: &str,
    task: &str,
    traces: &[&'a ForceTrace],
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Vec<&'a ForceTrace>, Vec<&'a ForceTrace>)> {
    let name = format!("{user}/{task}");
    if traces.len() < n_train + n_test {
        return Err(Error::Insufficient {
            group: name,
            needed: n_train + n_test,
            available: traces.len(),
        });
    }
    let mut order: Vec<&ForceTrace> = traces.to_vec();
    order.sort_by(|a, b| a.key().cmp(b.key()));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &name)));
    let test = order[n_train..n_train + n_test].to_vec();
    order.truncate(n_train);
    Ok((order, test))
}
