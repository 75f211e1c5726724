use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Scene-id lists for train / validation / test.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

fn ids(v: &[u32]) -> Vec<String> {
    v.iter().map(|i| i.to_string()).collect()
}

impl SplitSpec {
    /// ISPRS Vaihingen area numbers.
    pub fn vaihingen() -> Self {
        SplitSpec {
            train: ids(&[1, 3, 5, 7, 11, 13, 15, 17, 21, 23, 26, 28, 32, 34, 37]),
            val: ids(&[30]),
            test: ids(&[2, 4, 6, 8, 10, 12, 14, 16, 20, 22, 24, 27, 29, 31, 33, 35, 38]),
        }
    }

    /// ISPRS Potsdam tiles, `row_col`.
    pub fn potsdam() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        SplitSpec {
            train: s(&[
                "2_11", "2_12", "3_10", "3_11", "3_12", "4_10", "4_11", "4_12", "5_10", "5_11", "5_12", "6_7",
                "6_8", "6_9", "6_10", "6_11", "6_12", "7_7", "7_8", "7_9", "7_11", "7_12",
            ]),
            val: s(&["2_10"]),
            test: s(&[
                "2_13", "2_14", "3_13", "3_14", "4_13", "4_14", "4_15", "5_13", "5_14", "5_15", "6_13", "6_14", "6_15",
                "7_13",
            ]),
        }
    }

    /// Errors when an id appears twice, within or across lists.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for (split, list) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for id in list {
                if let Some(prev) = seen.insert(id.as_str(), split) {
                    return Err(Error::invalid(format!("scene id {id} listed in both {prev} and {split}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct SplitResult<S> {
    pub train: Vec<S>,
    pub val: Vec<S>,
    pub test: Vec<S>,
    /// Listed ids with no matching scene.
    pub missing: Vec<String>,
    /// Scene ids not named by any list; those scenes are dropped.
    pub unassigned: Vec<String>,
}

/// Partitions `scenes` by id; order follows the id lists.
pub fn split_by_ids<S>(scenes: Vec<S>, spec: &SplitSpec, id_of: impl Fn(&S) -> &str) -> Result<SplitResult<S>> {
    spec.validate()?;
    let mut by_id: BTreeMap<String, S> = BTreeMap::new();
    for s in scenes {
        let id = id_of(&s).to_string();
        if by_id.insert(id.clone(), s).is_some() {
            return Err(Error::invalid(format!("duplicate scene id {id}")));
        }
    }
    let mut missing = Vec::new();
    let mut take = |list: &[String]| {
        list.iter()
            .filter_map(|id| {
                let s = by_id.remove(id);
                if s.is_none() {
                    missing.push(id.clone());
                }
                s
            })
            .collect::<Vec<_>>()
    };
    let train = take(&spec.train);
    let val = take(&spec.val);
    let test = take(&spec.test);
    let unassigned = by_id.into_keys().collect::<BTreeSet<_>>().into_iter().collect();
    Ok(SplitResult { train, val, test, missing, unassigned })
}
