use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::log::{Interaction, InteractionLog, UserId};

/// Leave-one-out partition of one user's chronological history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user: UserId,
    pub train: Vec<Interaction>,
    pub validation: Interaction,
    pub test: Interaction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    /// Included users in ascending id order.
    pub users: Vec<UserSplit>,
    /// Users with fewer than three interactions.
    pub excluded_users: Vec<UserId>,
    /// Users removed before splitting (pairwise evaluation users).
    pub held_out_users: Vec<UserId>,
}

impl SplitDataset {
    pub fn get(&self, user: UserId) -> Option<&UserSplit> {
        self.users
            .binary_search_by_key(&user, |s| s.user)
            .ok()
            .map(|i| &self.users[i])
    }

    pub fn num_train_interactions(&self) -> usize {
        self.users.iter().map(|u| u.train.len()).sum()
    }
}

/// Last interaction is test, second to last validation, the rest train.
pub fn leave_one_out_split(log: &InteractionLog) -> SplitDataset {
    leave_one_out_split_holding_out(log, &[])
}

/// As [`leave_one_out_split`], with `held_out` users dropped entirely.
pub fn leave_one_out_split_holding_out(log: &InteractionLog, held_out: &[UserId]) -> SplitDataset {
    let held: BTreeSet<UserId> = held_out.iter().copied().collect();
    let mut users = Vec::new();
    let mut excluded_users = Vec::new();
    for user in log.users() {
        if held.contains(&user) {
            continue;
        }
        let history: Vec<Interaction> = log.history(user).copied().collect();
        if history.len() < 3 {
            excluded_users.push(user);
            continue;
        }
        let n = history.len();
        users.push(UserSplit {
            user,
            train: history[..n - 2].to_vec(),
            validation: history[n - 2],
            test: history[n - 1],
        });
    }
    SplitDataset {
        users,
        excluded_users,
        held_out_users: held.into_iter().collect(),
    }
}
