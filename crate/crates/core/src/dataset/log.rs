use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense user index into [`InteractionLog::user_name`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserId(pub u32);

/// Dense item index. Indices follow the natural order of the raw ids, so
/// "lowest item id" tie-breaks agree with the source data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId(pub u32);

impl UserId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A star rating in `1..=5`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Rating(u8);

impl Rating {
    pub const ALL: [Rating; 5] = [Rating(1), Rating(2), Rating(3), Rating(4), Rating(5)];

    pub fn new(value: i64) -> Result<Self> {
        if (1..=5).contains(&value) {
            Ok(Rating(value as u8))
        } else {
            Err(Error::InvalidRating(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Zero-based slot, `rating - 1`.
    pub fn slot(self) -> usize {
        self.0 as usize - 1
    }
}

impl TryFrom<u8> for Rating {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Rating::new(i64::from(value))
    }
}

impl From<Rating> for u8 {
    fn from(r: Rating) -> u8 {
        r.0
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub rating: Rating,
    pub timestamp: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogStats {
    pub interactions: usize,
    pub users: usize,
    pub items: usize,
}

/// A validated interaction log. Interactions keep file order; `by_user`
/// indexes them per user in ascending timestamp order, ties in file order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    user_names: Vec<String>,
    item_names: Vec<String>,
    interactions: Vec<Interaction>,
    by_user: Vec<Vec<u32>>,
}

/// One parsed row before id interning. `line` is used for error messages.
#[derive(Clone, Debug)]
pub(crate) struct RawRow {
    pub line: usize,
    pub user: String,
    pub item: String,
    pub rating: Rating,
    pub timestamp: i64,
}

/// Numeric ids sort numerically and before non-numeric ids, which sort
/// lexicographically.
pub(crate) fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

fn intern(names: impl Iterator<Item = String>) -> (Vec<String>, HashMap<String, u32>) {
    let mut unique: Vec<String> = names.collect::<HashSet<_>>().into_iter().collect();
    unique.sort_by(|a, b| natural_cmp(a, b));
    let index = unique
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i as u32))
        .collect();
    (unique, index)
}

impl InteractionLog {
    pub fn empty() -> Self {
        InteractionLog {
            user_names: Vec::new(),
            item_names: Vec::new(),
            interactions: Vec::new(),
            by_user: Vec::new(),
        }
    }

    /// Build a log from parsed rows, rejecting duplicate
    /// `(user, timestamp, item)` triples.
    /// `extra_items` join the catalog even without interactions.
    pub(crate) fn from_rows(
        rows: Vec<RawRow>,
        source: &std::path::Path,
        extra_items: &[String],
    ) -> Result<Self> {
        let (user_names, user_index) = intern(rows.iter().map(|r| r.user.clone()));
        let (item_names, item_index) = intern(
            rows.iter()
                .map(|r| r.item.clone())
                .chain(extra_items.iter().cloned()),
        );

        let mut seen = HashSet::with_capacity(rows.len());
        let mut interactions = Vec::with_capacity(rows.len());
        for row in rows {
            let user = UserId(user_index[&row.user]);
            let item = ItemId(item_index[&row.item]);
            if !seen.insert((user, row.timestamp, item)) {
                return Err(Error::DuplicateInteraction {
                    path: source.to_path_buf(),
                    line: row.line,
                    user: row.user,
                    item: row.item,
                    timestamp: row.timestamp,
                });
            }
            interactions.push(Interaction {
                user,
                item,
                rating: row.rating,
                timestamp: row.timestamp,
            });
        }

        let mut by_user = vec![Vec::new(); user_names.len()];
        for (i, it) in interactions.iter().enumerate() {
            by_user[it.user.index()].push(i as u32);
        }
        for list in &mut by_user {
            // stable: equal timestamps keep file order
            list.sort_by_key(|&i| interactions[i as usize].timestamp);
        }

        Ok(InteractionLog {
            user_names,
            item_names,
            interactions,
            by_user,
        })
    }

    pub fn stats(&self) -> LogStats {
        LogStats {
            interactions: self.interactions.len(),
            users: self.user_names.len(),
            items: self.item_names.len(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_names.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_names.len()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        (0..self.user_names.len() as u32).map(UserId)
    }

    pub fn user_name(&self, user: UserId) -> &str {
        &self.user_names[user.index()]
    }

    pub fn item_name(&self, item: ItemId) -> &str {
        &self.item_names[item.index()]
    }

    pub fn find_user(&self, name: &str) -> Option<UserId> {
        self.user_names
            .binary_search_by(|n| natural_cmp(n, name))
            .ok()
            .map(|i| UserId(i as u32))
    }

    pub fn find_item(&self, name: &str) -> Option<ItemId> {
        self.item_names
            .binary_search_by(|n| natural_cmp(n, name))
            .ok()
            .map(|i| ItemId(i as u32))
    }

    /// The user's interactions in chronological order.
    pub fn history(&self, user: UserId) -> impl ExactSizeIterator<Item = &Interaction> + '_ {
        self.by_user[user.index()]
            .iter()
            .map(move |&i| &self.interactions[i as usize])
    }

    /// Sorted, deduplicated items the user has interacted with.
    pub fn user_item_set(&self, user: UserId) -> Vec<ItemId> {
        let mut items: Vec<ItemId> = self.history(user).map(|it| it.item).collect();
        items.sort_unstable();
        items.dedup();
        items
    }
}
