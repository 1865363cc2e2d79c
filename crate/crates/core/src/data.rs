//! Interaction data: rating-file ingest, the dual-adjacency store, the
//! validation holdout and per-epoch negative sampling.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::tensor::SeededRng;

/// Candidate negatives per leave-one-out test instance.
pub const TEST_NEGATIVES: usize = 99;

/// Binary interaction matrix held as user→items and item→users adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionStore {
    num_users: usize,
    num_items: usize,
    user_items: Vec<Vec<usize>>,
    item_users: Vec<Vec<usize>>,
    /// Per-user items in chronological order; the last entry is the latest.
    user_timeline: Vec<Vec<usize>>,
}

impl InteractionStore {
    /// Builds a store from `(user, item)` pairs listed oldest first.
    /// Returns the store and the number of duplicate pairs that were dropped.
    pub fn from_pairs(
        num_users: usize,
        num_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Self, usize)> {
        let mut user_timeline = vec![Vec::new(); num_users];
        let mut user_items: Vec<Vec<usize>> = vec![Vec::new(); num_users];
        for (u, i) in pairs {
            if u >= num_users {
                return Err(Error::Index { what: "users", index: u, len: num_users });
            }
            if i >= num_items {
                return Err(Error::Index { what: "items", index: i, len: num_items });
            }
            user_timeline[u].push(i);
            user_items[u].push(i);
        }

        let mut duplicates = 0;
        for (items, timeline) in user_items.iter_mut().zip(&mut user_timeline) {
            items.sort_unstable();
            let before = items.len();
            items.dedup();
            duplicates += before - items.len();
            if before != items.len() {
                // keep the latest occurrence of a repeated pair
                let mut seen = std::collections::HashSet::new();
                let mut kept: Vec<usize> = timeline.iter().rev().filter(|i| seen.insert(**i)).copied().collect();
                kept.reverse();
                *timeline = kept;
            }
        }

        let mut item_users = vec![Vec::new(); num_items];
        for (u, items) in user_items.iter().enumerate() {
            for &i in items {
                item_users[i].push(u);
            }
        }

        Ok((
            Self {
                num_users,
                num_items,
                user_items,
                item_users,
                user_timeline,
            },
            duplicates,
        ))
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Items user `u` interacted with, strictly increasing.
    pub fn user_items(&self, u: usize) -> &[usize] {
        &self.user_items[u]
    }

    /// Users who interacted with item `i`, strictly increasing.
    pub fn item_users(&self, i: usize) -> &[usize] {
        &self.item_users[i]
    }

    pub fn user_timeline(&self, u: usize) -> &[usize] {
        &self.user_timeline[u]
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.user_items[u].binary_search(&i).is_ok()
    }

    pub fn num_interactions(&self) -> usize {
        self.user_items.iter().map(Vec::len).sum()
    }

    pub fn item_popularity(&self, i: usize) -> usize {
        self.item_users[i].len()
    }

    /// Every observed pair, user-major, items ascending.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.user_items
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
    }

    /// Checks dual-adjacency consistency, ordering and counts.
    pub fn check_invariants(&self) -> Result<()> {
        let strictly_increasing = |xs: &[usize]| xs.windows(2).all(|w| w[0] < w[1]);
        for (u, items) in self.user_items.iter().enumerate() {
            if !strictly_increasing(items) {
                return Err(Error::Internal(format!("user {u} adjacency not strictly increasing")));
            }
            for &i in items {
                if i >= self.num_items || self.item_users[i].binary_search(&u).is_err() {
                    return Err(Error::Internal(format!("pair ({u},{i}) missing from item adjacency")));
                }
            }
            if self.user_timeline[u].len() != items.len() {
                return Err(Error::Internal(format!("user {u} timeline length mismatch")));
            }
        }
        for (i, users) in self.item_users.iter().enumerate() {
            if !strictly_increasing(users) {
                return Err(Error::Internal(format!("item {i} adjacency not strictly increasing")));
            }
            for &u in users {
                if u >= self.num_users || !self.contains(u, i) {
                    return Err(Error::Internal(format!("pair ({u},{i}) missing from user adjacency")));
                }
            }
        }
        let by_item: usize = self.item_users.iter().map(Vec::len).sum();
        if by_item != self.num_interactions() {
            return Err(Error::Internal("interaction counts disagree".into()));
        }
        Ok(())
    }

    /// Writes the store as a `.rating` file; the timestamp column encodes
    /// each pair's position in its user's timeline so recency survives a reload.
    pub fn write_rating_file(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (u, timeline) in self.user_timeline.iter().enumerate() {
            for (t, i) in timeline.iter().enumerate() {
                writeln!(w, "{u}\t{i}\t1\t{t}").map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestInstance {
    pub user: usize,
    pub positive_item: usize,
    pub negative_items: Vec<usize>,
}

impl TestInstance {
    /// Candidates in scoring order: the positive first, then the negatives.
    pub fn candidates(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.positive_item).chain(self.negative_items.iter().copied())
    }
}

/// Counters for recoverable irregularities seen while loading.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub duplicate_pairs: usize,
    /// Test negatives that the user actually interacted with in training.
    pub negative_conflicts: usize,
    /// Item indices below `num_items` that occur in neither train nor test.
    pub unseen_items: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub store: InteractionStore,
    pub test: Vec<TestInstance>,
    pub report: LoadReport,
}

#[derive(Debug, Clone, Copy)]
struct RatingLine {
    user: usize,
    item: usize,
    timestamp: Option<i64>,
    line: usize,
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

fn parse_index(tok: &str, file: &str, line: usize, what: &str) -> Result<usize> {
    tok.trim().parse::<usize>().map_err(|_| Error::Parse {
        file: file.to_string(),
        line,
        message: format!("invalid {what} `{tok}`"),
    })
}

fn read_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines().enumerate().map(|(n, l)| (n + 1, l)))
}

fn parse_rating_file(path: &Path) -> Result<Vec<RatingLine>> {
    let label = file_label(path);
    let mut out = Vec::new();
    for (line, text) in read_lines(path)? {
        let text = text.map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                file: label,
                line,
                message: "expected at least `user item`".into(),
            });
        }
        let user = parse_index(fields[0], &label, line, "user id")?;
        let item = parse_index(fields[1], &label, line, "item id")?;
        let timestamp = match fields.get(3) {
            Some(tok) => Some(tok.parse::<i64>().map_err(|_| Error::Parse {
                file: label.clone(),
                line,
                message: format!("invalid timestamp `{tok}`"),
            })?),
            None => None,
        };
        out.push(RatingLine { user, item, timestamp, line });
    }
    Ok(out)
}

fn parse_negative_file(path: &Path) -> Result<Vec<TestInstance>> {
    let label = file_label(path);
    let mut out = Vec::new();
    for (line, text) in read_lines(path)? {
        let text = text.map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let mut fields = text.split_whitespace();
        let head = fields.next().unwrap_or_default();
        let bad_head = || Error::Parse {
            file: label.clone(),
            line,
            message: format!("expected `(user,item)` but found `{head}`"),
        };
        let inner = head
            .strip_prefix('(')
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(bad_head)?;
        let (u, i) = inner.split_once(',').ok_or_else(bad_head)?;
        let user = parse_index(u, &label, line, "user id")?;
        let positive_item = parse_index(i, &label, line, "item id")?;
        let negative_items = fields
            .map(|tok| parse_index(tok, &label, line, "negative item id"))
            .collect::<Result<Vec<_>>>()?;
        if negative_items.len() != TEST_NEGATIVES {
            return Err(Error::Parse {
                file: label,
                line,
                message: format!("expected {TEST_NEGATIVES} negatives, found {}", negative_items.len()),
            });
        }
        out.push(TestInstance {
            user,
            positive_item,
            negative_items,
        });
    }
    Ok(out)
}

/// Orders each user's lines oldest first: by timestamp when every line has
/// one, otherwise by file order.
fn chronological(mut lines: Vec<RatingLine>) -> Vec<RatingLine> {
    if lines.iter().all(|l| l.timestamp.is_some()) {
        lines.sort_by_key(|l| (l.timestamp, l.line));
    }
    lines
}

pub fn load_dataset(train_path: &Path, test_path: &Path, negatives_path: &Path) -> Result<Dataset> {
    let train = chronological(parse_rating_file(train_path)?);
    let test = parse_rating_file(test_path)?;
    let negatives = parse_negative_file(negatives_path)?;

    let max_user = train.iter().chain(&test).map(|l| l.user).max();
    // items that only occur as sampled negatives still need rows
    let max_negative = negatives.iter().flat_map(|n| n.negative_items.iter().copied()).max();
    let max_item = train.iter().chain(&test).map(|l| l.item).max().max(max_negative);
    let (Some(max_user), Some(max_item)) = (max_user, max_item) else {
        return Err(Error::Format("training and test files are empty".into()));
    };
    let train_users = train.iter().map(|l| l.user + 1).max().unwrap_or(0);
    let num_users = max_user + 1;
    let num_items = max_item + 1;

    let (store, duplicate_pairs) =
        InteractionStore::from_pairs(num_users, num_items, train.iter().map(|l| (l.user, l.item)))?;
    if duplicate_pairs > 0 {
        log::warn!("collapsed {duplicate_pairs} duplicate training pairs");
    }

    let mut test_item: Vec<Option<usize>> = vec![None; num_users];
    for l in &test {
        if l.user >= train_users {
            return Err(Error::Format(format!(
                "{} line {}: test user {} outside the training user range 0..{train_users}",
                file_label(test_path),
                l.line,
                l.user
            )));
        }
        if test_item[l.user].replace(l.item).is_some() {
            return Err(Error::Format(format!("user {} has more than one test interaction", l.user)));
        }
    }

    let mut instances: Vec<Option<TestInstance>> = vec![None; num_users];
    let mut negative_conflicts = 0;
    for inst in negatives {
        if inst.user >= num_users || test_item[inst.user] != Some(inst.positive_item) {
            return Err(Error::Format(format!(
                "negative list for ({},{}) does not match the test file",
                inst.user, inst.positive_item
            )));
        }
        if inst.negative_items.contains(&inst.positive_item) {
            return Err(Error::Format(format!(
                "negative list for user {} contains its own test item",
                inst.user
            )));
        }
        negative_conflicts += inst.negative_items.iter().filter(|&&j| store.contains(inst.user, j)).count();
        let u = inst.user;
        if instances[u].replace(inst).is_some() {
            return Err(Error::Format(format!("user {u} has more than one negative list")));
        }
    }
    if negative_conflicts > 0 {
        log::warn!("{negative_conflicts} test negatives are observed training items");
    }

    let test = instances
        .into_iter()
        .enumerate()
        .map(|(u, inst)| {
            inst.ok_or_else(|| {
                Error::Format(format!(
                    "user {u} has no test instance; user indices must be dense and each user needs one held-out item"
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut seen = vec![false; num_items];
    for l in train.iter().chain(&test_lines_as_ratings(&test)) {
        seen[l.item] = true;
    }
    let unseen_items = seen.iter().filter(|s| !**s).count();
    if unseen_items > 0 {
        log::warn!("{unseen_items} items occur in neither the training nor the test file");
    }

    Ok(Dataset {
        store,
        test,
        report: LoadReport {
            duplicate_pairs,
            negative_conflicts,
            unseen_items,
        },
    })
}

fn test_lines_as_ratings(test: &[TestInstance]) -> Vec<RatingLine> {
    test.iter()
        .map(|t| RatingLine {
            user: t.user,
            item: t.positive_item,
            timestamp: None,
            line: 0,
        })
        .collect()
}

/// Writes leave-one-out files in the `.test.rating` / `.test.negative` layout.
pub fn write_test_files(instances: &[TestInstance], test_path: &Path, negatives_path: &Path) -> Result<()> {
    let mut t = BufWriter::new(File::create(test_path).map_err(|e| Error::io(test_path, e))?);
    let mut n = BufWriter::new(File::create(negatives_path).map_err(|e| Error::io(negatives_path, e))?);
    for inst in instances {
        writeln!(t, "{}\t{}\t1\t0", inst.user, inst.positive_item).map_err(|e| Error::io(test_path, e))?;
        write!(n, "({},{})", inst.user, inst.positive_item).map_err(|e| Error::io(negatives_path, e))?;
        for j in &inst.negative_items {
            write!(n, "\t{j}").map_err(|e| Error::io(negatives_path, e))?;
        }
        writeln!(n).map_err(|e| Error::io(negatives_path, e))?;
    }
    t.flush().map_err(|e| Error::io(test_path, e))?;
    n.flush().map_err(|e| Error::io(negatives_path, e))
}

/// Removes each user's latest interaction. Users with a single interaction
/// keep it and contribute no held-out pair.
pub fn holdout_validation(store: &InteractionStore) -> (InteractionStore, Vec<(usize, usize)>) {
    let mut held = Vec::new();
    let mut pairs = Vec::with_capacity(store.num_interactions());
    for u in 0..store.num_users() {
        let timeline = store.user_timeline(u);
        let keep = if timeline.len() >= 2 {
            held.push((u, timeline[timeline.len() - 1]));
            &timeline[..timeline.len() - 1]
        } else {
            timeline
        };
        pairs.extend(keep.iter().map(|&i| (u, i)));
    }
    let (reduced, _) = InteractionStore::from_pairs(store.num_users(), store.num_items(), pairs)
        .expect("indices come from a valid store");
    (reduced, held)
}

/// Draws `count` items outside `observed` (sorted), uniformly. Without
/// replacement when enough candidates exist, otherwise with replacement.
/// Returns whether replacement was needed.
fn draw_unobserved(
    observed: &[usize],
    num_items: usize,
    count: usize,
    rng: &mut SeededRng,
    out: &mut Vec<usize>,
) -> Result<bool> {
    let available = num_items - observed.len();
    if available == 0 {
        return Err(Error::Sampling(format!(
            "a user interacted with all {num_items} items; no negatives exist"
        )));
    }
    let with_replacement = available < count;
    let start = out.len();
    while out.len() - start < count {
        let j = rng.below(num_items);
        if observed.binary_search(&j).is_ok() {
            continue;
        }
        if !with_replacement && out[start..].contains(&j) {
            continue;
        }
        out.push(j);
    }
    Ok(with_replacement)
}

/// Builds 99-negative ranking instances for held-out pairs, sampling
/// negatives outside `reference` (the store the pairs were held out of).
pub fn validation_instances(
    reference: &InteractionStore,
    held_out: &[(usize, usize)],
    seed: u64,
) -> Result<Vec<TestInstance>> {
    let mut rng = SeededRng::with_stream(seed, u64::MAX);
    held_out
        .iter()
        .map(|&(user, positive_item)| {
            let mut negative_items = Vec::with_capacity(TEST_NEGATIVES);
            let mut observed = reference.user_items(user).to_vec();
            if let Err(pos) = observed.binary_search(&positive_item) {
                observed.insert(pos, positive_item);
            }
            draw_unobserved(&observed, reference.num_items(), TEST_NEGATIVES, &mut rng, &mut negative_items)?;
            Ok(TestInstance {
                user,
                positive_item,
                negative_items,
            })
        })
        .collect()
}

/// One epoch of labeled training instances, already shuffled.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    pub labels: Vec<f64>,
    /// Users that needed sampling with replacement.
    pub warnings: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainBatch<'a> {
    pub users: &'a [usize],
    pub items: &'a [usize],
    pub labels: &'a [f64],
}

impl TrainBatch<'_> {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

impl Epoch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = TrainBatch<'_>> {
        assert!(batch_size > 0);
        self.users
            .chunks(batch_size)
            .zip(self.items.chunks(batch_size))
            .zip(self.labels.chunks(batch_size))
            .map(|((users, items), labels)| TrainBatch { users, items, labels })
    }
}

/// Every observed pair labeled 1 plus `neg_ratio` fresh unobserved items per
/// positive labeled 0, globally shuffled.
pub fn sample_epoch(store: &InteractionStore, neg_ratio: usize, rng_seed: u64) -> Result<Epoch> {
    if neg_ratio == 0 {
        return Err(Error::Config("neg_ratio must be at least 1".into()));
    }
    let mut rng = SeededRng::new(rng_seed);
    let total = store.num_interactions() * (1 + neg_ratio);
    let mut users = Vec::with_capacity(total);
    let mut items = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut warned_users = 0;
    let mut negs = Vec::with_capacity(neg_ratio);

    for u in 0..store.num_users() {
        let observed = store.user_items(u);
        let mut warned = false;
        for &i in observed {
            users.push(u);
            items.push(i);
            labels.push(1.0);
            negs.clear();
            warned |= draw_unobserved(observed, store.num_items(), neg_ratio, &mut rng, &mut negs)?;
            for &j in &negs {
                users.push(u);
                items.push(j);
                labels.push(0.0);
            }
        }
        if warned {
            warned_users += 1;
        }
    }
    if warned_users > 0 {
        log::warn!("{warned_users} users have fewer than {neg_ratio} unobserved items; sampled with replacement");
    }

    let mut order: Vec<usize> = (0..users.len()).collect();
    order.shuffle(rng.rng());
    Ok(Epoch {
        users: order.iter().map(|&k| users[k]).collect(),
        items: order.iter().map(|&k| items[k]).collect(),
        labels: order.iter().map(|&k| labels[k]).collect(),
        warnings: warned_users,
    })
}
