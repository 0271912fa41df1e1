//! Interaction data: ingestion, train/test splits, the bipartite graph and
//! BPR triple sampling.
//!
//! Original user/item identifiers are arbitrary `u64`s; internally both sides are
//! re-indexed densely by sorting the distinct original ids, so index order always
//! matches original-id order and every run of the same input produces the same
//! indexing.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::error::{GgcfError, Result};

/// A deduplicated set of user-item interactions over a fixed id universe.
///
/// The id universe (all known users and items) may be larger than what the pairs
/// touch: a train split keeps the full catalog so that items appearing only in
/// test remain rankable.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
    /// CSR over users: items of user u are `items[user_offsets[u]..user_offsets[u+1]]`,
    /// sorted ascending.
    user_offsets: Vec<usize>,
    items: Vec<u32>,
}

impl InteractionSet {
    /// Build from raw (user, item) id pairs; duplicates collapse to one interaction.
    pub fn from_raw_pairs(raw: &[(u64, u64)]) -> Result<Self> {
        if raw.is_empty() {
            return Err(GgcfError::Degenerate(
                "dataset contains no interactions".into(),
            ));
        }
        let mut user_ids: Vec<u64> = raw.iter().map(|p| p.0).collect();
        user_ids.sort_unstable();
        user_ids.dedup();
        let mut item_ids: Vec<u64> = raw.iter().map(|p| p.1).collect();
        item_ids.sort_unstable();
        item_ids.dedup();
        let umap: HashMap<u64, u32> = user_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i as u32))
            .collect();
        let imap: HashMap<u64, u32> = item_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i as u32))
            .collect();
        let mut pairs: Vec<(u32, u32)> = raw
            .iter()
            .map(|&(u, i)| (umap[&u], imap[&i]))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        Ok(Self::from_dense_pairs(user_ids, item_ids, &pairs))
    }

    /// Build from dense, in-universe pairs plus an explicit id universe.
    /// Pairs may arrive unsorted; they are sorted and deduplicated.
    pub fn from_universe_pairs(
        user_ids: Vec<u64>,
        item_ids: Vec<u64>,
        mut pairs: Vec<(u32, u32)>,
    ) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        Self::from_dense_pairs(user_ids, item_ids, &pairs)
    }

    fn from_dense_pairs(user_ids: Vec<u64>, item_ids: Vec<u64>, pairs: &[(u32, u32)]) -> Self {
        let user_count = user_ids.len();
        let mut user_offsets = vec![0usize; user_count + 1];
        for &(u, _) in pairs {
            user_offsets[u as usize + 1] += 1;
        }
        for u in 0..user_count {
            user_offsets[u + 1] += user_offsets[u];
        }
        let items: Vec<u32> = pairs.iter().map(|p| p.1).collect();
        InteractionSet {
            user_ids,
            item_ids,
            user_offsets,
            items,
        }
    }

    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_ids.len()
    }

    /// Number of distinct interactions.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items of user `u`, sorted ascending by dense index.
    pub fn items_of(&self, u: u32) -> &[u32] {
        &self.items[self.user_offsets[u as usize]..self.user_offsets[u as usize + 1]]
    }

    pub fn user_id(&self, u: u32) -> u64 {
        self.user_ids[u as usize]
    }

    pub fn item_id(&self, i: u32) -> u64 {
        self.item_ids[i as usize]
    }

    pub fn user_ids(&self) -> &[u64] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    pub fn iter_pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.user_count() as u32)
            .flat_map(move |u| self.items_of(u).iter().map(move |&i| (u, i)))
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| GgcfError::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> GgcfError {
    GgcfError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Load a MovieLens-style ratings CSV: header `userId,movieId,rating,timestamp`,
/// one rating per line. Every rating counts as an implicit-feedback interaction.
pub fn load_movielens(path: &Path) -> Result<InteractionSet> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file, expected a header line"))?;
    if !header.trim_start().starts_with("userId") {
        return Err(parse_err(
            path,
            1,
            format!("expected a `userId,movieId,...` header, got `{header}`"),
        ));
    }
    let mut raw = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let user = next_field(path, lineno, &mut fields, "userId")?;
        let item = next_field(path, lineno, &mut fields, "movieId")?;
        let rating = next_field_str(path, lineno, &mut fields, "rating")?;
        let _ts = next_field_str(path, lineno, &mut fields, "timestamp")?;
        rating
            .parse::<f64>()
            .map_err(|_| parse_err(path, lineno, format!("invalid rating `{rating}`")))?;
        raw.push((user, item));
    }
    InteractionSet::from_raw_pairs(&raw)
}

/// Load a LastFM-style listening TSV: header `userID<TAB>artistID<TAB>weight`.
pub fn load_lastfm(path: &Path) -> Result<InteractionSet> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file, expected a header line"))?;
    if !header.trim_start().starts_with("userID") {
        return Err(parse_err(
            path,
            1,
            format!("expected a `userID\\tartistID\\t...` header, got `{header}`"),
        ));
    }
    let mut raw = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let user = next_field(path, lineno, &mut fields, "userID")?;
        let item = next_field(path, lineno, &mut fields, "artistID")?;
        let weight = next_field_str(path, lineno, &mut fields, "weight")?;
        weight
            .parse::<f64>()
            .map_err(|_| parse_err(path, lineno, format!("invalid weight `{weight}`")))?;
        raw.push((user, item));
    }
    InteractionSet::from_raw_pairs(&raw)
}

fn next_field_str<'a>(
    path: &Path,
    lineno: usize,
    fields: &mut impl Iterator<Item = &'a str>,
    name: &str,
) -> Result<&'a str> {
    fields
        .next()
        .ok_or_else(|| parse_err(path, lineno, format!("missing field `{name}`")))
}

fn next_field<'a>(
    path: &Path,
    lineno: usize,
    fields: &mut impl Iterator<Item = &'a str>,
    name: &str,
) -> Result<u64> {
    let s = next_field_str(path, lineno, fields, name)?;
    s.trim()
        .parse::<u64>()
        .map_err(|_| parse_err(path, lineno, format!("invalid {name} `{s}`")))
}

/// Split interactions per user: each user keeps `max(1, floor(f * n))` of their
/// interactions for training (chosen by seeded shuffle) and the rest for test.
/// Both halves share the full id universe of `set`.
pub fn split_interactions(
    set: &InteractionSet,
    train_fraction: f64,
    seed: u64,
) -> Result<(InteractionSet, InteractionSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(GgcfError::Config(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut train_pairs = Vec::with_capacity(set.len());
    let mut test_pairs = Vec::new();
    let mut scratch = Vec::new();
    for u in 0..set.user_count() as u32 {
        scratch.clear();
        scratch.extend_from_slice(set.items_of(u));
        if scratch.is_empty() {
            continue;
        }
        scratch.shuffle(&mut rng);
        let keep = ((train_fraction * scratch.len() as f64).floor() as usize).max(1);
        for (pos, &i) in scratch.iter().enumerate() {
            if pos < keep {
                train_pairs.push((u, i));
            } else {
                test_pairs.push((u, i));
            }
        }
    }
    let train = InteractionSet::from_universe_pairs(
        set.user_ids.clone(),
        set.item_ids.clone(),
        train_pairs,
    );
    let test = InteractionSet::from_universe_pairs(
        set.user_ids.clone(),
        set.item_ids.clone(),
        test_pairs,
    );
    Ok((train, test))
}

/// Write a split as `user<TAB>item<TAB>{train|test}` lines (original ids),
/// sorted by (user, item). Rewriting the same split is byte-identical.
pub fn save_split(path: &Path, train: &InteractionSet, test: &InteractionSet) -> Result<()> {
    let mut rows: Vec<(u64, u64, bool)> = Vec::with_capacity(train.len() + test.len());
    for (u, i) in train.iter_pairs() {
        rows.push((train.user_id(u), train.item_id(i), true));
    }
    for (u, i) in test.iter_pairs() {
        rows.push((test.user_id(u), test.item_id(i), false));
    }
    rows.sort_unstable();
    let mut out = String::with_capacity(rows.len() * 16);
    for (u, i, is_train) in rows {
        let tag = if is_train { "train" } else { "test" };
        writeln!(out, "{u}\t{i}\t{tag}").expect("string write cannot fail");
    }
    std::fs::write(path, out).map_err(|e| GgcfError::io(path, e))
}

/// Load a split written by [`save_split`]. The id universe is the union of all
/// lines, so train and test come back with identical indexing.
pub fn load_split(path: &Path) -> Result<(InteractionSet, InteractionSet)> {
    let text = read_text(path)?;
    let mut train_raw = Vec::new();
    let mut test_raw = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let user = next_field(path, lineno, &mut fields, "user")?;
        let item = next_field(path, lineno, &mut fields, "item")?;
        let tag = next_field_str(path, lineno, &mut fields, "tag")?;
        match tag {
            "train" => train_raw.push((user, item)),
            "test" => test_raw.push((user, item)),
            other => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("unknown split tag `{other}`, expected train or test"),
                ))
            }
        }
    }
    if train_raw.is_empty() {
        return Err(GgcfError::Degenerate(
            "split file contains no train interactions".into(),
        ));
    }
    let mut user_ids: Vec<u64> = train_raw
        .iter()
        .chain(test_raw.iter())
        .map(|p| p.0)
        .collect();
    user_ids.sort_unstable();
    user_ids.dedup();
    let mut item_ids: Vec<u64> = train_raw
        .iter()
        .chain(test_raw.iter())
        .map(|p| p.1)
        .collect();
    item_ids.sort_unstable();
    item_ids.dedup();
    let umap: HashMap<u64, u32> = user_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i as u32))
        .collect();
    let imap: HashMap<u64, u32> = item_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i as u32))
        .collect();
    let densify = |raw: &[(u64, u64)]| -> Vec<(u32, u32)> {
        raw.iter().map(|&(u, i)| (umap[&u], imap[&i])).collect()
    };
    let train =
        InteractionSet::from_universe_pairs(user_ids.clone(), item_ids.clone(), densify(&train_raw));
    let test = InteractionSet::from_universe_pairs(user_ids, item_ids, densify(&test_raw));
    Ok((train, test))
}

/// Bipartite user-item graph over the training interactions, in CSR form for
/// both directions, with symmetric normalization weights
/// `w(u,i) = 1 / (sqrt(|N_u|) * sqrt(|N_i|))` stored on each edge.
#[derive(Debug, Clone)]
pub struct InteractionGraph {
    user_count: usize,
    item_count: usize,
    user_offsets: Vec<usize>,
    user_items: Vec<u32>,
    user_weights: Vec<f64>,
    item_offsets: Vec<usize>,
    item_users: Vec<u32>,
    item_weights: Vec<f64>,
    /// User of edge `e`, parallel to `user_items` (the canonical edge order).
    edge_user: Vec<u32>,
}

impl InteractionGraph {
    pub fn from_train(train: &InteractionSet) -> Result<Self> {
        if train.is_empty() {
            return Err(GgcfError::Degenerate(
                "training split contains no interactions".into(),
            ));
        }
        let user_count = train.user_count();
        let item_count = train.item_count();
        let mut item_degree = vec![0u32; item_count];
        for (_, i) in train.iter_pairs() {
            item_degree[i as usize] += 1;
        }
        let mut user_offsets = vec![0usize; user_count + 1];
        let mut user_items = Vec::with_capacity(train.len());
        let mut user_weights = Vec::with_capacity(train.len());
        let mut edge_user = Vec::with_capacity(train.len());
        for u in 0..user_count as u32 {
            let items = train.items_of(u);
            let du = items.len() as f64;
            for &i in items {
                let di = item_degree[i as usize] as f64;
                user_items.push(i);
                user_weights.push(1.0 / (du.sqrt() * di.sqrt()));
                edge_user.push(u);
            }
            user_offsets[u as usize + 1] = user_items.len();
        }
        let mut item_offsets = vec![0usize; item_count + 1];
        for &i in &user_items {
            item_offsets[i as usize + 1] += 1;
        }
        for i in 0..item_count {
            item_offsets[i + 1] += item_offsets[i];
        }
        let mut cursor = item_offsets.clone();
        let mut item_users = vec![0u32; train.len()];
        let mut item_weights = vec![0.0f64; train.len()];
        for e in 0..user_items.len() {
            let i = user_items[e] as usize;
            item_users[cursor[i]] = edge_user[e];
            item_weights[cursor[i]] = user_weights[e];
            cursor[i] += 1;
        }
        Ok(InteractionGraph {
            user_count,
            item_count,
            user_offsets,
            user_items,
            user_weights,
            item_offsets,
            item_users,
            item_weights,
            edge_user,
        })
    }

    pub fn user_count(&self) -> usize {
        self.user_count
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn edge_count(&self) -> usize {
        self.user_items.len()
    }

    pub fn user_degree(&self, u: u32) -> usize {
        self.user_offsets[u as usize + 1] - self.user_offsets[u as usize]
    }

    pub fn item_degree(&self, i: u32) -> usize {
        self.item_offsets[i as usize + 1] - self.item_offsets[i as usize]
    }

    /// Items of user `u` with edge weights, ascending by item index.
    pub fn items_of(&self, u: u32) -> (&[u32], &[f64]) {
        let r = self.user_offsets[u as usize]..self.user_offsets[u as usize + 1];
        (&self.user_items[r.clone()], &self.user_weights[r])
    }

    /// Users of item `i` with edge weights, ascending by user index.
    pub fn users_of(&self, i: u32) -> (&[u32], &[f64]) {
        let r = self.item_offsets[i as usize]..self.item_offsets[i as usize + 1];
        (&self.item_users[r.clone()], &self.item_weights[r])
    }

    /// Edge `e` in canonical (user-major) order.
    pub fn edge(&self, e: usize) -> (u32, u32) {
        (self.edge_user[e], self.user_items[e])
    }

    pub fn has_edge(&self, u: u32, i: u32) -> bool {
        let (items, _) = self.items_of(u);
        items.binary_search(&i).is_ok()
    }
}

/// One BPR training triple: a user, an observed item and a sampled unobserved item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriple {
    pub user: u32,
    pub pos_item: u32,
    pub neg_item: u32,
}

/// Sample `count` BPR triples: positives uniformly over edges, negatives redrawn
/// uniformly over the catalog until unobserved for that user. Users interacting
/// with the whole catalog cannot yield a negative; those draws are skipped and
/// counted in the second return value.
pub fn sample_triples(
    graph: &InteractionGraph,
    count: usize,
    rng: &mut impl Rng,
) -> (Vec<BprTriple>, usize) {
    let mut triples = Vec::with_capacity(count);
    let mut skipped = 0usize;
    let edges = graph.edge_count();
    let items = graph.item_count() as u32;
    for _ in 0..count {
        let e = rng.random_range(0..edges);
        let (user, pos_item) = graph.edge(e);
        match sample_negative(graph, user, items, rng) {
            Some(neg_item) => triples.push(BprTriple {
                user,
                pos_item,
                neg_item,
            }),
            None => skipped += 1,
        }
    }
    (triples, skipped)
}

/// Uniform redraw of an item the user has not interacted with.
pub(crate) fn sample_negative(
    graph: &InteractionGraph,
    user: u32,
    item_count: u32,
    rng: &mut impl Rng,
) -> Option<u32> {
    if graph.user_degree(user) >= item_count as usize {
        return None;
    }
    loop {
        let j = rng.random_range(0..item_count);
        if !graph.has_edge(user, j) {
            return Some(j);
        }
    }
}
