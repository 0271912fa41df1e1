//! Deterministic synthetic interaction corpora in the raw file formats the
//! loaders expect.
//!
//! Each corpus is built from archetype clusters: users and items both belong
//! to one of `clusters` groups, item popularity follows a power law, and a
//! user's interactions are drawn without replacement with in-cluster items
//! upweighted by `affinity_boost`. A seeding pass gives every item exactly one
//! guaranteed interaction (round-robin over the users of its cluster), so the
//! generated file touches every user and every item and contains exactly
//! `interactions` distinct pairs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};

use crate::error::{GgcfError, Result};

/// Shape and texture of one synthetic corpus.
#[derive(Debug, Clone, Copy)]
pub struct CorpusSpec {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub clusters: usize,
    /// Multiplier on the sampling weight of items in the user's own cluster.
    pub affinity_boost: f64,
    /// Power-law exponent for user activity (larger = more skew).
    pub user_exponent: f64,
    /// Power-law exponent for item popularity.
    pub item_exponent: f64,
}

/// Matches the catalog counts of the MovieLens ml-latest-small release.
pub const MOVIELENS_SMALL: CorpusSpec = CorpusSpec {
    users: 610,
    items: 9742,
    interactions: 100_836,
    clusters: 12,
    affinity_boost: 90.0,
    user_exponent: 0.65,
    item_exponent: 1.1,
};

/// Matches the catalog counts of the HetRec 2011 LastFM release.
pub const LASTFM_HETREC: CorpusSpec = CorpusSpec {
    users: 1892,
    items: 17_632,
    interactions: 92_834,
    clusters: 16,
    affinity_boost: 100.0,
    user_exponent: 0.55,
    item_exponent: 1.1,
};

/// Split `total` units over weighted bins with per-bin caps, hitting the total
/// exactly via largest-remainder rounding. Ties break on bin index.
fn apportion(weights: &[f64], total: usize, caps: &[usize]) -> Vec<usize> {
    assert_eq!(weights.len(), caps.len());
    let cap_sum: usize = caps.iter().sum();
    assert!(cap_sum >= total, "caps cannot absorb the requested total");
    let mut counts = vec![0usize; weights.len()];
    let mut remaining = total;
    let mut active: Vec<usize> = (0..weights.len()).collect();
    while remaining > 0 {
        active.retain(|&i| counts[i] < caps[i]);
        let w_sum: f64 = active.iter().map(|&i| weights[i]).sum();
        if w_sum <= 0.0 {
            // Degenerate weights: hand out units round-robin.
            for &i in &active {
                if remaining == 0 {
                    break;
                }
                counts[i] += 1;
                remaining -= 1;
            }
            continue;
        }
        let mut fractions: Vec<(f64, usize)> = Vec::with_capacity(active.len());
        let mut handed = 0usize;
        for &i in &active {
            let ideal = remaining as f64 * weights[i] / w_sum;
            let room = caps[i] - counts[i];
            let take = (ideal.floor() as usize).min(room);
            counts[i] += take;
            handed += take;
            if counts[i] < caps[i] {
                fractions.push((ideal - ideal.floor(), i));
            }
        }
        remaining -= handed;
        if remaining == 0 {
            break;
        }
        fractions.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in &fractions {
            if remaining == 0 {
                break;
            }
            if counts[i] < caps[i] {
                counts[i] += 1;
                remaining -= 1;
            }
        }
        // Loop again if flooring plus one remainder pass was not enough
        // (possible when many bins sat at their caps).
    }
    counts
}

/// Generate the corpus as dense (user, item) pairs, distinct by construction,
/// touching every user and every item, with exactly `spec.interactions` pairs.
pub fn generate(spec: &CorpusSpec, seed: u64) -> Vec<(u32, u32)> {
    assert!(spec.users > 0 && spec.items > 0 && spec.clusters > 0);
    assert!(spec.interactions >= spec.items, "need one seed per item");
    assert!(spec.interactions <= spec.users * spec.items);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel is valid");
    let c = spec.clusters;

    // Popularity by item index, spread over clusters round-robin so every
    // cluster owns a share of head items.
    let item_cluster: Vec<usize> = (0..spec.items).map(|i| i % c).collect();
    let log_pop: Vec<f64> = (0..spec.items)
        .map(|i| -spec.item_exponent * ((i + 1) as f64).ln())
        .collect();

    // Seed pass: item i goes to the next user of its cluster, rotating so all
    // users receive seeds.
    let mut per_user: Vec<Vec<u32>> = vec![Vec::new(); spec.users];
    let cluster_users: Vec<Vec<u32>> = (0..c)
        .map(|cl| {
            (0..spec.users as u32)
                .filter(|u| *u as usize % c == cl)
                .collect()
        })
        .collect();
    let mut cursor = vec![0usize; c];
    for i in 0..spec.items {
        let cl = item_cluster[i];
        let users = &cluster_users[cl];
        let u = users[cursor[cl] % users.len()];
        cursor[cl] += 1;
        per_user[u as usize].push(i as u32);
    }

    // Remaining interactions, apportioned by user activity.
    let activity: Vec<f64> = (0..spec.users)
        .map(|u| ((u + 1) as f64).powf(-spec.user_exponent))
        .collect();
    let caps: Vec<usize> = per_user.iter().map(|s| spec.items - s.len()).collect();
    let extras = apportion(
        &activity,
        spec.interactions - spec.items,
        &caps,
    );

    // Weighted sampling without replacement via Gumbel top-n over the catalog,
    // skipping items the user already holds from the seed pass.
    let mut held = vec![false; spec.items];
    let mut keyed: Vec<(f64, u32)> = Vec::with_capacity(spec.items);
    for u in 0..spec.users {
        let n = extras[u];
        let cu = u % c;
        for &i in &per_user[u] {
            held[i as usize] = true;
        }
        keyed.clear();
        for i in 0..spec.items {
            let noise: f64 = gumbel.sample(&mut rng);
            if held[i] {
                continue;
            }
            let boost = if item_cluster[i] == cu {
                spec.affinity_boost.ln()
            } else {
                0.0
            };
            keyed.push((log_pop[i] + boost + noise, i as u32));
        }
        if n > 0 {
            keyed.select_nth_unstable_by(n - 1, |a, b| {
                b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
            });
            for &(_, i) in keyed.iter().take(n) {
                per_user[u].push(i);
            }
        }
        for &i in &per_user[u] {
            held[i as usize] = false;
        }
    }

    let mut pairs = Vec::with_capacity(spec.interactions);
    for (u, items) in per_user.iter_mut().enumerate() {
        items.sort_unstable();
        for &i in items.iter() {
            pairs.push((u as u32, i));
        }
    }
    pairs
}

/// Write a MovieLens-style `ratings.csv` into `dir` and return its path.
/// User ids start at 1; movie ids are sparse (3 * index + 1).
pub fn write_movielens(dir: &Path, seed: u64) -> Result<PathBuf> {
    let pairs = generate(&MOVIELENS_SMALL, seed);
    let path = dir.join("ratings.csv");
    let file = File::create(&path).map_err(|e| GgcfError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "userId,movieId,rating,timestamp")?;
        for (n, &(u, i)) in pairs.iter().enumerate() {
            let rating = 3.0 + ((u as u64 + 2 * i as u64) % 5) as f64 * 0.5;
            let ts = 964_982_703u64 + n as u64;
            writeln!(w, "{},{},{},{}", u as u64 + 1, i as u64 * 3 + 1, rating, ts)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| GgcfError::io(&path, e))?;
    Ok(path)
}

/// Write a LastFM-style `user_artists.dat` into `dir` and return its path.
/// User ids start at 2 and artist ids at 1, mirroring the original dump.
pub fn write_lastfm(dir: &Path, seed: u64) -> Result<PathBuf> {
    let pairs = generate(&LASTFM_HETREC, seed);
    let path = dir.join("user_artists.dat");
    let file = File::create(&path).map_err(|e| GgcfError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "userID\tartistID\tweight")?;
        for &(u, i) in &pairs {
            let base = 60_000 / (i as u64 + 10);
            let weight = 50 + base + (u as u64 * 31 + i as u64 * 17) % 500;
            writeln!(w, "{}\t{}\t{}", u as u64 + 2, i as u64 + 1, weight)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| GgcfError::io(&path, e))?;
    Ok(path)
}
