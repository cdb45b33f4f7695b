//! Seeded synthetic click logs and CTR samples with planted clusters.
//!
//! Items are split evenly into clusters (`item i` belongs to cluster
//! `i mod C`) and clusters form a ring: cluster `c` bridges to `c + 1`.
//! Every user has a home cluster. Sessions draw items from the home cluster
//! by Zipf popularity; at each step a session makes a one-click excursion to
//! the bridged cluster with probability `bridge_prob`. Those excursions are
//! the only source of inter-cluster co-occurrence edges.
//!
//! Labels follow `P(click) = σ(ctr_signal · affinity)`, with affinity `+1`
//! when the ad sits in the user's home or bridged cluster and `-1` otherwise.
//!
//! Training ads come from the user's home cluster (affinity `+1`) or an
//! unrelated cluster (affinity `-1`), so the labels teach "the ad matches
//! what the user clicked". A held-out fraction of users supplies the test
//! set. Their own sessions never leave the home cluster, and their ads come
//! from the bridged cluster (affinity `+1`) or an unrelated one, so the only
//! path from their history to a matching ad runs through co-occurrence
//! edges laid down by other users.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::sigmoid;
use crate::ctrmodel::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynConfig {
    pub num_items: usize,
    pub num_clusters: usize,
    pub num_users: usize,
    pub sessions_per_user: usize,
    /// Inclusive range of clicks per session.
    pub session_len: (usize, usize),
    pub bridge_prob: f64,
    /// Fraction of users whose samples carry at most two history clicks.
    pub sparsity_mix: f64,
    pub ctr_signal: f64,
    /// Fraction of users held out for the test set.
    pub holdout_frac: f64,
    /// Training samples per regular user.
    pub samples_per_user: usize,
    /// Test samples per held-out user.
    pub test_samples_per_user: usize,
    /// Zipf exponent of item popularity inside a cluster.
    pub popularity_exponent: f64,
    /// Distinct filler words per cluster query.
    pub query_words: usize,
    /// History length cap for emitted samples.
    pub max_clicks: usize,
    pub seed: u64,
}

impl Default for SynConfig {
    fn default() -> Self {
        SynConfig {
            num_items: 2000,
            num_clusters: 20,
            num_users: 5000,
            sessions_per_user: 3,
            session_len: (2, 6),
            bridge_prob: 0.1,
            sparsity_mix: 0.4,
            ctr_signal: 2.0,
            holdout_frac: 0.2,
            samples_per_user: 6,
            test_samples_per_user: 10,
            popularity_exponent: 1.0,
            query_words: 3,
            max_clicks: 20,
            seed: 0,
        }
    }
}

impl SynConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 || self.num_items < self.num_clusters {
            return Err(Error::invalid(format!(
                "{} items cannot fill {} clusters",
                self.num_items, self.num_clusters
            )));
        }
        if self.num_users == 0 {
            return Err(Error::invalid("need at least one user"));
        }
        for (name, p) in [
            ("bridge_prob", self.bridge_prob),
            ("sparsity_mix", self.sparsity_mix),
            ("holdout_frac", self.holdout_frac),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} {p} outside [0, 1]")));
            }
        }
        let (lo, hi) = self.session_len;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("bad session length range {lo}..={hi}")));
        }
        if hi as u64 * 60 + 1800 >= SESSION_SPACING {
            return Err(Error::invalid("sessions too long for the timestamp layout"));
        }
        if self.query_words == 0 || self.max_clicks == 0 {
            return Err(Error::invalid("query_words and max_clicks must be positive"));
        }
        if !self.ctr_signal.is_finite() || !self.popularity_exponent.is_finite() {
            return Err(Error::invalid("ctr_signal and popularity_exponent must be finite"));
        }
        Ok(())
    }

    pub fn cluster_of_index(&self, item: usize) -> usize {
        item % self.num_clusters
    }

    /// Cluster of an item id produced by this generator.
    pub fn cluster_of(&self, item_id: &str) -> Option<usize> {
        let idx: usize = item_id.strip_prefix('i')?.parse().ok()?;
        (idx < self.num_items).then(|| self.cluster_of_index(idx))
    }

    pub fn bridged(&self, cluster: usize) -> usize {
        (cluster + 1) % self.num_clusters
    }

    /// Expected positive rate of emitted samples. Ads come from a matching
    /// cluster or an unrelated one with equal probability, in both splits.
    pub fn expected_positive_rate(&self) -> f64 {
        let pos = sigmoid(self.ctr_signal);
        if self.num_clusters < 3 {
            // No unrelated cluster exists; every ad has positive affinity.
            return pos;
        }
        0.5 * (pos + sigmoid(-self.ctr_signal))
    }
}

const BASE_TIME: u64 = 1_600_000_000;
const SESSION_SPACING: u64 = 7200;
const USER_SPAN: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynUser {
    pub id: String,
    pub home: usize,
    pub sparse: bool,
    pub held_out: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynData {
    /// Click-log TSV lines, sorted by `(user, timestamp)`.
    pub click_log: Vec<String>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub users: Vec<SynUser>,
    /// Number of generated sessions.
    pub sessions: usize,
}

impl SynData {
    pub fn click_log_text(&self) -> String {
        let mut s = String::with_capacity(self.click_log.len() * 32);
        for line in &self.click_log {
            s.push_str(line);
            s.push('\n');
        }
        s
    }
}

pub fn item_id(idx: usize) -> String {
    format!("i{idx:05}")
}

fn user_id(idx: usize) -> String {
    format!("u{idx:05}")
}

fn query_text(cluster: usize, word: usize) -> String {
    format!("c{cluster:02} w{word}")
}

struct ClusterSampler {
    members: Vec<Vec<usize>>,
    popularity: Vec<WeightedIndex<f64>>,
}

impl ClusterSampler {
    fn new(cfg: &SynConfig) -> Result<Self> {
        let mut members = vec![Vec::new(); cfg.num_clusters];
        for i in 0..cfg.num_items {
            members[cfg.cluster_of_index(i)].push(i);
        }
        let popularity = members
            .iter()
            .map(|m| {
                let w: Vec<f64> = (1..=m.len())
                    .map(|rank| (rank as f64).powf(-cfg.popularity_exponent))
                    .collect();
                WeightedIndex::new(w).map_err(|e| Error::invalid(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClusterSampler {
            members,
            popularity,
        })
    }

    fn popular<R: Rng>(&self, cluster: usize, rng: &mut R) -> usize {
        self.members[cluster][self.popularity[cluster].sample(rng)]
    }

    fn uniform<R: Rng>(&self, cluster: usize, rng: &mut R) -> usize {
        *self.members[cluster].choose(rng).expect("clusters are non-empty")
    }
}

/// Generates click log, training and test samples. Output is a pure function
/// of `cfg`.
pub fn generate(cfg: &SynConfig) -> Result<SynData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sampler = ClusterSampler::new(cfg)?;
    let c = cfg.num_clusters;

    let mut flags: Vec<(bool, bool)> = (0..cfg.num_users)
        .map(|u| {
            let sparse = (u as f64) < (cfg.sparsity_mix * cfg.num_users as f64).round();
            (sparse, false)
        })
        .collect();
    flags.shuffle(&mut rng);
    let mut holdout_order: Vec<usize> = (0..cfg.num_users).collect();
    holdout_order.shuffle(&mut rng);
    let n_holdout = (cfg.holdout_frac * cfg.num_users as f64).round() as usize;
    for &u in &holdout_order[..n_holdout] {
        flags[u].1 = true;
    }

    let mut users = Vec::with_capacity(cfg.num_users);
    let mut click_log = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut sessions = 0;

    for (u, &(sparse, held_out)) in flags.iter().enumerate() {
        let id = user_id(u);
        let home = rng.gen_range(0..c);
        let bridged = cfg.bridged(home);

        let mut history: Vec<usize> = Vec::new();
        let user_start = BASE_TIME + u as u64 * USER_SPAN;
        for s in 0..cfg.sessions_per_user {
            sessions += 1;
            let len = rng.gen_range(cfg.session_len.0..=cfg.session_len.1);
            let query = query_text(home, rng.gen_range(0..cfg.query_words));
            let mut t = user_start + s as u64 * SESSION_SPACING;
            for step in 0..len {
                if step > 0 {
                    t += rng.gen_range(10..=60);
                }
                let excursion = !held_out && step > 0 && rng.gen_bool(cfg.bridge_prob);
                let cluster = if excursion { bridged } else { home };
                let item = sampler.popular(cluster, &mut rng);
                history.push(item);
                click_log.push(format!("{id}\t{t}\t{query}\t{}", item_id(item)));
            }
        }

        let keep = if sparse {
            rng.gen_range(0..=2usize).min(history.len())
        } else {
            history.len().min(cfg.max_clicks)
        };
        let pre_clicks: Vec<String> = history[history.len() - keep..]
            .iter()
            .map(|&i| item_id(i))
            .collect();

        let n_samples = if held_out {
            cfg.test_samples_per_user
        } else {
            cfg.samples_per_user
        };
        let others: Vec<usize> = (0..c).filter(|&k| k != home && k != bridged).collect();
        for _ in 0..n_samples {
            let (ad_cluster, affinity) = match others.choose(&mut rng) {
                Some(&k) if rng.gen_bool(0.5) => (k, -1.0),
                _ if held_out => (bridged, 1.0),
                _ => (home, 1.0),
            };
            let ad = sampler.uniform(ad_cluster, &mut rng);
            let label = u8::from(rng.gen_bool(sigmoid(cfg.ctr_signal * affinity)));
            let sample = Sample {
                query: query_text(ad_cluster, rng.gen_range(0..cfg.query_words)),
                user_id: id.clone(),
                ad_item: item_id(ad),
                pre_clicks: pre_clicks.clone(),
                label,
            };
            if held_out {
                test.push(sample);
            } else {
                train.push(sample);
            }
        }

        users.push(SynUser {
            id,
            home,
            sparse,
            held_out,
        });
    }

    Ok(SynData {
        click_log,
        train,
        test,
        users,
        sessions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynConfig {
        SynConfig {
            num_items: 60,
            num_clusters: 6,
            num_users: 10,
            sessions_per_user: 3,
            sparsity_mix: 0.0,
            ..SynConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.click_log, c.click_log);
    }

    #[test]
    fn session_count_is_exact() {
        let d = generate(&small()).unwrap();
        assert_eq!(d.sessions, 30);
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        assert!(generate(&SynConfig { num_items: 3, num_clusters: 5, ..small() }).is_err());
        assert!(generate(&SynConfig { num_clusters: 0, ..small() }).is_err());
        assert!(generate(&SynConfig { bridge_prob: 1.5, ..small() }).is_err());
        assert!(generate(&SynConfig { session_len: (3, 2), ..small() }).is_err());
    }

    #[test]
    fn cluster_lookup() {
        let cfg = small();
        assert_eq!(cfg.cluster_of("i00007"), Some(1));
        assert_eq!(cfg.cluster_of("i00060"), None);
        assert_eq!(cfg.cluster_of("x1"), None);
        assert_eq!(cfg.bridged(5), 0);
    }

    #[test]
    fn held_out_users_only_appear_in_test() {
        let d = generate(&SynConfig { num_users: 50, ..small() }).unwrap();
        for s in &d.test {
            let u = d.users.iter().find(|u| u.id == s.user_id).unwrap();
            assert!(u.held_out);
        }
        for s in &d.train {
            let u = d.users.iter().find(|u| u.id == s.user_id).unwrap();
            assert!(!u.held_out);
        }
        assert_eq!(d.users.iter().filter(|u| u.held_out).count(), 10);
    }
}
