//! Synthetic retweet cascades: a preferential-attachment tree grown from one
//! source post, a sprinkle of extra retweet edges, and user profiles whose
//! follower counts track out-degree.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};

use super::{CascadeGraph, Edge, UserRecord};
use crate::error::{MmenError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub extra_edge_frac: f64,
    pub attr_noise: f64,
    pub rng_seed: u64,
}

/// Probability that any single profile field failed to crawl.
const MISSING_FIELD_PROB: f64 = 0.05;
const MEAN_HOP_DELAY_S: f64 = 900.0;

pub fn synth_cascade(cfg: SynthConfig) -> Result<CascadeGraph> {
    let SynthConfig {
        n_nodes: n,
        extra_edge_frac,
        attr_noise,
        rng_seed,
    } = cfg;
    if n < 10 {
        return Err(MmenError::InvalidParam(format!("n_nodes must be >= 10, got {n}")));
    }
    if !(0.0..=1.0).contains(&extra_edge_frac) {
        return Err(MmenError::InvalidParam(format!(
            "extra_edge_frac must be in [0, 1], got {extra_edge_frac}"
        )));
    }
    if !(attr_noise.is_finite() && attr_noise >= 0.0) {
        return Err(MmenError::InvalidParam(format!(
            "attr_noise must be finite and >= 0, got {attr_noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let hop_delay = Exp::new(1.0 / MEAN_HOP_DELAY_S).expect("positive rate");

    // Each node appears once, plus once per child: sampling uniformly from
    // this urn picks parents with probability proportional to out-degree + 1.
    let mut urn: Vec<usize> = vec![0];
    let mut delay = vec![0.0f64; n];
    let mut out_deg = vec![0usize; n];
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(n + n / 4);
    let mut present = std::collections::HashSet::new();
    for child in 1..n {
        let parent = urn[rng.random_range(0..urn.len())];
        delay[child] = delay[parent] + hop_delay.sample(&mut rng);
        edges.push((parent, child, delay[child]));
        present.insert((parent, child));
        out_deg[parent] += 1;
        urn.push(parent);
        urn.push(child);
    }

    let extra = (extra_edge_frac * n as f64).round() as usize;
    let mut added = 0;
    let mut attempts = 0;
    while added < extra && attempts < 50 * extra.max(1) {
        attempts += 1;
        let u = urn[rng.random_range(0..urn.len())];
        let v = rng.random_range(1..n);
        if u == v || present.contains(&(u, v)) || present.contains(&(v, u)) {
            continue;
        }
        present.insert((u, v));
        let d = delay[u].max(delay[v]) + hop_delay.sample(&mut rng);
        edges.push((u, v, d));
        out_deg[u] += 1;
        added += 1;
    }

    let users: Vec<UserRecord> = (0..n)
        .map(|v| synth_user(&mut rng, out_deg[v], attr_noise))
        .collect();

    // Shuffle the edge list so dense ids (first appearance) carry no
    // information about the growth order.
    edges.shuffle(&mut rng);
    let mut dense = vec![usize::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut order = Vec::with_capacity(n);
    for &(u, v, _) in &edges {
        for w in [u, v] {
            if dense[w] == usize::MAX {
                dense[w] = order.len();
                order.push(w);
                labels.push(format!("u{w}"));
            }
        }
    }
    let edges = edges
        .into_iter()
        .map(|(u, v, d)| Edge {
            src: dense[u],
            dst: dense[v],
            delay_s: Some(round_ms(d)),
        })
        .collect();
    let users = order.iter().map(|&w| users[w].clone()).collect();
    CascadeGraph::build(n, edges, Some(users), Some(labels))
}

fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn synth_user(rng: &mut ChaCha8Rng, out_degree: usize, attr_noise: f64) -> UserRecord {
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let field = |rng: &mut ChaCha8Rng| rng.random::<f64>() >= MISSING_FIELD_PROB;

    let followers = (10.0 + 40.0 * out_degree as f64) * (attr_noise * noise.sample(rng)).exp();
    let friends: f64 = LogNormal::new(5.0, 1.0).expect("valid").sample(rng);
    let statuses: f64 = LogNormal::new(6.5, 1.5).expect("valid").sample(rng);
    let verified_p = (0.01 + 0.03 * out_degree as f64).min(0.8);
    let name_len = rng.random_range(3..16);
    let desc_len = rng.random_range(0..161);

    UserRecord {
        name: field(rng).then(|| random_text(rng, name_len)),
        description: field(rng).then(|| random_text(rng, desc_len)),
        followers_count: field(rng).then_some(followers.round() as u64),
        friends_count: field(rng).then_some(friends.round() as u64),
        statuses_count: field(rng).then_some(statuses.round() as u64),
        verified: field(rng).then(|| rng.random::<f64>() < verified_p),
        geo_enabled: field(rng).then(|| rng.random::<f64>() < 0.3),
        retweet_delay_s: None,
    }
}

fn random_text(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| {
            let c = rng.random_range(0..27u8);
            if c == 26 {
                '_'
            } else {
                (b'a' + c) as char
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, extra: f64, noise: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            n_nodes: n,
            extra_edge_frac: extra,
            attr_noise: noise,
            rng_seed: seed,
        }
    }

    #[test]
    fn pure_tree() {
        let g = synth_cascade(cfg(100, 0.0, 0.0, 7)).unwrap();
        assert_eq!(g.num_edges(), 99);
        let roots: Vec<_> = (0..100).filter(|&v| g.in_degree(v) == 0).collect();
        assert_eq!(roots.len(), 1);
        assert_eq!(g.source(), roots[0]);
    }

    #[test]
    fn deterministic_for_seed() {
        let a = synth_cascade(cfg(200, 0.1, 0.5, 3)).unwrap();
        let b = synth_cascade(cfg(200, 0.1, 0.5, 3)).unwrap();
        assert_eq!(a, b);
        let c = synth_cascade(cfg(200, 0.1, 0.5, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn heavy_tailed_out_degree() {
        let g = synth_cascade(cfg(500, 0.1, 0.5, 1)).unwrap();
        let mut deg: Vec<usize> = (0..500).map(|v| g.out_degree(v)).collect();
        deg.sort_unstable();
        let median = deg[250].max(1);
        assert!(deg[499] >= 5 * median, "max {} median {}", deg[499], median);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(synth_cascade(cfg(9, 0.0, 0.0, 1)).is_err());
        assert!(synth_cascade(cfg(20, -0.1, 0.0, 1)).is_err());
        assert!(synth_cascade(cfg(20, 0.1, f64::NAN, 1)).is_err());
    }
}
