//! Configuration suggestion: quasi-random initial design, then a forest
//! surrogate with expected improvement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::forest::{Forest, ForestConfig};
use super::space::{Config, DimKind, ParamSpace};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuggestOptions {
    /// Suggestions drawn from the quasi-random initial design.
    pub n_init: usize,
    pub candidates: usize,
    /// One random suggestion follows every this many model-based ones.
    pub random_every: usize,
    /// Exploration jitter ξ in expected improvement.
    pub xi: f64,
    pub forest: ForestConfig,
}

impl Default for SuggestOptions {
    fn default() -> Self {
        Self {
            n_init: 8,
            candidates: 500,
            random_every: 5,
            xi: 0.01,
            forest: ForestConfig::default(),
        }
    }
}

/// An evaluated configuration. Failed trials enter with objective 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub config: Config,
    pub objective: f64,
}

/// How a suggestion was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuggestionKind {
    Initial,
    Random,
    Model,
    SinglePoint,
}

/// Expected improvement of a maximization candidate over `best`.
pub fn expected_improvement(mean: f64, variance: f64, best: f64, xi: f64) -> f64 {
    let gain = mean - best - xi;
    if variance <= 0.0 {
        return gain.max(0.0);
    }
    let sd = variance.sqrt();
    let z = gain / sd;
    let n = Normal::standard();
    (gain * n.cdf(z) + sd * n.pdf(z)).max(0.0)
}

/// Replaces objectives by their ranks scaled to [0, 1], ties sharing the
/// average rank. The surrogate then sees the ordering of trials but not the
/// size of the gaps between poor ones, which would otherwise dominate the
/// forest's variance and pull suggestions away from the incumbent.
fn rank_transform(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let scale = n.saturating_sub(1).max(1) as f64;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && y[order[j + 1]] == y[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 / scale;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut n = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= n).all(|&p| n % p != 0) {
            out.push(n);
        }
        n += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Point `index` of a `dims`-dimensional Halton sequence with a seeded
/// Cranley-Patterson rotation.
pub fn halton(index: u64, dims: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x4a17));
    primes(dims)
        .into_iter()
        .map(|p| (radical_inverse(index, p) + rng.random::<f64>()).fract())
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dims: usize) -> Vec<f64> {
    (0..dims).map(|_| rng.random::<f64>()).collect()
}

fn perturb(space: &ParamSpace, base: &[f64], scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    space
        .dimensions
        .iter()
        .zip(base)
        .map(|(d, &u)| match d.kind {
            DimKind::Categorical { .. } => {
                if rng.random::<f64>() < 0.2 {
                    rng.random()
                } else {
                    u
                }
            }
            _ => {
                let z: f64 = StandardNormal.sample(rng);
                (u + scale * z).clamp(0.0, 1.0)
            }
        })
        .collect()
}

/// Next configuration to evaluate. Deterministic in `(history, seed)`.
pub fn suggest(
    history: &[Observation],
    space: &ParamSpace,
    seed: u64,
    opts: &SuggestOptions,
) -> (Config, SuggestionKind) {
    if space.is_single_point() {
        log::warn!("the search space has a single point");
        return (space.default_config(), SuggestionKind::SinglePoint);
    }
    let n = history.len();
    let dims = space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, n as u64));
    if n < opts.n_init {
        let u = halton(n as u64 + 1, dims, seed);
        return (space.from_unit(&u), SuggestionKind::Initial);
    }
    let model_turn = (n - opts.n_init) % (opts.random_every + 1) != opts.random_every;
    if history.len() < 2 || !model_turn {
        return (space.from_unit(&random_unit(&mut rng, dims)), SuggestionKind::Random);
    }

    let x: Vec<Vec<f64>> = history.iter().map(|o| space.encode(&o.config)).collect();
    let objectives: Vec<f64> = history.iter().map(|o| o.objective).collect();
    let y = rank_transform(&objectives);
    let forest = Forest::fit(&x, &y, opts.forest, derive_seed(seed, 0xf0 + n as u64));
    let (best_i, best) = y
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    let incumbent = space.to_unit(&history[best_i].config);

    const SCALES: [f64; 4] = [0.02, 0.05, 0.1, 0.2];
    let mut chosen = None;
    let mut best_ei = f64::NEG_INFINITY;
    for c in 0..opts.candidates {
        // Local candidates come first so that EI ties favour refinement.
        let u = if c < opts.candidates / 2 {
            perturb(space, &incumbent, SCALES[c % SCALES.len()], &mut rng)
        } else {
            random_unit(&mut rng, dims)
        };
        let config = space.from_unit(&u);
        let (mean, var) = forest.predict(&space.encode(&config));
        let ei = expected_improvement(mean, var, best, opts.xi);
        if ei > best_ei {
            best_ei = ei;
            chosen = Some(config);
        }
    }
    (chosen.expect("at least one candidate"), SuggestionKind::Model)
}
