//! The generation process: popularities, budgets, Bernoulli acceptance passes
//! over the observed utilities, and uniform subsampling to each user's budget.

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{
    build_partitions, observed_utility, sample_latent_factors, AffinityMatrix, LatentFactors,
    Matrix, NoiseMode, PartitionSpec,
};
use crate::sampling::{derive_stream, EmpiricalCdf, LongTailSpec, RandomStream, StreamLabel};

/// Weight added to every item in the fallback fill of a degenerate row.
pub const FALLBACK_WEIGHT_FLOOR: f64 = 1e-12;

/// How item popularity scores are mapped onto `[0, 1]` before they enter the
/// acceptance exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdfMode {
    /// Empirical CDF over the sampled popularity multiset.
    #[default]
    Cdf,
    /// Histogram density (`ceil(sqrt(n))` equal-width bins) divided by its maximum.
    MaxNormalizedDensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Latent dimensionality `K`.
    pub latent_dim: usize,
    /// Number of user populations `p`.
    pub populations: usize,
    /// Number of item categories `c`.
    pub categories: usize,
    /// Concentration outside an entity's active blocks.
    pub eps: f64,
    /// Popularity coefficient.
    pub delta: f64,
    /// Minimum history length added to every budget.
    pub tau: usize,
    /// Variance of every moment-matched Beta draw.
    pub sigma: f64,
    /// Mean of the blurring factor.
    pub mu_omega: f64,
    /// Law of item popularity scores (`lambda` is its shape parameter).
    pub item_popularity: LongTailSpec,
    /// Law of user budgets (`beta` is its shape parameter).
    pub user_budget: LongTailSpec,
    pub affinity: AffinityMatrix,
    pub pdf_mode: PdfMode,
    pub noise_mode: NoiseMode,
    pub max_passes: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    /// A config with the documented defaults and the given sizes and laws.
    pub fn new(
        n_users: usize,
        n_items: usize,
        latent_dim: usize,
        item_popularity: LongTailSpec,
        user_budget: LongTailSpec,
    ) -> Self {
        GeneratorConfig {
            n_users,
            n_items,
            latent_dim,
            populations: 1,
            categories: 1,
            eps: 0.01,
            delta: 1.0,
            tau: 5,
            sigma: 1e-5,
            mu_omega: 0.98,
            item_popularity,
            user_budget,
            affinity: AffinityMatrix::default_for(1, 1).expect("1x1 default"),
            pdf_mode: PdfMode::Cdf,
            noise_mode: NoiseMode::PerEntry,
            max_passes: 1000,
            seed: 0,
        }
    }

    /// Sets `p` and `c` together with their default affinity.
    pub fn with_groups(mut self, populations: usize, categories: usize) -> Result<Self> {
        self.populations = populations;
        self.categories = categories;
        self.affinity = AffinityMatrix::default_for(populations, categories)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        build_partitions(self.n_users, self.n_items, self.latent_dim, self.populations, self.categories)?;
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config("eps", "eps must be > 0"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::config("delta", "delta must be >= 0"));
        }
        if self.tau > self.n_items {
            return Err(Error::config("tau", format!("tau ({}) exceeds n_items ({})", self.tau, self.n_items)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma", "sigma must be > 0"));
        }
        if !(self.mu_omega > 0.0 && self.mu_omega < 1.0) {
            return Err(Error::config("mu_omega", "mu_omega must lie in (0, 1)"));
        }
        self.item_popularity
            .validate()
            .map_err(|e| Error::config("item_popularity", e.to_string()))?;
        self.user_budget
            .validate()
            .map_err(|e| Error::config("user_budget", e.to_string()))?;
        self.affinity.check_shape(self.populations, self.categories)?;
        if self.max_passes == 0 {
            return Err(Error::config("max_passes", "max_passes must be positive"));
        }
        Ok(())
    }
}

/// Per-user item histories, 0-based and sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interactions {
    pub n_users: usize,
    pub n_items: usize,
    pub histories: Vec<Vec<usize>>,
}

impl Interactions {
    pub fn new(n_users: usize, n_items: usize, mut histories: Vec<Vec<usize>>) -> Result<Self> {
        if histories.len() != n_users {
            return Err(Error::param(format!("{} histories for {n_users} users", histories.len())));
        }
        for (u, h) in histories.iter_mut().enumerate() {
            h.sort_unstable();
            if h.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::param(format!("user {} has a duplicate item", u + 1)));
            }
            if h.last().is_some_and(|&i| i >= n_items) {
                return Err(Error::param(format!("user {} has an item beyond n_items", u + 1)));
            }
        }
        Ok(Interactions {
            n_users,
            n_items,
            histories,
        })
    }

    pub fn n_interactions(&self) -> usize {
        self.histories.iter().map(Vec::len).sum()
    }

    /// `(user, item)` pairs in lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.histories
            .iter()
            .enumerate()
            .flat_map(|(u, h)| h.iter().map(move |&i| (u, i)))
    }
}

#[derive(Debug, Clone)]
pub struct InteractionDataset {
    pub interactions: Interactions,
    pub config: GeneratorConfig,
    /// Popularity score of every item.
    pub popularity: Vec<f64>,
    /// Clamped budget of every user.
    pub budgets: Vec<usize>,
    /// Users whose acceptance passes ran out and were completed by the fallback.
    pub degenerate_users: Vec<usize>,
}

pub fn sample_popularities(n_items: usize, spec: &LongTailSpec, rng: &mut RandomStream) -> Result<Vec<f64>> {
    (0..n_items).map(|_| spec.sample(rng)).collect()
}

/// `min(round(draw) + tau, n_items)`, never below one.
pub fn sample_budgets(
    n_users: usize,
    spec: &LongTailSpec,
    tau: usize,
    n_items: usize,
    rng: &mut RandomStream,
) -> Result<Vec<usize>> {
    (0..n_users)
        .map(|_| {
            let draw = spec.sample(rng)?.round().min(n_items as f64) as usize;
            Ok((draw + tau).min(n_items).max(1))
        })
        .collect()
}

/// Maps popularity scores onto `[0, 1]`, nondecreasing in the score.
pub fn popularity_ranks(popularity: &[f64], mode: PdfMode) -> Result<Vec<f64>> {
    match mode {
        PdfMode::Cdf => {
            let cdf = EmpiricalCdf::new(popularity)?;
            Ok(popularity.iter().map(|&x| cdf.eval(x)).collect())
        }
        PdfMode::MaxNormalizedDensity => {
            if popularity.is_empty() {
                return Err(Error::param("no popularity scores"));
            }
            let lo = popularity.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = popularity.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                return Ok(vec![1.0; popularity.len()]);
            }
            let bins = (popularity.len() as f64).sqrt().ceil() as usize;
            let bin_of = |x: f64| (((x - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1);
            let mut counts = vec![0usize; bins];
            for &x in popularity {
                counts[bin_of(x)] += 1;
            }
            let peak = *counts.iter().max().expect("nonempty") as f64;
            Ok(popularity.iter().map(|&x| counts[bin_of(x)] as f64 / peak).collect())
        }
    }
}

/// `t^(delta * (1 - pop_rank))`, with `0^0 = 1`.
pub fn interaction_probability(t: f64, pop_rank: f64, delta: f64) -> f64 {
    let exponent = delta * (1.0 - pop_rank);
    if exponent == 0.0 {
        1.0
    } else {
        t.powf(exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryOutcome {
    /// Sampled items, sorted ascending.
    pub items: Vec<usize>,
    /// Acceptance passes run.
    pub passes: usize,
    /// Whether the fallback fill was needed.
    pub degenerate: bool,
}

/// One user's history.
///
/// Full passes over the catalog add each absent item with its acceptance
/// probability until the candidate set reaches `budget` or `max_passes` is
/// hit. A short candidate set is topped up by weighted sampling without
/// replacement over the missing items. The result is a uniform subsample of
/// size `budget`.
pub fn generate_history(
    t_row: &[f64],
    pop_ranks: &[f64],
    budget: usize,
    delta: f64,
    max_passes: usize,
    rng: &mut RandomStream,
) -> Result<HistoryOutcome> {
    let n = t_row.len();
    if pop_ranks.len() != n {
        return Err(Error::param(format!("{} ranks for {n} items", pop_ranks.len())));
    }
    if budget > n {
        return Err(Error::param(format!("budget {budget} exceeds {n} items")));
    }
    let probs: Vec<f64> = t_row
        .iter()
        .zip(pop_ranks)
        .map(|(&t, &r)| interaction_probability(t, r, delta))
        .collect();

    let mut present = vec![false; n];
    let mut candidates = Vec::new();
    let mut passes = 0;
    while candidates.len() < budget && passes < max_passes {
        passes += 1;
        for (i, &p) in probs.iter().enumerate() {
            if !present[i] && rng.uniform() < p {
                present[i] = true;
                candidates.push(i);
            }
        }
    }

    let degenerate = candidates.len() < budget;
    if degenerate {
        // Efraimidis-Spirakis keys in log space: ln(u) / w, largest first.
        let mut keyed: Vec<(f64, usize)> = (0..n)
            .filter(|&i| !present[i])
            .map(|i| (rng.uniform_open_low().ln() / (probs[i] + FALLBACK_WEIGHT_FLOOR), i))
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let missing = budget - candidates.len();
        candidates.extend(keyed.into_iter().take(missing).map(|(_, i)| i));
    }

    for k in 0..budget {
        let j = rng.random_range(k..candidates.len());
        candidates.swap(k, j);
    }
    candidates.truncate(budget);
    candidates.sort_unstable();
    Ok(HistoryOutcome {
        items: candidates,
        passes,
        degenerate,
    })
}

/// Everything that does not depend on the popularity law, budget law, `delta`
/// or `tau`: partitions, latent factors and the observed utility matrix.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub partition: PartitionSpec,
    pub factors: LatentFactors,
    pub observed: Matrix,
    pub seed: u64,
}

pub fn prepare_model(config: &GeneratorConfig) -> Result<PreparedModel> {
    config.validate()?;
    let partition = build_partitions(
        config.n_users,
        config.n_items,
        config.latent_dim,
        config.populations,
        config.categories,
    )?;
    let factors = sample_latent_factors(&partition, &config.affinity, config.eps, config.seed)?;
    let observed = observed_utility(&factors, config.sigma, config.mu_omega, config.noise_mode, config.seed)?;
    Ok(PreparedModel {
        partition,
        factors,
        observed,
        seed: config.seed,
    })
}

/// Runs the popularity, budget and history stages on a prepared model.
///
/// `config` may differ from the one the model was prepared with only in the
/// popularity law, budget law, `delta`, `tau`, `pdf_mode` and `max_passes`.
pub fn sample_interactions(model: &PreparedModel, config: &GeneratorConfig) -> Result<InteractionDataset> {
    config.validate()?;
    if model.observed.rows() != config.n_users || model.observed.cols() != config.n_items || model.seed != config.seed {
        return Err(Error::param("prepared model does not match the config"));
    }
    let seed = config.seed;
    let popularity = sample_popularities(
        config.n_items,
        &config.item_popularity,
        &mut derive_stream(seed, StreamLabel::Popularity),
    )?;
    let ranks = popularity_ranks(&popularity, config.pdf_mode)?;
    let budgets = sample_budgets(
        config.n_users,
        &config.user_budget,
        config.tau,
        config.n_items,
        &mut derive_stream(seed, StreamLabel::Budget),
    )?;
    let outcomes = (0..config.n_users)
        .into_par_iter()
        .map(|u| {
            let mut rng = derive_stream(seed, StreamLabel::History(u));
            generate_history(model.observed.row(u), &ranks, budgets[u], config.delta, config.max_passes, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut degenerate_users = Vec::new();
    let mut histories = Vec::with_capacity(outcomes.len());
    for (u, outcome) in outcomes.into_iter().enumerate() {
        if outcome.degenerate {
            warn!("user {}: {} passes left the history short; filled by weighted fallback", u + 1, outcome.passes);
            degenerate_users.push(u);
        }
        histories.push(outcome.items);
    }
    Ok(InteractionDataset {
        interactions: Interactions::new(config.n_users, config.n_items, histories)?,
        config: config.clone(),
        popularity,
        budgets,
        degenerate_users,
    })
}

pub fn generate_dataset(config: &GeneratorConfig) -> Result<InteractionDataset> {
    let model = prepare_model(config)?;
    sample_interactions(&model, config)
}
