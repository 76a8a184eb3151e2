//! Populations, topic categories and the latent factor model.
//!
//! Users are split into `p` contiguous populations and items into `c`
//! contiguous categories. The latent space of dimension `K` is cut into `c`
//! equal blocks, one per category. An item only has Dirichlet-derived
//! concentration on its category's block, a user only on the blocks of the
//! categories its population prefers; everything else is set to `eps`.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{
    derive_stream, sample_beta_mean_var, sample_dirichlet, ConcentrationVector, RandomStream,
    SimplexVector, StreamLabel, BETA_MEAN_FLOOR,
};

/// Symmetric Dirichlet parameter and scale of the active user concentration.
pub const USER_PRIOR: (f64, f64) = (1.0, 10.0);
/// Symmetric Dirichlet parameter and scale of the active item concentration.
pub const ITEM_PRIOR: (f64, f64) = (100.0, 0.1);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub latent_dim: usize,
    pub populations: usize,
    pub categories: usize,
    /// 0-based population of every user.
    pub user_assignment: Vec<usize>,
    /// 0-based category of every item.
    pub item_assignment: Vec<usize>,
}

impl PartitionSpec {
    /// Latent dimensions owned by `category`.
    pub fn block(&self, category: usize) -> Range<usize> {
        let width = self.latent_dim / self.categories;
        category * width..(category + 1) * width
    }

    pub fn block_width(&self) -> usize {
        self.latent_dim / self.categories
    }

    pub fn users_in(&self, population: usize) -> impl Iterator<Item = usize> + '_ {
        self.user_assignment
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == population)
            .map(|(u, _)| u)
    }

    pub fn items_in(&self, category: usize) -> impl Iterator<Item = usize> + '_ {
        self.item_assignment
            .iter()
            .enumerate()
            .filter(move |(_, c)| **c == category)
            .map(|(i, _)| i)
    }
}

/// Contiguous equal-size groups; the remainder goes to the last group.
pub fn assign_groups(n: usize, groups: usize) -> Vec<usize> {
    let size = n / groups;
    (0..n).map(|idx| (idx / size.max(1)).min(groups - 1)).collect()
}

pub fn build_partitions(
    n_users: usize,
    n_items: usize,
    latent_dim: usize,
    populations: usize,
    categories: usize,
) -> Result<PartitionSpec> {
    if n_users == 0 {
        return Err(Error::config("n_users", "must be positive"));
    }
    if n_items == 0 {
        return Err(Error::config("n_items", "must be positive"));
    }
    if latent_dim == 0 {
        return Err(Error::config("latent_dim", "must be positive"));
    }
    if populations == 0 {
        return Err(Error::config("populations", "must be positive"));
    }
    if categories == 0 {
        return Err(Error::config("categories", "must be positive"));
    }
    if categories > latent_dim {
        return Err(Error::config(
            "categories",
            format!("categories (c = {categories}) must not exceed latent_dim (K = {latent_dim})"),
        ));
    }
    if !latent_dim.is_multiple_of(categories) {
        return Err(Error::config(
            "latent_dim",
            format!("K must be divisible by c (K = {latent_dim}, c = {categories})"),
        ));
    }
    if n_users < populations {
        return Err(Error::config(
            "populations",
            format!("{populations} populations need at least as many users, got {n_users}"),
        ));
    }
    if n_items < categories {
        return Err(Error::config(
            "categories",
            format!("{categories} categories need at least as many items, got {n_items}"),
        ));
    }
    Ok(PartitionSpec {
        n_users,
        n_items,
        latent_dim,
        populations,
        categories,
        user_assignment: assign_groups(n_users, populations),
        item_assignment: assign_groups(n_items, categories),
    })
}

/// Which categories each population prefers (`p` rows by `c` columns).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<bool>>", into = "Vec<Vec<bool>>")]
pub struct AffinityMatrix {
    rows: Vec<Vec<bool>>,
}

impl AffinityMatrix {
    pub fn new(rows: Vec<Vec<bool>>) -> Result<Self> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || width == 0 {
            return Err(Error::config("affinity", "must have at least one row and column"));
        }
        for (j, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::config("affinity", format!("row {} has {} columns, expected {width}", j + 1, row.len())));
            }
            if !row.iter().any(|b| *b) {
                return Err(Error::config("affinity", format!("row {} prefers no category", j + 1)));
            }
        }
        Ok(AffinityMatrix { rows })
    }

    pub fn identity(n: usize) -> Self {
        AffinityMatrix {
            rows: (0..n).map(|j| (0..n).map(|k| j == k).collect()).collect(),
        }
    }

    /// Default relation for `populations` and `categories`.
    ///
    /// One population prefers everything; `p == c` is the identity; `p == c + 1`
    /// puts a neutral population (all categories) at index `p / 2` and maps the
    /// others one-to-one in order.
    pub fn default_for(populations: usize, categories: usize) -> Result<Self> {
        if populations == 0 || categories == 0 {
            return Err(Error::config("affinity", "needs at least one population and category"));
        }
        if populations == 1 {
            return Ok(AffinityMatrix { rows: vec![vec![true; categories]] });
        }
        if populations == categories {
            return Ok(Self::identity(categories));
        }
        if populations == categories + 1 {
            let neutral = populations / 2;
            let mut rows = Vec::with_capacity(populations);
            let mut next = 0;
            for j in 0..populations {
                if j == neutral {
                    rows.push(vec![true; categories]);
                } else {
                    rows.push((0..categories).map(|k| k == next).collect());
                    next += 1;
                }
            }
            return Ok(AffinityMatrix { rows });
        }
        Err(Error::config(
            "affinity",
            format!("no default for {populations} populations and {categories} categories; give an explicit table"),
        ))
    }

    pub fn populations(&self) -> usize {
        self.rows.len()
    }

    pub fn categories(&self) -> usize {
        self.rows[0].len()
    }

    pub fn prefers(&self, population: usize, category: usize) -> bool {
        self.rows[population][category]
    }

    pub fn preferred(&self, population: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[population]
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(k, _)| k)
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }

    pub fn check_shape(&self, populations: usize, categories: usize) -> Result<()> {
        if self.populations() != populations || self.categories() != categories {
            return Err(Error::config(
                "affinity",
                format!(
                    "table is {}x{}, expected {populations}x{categories}",
                    self.populations(),
                    self.categories()
                ),
            ));
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<bool>>> for AffinityMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<bool>>) -> Result<Self> {
        AffinityMatrix::new(rows)
    }
}

impl From<AffinityMatrix> for Vec<Vec<bool>> {
    fn from(m: AffinityMatrix) -> Self {
        m.rows
    }
}

#[derive(Debug, Clone)]
pub struct LatentFactors {
    pub rho: Vec<SimplexVector>,
    pub alpha: Vec<SimplexVector>,
    pub mu_rho: Vec<ConcentrationVector>,
    pub mu_alpha: Vec<ConcentrationVector>,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::param("ragged matrix rows"));
        }
        let n = rows.len();
        Ok(Matrix {
            rows: n,
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone)]
pub struct UtilityMatrices {
    /// True utility `V`.
    pub true_utility: Matrix,
    /// Observed utility `T`, the blurred `V`.
    pub observed: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Independent noise factor per matrix entry.
    #[default]
    PerEntry,
    /// One noise factor shared by the whole matrix.
    Global,
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::config("eps", "eps must be > 0"))
    }
}

// Positions in `active` get a scaled symmetric Dirichlet draw, the rest `eps`.
fn masked_concentration(
    latent_dim: usize,
    active: &[usize],
    (prior, scale): (f64, f64),
    eps: f64,
    rng: &mut RandomStream,
) -> Result<ConcentrationVector> {
    let inner = ConcentrationVector::new(vec![prior; active.len()])?;
    let draw = sample_dirichlet(&inner, rng);
    let mut values = vec![eps; latent_dim];
    for (&k, v) in active.iter().zip(draw.as_slice()) {
        values[k] = v * scale;
    }
    ConcentrationVector::new(values)
}

pub fn item_concentration(
    item: usize,
    spec: &PartitionSpec,
    eps: f64,
    rng: &mut RandomStream,
) -> Result<ConcentrationVector> {
    check_eps(eps)?;
    let active: Vec<usize> = spec.block(spec.item_assignment[item]).collect();
    masked_concentration(spec.latent_dim, &active, ITEM_PRIOR, eps, rng)
}

pub fn user_concentration(
    user: usize,
    spec: &PartitionSpec,
    affinity: &AffinityMatrix,
    eps: f64,
    rng: &mut RandomStream,
) -> Result<ConcentrationVector> {
    check_eps(eps)?;
    let population = spec.user_assignment[user];
    let active: Vec<usize> = affinity
        .preferred(population)
        .flat_map(|category| spec.block(category))
        .collect();
    masked_concentration(spec.latent_dim, &active, USER_PRIOR, eps, rng)
}

/// One concentration and one factor draw per entity, each entity on its own
/// stream.
pub fn sample_latent_factors(
    spec: &PartitionSpec,
    affinity: &AffinityMatrix,
    eps: f64,
    master_seed: u64,
) -> Result<LatentFactors> {
    check_eps(eps)?;
    affinity.check_shape(spec.populations, spec.categories)?;
    let users: Vec<(ConcentrationVector, SimplexVector)> = (0..spec.n_users)
        .into_par_iter()
        .map(|u| {
            let mut rng = derive_stream(master_seed, StreamLabel::User(u));
            let conc = user_concentration(u, spec, affinity, eps, &mut rng)?;
            let rho = sample_dirichlet(&conc, &mut rng);
            Ok((conc, rho))
        })
        .collect::<Result<_>>()?;
    let items: Vec<(ConcentrationVector, SimplexVector)> = (0..spec.n_items)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_stream(master_seed, StreamLabel::Item(i));
            let conc = item_concentration(i, spec, eps, &mut rng)?;
            let alpha = sample_dirichlet(&conc, &mut rng);
            Ok((conc, alpha))
        })
        .collect::<Result<_>>()?;
    let (mu_rho, rho) = users.into_iter().unzip();
    let (mu_alpha, alpha) = items.into_iter().unzip();
    Ok(LatentFactors {
        rho,
        alpha,
        mu_rho,
        mu_alpha,
    })
}

fn clamp_mean(x: f64) -> f64 {
    x.clamp(BETA_MEAN_FLOOR, 1.0 - BETA_MEAN_FLOOR)
}

fn true_utility_row(factors: &LatentFactors, user: usize, sigma: f64, master_seed: u64) -> Result<Vec<f64>> {
    let mut rng = derive_stream(master_seed, StreamLabel::Utility(user));
    let rho = &factors.rho[user];
    factors
        .alpha
        .iter()
        .map(|alpha| sample_beta_mean_var(clamp_mean(rho.dot(alpha)), sigma, &mut rng))
        .collect()
}

fn blur_row(v_row: &[f64], user: usize, mu_omega: f64, sigma: f64, global: Option<f64>, master_seed: u64) -> Result<Vec<f64>> {
    match global {
        Some(omega) => Ok(v_row.iter().map(|v| v * omega).collect()),
        None => {
            let mut rng = derive_stream(master_seed, StreamLabel::Noise(user));
            v_row
                .iter()
                .map(|v| Ok(v * sample_beta_mean_var(mu_omega, sigma, &mut rng)?))
                .collect()
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::config("sigma", "sigma must be > 0"))
    }
}

fn global_omega(mode: NoiseMode, mu_omega: f64, sigma: f64, master_seed: u64) -> Result<Option<f64>> {
    if !(mu_omega > 0.0 && mu_omega < 1.0) {
        return Err(Error::config("mu_omega", "mu_omega must lie in (0, 1)"));
    }
    match mode {
        NoiseMode::PerEntry => Ok(None),
        NoiseMode::Global => {
            let mut rng = derive_stream(master_seed, StreamLabel::GlobalNoise);
            Ok(Some(sample_beta_mean_var(mu_omega, sigma, &mut rng)?))
        }
    }
}

/// `V[u][i] ~ Beta(mean = rho_u . alpha_i, var = sigma)`.
pub fn true_utility(factors: &LatentFactors, sigma: f64, master_seed: u64) -> Result<Matrix> {
    check_sigma(sigma)?;
    let rows = (0..factors.rho.len())
        .into_par_iter()
        .map(|u| true_utility_row(factors, u, sigma, master_seed))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(rows)
}

/// `T = V * omega` with `omega ~ Beta(mean = mu_omega, var = sigma)`.
pub fn blur_utility(v: &Matrix, mu_omega: f64, sigma: f64, mode: NoiseMode, master_seed: u64) -> Result<Matrix> {
    check_sigma(sigma)?;
    let global = global_omega(mode, mu_omega, sigma, master_seed)?;
    let rows = (0..v.rows())
        .into_par_iter()
        .map(|u| blur_row(v.row(u), u, mu_omega, sigma, global, master_seed))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(rows)
}

pub fn utility_matrices(
    factors: &LatentFactors,
    sigma: f64,
    mu_omega: f64,
    mode: NoiseMode,
    master_seed: u64,
) -> Result<UtilityMatrices> {
    let true_utility = true_utility(factors, sigma, master_seed)?;
    let observed = blur_utility(&true_utility, mu_omega, sigma, mode, master_seed)?;
    Ok(UtilityMatrices {
        true_utility,
        observed,
    })
}

/// `T` alone, row by row, without keeping `V`. Same streams as
/// [`true_utility`] followed by [`blur_utility`], hence the same values.
pub fn observed_utility(
    factors: &LatentFactors,
    sigma: f64,
    mu_omega: f64,
    mode: NoiseMode,
    master_seed: u64,
) -> Result<Matrix> {
    check_sigma(sigma)?;
    let global = global_omega(mode, mu_omega, sigma, master_seed)?;
    let rows = (0..factors.rho.len())
        .into_par_iter()
        .map(|u| {
            let v = true_utility_row(factors, u, sigma, master_seed)?;
            blur_row(&v, u, mu_omega, sigma, global, master_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(rows)
}
