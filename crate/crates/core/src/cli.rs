//! The `generate`, `analyze` and `fit` commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::analysis::{
    category_share, degree_histogram, fit_power_law, grid_search_fit, Axis, DegreeHistogram, Subset,
};
use crate::config::{parse_config, parse_grid, serialize_config};
use crate::error::{Error, Result};
use crate::generator::{generate_dataset, prepare_model};
use crate::io::{
    checksum, dataset_bytes, read_dataset, stage_file, write_atomic, RunManifest, DATASET_FILE, MANIFEST_FILE,
};
use crate::latent::{build_partitions, utility_matrices, Matrix};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "GENREC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "genrec", version, about = "Synthetic user-item interaction datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset from a TOML config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write rho, alpha, V and T as CSV.
        #[arg(long)]
        dump_factors: bool,
    },
    /// Degree histograms, category shares, coordinates and fitted exponents.
    Analyze {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        populations: Option<usize>,
        #[arg(long)]
        categories: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search generator parameters against a reference dataset.
    Fit {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Builds the global thread pool from [`THREADS_ENV`], if set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(THREADS_ENV, format!("expected a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(THREADS_ENV, e.to_string()))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            config,
            out,
            seed,
            dump_factors,
        } => cmd_generate(&config, &out, seed, dump_factors),
        Command::Analyze {
            dataset,
            populations,
            categories,
            out,
        } => cmd_analyze(&dataset, populations, categories, &out),
        Command::Fit {
            reference,
            grid,
            config,
            out,
        } => cmd_fit(&reference, &grid, &config, &out),
    }
}

/// Header `{entity},1,..,{cols}`, then one row per entity led by its 1-based id.
fn indexed_csv<'a>(entity: &str, cols: usize, rows: impl Iterator<Item = &'a [f64]>) -> String {
    let mut s = String::from(entity);
    for k in 1..=cols {
        let _ = write!(s, ",{k}");
    }
    s.push('\n');
    for (r, row) in rows.enumerate() {
        let _ = write!(s, "{}", r + 1);
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn matrix_csv(m: &Matrix) -> String {
    indexed_csv("user", m.cols(), (0..m.rows()).map(|r| m.row(r)))
}

fn simplex_csv(entity: &str, rows: &[crate::sampling::SimplexVector]) -> String {
    let cols = rows.first().map_or(0, |v| v.len());
    indexed_csv(entity, cols, rows.iter().map(|v| v.as_slice()))
}

/// Writes `interactions.csv` and `manifest.json` (plus factor dumps) into
/// `out`. All files are staged first and only renamed into place once every
/// one of them has been written.
pub fn cmd_generate(config_path: &Path, out: &Path, seed: Option<u64>, dump_factors: bool) -> Result<()> {
    let mut config = parse_config(&fs::read_to_string(config_path)?)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let dataset = generate_dataset(&config)?;
    let bytes = dataset_bytes(&dataset.interactions);
    let manifest = RunManifest::new(&dataset, checksum(&bytes))?;

    let mut files: Vec<(PathBuf, Vec<u8>)> = vec![
        (out.join(DATASET_FILE), bytes),
        (out.join(MANIFEST_FILE), manifest.to_json()?.into_bytes()),
    ];
    if dump_factors {
        let model = prepare_model(&config)?;
        let u = utility_matrices(&model.factors, config.sigma, config.mu_omega, config.noise_mode, config.seed)?;
        files.push((out.join("rho.csv"), simplex_csv("user", &model.factors.rho).into_bytes()));
        files.push((out.join("alpha.csv"), simplex_csv("item", &model.factors.alpha).into_bytes()));
        files.push((out.join("V.csv"), matrix_csv(&u.true_utility).into_bytes()));
        files.push((out.join("T.csv"), matrix_csv(&u.observed).into_bytes()));
    }

    fs::create_dir_all(out)?;
    let staged = files
        .iter()
        .map(|(path, bytes)| stage_file(path, bytes))
        .collect::<Result<Vec<_>>>()?;
    for (tmp, (path, _)) in staged.into_iter().zip(&files) {
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    }
    println!(
        "wrote {} interactions for {} users to {} (checksum {})",
        manifest.summary.n_interactions,
        manifest.summary.n_users,
        out.join(DATASET_FILE).display(),
        manifest.dataset_checksum
    );
    Ok(())
}

fn histogram_csv(h: &DegreeHistogram) -> String {
    let mut s = String::from("degree,count\n");
    for (d, c) in &h.bins {
        let _ = writeln!(s, "{d},{c}");
    }
    s
}

fn fit_line(label: &str, h: &DegreeHistogram) -> String {
    let degrees = &h.degrees;
    let n = degrees.len().max(1) as f64;
    let mean = degrees.iter().sum::<usize>() as f64 / n;
    let max = degrees.iter().max().copied().unwrap_or(0);
    let zeros = degrees.iter().filter(|&&d| d == 0).count();
    match fit_power_law(&h.samples(), None) {
        Ok(f) => format!(
            "{label}: n = {}, mean degree = {mean:.3}, max = {max}, zero-degree = {zeros}, exponent = {:.4} (x_min = {}, n_tail = {}, ks = {:.4})",
            degrees.len(),
            f.exponent_hat,
            f.x_min,
            f.n_tail,
            f.ks_at_xmin
        ),
        Err(e) => format!(
            "{label}: n = {}, mean degree = {mean:.3}, max = {max}, zero-degree = {zeros}, exponent unavailable ({e})",
            degrees.len()
        ),
    }
}

/// Writes degree histograms (all and per group), per-population category-1
/// share distributions, the coordinate list and `summary.txt` into `out`.
///
/// Dimensions and group counts default to a `manifest.json` next to the
/// dataset when one exists.
pub fn cmd_analyze(dataset_path: &Path, populations: Option<usize>, categories: Option<usize>, out: &Path) -> Result<()> {
    let manifest_path = dataset_path.with_file_name(MANIFEST_FILE);
    let manifest = if manifest_path.is_file() {
        Some(RunManifest::read(&manifest_path)?)
    } else {
        None
    };
    let dims = manifest.as_ref().map(|m| (m.summary.n_users, m.summary.n_items));
    let loaded = read_dataset(dataset_path, dims)?;
    let data = &loaded.interactions;
    let p = populations.or(manifest.as_ref().map(|m| m.config_echo.populations)).unwrap_or(1);
    let c = categories.or(manifest.as_ref().map(|m| m.config_echo.categories)).unwrap_or(1);
    // Only the user and item splits matter here, so K = c.
    let part = build_partitions(data.n_users, data.n_items, c, p, c)?;

    let mut files: Vec<(String, String)> = Vec::new();
    let mut summary = String::new();
    let _ = writeln!(summary, "users: {}", data.n_users);
    let _ = writeln!(summary, "items: {}", data.n_items);
    let _ = writeln!(summary, "interactions: {}", data.n_interactions());
    if loaded.user_offset + loaded.item_offset > 0 {
        let _ = writeln!(
            summary,
            "id offsets applied: user +{}, item +{}",
            loaded.user_offset, loaded.item_offset
        );
    }
    let users = degree_histogram(data, Axis::Users, Subset::All, None)?;
    let items = degree_histogram(data, Axis::Items, Subset::All, None)?;
    let _ = writeln!(summary, "{}", fit_line("user degrees", &users));
    let _ = writeln!(summary, "{}", fit_line("item degrees", &items));
    files.push(("user_degrees.csv".into(), histogram_csv(&users)));
    files.push(("item_degrees.csv".into(), histogram_csv(&items)));

    if p > 1 {
        for j in 0..p {
            let h = degree_histogram(data, Axis::Users, Subset::Population(j), Some(&part))?;
            let _ = writeln!(summary, "{}", fit_line(&format!("user degrees, population {}", j + 1), &h));
            files.push((format!("user_degrees_pop{}.csv", j + 1), histogram_csv(&h)));
            let h = degree_histogram(data, Axis::Items, Subset::Population(j), Some(&part))?;
            files.push((format!("item_degrees_pop{}.csv", j + 1), histogram_csv(&h)));
        }
    }
    if c > 1 {
        for k in 0..c {
            let h = degree_histogram(data, Axis::Items, Subset::Category(k), Some(&part))?;
            let _ = writeln!(summary, "{}", fit_line(&format!("item degrees, category {}", k + 1), &h));
            files.push((format!("item_degrees_cat{}.csv", k + 1), histogram_csv(&h)));
        }
    }

    let shares = category_share(data, &part, 0)?;
    for j in 0..p {
        let mut s = String::from("share,frequency\n");
        for (share, n) in shares.frequencies(j) {
            let _ = writeln!(s, "{share},{n}");
        }
        if let Some(mean) = shares.mean(j) {
            let _ = writeln!(summary, "population {}: mean share of category 1 = {mean:.4}", j + 1);
        }
        files.push((format!("category_share_pop{}.csv", j + 1), s));
    }
    if shares.excluded > 0 {
        let _ = writeln!(summary, "users with empty history: {}", shares.excluded);
    }

    let mut coords = String::from("user,item\n");
    for (u, i) in data.pairs() {
        let _ = writeln!(coords, "{},{}", u + 1, i + 1);
    }
    files.push(("interaction_coords.csv".into(), coords));
    files.push(("summary.txt".into(), summary.clone()));

    fs::create_dir_all(out)?;
    for (name, body) in &files {
        write_atomic(&out.join(name), body.as_bytes())?;
    }
    print!("{summary}");
    Ok(())
}

/// Runs the grid search and writes `fit_grid.csv` and `best_config.toml`.
///
/// Seeds come from the grid file; without them three consecutive seeds
/// starting at the base config's seed are used.
pub fn cmd_fit(reference_path: &Path, grid_path: &Path, config_path: &Path, out: &Path) -> Result<()> {
    let doc = parse_grid(&fs::read_to_string(grid_path)?)?;
    let mut base = parse_config(&fs::read_to_string(config_path)?)?;
    let reference = read_dataset(reference_path, None)?.interactions;
    base.n_users = reference.n_users;
    base.n_items = reference.n_items;
    let seeds = doc
        .seeds
        .unwrap_or_else(|| (0..3).map(|k| base.seed.wrapping_add(k)).collect());
    let fit = grid_search_fit(&reference, &doc.grid, &base, &seeds)?;

    let mut table = String::from("beta,lambda,delta,tau,objective\n");
    for (p, v) in &fit.evaluations {
        let _ = writeln!(table, "{},{},{},{},{}", p.beta, p.lambda, p.delta, p.tau, v);
    }
    let best_config = fit.best.apply(&base);
    fs::create_dir_all(out)?;
    write_atomic(&out.join("fit_grid.csv"), table.as_bytes())?;
    write_atomic(&out.join("best_config.toml"), serialize_config(&best_config)?.as_bytes())?;
    println!(
        "best: beta = {}, lambda = {}, delta = {}, tau = {} (objective {:.5}, {} points, {} seeds)",
        fit.best.beta,
        fit.best.lambda,
        fit.best.delta,
        fit.best.tau,
        fit.objective,
        fit.evaluations.len(),
        seeds.len()
    );
    Ok(())
}
