//! Pipeline commands behind the `m5kit` binary.
//!
//! Every command loads one TOML config, resolves relative paths against the
//! config file's directory and writes under `output_dir/run-<hash>`, where
//! the hash is taken over the normalized config. Re-running a command with
//! the same config overwrites its outputs with identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use m5kit::config::PipelineConfig;
use m5kit::data::{load_panel, PanelDataset};
use m5kit::features::{cache_key, encode_matrix, load_matrix, panel_fingerprint, save_matrix, CacheLookup, FeatureContext, FeatureMatrix};
use m5kit::forecast::{
    blend_groups, configured_splits, forecast_groups, make_splits, score_split, smooth, BacktestReport, FittedGroup,
    FittedModels, SplitResult, SplitScorer, ValidationSplit, ENSEMBLE,
};
use m5kit::grid::ForecastGrid;
use m5kit::hierarchy::{build_hierarchy, BOTTOM, N_LEVELS};
use m5kit::metrics::{evaluate_point, evaluate_quantiles, ScoreReport};
use m5kit::synthetic::{self, SyntheticConfig};
use m5kit::uncertainty::{
    optimize_factors, quantile_forecast, read_submission, write_submission, FactorSource, QuantileFactorTable,
};
use m5kit::{Error, Result, HORIZON};

/// Suffix of submission ids for the forecast after the panel's last day.
pub const SUBMISSION_SUFFIX: &str = "evaluation";

pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const MANIFEST: &str = "manifest.toml";
    pub const BACKTEST: &str = "backtest.csv";
    pub const BACKTEST_LEVELS: &str = "backtest_levels.csv";
    pub const SPLIT1_MEDIAN: &str = "split1_median.csv";
    pub const FORECAST: &str = "forecast.csv";
    pub const FACTORS: &str = "factors.csv";
    pub const FACTOR_FIT: &str = "factor_fit.csv";
    pub const QUANTILES: &str = "quantiles.csv";
    pub const CACHE_DIR: &str = "cache";
    pub const MODEL_DIR: &str = "models";
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

/// A loaded config bound to its run directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: PipelineConfig,
    pub config_hash: String,
    pub dir: PathBuf,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Run {
    /// Load `path`, apply overrides, and create the run directory with its
    /// config snapshot and manifest.
    pub fn open(path: &Path, overrides: &Overrides) -> Result<Run> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut config = PipelineConfig::from_toml(&text)?;
        if let Some(s) = overrides.seed {
            config.training.seed = Some(s);
        }
        if let Some(o) = &overrides.output_dir {
            config.output_dir = o.clone();
        }
        // Hash before path resolution so the stamp does not depend on where
        // the config lives.
        let snapshot = config.to_toml();
        let config_hash = hex(&Sha256::digest(snapshot.as_bytes()));

        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let d = &mut config.data;
        for p in [&mut d.sales, &mut d.calendar, &mut d.prices].into_iter().flatten() {
            resolve(&base, p);
        }
        if let Some(p) = &mut config.uncertainty.factor_file {
            resolve(&base, p);
        }
        resolve(&base, &mut config.output_dir);

        let dir = config.output_dir.join(format!("run-{}", &config_hash[..12]));
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let run = Run {
            config,
            config_hash,
            dir,
        };
        run.write_bytes(files::CONFIG, snapshot.as_bytes())?;
        run.write_bytes(files::MANIFEST, run.manifest().as_bytes())?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<PathBuf> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let file = fs::File::create(&p).map_err(|e| io_err(&p, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| io_err(&p, e))?;
        Ok(p)
    }

    /// Version, config hash and every seed the run uses. No timestamps, so
    /// the manifest is reproducible.
    pub fn manifest(&self) -> String {
        #[derive(Serialize)]
        struct Manifest {
            tool: &'static str,
            version: &'static str,
            config_hash: String,
            config: &'static str,
            seeds: BTreeMap<String, Vec<u64>>,
        }
        let models = self.config.effective_models();
        let mut seeds = BTreeMap::new();
        if let Some(g) = &models.gbdt_store {
            seeds.insert("gbdt_store".to_string(), vec![g.params.seed]);
        }
        if let Some(g) = &models.gbdt_global {
            seeds.insert("gbdt_global".to_string(), vec![g.seed]);
        }
        for (name, g) in [("mlp_recent", &models.mlp_recent), ("mlp_full", &models.mlp_full)] {
            if let Some(g) = g {
                seeds.insert(name.to_string(), g.members.iter().map(|m| m.seed).collect());
            }
        }
        if let Some(s) = &self.config.data.synthetic {
            seeds.insert("synthetic".to_string(), vec![s.seed]);
        }
        let m = Manifest {
            tool: "m5kit",
            version: env!("CARGO_PKG_VERSION"),
            config_hash: self.config_hash.clone(),
            config: files::CONFIG,
            seeds,
        };
        toml::to_string(&m).expect("manifest serializes")
    }

    /// The panel named by the config: generated or read from files.
    pub fn load_panel(&self) -> Result<PanelDataset> {
        let d = &self.config.data;
        let panel = match &d.synthetic {
            Some(s) => synthetic::generate(s)?.panel()?,
            None => {
                let (Some(s), Some(c), Some(p)) = (&d.sales, &d.calendar, &d.prices) else {
                    return Err(Error::Config("data needs sales, calendar and prices".into()));
                };
                load_panel(s, c, p)?
            }
        };
        log::info!("panel: {} series × {} days", panel.n_series(), panel.n_days());
        Ok(panel)
    }
}

/// What a cache lookup did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Built,
    /// The file failed its integrity check and was rebuilt.
    Rebuilt,
}

/// Feature context and training matrix for `first_day..=train_end`,
/// served from the run's cache when the inputs match.
pub fn training_matrix(run: &Run, panel: &PanelDataset, train_end: usize) -> Result<(FeatureContext, FeatureMatrix, CacheStatus)> {
    let cfg = &run.config;
    let first = cfg.training.first_day;
    if train_end < first {
        return Err(Error::Validation(format!("training range {first}..={train_end} is empty")));
    }
    let context = FeatureContext::new(panel, &cfg.features, first..=train_end)?;
    let key = cache_key(panel_fingerprint(panel), &cfg.features, (first, train_end), (first, train_end));
    let path = run.path(&format!("{}/train-{first}-{train_end}.bin", files::CACHE_DIR));
    let status = match load_matrix(&path, key) {
        CacheLookup::Hit(m) => {
            log::info!("feature cache hit: {}", path.display());
            return Ok((context, m, CacheStatus::Hit));
        }
        CacheLookup::Miss => CacheStatus::Built,
        CacheLookup::Corrupt(e) => {
            log::warn!("feature cache {} is corrupt ({e}); rebuilding", path.display());
            CacheStatus::Rebuilt
        }
    };
    let matrix = context.assemble_training(panel, first..=train_end)?;
    let bytes = encode_matrix(&matrix, &cfg.features, panel.vocab().cardinalities(), key);
    save_matrix(&path, &bytes)?;
    log::info!("feature cache written: {} ({} rows)", path.display(), matrix.n_rows());
    Ok((context, matrix, status))
}

fn fit(run: &Run, panel: &PanelDataset, train_end: usize) -> Result<FittedModels> {
    let (context, matrix, _) = training_matrix(run, panel, train_end)?;
    let groups = m5kit::forecast::fit_groups(&run.config.effective_models(), panel, &matrix)?;
    Ok(FittedModels { context, groups })
}

/// Training ranges the pipeline needs: each configured split, then the
/// full panel.
fn training_ends(run: &Run, panel: &PanelDataset) -> Vec<usize> {
    let mut ends: Vec<usize> = configured_splits(&run.config, panel.n_days()).iter().map(|s| s.train_end()).collect();
    ends.push(panel.n_days());
    ends.dedup();
    ends
}

/// Outcome of `prepare`.
#[derive(Debug, Clone)]
pub struct PrepareSummary {
    pub n_series: usize,
    pub n_days: usize,
    pub caches: Vec<(PathBuf, CacheStatus)>,
}

/// Validate the inputs and build the feature caches for every training
/// range the pipeline uses.
pub fn cmd_prepare(run: &Run) -> Result<PrepareSummary> {
    let panel = run.load_panel()?;
    build_hierarchy(&panel)?;
    log::info!("zero fraction: {:.3}", synthetic::zero_fraction(&panel));
    let mut caches = Vec::new();
    for end in training_ends(run, &panel) {
        let (_, _, status) = training_matrix(run, &panel, end)?;
        let first = run.config.training.first_day;
        caches.push((run.path(&format!("{}/train-{first}-{end}.bin", files::CACHE_DIR)), status));
    }
    Ok(PrepareSummary {
        n_series: panel.n_series(),
        n_days: panel.n_days(),
        caches,
    })
}

fn split_result(run: &Run, panel: &PanelDataset, split: &ValidationSplit) -> Result<SplitResult> {
    log::info!("{}: train ..=d_{}, validate {:?}", split.name, split.train_end(), split.valid);
    let models = fit(run, panel, split.train_end())?;
    let grids = forecast_groups(&models, panel, split.valid_start(), HORIZON)?;
    let r = score_split(&run.config, panel, split, &grids)?;
    log::info!("{}: ensemble WRMSSE {:.5}", split.name, r.total(ENSEMBLE).unwrap_or(f64::NAN));
    Ok(r)
}

fn write_grid(run: &Run, name: &str, grid: &ForecastGrid) -> Result<PathBuf> {
    run.write_with(name, |w| grid.write_csv(w))
}

fn write_levels<'a>(out: &mut impl Write, rows: impl Iterator<Item = (String, String, &'a ScoreReport)>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Format {
        path: "<level breakdown>".into(),
        message: e.to_string(),
    };
    let mut header = vec!["split".to_string(), "model".to_string()];
    header.extend((1..=N_LEVELS).map(|l| format!("level{l}")));
    header.push("total".into());
    w.write_record(&header).map_err(err)?;
    for (split, model, r) in rows {
        let mut rec = vec![split, model];
        rec.extend(r.per_level.iter().map(|v| format!("{v}")));
        rec.push(format!("{}", r.total));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<level breakdown>".into(),
        source: e,
    })
}

/// Train, forecast and score every configured split. Writes the score
/// table, the per-level breakdown and the split-1 ensemble forecast.
pub fn cmd_backtest(run: &Run) -> Result<BacktestReport> {
    let panel = run.load_panel()?;
    let splits = configured_splits(&run.config, panel.n_days());
    if splits.is_empty() {
        return Err(Error::Validation(format!("no configured split fits a {}-day panel", panel.n_days())));
    }
    let mut results = Vec::new();
    for split in &splits {
        let r = split_result(run, &panel, split)?;
        if split.name == "split1" {
            write_grid(run, files::SPLIT1_MEDIAN, &r.ensemble)?;
        }
        results.push(r);
    }
    let report = BacktestReport { splits: results };
    run.write_with(files::BACKTEST, |w| report.write_csv(w))?;
    run.write_with(files::BACKTEST_LEVELS, |w| {
        write_levels(
            w,
            report
                .splits
                .iter()
                .flat_map(|s| s.scores.iter().map(move |(n, r)| (s.split.name.clone(), n.clone(), r))),
        )
    })?;
    Ok(report)
}

fn model_file(role: &str) -> String {
    format!("{}/{role}.bin", files::MODEL_DIR)
}

/// Train every enabled group on the whole panel and save one file per group.
pub fn cmd_train(run: &Run) -> Result<Vec<PathBuf>> {
    let panel = run.load_panel()?;
    let models = fit(run, &panel, panel.n_days())?;
    let mut out = Vec::new();
    for (role, g) in &models.groups {
        let name = model_file(role);
        run.write_bytes(&name, &g.to_bytes())?;
        out.push(run.path(&name));
    }
    Ok(out)
}

/// Models saved by `train`, or `None` when any enabled group is missing.
fn load_models(run: &Run, panel: &PanelDataset) -> Result<Option<FittedModels>> {
    let mut groups = BTreeMap::new();
    for role in run.config.models.enabled() {
        let p = run.path(&model_file(role));
        if !p.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&p).map_err(|e| io_err(&p, e))?;
        groups.insert(role.to_string(), FittedGroup::from_bytes(&bytes, &p.display().to_string())?);
    }
    let first = run.config.training.first_day;
    let context = FeatureContext::new(panel, &run.config.features, first..=panel.n_days())?;
    Ok(Some(FittedModels { context, groups }))
}

/// Level-12 point forecast for the 28 days after the panel. Uses the saved
/// models when present and trains otherwise. Writes the blend and each
/// group's forecast.
pub fn cmd_forecast(run: &Run) -> Result<ForecastGrid> {
    let panel = run.load_panel()?;
    let models = match load_models(run, &panel)? {
        Some(m) => {
            log::info!("using saved models");
            m
        }
        None => fit(run, &panel, panel.n_days())?,
    };
    let (blended, grids) = m5kit::forecast::point_forecast(&run.config, &panel, &models)?;
    for (role, g) in &grids {
        write_grid(run, &format!("forecast_{role}.csv"), g)?;
    }
    write_grid(run, files::FORECAST, &blended)?;
    Ok(blended)
}

fn read_grid(path: &Path, level: usize, first_day: usize) -> Result<ForecastGrid> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    ForecastGrid::read_csv(BufReader::new(f), level, first_day)
}

/// Split-1 ensemble: from the backtest output when present, else computed.
fn split1_median(run: &Run, panel: &PanelDataset) -> Result<(ValidationSplit, ForecastGrid)> {
    let split = make_splits(panel.n_days(), run.config.training.strict_split_one)
        .into_iter()
        .next()
        .ok_or_else(|| Error::Validation("panel too short for validation split 1".into()))?;
    let p = run.path(files::SPLIT1_MEDIAN);
    if p.exists() {
        return Ok((split.clone(), read_grid(&p, BOTTOM, split.valid_start())?));
    }
    let models = fit(run, panel, split.train_end())?;
    let grids = forecast_groups(&models, panel, split.valid_start(), HORIZON)?;
    let mut m = blend_groups(&grids, &run.config.blend)?;
    if run.config.smoothing.apply_to_point {
        m = smooth(&m, panel, &run.config.smoothing)?;
    }
    write_grid(run, files::SPLIT1_MEDIAN, &m)?;
    Ok((split, m))
}

/// The factor table selected by the config; fitted tables are fitted on
/// validation split 1.
pub fn factor_table(run: &Run, panel: &PanelDataset) -> Result<QuantileFactorTable> {
    let u = &run.config.uncertainty;
    match u.factors {
        FactorSource::Published => Ok(QuantileFactorTable::published()),
        FactorSource::File => {
            let p = u.factor_file.as_ref().expect("validated");
            let f = fs::File::open(p).map_err(|e| io_err(p, e))?;
            QuantileFactorTable::read_csv(BufReader::new(f), &p.display().to_string())
        }
        FactorSource::Fit => {
            let (split, median) = split1_median(run, panel)?;
            let opts = run.config.training.scale_options();
            let s = SplitScorer::new(panel, split.valid.clone(), opts)?;
            let fit = optimize_factors(&s.index, &s.weights, &s.history, &median, &s.actual, opts, u.fit_mode, u.tolerance)?;
            log::info!("factor fit: WSPL {:.5} (identity {:.5})", fit.wspl_fitted, fit.wspl_identity);
            run.write_bytes(
                files::FACTOR_FIT,
                format!("wspl_identity,wspl_fitted\n{},{}\n", fit.wspl_identity, fit.wspl_fitted).as_bytes(),
            )?;
            Ok(fit.table)
        }
    }
}

/// Quantile submission for the 28 days after the panel, from the point
/// forecast (computed when `forecast` has not run).
pub fn cmd_quantiles(run: &Run) -> Result<PathBuf> {
    let panel = run.load_panel()?;
    let index = build_hierarchy(&panel)?;
    let start = panel.n_days() + 1;
    let p = run.path(files::FORECAST);
    let median = if p.exists() {
        read_grid(&p, BOTTOM, start)?
    } else {
        cmd_forecast(run)?
    };
    let table = factor_table(run, &panel)?;
    run.write_with(files::FACTORS, |w| table.write_csv(w))?;
    let grids = quantile_forecast(&panel, &index, &median, &table, &run.config.uncertainty)?;
    run.write_with(files::QUANTILES, |w| write_submission(&grids, Some(SUBMISSION_SUFFIX), w))
}

/// Kind of file scored by `evaluate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalKind {
    /// `id,F1..Fh` level-12 point forecast.
    Point,
    /// Quantile submission with the given id suffix.
    Quantile,
}

/// Score a forecast file against the panel's actuals starting at `start`.
/// Writes the per-series and per-level breakdown to `out`.
pub fn cmd_evaluate(
    run: &Run,
    file: &Path,
    kind: EvalKind,
    start: Option<usize>,
    suffix: Option<&str>,
    out: &Path,
) -> Result<ScoreReport> {
    let panel = run.load_panel()?;
    let start = start.unwrap_or(panel.n_days().saturating_sub(HORIZON) + 1);
    if start < 2 {
        return Err(Error::Validation("evaluation needs at least one day of history".into()));
    }
    let f = fs::File::open(file).map_err(|e| io_err(file, e))?;
    let opts = run.config.training.scale_options();
    let report = match kind {
        EvalKind::Point => {
            let grid = ForecastGrid::read_csv(BufReader::new(f), BOTTOM, start)?;
            let s = scorer(&panel, start, grid.horizon(), opts)?;
            evaluate_point(&s.index, &s.weights, &s.history, &s.actual, &grid, opts)?
        }
        EvalKind::Quantile => {
            let index = build_hierarchy(&panel)?;
            let q = read_submission(BufReader::new(f), &index, start, suffix)?;
            let s = scorer(&panel, start, q[0].horizon(), opts)?;
            evaluate_quantiles(&s.index, &s.weights, &s.history, &s.actual, &q, opts)?
        }
    };
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let fh = fs::File::create(out).map_err(|e| io_err(out, e))?;
    let mut w = BufWriter::new(fh);
    report.write_csv(&mut w)?;
    w.flush().map_err(|e| io_err(out, e))?;
    Ok(report)
}

fn scorer(panel: &PanelDataset, start: usize, horizon: usize, opts: m5kit::metrics::ScaleOptions) -> Result<SplitScorer> {
    let end = start + horizon - 1;
    if end > panel.n_days() {
        return Err(Error::Validation(format!(
            "truth days d_{start}..d_{end} extend past the panel's last day d_{}",
            panel.n_days()
        )));
    }
    SplitScorer::new(panel, start..=end, opts)
}

/// Write a synthetic panel as the three input files.
pub fn cmd_gen_synthetic(config: &SyntheticConfig, out: &Path) -> Result<()> {
    synthetic::generate(config)?.write_to(out)
}

/// Machine-parsable error line.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("error[{}]: {msg}", e.kind())
}

/// Process exit code for an error: 1 for bad input or config (including a
/// missing input file), 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    let missing_file = matches!(e, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound);
    if e.is_validation() || missing_file {
        1
    } else {
        2
    }
}
