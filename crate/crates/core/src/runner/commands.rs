//! The runner's commands: data generation, training, evaluation and grid
//! export. Every output file is a pure function of the config and seed.
//!
//! Layout under `run.out_dir`:
//!
//! ```text
//! data-seed{s}/train.csv, test.csv, meta.json    gen-data
//! seed-{s}/model.ckpt, history.csv               train
//! seed-{s}/metrics.json, scores.csv              eval
//! metrics.json                                   eval (per seed + aggregate)
//! seed-{s}/grid.csv                              grid
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand_core::RngCore;
use serde::Serialize;

use crate::checkpoint;
use crate::data::{
    load_delimited, sample_annulus_2d, sample_gaussian_2d, sample_tabular, Dataset, Preprocessor, SplitProtocol,
    SplitSpec,
};
use crate::error::{Error, Result};
use crate::math::{Matrix, RngState};
use crate::metrics::{self, AggregateReport, GridBounds, MetricsReport};
use crate::runner::config::{DataSource, ExperimentConfig};
use crate::scalar::Scalar;
use crate::trainer::{self, EpochRecord, TrainerState};

/// Train / test datasets for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData<T> {
    pub train: Dataset<T>,
    pub test: Option<Dataset<T>>,
}

/// Samples or loads the configured dataset and applies the split. Sampling
/// and splitting use `data.seed`, falling back to the run seed.
pub fn prepare_data<T: Scalar>(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedData<T>> {
    let d = &cfg.data;
    let data_seed = d.seed.unwrap_or(seed);
    let mut rng = RngState::derive(data_seed, 1);
    let split = SplitSpec {
        protocol: d.split,
        train_fraction: d.train_fraction,
        seed: RngState::derive(data_seed, 2).next_u64(),
    };
    let full: Dataset<T> = match d.source {
        DataSource::Gaussian2d => {
            let g = d.gaussian2d.as_ref().ok_or_else(|| Error::Config("missing [data.gaussian2d]".into()))?;
            let normal = sample_gaussian_2d(&mut rng, g.n, g.mean, g.cov)?;
            if g.n_far > 0 {
                let far = sample_annulus_2d(&mut rng, g.n_far, g.mean, g.far_r_min, g.far_r_max)?;
                normal.concat(&far, "gaussian2d")?
            } else {
                normal
            }
        }
        DataSource::Tabular => {
            let t = d.tabular.as_ref().ok_or_else(|| Error::Config("missing [data.tabular]".into()))?;
            sample_tabular(&mut rng, t)?
        }
        DataSource::Csv => {
            let c = d.csv.as_ref().ok_or_else(|| Error::Config("missing [data.csv]".into()))?;
            let table = load_delimited(&c.path, &c.schema()?, &c.label_map())?;
            let idx = split.indices(table.len(), table.labels.as_deref())?;
            let train_raw = table.select(&idx.train);
            let prep = Preprocessor::fit(&train_raw, c.scaling, c.clip)?;
            let name = c
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into());
            let train = Dataset::new(format!("{name}-train"), prep.transform(&train_raw)?, train_raw.labels)?;
            let test = if idx.test.is_empty() {
                None
            } else {
                let test_raw = table.select(&idx.test);
                Some(Dataset::new(format!("{name}-test"), prep.transform(&test_raw)?, test_raw.labels)?)
            };
            return Ok(PreparedData { train, test });
        }
    };
    if d.split == SplitProtocol::None {
        return Ok(PreparedData { train: full, test: None });
    }
    let idx = split.indices(full.len(), full.labels.as_deref())?;
    if idx.train.is_empty() || idx.test.is_empty() {
        return Err(Error::Data(format!(
            "split leaves {} train and {} test rows",
            idx.train.len(),
            idx.test.len()
        )));
    }
    Ok(PreparedData {
        train: full.select(&idx.train, format!("{}-train", full.name))?,
        test: Some(full.select(&idx.test, format!("{}-test", full.name))?),
    })
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub fn checkpoint_path(out: &Path, seed: u64) -> PathBuf {
    seed_dir(out, seed).join("model.ckpt")
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct DataMeta<'a> {
    source: DataSource,
    seed: u64,
    width: usize,
    train_rows: usize,
    test_rows: usize,
    split: SplitProtocol,
    train_name: &'a str,
}

/// Writes `train.csv`, `test.csv` (when the split produces one) and
/// `meta.json` for every seed; returns the directories written.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut dirs = Vec::new();
    for seed in cfg.seeds() {
        let data: PreparedData<f64> = prepare_data(cfg, seed)?;
        let dir = cfg.run.out_dir.join(format!("data-seed{seed}"));
        create_dir(&dir)?;
        data.train.write_csv(&dir.join("train.csv"))?;
        if let Some(test) = &data.test {
            test.write_csv(&dir.join("test.csv"))?;
        }
        write_json(
            &dir.join("meta.json"),
            &DataMeta {
                source: cfg.data.source,
                seed: cfg.data.seed.unwrap_or(seed),
                width: data.train.dim(),
                train_rows: data.train.len(),
                test_rows: data.test.as_ref().map_or(0, Dataset::len),
                split: cfg.data.split,
                train_name: &data.train.name,
            },
        )?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// `epoch,gen_loss,disc_loss,lr_g,lr_d` with a header line.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,gen_loss,disc_loss,lr_g,lr_d\n");
    for h in history {
        writeln!(s, "{},{},{},{},{}", h.epoch, h.gen_loss, h.disc_loss, h.lr_g, h.lr_d).expect("write to String");
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub final_record: Option<EpochRecord>,
}

/// Trains one model per seed, writing its checkpoint and history.
/// `progress` sees `(seed, record)` after every epoch.
pub fn cmd_train(cfg: &ExperimentConfig, mut progress: impl FnMut(u64, &EpochRecord)) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for seed in cfg.seeds() {
        let data: PreparedData<f64> = prepare_data(cfg, seed)?;
        let fgan = cfg.fgan_for_seed(seed);
        let state = trainer::train(&fgan, &data.train.features, |r, _| progress(seed, r))?;
        let dir = seed_dir(&cfg.run.out_dir, seed);
        create_dir(&dir)?;
        let ckpt = checkpoint_path(&cfg.run.out_dir, seed);
        checkpoint::snapshot(&state, &fgan, &ckpt)?;
        let history = dir.join("history.csv");
        std::fs::write(&history, history_csv(&state.history)).map_err(|e| Error::io(&history, e))?;
        out.push(TrainOutcome {
            seed,
            checkpoint: ckpt,
            history,
            final_record: state.history.last().copied(),
        });
    }
    Ok(out)
}

fn load_state(path: &Path) -> Result<TrainerState<f64>> {
    checkpoint::restore::<f64>(path).map(|(s, _)| s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalOutcome {
    pub per_seed: Vec<MetricsReport>,
    pub aggregate: AggregateReport,
}

/// Scores each seed's test split with its checkpoint (or `checkpoint` for
/// all seeds when given) and writes per-seed and aggregate metrics.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<EvalOutcome> {
    cfg.validate()?;
    let mut reports = Vec::new();
    for seed in cfg.seeds() {
        let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(&cfg.run.out_dir, seed));
        let state = load_state(&ckpt)?;
        let data: PreparedData<f64> = prepare_data(cfg, seed)?;
        let test = data
            .test
            .ok_or_else(|| Error::Data("evaluation needs a test split (split = \"none\")".into()))?;
        if test.dim() != state.data_dim() {
            return Err(Error::Incompatible(format!(
                "checkpoint {} expects width {}, test data has {}",
                ckpt.display(),
                state.data_dim(),
                test.dim()
            )));
        }
        let (report, scores) =
            metrics::evaluate(&state.discriminator, &test, cfg.eval.positive_class.into(), cfg.eval.bins, seed)?;
        let dir = seed_dir(&cfg.run.out_dir, seed);
        create_dir(&dir)?;
        write_json(&dir.join("metrics.json"), &report)?;
        scores.write_csv(&dir.join("scores.csv"))?;
        reports.push(report);
    }
    let outcome = EvalOutcome {
        aggregate: metrics::aggregate(&reports)?,
        per_seed: reports,
    };
    create_dir(&cfg.run.out_dir)?;
    write_json(&cfg.run.out_dir.join("metrics.json"), &outcome)?;
    Ok(outcome)
}

/// Per-axis mean ± 4 standard deviations of `data`.
pub fn default_grid_bounds<T: Scalar>(data: &Matrix<T>) -> GridBounds {
    let n = data.rows() as f64;
    let stats = |c: usize| {
        let col: Vec<f64> = data.row_iter().map(|r| r[c].to_f64_lossless()).collect();
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        (mean - 4.0 * sd, mean + 4.0 * sd)
    };
    let (x_min, x_max) = stats(0);
    let (y_min, y_max) = stats(1);
    GridBounds {
        x_min,
        x_max,
        y_min,
        y_max,
    }
}

/// Two `#` header lines (bounds, resolution), then one line of `D` values
/// per grid row; row `i` is the `i`-th y cell from `y_min`.
pub fn grid_csv<T: Scalar>(grid: &Matrix<T>, bounds: GridBounds) -> String {
    let mut s = format!(
        "# bounds x_min={},x_max={},y_min={},y_max={}\n# resolution {}\n",
        bounds.x_min,
        bounds.x_max,
        bounds.y_min,
        bounds.y_max,
        grid.rows()
    );
    for row in grid.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn cmd_grid(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut files = Vec::new();
    for seed in cfg.seeds() {
        let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(&cfg.run.out_dir, seed));
        let state = load_state(&ckpt)?;
        if state.data_dim() != 2 {
            return Err(Error::Incompatible(format!(
                "grid export needs a 2-D model, {} has width {}",
                ckpt.display(),
                state.data_dim()
            )));
        }
        let bounds = match cfg.eval.grid_bounds {
            Some(b) => b,
            None => default_grid_bounds(&prepare_data::<f64>(cfg, seed)?.train.features),
        };
        let grid = metrics::grid_scores(&state.discriminator, bounds, cfg.eval.grid_resolution)?;
        let dir = seed_dir(&cfg.run.out_dir, seed);
        create_dir(&dir)?;
        let path = dir.join("grid.csv");
        std::fs::write(&path, grid_csv(&grid, bounds)).map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }
    Ok(files)
}
