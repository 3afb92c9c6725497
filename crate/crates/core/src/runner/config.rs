//! TOML experiment configuration.
//!
//! ```toml
//! [fgan]                    # training hyperparameters
//! alpha = 0.5
//! beta = 15.0
//! gamma = 0.5
//! latent_dim = 8
//! epochs = 2000
//! batch_size = 100
//!
//! [fgan.generator]
//! layers = [{ units = 64, activation = "relu" }, ...]
//! output_activation = "linear"
//! optimizer = { kind = "adam", lr = 1e-4 }
//!
//! [fgan.discriminator]      # same keys; output must be sigmoid
//!
//! [data]
//! source = "gaussian2d"     # or "tabular", "csv"
//! split = "holdout-class"   # or "kdd-fifty-fifty", "none"
//!
//! [eval]
//! positive_class = "anomalous"
//!
//! [run]
//! seeds = [0, 1, 2]         # or base_seed + n_seeds
//! out_dir = "runs/gaussian"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Label, LabelMap, Scaling, Schema, SplitProtocol, TabularSpec};
use crate::error::{Error, Result};
use crate::metrics::GridBounds;
use crate::trainer::FganConfig;

/// Environment variable giving the root for relative dataset paths.
pub const DATA_DIR_ENV: &str = "FGAN_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fgan: FganConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Gaussian2d,
    Tabular,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian2dConfig {
    /// Normal points (before the split).
    pub n: usize,
    #[serde(default)]
    pub mean: [f64; 2],
    #[serde(default = "Gaussian2dConfig::identity")]
    pub cov: [[f64; 2]; 2],
    /// Far-field anomalies added for evaluation, uniform on an annulus.
    #[serde(default)]
    pub n_far: usize,
    #[serde(default = "Gaussian2dConfig::far_min")]
    pub far_r_min: f64,
    #[serde(default = "Gaussian2dConfig::far_max")]
    pub far_r_max: f64,
}

impl Gaussian2dConfig {
    fn identity() -> [[f64; 2]; 2] {
        [[1.0, 0.0], [0.0, 1.0]]
    }
    fn far_min() -> f64 {
        4.0
    }
    fn far_max() -> f64 {
        6.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaPreset {
    /// Every column numeric except `categorical` and `label_column`.
    #[default]
    Generic,
    Kdd99,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelPreset {
    /// `normal` / `anomalous`, as written by `gen-data`.
    #[default]
    Identity,
    /// `normal.` is the non-attack class, everything else an attack.
    Kdd99,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvConfig {
    /// Relative paths resolve against `FGAN_DATA_DIR`, then the config's
    /// directory.
    pub path: PathBuf,
    #[serde(default)]
    pub schema: SchemaPreset,
    /// Column count for the generic schema.
    #[serde(default)]
    pub n_columns: usize,
    #[serde(default)]
    pub categorical: Vec<usize>,
    #[serde(default)]
    pub label_column: Option<usize>,
    #[serde(default)]
    pub has_header: bool,
    #[serde(default)]
    pub labels: LabelPreset,
    #[serde(default)]
    pub scaling: Scaling,
    /// Clamp scaled test values into the training range.
    #[serde(default)]
    pub clip: bool,
}

impl CsvConfig {
    pub fn schema(&self) -> Result<Schema> {
        let mut s = match self.schema {
            SchemaPreset::Kdd99 => Schema::kdd99(),
            SchemaPreset::Generic => {
                if self.n_columns == 0 {
                    return Err(Error::Config("data.csv.n_columns is required for the generic schema".into()));
                }
                Schema::with_categorical(self.n_columns, &self.categorical, self.label_column)?
            }
        };
        s.has_header = self.has_header;
        Ok(s)
    }

    pub fn label_map(&self) -> LabelMap {
        match self.labels {
            LabelPreset::Identity => LabelMap::identity(),
            LabelPreset::Kdd99 => LabelMap::kdd99(),
        }
    }

    fn has_labels(&self) -> bool {
        match self.schema {
            SchemaPreset::Kdd99 => true,
            SchemaPreset::Generic => self.label_column.is_some(),
        }
    }
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default = "DataConfig::default_split")]
    pub split: SplitProtocol,
    /// Fraction of normal rows used for training (holdout-class only).
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Seed for sampling and splitting; defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub gaussian2d: Option<Gaussian2dConfig>,
    #[serde(default)]
    pub tabular: Option<TabularSpec>,
    #[serde(default)]
    pub csv: Option<CsvConfig>,
}

impl DataConfig {
    fn default_split() -> SplitProtocol {
        SplitProtocol::HoldoutClass
    }
}

/// Positive class for the reported metrics. `non-attack` / `attack` name
/// the KDD99 classes under its tagging, where attacks are the training
/// (normal-tagged) class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositiveClass {
    #[default]
    #[serde(alias = "non-attack")]
    Anomalous,
    #[serde(alias = "attack")]
    Normal,
}

impl From<PositiveClass> for Label {
    fn from(p: PositiveClass) -> Label {
        match p {
            PositiveClass::Anomalous => Label::Anomalous,
            PositiveClass::Normal => Label::Normal,
        }
    }
}

fn default_bins() -> usize {
    50
}

fn default_resolution() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub positive_class: PositiveClass,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_resolution")]
    pub grid_resolution: usize,
    /// Defaults to the training data mean ± 4 standard deviations.
    #[serde(default)]
    pub grid_bounds: Option<GridBounds>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            positive_class: PositiveClass::default(),
            bins: default_bins(),
            grid_resolution: default_resolution(),
            grid_bounds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Explicit seed list; overrides `base_seed` / `n_seeds`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "RunConfig::one")]
    pub n_seeds: u64,
    #[serde(default = "RunConfig::default_out")]
    pub out_dir: PathBuf,
}

impl RunConfig {
    fn one() -> u64 {
        1
    }
    fn default_out() -> PathBuf {
        PathBuf::from("runs")
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (self.base_seed..self.base_seed + self.n_seeds).collect(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: None,
            base_seed: 0,
            n_seeds: 1,
            out_dir: Self::default_out(),
        }
    }
}

/// Parses `N`, `N..M` (half-open) or `N..=M`.
pub fn parse_seed_range(s: &str) -> Result<Vec<u64>> {
    let num = |t: &str| {
        t.trim()
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("bad seed `{t}` in `{s}`")))
    };
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        vec![num(s)?]
    };
    if seeds.is_empty() {
        return Err(Error::Config(format!("seed range `{s}` is empty")));
    }
    Ok(seeds)
}

/// Resolves a dataset path: absolute paths as given, relative ones under
/// `data_dir` when set, otherwise under `base`.
pub fn resolve_data_path(path: &Path, data_dir: Option<&Path>, base: Option<&Path>) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    if let Some(d) = data_dir {
        let p = d.join(path);
        if p.exists() || base.is_none() {
            return p;
        }
    }
    match base {
        Some(b) => b.join(path),
        None => path.to_path_buf(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates; relative dataset paths are resolved against
    /// `FGAN_DATA_DIR` and then the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(csv) = cfg.data.csv.as_mut() {
            let data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
            csv.path = resolve_data_path(&csv.path, data_dir.as_deref(), path.parent());
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.run.seed_list()
    }

    /// Hyperparameters for one seed of the run.
    pub fn fgan_for_seed(&self, seed: u64) -> FganConfig {
        FganConfig {
            seed,
            ..self.fgan.clone()
        }
    }

    /// Range, file and protocol checks; runs before any side effect.
    pub fn validate(&self) -> Result<()> {
        self.fgan.validate()?;
        if self.seeds().is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        let d = &self.data;
        if !(d.train_fraction > 0.0 && d.train_fraction <= 1.0) {
            return Err(Error::Config(format!("train_fraction {} not in (0, 1]", d.train_fraction)));
        }
        let labelled = match d.source {
            DataSource::Gaussian2d => {
                let g = d
                    .gaussian2d
                    .as_ref()
                    .ok_or_else(|| Error::Config("source gaussian2d needs a [data.gaussian2d] table".into()))?;
                if g.n < 2 {
                    return Err(Error::Config("data.gaussian2d.n must be ≥ 2".into()));
                }
                let [[a, b], [c, e]] = g.cov;
                if !(a > 0.0 && (b - c).abs() <= 1e-12 * (1.0 + b.abs()) && a * e - b * c > 0.0) {
                    return Err(Error::Config(format!("covariance {:?} is not symmetric positive definite", g.cov)));
                }
                if !(g.far_r_min >= 0.0 && g.far_r_max > g.far_r_min) {
                    return Err(Error::Config("need 0 ≤ far_r_min < far_r_max".into()));
                }
                if d.split == SplitProtocol::KddFiftyFifty {
                    return Err(Error::Config("kdd-fifty-fifty split needs a labelled csv source".into()));
                }
                if d.split == SplitProtocol::HoldoutClass && g.n_far == 0 {
                    return Err(Error::Config("holdout-class split needs n_far > 0 anomalies".into()));
                }
                true
            }
            DataSource::Tabular => {
                let t = d
                    .tabular
                    .as_ref()
                    .ok_or_else(|| Error::Config("source tabular needs a [data.tabular] table".into()))?;
                if t.dim == 0 || t.n_normal < 2 {
                    return Err(Error::Config("data.tabular needs dim ≥ 1 and n_normal ≥ 2".into()));
                }
                if t.shifted_coords == 0 || t.shifted_coords > t.dim || !(t.shift_min > 0.0 && t.shift_max >= t.shift_min) {
                    return Err(Error::Config("data.tabular shift settings out of range".into()));
                }
                if d.split != SplitProtocol::None && t.n_anomalous == 0 {
                    return Err(Error::Config("split needs n_anomalous > 0".into()));
                }
                true
            }
            DataSource::Csv => {
                let c = d
                    .csv
                    .as_ref()
                    .ok_or_else(|| Error::Config("source csv needs a [data.csv] table".into()))?;
                c.schema()?;
                if !c.path.is_file() {
                    return Err(Error::Data(format!("dataset {} does not exist", c.path.display())));
                }
                c.has_labels()
            }
        };
        if d.split != SplitProtocol::None && !labelled {
            return Err(Error::Config(format!("split {:?} needs a label column", d.split)));
        }
        let e = &self.eval;
        if e.bins == 0 || e.grid_resolution == 0 {
            return Err(Error::Config("eval.bins and eval.grid_resolution must be positive".into()));
        }
        if let Some(b) = e.grid_bounds {
            if !(b.x_min < b.x_max && b.y_min < b.y_max) {
                return Err(Error::Config(format!("empty grid bounds {b:?}")));
            }
        }
        Ok(())
    }
}
