//! Dataset construction: synthetic samplers, delimited-text ingestion with
//! one-hot / range scaling, and the train/test split protocols.
//!
//! Labels are one-class tags. `Normal` marks the class a model is trained
//! on and `Anomalous` everything it should flag. For KDD99 the training
//! class is the lumped `attack` class, so attack rows are tagged `Normal`
//! and `normal.` (non-attack) rows are tagged `Anomalous`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, RngState};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    pub features: Matrix<T>,
    pub labels: Option<Vec<Label>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(name: impl Into<String>, features: Matrix<T>, labels: Option<Vec<Label>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::Data(format!(
                    "{} labels for {} rows",
                    l.len(),
                    features.rows()
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        let features = self.features.select_rows(indices)?;
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Dataset::new(name, features, labels)
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels
            .as_ref()
            .map(|l| l.iter().filter(|&&x| x == label).count())
            .unwrap_or(0)
    }

    /// Concatenates rows; labels survive only if both sides carry them.
    pub fn concat(&self, other: &Dataset<T>, name: impl Into<String>) -> Result<Self> {
        let features = self.features.vstack(&other.features)?;
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Dataset::new(name, features, labels)
    }

    /// Writes `f0,...,f{d-1},label` rows (label column only when present),
    /// with a header line. Values use the shortest round-trip decimal form.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        writeln!(out, "{}", header.join(",")).expect("write to Vec");
        for (i, row) in self.features.row_iter().enumerate() {
            let mut fields: Vec<String> = row.iter().map(|v| format!("{}", v.to_f64_lossless())).collect();
            if let Some(l) = &self.labels {
                fields.push(l[i].as_str().into());
            }
            writeln!(out, "{}", fields.join(",")).expect("write to Vec");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn chol2(cov: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let [[a, b], [c, d]] = cov;
    if (b - c).abs() > 1e-12 * (1.0 + b.abs()) {
        return Err(Error::invalid(format!("covariance {cov:?} is not symmetric")));
    }
    if !(a > 0.0) {
        return Err(Error::invalid(format!("covariance {cov:?} is not positive definite")));
    }
    let l11 = a.sqrt();
    let l21 = b / l11;
    let rem = d - l21 * l21;
    if !(rem > 0.0) {
        return Err(Error::invalid(format!("covariance {cov:?} is not positive definite")));
    }
    Ok([[l11, 0.0], [l21, rem.sqrt()]])
}

/// `n` points from N(mean, cov) via the Cholesky factor; all labelled normal.
pub fn sample_gaussian_2d<T: Scalar>(
    rng: &mut RngState,
    n: usize,
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
) -> Result<Dataset<T>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let l = chol2(cov)?;
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let z0 = rng.standard_normal();
        let z1 = rng.standard_normal();
        data.push(T::of(mean[0] + l[0][0] * z0));
        data.push(T::of(mean[1] + l[1][0] * z0 + l[1][1] * z1));
    }
    Dataset::new("gaussian2d", Matrix::from_vec(n, 2, data)?, Some(vec![Label::Normal; n]))
}

/// Points uniform (by area) on the annulus `r_min ≤ |x - center| ≤ r_max`,
/// labelled anomalous.
pub fn sample_annulus_2d<T: Scalar>(
    rng: &mut RngState,
    n: usize,
    center: [f64; 2],
    r_min: f64,
    r_max: f64,
) -> Result<Dataset<T>> {
    if n == 0 || !(r_min >= 0.0 && r_max > r_min) {
        return Err(Error::invalid(format!("bad annulus n={n} r=[{r_min}, {r_max}]")));
    }
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let r = rng.uniform_range(r_min * r_min, r_max * r_max).sqrt();
        let theta = rng.uniform_range(0.0, std::f64::consts::TAU);
        data.push(T::of(center[0] + r * theta.cos()));
        data.push(T::of(center[1] + r * theta.sin()));
    }
    Dataset::new("far_field", Matrix::from_vec(n, 2, data)?, Some(vec![Label::Anomalous; n]))
}

/// Synthetic tabular one-class data.
///
/// Normal rows are standard normal in `dim` dimensions. Each anomalous row
/// is a standard-normal draw with `shifted_coords` randomly chosen
/// coordinates replaced by `±U(shift_min, shift_max)`, i.e. planted at
/// least `shift_min` standard deviations out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSpec {
    pub dim: usize,
    pub n_normal: usize,
    pub n_anomalous: usize,
    #[serde(default = "TabularSpec::default_shift_min")]
    pub shift_min: f64,
    #[serde(default = "TabularSpec::default_shift_max")]
    pub shift_max: f64,
    #[serde(default = "TabularSpec::default_shifted")]
    pub shifted_coords: usize,
}

impl TabularSpec {
    fn default_shift_min() -> f64 {
        4.0
    }
    fn default_shift_max() -> f64 {
        6.0
    }
    fn default_shifted() -> usize {
        1
    }
}

pub fn sample_tabular<T: Scalar>(rng: &mut RngState, spec: &TabularSpec) -> Result<Dataset<T>> {
    if spec.dim == 0 || spec.n_normal == 0 {
        return Err(Error::invalid("tabular spec needs dim > 0 and n_normal > 0"));
    }
    if spec.shifted_coords == 0 || spec.shifted_coords > spec.dim {
        return Err(Error::invalid("shifted_coords must be in 1..=dim"));
    }
    if !(spec.shift_min > 0.0 && spec.shift_max >= spec.shift_min) {
        return Err(Error::invalid("need 0 < shift_min ≤ shift_max"));
    }
    let n = spec.n_normal + spec.n_anomalous;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    let mut coords: Vec<usize> = (0..spec.dim).collect();
    for i in 0..n {
        let mut row: Vec<f64> = (0..spec.dim).map(|_| rng.standard_normal()).collect();
        if i >= spec.n_normal {
            coords.shuffle(rng);
            for &c in &coords[..spec.shifted_coords] {
                let mag = rng.uniform_range(spec.shift_min, spec.shift_max);
                row[c] = if rng.bernoulli(0.5) { mag } else { -mag };
            }
            labels.push(Label::Anomalous);
        } else {
            labels.push(Label::Normal);
        }
        data.extend(row.into_iter().map(T::of));
    }
    Dataset::new("tabular", Matrix::from_vec(n, spec.dim, data)?, Some(labels))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
    Ignore,
}

/// Column layout of a delimited file.
#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub columns: Vec<ColumnKind>,
    pub has_header: bool,
}

impl Schema {
    /// `n_columns` numeric columns except the listed categorical ones and
    /// the label column.
    pub fn with_categorical(n_columns: usize, categorical: &[usize], label_column: Option<usize>) -> Result<Self> {
        let mut columns = vec![ColumnKind::Numeric; n_columns];
        for &c in categorical {
            *columns
                .get_mut(c)
                .ok_or_else(|| Error::Config(format!("categorical column {c} ≥ {n_columns}")))? =
                ColumnKind::Categorical;
        }
        if let Some(l) = label_column {
            *columns
                .get_mut(l)
                .ok_or_else(|| Error::Config(format!("label column {l} ≥ {n_columns}")))? = ColumnKind::Label;
        }
        Ok(Schema {
            columns,
            has_header: false,
        })
    }

    /// The 42-column KDDCUP99 layout: protocol_type, service, flag and the
    /// binary land / logged_in / is_host_login / is_guest_login flags are
    /// one-hot encoded; column 41 is the label.
    pub fn kdd99() -> Self {
        Self::with_categorical(42, &[1, 2, 3, 6, 11, 20, 21], Some(41)).expect("static schema")
    }

    fn feature_kinds(&self) -> Vec<ColumnKind> {
        self.columns
            .iter()
            .copied()
            .filter(|k| matches!(k, ColumnKind::Numeric | ColumnKind::Categorical))
            .collect()
    }

    fn label_index(&self) -> Option<usize> {
        self.columns.iter().position(|k| *k == ColumnKind::Label)
    }
}

/// Maps raw label strings to tags. Strings absent from `entries` take
/// `default`, or are rejected when there is none.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelMap {
    pub entries: BTreeMap<String, Label>,
    pub default: Option<Label>,
}

impl LabelMap {
    /// KDD99 lumping: `normal.` / `normal` are the non-attack class, every
    /// other label is an attack.
    pub fn kdd99() -> Self {
        let entries = [("normal.", Label::Anomalous), ("normal", Label::Anomalous)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        LabelMap {
            entries,
            default: Some(Label::Normal),
        }
    }

    /// Round-trips the label column written by [`Dataset::write_csv`].
    pub fn identity() -> Self {
        LabelMap {
            entries: [("normal", Label::Normal), ("anomalous", Label::Anomalous)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            default: None,
        }
    }

    pub fn map(&self, raw: &str) -> Option<Label> {
        self.entries.get(raw.trim()).copied().or(self.default)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Num(f64),
    Cat(String),
}

/// Parsed feature columns in schema order (label and ignored columns dropped).
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub kinds: Vec<ColumnKind>,
    pub rows: Vec<Vec<Field>>,
    pub labels: Option<Vec<Label>>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> RawTable {
        RawTable {
            kinds: self.kinds.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Reads a comma-delimited UTF-8 file.
///
/// Arity mismatches, malformed numbers and unmapped labels are reported
/// with their 1-based line number.
pub fn load_delimited(path: &Path, schema: &Schema, label_map: &LabelMap) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(std::io::BufReader::new(file));
    let label_idx = schema.label_index();
    let mut rows = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let perr = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != schema.columns.len() {
            return Err(perr(format!(
                "expected {} fields, found {}",
                schema.columns.len(),
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(schema.columns.len());
        for (j, (kind, field)) in schema.columns.iter().zip(record.iter()).enumerate() {
            match kind {
                ColumnKind::Numeric => {
                    let v: f64 = field
                        .parse()
                        .map_err(|_| perr(format!("column {j}: `{field}` is not a number")))?;
                    if !v.is_finite() {
                        return Err(perr(format!("column {j}: non-finite value `{field}`")));
                    }
                    row.push(Field::Num(v));
                }
                ColumnKind::Categorical => row.push(Field::Cat(field.to_string())),
                ColumnKind::Label => {
                    let tag = label_map
                        .map(field)
                        .ok_or_else(|| perr(format!("unknown label `{field}`")))?;
                    labels.as_mut().expect("label column present").push(tag);
                }
                ColumnKind::Ignore => {}
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    Ok(RawTable {
        kinds: schema.feature_kinds(),
        rows,
        labels,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `(x - min) / (max - min)`, constant columns map to 0.
    #[default]
    MinMax,
    /// `(x - mean) / std`, constant columns map to 0.
    ZScore,
}

#[derive(Clone, Debug, PartialEq)]
enum ColumnFit {
    Numeric { offset: f64, scale: f64 },
    Categorical { vocab: Vec<String> },
}

/// One-hot encoder plus numeric scaler, fitted on training rows only.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    columns: Vec<ColumnFit>,
    clip: bool,
}

impl Preprocessor {
    pub fn fit(train: &RawTable, scaling: Scaling, clip: bool) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot fit a preprocessor on zero rows".into()));
        }
        let mut columns = Vec::with_capacity(train.kinds.len());
        for (j, kind) in train.kinds.iter().enumerate() {
            let fit = match kind {
                ColumnKind::Numeric => {
                    let vals = train.rows.iter().map(|r| match &r[j] {
                        Field::Num(v) => *v,
                        Field::Cat(_) => unreachable!("numeric column holds numbers"),
                    });
                    numeric_fit(vals, scaling)
                }
                _ => {
                    let vocab: BTreeSet<&str> = train
                        .rows
                        .iter()
                        .map(|r| match &r[j] {
                            Field::Cat(s) => s.as_str(),
                            Field::Num(_) => unreachable!("categorical column holds strings"),
                        })
                        .collect();
                    ColumnFit::Categorical {
                        vocab: vocab.into_iter().map(String::from).collect(),
                    }
                }
            };
            columns.push(fit);
        }
        Ok(Preprocessor { columns, clip })
    }

    pub fn output_width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnFit::Numeric { .. } => 1,
                ColumnFit::Categorical { vocab } => vocab.len(),
            })
            .sum()
    }

    pub fn transform<T: Scalar>(&self, table: &RawTable) -> Result<Matrix<T>> {
        if table.kinds.len() != self.columns.len() {
            return Err(Error::Data(format!(
                "table has {} feature columns, preprocessor was fitted on {}",
                table.kinds.len(),
                self.columns.len()
            )));
        }
        let width = self.output_width();
        let mut data = Vec::with_capacity(table.len() * width);
        for row in &table.rows {
            for (fit, field) in self.columns.iter().zip(row) {
                match (fit, field) {
                    (ColumnFit::Numeric { offset, scale }, Field::Num(v)) => {
                        let mut x = if *scale > 0.0 { (v - offset) / scale } else { 0.0 };
                        if self.clip {
                            x = x.clamp(0.0, 1.0);
                        }
                        data.push(T::of(x));
                    }
                    (ColumnFit::Categorical { vocab }, Field::Cat(s)) => {
                        let hit = vocab.binary_search_by(|w| w.as_str().cmp(s.as_str())).ok();
                        data.extend((0..vocab.len()).map(|k| if Some(k) == hit { T::one() } else { T::zero() }));
                    }
                    _ => return Err(Error::Data("column kind changed after fit".into())),
                }
            }
        }
        Matrix::from_vec(table.len(), width, data)
    }
}

fn numeric_fit(vals: impl Iterator<Item = f64> + Clone, scaling: Scaling) -> ColumnFit {
    match scaling {
        Scaling::MinMax => {
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            ColumnFit::Numeric {
                offset: lo,
                scale: hi - lo,
            }
        }
        Scaling::ZScore => {
            let n = vals.clone().count() as f64;
            let mean = vals.clone().sum::<f64>() / n;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            ColumnFit::Numeric {
                offset: mean,
                scale: var.sqrt(),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitProtocol {
    /// Train on a fraction of the normal class; test on the rest of it plus
    /// every anomalous row.
    HoldoutClass,
    /// Train on half of the normal-tagged (attack) rows; test on the other
    /// half plus half of the anomalous (non-attack) rows.
    KddFiftyFifty,
    /// Train on every row, no test set.
    None,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn class_indices(labels: &[Label], want: Label) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == want)
        .map(|(i, _)| i)
        .collect()
}

/// Shuffles and keeps `floor(fraction·n)` in the first part.
fn take_fraction(mut idx: Vec<usize>, fraction: f64, rng: &mut RngState) -> (Vec<usize>, Vec<usize>) {
    idx.shuffle(rng);
    let k = ((idx.len() as f64) * fraction).floor() as usize;
    let rest = idx.split_off(k.min(idx.len()));
    (idx, rest)
}

fn both_classes(labels: &[Label]) -> Result<(Vec<usize>, Vec<usize>)> {
    let normal = class_indices(labels, Label::Normal);
    let anomalous = class_indices(labels, Label::Anomalous);
    if normal.is_empty() || anomalous.is_empty() {
        return Err(Error::Data(format!(
            "split needs both classes, found {} normal and {} anomalous rows",
            normal.len(),
            anomalous.len()
        )));
    }
    Ok((normal, anomalous))
}

pub fn split_kdd_indices(labels: &[Label], rng: &mut RngState) -> Result<SplitIndices> {
    let (attack, non_attack) = both_classes(labels)?;
    let (mut train, mut test) = take_fraction(attack, 0.5, rng);
    let (mut test_non_attack, _) = take_fraction(non_attack, 0.5, rng);
    test.append(&mut test_non_attack);
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn split_holdout_indices(labels: &[Label], rng: &mut RngState, train_fraction: f64) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} not in (0, 1]")));
    }
    let (normal, mut anomalous) = both_classes(labels)?;
    let (mut train, mut test) = take_fraction(normal, train_fraction, rng);
    test.append(&mut anomalous);
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Split protocol together with its parameters and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub protocol: SplitProtocol,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn indices(&self, n: usize, labels: Option<&[Label]>) -> Result<SplitIndices> {
        let mut rng = RngState::new(self.seed);
        match self.protocol {
            SplitProtocol::None => Ok(SplitIndices {
                train: (0..n).collect(),
                test: Vec::new(),
            }),
            _ => {
                let labels = labels.ok_or_else(|| Error::Data("split protocol needs labels".into()))?;
                if self.protocol == SplitProtocol::KddFiftyFifty {
                    split_kdd_indices(labels, &mut rng)
                } else {
                    split_holdout_indices(labels, &mut rng, self.train_fraction)
                }
            }
        }
    }
}

fn split_dataset<T: Scalar>(dataset: &Dataset<T>, idx: SplitIndices) -> Result<(Dataset<T>, Dataset<T>)> {
    if idx.train.is_empty() || idx.test.is_empty() {
        return Err(Error::Data(format!(
            "split of `{}` leaves {} train and {} test rows",
            dataset.name,
            idx.train.len(),
            idx.test.len()
        )));
    }
    let train = dataset.select(&idx.train, format!("{}-train", dataset.name))?;
    let test = dataset.select(&idx.test, format!("{}-test", dataset.name))?;
    Ok((train, test))
}

fn labels_of<T>(dataset: &Dataset<T>) -> Result<&[Label]> {
    dataset
        .labels
        .as_deref()
        .ok_or_else(|| Error::Data(format!("dataset `{}` has no labels", dataset.name)))
}

pub fn split_kdd<T: Scalar>(dataset: &Dataset<T>, rng: &mut RngState) -> Result<(Dataset<T>, Dataset<T>)> {
    let idx = split_kdd_indices(labels_of(dataset)?, rng)?;
    split_dataset(dataset, idx)
}

pub fn split_holdout_class<T: Scalar>(
    dataset: &Dataset<T>,
    rng: &mut RngState,
    train_fraction: f64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    let idx = split_holdout_indices(labels_of(dataset)?, rng, train_fraction)?;
    split_dataset(dataset, idx)
}
