//! Discriminator-based anomaly scores and the ranking / threshold metrics.
//!
//! The anomaly score of `x` is `1 - D(x)`: training pushes normal data
//! towards `D = 1`, so high scores mean anomalous.
//!
//! Ranking ties: `auprc` and `prf_at_contamination` order rows by
//! descending score, breaking ties by ascending row index. `auroc` gives
//! tied positive/negative pairs half credit instead.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::neural::Mlp;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub scores: Vec<f64>,
    pub labels: Option<Vec<Label>>,
    pub source: String,
}

impl ScoreReport {
    /// `row_id,score,label` with a header line; label is empty when absent.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "row_id,score,label").expect("write to Vec");
        for (i, s) in self.scores.iter().enumerate() {
            let label = self.labels.as_ref().map(|l| l[i].as_str()).unwrap_or("");
            writeln!(out, "{i},{s},{label}").expect("write to Vec");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Eval-mode `1 - D(x)` for every row of `data`.
pub fn anomaly_scores<T: Scalar>(discriminator: &Mlp<T>, data: &Matrix<T>) -> Result<Vec<f64>> {
    if discriminator.output_dim() != 1 {
        return Err(Error::shape("anomaly_scores", "discriminator must have one output"));
    }
    let d = discriminator.predict(data)?;
    Ok(d.as_slice().iter().map(|&v| (T::one() - v).to_f64_lossless()).collect())
}

pub fn score_dataset<T: Scalar>(discriminator: &Mlp<T>, data: &Dataset<T>) -> Result<ScoreReport> {
    Ok(ScoreReport {
        scores: anomaly_scores(discriminator, &data.features)?,
        labels: data.labels.clone(),
        source: data.name.clone(),
    })
}

fn check_inputs(op: &'static str, scores: &[f64], positive: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != positive.len() {
        return Err(Error::shape(op, format!("{} scores for {} labels", scores.len(), positive.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("{op}: non-finite score {s}")));
    }
    let p = positive.iter().filter(|&&b| b).count();
    Ok((p, positive.len() - p))
}

/// Area under the ROC curve in Mann–Whitney form:
/// `(concordant pairs + ½ tied pairs) / (positives · negatives)`.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (p, n) = check_inputs("auroc", scores, positive)?;
    if p == 0 || n == 0 {
        return Err(Error::invalid("auroc needs both positive and negative rows"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (doubled) mid-ranks of the positives; doubling keeps it integral.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| positive[k]).count() as u64;
        rank_sum2 += mid2 * pos_in_group;
        i = j + 1;
    }
    let (p64, n64) = (p as u64, n as u64);
    // U = R_pos - p(p+1)/2, all doubled.
    let u2 = rank_sum2 - p64 * (p64 + 1);
    Ok(u2 as f64 / (2.0 * (p64 * n64) as f64))
}

/// Descending-score order with ascending index as the tiebreaker.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Average precision: mean over positives of the precision at each
/// positive's rank.
pub fn auprc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (p, _) = check_inputs("auprc", scores, positive)?;
    if p == 0 {
        return Err(Error::invalid("auprc needs at least one positive row"));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in ranking(scores).iter().enumerate() {
        if positive[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / p as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Score of the last flagged row.
    pub threshold: f64,
    pub flagged: usize,
}

/// Flags the `ceil(q·n)` highest-scoring rows as positive and scores the
/// prediction against `positive`. `q` must lie in (0, 1].
pub fn prf_at_contamination(scores: &[f64], positive: &[bool], q: f64) -> Result<Prf> {
    let (p, n) = check_inputs("prf_at_contamination", scores, positive)?;
    if p == 0 || n == 0 {
        return Err(Error::invalid("prf_at_contamination needs both classes"));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("contamination {q} not in (0, 1]")));
    }
    let total = scores.len();
    // Tolerate representation error in q·n (e.g. 0.7·10).
    let k = ((q * total as f64) - 1e-9).ceil().max(1.0) as usize;
    let k = k.min(total);
    let order = ranking(scores);
    let tp = order[..k].iter().filter(|&&i| positive[i]).count();
    let precision = tp as f64 / k as f64;
    let recall = tp as f64 / p as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Prf {
        precision,
        recall,
        f1,
        threshold: scores[order[k - 1]],
        flagged: k,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Values below / above the range (excluded unless clipping).
    pub below: usize,
    pub above: usize,
}

/// Uniform bins over `[lo, hi]`, left-closed and right-open except the last
/// bin which is closed. Out-of-range values land in the edge bins when
/// `clip` is set and are only tallied in `below` / `above` otherwise.
pub fn histogram(scores: &[f64], bins: usize, lo: f64, hi: f64, clip: bool) -> Result<Histogram> {
    if bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("bad histogram range [{lo}, {hi}] with {bins} bins")));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut h = Histogram {
        edges,
        counts: vec![0; bins],
        below: 0,
        above: 0,
    };
    for &s in scores {
        let idx = if s < lo {
            h.below += 1;
            if !clip {
                continue;
            }
            0
        } else if s > hi {
            h.above += 1;
            if !clip {
                continue;
            }
            bins - 1
        } else {
            (((s - lo) / width).floor() as usize).min(bins - 1)
        };
        h.counts[idx] += 1;
    }
    Ok(h)
}

/// Axis-aligned box for [`grid_scores`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl GridBounds {
    /// Cell-center coordinate of column `j` / row `i` at resolution `r`.
    pub fn center(&self, i: usize, j: usize, r: usize) -> (f64, f64) {
        let x = self.x_min + (j as f64 + 0.5) * (self.x_max - self.x_min) / r as f64;
        let y = self.y_min + (i as f64 + 0.5) * (self.y_max - self.y_min) / r as f64;
        (x, y)
    }
}

/// Discriminator score `D` at the `r×r` cell centers. Row `i` runs along y
/// (ascending from `y_min`), column `j` along x.
pub fn grid_scores<T: Scalar>(discriminator: &Mlp<T>, bounds: GridBounds, r: usize) -> Result<Matrix<T>> {
    if discriminator.input_dim() != 2 || discriminator.output_dim() != 1 {
        return Err(Error::shape(
            "grid_scores",
            format!("needs a 2→1 discriminator, got {:?}", discriminator.dims()),
        ));
    }
    if r == 0 || !(bounds.x_min < bounds.x_max && bounds.y_min < bounds.y_max) {
        return Err(Error::invalid(format!("bad grid {bounds:?} at resolution {r}")));
    }
    let mut pts = Vec::with_capacity(2 * r * r);
    for i in 0..r {
        for j in 0..r {
            let (x, y) = bounds.center(i, j, r);
            pts.push(T::of(x));
            pts.push(T::of(y));
        }
    }
    let d = discriminator.predict(&Matrix::from_vec(r * r, 2, pts)?)?;
    Matrix::from_vec(r, r, d.into_vec())
}

/// One evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auprc: f64,
    pub auroc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub q: f64,
    pub seed: u64,
    pub positive_class: Label,
    pub histogram: Histogram,
}

/// Scores `test` and computes every metric with `positive` as the positive
/// class. The ranking score is the anomaly score when the positive class is
/// `Anomalous` and `D(x)` otherwise; `q` is the positive prevalence.
pub fn evaluate<T: Scalar>(
    discriminator: &Mlp<T>,
    test: &Dataset<T>,
    positive_class: Label,
    bins: usize,
    seed: u64,
) -> Result<(MetricsReport, ScoreReport)> {
    let labels = test
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data(format!("test set `{}` has no labels", test.name)))?;
    let report = score_dataset(discriminator, test)?;
    let positive: Vec<bool> = labels.iter().map(|&l| l == positive_class).collect();
    let ranked: Vec<f64> = match positive_class {
        Label::Anomalous => report.scores.clone(),
        Label::Normal => report.scores.iter().map(|s| 1.0 - s).collect(),
    };
    let q = positive.iter().filter(|&&b| b).count() as f64 / positive.len() as f64;
    let prf = prf_at_contamination(&ranked, &positive, q)?;
    let histogram = histogram(&report.scores, bins, 0.0, 1.0, false)?;
    Ok((
        MetricsReport {
            auprc: auprc(&ranked, &positive)?,
            auroc: auroc(&ranked, &positive)?,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            threshold: prf.threshold,
            q,
            seed,
            positive_class,
            histogram,
        },
        report,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub seeds: Vec<u64>,
    pub auprc: MeanStd,
    pub auroc: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::invalid("nothing to aggregate"));
    }
    let col = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(AggregateReport {
        seeds: reports.iter().map(|r| r.seed).collect(),
        auprc: col(|r| r.auprc),
        auroc: col(|r| r.auroc),
        precision: col(|r| r.precision),
        recall: col(|r| r.recall),
        f1: col(|r| r.f1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, DenseLayer};

    const P: bool = true;
    const N: bool = false;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[P, P, N, N]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.6, 0.4, 0.1], &[P, N, P, N]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.3; 6], &[P, N, P, N, N, P]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[P, P]).is_err());
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.9, 0.8, 0.2, 0.1], &[P, P, N, N]).unwrap(), 1.0);
        let v = auprc(&[0.9, 0.6, 0.4, 0.1], &[P, N, P, N]).unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(auprc(&[0.1, 0.5, 0.3], &[P, P, P]).unwrap(), 1.0);
        assert!(auprc(&[0.1, 0.5], &[N, N]).is_err());
    }

    #[test]
    fn prf_examples() {
        let r = prf_at_contamination(&[0.9, 0.8, 0.3, 0.2], &[P, P, N, N], 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert_eq!(r.threshold, 0.8);
        let r = prf_at_contamination(&[0.9, 0.8, 0.3, 0.2], &[P, N, P, N], 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
        let r = prf_at_contamination(&[0.9, 0.8, 0.3, 0.2, 0.1], &[P, N, P, N, N], 1.0).unwrap();
        assert_eq!(r.recall, 1.0);
        assert!((r.precision - 0.4).abs() < 1e-15);
        assert!(prf_at_contamination(&[0.9, 0.1], &[P, N], 0.0).is_err());
        assert!(prf_at_contamination(&[0.9, 0.1], &[P, N], 1.5).is_err());
        let r = prf_at_contamination(&[0.0; 10], &[P; 10].iter().enumerate().map(|(i, _)| i < 7).collect::<Vec<_>>(), 0.7).unwrap();
        assert_eq!(r.flagged, 7);
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[0.5; 10], 10, 0.0, 1.0, false).unwrap();
        assert_eq!(h.counts[5], 10);
        assert_eq!(h.counts.iter().sum::<usize>(), 10);
        let h = histogram(&[], 4, 0.0, 1.0, false).unwrap();
        assert!(h.counts.iter().all(|&c| c == 0));
        let h = histogram(&[1.0, -0.5, 2.0], 4, 0.0, 1.0, false).unwrap();
        assert_eq!((h.counts[3], h.below, h.above), (1, 1, 1));
        let h = histogram(&[1.0, -0.5, 2.0], 4, 0.0, 1.0, true).unwrap();
        assert_eq!((h.counts[0], h.counts[3]), (1, 2));
        assert!(histogram(&[0.1], 0, 0.0, 1.0, false).is_err());
        assert!(histogram(&[0.1], 3, 1.0, 1.0, false).is_err());
    }

    fn constant_disc(bias: f64) -> Mlp<f64> {
        Mlp::new(
            vec![DenseLayer {
                weights: Matrix::zeros(2, 1),
                bias: vec![bias],
                activation: Activation::Sigmoid,
                dropout: 0.0,
            }],
            1e-7,
        )
        .unwrap()
    }

    #[test]
    fn anomaly_score_orientation() {
        let d = constant_disc((0.9f64 / 0.1).ln());
        let s = anomaly_scores(&d, &Matrix::zeros(3, 2)).unwrap();
        assert!(s.iter().all(|v| (v - 0.1).abs() < 1e-12));
    }

    #[test]
    fn constant_grid() {
        let d = constant_disc(0.3);
        let b = GridBounds {
            x_min: -1.0,
            x_max: 1.0,
            y_min: -2.0,
            y_max: 2.0,
        };
        let g = grid_scores(&d, b, 4).unwrap();
        assert_eq!(g.shape(), (4, 4));
        assert!(g.as_slice().iter().all(|&v| v == g.get(0, 0)));
        let wide = Mlp::new(
            vec![DenseLayer {
                weights: Matrix::zeros(3, 1),
                bias: vec![0.0],
                activation: Activation::Sigmoid,
                dropout: 0.0,
            }],
            1e-7,
        )
        .unwrap();
        assert!(grid_scores(&wide, b, 4).is_err());
    }

    #[test]
    fn aggregate_single_and_mean() {
        let mk = |f1: f64, seed| MetricsReport {
            auprc: f1,
            auroc: f1,
            precision: f1,
            recall: f1,
            f1,
            threshold: 0.5,
            q: 0.2,
            seed,
            positive_class: Label::Anomalous,
            histogram: histogram(&[], 1, 0.0, 1.0, false).unwrap(),
        };
        let a = aggregate(&[mk(0.8, 1)]).unwrap();
        assert_eq!((a.f1.mean, a.f1.std), (0.8, 0.0));
        let a = aggregate(&[mk(0.8, 1), mk(0.6, 2), mk(1.0, 3)]).unwrap();
        assert!((a.f1.mean - 0.8).abs() < 1e-15);
        assert!((a.f1.std - 0.2).abs() < 1e-15);
    }
}
