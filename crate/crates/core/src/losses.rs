//! Generator and discriminator objectives, each returning its value and the
//! exact gradient with respect to its direct inputs (scores and, for the
//! dispersion term, generated coordinates).
//!
//! Every log argument is floored at `eps`. Inside the floor the gradient is
//! defined as zero.

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::scalar::Scalar;

/// Default log / distance floor.
pub const DEFAULT_EPS: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct LossResult<T> {
    pub value: T,
    /// ∂loss/∂score for the (generated) score batch.
    pub grad_scores: Option<Matrix<T>>,
    /// ∂loss/∂score for the real score batch (discriminator losses only).
    pub grad_real_scores: Option<Matrix<T>>,
    /// ∂loss/∂coordinate of each generated point.
    pub grad_points: Option<Matrix<T>>,
}

/// How the batch centroid is treated when differentiating the dispersion term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CentroidGrad {
    /// Differentiate through the centroid's dependence on every point.
    #[default]
    Full,
    /// Treat the centroid as a constant.
    Detached,
}

fn check_scores<T: Scalar>(op: &'static str, scores: &Matrix<T>) -> Result<()> {
    if scores.cols() != 1 {
        return Err(Error::shape(op, format!("scores must be N×1, got {:?}", scores.shape())));
    }
    if let Some(bad) = scores
        .as_slice()
        .iter()
        .find(|s| !(**s >= T::zero() && **s <= T::one()))
    {
        return Err(Error::invalid(format!("{op}: score {bad} outside [0, 1]")));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("eps {eps} must lie in (0, 1)")));
    }
    Ok(())
}

/// Mean of `ln(max(|alpha - s|, eps))`; pulls scores onto the `alpha` level.
pub fn encirclement_loss<T: Scalar>(scores: &Matrix<T>, alpha: f64, eps: f64) -> Result<LossResult<T>> {
    check_scores("encirclement_loss", scores)?;
    check_eps(eps)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} must lie in (0, 1)")));
    }
    let n = T::of(scores.rows() as f64);
    let (a, e) = (T::of(alpha), T::of(eps));
    let mut total = T::zero();
    let grad = scores.map(|s| {
        let diff = a - s;
        if diff.abs() <= e {
            total = total + e.ln();
            T::zero()
        } else {
            total = total + diff.abs().ln();
            -T::one() / (n * diff)
        }
    });
    Ok(LossResult {
        value: total / n,
        grad_scores: Some(grad),
        grad_real_scores: None,
        grad_points: None,
    })
}

/// Reciprocal of the mean Euclidean distance of the points from their
/// centroid. A mean distance below `eps_d` is floored, giving `1/eps_d` and
/// a zero gradient.
pub fn dispersion_loss<T: Scalar>(
    points: &Matrix<T>,
    eps_d: f64,
    centroid: CentroidGrad,
) -> Result<LossResult<T>> {
    let (n, d) = points.shape();
    if n < 2 {
        return Err(Error::invalid(format!("dispersion_loss needs at least 2 points, got {n}")));
    }
    check_eps(eps_d)?;
    let nt = T::of(n as f64);
    let mu = points.reduce_mean(crate::math::Axis::Rows);
    let mu = mu.as_slice();

    // Unit directions from the centroid; zero for a point sitting on it.
    let mut units = Matrix::zeros(n, d);
    let mut sum_dist = T::zero();
    for i in 0..n {
        let row = points.row(i);
        let dist = row
            .iter()
            .zip(mu)
            .map(|(&x, &m)| (x - m) * (x - m))
            .sum::<T>()
            .sqrt();
        sum_dist = sum_dist + dist;
        if dist > T::zero() {
            for (u, (&x, &m)) in units.row_mut(i).iter_mut().zip(row.iter().zip(mu)) {
                *u = (x - m) / dist;
            }
        }
    }
    let mean_dist = sum_dist / nt;
    let floor = T::of(eps_d);
    if mean_dist < floor {
        return Ok(LossResult {
            value: T::one() / floor,
            grad_scores: None,
            grad_real_scores: None,
            grad_points: Some(Matrix::zeros(n, d)),
        });
    }

    // d(mean_dist)/d(g_j) = (u_j - mean(u)) / N with the full centroid term.
    let coef = -T::one() / (mean_dist * mean_dist * nt);
    let mean_unit = units.reduce_mean(crate::math::Axis::Rows);
    let mut grad = units;
    for row in grad.as_mut_slice().chunks_exact_mut(d) {
        for (g, &mu_u) in row.iter_mut().zip(mean_unit.as_slice()) {
            let dir = match centroid {
                CentroidGrad::Full => *g - mu_u,
                CentroidGrad::Detached => *g,
            };
            *g = coef * dir;
        }
    }
    Ok(LossResult {
        value: T::one() / mean_dist,
        grad_scores: None,
        grad_real_scores: None,
        grad_points: Some(grad),
    })
}

/// Encirclement plus `beta` times dispersion.
pub fn generator_loss_fgan<T: Scalar>(
    scores: &Matrix<T>,
    points: &Matrix<T>,
    alpha: f64,
    beta: f64,
    eps: f64,
    centroid: CentroidGrad,
) -> Result<LossResult<T>> {
    if scores.rows() != points.rows() {
        return Err(Error::shape(
            "generator_loss_fgan",
            format!("{} scores for {} points", scores.rows(), points.rows()),
        ));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta {beta} must be finite and ≥ 0")));
    }
    let el = encirclement_loss(scores, alpha, eps)?;
    let dl = dispersion_loss(points, eps, centroid)?;
    let b = T::of(beta);
    Ok(LossResult {
        value: el.value + b * dl.value,
        grad_scores: el.grad_scores,
        grad_real_scores: None,
        grad_points: dl.grad_points.map(|g| g.scale(b)),
    })
}

/// Mean of `-ln(max(r, eps)) - gamma·ln(max(1 - g, eps))` over paired
/// real and generated scores.
pub fn discriminator_loss_weighted<T: Scalar>(
    real_scores: &Matrix<T>,
    gen_scores: &Matrix<T>,
    gamma: f64,
    eps: f64,
) -> Result<LossResult<T>> {
    check_scores("discriminator_loss", real_scores)?;
    check_scores("discriminator_loss", gen_scores)?;
    check_eps(eps)?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!("gamma {gamma} must lie in (0, 1]")));
    }
    if real_scores.rows() != gen_scores.rows() {
        return Err(Error::shape(
            "discriminator_loss",
            format!(
                "{} real scores vs {} generated scores",
                real_scores.rows(),
                gen_scores.rows()
            ),
        ));
    }
    let n = T::of(real_scores.rows() as f64);
    let (g_w, e) = (T::of(gamma), T::of(eps));
    let mut total = T::zero();
    let grad_real = real_scores.map(|r| {
        if r <= e {
            total = total - e.ln();
            T::zero()
        } else {
            total = total - r.ln();
            -T::one() / (n * r)
        }
    });
    let grad_gen = gen_scores.map(|g| {
        let q = T::one() - g;
        if q <= e {
            total = total - g_w * e.ln();
            T::zero()
        } else {
            total = total - g_w * q.ln();
            g_w / (n * q)
        }
    });
    Ok(LossResult {
        value: total / n,
        grad_scores: Some(grad_gen),
        grad_real_scores: Some(grad_real),
        grad_points: None,
    })
}

/// Minimax generator objective: mean of `ln(max(1 - g, eps))`.
pub fn gan_generator_loss<T: Scalar>(gen_scores: &Matrix<T>, eps: f64) -> Result<LossResult<T>> {
    check_scores("gan_generator_loss", gen_scores)?;
    check_eps(eps)?;
    let n = T::of(gen_scores.rows() as f64);
    let e = T::of(eps);
    let mut total = T::zero();
    let grad = gen_scores.map(|g| {
        let q = T::one() - g;
        if q <= e {
            total = total + e.ln();
            T::zero()
        } else {
            total = total + q.ln();
            -T::one() / (n * q)
        }
    });
    Ok(LossResult {
        value: total / n,
        grad_scores: Some(grad),
        grad_real_scores: None,
        grad_points: None,
    })
}

/// Minimax discriminator objective, the weighted loss at `gamma = 1`.
pub fn gan_discriminator_loss<T: Scalar>(
    real_scores: &Matrix<T>,
    gen_scores: &Matrix<T>,
    eps: f64,
) -> Result<LossResult<T>> {
    discriminator_loss_weighted(real_scores, gen_scores, 1.0, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix<f64> {
        Matrix::column(v.to_vec()).unwrap()
    }

    #[test]
    fn encirclement_hand_value() {
        let r = encirclement_loss(&col(&[0.6, 0.4]), 0.5, DEFAULT_EPS).unwrap();
        assert!((r.value - 0.1f64.ln()).abs() < 1e-12);
        assert!((r.value + 2.302585).abs() < 1e-6);
    }

    #[test]
    fn encirclement_floor_at_alpha() {
        let r = encirclement_loss(&col(&[0.3, 0.3, 0.3]), 0.3, DEFAULT_EPS).unwrap();
        assert!((r.value - DEFAULT_EPS.ln()).abs() < 1e-12);
        assert!(r.grad_scores.unwrap().as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn encirclement_symmetric() {
        let a = encirclement_loss(&col(&[0.8]), 0.5, DEFAULT_EPS).unwrap();
        let b = encirclement_loss(&col(&[0.2]), 0.5, DEFAULT_EPS).unwrap();
        assert!((a.value - b.value).abs() < 1e-15);
    }

    #[test]
    fn encirclement_rejects_bad_input() {
        assert!(encirclement_loss(&col(&[1.5]), 0.5, DEFAULT_EPS).is_err());
        assert!(encirclement_loss(&col(&[0.5]), 1.0, DEFAULT_EPS).is_err());
        assert!(encirclement_loss(&Matrix::<f64>::zeros(2, 2), 0.5, DEFAULT_EPS).is_err());
    }

    #[test]
    fn dispersion_hand_value() {
        let p = Matrix::<f64>::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let r = dispersion_loss(&p, DEFAULT_EPS, CentroidGrad::Full).unwrap();
        assert!((r.value - 1.0).abs() < 1e-15);
        let scaled = p.map(|v| 1.0 + (v - 1.0) * 2.0);
        let r2 = dispersion_loss(&scaled, DEFAULT_EPS, CentroidGrad::Full).unwrap();
        assert!((r2.value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dispersion_coincident_points_hit_floor() {
        let p = Matrix::filled(4, 3, 1.25);
        let r = dispersion_loss(&p, DEFAULT_EPS, CentroidGrad::Full).unwrap();
        assert!((r.value - 1.0 / DEFAULT_EPS).abs() < 1e-3);
        assert!(r.value.is_finite());
    }

    #[test]
    fn dispersion_needs_two_points() {
        assert!(dispersion_loss(&Matrix::<f64>::zeros(1, 2), DEFAULT_EPS, CentroidGrad::Full).is_err());
    }

    #[test]
    fn full_centroid_gradient_sums_to_zero() {
        // Translating every point leaves the loss unchanged.
        let p = Matrix::<f64>::from_rows(&[[0.0, 1.0], [2.0, -1.0], [0.5, 3.0]]).unwrap();
        let g = dispersion_loss(&p, DEFAULT_EPS, CentroidGrad::Full)
            .unwrap()
            .grad_points
            .unwrap();
        for s in g.column_sums() {
            assert!(s.abs() < 1e-14);
        }
    }

    #[test]
    fn generator_loss_combines_terms() {
        let s = col(&[0.6, 0.4]);
        let p = Matrix::<f64>::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let r = generator_loss_fgan(&s, &p, 0.5, 30.0, DEFAULT_EPS, CentroidGrad::Full).unwrap();
        assert!((r.value - 27.697415).abs() < 1e-6);
        let r0 = generator_loss_fgan(&s, &p, 0.5, 0.0, DEFAULT_EPS, CentroidGrad::Full).unwrap();
        let el = encirclement_loss(&s, 0.5, DEFAULT_EPS).unwrap();
        assert_eq!(r0.value, el.value);
        assert!(generator_loss_fgan(&col(&[0.5]), &p, 0.5, 1.0, DEFAULT_EPS, CentroidGrad::Full).is_err());
    }

    #[test]
    fn weighted_discriminator_hand_value() {
        let r = discriminator_loss_weighted(&col(&[0.5]), &col(&[0.5]), 0.5, DEFAULT_EPS).unwrap();
        assert!((r.value - 1.5 * 2f64.ln()).abs() < 1e-12);
        let gan = gan_discriminator_loss(&col(&[0.5]), &col(&[0.5]), DEFAULT_EPS).unwrap();
        assert!((gan.value - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gamma_one_is_minimax_bitwise() {
        let real = col(&[0.9, 0.2, 0.55]);
        let gen = col(&[0.1, 0.7, 0.3]);
        let a = discriminator_loss_weighted(&real, &gen, 1.0, DEFAULT_EPS).unwrap();
        let b = gan_discriminator_loss(&real, &gen, DEFAULT_EPS).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn perfect_discriminator_near_zero() {
        let e = DEFAULT_EPS;
        let r = discriminator_loss_weighted(&col(&[1.0 - e]), &col(&[e]), 0.5, e).unwrap();
        assert!((r.value - 1.5 * -(1.0 - e).ln()).abs() < 1e-12);
        assert!(r.value < 1e-6);
    }

    #[test]
    fn discriminator_rejects_unequal_batches() {
        assert!(discriminator_loss_weighted(&col(&[0.5, 0.5]), &col(&[0.5]), 0.5, DEFAULT_EPS).is_err());
        assert!(discriminator_loss_weighted(&col(&[0.5]), &col(&[0.5]), 0.0, DEFAULT_EPS).is_err());
    }

    #[test]
    fn gan_generator_values() {
        let r = gan_generator_loss(&col(&[0.5]), DEFAULT_EPS).unwrap();
        assert!((r.value - 0.5f64.ln()).abs() < 1e-12);
        let r = gan_generator_loss(&col(&[1.0, 1.0]), DEFAULT_EPS).unwrap();
        assert!((r.value - DEFAULT_EPS.ln()).abs() < 1e-12);
    }
}
