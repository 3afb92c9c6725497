//! Self-check suite behind `fgan verify`: finite-difference gradient
//! checks for every network and loss, the loss reference values, and
//! brute-force metric oracles.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss_weighted, dispersion_loss, encirclement_loss, gan_discriminator_loss, gan_generator_loss,
    generator_loss_fgan, CentroidGrad,
};
use crate::math::{Matrix, RngState};
use crate::metrics::{auprc, auroc};
use crate::neural::{grad_check_floored, Activation, Mlp, Mode, DEFAULT_CLAMP_EPS};

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
/// Minimum |pre-activation| for ReLU-family checks, keeping ±H away from the kink.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// `Err(Error::Verification)` naming the failed checks.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            let names: Vec<&str> = self.failures().map(|c| c.name.as_str()).collect();
            Err(Error::Verification(names.join(", ")))
        }
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<44} max_err={:.3e} tol={:.0e}{}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.max_error,
                c.tolerance,
                if c.detail.is_empty() { String::new() } else { format!("  {}", c.detail) }
            )?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// Test hook: shifts one coordinate of the analytic gradient of the named
/// check, which must then fail and report that coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub check: String,
    pub coordinate: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random points per gradient check.
    pub points: usize,
    /// Random instances for the metric oracles.
    pub metric_instances: usize,
    pub perturb: Option<Perturbation>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            points: 100,
            metric_instances: 1000,
            perturb: None,
        }
    }
}

/// Accumulates the worst coordinate over repeated gradient comparisons.
struct GradAcc<'a> {
    name: String,
    worst: f64,
    detail: String,
    perturb: Option<&'a Perturbation>,
}

impl<'a> GradAcc<'a> {
    fn new(name: impl Into<String>, opts: &'a VerifyOptions) -> Self {
        let name = name.into();
        let perturb = opts.perturb.as_ref().filter(|p| p.check == name);
        GradAcc {
            name,
            worst: 0.0,
            detail: String::new(),
            perturb,
        }
    }

    fn check(&mut self, f: impl FnMut(&[f64]) -> f64, at: &[f64], analytic: &[f64]) {
        let mut analytic = analytic.to_vec();
        if let Some(p) = self.perturb {
            if let Some(a) = analytic.get_mut(p.coordinate) {
                *a += p.delta;
            }
        }
        let g = grad_check_floored(f, at, &analytic, H, FLOOR);
        if g.max_rel_error >= self.worst {
            self.worst = g.max_rel_error;
            self.detail = format!(
                "worst coordinate {}: analytic {:.6e} vs numeric {:.6e}",
                g.worst_index, g.analytic, g.numeric
            );
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            passed: self.worst <= GRAD_TOL,
            name: self.name,
            max_error: self.worst,
            tolerance: GRAD_TOL,
            detail: self.detail,
        }
    }
}

fn random_matrix(rng: &mut RngState, r: usize, c: usize) -> Matrix<f64> {
    Matrix::sample_standard_normal(rng, r, c).expect("positive dims")
}

/// Random network with random (not zero) biases.
fn random_net(rng: &mut RngState, dims: &[usize], acts: &[Activation]) -> Mlp<f64> {
    let mut net = Mlp::init_glorot(rng, dims, acts, &vec![0.0; acts.len()], DEFAULT_CLAMP_EPS).expect("valid dims");
    for l in net.layers_mut() {
        for b in &mut l.bias {
            *b = rng.uniform_range(-0.5, 0.5);
        }
    }
    net
}

/// True when every ReLU-family pre-activation is clear of the kink and no
/// sigmoid output sits on its clamp.
fn away_from_kinks(net: &Mlp<f64>, x: &Matrix<f64>, rng: &mut RngState) -> bool {
    let (_, trace) = net.forward(x, Mode::Eval, rng).expect("shapes match");
    net.layers().iter().zip(&trace.layers).all(|(l, t)| match l.activation {
        Activation::Relu | Activation::LeakyRelu(_) => t.pre_activation.as_slice().iter().all(|z| z.abs() > KINK_MARGIN),
        Activation::Sigmoid => t.pre_activation.as_slice().iter().all(|z| z.abs() < 12.0),
        _ => true,
    })
}

fn activation_label(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::LeakyRelu(_) => "leaky_relu",
        Activation::Tanh => "tanh",
        Activation::Sigmoid => "sigmoid",
        Activation::Linear => "linear",
    }
}

/// Network gradient checks: every activation at depths 1–3, plus the two
/// mixed stacks used for generators and discriminators. The objective is
/// `sum(output ⊙ W)` for a random `W`.
fn network_checks(opts: &VerifyOptions, rng: &mut RngState, out: &mut Vec<CheckResult>) {
    let lrelu = Activation::LeakyRelu(0.1);
    let mut stacks: Vec<(String, Vec<Activation>)> = Vec::new();
    for act in [Activation::Relu, lrelu, Activation::Tanh, Activation::Sigmoid, Activation::Linear] {
        for depth in 1..=3 {
            stacks.push((format!("mlp/{}/depth{depth}", activation_label(act)), vec![act; depth]));
        }
    }
    stacks.push(("mlp/generator_stack".into(), vec![Activation::Relu, Activation::Relu, Activation::Linear]));
    stacks.push(("mlp/discriminator_stack".into(), vec![lrelu, lrelu, Activation::Sigmoid]));

    for (name, acts) in stacks {
        let mut params = GradAcc::new(format!("{name}/params"), opts);
        let mut input = GradAcc::new(format!("{name}/input"), opts);
        let mut done = 0;
        let mut attempts = 0;
        while done < opts.points && attempts < 50 * opts.points {
            attempts += 1;
            let mut dims = vec![1 + (rng.uniform() * 4.0) as usize];
            dims.extend(acts.iter().map(|_| 1 + (rng.uniform() * 4.0) as usize));
            let net = random_net(rng, &dims, &acts);
            let x = random_matrix(rng, 3, dims[0]);
            if !away_from_kinks(&net, &x, rng) {
                continue;
            }
            let w = random_matrix(rng, 3, *dims.last().expect("nonempty"));
            let objective = |net: &Mlp<f64>, x: &Matrix<f64>| -> f64 {
                let y = net.predict(x).expect("shapes match");
                y.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
            };
            let (_, trace) = net.forward(&x, Mode::Train, rng).expect("shapes match");
            let (grads, gx) = net.backward(&trace, &w).expect("shapes match");

            let theta = net.params_to_vec();
            let mut probe = net.clone();
            params.check(
                |p| {
                    probe.set_params_from_vec(p).expect("same length");
                    objective(&probe, &x)
                },
                &theta,
                &grads.to_vec(),
            );
            let rows = x.rows();
            let cols = x.cols();
            input.check(
                |v| objective(&net, &Matrix::from_vec(rows, cols, v.to_vec()).expect("same shape")),
                x.as_slice(),
                gx.as_slice(),
            );
            done += 1;
        }
        out.push(params.finish());
        out.push(input.finish());
    }
}

fn column(v: &[f64]) -> Matrix<f64> {
    Matrix::column(v.to_vec()).expect("nonempty")
}

/// Scores in (0.02, 0.98) at least 0.02 from `avoid`.
fn random_scores(rng: &mut RngState, n: usize, avoid: Option<f64>) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let s = rng.uniform_range(0.02, 0.98);
            if avoid.is_none_or(|a| (s - a).abs() > 0.02) {
                break s;
            }
        })
        .collect()
}

fn loss_checks(opts: &VerifyOptions, rng: &mut RngState, out: &mut Vec<CheckResult>) {
    let eps = DEFAULT_CLAMP_EPS;
    let mut el = GradAcc::new("loss/encirclement", opts);
    let mut dl_full = GradAcc::new("loss/dispersion/full_centroid", opts);
    let mut dl_det = GradAcc::new("loss/dispersion/detached_centroid", opts);
    let mut gen = GradAcc::new("loss/generator_fgan", opts);
    let mut wd = GradAcc::new("loss/discriminator_weighted", opts);
    let mut gg = GradAcc::new("loss/gan_generator", opts);
    let mut gd = GradAcc::new("loss/gan_discriminator", opts);

    for _ in 0..opts.points {
        let n = 2 + (rng.uniform() * 7.0) as usize;
        let d = 1 + (rng.uniform() * 4.0) as usize;
        let alpha = rng.uniform_range(0.1, 0.9);
        let beta = rng.uniform_range(0.0, 20.0);
        let gamma = rng.uniform_range(0.05, 1.0);

        let s = random_scores(rng, n, Some(alpha));
        let r = encirclement_loss(&column(&s), alpha, eps).expect("valid input");
        el.check(
            |v| encirclement_loss(&column(v), alpha, eps).expect("valid").value,
            &s,
            r.grad_scores.as_ref().expect("score grad").as_slice(),
        );

        let pts = random_matrix(rng, n, d);
        let pm = |v: &[f64]| Matrix::from_vec(n, d, v.to_vec()).expect("same shape");
        let r = dispersion_loss(&pts, eps, CentroidGrad::Full).expect("valid");
        dl_full.check(
            |v| dispersion_loss(&pm(v), eps, CentroidGrad::Full).expect("valid").value,
            pts.as_slice(),
            r.grad_points.as_ref().expect("point grad").as_slice(),
        );
        // The detached gradient is the derivative with the centroid frozen.
        let mu = pts.reduce_mean(crate::math::Axis::Rows).into_vec();
        let r = dispersion_loss(&pts, eps, CentroidGrad::Detached).expect("valid");
        dl_det.check(
            |v| {
                let total: f64 = v
                    .chunks(d)
                    .map(|row| row.iter().zip(&mu).map(|(x, m)| (x - m) * (x - m)).sum::<f64>().sqrt())
                    .sum();
                n as f64 / total
            },
            pts.as_slice(),
            r.grad_points.as_ref().expect("point grad").as_slice(),
        );

        let r = generator_loss_fgan(&column(&s), &pts, alpha, beta, eps, CentroidGrad::Full).expect("valid");
        let mut joint = s.clone();
        joint.extend_from_slice(pts.as_slice());
        let mut analytic = r.grad_scores.as_ref().expect("score grad").as_slice().to_vec();
        analytic.extend_from_slice(r.grad_points.as_ref().expect("point grad").as_slice());
        gen.check(
            |v| {
                generator_loss_fgan(&column(&v[..n]), &pm(&v[n..]), alpha, beta, eps, CentroidGrad::Full)
                    .expect("valid")
                    .value
            },
            &joint,
            &analytic,
        );

        let real = random_scores(rng, n, None);
        let fake = random_scores(rng, n, None);
        let mut joint = real.clone();
        joint.extend_from_slice(&fake);
        for (acc, g) in [(&mut wd, gamma), (&mut gd, 1.0)] {
            let r = if g == 1.0 {
                gan_discriminator_loss(&column(&real), &column(&fake), eps)
            } else {
                discriminator_loss_weighted(&column(&real), &column(&fake), g, eps)
            }
            .expect("valid");
            let mut analytic = r.grad_real_scores.as_ref().expect("real grad").as_slice().to_vec();
            analytic.extend_from_slice(r.grad_scores.as_ref().expect("gen grad").as_slice());
            acc.check(
                |v| {
                    discriminator_loss_weighted(&column(&v[..n]), &column(&v[n..]), g, eps)
                        .expect("valid")
                        .value
                },
                &joint,
                &analytic,
            );
        }

        let r = gan_generator_loss(&column(&fake), eps).expect("valid");
        gg.check(
            |v| gan_generator_loss(&column(v), eps).expect("valid").value,
            &fake,
            r.grad_scores.as_ref().expect("score grad").as_slice(),
        );
    }
    for acc in [el, dl_full, dl_det, gen, wd, gg, gd] {
        out.push(acc.finish());
    }
}

/// Generator-parameter gradient of the full generator objective, taken
/// through the discriminator exactly as the trainer does.
fn chain_check(opts: &VerifyOptions, rng: &mut RngState, out: &mut Vec<CheckResult>) {
    let lrelu = Activation::LeakyRelu(0.1);
    let mut acc = GradAcc::new("chain/generator_through_discriminator", opts);
    let eps = DEFAULT_CLAMP_EPS;
    let mut done = 0;
    let mut attempts = 0;
    while done < opts.points && attempts < 50 * opts.points {
        attempts += 1;
        let (k, d, n) = (3, 2, 5);
        let g = random_net(rng, &[k, 5, d], &[Activation::Relu, Activation::Linear]);
        let disc = random_net(rng, &[d, 5, 1], &[lrelu, Activation::Sigmoid]);
        let z = random_matrix(rng, n, k);
        if !away_from_kinks(&g, &z, rng) {
            continue;
        }
        let pts = g.predict(&z).expect("shapes");
        if !away_from_kinks(&disc, &pts, rng) {
            continue;
        }
        let alpha = rng.uniform_range(0.2, 0.8);
        let scores = disc.predict(&pts).expect("shapes");
        if scores.as_slice().iter().any(|s| (s - alpha).abs() < 0.02) {
            continue;
        }
        let beta = rng.uniform_range(0.0, 5.0);
        let objective = |g: &Mlp<f64>| {
            let p = g.predict(&z).expect("shapes");
            let s = disc.predict(&p).expect("shapes");
            generator_loss_fgan(&s, &p, alpha, beta, eps, CentroidGrad::Full).expect("valid").value
        };
        let (p, g_trace) = g.forward(&z, Mode::Train, rng).expect("shapes");
        let (s, d_trace) = disc.forward(&p, Mode::Train, rng).expect("shapes");
        let loss = generator_loss_fgan(&s, &p, alpha, beta, eps, CentroidGrad::Full).expect("valid");
        let mut gp = disc
            .backward_input(&d_trace, loss.grad_scores.as_ref().expect("score grad"))
            .expect("shapes");
        gp.add_assign(loss.grad_points.as_ref().expect("point grad")).expect("shapes");
        let (grads, _) = g.backward(&g_trace, &gp).expect("shapes");
        let mut probe = g.clone();
        acc.check(
            |v| {
                probe.set_params_from_vec(v).expect("same length");
                objective(&probe)
            },
            &g.params_to_vec(),
            &grads.to_vec(),
        );
        done += 1;
    }
    out.push(acc.finish());
}

fn value_check(name: &str, got: f64, want: f64, tol: f64) -> CheckResult {
    let err = (got - want).abs();
    CheckResult {
        name: name.into(),
        max_error: err,
        tolerance: tol,
        passed: err <= tol,
        detail: format!("got {got:.12} want {want:.12}"),
    }
}

fn reference_values(out: &mut Vec<CheckResult>) {
    let eps = DEFAULT_CLAMP_EPS;
    let el = encirclement_loss(&column(&[0.6, 0.4]), 0.5, eps).expect("valid").value;
    out.push(value_check("reference/encirclement", el, 0.1f64.ln(), 1e-9));
    let pts = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).expect("rows");
    let dl = dispersion_loss(&pts, eps, CentroidGrad::Full).expect("valid").value;
    out.push(value_check("reference/dispersion", dl, 1.0, 1e-9));
    let wd = discriminator_loss_weighted(&column(&[0.5]), &column(&[0.5]), 0.5, eps)
        .expect("valid")
        .value;
    out.push(value_check("reference/weighted_discriminator", wd, 1.5 * 2f64.ln(), 1e-9));

    let mut rng = RngState::new(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let r = random_scores(&mut rng, 6, None);
        let g = random_scores(&mut rng, 6, None);
        let got = gan_discriminator_loss(&column(&r), &column(&g), eps).expect("valid").value;
        let want = -r.iter().zip(&g).map(|(a, b)| a.ln() + (1.0 - b).ln()).sum::<f64>() / 6.0;
        worst = worst.max((got - want).abs());
    }
    out.push(CheckResult {
        name: "reference/minimax_discriminator".into(),
        max_error: worst,
        tolerance: 1e-12,
        passed: worst <= 1e-12,
        detail: "100 random batches".into(),
    });
}

fn brute_auroc(s: &[f64], y: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for i in (0..s.len()).filter(|&i| y[i]) {
        for j in (0..s.len()).filter(|&j| !y[j]) {
            pairs += 1.0;
            if s[i] > s[j] {
                num += 1.0;
            } else if s[i] == s[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Threshold sweep: cut after every rank of the stable descending order and
/// average the precision at the cuts that add a positive.
fn brute_auprc(s: &[f64], y: &[bool]) -> f64 {
    let n = s.len();
    let ahead = |i: usize, j: usize| s[j] > s[i] || (s[j] == s[i] && j < i);
    let positives = y.iter().filter(|&&b| b).count() as f64;
    let mut total = 0.0;
    for i in (0..n).filter(|&i| y[i]) {
        let rank = (0..n).filter(|&j| ahead(i, j)).count() + 1;
        let tp = (0..n).filter(|&j| y[j] && (j == i || ahead(i, j))).count();
        total += tp as f64 / rank as f64;
    }
    total / positives
}

fn random_instance(rng: &mut RngState) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = 2 + (rng.uniform() * 63.0) as usize;
        // Coarse scores on every other instance to exercise ties.
        let coarse = rng.bernoulli(0.5);
        let s: Vec<f64> = (0..n)
            .map(|_| {
                let u = rng.uniform();
                if coarse {
                    (u * 5.0).floor() / 5.0
                } else {
                    u
                }
            })
            .collect();
        let y: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
        if y.iter().any(|&b| b) && y.iter().any(|&b| !b) {
            return (s, y);
        }
    }
}

fn metric_checks(opts: &VerifyOptions, rng: &mut RngState, out: &mut Vec<CheckResult>) {
    let (mut roc_err, mut pr_err) = (0.0f64, 0.0f64);
    for _ in 0..opts.metric_instances {
        let (s, y) = random_instance(rng);
        roc_err = roc_err.max((auroc(&s, &y).expect("both classes") - brute_auroc(&s, &y)).abs());
        pr_err = pr_err.max((auprc(&s, &y).expect("positives") - brute_auprc(&s, &y)).abs());
    }
    for (name, err) in [("metrics/auroc_brute_force", roc_err), ("metrics/auprc_brute_force", pr_err)] {
        out.push(CheckResult {
            name: name.into(),
            max_error: err,
            tolerance: 1e-12,
            passed: err <= 1e-12,
            detail: format!("{} instances", opts.metric_instances),
        });
    }

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (s, y) = random_instance(rng);
        let a = rng.uniform_range(0.1, 3.0);
        let b = rng.uniform_range(-2.0, 2.0);
        let mapped: Vec<f64> = s.iter().map(|v| (a * v + b).exp() + v * v * v).collect();
        worst = worst.max((auroc(&s, &y).expect("valid") - auroc(&mapped, &y).expect("valid")).abs());
    }
    out.push(CheckResult {
        name: "metrics/auroc_monotone_invariance".into(),
        max_error: worst,
        tolerance: 1e-12,
        passed: worst <= 1e-12,
        detail: "100 random increasing maps".into(),
    });
}

pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let mut rng = RngState::new(opts.seed);
    let mut checks = Vec::new();
    network_checks(opts, &mut rng, &mut checks);
    loss_checks(opts, &mut rng, &mut checks);
    chain_check(opts, &mut rng, &mut checks);
    reference_values(&mut checks);
    metric_checks(opts, &mut rng, &mut checks);
    VerifyReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions {
            points: 10,
            metric_instances: 50,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn quick_suite_passes() {
        let r = run_verify(&quick());
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn perturbed_gradient_reports_coordinate() {
        let opts = VerifyOptions {
            perturb: Some(Perturbation {
                check: "mlp/tanh/depth2/params".into(),
                coordinate: 3,
                delta: 0.5,
            }),
            ..quick()
        };
        let r = run_verify(&opts);
        let failed: Vec<_> = r.failures().collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].name, "mlp/tanh/depth2/params");
        assert!(failed[0].detail.contains("coordinate 3"), "{}", failed[0].detail);
        assert!(matches!(r.into_result(), Err(Error::Verification(_))));
    }
}
