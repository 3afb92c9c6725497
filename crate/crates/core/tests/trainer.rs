use fgan_core::checkpoint;
use fgan_core::data::sample_gaussian_2d;
use fgan_core::losses::{gan_generator_loss, generator_loss_fgan, CentroidGrad};
use fgan_core::optim::OptimizerSpec;
use fgan_core::trainer::*;
use fgan_core::*;

fn small_config(seed: u64) -> FganConfig {
    let mut c = FganConfig::gaussian_2d();
    c.seed = seed;
    c.epochs = 3;
    c.batch_size = 32;
    for net in [&mut c.generator, &mut c.discriminator] {
        for l in &mut net.layers {
            l.units = 16;
        }
    }
    c
}

fn data(seed: u64, n: usize) -> Matrix64 {
    let mut rng = RngState::new(seed);
    sample_gaussian_2d::<f64>(&mut rng, n, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
        .unwrap()
        .features
}

fn with_dropout(mut c: FganConfig) -> FganConfig {
    c.generator.layers[0].dropout = 0.2;
    c.discriminator.layers[1].dropout = 0.3;
    c
}

#[test]
fn generator_phase_leaves_discriminator_untouched() {
    let c = with_dropout(small_config(3));
    let mut st = TrainerState::<f64>::init(&c, 2).unwrap();
    run_epochs(&mut st, &c, &data(0, 64), 1, |_, _| {}).unwrap();
    let d_before = st.discriminator.params_to_vec();
    let g_before = st.generator.params_to_vec();
    generator_phase(&mut st, &c, 32).unwrap();
    assert_eq!(st.discriminator.params_to_vec(), d_before);
    assert_ne!(st.generator.params_to_vec(), g_before);
}

#[test]
fn discriminator_phase_leaves_generator_untouched() {
    let c = with_dropout(small_config(4));
    let mut st = TrainerState::<f64>::init(&c, 2).unwrap();
    let batch = data(1, 32);
    let d_before = st.discriminator.params_to_vec();
    let g_before = st.generator.params_to_vec();
    discriminator_phase(&mut st, &batch, &c).unwrap();
    assert_eq!(st.generator.params_to_vec(), g_before);
    assert_ne!(st.discriminator.params_to_vec(), d_before);
}

#[test]
fn zero_learning_rates_freeze_parameters() {
    let mut c = small_config(5);
    c.generator.optimizer = OptimizerSpec::adam(0.0, 0.0);
    c.discriminator.optimizer = OptimizerSpec::sgd(0.0, 0.0);
    let mut st = TrainerState::<f64>::init(&c, 2).unwrap();
    let fresh = st.clone();
    run_epochs(&mut st, &c, &data(2, 100), 2, |_, _| {}).unwrap();
    assert_eq!(st.generator.params_to_vec(), fresh.generator.params_to_vec());
    assert_eq!(st.discriminator.params_to_vec(), fresh.discriminator.params_to_vec());
    assert_ne!(st.rng, fresh.rng);
    assert_eq!(st.epoch, 2);
    assert_eq!(st.step, 2 * 4);
}

#[test]
fn recorded_generator_loss_matches_recomputation() {
    for variant in [LossVariant::Fgan, LossVariant::Vanilla] {
        let mut c = with_dropout(small_config(6));
        c.loss = variant;
        let mut st = TrainerState::<f64>::init(&c, 2).unwrap();
        run_epochs(&mut st, &c, &data(3, 64), 1, |_, _| {}).unwrap();
        let batch = data(4, 40);

        let mut replay = st.clone();
        let z = replay.sample_noise(&c, 40).unwrap();
        let (points, _) = replay.generator.forward(&z, Mode::Train, &mut replay.rng).unwrap();
        let (scores, _) = replay.discriminator.forward(&points, Mode::Train, &mut replay.rng).unwrap();
        let expected = match variant {
            LossVariant::Fgan => generator_loss_fgan(&scores, &points, c.alpha, c.beta, c.eps, CentroidGrad::Full),
            LossVariant::Vanilla => gan_generator_loss(&scores, c.eps),
        }
        .unwrap()
        .value;

        let report = train_step(&mut st, &batch, &c).unwrap();
        assert!((report.gen_loss - expected).abs() <= 1e-12, "{variant:?}: {} vs {expected}", report.gen_loss);
    }
}

#[test]
fn same_seed_same_parameters() {
    let c = with_dropout(small_config(7));
    let x = data(5, 150);
    let a = train(&c, &x, |_, _| {}).unwrap();
    let b = train(&c, &x, |_, _| {}).unwrap();
    assert_eq!(a, b);
    let other = train(&FganConfig { seed: 8, ..c }, &x, |_, _| {}).unwrap();
    assert_ne!(a.generator.params_to_vec(), other.generator.params_to_vec());
}

#[test]
fn history_has_one_finite_row_per_epoch() {
    let c = small_config(9);
    let st = train_baseline_gan(&c, &data(6, 100), |_, _| {}).unwrap();
    assert_eq!(st.history.len(), 3);
    assert!(st.history.iter().all(|r| r.gen_loss.is_finite() && r.disc_loss.is_finite()));
    assert_eq!(st.history.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
}

#[test]
fn vanilla_mode_ignores_gamma() {
    let x = data(7, 100);
    let mut c = small_config(10);
    c.loss = LossVariant::Vanilla;
    c.gamma = 0.3;
    let a = train(&c, &x, |_, _| {}).unwrap();
    c.gamma = 1.0;
    let b = train(&c, &x, |_, _| {}).unwrap();
    assert_eq!(a, b);
}

#[test]
fn snapshot_restore_continues_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let c = with_dropout(small_config(11));
    let x = data(8, 90);

    let mut straight = TrainerState::<f64>::init(&c, 2).unwrap();
    run_epochs(&mut straight, &c, &x, 5, |_, _| {}).unwrap();

    let mut first = TrainerState::<f64>::init(&c, 2).unwrap();
    run_epochs(&mut first, &c, &x, 2, |_, _| {}).unwrap();
    let path = dir.path().join("mid.ckpt");
    checkpoint::snapshot(&first, &c, &path).unwrap();
    drop(first);
    let (mut resumed, c2) = checkpoint::restore::<f64>(&path).unwrap();
    assert_eq!(c2, c);
    run_epochs(&mut resumed, &c2, &x, 3, |_, _| {}).unwrap();

    assert_eq!(resumed.generator, straight.generator, "generator");
    assert_eq!(resumed.discriminator, straight.discriminator, "discriminator");
    assert_eq!(resumed.gen_opt, straight.gen_opt, "gen_opt");
    assert_eq!(resumed.disc_opt, straight.disc_opt, "disc_opt");
    assert_eq!(resumed.rng, straight.rng, "rng");
    assert_eq!(resumed.history, straight.history, "history");
    assert_eq!(resumed, straight);
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(resumed.generator.params_to_vec()), bits(straight.generator.params_to_vec()));
}

#[test]
fn fresh_state_round_trips_and_truncation_fails() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_config(12);
    let st = TrainerState::<f64>::init(&c, 2).unwrap();
    let path = dir.path().join("fresh.ckpt");
    checkpoint::snapshot(&st, &c, &path).unwrap();
    let (back, _) = checkpoint::restore::<f64>(&path).unwrap();
    assert_eq!(back, st);

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert!(checkpoint::restore::<f64>(&cut).is_err());
}

#[test]
fn encirclement_and_minimax_agree_in_sign_near_one() {
    // γ=1, β=0, α→1: both generator objectives push scores toward 1.
    let eps = 1e-7;
    let alpha = 1.0 - 1e-6;
    let mut rng = RngState::new(13);
    for _ in 0..200 {
        let s: Vec<f64> = (0..8).map(|_| rng.uniform_range(0.01, 0.99)).collect();
        let m = Matrix64::column(s).unwrap();
        let pts = Matrix64::sample_standard_normal(&mut rng, 8, 2).unwrap();
        let f = generator_loss_fgan(&m, &pts, alpha, 0.0, eps, CentroidGrad::Full).unwrap();
        let g = gan_generator_loss(&m, eps).unwrap();
        for (a, b) in f.grad_scores.unwrap().as_slice().iter().zip(g.grad_scores.unwrap().as_slice()) {
            assert_eq!(a.signum(), b.signum());
        }
    }
}

#[test]
fn float32_training_runs() {
    let c = small_config(14);
    let x: Matrix32 = data(9, 64).cast();
    let st = train(&c, &x, |_, _| {}).unwrap();
    assert_eq!(st.history.len(), 3);
    assert!(st.generator.params_to_vec().iter().all(|v| v.is_finite()));
}
