use dirwrap::numerics::ProbabilityVector;
use dirwrap::parallel::Execution;
use dirwrap::wrapper::{train_wrapper, train_wrapper_with, TrainConfig, TrainingExample, WrapperModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random features, noisy black-box outputs and labels that agree with the
/// black box about two times in three.
fn dataset(n: usize, seed: u64) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let features: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
            let y = ProbabilityVector::from_weights(&w).unwrap();
            let label = if rng.random_bool(2.0 / 3.0) { y.argmax() } else { rng.random_range(0..3) };
            TrainingExample::new(format!("w{i}"), features, label, y).unwrap()
        })
        .collect()
}

fn mean_beta(model: &WrapperModel, data: &[TrainingExample]) -> f64 {
    data.iter().map(|e| model.beta(&e.features).unwrap()).sum::<f64>() / data.len() as f64
}

fn small(lambda: f64) -> TrainConfig {
    TrainConfig {
        epochs: 20,
        batch_size: 10,
        lr: 1e-2,
        m_train: 8,
        lambda,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn heavy_regularization_pins_beta_to_floor() {
    let data = dataset(50, 1);
    // 40 epochs of 5 batches: 200 Adam steps
    let cfg = TrainConfig {
        epochs: 40,
        ..small(1e3)
    };
    let out = train_wrapper(&data, &cfg).unwrap();
    let max = data.iter().map(|e| out.model.beta(&e.features).unwrap()).fold(0.0, f64::max);
    assert!(max < cfg.beta_min + 0.1, "max beta {max}");
}

#[test]
fn mean_beta_falls_as_lambda_grows() {
    let data = dataset(50, 2);
    let betas: Vec<f64> = [0.0, 0.01, 1.0, 100.0]
        .iter()
        .map(|&l| mean_beta(&train_wrapper(&data, &small(l)).unwrap().model, &data))
        .collect();
    assert!(betas.windows(2).all(|w| w[1] <= w[0]), "{betas:?}");
    assert!(betas[3] < betas[0]);
}

#[test]
fn training_is_bitwise_deterministic() {
    let data = dataset(40, 3);
    let a = train_wrapper(&data, &small(1e-2)).unwrap();
    let b = train_wrapper(&data, &small(1e-2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
}

#[cfg(feature = "parallel")]
#[test]
fn parallel_and_sequential_agree_bitwise() {
    let data = dataset(40, 4);
    let cfg = small(1e-2);
    let par = train_wrapper_with(&data, &cfg, Execution::Parallel).unwrap();
    let seq = train_wrapper_with(&data, &cfg, Execution::Sequential).unwrap();
    assert_eq!(par, seq);
}

#[test]
fn full_batch_training_ignores_dataset_order() {
    let data = dataset(30, 5);
    let mut reversed = data.clone();
    reversed.reverse();
    let cfg = TrainConfig {
        batch_size: 64,
        ..small(1e-2)
    };
    let a = train_wrapper_with(&data, &cfg, Execution::Sequential).unwrap();
    let b = train_wrapper_with(&reversed, &cfg, Execution::Sequential).unwrap();
    // only the summation order differs
    for (x, y) in a.loss_trace.iter().zip(&b.loss_trace) {
        assert!((x - y).abs() < 1e-9 * x.abs(), "{x} vs {y}");
    }
    for e in &data {
        let (p, q) = (a.model.beta(&e.features).unwrap(), b.model.beta(&e.features).unwrap());
        assert!((p - q).abs() < 1e-8 * p, "{p} vs {q}");
    }
}

#[test]
fn confident_correct_data_raises_beta_without_penalty() {
    // near one-hot outputs that are always right: a sharper Dirichlet only
    // helps, so with default training mean β ends above its starting value
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let data: Vec<TrainingExample> = (0..100)
            .map(|i| {
                let label = rng.random_range(0..3);
                let mut p = vec![0.01; 3];
                p[label] = 0.98;
                let features: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
                TrainingExample::new(format!("c{i}"), features, label, ProbabilityVector::new(p).unwrap()).unwrap()
            })
            .collect();
        let cfg = TrainConfig {
            lambda: 0.0,
            seed,
            ..TrainConfig::default()
        };
        let initial = mean_beta(&WrapperModel::new(4, &cfg).unwrap(), &data);
        let trained = mean_beta(&train_wrapper(&data, &cfg).unwrap().model, &data);
        assert!(trained > initial, "seed {seed}: initial {initial}, trained {trained}");
    }
}

#[test]
fn loss_trace_has_one_entry_per_epoch() {
    let data = dataset(25, 7);
    let out = train_wrapper(&data, &small(1e-2)).unwrap();
    assert_eq!(out.loss_trace.len(), 20);
    assert!(out.loss_trace.iter().all(|l| l.is_finite() && *l > 0.0));
}
