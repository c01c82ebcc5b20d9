use rand::Rng;
use tumorgrowth::models::{loss, loss_and_grad, DynamicsModel, TrainConfig};
use tumorgrowth::neuralnet::{init_params, seeded_rng, MlpArch};

/// Sigmoid-shaped normalized targets on 11 points, so a 10-step solve lands
/// on every target.
fn data() -> Vec<(f64, f64)> {
    (0..=10)
        .map(|i| {
            let t = i as f64 / 10.0;
            (t, 0.02 + 0.98 / (1.0 + (-8.0 * (t - 0.5)).exp()))
        })
        .collect()
}

fn ten_steps() -> TrainConfig {
    TrainConfig {
        solver_steps: 10,
        ..TrainConfig::neural_ode()
    }
}

/// Largest per-coordinate relative difference between the tape gradient and
/// central differences with h = 1e-5.
fn max_rel_error(model: &DynamicsModel, coords: &[usize]) -> f64 {
    let d = data();
    let cfg = ten_steps();
    let (_, g) = loss_and_grad(model, &d, &cfg).unwrap();
    let theta = model.flatten();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &i in coords {
        let mut up = theta.clone();
        up[i] += h;
        let mut dn = theta.clone();
        dn[i] -= h;
        let fd = (loss(&model.with_params(&up), &d, &cfg).unwrap() - loss(&model.with_params(&dn), &d, &cfg).unwrap())
            / (2.0 * h);
        let denom = g[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((g[i] - fd).abs() / denom);
    }
    worst
}

#[test]
fn neural_ode_gradient_matches_finite_differences_over_twenty_seeds() {
    let arch = MlpArch::new(vec![1, 10, 10, 1]).unwrap();
    for seed in 0..20 {
        let model = DynamicsModel::neural_ode(init_params(&arch, seed)).unwrap();
        let all: Vec<usize> = (0..arch.param_count()).collect();
        let err = max_rel_error(&model, &all);
        assert!(err < 1e-5, "seed {seed}: max relative error {err}");
    }
}

#[test]
fn ude_gradient_matches_finite_differences_at_random_points() {
    let arch = MlpArch::new(vec![1, 10, 10, 1]).unwrap();
    let mut rng = seeded_rng(99);
    for seed in 0..5 {
        let model = DynamicsModel::ude(init_params(&arch, 2 * seed), init_params(&arch, 2 * seed + 1)).unwrap();
        let coords: Vec<usize> = (0..40).map(|_| rng.gen_range(0..2 * arch.param_count())).collect();
        let err = max_rel_error(&model, &coords);
        assert!(err < 1e-5, "point {seed}: max relative error {err}");
    }
}

#[test]
fn gompertz_gradient_matches_finite_differences() {
    let model = DynamicsModel::Gompertz(tumorgrowth::odeint::GompertzParams::new(1.7, 1.4).unwrap());
    assert!(max_rel_error(&model, &[0, 1]) < 1e-5);
}
