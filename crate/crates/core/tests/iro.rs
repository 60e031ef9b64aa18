use std::collections::BTreeMap;

use iro_core::data::{gen_synthetic, DomainDataset};
use iro_core::error::Result;
use iro_core::iro::{
    fit_beta_q, inner_objective, iro_optimize, iro_train, lambda_gradient, mc_scalarized_gradient,
    min_norm_simplex, pareto_stationarity_residual, plf_train, plh_train, scalarized_objective, IroConfig,
    PlfTarget,
};
use iro_core::lambda_dist::BetaParams;
use iro_core::models::{init_params, Activation, ArchitectureSpec, AugmentedParams, GradientVector, Hypothesis};
use iro_core::risk::{cvar, lambda_grid, risk_profile, LossKind, RiskLevel, RiskMeasure, RiskProfile};
use iro_core::rng::{stream, Purpose};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn lam(v: f64) -> RiskLevel {
    RiskLevel::new(v).unwrap()
}

fn domain(id: &str, xs: &[f64], ys: &[f64]) -> DomainDataset {
    let x = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap();
    DomainDataset::new(id, x, ys.to_vec(), BTreeMap::new()).unwrap()
}

fn linear(slope: f64, intercept: f64) -> AugmentedParams {
    AugmentedParams::from_parts(ArchitectureSpec::linear(1), vec![slope, intercept]).unwrap()
}

const SE: LossKind = LossKind::SquaredError;

/// Three domains on `y = 2x + 1` with residuals orthogonal to `(1, x)`, so
/// every domain risk is minimised by the same line.
fn shared_optimum_domains() -> Vec<DomainDataset> {
    let xs = [-1.0, 0.0, 1.0];
    [0.1, 0.5, 0.9]
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let ys: Vec<f64> = xs.iter().zip([1.0, -2.0, 1.0]).map(|(x, e)| 2.0 * x + 1.0 + c * e).collect();
            domain(&format!("d{k}"), &xs, &ys)
        })
        .collect()
}

#[test]
fn objective_with_one_level_is_the_cvar() {
    let domains = shared_optimum_domains();
    let model = linear(1.0, 0.0);
    let l = lam(0.4);
    let single = scalarized_objective(&model, &domains, &[l], RiskMeasure::Cvar, SE).unwrap();
    let expected = cvar(&risk_profile(&model, &domains, l, SE).unwrap(), l);
    assert_eq!(single, expected);
    let repeated = scalarized_objective(&model, &domains, &[l, l, l], RiskMeasure::Cvar, SE).unwrap();
    assert!((repeated - single).abs() < 1e-15);
}

#[test]
fn objective_by_hand_for_two_domains() {
    // θ = 1, b = 0; domain a: x = 1, y = 3 → risk 4; domain b: x = 2, y = 1 → risk 1
    let domains = vec![domain("a", &[1.0], &[3.0]), domain("b", &[2.0], &[1.0])];
    let model = linear(1.0, 0.0);
    let v = scalarized_objective(&model, &domains, &[lam(0.0), lam(0.5)], RiskMeasure::Cvar, SE).unwrap();
    // mean = 2.5; CVaR at 0.5 with two domains = max = 4
    assert!((v - (2.5 + 4.0) / 2.0).abs() < 1e-12);
}

#[test]
fn gradient_vanishes_at_a_common_optimum() {
    let domains = shared_optimum_domains();
    let g = mc_scalarized_gradient(&linear(2.0, 1.0), &domains, &[lam(0.1), lam(0.9)], RiskMeasure::Cvar, SE).unwrap();
    assert!(g.norm() < 1e-14, "{g:?}");
}

#[test]
fn single_domain_gradient_is_the_loss_gradient() {
    let d = vec![domain("a", &[0.5, 1.5, -1.0], &[1.0, 2.0, 0.0])];
    let model = linear(0.3, -0.2);
    let g = mc_scalarized_gradient(&model, &d, &[lam(0.7)], RiskMeasure::Cvar, SE).unwrap();
    let (_, direct) = model.loss_gradient(&d[0], lam(0.7), SE).unwrap();
    for (a, b) in g.values().iter().zip(direct.values()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn gradient_matches_finite_differences_away_from_ties() {
    let domains = vec![
        domain("a", &[0.0, 1.0, 2.0], &[0.5, 1.0, 2.5]),
        domain("b", &[-1.0, 0.5, 1.0], &[2.0, -1.0, 0.3]),
        domain("c", &[1.0, 3.0], &[-2.0, 4.0]),
    ];
    let model = linear(0.4, 0.2);
    let lambdas = [lam(0.0), lam(0.45), lam(0.8)];
    for measure in [RiskMeasure::Cvar, RiskMeasure::CvarVrex] {
        let analytic = mc_scalarized_gradient(&model, &domains, &lambdas, measure, SE).unwrap();
        for i in 0..2 {
            let h = 1e-6;
            let mut up = model.clone();
            up.params_mut()[i] += h;
            let mut down = model.clone();
            down.params_mut()[i] -= h;
            let numeric = (scalarized_objective(&up, &domains, &lambdas, measure, SE).unwrap()
                - scalarized_objective(&down, &domains, &lambdas, measure, SE).unwrap())
                / (2.0 * h);
            let a = analytic.values()[i];
            assert!((a - numeric).abs() <= 1e-5 * a.abs().max(1.0), "{measure:?} {i}: {a} vs {numeric}");
        }
    }
}

fn dominance_holds(gradients: &[GradientVector]) -> bool {
    let r = min_norm_simplex(gradients).unwrap();
    let vv = r.direction.dot(&r.direction);
    gradients.iter().all(|g| r.direction.dot(g) >= vv - 1e-8 * vv.max(1.0))
}

fn random_bundle(seed: u64) -> Vec<GradientVector> {
    let mut rng = stream(seed, Purpose::Training, 0);
    let k = rng.random_range(1..=10);
    let dim = rng.random_range(1..=50);
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    (0..k)
        .map(|_| GradientVector((0..dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect()))
        .collect()
}

#[test]
fn min_norm_dominance_on_random_bundles() {
    for seed in 0..500 {
        let bundle = random_bundle(seed);
        assert!(dominance_holds(&bundle), "seed {seed}");
    }
}

#[test]
fn min_norm_matches_brute_force_grid() {
    let mut rng = stream(2, Purpose::Training, 1);
    for _ in 0..50 {
        let k = rng.random_range(2..=3);
        let gradients: Vec<GradientVector> = (0..k)
            .map(|_| GradientVector((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let solved = min_norm_simplex(&gradients).unwrap().norm();
        let n = 400;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            for j in 0..=(if k == 3 { n - i } else { 0 }) {
                let q0 = i as f64 / n as f64;
                let q1 = if k == 3 { j as f64 / n as f64 } else { 1.0 - q0 };
                let q2 = 1.0 - q0 - q1;
                let mut v = GradientVector::zeros(4);
                v.add_scaled(q0, &gradients[0]);
                v.add_scaled(q1, &gradients[1]);
                if k == 3 {
                    v.add_scaled(q2, &gradients[2]);
                }
                best = best.min(v.norm());
            }
        }
        assert!(solved <= best + 1e-12, "{solved} > {best}");
        assert!(best - solved < 1e-2, "grid too coarse? {best} vs {solved}");
    }
}

proptest! {
    #[test]
    fn min_norm_is_permutation_and_duplication_invariant(seed in 0u64..10_000, shift in 0usize..10) {
        let bundle = random_bundle(seed);
        let base = min_norm_simplex(&bundle).unwrap();
        let mut rotated = bundle.clone();
        let len = rotated.len();
        rotated.rotate_left(shift % len);
        rotated.push(bundle[0].clone());
        let other = min_norm_simplex(&rotated).unwrap();
        let tol = 1e-6 * base.direction.norm().max(1.0);
        for (a, b) in base.direction.values().iter().zip(other.direction.values()) {
            prop_assert!((a - b).abs() <= tol);
        }
    }
}

#[test]
fn stationarity_residual_examples() {
    let domains = shared_optimum_domains();
    let grid = lambda_grid(5);
    let at_opt = pareto_stationarity_residual(&linear(2.0, 1.0), &domains, &grid, RiskMeasure::Cvar, SE).unwrap();
    assert!(at_opt < 1e-14);
    assert!(pareto_stationarity_residual(&linear(2.0, 1.0), &domains, &grid[..1], RiskMeasure::Cvar, SE).is_err());
}

/// One domain whose loss is `10 + (2λ − 1) ξ₀ + 0 · ξ₁`, so the gradient at
/// level λ is `(2λ − 1, 0)`.
#[derive(Clone)]
struct SignToy(Vec<f64>);

impl Hypothesis for SignToy {
    fn params(&self) -> &[f64] {
        &self.0
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
    fn is_conditioned(&self) -> bool {
        true
    }
    fn mean_loss(&self, _: &DomainDataset, lambda: RiskLevel, _: LossKind) -> Result<f64> {
        Ok(10.0 + (2.0 * lambda.value() - 1.0) * self.0[0])
    }
    fn loss_gradient(&self, d: &DomainDataset, lambda: RiskLevel, loss: LossKind) -> Result<(f64, GradientVector)> {
        Ok((self.mean_loss(d, lambda, loss)?, GradientVector(vec![2.0 * lambda.value() - 1.0, 0.0])))
    }
}

#[test]
fn beta_fit_balances_opposing_levels() {
    let toy = SignToy(vec![0.0, 0.0]);
    let domains = vec![domain("only", &[0.0], &[0.0])];
    let mut rng = stream(4, Purpose::Training, 0);
    let uniforms = iro_core::lambda_dist::draw_uniforms(&mut rng, 200);
    let config = IroConfig { inner_steps: 300, inner_step_size: 5.0, ..IroConfig::default() };
    let init = BetaParams::new(5.0, 1.0).unwrap();
    let objective = |p| inner_objective(&toy, &domains, p, &uniforms, &config).unwrap();
    assert_eq!(objective(init), objective(init));

    let fitted = fit_beta_q(&toy, &domains, init, &config, &uniforms).unwrap();
    assert!((fitted.alpha() - fitted.beta()).abs() < 4.0, "{fitted:?}");

    let mut grid_best = f64::INFINITY;
    for i in 1..=50 {
        for j in 1..=50 {
            let p = BetaParams::new(0.05 + 4.95 * i as f64 / 50.0, 0.05 + 4.95 * j as f64 / 50.0).unwrap();
            grid_best = grid_best.min(objective(p));
        }
    }
    assert!(objective(fitted) <= grid_best + 0.02, "{} vs {grid_best}", objective(fitted));
    assert!(objective(fitted) < 0.1 * objective(init));
}

#[test]
fn beta_fit_keeps_start_when_already_stationary() {
    let domains = shared_optimum_domains();
    let model = linear(2.0, 1.0);
    let init = BetaParams::new(3.0, 0.7).unwrap();
    let uniforms = [0.1, 0.5, 0.9];
    assert_eq!(fit_beta_q(&model, &domains, init, &IroConfig::default(), &uniforms).unwrap(), init);
}

#[test]
fn iro_on_one_domain_recovers_least_squares() {
    let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
    let ys = [1.1, 2.9, 5.2, 6.8, 9.1];
    let d = vec![domain("only", &xs, &ys)];
    let n = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;

    let config = IroConfig { eta: 0.05, max_outer_steps: 5000, epsilon_stop: 1e-8, m: 2, m_prime: 2, inner_steps: 0, ..IroConfig::default() };
    let (model, trace) = iro_train(&ArchitectureSpec::linear(1), &d, &config).unwrap();
    assert!((model.xi()[0] - slope).abs() < 1e-3 && (model.xi()[1] - intercept).abs() < 1e-3, "{:?}", model.xi());
    assert!(trace.records.last().unwrap().grad_norm <= 1e-8);
}

fn small_synthetic() -> (Vec<DomainDataset>, ArchitectureSpec, IroConfig) {
    let domains = gen_synthetic(8, 30, 3).unwrap();
    let spec = ArchitectureSpec::mlp(1, vec![6], Activation::Tanh).with_film();
    let config = IroConfig { max_outer_steps: 40, m: 6, m_prime: 6, inner_steps: 2, eta: 0.05, seed: 9, batch_size: Some(20), ..IroConfig::default() };
    (domains, spec, config)
}

#[test]
fn iro_is_deterministic_and_improves_grid_risks() {
    let (domains, spec, config) = small_synthetic();
    let (a, ta) = iro_train(&spec, &domains, &config).unwrap();
    let (b, tb) = iro_train(&spec, &domains, &config).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(a.xi().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.xi().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(ta.records.len(), 40);
    for (init, last) in ta.initial_risks.iter().zip(ta.final_risks()) {
        assert!(last <= &(init + 1e-3), "{init} -> {last}");
    }
}

#[test]
fn iro_converges_on_a_shared_optimum() {
    let domains = shared_optimum_domains();
    let config = IroConfig { eta: 0.1, max_outer_steps: 3000, m: 4, m_prime: 4, inner_steps: 1, ..IroConfig::default() };
    let (model, trace) = iro_optimize(linear(0.0, 0.0), &domains, &config).unwrap();
    assert!(trace.records.len() < 3000);
    let residual = pareto_stationarity_residual(&model, &domains, &lambda_grid(11), RiskMeasure::Cvar, SE).unwrap();
    assert!(residual < 10.0 * config.epsilon_stop, "{residual}");
}

#[test]
fn zero_mean_pair_has_zero_residual() {
    // gradients at λ = 0 and λ = 1 are opposite for the toy
    let toy = SignToy(vec![0.0, 0.0]);
    let domains = vec![domain("only", &[0.0], &[0.0])];
    let r = pareto_stationarity_residual(&toy, &domains, &[lam(0.0), lam(1.0)], RiskMeasure::Cvar, SE).unwrap();
    assert_eq!(r, 0.0);
}

#[test]
fn precise_learner_at_zero_is_pooled_erm() {
    // equal-sized domains: the mean of domain means is the pooled mean
    let domains = vec![domain("a", &[1.0, 2.0], &[1.0, 3.0]), domain("b", &[0.0, 3.0], &[0.5, 5.0])];
    let config = IroConfig { eta: 0.05, max_outer_steps: 20_000, epsilon_stop: 1e-10, ..IroConfig::default() };
    let model = plf_train(linear(0.0, 0.0), &domains, PlfTarget::Fixed(RiskLevel::AVERAGE), &config).unwrap();
    let pooled = domain("p", &[1.0, 2.0, 0.0, 3.0], &[1.0, 3.0, 0.5, 5.0]);
    let (_, g) = model.loss_gradient(&pooled, RiskLevel::AVERAGE, SE).unwrap();
    assert!(g.norm() < 1e-8);
}

#[test]
fn precise_learner_at_one_minimises_the_worst_domain() {
    let domains = vec![domain("a", &[1.0, -1.0], &[2.0, -2.0]), domain("b", &[1.0, -1.0], &[-0.5, 0.5])];
    let config = IroConfig { eta: 0.01, max_outer_steps: 20_000, epsilon_stop: 1e-12, ..IroConfig::default() };
    let model = plf_train(linear(0.0, 0.0), &domains, PlfTarget::Fixed(RiskLevel::WORST), &config).unwrap();
    let worst = |m: &AugmentedParams| {
        let p: RiskProfile = risk_profile(m, &domains, RiskLevel::WORST, SE).unwrap();
        p.risks().iter().cloned().fold(0.0, f64::max)
    };
    let mut best = f64::INFINITY;
    for i in 0..=400 {
        for j in 0..=40 {
            let m = linear(-1.0 + 4.0 * i as f64 / 400.0, -1.0 + 2.0 * j as f64 / 40.0);
            best = best.min(worst(&m));
        }
    }
    // subgradient steps chatter around the tie
    assert!(worst(&model) <= best + 0.05, "{} vs {best}", worst(&model));
    assert!((model.xi()[0] - 0.75).abs() < 0.05);
}

#[test]
fn baselines_check_conditioning_and_are_deterministic() {
    let (domains, spec, config) = small_synthetic();
    let film = init_params(&spec, 1).unwrap();
    let plain = init_params(&spec.precise(), 1).unwrap();
    assert!(plf_train(film.clone(), &domains, PlfTarget::UniformResample, &config).is_err());
    assert!(plh_train(plain.clone(), &domains, BetaParams::UNIFORM, &config).is_err());
    let a = plh_train(film.clone(), &domains, BetaParams::UNIFORM, &config).unwrap();
    assert_eq!(a, plh_train(film, &domains, BetaParams::UNIFORM, &config).unwrap());
    let b = plf_train(plain.clone(), &domains, PlfTarget::UniformResample, &config).unwrap();
    assert_eq!(b, plf_train(plain, &domains, PlfTarget::UniformResample, &config).unwrap());
}

#[test]
fn fixed_level_descent_decreases_a_convex_objective() {
    // residuals orthogonal to (1, x) with very different sizes keep the
    // domain ranking fixed along the path, so the objective stays smooth
    let xs = [-1.0, 0.0, 1.0, 2.0];
    let e = [1.0, -1.0, -1.0, 1.0];
    let domains: Vec<DomainDataset> = [(1.0, 0.1), (-1.0, 2.0), (0.5, 5.0)]
        .iter()
        .enumerate()
        .map(|(k, (slope, noise))| {
            let ys: Vec<f64> = xs.iter().zip(e).map(|(x, e)| slope * x + noise * e).collect();
            domain(&format!("d{k}"), &xs, &ys)
        })
        .collect();
    let lambdas = [lam(0.2), lam(0.6)];
    let mut model = linear(0.0, 0.0);
    let config = IroConfig { eta: 0.01, max_outer_steps: 1, ..IroConfig::default() };
    let mut previous = scalarized_objective(&model, &domains, &lambdas, RiskMeasure::Cvar, SE).unwrap();
    for _ in 0..300 {
        model = iro_core::iro::scalarized_descent(model, &domains, &lambdas, &config).unwrap();
        let value = scalarized_objective(&model, &domains, &lambdas, RiskMeasure::Cvar, SE).unwrap();
        assert!(value <= previous + 1e-6, "{previous} -> {value}");
        previous = value;
    }
}

#[test]
fn lambda_gradient_weights_are_frozen_cvar_weights() {
    let domains = vec![domain("a", &[1.0], &[3.0]), domain("b", &[1.0], &[1.5])];
    let model = linear(1.0, 0.0);
    let (value, g) = lambda_gradient(&model, &domains, RiskLevel::WORST, RiskMeasure::Cvar, SE).unwrap();
    assert_eq!(value, 4.0);
    assert_eq!(g.values(), &[-4.0, -4.0]);
}
