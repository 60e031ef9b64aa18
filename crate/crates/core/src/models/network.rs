use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{Activation, AugmentedParams, GradientVector, Layout};
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::risk::{LossKind, RiskLevel};

/// `γ(λ) ⊙ z + β(λ)` with `γ = g0 + g1 λ` and `β = b0 + b1 λ`.
pub fn film_modulate(
    z: &[f64],
    lambda: RiskLevel,
    gamma: (&[f64], &[f64]),
    beta: (&[f64], &[f64]),
) -> Result<Vec<f64>> {
    let n = z.len();
    if [gamma.0.len(), gamma.1.len(), beta.0.len(), beta.1.len()].iter().any(|&l| l != n) {
        return Err(Error::Config(format!(
            "FiLM coefficients do not match activation width {n}"
        )));
    }
    let lam = lambda.value();
    Ok((0..n)
        .map(|i| (gamma.0[i] + gamma.1[i] * lam) * z[i] + beta.0[i] + beta.1[i] * lam)
        .collect())
}

fn activate(kind: Activation, z: f64) -> f64 {
    match kind {
        Activation::Identity => z,
        Activation::Relu => z.max(0.0),
        Activation::Tanh => z.tanh(),
    }
}

/// Derivative expressed through the pre-activation `z` and output `a`.
fn activate_derivative(kind: Activation, z: f64, a: f64) -> f64 {
    match kind {
        Activation::Identity => 1.0,
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - a * a,
    }
}

/// Values kept from the forward pass of one hidden layer.
struct LayerCache {
    /// Affine output before modulation.
    affine: Array2<f64>,
    /// Modulated pre-activation.
    modulated: Array2<f64>,
    /// Layer output.
    output: Array2<f64>,
    gamma: Option<Array1<f64>>,
}

struct Pass {
    layers: Vec<LayerCache>,
    outputs: Array1<f64>,
}

fn view_matrix<'a>(xi: &'a [f64], range: std::ops::Range<usize>, rows: usize, cols: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), &xi[range]).expect("layout ranges match shapes")
}

fn view_vector(xi: &[f64], range: std::ops::Range<usize>) -> ArrayView1<'_, f64> {
    ArrayView1::from(&xi[range])
}

fn check_finite(values: &Array2<f64>, layer: usize, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { layer, message: format!("non-finite {what}") })
    }
}

fn run_forward(model: &AugmentedParams, x: ArrayView2<'_, f64>, lambda: RiskLevel) -> Result<Pass> {
    let spec = model.spec();
    if x.ncols() != spec.input_dim {
        return Err(Error::Config(format!(
            "input has {} features, model expects {}",
            x.ncols(),
            spec.input_dim
        )));
    }
    let layout: Layout = spec.layout();
    let xi = model.xi();
    let lam = lambda.value();
    let mut layers: Vec<LayerCache> = Vec::with_capacity(layout.layers.len());
    for (k, l) in layout.layers.iter().enumerate() {
        let input = layers.last().map_or(x, |c: &LayerCache| c.output.view());
        let w = view_matrix(xi, l.weights.clone(), l.width, l.fan_in);
        let b = view_vector(xi, l.bias.clone());
        let affine = input.dot(&w.t()) + b;
        let (modulated, gamma) = match &l.film {
            Some(f) => {
                let gamma = &view_vector(xi, f.gamma0.clone()) + &(&view_vector(xi, f.gamma1.clone()) * lam);
                let beta = &view_vector(xi, f.beta0.clone()) + &(&view_vector(xi, f.beta1.clone()) * lam);
                (&affine * &gamma + &beta, Some(gamma))
            }
            None => (affine.clone(), None),
        };
        let output = modulated.mapv(|z| activate(spec.activation, z));
        check_finite(&output, k, "hidden activation")?;
        layers.push(LayerCache { affine, modulated, output, gamma });
    }
    let last = layers.last().map_or(x, |c| c.output.view());
    let head_w = view_vector(xi, layout.head_weights.clone());
    let outputs = last.dot(&head_w) + xi[layout.head_bias.start];
    if outputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            layer: layout.layers.len(),
            message: "non-finite model output".into(),
        });
    }
    Ok(Pass { layers, outputs })
}

pub(super) fn forward_one(model: &AugmentedParams, x: &[f64], lambda: RiskLevel) -> Result<f64> {
    let view = ArrayView2::from_shape((1, x.len()), x).expect("one row");
    Ok(run_forward(model, view, lambda)?.outputs[0])
}

pub(super) fn predict(model: &AugmentedParams, x: ArrayView2<'_, f64>, lambda: RiskLevel) -> Result<Vec<f64>> {
    Ok(run_forward(model, x, lambda)?.outputs.to_vec())
}

pub(super) fn mean_loss(
    model: &AugmentedParams,
    batch: &DomainDataset,
    lambda: RiskLevel,
    loss: LossKind,
) -> Result<f64> {
    let pass = run_forward(model, batch.features.view(), lambda)?;
    mean_of_losses(&pass, batch, loss, model.spec().hidden_layers.len())
}

fn mean_of_losses(pass: &Pass, batch: &DomainDataset, loss: LossKind, head_layer: usize) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let total: f64 = pass
        .outputs
        .iter()
        .zip(&batch.targets)
        .map(|(&p, &t)| loss.value(p, t))
        .sum();
    let mean = total / batch.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric { layer: head_layer, message: "non-finite loss".into() });
    }
    Ok(mean)
}

pub(super) fn loss_gradient(
    model: &AugmentedParams,
    batch: &DomainDataset,
    lambda: RiskLevel,
    loss: LossKind,
) -> Result<(f64, GradientVector)> {
    let spec = model.spec();
    let layout = spec.layout();
    let xi = model.xi();
    let lam = lambda.value();
    let x = batch.features.view();
    let pass = run_forward(model, x, lambda)?;
    let head_layer = layout.layers.len();
    let value = mean_of_losses(&pass, batch, loss, head_layer)?;

    let n = batch.len() as f64;
    let d_out: Array1<f64> = pass
        .outputs
        .iter()
        .zip(&batch.targets)
        .map(|(&p, &t)| loss.derivative(p, t) / n)
        .collect();

    let mut grad = vec![0.0; layout.total];
    let last = pass.layers.last().map_or(x, |c| c.output.view());
    let g_head = last.t().dot(&d_out);
    grad[layout.head_weights.clone()].copy_from_slice(g_head.as_slice().expect("contiguous"));
    grad[layout.head_bias.start] = d_out.sum();

    if !layout.layers.is_empty() {
        let head_w = view_vector(xi, layout.head_weights.clone());
        // n × width of the last hidden layer
        let mut d_hidden = d_out
            .view()
            .insert_axis(Axis(1))
            .dot(&head_w.insert_axis(Axis(0)));
        for k in (0..layout.layers.len()).rev() {
            let l = &layout.layers[k];
            let cache = &pass.layers[k];
            let mut d_mod = d_hidden;
            ndarray::Zip::from(&mut d_mod)
                .and(&cache.modulated)
                .and(&cache.output)
                .for_each(|d, &z, &a| *d *= activate_derivative(spec.activation, z, a));
            let d_affine = match (&l.film, &cache.gamma) {
                (Some(f), Some(gamma)) => {
                    let g_gamma = (&d_mod * &cache.affine).sum_axis(Axis(0));
                    let g_beta = d_mod.sum_axis(Axis(0));
                    for (i, (gg, gb)) in g_gamma.iter().zip(&g_beta).enumerate() {
                        grad[f.gamma0.start + i] = *gg;
                        grad[f.gamma1.start + i] = gg * lam;
                        grad[f.beta0.start + i] = *gb;
                        grad[f.beta1.start + i] = gb * lam;
                    }
                    d_mod * gamma
                }
                _ => d_mod,
            };
            check_finite(&d_affine, k, "gradient")?;
            let input = if k == 0 { x } else { pass.layers[k - 1].output.view() };
            let g_w = d_affine.t().dot(&input);
            grad[l.weights.clone()].copy_from_slice(g_w.as_slice().expect("standard layout"));
            let g_b = d_affine.sum_axis(Axis(0));
            grad[l.bias.clone()].copy_from_slice(g_b.as_slice().expect("contiguous"));
            if k > 0 {
                let w = view_matrix(xi, l.weights.clone(), l.width, l.fan_in);
                d_hidden = d_affine.dot(&w);
            } else {
                break;
            }
        }
    }

    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric { layer: head_layer, message: "non-finite gradient".into() });
    }
    Ok((value, GradientVector(grad)))
}

pub(super) fn min_abs_preactivation(
    model: &AugmentedParams,
    batch: &DomainDataset,
    lambda: RiskLevel,
) -> Result<Option<f64>> {
    let pass = run_forward(model, batch.features.view(), lambda)?;
    Ok(pass
        .layers
        .iter()
        .flat_map(|c| c.modulated.iter().map(|z| z.abs()))
        .reduce(f64::min))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use ndarray::{array, Array2};
    use rand::Rng;

    use super::*;
    use crate::models::{init_params, ArchitectureSpec, Hypothesis, OutputKind};
    use crate::risk::lambda_grid;
    use crate::rng::{stream, Purpose};

    fn dataset(x: Array2<f64>, y: Vec<f64>) -> DomainDataset {
        DomainDataset::new("d", x, y, BTreeMap::new()).unwrap()
    }

    fn lam(v: f64) -> RiskLevel {
        RiskLevel::new(v).unwrap()
    }

    #[test]
    fn film_modulate_examples() {
        let z = [2.0, -1.0];
        let id = film_modulate(&z, lam(0.7), (&[1.0, 1.0], &[0.0, 0.0]), (&[0.0, 0.0], &[0.0, 0.0])).unwrap();
        assert_eq!(id, z);
        let at_zero = film_modulate(&z, lam(0.0), (&[2.0, 3.0], &[9.0, 9.0]), (&[1.0, 1.0], &[9.0, 9.0])).unwrap();
        assert_eq!(at_zero, vec![5.0, -2.0]);
        let v = film_modulate(&[2.0], lam(0.5), (&[1.0], &[1.0]), (&[0.5], &[-0.5])).unwrap();
        assert_eq!(v, vec![3.25]);
        assert!(film_modulate(&z, lam(0.5), (&[1.0], &[1.0]), (&[0.5], &[-0.5])).is_err());
    }

    #[test]
    fn linear_forward_and_gradient() {
        let model = AugmentedParams::from_parts(ArchitectureSpec::linear(1), vec![2.0, 0.0]).unwrap();
        assert_eq!(model.forward(&[3.0], RiskLevel::AVERAGE).unwrap(), 6.0);
        assert!(model.forward(&[3.0, 1.0], RiskLevel::AVERAGE).is_err());

        let batch = dataset(array![[1.5]], vec![2.0]);
        let (value, g) = model.loss_gradient(&batch, RiskLevel::AVERAGE, LossKind::SquaredError).unwrap();
        assert_eq!(value, 1.0);
        assert_eq!(g.values()[0], 2.0 * (2.0 * 1.5 - 2.0) * 1.5);
        assert_eq!(g.values()[1], 2.0 * (2.0 * 1.5 - 2.0));
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let model = AugmentedParams::from_parts(ArchitectureSpec::linear(2), vec![1.0, -2.0, 0.5]).unwrap();
        let x = array![[1.0, 0.0], [0.3, 2.0], [-1.0, 4.0]];
        let y = x.rows().into_iter().map(|r| r[0] - 2.0 * r[1] + 0.5).collect();
        let (value, g) = model.loss_gradient(&dataset(x, y), RiskLevel::WORST, LossKind::SquaredError).unwrap();
        assert_eq!(value, 0.0);
        assert!(g.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_built_film_unit() {
        // x → w=0.8, b=0.1 → γ(λ)=1+λ, β=0 → tanh → head 1.5, bias -0.2
        let spec = ArchitectureSpec::mlp(1, vec![1], Activation::Tanh).with_film();
        let xi = vec![0.8, 0.1, 1.0, 1.0, 0.0, 0.0, 1.5, -0.2];
        let model = AugmentedParams::from_parts(spec, xi).unwrap();
        let x = 0.5;
        let pre: f64 = 0.8 * x + 0.1;
        let expected = 1.5 * (2.0 * pre).tanh() - 0.2;
        assert!((model.forward(&[x], RiskLevel::WORST).unwrap() - expected).abs() < 1e-15);
        let at_zero = 1.5 * pre.tanh() - 0.2;
        assert!((model.forward(&[x], RiskLevel::AVERAGE).unwrap() - at_zero).abs() < 1e-15);
    }

    #[test]
    fn identity_modulation_ignores_lambda() {
        let spec = ArchitectureSpec::mlp(3, vec![7, 4], Activation::Relu).with_film();
        let model = init_params(&spec, 11).unwrap();
        let x = [0.2, -0.4, 1.1];
        let base = model.forward(&x, RiskLevel::AVERAGE).unwrap();
        for l in lambda_grid(9) {
            assert_eq!(model.forward(&x, l).unwrap(), base);
        }
    }

    #[test]
    fn unconditioned_model_ignores_lambda() {
        let spec = ArchitectureSpec::mlp(2, vec![5], Activation::Tanh);
        let model = init_params(&spec, 4).unwrap();
        let batch = dataset(array![[0.1, 0.2], [1.0, -1.0]], vec![0.5, 1.0]);
        let a = model.loss_gradient(&batch, RiskLevel::AVERAGE, LossKind::SquaredError).unwrap();
        let b = model.loss_gradient(&batch, lam(0.6), LossKind::SquaredError).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn film_forward_is_lipschitz_on_grid() {
        let spec = ArchitectureSpec::mlp(2, vec![16, 16], Activation::Tanh).with_film();
        let mut model = init_params(&spec, 5).unwrap();
        let mut rng = stream(5, Purpose::Training, 0);
        for v in model.params_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        let x = [0.7, -0.3];
        let grid = lambda_grid(101);
        let outs: Vec<f64> = grid.iter().map(|&l| model.forward(&x, l).unwrap()).collect();
        let max_slope = outs.windows(2).map(|w| (w[1] - w[0]).abs() * 100.0).fold(0.0, f64::max);
        assert!(max_slope.is_finite() && max_slope < 1e3, "{max_slope}");
    }

    #[test]
    fn overflow_reports_layer() {
        let spec = ArchitectureSpec::mlp(1, vec![2], Activation::Identity);
        let mut model = init_params(&spec, 1).unwrap();
        model.params_mut()[0] = f64::MAX;
        let batch = dataset(array![[10.0]], vec![0.0]);
        match model.loss_gradient(&batch, RiskLevel::AVERAGE, LossKind::SquaredError) {
            Err(Error::Numeric { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn logit_output_uses_cross_entropy() {
        let spec = ArchitectureSpec::linear(1).with_output(OutputKind::Logit);
        let model = AugmentedParams::from_parts(spec, vec![0.0, 0.0]).unwrap();
        let batch = dataset(array![[1.0], [2.0]], vec![1.0, 0.0]);
        let v = model.mean_loss(&batch, RiskLevel::AVERAGE, LossKind::BinaryCrossEntropy).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
