use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::GradientVector;

pub const MIN_NORM_MAX_ITER: usize = 500;
/// Target duality gap of the simplex problem.
pub const MIN_NORM_TOLERANCE: f64 = 1e-10;

/// Minimum-norm point of the convex hull of a set of gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MinNorm {
    /// Simplex weights, one per input gradient.
    pub weights: Vec<f64>,
    /// `Σ weights[i] · gradients[i]`
    pub direction: GradientVector,
    /// Frank–Wolfe duality gap `‖v‖² − min_i v·g_i` at termination.
    pub gap: f64,
    pub iterations: usize,
}

impl MinNorm {
    pub fn norm(&self) -> f64 {
        self.direction.norm()
    }
}

/// Solves `min_q ‖Σ q_i g_i‖²` over the simplex with Wolfe's nearest-point
/// method on the Gram matrix. Each major step adds the Frank–Wolfe vertex
/// (the gradient with the smallest inner product with the current point) to
/// an active set; minor steps move to the affine minimiser of the active set,
/// dropping vertices whose weight would turn negative. Unlike plain
/// Frank–Wolfe this terminates with an exact solution, which the dominance
/// inequality `v·g_i ≥ ‖v‖²` needs.
pub fn min_norm_simplex(gradients: &[GradientVector]) -> Result<MinNorm> {
    let k = gradients.len();
    let dim = gradients
        .first()
        .ok_or_else(|| Error::Config("min-norm solver needs at least one gradient".into()))?
        .len();
    if gradients.iter().any(|g| g.len() != dim) {
        return Err(Error::Config("gradients must share one length".into()));
    }
    if gradients.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric { layer: 0, message: "non-finite gradient in min-norm problem".into() });
    }
    let gram = DMatrix::from_fn(k, k, |i, j| gradients[i].dot(&gradients[j]));
    if (0..k).all(|i| gram[(i, i)] == 0.0) {
        return Ok(MinNorm {
            weights: vec![1.0 / k as f64; k],
            direction: GradientVector::zeros(dim),
            gap: 0.0,
            iterations: 0,
        });
    }

    let start = (0..k).min_by(|&a, &b| gram[(a, a)].total_cmp(&gram[(b, b)])).expect("non-empty");
    let mut q = vec![0.0; k];
    q[start] = 1.0;
    let mut active = vec![start];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MIN_NORM_MAX_ITER {
        let gq: Vec<f64> = (0..k).map(|i| (0..k).map(|j| gram[(i, j)] * q[j]).sum()).collect();
        let quad: f64 = (0..k).map(|i| q[i] * gq[i]).sum();
        let toward = (0..k).min_by(|&a, &b| gq[a].total_cmp(&gq[b])).expect("non-empty");
        gap = quad - gq[toward];
        if gap <= MIN_NORM_TOLERANCE * quad.max(1.0) || active.contains(&toward) {
            break;
        }
        iterations += 1;
        active.push(toward);
        loop {
            let Some(affine) = affine_minimiser(&gram, &active) else {
                // degenerate active set: keep the current point
                active.retain(|&i| q[i] > 0.0);
                break;
            };
            if affine.iter().all(|&a| a > 0.0) {
                for (&i, &a) in active.iter().zip(&affine) {
                    q[i] = a;
                }
                break;
            }
            // walk from q toward the affine minimiser until a weight hits zero
            let theta = active
                .iter()
                .zip(&affine)
                .filter(|(_, &a)| a <= 0.0)
                .map(|(&i, &a)| q[i] / (q[i] - a))
                .fold(1.0, f64::min);
            for (&i, &a) in active.iter().zip(&affine) {
                q[i] = (1.0 - theta) * q[i] + theta * a;
                if q[i] <= 1e-15 {
                    q[i] = 0.0;
                }
            }
            active.retain(|&i| q[i] > 0.0);
        }
    }
    q.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);
    let mut direction = GradientVector::zeros(dim);
    for (g, &w) in gradients.iter().zip(&q) {
        if w != 0.0 {
            direction.add_scaled(w, g);
        }
    }
    Ok(MinNorm { weights: q, direction, gap: gap.max(0.0), iterations })
}

/// Weights summing to one that minimise the norm over the affine hull of
/// `active`, from the KKT system `[G 1; 1ᵀ 0] [a; μ] = [0; 1]`.
fn affine_minimiser(gram: &DMatrix<f64>, active: &[usize]) -> Option<Vec<f64>> {
    let n = active.len();
    let scale = active.iter().map(|&i| gram[(i, i)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let system = DMatrix::from_fn(n + 1, n + 1, |r, c| match (r < n, c < n) {
        (true, true) => gram[(active[r], active[c])] / scale,
        (false, false) => 0.0,
        _ => 1.0,
    });
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let solution = system.lu().solve(&rhs)?;
    let weights: Vec<f64> = solution.iter().take(n).copied().collect();
    weights.iter().all(|w| w.is_finite()).then_some(weights)
}
