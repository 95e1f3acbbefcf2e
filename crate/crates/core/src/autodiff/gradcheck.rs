//! Central finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Graph, LayerKind, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Worst relative error between the backward pass of `f` and central finite
/// differences, taken over every element of every input.
///
/// `f` receives the inputs as trainable leaves and must return a scalar.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf gradient");
        for k in 0..inputs[i].len() {
            let x0 = inputs[i].data()[k];
            probe[i].data_mut()[k] = x0 + FD_STEP;
            let plus = eval(&probe)?;
            probe[i].data_mut()[k] = x0 - FD_STEP;
            let minus = eval(&probe)?;
            probe[i].data_mut()[k] = x0;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
    }
    Ok(worst)
}

/// Contracts a non-scalar output with a fixed random weighting so that every
/// output element contributes to the checked scalar.
pub fn weighted_sum(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var, AutodiffError> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    Ok(g.reduce_sum(prod))
}

fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Gradient check for one catalog entry on small random inputs (64-bit).
///
/// Stop-gradient has no finite-difference counterpart (its forward pass is the
/// identity); its reference pullback is zero and the reported error is the
/// largest gradient magnitude that leaks through it.
pub fn grad_check(kind: LayerKind, seed: u64) -> Result<f64, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mat = |r: &mut ChaCha8Rng, s: &[usize]| Tensor::<f64>::randn(s, 1.0, r);
    match kind {
        LayerKind::Conv3d => {
            let x = mat(r, &[1, 2, 4, 4, 4]);
            let w = mat(r, &[3, 2, 3, 3, 3]);
            let b = mat(r, &[3]);
            let proj = mat(r, &[1, 3, 2, 2, 2]);
            check_gradients(&[x, w, b], |g, v| {
                let y = g.conv3d(v[0], v[1], Some(v[2]), 2, 1)?;
                weighted_sum(g, y, &proj)
            })
        }
        LayerKind::Conv3dTranspose => {
            let x = mat(r, &[1, 2, 2, 2, 2]);
            let w = mat(r, &[2, 3, 4, 4, 4]);
            let b = mat(r, &[3]);
            let proj = mat(r, &[1, 3, 4, 4, 4]);
            check_gradients(&[x, w, b], |g, v| {
                let y = g.conv3d_transpose(v[0], v[1], Some(v[2]), 2, 1)?;
                weighted_sum(g, y, &proj)
            })
        }
        LayerKind::GroupNorm => {
            let x = mat(r, &[1, 4, 2, 2, 2]);
            let gamma = mat(r, &[4]);
            let beta = mat(r, &[4]);
            let proj = mat(r, &[1, 4, 2, 2, 2]);
            check_gradients(&[x, gamma, beta], |g, v| {
                let y = g.group_norm(v[0], v[1], v[2], 2, 1e-5)?;
                weighted_sum(g, y, &proj)
            })
        }
        LayerKind::LeakyRelu => {
            let x = away_from_zero(&[3, 5], r);
            let proj = mat(r, &[3, 5]);
            check_gradients(&[x], |g, v| {
                let y = g.leaky_relu(v[0], 0.01);
                weighted_sum(g, y, &proj)
            })
        }
        LayerKind::Linear => {
            let x = mat(r, &[3, 5]);
            let w = mat(r, &[4, 5]);
            let b = mat(r, &[4]);
            let proj = mat(r, &[3, 4]);
            check_gradients(&[x, w, b], |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]))?;
                weighted_sum(g, y, &proj)
            })
        }
        LayerKind::MeanSquaredError => {
            let a = mat(r, &[3, 4]);
            let b = mat(r, &[3, 4]);
            check_gradients(&[a, b], |g, v| g.mean_squared_error(v[0], v[1]))
        }
        LayerKind::L2Norm => {
            let a = mat(r, &[3, 5]);
            let proj = mat(r, &[3, 1]);
            check_gradients(&[a], |g, v| {
                let y = g.l2_norm(v[0])?;
                weighted_sum(g, y, &proj)
            })
        }
        LayerKind::EuclideanDistance => {
            let a = mat(r, &[3, 5]);
            let b = mat(r, &[3, 5]);
            let proj = mat(r, &[3, 1]);
            check_gradients(&[a, b], |g, v| {
                let y = g.euclidean_distance(v[0], v[1])?;
                weighted_sum(g, y, &proj)
            })
        }
        LayerKind::CosineSimilarity => {
            let a = mat(r, &[3, 5]);
            let b = mat(r, &[3, 5]);
            let proj = mat(r, &[3, 1]);
            check_gradients(&[a, b], |g, v| {
                let y = g.cosine_similarity(v[0], v[1])?;
                weighted_sum(g, y, &proj)
            })
        }
        LayerKind::Add | LayerKind::Sub | LayerKind::Mul => {
            let a = mat(r, &[3, 4]);
            let b = mat(r, &[3, 4]);
            let proj = mat(r, &[3, 4]);
            check_gradients(&[a, b], |g, v| {
                let y = match kind {
                    LayerKind::Add => g.add(v[0], v[1])?,
                    LayerKind::Sub => g.sub(v[0], v[1])?,
                    _ => g.mul(v[0], v[1])?,
                };
                weighted_sum(g, y, &proj)
            })
        }
        LayerKind::Scale | LayerKind::AddScalar | LayerKind::Exp | LayerKind::Reshape => {
            let a = mat(r, &[3, 4]);
            let c = r.random_range(-2.0..2.0);
            let proj = mat(r, &[3, 4]);
            check_gradients(&[a], |g, v| {
                let y = match kind {
                    LayerKind::Scale => g.scale(v[0], c),
                    LayerKind::AddScalar => g.add_scalar(v[0], c),
                    LayerKind::Exp => g.exp(v[0]),
                    _ => {
                        let flat = g.reshape(v[0], &[12])?;
                        g.reshape(flat, &[3, 4])?
                    }
                };
                weighted_sum(g, y, &proj)
            })
        }
        LayerKind::ReduceMean | LayerKind::ReduceSum => {
            let a = mat(r, &[3, 4]);
            let sq = mat(r, &[3, 4]);
            check_gradients(&[a], |g, v| {
                let w = g.constant(sq.clone());
                let y = g.mul(v[0], w)?;
                let y = g.mul(y, v[0])?;
                Ok(if kind == LayerKind::ReduceMean {
                    g.reduce_mean(y)
                } else {
                    g.reduce_sum(y)
                })
            })
        }
        LayerKind::StopGradient => {
            let a = mat(r, &[3, 4]);
            let proj = mat(r, &[3, 4]);
            let mut g = Graph::new();
            let x = g.param(a);
            let y = g.stop_gradient(x);
            let loss = weighted_sum(&mut g, y, &proj)?;
            let grads = g.backward(loss)?;
            let leaked = grads
                .get(x)
                .map(|t| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs())))
                .unwrap_or(0.0);
            Ok(leaked)
        }
        LayerKind::GaussianRbfKernel => {
            let x = mat(r, &[4, 3]);
            let y = mat(r, &[5, 3]);
            let sigma = r.random_range(0.8..2.0);
            let proj = mat(r, &[4, 5]);
            check_gradients(&[x, y], |g, v| {
                let k = g.gaussian_rbf_kernel(v[0], v[1], sigma)?;
                weighted_sum(g, k, &proj)
            })
        }
    }
}
