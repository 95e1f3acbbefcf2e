use crate::autodiff::{Graph, Scalar, Tensor, Var};

use super::ModelError;

/// Mean squared reconstruction error.
pub fn recon_loss<T: Scalar>(g: &mut Graph<T>, x_hat: Var, x: Var) -> Result<Var, ModelError> {
    Ok(g.mean_squared_error(x_hat, x)?)
}

/// `z = μ + exp(logvar / 2) ⊙ ε` with `ε` supplied by the caller.
pub fn reparameterize<T: Scalar>(g: &mut Graph<T>, mu: Var, logvar: Var, eps: Tensor<T>) -> Result<Var, ModelError> {
    let half = g.scale(logvar, T::lit(0.5));
    let std = g.exp(half);
    let eps = g.constant(eps);
    let noise = g.mul(std, eps)?;
    Ok(g.add(mu, noise)?)
}

/// KL divergence of a diagonal Gaussian from the standard normal, summed over
/// latent dims and averaged over the batch.
pub fn kl_gauss<T: Scalar>(g: &mut Graph<T>, mu: Var, logvar: Var) -> Result<Var, ModelError> {
    let batch = g.shape(mu)[0];
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar);
    let s = g.add(mu2, var)?;
    let s = g.sub(s, logvar)?;
    let s = g.add_scalar(s, -T::one());
    let total = g.reduce_sum(s);
    Ok(g.scale(total, T::lit(0.5 / batch as f64)))
}

/// Median pairwise Euclidean distance over the pooled rows of `x` and `y`
/// (row-major, `dim` columns). Falls back to 1 when the median is zero.
pub fn median_bandwidth(x: &[f64], y: &[f64], dim: usize) -> f64 {
    let rows: Vec<&[f64]> = x.chunks(dim).chain(y.chunks(dim)).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Biased MMD estimate `mean k(X,X) + mean k(Y,Y) − 2 mean k(X,Y)` with a
/// Gaussian RBF kernel. `bandwidth = None` uses the median heuristic; the
/// bandwidth is treated as a constant for differentiation.
pub fn mmd_rbf<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var, bandwidth: Option<f64>) -> Result<Var, ModelError> {
    let (xs, ys) = (g.shape(x).to_vec(), g.shape(y).to_vec());
    if xs.len() != 2 || ys.len() != 2 || xs[0] == 0 || ys[0] == 0 {
        return Err(ModelError::Shape(format!(
            "mmd_rbf needs two nonempty (n, d) sample sets, got {xs:?} and {ys:?}"
        )));
    }
    let sigma = match bandwidth {
        Some(s) => s,
        None => {
            let xv: Vec<f64> = g.value(x).data().iter().map(|v| v.as_f64()).collect();
            let yv: Vec<f64> = g.value(y).data().iter().map(|v| v.as_f64()).collect();
            median_bandwidth(&xv, &yv, xs[1])
        }
    };
    let sigma = T::lit(sigma);
    let kxx = g.gaussian_rbf_kernel(x, x, sigma)?;
    let kyy = g.gaussian_rbf_kernel(y, y, sigma)?;
    let kxy = g.gaussian_rbf_kernel(x, y, sigma)?;
    let mxx = g.reduce_mean(kxx);
    let myy = g.reduce_mean(kyy);
    let mxy = g.reduce_mean(kxy);
    let cross = g.scale(mxy, T::lit(-2.0));
    let s = g.add(mxx, myy)?;
    Ok(g.add(s, cross)?)
}

/// `recon + (1 − α)·kl + (α + λ − 1)·mmd`.
pub fn infovae_combine<T: Scalar>(
    g: &mut Graph<T>,
    recon: Var,
    kl: Var,
    mmd: Var,
    alpha: f64,
    lambda: f64,
) -> Result<Var, ModelError> {
    let kl = g.scale(kl, T::lit(1.0 - alpha));
    let mmd = g.scale(mmd, T::lit(alpha + lambda - 1.0));
    let s = g.add(recon, kl)?;
    Ok(g.add(s, mmd)?)
}

#[allow(clippy::too_many_arguments)]
pub fn infovae_loss<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    x_hat: Var,
    mu: Var,
    logvar: Var,
    z_samples: Var,
    prior_samples: Var,
    alpha: f64,
    lambda: f64,
) -> Result<Var, ModelError> {
    let recon = recon_loss(g, x_hat, x)?;
    let kl = kl_gauss(g, mu, logvar)?;
    let mmd = mmd_rbf(g, z_samples, prior_samples, None)?;
    infovae_combine(g, recon, kl, mmd, alpha, lambda)
}

/// Mean over the batch of `max(‖a − p‖ − ‖a − n‖ + margin, 0)`.
pub fn triplet_loss<T: Scalar>(g: &mut Graph<T>, anchor: Var, pos: Var, neg: Var, margin: f64) -> Result<Var, ModelError> {
    let dp = g.euclidean_distance(anchor, pos)?;
    let dn = g.euclidean_distance(anchor, neg)?;
    let diff = g.sub(dp, dn)?;
    let shifted = g.add_scalar(diff, T::lit(margin));
    let hinge = g.relu(shifted);
    Ok(g.reduce_mean(hinge))
}

/// Negative cosine similarity between `p1` and the stop-gradient of `z2`,
/// averaged over the batch.
pub fn simsiam_loss<T: Scalar>(g: &mut Graph<T>, p1: Var, z2: Var) -> Result<Var, ModelError> {
    let z2 = g.stop_gradient(z2);
    let cos = g.cosine_similarity(p1, z2)?;
    let m = g.reduce_mean(cos);
    Ok(g.scale(m, -T::one()))
}

/// Average of both directions: `½ (D(p1, z2) + D(p2, z1))`.
pub fn simsiam_loss_symmetric<T: Scalar>(g: &mut Graph<T>, p1: Var, z2: Var, p2: Var, z1: Var) -> Result<Var, ModelError> {
    let a = simsiam_loss(g, p1, z2)?;
    let b = simsiam_loss(g, p2, z1)?;
    let s = g.add(a, b)?;
    Ok(g.scale(s, T::lit(0.5)))
}

/// `recon + β·simsiam + γ·triplet`.
pub fn multitask_loss<T: Scalar>(
    g: &mut Graph<T>,
    recon: Var,
    simsiam: Var,
    triplet: Var,
    beta: f64,
    gamma: f64,
) -> Result<Var, ModelError> {
    let s = g.scale(simsiam, T::lit(beta));
    let t = g.scale(triplet, T::lit(gamma));
    let a = g.add(recon, s)?;
    Ok(g.add(a, t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ad(e: ModelError) -> crate::autodiff::AutodiffError {
        match e {
            ModelError::Autodiff(a) => a,
            other => panic!("{other}"),
        }
    }

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    fn eval(f: impl FnOnce(&mut Graph<f64>) -> Var) -> f64 {
        let mut g = Graph::new();
        let v = f(&mut g);
        g.value(v).item()
    }

    #[test]
    fn recon_examples() {
        let v = eval(|g| {
            let a = g.constant(t(&[2], &[0.0, 2.0]));
            let b = g.constant(t(&[2], &[1.0, 0.0]));
            recon_loss(g, a, b).unwrap()
        });
        assert_eq!(v, 2.5);
        let v = eval(|g| {
            let a = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
            let b = g.constant(t(&[3], &[2.0, 3.0, 4.0]));
            recon_loss(g, a, b).unwrap()
        });
        assert_eq!(v, 1.0);
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2]));
        let b = g.constant(Tensor::zeros(&[3]));
        assert!(recon_loss(&mut g, a, b).is_err());
    }

    #[test]
    fn reparameterize_examples() {
        let mut g = Graph::<f64>::new();
        let mu = g.constant(t(&[1, 2], &[0.5, -1.0]));
        let lv = g.constant(Tensor::zeros(&[1, 2]));
        let z = reparameterize(&mut g, mu, lv, Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(g.value(z).data(), &[0.5, -1.0]);
        let z = reparameterize(&mut g, mu, lv, Tensor::full(&[1, 2], 1.0)).unwrap();
        assert_eq!(g.value(z).data(), &[1.5, 0.0]);
    }

    #[test]
    fn reparameterized_variance_matches_prior() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::<f64>::new();
        let mu = g.constant(Tensor::zeros(&[n, 1]));
        let lv = g.constant(Tensor::zeros(&[n, 1]));
        let z = reparameterize(&mut g, mu, lv, Tensor::randn(&[n, 1], 1.0, &mut rng)).unwrap();
        let d = g.value(z).data();
        let mean = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn kl_examples_and_nonnegativity() {
        let kl = |m: &[f64], l: &[f64]| {
            eval(|g| {
                let mu = g.constant(t(&[1, m.len()], m));
                let lv = g.constant(t(&[1, l.len()], l));
                kl_gauss(g, mu, lv).unwrap()
            })
        };
        assert_eq!(kl(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(kl(&[1.0], &[0.0]), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let m = Tensor::<f64>::randn(&[3], 2.0, &mut rng);
            let l = Tensor::<f64>::randn(&[3], 2.0, &mut rng);
            assert!(kl(m.data(), l.data()) >= 0.0);
        }
    }

    fn mmd_oracle(x: &[f64], y: &[f64], d: usize, sigma: f64) -> f64 {
        let k = |a: &[f64], b: &[f64]| {
            (-a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / (2.0 * sigma * sigma)).exp()
        };
        let mean = |a: &[f64], b: &[f64]| {
            let mut s = 0.0;
            let mut n = 0.0;
            for r in a.chunks(d) {
                for c in b.chunks(d) {
                    s += k(r, c);
                    n += 1.0;
                }
            }
            s / n
        };
        mean(x, x) + mean(y, y) - 2.0 * mean(x, y)
    }

    #[test]
    fn mmd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::randn(&[64, 4], 1.0, &mut rng);
        let y = Tensor::<f64>::randn(&[64, 4], 1.0, &mut rng);
        let same = eval(|g| {
            let a = g.constant(x.clone());
            let b = g.constant(x.clone());
            mmd_rbf(g, a, b, None).unwrap()
        });
        assert!(same.abs() <= 1e-7);
        let sigma = median_bandwidth(x.data(), y.data(), 4);
        let v = eval(|g| {
            let a = g.constant(x.clone());
            let b = g.constant(y.clone());
            mmd_rbf(g, a, b, None).unwrap()
        });
        assert!((v - mmd_oracle(x.data(), y.data(), 4, sigma)).abs() <= 1e-10);
        let far = eval(|g| {
            let a = g.constant(t(&[1, 1], &[0.0]));
            let b = g.constant(t(&[1, 1], &[1e4]));
            mmd_rbf(g, a, b, Some(1.0)).unwrap()
        });
        assert_eq!(far, 2.0);
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2]));
        let b = g.constant(Tensor::zeros(&[1, 2]));
        assert!(mmd_rbf(&mut g, a, b, None).is_err());
    }

    #[test]
    fn infovae_coefficients() {
        let combine = |r: f64, k: f64, m: f64, a: f64, l: f64| {
            eval(|g| {
                let r = g.constant(Tensor::scalar(r));
                let k = g.constant(Tensor::scalar(k));
                let m = g.constant(Tensor::scalar(m));
                infovae_combine(g, r, k, m, a, l).unwrap()
            })
        };
        assert!((combine(2.0, 0.5, 0.1, 0.0, 10.0) - 3.4).abs() < 1e-12);
        assert_eq!(combine(2.0, 0.5, 7.0, 0.0, 1.0), 2.5);
        assert_eq!(combine(2.0, 9.0, 0.5, 1.0, 1.0), 2.5);
    }

    #[test]
    fn triplet_examples() {
        let trip = |a: &[f64], p: &[f64], n: &[f64], m: f64| {
            eval(|g| {
                let a = g.constant(t(&[1, a.len()], a));
                let p = g.constant(t(&[1, p.len()], p));
                let n = g.constant(t(&[1, n.len()], n));
                triplet_loss(g, a, p, n, m).unwrap()
            })
        };
        assert_eq!(trip(&[0.0, 0.0], &[0.0, 0.0], &[2.0, 0.0], 1.0), 0.0);
        assert_eq!(trip(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], 1.0), 1.0);
        assert_eq!(trip(&[0.0], &[3.0], &[1.0], 0.5), 2.5);
    }

    #[test]
    fn simsiam_examples_and_stop_gradient() {
        let cos = |p: &[f64], z: &[f64]| {
            eval(|g| {
                let p = g.constant(t(&[1, 2], p));
                let z = g.constant(t(&[1, 2], z));
                simsiam_loss(g, p, z).unwrap()
            })
        };
        assert!((cos(&[1.0, 2.0], &[1.0, 2.0]) + 1.0).abs() < 1e-15);
        assert_eq!(cos(&[1.0, 0.0], &[0.0, 3.0]), 0.0);

        let mut g = Graph::<f64>::new();
        let p = g.param(t(&[1, 2], &[1.0, 0.5]));
        let z = g.param(t(&[1, 2], &[0.2, 1.0]));
        let l = simsiam_loss(&mut g, p, z).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(z).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(grads.get(p).unwrap().data().iter().any(|&v| v != 0.0));

        let mut g = Graph::<f64>::new();
        let z = g.constant(t(&[1, 2], &[0.0, 0.0]));
        assert!(simsiam_loss(&mut g, z, z).is_err());
    }

    #[test]
    fn multitask_examples() {
        let mt = |c: [f64; 3], b: f64, gm: f64| {
            eval(|g| {
                let v = c.map(|x| g.constant(Tensor::scalar(x)));
                multitask_loss(g, v[0], v[1], v[2], b, gm).unwrap()
            })
        };
        assert!((mt([1.0, 2.0, 3.0], 1e-2, 1e-1) - 1.32).abs() <= 1e-12);
        assert_eq!(mt([1.0, 2.0, 3.0], 0.0, 0.0), 1.0);
        let a = mt([0.7, -0.4, 2.2], 1e-2, 1e-1);
        let b = mt([1.4, -0.8, 4.4], 1e-2, 1e-1);
        assert!((b - 2.0 * a).abs() <= 1e-12);
    }

    #[test]
    fn losses_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut r = |s: &[usize]| Tensor::<f64>::randn(s, 1.0, &mut rng);
        let (a, p, n) = (r(&[3, 4]), r(&[3, 4]), r(&[3, 4]));
        let checks: Vec<f64> = vec![
            check_gradients(&[a.clone(), p.clone()], |g, v| recon_loss(g, v[0], v[1]).map_err(ad)).unwrap(),
            check_gradients(&[a.clone(), p.clone()], |g, v| kl_gauss(g, v[0], v[1]).map_err(ad)).unwrap(),
            check_gradients(&[a.clone(), p.clone()], |g, v| mmd_rbf(g, v[0], v[1], Some(1.3)).map_err(ad))
                .unwrap(),
            check_gradients(&[a.clone(), p.clone(), n.clone()], |g, v| {
                triplet_loss(g, v[0], v[1], v[2], 1.0).map_err(ad)
            })
            .unwrap(),
            check_gradients(std::slice::from_ref(&a), |g, v| {
                let z = g.constant(p.clone());
                simsiam_loss(g, v[0], z).map_err(ad)
            })
            .unwrap(),
        ];
        for (i, e) in checks.iter().enumerate() {
            assert!(*e <= 1e-4, "loss {i}: {e}");
        }
    }
}
