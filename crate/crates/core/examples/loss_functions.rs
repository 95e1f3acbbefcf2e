//! The training objectives on toy embeddings, with gradients.
//!
//! `cargo run --release --example loss_functions`

use planret::autodiff::{Graph, Tensor};
use planret::models::{
    infovae_combine, kl_gauss, mmd_rbf, multitask_loss, recon_loss, simsiam_loss, triplet_loss, LossWeights,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let w = LossWeights::default();
    let mut g = Graph::<f64>::new();

    let a = g.param(Tensor::new(vec![2, 3], vec![0.2, 0.1, 0.0, 1.0, 1.0, 1.0])?);
    let p = g.constant(Tensor::new(vec![2, 3], vec![0.1, 0.0, 0.0, 1.0, 1.2, 1.0])?);
    let n = g.constant(Tensor::new(vec![2, 3], vec![0.5, 0.0, 0.0, 3.0, 3.0, 3.0])?);
    let trip = triplet_loss(&mut g, a, p, n, w.margin)?;
    println!("triplet (margin {}) = {:.4}", w.margin, g.value(trip).item());

    let z2 = g.constant(Tensor::new(vec![2, 3], vec![0.0, 1.0, 0.0, 2.0, 2.0, 2.0])?);
    let ss = simsiam_loss(&mut g, a, z2)?;
    println!("simsiam = {:.4}", g.value(ss).item());

    let mu = g.param(Tensor::randn(&[8, 4], 0.5, &mut rng));
    let logvar = g.param(Tensor::randn(&[8, 4], 0.1, &mut rng));
    let kl = kl_gauss(&mut g, mu, logvar)?;
    let prior = g.constant(Tensor::randn(&[8, 4], 1.0, &mut rng));
    let mmd = mmd_rbf(&mut g, mu, prior, None)?;
    println!("KL = {:.4}, MMD = {:.4}", g.value(kl).item(), g.value(mmd).item());

    let x = g.constant(Tensor::randn(&[8, 4], 1.0, &mut rng));
    let recon = recon_loss(&mut g, mu, x)?;
    let vae = infovae_combine(&mut g, recon, kl, mmd, w.alpha, w.lambda)?;
    println!("InfoVAE (alpha {}, lambda {}) = {:.4}", w.alpha, w.lambda, g.value(vae).item());

    let total = multitask_loss(&mut g, recon, ss, trip, w.beta, w.gamma)?;
    println!("multitask (beta {}, gamma {}) = {:.4}", w.beta, w.gamma, g.value(total).item());
    let grads = g.backward(total)?;
    let ga = grads.get(a).expect("anchor gradient");
    println!("d multitask / d anchor = {:?}", ga.data().iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>());
    Ok(())
}
