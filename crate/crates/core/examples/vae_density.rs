//! Fit the VAE to samples of a known 2-D Gaussian and compare its negative
//! ELBO with the exact negative log-density.
//!
//! cargo run --release --example vae_density

use latent_explore::vae::{bonus_batch, gaussian_log_norm, Vae, VaeConfig, VaeTrainer};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mean = [0.5, -0.3];
    let std = [2.0, 1.5];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 4000;
    let dists: Vec<Normal<f64>> = (0..2).map(|j| Normal::new(mean[j], std[j]).unwrap()).collect();
    let data = Array2::from_shape_fn((n, 2), |(_, j)| dists[j].sample(&mut rng));

    let cfg = VaeConfig {
        hidden: vec![32, 32],
        lr: 3e-3,
        ..VaeConfig::default()
    };
    let mut trainer = VaeTrainer::new(Vae::new(2, &cfg, &mut rng)?, &cfg);
    for round in 0..6 {
        let trace = trainer.train_epochs(data.view(), 50, round)?;
        println!("epochs {:3}: training loss {:.4}", 50 * (round + 1), trace.last().unwrap());
    }

    let seeds: Vec<u64> = (0..n as u64).collect();
    let est = bonus_batch(&trainer.vae, data.view(), &seeds)?;
    let neg_elbo = est.iter().map(|e| e.neg_elbo).sum::<f64>() / n as f64;
    let exact = data
        .rows()
        .into_iter()
        .map(|r| {
            (0..2)
                .map(|j| 0.5 * ((r[j] - mean[j]) / std[j]).powi(2) + std[j].ln())
                .sum::<f64>()
                + gaussian_log_norm(2)
        })
        .sum::<f64>()
        / n as f64;
    println!("mean -ELBO + normalizer: {:.4}", neg_elbo + gaussian_log_norm(2));
    println!("mean exact -log p:       {exact:.4}");
    Ok(())
}
