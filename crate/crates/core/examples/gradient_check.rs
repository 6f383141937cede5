//! Compare reverse-mode gradients of a random MLP against central finite
//! differences.
//!
//! cargo run --release --example gradient_check

use latent_explore::diffnet::{backward, forward, Activation, Mlp, NetSpec, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = NetSpec::mlp(18, &[16, 8], 2, Activation::Tanh)?;
    let net = Mlp::init(spec.clone(), &mut rng);
    let x: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();

    // scalar loss L = sum(w * f(x)); its output gradient is w
    let loss = |p: &[f64]| -> f64 {
        let pv = ParamVector::from_values(&spec, p.to_vec()).unwrap();
        let y = forward(&spec, &pv, &x).unwrap();
        y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
    };
    let grad = backward(&spec, &net.params, &x, &w)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut p = net.params.values.clone();
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = grad.d_params.values[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    println!("{} parameters, max relative error {worst:.2e}", p.len());
    Ok(())
}
