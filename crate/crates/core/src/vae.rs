//! Variational autoencoder used as a density model for the exploration bonus.
//!
//! The encoder maps an input `z` to `(mu, logvar)` of a diagonal Gaussian over
//! the code `v`; the decoder maps `v` back to a reconstruction of `z`. The loss
//! of a single sample is the negative ELBO
//!
//! ```text
//! 0.5 * |z - dec(mu + exp(logvar / 2) * eps)|^2 + KL(N(mu, exp(logvar)) || N(0, I))
//! ```
//!
//! with a unit-variance Gaussian likelihood whose normalizing constant
//! `0.5 * p * ln(2 pi)` is dropped (see [`gaussian_log_norm`]). After training
//! this value tracks `-log p(z)` up to that constant, and it is what the
//! explorer adds to the environment reward.

use crate::diffnet::{backward_tape, Activation, Adam, Mlp, NetError, NetSpec};
use crate::rng::rng_from;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum VaeError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("no training rows")]
    Empty,
}

pub type Result<T> = std::result::Result<T, VaeError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub hidden: Vec<usize>,
    /// Code dimension; `None` uses the input dimension.
    pub code_dim: Option<usize>,
    pub lr: f64,
    /// Epochs of training after every exploration iteration.
    pub epochs_per_iter: usize,
    pub batch_size: usize,
    /// Train on every batch collected so far instead of only the newest one.
    pub train_on_all_data: bool,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            code_dim: None,
            lr: 1e-3,
            epochs_per_iter: 50,
            batch_size: 256,
            train_on_all_data: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vae {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// One negative-ELBO evaluation split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BonusEstimate {
    pub neg_elbo: f64,
    pub recon_term: f64,
    pub kl_term: f64,
}

impl Vae {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, cfg: &VaeConfig, rng: &mut R) -> Result<Self> {
        let k = cfg.code_dim.unwrap_or(input_dim);
        let enc = NetSpec::mlp(input_dim, &cfg.hidden, 2 * k, Activation::Tanh)?;
        let dec = NetSpec::mlp(k, &cfg.hidden, input_dim, Activation::Tanh)?;
        Ok(Self {
            encoder: Mlp::init(enc, rng),
            decoder: Mlp::init(dec, rng),
        })
    }

    pub fn from_parts(encoder: Mlp, decoder: Mlp) -> Result<Self> {
        let p = encoder.spec.input_dim();
        let k2 = encoder.spec.output_dim();
        if !k2.is_multiple_of(2) || decoder.spec.input_dim() != k2 / 2 {
            return Err(VaeError::DimensionMismatch {
                what: "decoder input",
                expected: k2 / 2,
                got: decoder.spec.input_dim(),
            });
        }
        if decoder.spec.output_dim() != p {
            return Err(VaeError::DimensionMismatch {
                what: "decoder output",
                expected: p,
                got: decoder.spec.output_dim(),
            });
        }
        Ok(Self { encoder, decoder })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.spec.input_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.decoder.spec.input_dim()
    }

    pub fn fingerprint(&self) -> u64 {
        crate::rng::fingerprint(&self.encoder.params.values)
            ^ crate::rng::fingerprint(&self.decoder.params.values).rotate_left(1)
    }
}

/// `0.5 * p * ln(2 pi)`: the constant dropped from the reconstruction term.
/// Adding it to a negative ELBO gives the full Gaussian-likelihood bound.
pub fn gaussian_log_norm(input_dim: usize) -> f64 {
    0.5 * input_dim as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// `KL(N(mu, exp(logvar)) || N(0, I))` for a diagonal Gaussian.
pub fn kl_gaussian(mu: &[f64], logvar: &[f64]) -> Result<f64> {
    if mu.len() != logvar.len() {
        return Err(VaeError::DimensionMismatch {
            what: "logvar",
            expected: mu.len(),
            got: logvar.len(),
        });
    }
    if mu.iter().chain(logvar).any(|v| !v.is_finite()) {
        return Err(VaeError::NonFinite("kl inputs"));
    }
    Ok(kl_terms(mu.iter().copied().zip(logvar.iter().copied())))
}

fn kl_terms(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    0.5 * pairs
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

fn check(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(VaeError::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Per-row loss terms plus everything needed for the reverse pass.
struct Pass {
    enc_tape: crate::diffnet::Tape,
    dec_tape: crate::diffnet::Tape,
    terms: Vec<BonusEstimate>,
}

fn forward_pass(vae: &Vae, zs: ArrayView2<'_, f64>, noise: ArrayView2<'_, f64>) -> Result<Pass> {
    let k = vae.code_dim();
    check("vae input", vae.input_dim(), zs.ncols())?;
    check("noise width", k, noise.ncols())?;
    check("noise rows", zs.nrows(), noise.nrows())?;
    let enc_tape = vae.encoder.tape(zs)?;
    let stats = enc_tape.output();
    let mu = stats.slice(s![.., ..k]);
    let lv = stats.slice(s![.., k..]);
    let v = &mu + &(lv.mapv(|l| (0.5 * l).exp()) * noise);
    let dec_tape = vae.decoder.tape(v.view())?;
    let zhat = dec_tape.output();
    let terms = (0..zs.nrows())
        .map(|r| {
            let recon = 0.5
                * zs.row(r)
                    .iter()
                    .zip(zhat.row(r))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            let kl = kl_terms(mu.row(r).iter().copied().zip(lv.row(r).iter().copied()));
            BonusEstimate {
                neg_elbo: recon + kl,
                recon_term: recon,
                kl_term: kl,
            }
        })
        .collect();
    Ok(Pass {
        enc_tape,
        dec_tape,
        terms,
    })
}

/// Negative ELBO of one input using the supplied standard-normal draw.
pub fn vae_loss(vae: &Vae, z: &[f64], noise: &[f64]) -> Result<BonusEstimate> {
    check("vae input", vae.input_dim(), z.len())?;
    check("noise", vae.code_dim(), noise.len())?;
    let zs = ArrayView2::from_shape((1, z.len()), z).unwrap();
    let ns = ArrayView2::from_shape((1, noise.len()), noise).unwrap();
    let est = forward_pass(vae, zs, ns)?.terms[0];
    if !est.neg_elbo.is_finite() {
        return Err(VaeError::NonFinite("vae loss"));
    }
    Ok(est)
}

/// Mean negative ELBO over the rows and its gradient with respect to the
/// encoder and decoder parameters.
pub fn loss_and_grad_batch(
    vae: &Vae,
    zs: ArrayView2<'_, f64>,
    noise: ArrayView2<'_, f64>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = zs.nrows();
    if n == 0 {
        return Err(VaeError::Empty);
    }
    let k = vae.code_dim();
    let pass = forward_pass(vae, zs, noise)?;
    let inv = 1.0 / n as f64;
    let mean = pass.terms.iter().map(|t| t.neg_elbo).sum::<f64>() * inv;

    let d_zhat = (pass.dec_tape.output() - &zs) * inv;
    let (g_dec, d_v) = backward_tape(&vae.decoder.spec, &vae.decoder.params, &pass.dec_tape, d_zhat.view())?;

    let stats = pass.enc_tape.output();
    let mut d_stats = Array2::<f64>::zeros(stats.raw_dim());
    for r in 0..n {
        for j in 0..k {
            let mu = stats[[r, j]];
            let lv = stats[[r, k + j]];
            let sd = (0.5 * lv).exp();
            d_stats[[r, j]] = d_v[[r, j]] + mu * inv;
            d_stats[[r, k + j]] = d_v[[r, j]] * noise[[r, j]] * 0.5 * sd + 0.5 * (lv.exp() - 1.0) * inv;
        }
    }
    let (g_enc, _) = backward_tape(&vae.encoder.spec, &vae.encoder.params, &pass.enc_tape, d_stats.view())?;
    Ok((mean, g_enc.values, g_dec.values))
}

fn noise_row(seed: u64, k: usize) -> impl Iterator<Item = f64> {
    let mut rng = rng_from(seed);
    (0..k).map(move |_| rng.sample::<f64, _>(StandardNormal))
}

/// Exploration bonus for one input: the negative ELBO under a single noise
/// draw from the seeded stream.
pub fn bonus(vae: &Vae, z: &[f64], rng_seed: u64) -> Result<f64> {
    let noise: Vec<f64> = noise_row(rng_seed, vae.code_dim()).collect();
    Ok(vae_loss(vae, z, &noise)?.neg_elbo)
}

/// Row-wise [`bonus`] estimates; row `r` uses `seeds[r]`, so results equal
/// the single-row calls.
pub fn bonus_batch(vae: &Vae, zs: ArrayView2<'_, f64>, seeds: &[u64]) -> Result<Vec<BonusEstimate>> {
    check("bonus seeds", zs.nrows(), seeds.len())?;
    let k = vae.code_dim();
    let mut noise = Array2::<f64>::zeros((zs.nrows(), k));
    for (mut row, &seed) in noise.axis_iter_mut(Axis(0)).zip(seeds) {
        row.iter_mut().zip(noise_row(seed, k)).for_each(|(n, v)| *n = v);
    }
    let terms = forward_pass(vae, zs, noise.view())?.terms;
    if terms.iter().any(|t| !t.neg_elbo.is_finite()) {
        return Err(VaeError::NonFinite("bonus"));
    }
    Ok(terms)
}

/// A VAE together with its optimizer state, so training can warm-start.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeTrainer {
    pub vae: Vae,
    pub enc_opt: Adam,
    pub dec_opt: Adam,
    pub batch_size: usize,
}

impl VaeTrainer {
    pub fn new(vae: Vae, cfg: &VaeConfig) -> Self {
        Self {
            enc_opt: Adam::new(vae.encoder.num_params(), cfg.lr),
            dec_opt: Adam::new(vae.decoder.num_params(), cfg.lr),
            batch_size: cfg.batch_size.max(1),
            vae,
        }
    }

    /// Runs `epochs` passes of minibatch Adam over `zs`, drawing fresh noise
    /// for every row in every epoch. Returns the mean loss of each epoch.
    pub fn train_epochs(&mut self, zs: ArrayView2<'_, f64>, epochs: usize, rng_seed: u64) -> Result<Vec<f64>> {
        if epochs == 0 {
            return Ok(Vec::new());
        }
        let n = zs.nrows();
        if n == 0 {
            return Err(VaeError::Empty);
        }
        check("vae input", self.vae.input_dim(), zs.ncols())?;
        let k = self.vae.code_dim();
        let mut rng = rng_from(rng_seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(self.batch_size) {
                let batch = zs.select(Axis(0), chunk);
                let noise = Array2::from_shape_simple_fn((chunk.len(), k), || rng.sample(StandardNormal));
                let (loss, g_enc, g_dec) = loss_and_grad_batch(&self.vae, batch.view(), noise.view())?;
                if !loss.is_finite() {
                    return Err(VaeError::Diverged { epoch, loss });
                }
                self.enc_opt.step(&mut self.vae.encoder.params.values, &g_enc)?;
                self.dec_opt.step(&mut self.vae.decoder.params.values, &g_dec)?;
                total += loss * chunk.len() as f64;
            }
            trace.push(total / n as f64);
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::ParamVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_vae(p: usize, seed: u64) -> Vae {
        let cfg = VaeConfig {
            hidden: vec![5],
            ..VaeConfig::default()
        };
        Vae::new(p, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_gaussian(&[0.0], &[0.0]).unwrap(), 0.0);
        assert!((kl_gaussian(&[1.0], &[0.0]).unwrap() - 0.5).abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!((kl_gaussian(&[0.0], &[1.0]).unwrap() - (e - 2.0) / 2.0).abs() < 1e-15);
        assert!(kl_gaussian(&[0.0, 1.0], &[0.0]).is_err());
        assert!(kl_gaussian(&[f64::NAN], &[0.0]).is_err());
    }

    #[test]
    fn perfect_decoder_and_prior_encoder_give_zero_loss() {
        // encoder outputs zeros, decoder is a constant map to z
        let z = [0.3, -0.7];
        let enc_spec = NetSpec::mlp(2, &[3], 4, Activation::Tanh).unwrap();
        let dec_spec = NetSpec::new(vec![2, 2], vec![]).unwrap();
        let mut dec = ParamVector::zeros(&dec_spec);
        dec.values[4] = z[0];
        dec.values[5] = z[1];
        let vae = Vae::from_parts(
            Mlp::new(enc_spec.clone(), ParamVector::zeros(&enc_spec)).unwrap(),
            Mlp::new(dec_spec, dec).unwrap(),
        )
        .unwrap();
        let est = vae_loss(&vae, &z, &[0.4, -1.1]).unwrap();
        assert_eq!(est.neg_elbo, 0.0);
    }

    #[test]
    fn zero_noise_uses_the_mean_code() {
        let vae = small_vae(2, 1);
        let z = [0.2, 0.5];
        let est = vae_loss(&vae, &z, &[0.0, 0.0]).unwrap();
        let stats = vae.encoder.forward(&z).unwrap();
        let zhat = vae.decoder.forward(&stats[..2]).unwrap();
        let recon = 0.5 * ((z[0] - zhat[0]).powi(2) + (z[1] - zhat[1]).powi(2));
        assert!((est.recon_term - recon).abs() < 1e-15);
        assert_eq!(est.neg_elbo, est.recon_term + est.kl_term);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let vae = small_vae(3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let zs = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0));
        let noise = Array2::from_shape_simple_fn((4, 3), || rng.sample(StandardNormal));
        let (_, g_enc, g_dec) = loss_and_grad_batch(&vae, zs.view(), noise.view()).unwrap();
        let loss = |v: &Vae| loss_and_grad_batch(v, zs.view(), noise.view()).unwrap().0;
        let h = 1e-5;
        for (which, grads) in [(0, &g_enc), (1, &g_dec)] {
            for (k, &an) in grads.iter().enumerate() {
                let mut plus = vae.clone();
                let mut minus = vae.clone();
                let (pp, pm) = if which == 0 {
                    (&mut plus.encoder.params.values, &mut minus.encoder.params.values)
                } else {
                    (&mut plus.decoder.params.values, &mut minus.decoder.params.values)
                };
                pp[k] += h;
                pm[k] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6), "{which}/{k}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn bonus_equals_sum_of_terms_and_is_seeded() {
        let vae = small_vae(2, 3);
        let z = [0.1, 0.9];
        assert_eq!(bonus(&vae, &z, 5).unwrap(), bonus(&vae, &z, 5).unwrap());
        let zs = Array2::from_shape_vec((2, 2), vec![0.1, 0.9, 0.1, 0.9]).unwrap();
        let b = bonus_batch(&vae, zs.view(), &[5, 6]).unwrap();
        assert_eq!(b[0].neg_elbo, bonus(&vae, &z, 5).unwrap());
        assert_eq!(b[1].neg_elbo, b[1].recon_term + b[1].kl_term);
        assert!(b[1].kl_term >= 0.0);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let vae = small_vae(2, 3);
        let mut tr = VaeTrainer::new(vae.clone(), &VaeConfig::default());
        let zs = Array2::zeros((3, 2));
        assert!(tr.train_epochs(zs.view(), 0, 1).unwrap().is_empty());
        assert_eq!(tr.vae, vae);
    }

    #[test]
    fn identical_rows_loss_halves() {
        let cfg = VaeConfig::default();
        let vae = Vae::new(2, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let zs = Array2::from_shape_fn((64, 2), |(_, c)| if c == 0 { 1.5 } else { -0.8 });
        let mut tr = VaeTrainer::new(vae, &cfg);
        let trace = tr.train_epochs(zs.view(), 200, 9).unwrap();
        assert!(trace[199] <= 0.5 * trace[0], "{} -> {}", trace[0], trace[199]);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = VaeConfig {
            hidden: vec![8],
            ..VaeConfig::default()
        };
        let vae = Vae::new(2, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let zs = Array2::from_shape_fn((20, 2), |(r, c)| (r * 2 + c) as f64 * 0.05);
        let mut a = VaeTrainer::new(vae.clone(), &cfg);
        let mut b = VaeTrainer::new(vae, &cfg);
        a.train_epochs(zs.view(), 5, 1).unwrap();
        b.train_epochs(zs.view(), 5, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_errors() {
        let vae = small_vae(2, 3);
        assert!(vae_loss(&vae, &[0.0; 3], &[0.0; 2]).is_err());
        assert!(vae_loss(&vae, &[0.0; 2], &[0.0; 1]).is_err());
    }
}
