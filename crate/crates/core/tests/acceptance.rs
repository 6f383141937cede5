//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! `LATENT_EXPLORE_ACCEPTANCE=full` runs the experiment matrix at full scale
//! (10 tasks, 3 seeds, 300 iterations, rerun twice). The default is a reduced
//! matrix, and the lines of the matrix-based criteria say so.
//!
//! Exit status: the correctness criteria (1, 2, 3, 7, 8) always gate. The
//! empirical orderings (4, 5, 6) gate only with `LATENT_EXPLORE_ACCEPTANCE_STRICT=1`.

use latent_explore::diffnet::{backward_tape, Activation, Mlp, NetSpec};
use latent_explore::harness::{ExperimentConfig, PretrainReport, RunRecord, Summary};
use latent_explore::policy::gae::gae_from_values;
use latent_explore::policy::{cg_solve, surrogate_and_kl, GaussianPolicy, ValueFn};
use latent_explore::regressor::{MultiHeadNet, RegressorConfig};
use latent_explore::vae::{kl_gaussian, loss_and_grad_batch, Vae, VaeConfig, VaeTrainer};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const CONFIGS_PER_FAMILY: usize = 100;

struct Line {
    id: u8,
    pass: bool,
    gating: bool,
    text: String,
}

// ---------------------------------------------------------------- gradients

fn random_acts(rng: &mut ChaCha8Rng, n: usize) -> Vec<Activation> {
    (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            _ => Activation::Identity,
        })
        .collect()
}

fn random_net(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Mlp {
    let depth = rng.random_range(0..3);
    let mut dims = vec![input];
    dims.extend((0..depth).map(|_| rng.random_range(2..12)));
    dims.push(output);
    let acts = random_acts(rng, depth);
    Mlp::init(NetSpec::new(dims, acts).unwrap(), rng)
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Largest relative error between `analytic` and central differences of `f`
/// around `x`. Components where both are below `floor` count as exact.
fn fd_error(x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let floor = 1e-7;
    let mut p = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let up = f(&p);
        p[i] = orig - FD_STEP;
        let down = f(&p);
        p[i] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        let scale = fd.abs().max(analytic[i].abs());
        if scale > floor {
            worst = worst.max((fd - analytic[i]).abs() / scale);
        }
    }
    worst
}

fn grad_trunk_and_heads(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let state_dim = rng.random_range(3..10);
    let cfg = RegressorConfig {
        latent_dim: rng.random_range(1..state_dim),
        trunk_hidden: (0..rng.random_range(0..3)).map(|_| rng.random_range(2..10)).collect(),
        head_hidden: (0..rng.random_range(0..2)).map(|_| rng.random_range(2..8)).collect(),
        ..RegressorConfig::default()
    };
    let heads = rng.random_range(1..4);
    let net = MultiHeadNet::new(state_dim, heads, &cfg, rng).unwrap();
    let rows = rng.random_range(1..6);
    let x = matrix(rng, rows, state_dim);
    let y: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
    let head = rng.random_range(0..heads);
    let (_, g_trunk, g_head) = net.head_loss_grad(head, x.view(), &y).unwrap();
    let loss = |n: &MultiHeadNet| n.head_loss_grad(head, x.view(), &y).unwrap().0;
    let trunk_err = fd_error(&net.trunk.params.values, &g_trunk, |p| {
        let mut n = net.clone();
        n.trunk.params.values = p.to_vec();
        loss(&n)
    });
    let head_err = fd_error(&net.heads[head].params.values, &g_head, |p| {
        let mut n = net.clone();
        n.heads[head].params.values = p.to_vec();
        loss(&n)
    });
    (trunk_err, head_err)
}

fn grad_vae(rng: &mut ChaCha8Rng) -> f64 {
    let dim = rng.random_range(1..5);
    let cfg = VaeConfig {
        hidden: (0..rng.random_range(1..3)).map(|_| rng.random_range(2..10)).collect(),
        code_dim: Some(rng.random_range(1..4)),
        ..VaeConfig::default()
    };
    let vae = Vae::new(dim, &cfg, rng).unwrap();
    let rows = rng.random_range(1..6);
    let z = matrix(rng, rows, dim).mapv(|v| 2.0 * v);
    let noise = Array2::from_shape_simple_fn((rows, vae.code_dim()), || rng.sample::<f64, _>(StandardNormal));
    let (_, g_enc, g_dec) = loss_and_grad_batch(&vae, z.view(), noise.view()).unwrap();
    let mut params = vae.encoder.params.values.clone();
    params.extend(&vae.decoder.params.values);
    let mut analytic = g_enc;
    analytic.extend(g_dec);
    let split = vae.encoder.params.len();
    fd_error(&params, &analytic, |p| {
        let mut v = vae.clone();
        v.encoder.params.values = p[..split].to_vec();
        v.decoder.params.values = p[split..].to_vec();
        loss_and_grad_batch(&v, z.view(), noise.view()).unwrap().0
    })
}

fn grad_policy(rng: &mut ChaCha8Rng) -> f64 {
    let state_dim = rng.random_range(1..8);
    let action_dim = rng.random_range(1..4);
    let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(2..10)).collect();
    let old = GaussianPolicy::new(state_dim, action_dim, &hidden, rng.random_range(-1.5..0.0), rng).unwrap();
    let mut new = old.clone();
    let mut flat = new.flat_params();
    flat.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    new.set_flat_params(&flat).unwrap();
    let rows = rng.random_range(1..8);
    let s = matrix(rng, rows, state_dim);
    let a = matrix(rng, rows, action_dim);
    let old_lp = old.log_prob_batch(s.view(), a.view()).unwrap();
    let adv: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eval = surrogate_and_kl(&new, &old, s.view(), a.view(), &old_lp, &adv, true).unwrap();
    fd_error(&flat, eval.grad.as_ref().unwrap(), |p| {
        let mut q = new.clone();
        q.set_flat_params(p).unwrap();
        surrogate_and_kl(&q, &old, s.view(), a.view(), &old_lp, &adv, false).unwrap().objective
    })
}

fn grad_value(rng: &mut ChaCha8Rng) -> f64 {
    let state_dim = rng.random_range(1..8);
    let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(2..10)).collect();
    let mut vf = ValueFn::new(state_dim, &hidden, rng).unwrap();
    if rng.random_bool(0.5) {
        // also cover non-tanh hidden layers
        vf.net = random_net(rng, state_dim, 1);
    }
    let rows = rng.random_range(1..8);
    let s = matrix(rng, rows, state_dim);
    let y: Vec<f64> = (0..rows).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mse = |net: &Mlp| -> f64 {
        let p = net.forward_batch(s.view()).unwrap();
        p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / rows as f64
    };
    let tape = vf.net.tape(s.view()).unwrap();
    let d = Array2::from_shape_fn((rows, 1), |(r, _)| 2.0 * (tape.output()[[r, 0]] - y[r]) / rows as f64);
    let (g, _) = backward_tape(&vf.net.spec, &vf.net.params, &tape, d.view()).unwrap();
    fd_error(&vf.net.params.values, &g.values, |p| {
        let mut n = vf.net.clone();
        n.params.values = p.to_vec();
        mse(&n)
    })
}

fn criterion_gradients() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 5];
    for _ in 0..CONFIGS_PER_FAMILY {
        let (t, h) = grad_trunk_and_heads(&mut rng);
        worst[0] = worst[0].max(t);
        worst[1] = worst[1].max(h);
        worst[2] = worst[2].max(grad_vae(&mut rng));
        worst[3] = worst[3].max(grad_policy(&mut rng));
        worst[4] = worst[4].max(grad_value(&mut rng));
    }
    let pass = worst.iter().all(|w| *w < FD_TOL);
    Line {
        id: 1,
        pass,
        gating: true,
        text: format!(
            "gradients vs central differences, {CONFIGS_PER_FAMILY} configs per family: max rel err trunk {:.1e}, heads {:.1e}, vae {:.1e}, policy {:.1e}, value {:.1e} (< {FD_TOL:.0e})",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    }
}

// ---------------------------------------------------------------- KL / ELBO

/// KL of `N(mu, exp(logvar))` from `N(0, 1)` by midpoint quadrature, one dimension.
fn kl_quadrature(mu: f64, logvar: f64) -> f64 {
    let sd = (0.5 * logvar).exp();
    let (lo, hi, n) = (mu - 12.0 * sd, mu + 12.0 * sd, 200_000);
    let h = (hi - lo) / n as f64;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    (0..n)
        .map(|i| {
            let x = lo + (i as f64 + 0.5) * h;
            let lq = -0.5 * ((x - mu) / sd).powi(2) - sd.ln() - 0.5 * ln2pi;
            let lp = -0.5 * x * x - 0.5 * ln2pi;
            lq.exp() * (lq - lp) * h
        })
        .sum()
}

fn criterion_kl_elbo() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut kl_err: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(1..6);
        let mu: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lv: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..2.0)).collect();
        let closed: f64 = mu.iter().zip(&lv).map(|(m, l)| 0.5 * (l.exp() + m * m - 1.0 - l)).sum();
        kl_err = kl_err.max((kl_gaussian(&mu, &lv).unwrap() - closed).abs());
    }
    let mut quad_err: f64 = 0.0;
    for _ in 0..5 {
        let (m, l) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..1.0));
        quad_err = quad_err.max((kl_gaussian(&[m], &[l]).unwrap() - kl_quadrature(m, l)).abs());
    }

    let mean = [0.5, -0.3];
    let std = [2.0, 1.5];
    let n = 4000;
    let dists: Vec<Normal<f64>> = (0..2).map(|j| Normal::new(mean[j], std[j]).unwrap()).collect();
    let data = Array2::from_shape_fn((n, 2), |(_, j)| dists[j].sample(&mut rng));
    let cfg = VaeConfig {
        hidden: vec![32, 32],
        lr: 3e-3,
        ..VaeConfig::default()
    };
    let mut trainer = VaeTrainer::new(Vae::new(2, &cfg, &mut rng).unwrap(), &cfg);
    trainer.train_epochs(data.view(), 300, 7).unwrap();
    let seeds: Vec<u64> = (0..n as u64).collect();
    let est = latent_explore::vae::bonus_batch(&trainer.vae, data.view(), &seeds).unwrap();
    let norm = latent_explore::vae::gaussian_log_norm(2);
    let neg_elbo = est.iter().map(|e| e.neg_elbo).sum::<f64>() / n as f64 + norm;
    let exact = data
        .rows()
        .into_iter()
        .map(|r| (0..2).map(|j| 0.5 * ((r[j] - mean[j]) / std[j]).powi(2) + std[j].ln()).sum::<f64>() + norm)
        .sum::<f64>()
        / n as f64;
    let gap = neg_elbo - exact;
    let pass = kl_err <= 1e-10 && quad_err < 1e-6 && (-0.05..=1.0).contains(&gap);
    Line {
        id: 2,
        pass,
        gating: true,
        text: format!(
            "KL closed form max err {kl_err:.1e} over 1000 inputs (<= 1e-10), quadrature err {quad_err:.1e}; VAE on 2-D Gaussian: -ELBO {neg_elbo:.4} vs -log p {exact:.4}, gap {gap:+.4} in [-0.05, 1.0]"
        ),
    }
}

// ---------------------------------------------------------------- TRPO internals

/// `A_t = sum_k (discount * lambda)^k delta_{t+k}` as an explicit double loop.
fn gae_double_loop(r: &[f64], v: &[f64], last: f64, g: f64, l: f64) -> Vec<f64> {
    let h = r.len();
    let next = |t: usize| if t + 1 < h { v[t + 1] } else { last };
    (0..h)
        .map(|t| (t..h).map(|k| (g * l).powi((k - t) as i32) * (r[k] + g * next(k) - v[k])).sum())
        .collect()
}

fn gae_and_cg_errors() -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut gae_err: f64 = 0.0;
    for _ in 0..50 {
        let episodes = rng.random_range(1..6);
        let horizon = rng.random_range(1..40);
        let n = episodes * horizon;
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let last: Vec<f64> = (0..episodes).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (g, l) = (rng.random_range(0.8..=1.0), rng.random_range(0.0..=1.0));
        let got = gae_from_values(&r, &v, &last, horizon, g, l).raw;
        for (e, &last_value) in last.iter().enumerate() {
            let span = e * horizon..(e + 1) * horizon;
            let want = gae_double_loop(&r[span.clone()], &v[span.clone()], last_value, g, l);
            for (a, b) in got[span].iter().zip(want) {
                gae_err = gae_err.max((a - b).abs());
            }
        }
    }
    let mut cg_err: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=20);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a = &b * b.transpose() + DMatrix::identity(n, n) * 0.5;
        let rhs = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let direct = a.clone().lu().solve(&rhs).unwrap();
        let res = cg_solve(|x| (&a * DVector::from_column_slice(x)).as_slice().to_vec(), rhs.as_slice(), 200, 0.0);
        let rel = (DVector::from_vec(res.x) - &direct).norm() / direct.norm();
        cg_err = cg_err.max(rel);
    }
    (gae_err, cg_err)
}

// ---------------------------------------------------------------- experiments

struct Scale {
    full: bool,
    eval_tasks: usize,
    seeds: usize,
    iterations: usize,
}

impl Scale {
    fn from_env() -> Self {
        if std::env::var("LATENT_EXPLORE_ACCEPTANCE").as_deref() == Ok("full") {
            Self { full: true, eval_tasks: 10, seeds: 3, iterations: 300 }
        } else {
            Self { full: false, eval_tasks: 2, seeds: 2, iterations: 20 }
        }
    }

    fn label(&self) -> String {
        let tag = if self.full { "full" } else { "reduced" };
        format!("[{tag} scale: M={}, seeds={}, t_max={}]", self.eval_tasks, self.seeds, self.iterations)
    }
}

fn experiment_config(out: &Path, encoder: &Path, scale: &Scale, latent_dim: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(include_str!("acceptance_config.json")).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg.encoder_path = Some(encoder.to_path_buf());
    cfg.eval_tasks = scale.eval_tasks;
    cfg.seeds_per_task = scale.seeds;
    cfg.trpo.iterations = scale.iterations;
    cfg.regressor.latent_dim = latent_dim;
    cfg
}

fn cli(config: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_latent-explore"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr)))
    }
}

fn write_config(cfg: &ExperimentConfig, path: &Path) -> PathBuf {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, cfg.to_json()).unwrap();
    path.to_path_buf()
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn run_records(dir: &Path, out: &mut Vec<RunRecord>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            run_records(&p, out);
        } else if p.file_name().is_some_and(|n| n == "run.json") {
            out.push(read(&p));
        }
    }
}

fn verdict(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "yes",
        Some(false) => "no",
        None => "n/a",
    }
}

fn experiments(lines: &mut Vec<Line>, gae_err: f64, cg_err: f64) -> Result<(), String> {
    let scale = Scale::from_env();
    let root = tempfile::tempdir().map_err(|e| e.to_string())?.keep();
    let out = root.join("out");
    let encoder = out.join("pretrain").join("regressor.ckpt");

    // latent encoder, p = 2 and p = 4 on the same prior data
    let t = Instant::now();
    let cfg = experiment_config(&out, &encoder, &scale, 2);
    let config = write_config(&cfg, &root.join("config.json"));
    cli(&config, &["collect"])?;
    cli(&config, &["pretrain"])?;
    let rep: PretrainReport = read(&out.join("pretrain").join("report.json"));
    let out4 = root.join("out_p4");
    std::fs::create_dir_all(&out4).unwrap();
    std::os::unix::fs::symlink(out.join("prior"), out4.join("prior")).unwrap();
    let cfg4 = experiment_config(&out4, &out4.join("pretrain").join("regressor.ckpt"), &scale, 4);
    cli(&write_config(&cfg4, &root.join("config_p4.json")), &["pretrain"])?;
    let rep4: PretrainReport = read(&out4.join("pretrain").join("report.json"));
    lines.push(Line {
        id: 3,
        pass: rep.probe_r2 > 0.8 && rep.distractor_r2 < 0.4,
        gating: true,
        text: format!(
            "latent probe over {} tasks: R^2(z -> o0) {:.3} (> 0.8), R^2(z -> o{}) {:.3} (< 0.4); with p=4: {:.3} / {:.3}; {:.0}s",
            rep.probe_r2_per_task.len(),
            rep.probe_r2,
            rep.distractor,
            rep.distractor_r2,
            rep4.probe_r2,
            rep4.distractor_r2,
            t.elapsed().as_secs_f64()
        ),
    });

    let t = Instant::now();
    cli(&config, &["matrix"])?;
    cli(&config, &["pure-explore"])?;
    cli(&config, &["report"])?;
    let summary: Summary = read(&out.join("report").join("summary.json"));
    let matrix_secs = t.elapsed().as_secs_f64();
    let v = &summary.verdicts;
    let fr = |m: &str| {
        summary
            .modes
            .iter()
            .find(|(k, _)| k.as_str() == m)
            .map_or(f64::NAN, |(_, s)| s.final_return)
    };
    let au = |m: &str| summary.modes.iter().find(|(k, _)| k.as_str() == m).map_or(f64::NAN, |(_, s)| s.auc);
    let empirical = std::env::var("LATENT_EXPLORE_ACCEPTANCE_STRICT").as_deref() == Ok("1");
    let c4 = [v.oracle_ge_latent, v.latent_gt_state, v.latent_ge_70pct_oracle, v.latent_auc_ge_120pct_state];
    lines.push(Line {
        id: 4,
        pass: c4.iter().all(|c| *c == Some(true)),
        gating: empirical,
        text: format!(
            "{} final return oracle {:.3e}, latent {:.3e}, state {:.3e}; oracle>=latent {}, latent>state {}, latent>=70% oracle {}, latent AUC>=1.2x state {} (AUC {:.3e} vs {:.3e}); {:.0}s",
            scale.label(),
            fr("oracle"),
            fr("latent"),
            fr("state"),
            verdict(v.oracle_ge_latent),
            verdict(v.latent_gt_state),
            verdict(v.latent_ge_70pct_oracle),
            verdict(v.latent_auc_ge_120pct_state),
            au("latent"),
            au("state"),
            matrix_secs
        ),
    });
    let c5 = [v.latent_gt_state, v.latent_gt_action, v.latent_gt_none, v.none_lt_5pct_latent];
    lines.push(Line {
        id: 5,
        pass: c5.iter().all(|c| *c == Some(true)),
        gating: empirical,
        text: format!(
            "{} final return action {:.3e}, none {:.3e}; latent>state {}, latent>action {}, latent>none {}, none<5% latent {}",
            scale.label(),
            fr("action"),
            fr("none"),
            verdict(v.latent_gt_state),
            verdict(v.latent_gt_action),
            verdict(v.latent_gt_none),
            verdict(v.none_lt_5pct_latent)
        ),
    });
    let pure = summary.pure.clone().unwrap_or_default();
    let stat = |m: &str| {
        pure.iter()
            .find(|p| p.mode.as_str() == m)
            .map_or("n/a".to_string(), |p| format!("{:.3} / {:.2} nats", p.moved_fraction, p.occupancy_entropy))
    };
    let c6 = [
        v.pure_oracle_moved_ge_2x_state,
        v.pure_latent_moved_ge_2x_state,
        v.pure_oracle_latent_moved_within_015,
        v.pure_state_entropy_highest,
    ];
    lines.push(Line {
        id: 6,
        pass: c6.iter().all(|c| *c == Some(true)),
        gating: empirical,
        text: format!(
            "{} pure exploration (moved fraction / pusher entropy): oracle {}, latent {}, state {}; oracle>=2x state {}, latent>=2x state {}, |oracle-latent|<0.15 {}, state entropy highest {}",
            scale.label(),
            stat("oracle"),
            stat("latent"),
            stat("state"),
            verdict(v.pure_oracle_moved_ge_2x_state),
            verdict(v.pure_latent_moved_ge_2x_state),
            verdict(v.pure_oracle_latent_moved_within_015),
            verdict(v.pure_state_entropy_highest)
        ),
    });

    let mut records = Vec::new();
    run_records(&out.join("runs"), &mut records);
    let accepted: usize = records.iter().map(|r| r.accepted_steps).sum();
    let violations: usize = records.iter().map(|r| r.kl_violations).sum();
    let max_kl = records.iter().map(|r| r.max_accepted_kl).fold(0.0, f64::max);
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    lines.push(Line {
        id: 7,
        pass: violations == 0 && failed == 0 && accepted > 0 && gae_err <= 1e-10 && cg_err <= 1e-6,
        gating: true,
        text: format!(
            "{} {} runs, {accepted} accepted steps, {violations} above kl_limit (max KL {max_kl:.2e}), {failed} failed; GAE vs double loop max err {gae_err:.1e} over 50 batches (<= 1e-10); CG vs LU max rel err {cg_err:.1e} (<= 1e-6)",
            scale.label(),
            records.len()
        ),
    });

    // same config file, fresh output directory
    let t = Instant::now();
    let mut again = cfg.clone();
    again.out_dir = root.join("rerun");
    let rerun_config = write_config(&again, &root.join("config_rerun.json"));
    cli(&rerun_config, &["matrix"])?;
    cli(&rerun_config, &["report"])?;
    let a = std::fs::read(out.join("report").join("curves.csv")).unwrap();
    let b = std::fs::read(again.out_dir.join("report").join("curves.csv")).unwrap();
    lines.push(Line {
        id: 8,
        pass: a == b && !a.is_empty(),
        gating: true,
        text: format!(
            "{} rerun of the matrix from the config file: curves.csv {} ({} bytes); {:.0}s",
            scale.label(),
            if a == b { "bitwise identical" } else { "differs" },
            a.len(),
            t.elapsed().as_secs_f64()
        ),
    });
    println!("artifacts kept under {}", root.display());
    Ok(())
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filter.is_empty() && !filter.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let mut lines = Vec::new();
    let t = Instant::now();
    let mut l1 = criterion_gradients();
    l1.text.push_str(&format!("; {:.1}s", t.elapsed().as_secs_f64()));
    lines.push(l1);
    let t = Instant::now();
    let mut l2 = criterion_kl_elbo();
    l2.text.push_str(&format!("; {:.1}s", t.elapsed().as_secs_f64()));
    lines.push(l2);
    let (gae_err, cg_err) = gae_and_cg_errors();
    if let Err(e) = experiments(&mut lines, gae_err, cg_err) {
        for id in 3..=8 {
            if !lines.iter().any(|l| l.id == id) {
                lines.push(Line { id, pass: false, gating: true, text: format!("pipeline error: {e}") });
            }
        }
    }
    lines.sort_by_key(|l| l.id);
    for l in &lines {
        let status = if l.pass { "PASS" } else if l.gating { "FAIL" } else { "FAIL (not gating)" };
        println!("criterion {} {status}: {}", l.id, l.text);
    }
    if lines.iter().any(|l| !l.pass && l.gating) {
        std::process::exit(1);
    }
}
