//! Trust-region policy step: conjugate-gradient natural gradient, step scaled
//! to the KL radius, then backtracking until the mean KL and surrogate
//! improvement conditions both hold.

use super::cg::cg_solve;
use super::gae::Advantages;
use super::{gaussian_log_probs, GaussianPolicy, PolicyError, Result, TrajectoryBatch, TrpoConfig, ValueFn};
use crate::diffnet::{backward_tape, jvp_tape, Adam, Tape};
use crate::rng::rng_from;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

/// Surrogate objective, mean KL from the old policy, and (optionally) the
/// gradient of the objective with respect to the new policy's flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEval {
    pub objective: f64,
    pub mean_kl: f64,
    pub grad: Option<Vec<f64>>,
}

/// Closed-form `KL(old || new)` of diagonal Gaussians, averaged over rows.
fn mean_kl(old_means: ArrayView2<'_, f64>, old_ls: &[f64], new_means: ArrayView2<'_, f64>, new_ls: &[f64]) -> f64 {
    let n = old_means.nrows();
    let mut total = 0.0;
    for (mo, mn) in old_means.rows().into_iter().zip(new_means.rows()) {
        for j in 0..old_ls.len() {
            let var_o = (2.0 * old_ls[j]).exp();
            let var_n = (2.0 * new_ls[j]).exp();
            let d = mo[j] - mn[j];
            total += new_ls[j] - old_ls[j] + (var_o + d * d) / (2.0 * var_n) - 0.5;
        }
    }
    total / n as f64
}

/// Importance-weighted surrogate `mean(exp(logp_new - logp_old) * A)` and
/// `mean KL(old || new)` over the given rows.
pub fn surrogate_and_kl(
    policy: &GaussianPolicy,
    old_policy: &GaussianPolicy,
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    old_log_probs: &[f64],
    advantages: &[f64],
    with_grad: bool,
) -> Result<SurrogateEval> {
    let old_means = old_policy.mean_batch(states)?;
    let tape = policy.mean_net.tape(states)?;
    surrogate_from_tape(policy, &tape, old_means.view(), old_policy.log_std(), actions, old_log_probs, advantages, with_grad)
}

#[allow(clippy::too_many_arguments)]
fn surrogate_from_tape(
    policy: &GaussianPolicy,
    tape: &Tape,
    old_means: ArrayView2<'_, f64>,
    old_ls: &[f64],
    actions: ArrayView2<'_, f64>,
    old_log_probs: &[f64],
    advantages: &[f64],
    with_grad: bool,
) -> Result<SurrogateEval> {
    let n = actions.nrows();
    let means = tape.output();
    let ls = policy.log_std();
    let logp = gaussian_log_probs(means.view(), ls, actions);
    let ratios: Vec<f64> = logp.iter().zip(old_log_probs).map(|(a, b)| (a - b).exp()).collect();
    if ratios.iter().any(|r| !r.is_finite()) {
        return Err(PolicyError::NonFinite("importance ratio"));
    }
    let objective = ratios.iter().zip(advantages).map(|(r, a)| r * a).sum::<f64>() / n as f64;
    let kl = mean_kl(old_means, old_ls, means.view(), ls);
    let grad = if with_grad {
        let m = ls.len();
        let inv_var: Vec<f64> = ls.iter().map(|l| (-2.0 * l).exp()).collect();
        let mut d_mean = Array2::<f64>::zeros((n, m));
        let mut d_ls = vec![0.0; m];
        for r in 0..n {
            let w = ratios[r] * advantages[r] / n as f64;
            for j in 0..m {
                let diff = actions[[r, j]] - means[[r, j]];
                d_mean[[r, j]] = w * diff * inv_var[j];
                d_ls[j] += w * (diff * diff * inv_var[j] - 1.0);
            }
        }
        let (g, _) = backward_tape(&policy.mean_net.spec, &policy.mean_net.params, tape, d_mean.view())?;
        let mut flat = g.values;
        flat.extend(d_ls);
        Some(flat)
    } else {
        None
    };
    Ok(SurrogateEval {
        objective,
        mean_kl: kl,
        grad,
    })
}

/// Fisher-vector product of the mean-KL Hessian at `policy`.
struct Fisher<'a> {
    policy: &'a GaussianPolicy,
    tape: &'a Tape,
    inv_var: Vec<f64>,
}

impl Fisher<'_> {
    fn product(&self, v: &[f64]) -> Vec<f64> {
        let net = &self.policy.mean_net;
        let k = net.num_params();
        let n = self.tape.batch_size() as f64;
        let mut jv = jvp_tape(&net.spec, &net.params, self.tape, &v[..k]).expect("direction length checked");
        for mut row in jv.axis_iter_mut(Axis(0)) {
            row.iter_mut().zip(&self.inv_var).for_each(|(x, iv)| *x *= iv / n);
        }
        let (g, _) = backward_tape(&net.spec, &net.params, self.tape, jv.view()).expect("shapes match tape");
        let mut out = g.values;
        out.extend(v[k..].iter().map(|x| 2.0 * x));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrpoDiagnostics {
    pub step_accepted: bool,
    /// Mean KL of the accepted step, 0 when no step was taken.
    pub kl: f64,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub grad_norm: f64,
    pub cg_residual: f64,
    /// CG residual above 0.1.
    pub cg_warning: bool,
    /// Line-search trials evaluated.
    pub trials: usize,
    pub value_loss: f64,
}

/// One TRPO policy step followed by value regression on `adv.value_targets`.
/// Returns an error (leaving every parameter untouched) if a non-finite value
/// shows up anywhere in the policy step.
pub fn trpo_update(
    policy: &mut GaussianPolicy,
    valuefn: &mut ValueFn,
    value_opt: &mut Adam,
    batch: &TrajectoryBatch,
    adv: &Advantages,
    cfg: &TrpoConfig,
    value_seed: u64,
) -> Result<TrpoDiagnostics> {
    let mut diag = policy_step(policy, batch.states.view(), batch.actions.view(), &adv.advantages, cfg)?;
    diag.value_loss = fit_value(valuefn, value_opt, batch.states.view(), &adv.value_targets, cfg, value_seed)?;
    Ok(diag)
}

/// The policy half of [`trpo_update`].
pub fn policy_step(
    policy: &mut GaussianPolicy,
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    advantages: &[f64],
    cfg: &TrpoConfig,
) -> Result<TrpoDiagnostics> {
    let old = policy.clone();
    let tape = old.mean_net.tape(states)?;
    let old_means = tape.output().clone();
    let old_logp = gaussian_log_probs(old_means.view(), old.log_std(), actions);
    let base = surrogate_from_tape(&old, &tape, old_means.view(), old.log_std(), actions, &old_logp, advantages, true)?;
    let grad = base.grad.unwrap();
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(PolicyError::NonFinite("surrogate gradient"));
    }
    let mut diag = TrpoDiagnostics {
        surrogate_before: base.objective,
        surrogate_after: base.objective,
        grad_norm,
        ..TrpoDiagnostics::default()
    };
    if grad_norm == 0.0 {
        return Ok(diag);
    }

    let fisher = Fisher {
        policy: &old,
        tape: &tape,
        inv_var: old.log_std().iter().map(|l| (-2.0 * l).exp()).collect(),
    };
    let cg = cg_solve(|v| fisher.product(v), &grad, cfg.cg_iters, cfg.cg_damping);
    diag.cg_residual = cg.residual;
    diag.cg_warning = cg.residual > 0.1;
    let fx = fisher.product(&cg.x);
    let xfx: f64 = cg
        .x
        .iter()
        .zip(&fx)
        .map(|(x, f)| x * (f + cfg.cg_damping * x))
        .sum();
    if !(xfx.is_finite() && xfx > 0.0) {
        return Err(PolicyError::NonFinite("natural gradient curvature"));
    }
    let scale = (2.0 * cfg.kl_limit / xfx).sqrt();
    let theta0 = old.flat_params();
    let mut candidate = old.clone();
    let mut frac = 1.0;
    for trial in 0..cfg.backtrack_steps.max(1) {
        let theta: Vec<f64> = theta0
            .iter()
            .zip(&cg.x)
            .map(|(t, x)| t + frac * scale * x)
            .collect();
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(PolicyError::NonFinite("candidate parameters"));
        }
        candidate.set_flat_params(&theta)?;
        let eval = surrogate_and_kl(&candidate, &old, states, actions, &old_logp, advantages, false)?;
        diag.trials = trial + 1;
        if !(eval.objective.is_finite() && eval.mean_kl.is_finite()) {
            return Err(PolicyError::NonFinite("line search"));
        }
        if eval.mean_kl <= cfg.kl_limit && eval.objective > base.objective {
            *policy = candidate;
            diag.step_accepted = true;
            diag.kl = eval.mean_kl;
            diag.surrogate_after = eval.objective;
            return Ok(diag);
        }
        frac *= cfg.backtrack_ratio;
    }
    Ok(diag)
}

/// Minibatch Adam regression of the value function; returns the final-epoch
/// mean squared error.
pub fn fit_value(
    valuefn: &mut ValueFn,
    opt: &mut Adam,
    states: ArrayView2<'_, f64>,
    targets: &[f64],
    cfg: &TrpoConfig,
    seed: u64,
) -> Result<f64> {
    let n = states.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(seed);
    let bs = cfg.value_batch_size.max(1);
    let mut last = 0.0;
    for _ in 0..cfg.value_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let x = states.select(Axis(0), chunk);
            let tape = valuefn.net.tape(x.view())?;
            let pred = tape.output();
            let m = chunk.len() as f64;
            let mut d = Array2::<f64>::zeros((chunk.len(), 1));
            for (i, &r) in chunk.iter().enumerate() {
                let e = pred[[i, 0]] - targets[r];
                total += e * e;
                d[[i, 0]] = 2.0 * e / m;
            }
            let (g, _) = backward_tape(&valuefn.net.spec, &valuefn.net.params, &tape, d.view())?;
            opt.step(&mut valuefn.net.params.values, &g.values)?;
        }
        last = total / n as f64;
    }
    if !last.is_finite() {
        return Err(PolicyError::NonFinite("value loss"));
    }
    Ok(last)
}
