//! Clipped-surrogate PPO with GAE and Adam.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{gaussian_entropy, gaussian_log_prob, Policy};
use crate::config::ConfigError;
use crate::env::ACTION_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_ratio: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Parallel environments per iteration.
    pub num_envs: usize,
    /// Maximum control steps per rollout episode.
    pub horizon: usize,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub init_log_std: f64,
    /// Gradient-norm clip applied to policy and critic parameters separately; 0 disables it.
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_ratio: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            entropy_coef: 1e-4,
            value_coef: 0.5,
            learning_rate: 3e-4,
            epochs: 5,
            minibatch_size: 10_000,
            num_envs: 100,
            horizon: 500,
            hidden: vec![256, 256],
            leaky_slope: 0.01,
            init_log_std: 0.25f64.ln(),
            max_grad_norm: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, message: &str| {
            Err(ConfigError::Invalid {
                field,
                message: message.to_string(),
            })
        };
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return invalid("gamma", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return invalid("lambda", "must lie in [0, 1]");
        }
        if !(self.clip_ratio > 0.0) {
            return invalid("clip_ratio", "must be > 0");
        }
        if !(self.learning_rate > 0.0) {
            return invalid("learning_rate", "must be > 0");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0 && self.max_grad_norm >= 0.0) {
            return invalid("entropy_coef", "coefficients must be >= 0");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.num_envs == 0 || self.horizon == 0 {
            return invalid("epochs", "epochs, minibatch_size, num_envs and horizon must be >= 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return invalid("hidden", "needs at least one non-empty hidden layer");
        }
        if !(self.leaky_slope >= 0.0) || !self.init_log_std.is_finite() {
            return invalid("leaky_slope", "slope must be >= 0 and init_log_std finite");
        }
        Ok(())
    }
}

/// Advantages and returns by the GAE recursion.
///
/// `values` has one more entry than `rewards`: the last is the bootstrap value
/// of the state after the final step. A terminal step cuts both the bootstrap
/// and the recursion.
pub fn gae(rewards: &[f64], values: &[f64], terminals: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n + 1, "values must hold one bootstrap entry");
    assert_eq!(terminals.len(), n, "one terminal flag per step");
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if terminals[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * values[t + 1] - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if n == 0.0 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-12);
    }
}

/// Training samples with normalised observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub old_log_prob: Array1<f64>,
    pub advantages: Array1<f64>,
    pub returns: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            obs: self.obs.select(Axis(0), idx),
            actions: self.actions.select(Axis(0), idx),
            old_log_prob: self.old_log_prob.select(Axis(0), idx),
            advantages: self.advantages.select(Axis(0), idx),
            returns: self.returns.select(Axis(0), idx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossStats {
    pub total: f64,
    pub surrogate: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Estimate of KL(old ‖ new) from the sample log-ratio.
    pub kl: f64,
}

/// Log-probabilities of the batch actions under `policy`.
pub fn log_probs(policy: &Policy, obs: &Array2<f64>, actions: &Array2<f64>) -> Array1<f64> {
    let mean = policy.actor.forward(&obs.view());
    Array1::from_shape_fn(obs.nrows(), |i| {
        gaussian_log_prob(actions.row(i).as_slice().unwrap(), &mean.row(i).to_vec(), &policy.log_std)
    })
}

/// Critic outputs for normalised observations.
pub fn values(policy: &Policy, obs: &Array2<f64>) -> Array1<f64> {
    policy.critic.forward(&obs.view()).column(0).to_owned()
}

/// PPO loss `-surrogate + c_v·value - c_e·entropy` on the batch.
pub fn loss(policy: &Policy, batch: &Batch, cfg: &PpoConfig) -> LossStats {
    loss_impl(policy, batch, cfg, false).0
}

/// Loss and its gradient in [`Policy::params`] order.
pub fn loss_and_grad(policy: &Policy, batch: &Batch, cfg: &PpoConfig) -> (LossStats, Vec<f64>) {
    let (stats, grad) = loss_impl(policy, batch, cfg, true);
    (stats, grad.expect("gradient requested"))
}

fn loss_impl(policy: &Policy, batch: &Batch, cfg: &PpoConfig, with_grad: bool) -> (LossStats, Option<Vec<f64>>) {
    let b = batch.len();
    let bf = b as f64;
    let (mean, actor_cache) = policy.actor.forward_cached(&batch.obs.view());
    let (value, critic_cache) = policy.critic.forward_cached(&batch.obs.view());
    let std: Vec<f64> = policy.log_std.iter().map(|l| l.exp()).collect();

    let mut d_mean = Array2::<f64>::zeros((b, ACTION_DIM));
    let mut d_value = Array2::<f64>::zeros((b, 1));
    let mut d_log_std = [0.0; ACTION_DIM];
    let (mut surrogate, mut value_loss, mut clipped, mut kl) = (0.0, 0.0, 0usize, 0.0);
    for i in 0..b {
        let a = batch.actions.row(i);
        let mu = mean.row(i);
        let logp = gaussian_log_prob(a.as_slice().unwrap(), &mu.to_vec(), &policy.log_std);
        let log_ratio = logp - batch.old_log_prob[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        let clipped_ratio = ratio.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
        let unclipped_term = ratio * adv;
        let clipped_term = clipped_ratio * adv;
        surrogate += unclipped_term.min(clipped_term);
        if clipped_ratio != ratio {
            clipped += 1;
        }
        kl += -log_ratio;
        let err = value[(i, 0)] - batch.returns[i];
        value_loss += err * err;
        if with_grad {
            // d(-surrogate)/dlogp, zero where the clipped branch is selected.
            let g = if unclipped_term <= clipped_term { -ratio * adv / bf } else { 0.0 };
            for j in 0..ACTION_DIM {
                let z = (a[j] - mu[j]) / std[j];
                d_mean[(i, j)] = g * z / std[j];
                d_log_std[j] += g * (z * z - 1.0);
            }
            d_value[(i, 0)] = cfg.value_coef * 2.0 * err / bf;
        }
    }
    let entropy = gaussian_entropy(&policy.log_std);
    let surrogate = surrogate / bf;
    let value_loss = value_loss / bf;
    let stats = LossStats {
        total: -surrogate + cfg.value_coef * value_loss - cfg.entropy_coef * entropy,
        surrogate,
        value: value_loss,
        entropy,
        clip_fraction: clipped as f64 / bf,
        kl: kl / bf,
    };
    if !with_grad {
        return (stats, None);
    }
    let mut grad = Vec::with_capacity(policy.num_params());
    policy.actor.backward(&actor_cache, &d_mean).append_params(&mut grad);
    policy.critic.backward(&critic_cache, &d_value).append_params(&mut grad);
    grad.extend(d_log_std.iter().map(|g| g - cfg.entropy_coef));
    (stats, Some(grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
        }
    }
}

/// Clips the policy part (actor and log_std) and the critic part separately,
/// so large value errors early in training do not starve the actor.
pub fn clip_grad_norm(policy: &Policy, grad: &mut [f64], max_norm: f64) {
    let a = policy.actor.num_params();
    let c = policy.critic.num_params();
    let (actor, rest) = grad.split_at_mut(a);
    let (critic, log_std) = rest.split_at_mut(c);
    let policy_norm = actor.iter().chain(log_std.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if policy_norm > max_norm {
        let s = max_norm / policy_norm;
        actor.iter_mut().chain(log_std.iter_mut()).for_each(|g| *g *= s);
    }
    let critic_norm = critic.iter().map(|g| g * g).sum::<f64>().sqrt();
    if critic_norm > max_norm {
        let s = max_norm / critic_norm;
        critic.iter_mut().for_each(|g| *g *= s);
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PpoError {
    #[error("empty rollout buffer")]
    EmptyBatch,
    #[error("non-finite loss in epoch {epoch}, minibatch {minibatch}; update aborted")]
    NonFinite { epoch: usize, minibatch: usize },
}

/// Runs the configured epochs of minibatch Adam steps. On a non-finite loss or
/// gradient the policy is restored and an error returned.
pub fn update(
    policy: &mut Policy,
    optimizer: &mut Adam,
    batch: &Batch,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossStats, PpoError> {
    if batch.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    let snapshot = policy.clone();
    let optimizer_snapshot = optimizer.clone();
    let mut params = policy.params();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut sum = LossStats::default();
    let mut count = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for (minibatch, idx) in order.chunks(cfg.minibatch_size).enumerate() {
            let mb = batch.select(idx);
            let (stats, mut grad) = loss_and_grad(policy, &mb, cfg);
            if !stats.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                *policy = snapshot;
                *optimizer = optimizer_snapshot;
                return Err(PpoError::NonFinite { epoch, minibatch });
            }
            if cfg.max_grad_norm > 0.0 {
                clip_grad_norm(policy, &mut grad, cfg.max_grad_norm);
            }
            optimizer.step(&mut params, &grad);
            policy.set_params(&params);
            sum.total += stats.total;
            sum.surrogate += stats.surrogate;
            sum.value += stats.value;
            sum.entropy += stats.entropy;
            sum.clip_fraction += stats.clip_fraction;
            sum.kl += stats.kl;
            count += 1.0;
        }
    }
    Ok(LossStats {
        total: sum.total / count,
        surrogate: sum.surrogate / count,
        value: sum.value / count,
        entropy: sum.entropy / count,
        clip_fraction: sum.clip_fraction / count,
        kl: sum.kl / count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn toy(seed: u64, n: usize, obs_dim: usize, spread: f64) -> (Policy, Batch) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut policy = Policy::new(obs_dim, &[8, 8], 0.01, -0.5, &mut rng);
        // A larger output gain so the actor gradient is not negligible.
        let mut p = policy.params();
        p.iter_mut().for_each(|v| *v *= 1.5);
        policy.set_params(&p);
        let obs = Array2::from_shape_fn((n, obs_dim), |_| rng.random_range(-1.0..1.0));
        let actions = Array2::from_shape_fn((n, ACTION_DIM), |_| rng.random_range(-0.8..0.8));
        let mut old = log_probs(&policy, &obs, &actions);
        if spread > 0.0 {
            old.mapv_inplace(|l| l + rng.random_range(-spread..spread));
        }
        let mut advantages: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize_advantages(&mut advantages);
        let returns = Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0));
        let batch = Batch {
            obs,
            actions,
            old_log_prob: old,
            advantages: Array1::from(advantages),
            returns,
        };
        (policy, batch)
    }

    #[test]
    fn gae_examples() {
        let (a, r) = gae(&[0.5], &[0.2, 0.9], &[false], 1.0, 1.0);
        assert!((a[0] - (0.5 + 0.9 - 0.2)).abs() < 1e-15);
        assert!((r[0] - 1.4).abs() < 1e-15);
        let (a, _) = gae(&[0.0; 4], &[0.0; 5], &[false; 4], 0.99, 0.95);
        assert_eq!(a, vec![0.0; 4]);
        let (a, _) = gae(&[1.0; 3], &[0.0; 4], &[false, false, true], 0.9, 1.0);
        assert!((a[0] - 2.71).abs() < 1e-12);
        assert!((a[1] - 1.9).abs() < 1e-12);
        assert!((a[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gae_terminal_ignores_bootstrap_and_truncation_uses_it() {
        let (term, _) = gae(&[1.0], &[0.0, 100.0], &[true], 0.9, 0.95);
        let (trunc, _) = gae(&[1.0], &[0.0, 100.0], &[false], 0.9, 0.95);
        assert_eq!(term[0], 1.0);
        assert!((trunc[0] - 91.0).abs() < 1e-12);
    }

    #[test]
    fn gae_matches_discounted_td_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (g, l) = (0.97, 0.9);
        let r: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..13).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, _) = gae(&r, &v, &[false; 12], g, l);
        for t in 0..12 {
            let want: f64 = (t..12)
                .map(|k| (g * l).powi((k - t) as i32) * (r[k] + g * v[k + 1] - v[k]))
                .sum();
            assert!((a[t] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn advantage_normalisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut adv: Vec<f64> = (0..1000).map(|_| rng.random_range(-3.0..50.0)).collect();
        normalize_advantages(&mut adv);
        let mean = adv.iter().sum::<f64>() / 1000.0;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 1000.0).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn entropy_term_at_unit_std() {
        let (mut policy, batch) = toy(5, 4, 3, 0.0);
        policy.log_std = vec![0.0; ACTION_DIM];
        let stats = loss(&policy, &batch, &PpoConfig::default());
        assert!((stats.entropy - 17.027).abs() < 1e-3);
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (mut policy, batch) = toy(6, 10, 5, 0.5);
        let cfg = PpoConfig::default();
        let (_, grad) = loss_and_grad(&policy, &batch, &cfg);
        let p0 = policy.params();
        let mut worst: f64 = 0.0;
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] = p0[k] + 1e-5;
            policy.set_params(&p);
            let up = loss(&policy, &batch, &cfg).total;
            p[k] = p0[k] - 1e-5;
            policy.set_params(&p);
            let down = loss(&policy, &batch, &cfg).total;
            worst = worst.max(relative_error(grad[k], (up - down) / 2e-5));
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    /// Per-sample ∇logp in parameter order, via single-row backward passes.
    fn grad_log_prob(policy: &Policy, batch: &Batch, i: usize) -> Vec<f64> {
        let row = batch.obs.select(Axis(0), &[i]);
        let (mu, cache) = policy.actor.forward_cached(&row.view());
        let mut d = Array2::zeros((1, ACTION_DIM));
        let mut d_ls = Vec::new();
        for j in 0..ACTION_DIM {
            let s = policy.log_std[j].exp();
            let z = (batch.actions[(i, j)] - mu[(0, j)]) / s;
            d[(0, j)] = z / s;
            d_ls.push(z * z - 1.0);
        }
        let mut g = Vec::new();
        policy.actor.backward(&cache, &d).append_params(&mut g);
        g.extend(std::iter::repeat_n(0.0, policy.critic.num_params()));
        g.extend(d_ls);
        g
    }

    fn policy_part(policy: &Policy, g: &[f64]) -> Vec<f64> {
        let a = policy.actor.num_params();
        let c = policy.critic.num_params();
        g[..a].iter().chain(&g[a + c..]).copied().collect()
    }

    #[test]
    fn clip_inactive_equals_unclipped_estimator() {
        let (policy, batch) = toy(7, 10, 5, 0.05);
        let cfg = PpoConfig {
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };
        let (stats, grad) = loss_and_grad(&policy, &batch, &cfg);
        assert_eq!(stats.clip_fraction, 0.0);
        let logp = log_probs(&policy, &batch.obs, &batch.actions);
        let mut want = vec![0.0; policy.num_params()];
        for i in 0..batch.len() {
            let w = (logp[i] - batch.old_log_prob[i]).exp() * batch.advantages[i] / batch.len() as f64;
            for (acc, g) in want.iter_mut().zip(grad_log_prob(&policy, &batch, i)) {
                *acc -= w * g;
            }
        }
        for (a, b) in policy_part(&policy, &grad).iter().zip(policy_part(&policy, &want)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn first_epoch_direction_is_vanilla_policy_gradient() {
        let (policy, mut batch) = toy(8, 10, 5, 0.0);
        batch.old_log_prob = log_probs(&policy, &batch.obs, &batch.actions);
        let cfg = PpoConfig {
            entropy_coef: 0.0,
            clip_ratio: 1e12,
            lambda: 1.0,
            epochs: 1,
            ..PpoConfig::default()
        };
        let (_, grad) = loss_and_grad(&policy, &batch, &cfg);
        let mut want = vec![0.0; policy.num_params()];
        for i in 0..batch.len() {
            let w = batch.advantages[i] / batch.len() as f64;
            for (acc, g) in want.iter_mut().zip(grad_log_prob(&policy, &batch, i)) {
                *acc -= w * g;
            }
        }
        for (a, b) in policy_part(&policy, &grad).iter().zip(policy_part(&policy, &want)) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn clipped_samples_contribute_nothing_to_the_actor() {
        let (policy, mut batch) = toy(10, 6, 4, 0.0);
        let logp = log_probs(&policy, &batch.obs, &batch.actions);
        // ratio = e² with positive advantage: far outside the band, clipped branch selected.
        batch.old_log_prob = logp.mapv(|l| l - 2.0);
        batch.advantages.fill(1.0);
        let cfg = PpoConfig {
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };
        let (stats, grad) = loss_and_grad(&policy, &batch, &cfg);
        assert_eq!(stats.clip_fraction, 1.0);
        assert!(policy_part(&policy, &grad).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn update_decreases_loss_and_rejects_non_finite() {
        let (mut policy, batch) = toy(11, 64, 5, 0.0);
        let cfg = PpoConfig {
            minibatch_size: 16,
            epochs: 4,
            learning_rate: 1e-3,
            ..PpoConfig::default()
        };
        let before = loss(&policy, &batch, &cfg).value;
        let mut adam = Adam::new(policy.num_params(), cfg.learning_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        update(&mut policy, &mut adam, &batch, &cfg, &mut rng).unwrap();
        assert!(loss(&policy, &batch, &cfg).value < before);

        let mut bad = batch.clone();
        bad.returns[3] = f64::NAN;
        let kept = policy.clone();
        let err = update(&mut policy, &mut adam, &bad, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, PpoError::NonFinite { epoch: 0, .. }));
        assert_eq!(policy, kept);
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let (mut policy, batch) = toy(12, 40, 5, 0.1);
            let cfg = PpoConfig {
                minibatch_size: 8,
                ..PpoConfig::default()
            };
            let mut adam = Adam::new(policy.num_params(), cfg.learning_rate);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let stats = update(&mut policy, &mut adam, &batch, &cfg, &mut rng).unwrap();
            (policy.params(), stats)
        };
        assert_eq!(run(), run());
    }
}
