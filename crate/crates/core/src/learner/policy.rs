//! Gaussian policy with separate actor and critic networks and running
//! observation normalisation.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::nn::Mlp;
use crate::env::{ActionSource, ACTION_DIM};

/// ½ ln(2πe), the entropy of a unit normal.
pub const HALF_LOG_2PI_E: f64 = 1.418_938_533_204_672_7;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("observation has {got} values, the policy expects {expected}")]
    Shape { expected: usize, got: usize },
}

/// Running per-coordinate mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    pub clip: f64,
}

impl Normalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
            clip: 10.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges the statistics of a batch (rows are samples).
    pub fn update(&mut self, batch: &ArrayView2<f64>) {
        let n = batch.nrows() as f64;
        if n == 0.0 {
            return;
        }
        for (j, col) in batch.columns().into_iter().enumerate() {
            let mean_b = col.sum() / n;
            let var_b = col.iter().map(|x| (x - mean_b).powi(2)).sum::<f64>() / n;
            if self.count == 0.0 {
                self.mean[j] = mean_b;
                self.var[j] = var_b;
                continue;
            }
            let total = self.count + n;
            let delta = mean_b - self.mean[j];
            let m2 = self.var[j] * self.count + var_b * n + delta * delta * self.count * n / total;
            self.mean[j] += delta * n / total;
            self.var[j] = m2 / total;
        }
        self.count += n;
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(v, (m, s2))| ((v - m) / (s2 + 1e-8).sqrt()).clamp(-self.clip, self.clip))
            .collect()
    }

    pub fn normalize_batch(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = ((*v - self.mean[j]) / (self.var[j] + 1e-8).sqrt()).clamp(-self.clip, self.clip);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mean: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: Vec<f64>,
    pub normalizer: Normalizer,
}

impl Policy {
    pub fn new(obs_dim: usize, hidden: &[usize], slope: f64, init_log_std: f64, rng: &mut ChaCha8Rng) -> Self {
        let sizes = |out| {
            let mut s = vec![obs_dim];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        Self {
            actor: Mlp::new(&sizes(ACTION_DIM), slope, 0.01, rng),
            critic: Mlp::new(&sizes(1), slope, 1.0, rng),
            log_std: vec![init_log_std; ACTION_DIM],
            normalizer: Normalizer::new(obs_dim),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    fn check(&self, obs: &[f64]) -> Result<(), PolicyError> {
        if obs.len() != self.obs_dim() {
            return Err(PolicyError::Shape {
                expected: self.obs_dim(),
                got: obs.len(),
            });
        }
        Ok(())
    }

    /// Normalises `obs` with the frozen statistics and evaluates both networks.
    pub fn forward(&self, obs: &[f64]) -> Result<PolicyOutput, PolicyError> {
        self.check(obs)?;
        let x = self.normalizer.normalize(obs);
        let mean = self.actor.forward_one(&x);
        Ok(PolicyOutput {
            mean: to_action(&mean),
            log_std: to_action(&self.log_std),
            value: self.critic.forward_one(&x)[0],
        })
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<[f64; ACTION_DIM], PolicyError> {
        self.check(obs)?;
        Ok(to_action(&self.actor.forward_one(&self.normalizer.normalize(obs))))
    }

    pub fn sample_action(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<[f64; ACTION_DIM], PolicyError> {
        let mut a = self.mean_action(obs)?;
        for (ai, ls) in a.iter_mut().zip(&self.log_std) {
            let z: f64 = rng.sample(StandardNormal);
            *ai += ls.exp() * z;
        }
        Ok(a)
    }

    /// Entropy of the action distribution (nats), identical for every state.
    pub fn entropy(&self) -> f64 {
        gaussian_entropy(&self.log_std)
    }

    pub fn num_params(&self) -> usize {
        self.actor.num_params() + self.critic.num_params() + self.log_std.len()
    }

    /// Flat parameters: actor, critic, then log_std.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        self.actor.append_params(&mut p);
        self.critic.append_params(&mut p);
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params(), "parameter vector length");
        let k = self.actor.load_params(p);
        let k = k + self.critic.load_params(&p[k..]);
        self.log_std.copy_from_slice(&p[k..]);
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite() && self.log_std.iter().all(|v| v.is_finite())
    }
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + HALF_LOG_2PI_E).sum()
}

pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LOG_2PI
        })
        .sum()
}

fn to_action(v: &[f64]) -> [f64; ACTION_DIM] {
    let mut a = [0.0; ACTION_DIM];
    a.copy_from_slice(v);
    a
}

/// Samples from the policy; used for rollouts.
pub struct StochasticActor<'a>(pub &'a Policy);

/// Acts with the distribution mean; used for evaluation.
pub struct MeanActor<'a>(pub &'a Policy);

impl ActionSource for StochasticActor<'_> {
    fn act(&mut self, obs: &[f64], rng: &mut ChaCha8Rng) -> [f64; ACTION_DIM] {
        self.0.sample_action(obs, rng).expect("observation width fixed by the env config")
    }
}

impl ActionSource for MeanActor<'_> {
    fn act(&mut self, obs: &[f64], _rng: &mut ChaCha8Rng) -> [f64; ACTION_DIM] {
        self.0.mean_action(obs).expect("observation width fixed by the env config")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;

    #[test]
    fn zero_weights_give_zero_mean_and_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = Policy::new(234, &[16, 16], 0.01, 0.25f64.ln(), &mut rng);
        let zeros = vec![0.0; p.num_params() - ACTION_DIM];
        let mut flat = zeros;
        flat.extend_from_slice(&p.log_std.clone());
        p.set_params(&flat);
        for s in 0..3 {
            let obs: Vec<f64> = (0..234).map(|i| (i * (s + 1)) as f64 * 0.37 - 20.0).collect();
            let out = p.forward(&obs).unwrap();
            assert_eq!(out.mean, [0.0; 12]);
            assert_eq!(out.value, 0.0);
        }
    }

    #[test]
    fn forward_is_deterministic_and_checks_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Policy::new(30, &[8, 8], 0.01, 0.0, &mut rng);
        let obs: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let a = p.forward(&obs).unwrap();
        let b = p.forward(&obs).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            p.forward(&obs[..29]),
            Err(PolicyError::Shape {
                expected: 30,
                got: 29
            })
        );
    }

    #[test]
    fn default_architecture() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Policy::new(234, &[256, 256], 0.01, 0.25f64.ln(), &mut rng);
        assert_eq!(p.actor.sizes(), vec![234, 256, 256, 12]);
        assert_eq!(p.critic.sizes(), vec![234, 256, 256, 1]);
        assert_eq!(p.log_std.len(), 12);
        assert!(p.is_finite());
    }

    #[test]
    fn entropy_of_unit_gaussian() {
        let h = gaussian_entropy(&[0.0; 12]);
        let want = 12.0 * 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((h - want).abs() < 1e-12);
        assert!((h - 17.027).abs() < 1e-3);
    }

    #[test]
    fn log_prob_matches_density() {
        let a = [0.3f64, -1.0];
        let m = [0.1, 0.5];
        let ls = [-0.5f64, 0.2];
        let mut density: f64 = 1.0;
        for i in 0..2 {
            let s = ls[i].exp();
            density *= (-(a[i] - m[i]).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        }
        assert!((gaussian_log_prob(&a, &m, &ls) - density.ln()).abs() < 1e-12);
    }

    #[test]
    fn normalizer_matches_batch_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Array2::from_shape_fn((50, 3), |(_, j)| rng.random_range(-1.0..1.0) * (j + 1) as f64 + j as f64);
        let mut n = Normalizer::new(3);
        n.update(&data.slice(ndarray::s![..20, ..]));
        n.update(&data.slice(ndarray::s![20.., ..]));
        for j in 0..3 {
            let col = data.column(j);
            let mean = col.sum() / 50.0;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0;
            assert!((n.mean[j] - mean).abs() < 1e-12);
            assert!((n.var[j] - var).abs() < 1e-12);
        }
        assert_eq!(n.count, 50.0);
        let z = n.normalize(&[1e9, 0.0, -1e9]);
        assert_eq!((z[0], z[2]), (10.0, -10.0));
    }
}
