//! Self-describing binary checkpoints.
//!
//! Layout (little-endian): magic `QMCK`, u32 version, u64 iteration, u64-length
//! UTF-8 metadata (the run's resolved config), f64 leaky slope, the normaliser
//! (u64 dim, f64 count, f64 clip, mean, var), actor and critic (u64 layer count,
//! then per layer u64 out, u64 in, weights row-major, biases) and u64-length log_std.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::nn::{Linear, Mlp};
use super::policy::{Normalizer, Policy};

pub const MAGIC: &[u8; 4] = b"QMCK";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated or malformed checkpoint: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    /// Resolved configuration of the run that produced the weights (TOML).
    pub metadata: String,
    pub policy: Policy,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }

    fn mlp(&mut self, m: &Mlp) {
        self.u64(m.layers.len() as u64);
        for l in &m.layers {
            self.u64(l.outputs() as u64);
            self.u64(l.inputs() as u64);
            self.f64s(l.w.iter());
            self.f64s(l.b.iter());
        }
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        if self.0.len() < n {
            return Err(CheckpointError::Malformed("unexpected end of file"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        let n = self.u64()?;
        if n > (self.0.len() as u64) {
            return Err(CheckpointError::Malformed("length exceeds file size"));
        }
        Ok(n as usize)
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn mlp(&mut self, slope: f64) -> Result<Mlp, CheckpointError> {
        let n = self.len()?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let out = self.len()?;
            let inp = self.len()?;
            let w = Array2::from_shape_vec((out, inp), self.f64s(out * inp)?)
                .map_err(|_| CheckpointError::Malformed("layer shape"))?;
            let b = Array1::from(self.f64s(out)?);
            layers.push(Linear { w, b });
        }
        if layers.windows(2).any(|p| p[0].outputs() != p[1].inputs()) || layers.is_empty() {
            return Err(CheckpointError::Malformed("inconsistent layer shapes"));
        }
        Ok(Mlp { layers, slope })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.u64(self.iteration);
        w.u64(self.metadata.len() as u64);
        w.0.extend_from_slice(self.metadata.as_bytes());
        let p = &self.policy;
        w.f64(p.actor.slope);
        let n = &p.normalizer;
        w.u64(n.dim() as u64);
        w.f64(n.count);
        w.f64(n.clip);
        w.f64s(&n.mean);
        w.f64s(&n.var);
        w.mlp(&p.actor);
        w.mlp(&p.critic);
        w.u64(p.log_std.len() as u64);
        w.f64s(&p.log_std);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader(bytes);
        if r.take(4).map_err(|_| CheckpointError::Magic)? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let iteration = r.u64()?;
        let meta_len = r.len()?;
        let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("metadata is not UTF-8"))?;
        let slope = r.f64()?;
        let dim = r.len()?;
        let count = r.f64()?;
        let clip = r.f64()?;
        let mean = r.f64s(dim)?;
        let var = r.f64s(dim)?;
        let actor = r.mlp(slope)?;
        let critic = r.mlp(slope)?;
        let n_std = r.len()?;
        let log_std = r.f64s(n_std)?;
        if !r.0.is_empty() {
            return Err(CheckpointError::Malformed("trailing bytes"));
        }
        if actor.input_dim() != dim || critic.input_dim() != dim || critic.output_dim() != 1 || actor.output_dim() != n_std {
            return Err(CheckpointError::Malformed("network shapes disagree"));
        }
        Ok(Self {
            iteration,
            metadata,
            policy: Policy {
                actor,
                critic,
                log_std,
                normalizer: Normalizer { mean, var, count, clip },
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut policy = Policy::new(20, &[8, 6], 0.01, -1.3, &mut rng);
        let data = Array2::from_shape_fn((30, 20), |_| rng.random_range(-5.0..5.0));
        policy.normalizer.update(&data.view());
        Checkpoint {
            iteration: 42,
            metadata: "[ppo]\ngamma = 0.99\n".into(),
            policy,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let obs: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).cos() * 3.0).collect();
        let (a, b) = (ck.policy.forward(&obs).unwrap(), back.policy.forward(&obs).unwrap());
        for j in 0..12 {
            assert_eq!(a.mean[j].to_bits(), b.mean[j].to_bits());
        }
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(back.to_bytes(), ck.to_bytes());
    }

    #[test]
    fn rejects_corrupt_files() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(CheckpointError::Magic)));
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(CheckpointError::Version(9))));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Malformed(_))
        ));
        let mut v = bytes;
        v.push(0);
        assert!(matches!(Checkpoint::from_bytes(&v), Err(CheckpointError::Malformed(_))));
    }
}
