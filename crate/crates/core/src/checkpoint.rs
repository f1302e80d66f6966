//! Binary checkpoints of a [`LearnerBundle`].
//!
//! Byte layout, all integers and floats little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `b"CFCK"` | 4 bytes |
//! | format version (= 1) | u32 |
//! | observation dim, action dim | u32, u32 |
//! | actor hidden layer count, then each width | u32, u32 × n |
//! | critic hidden layer count, then each width | u32, u32 × n |
//! | actor, critic 1, critic 2, actor target, critic 1 target, critic 2 target | each: u64 count, f32 × count |
//! | actor, critic 1, critic 2 optimizer states | each: u64 step, f32 × len (first moment), f32 × len (second moment) |
//! | critic update counter, actor update counter | u64, u64 |
//!
//! Files are written to a temporary sibling and renamed into place, so an
//! interrupted write never replaces a valid checkpoint.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::ACTION_DIM;
use crate::error::{Error, Result};
use crate::nn::{AdamState, MlpSpec, ParameterSet};
use crate::scalar::Real;
use crate::td3::{LearnerBundle, LearnerConfig, NetworkConfig};

pub const MAGIC: &[u8; 4] = b"CFCK";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_block<S: Real>(out: &mut Vec<u8>, p: &ParameterSet<S>) {
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    out.extend_from_slice(&p.to_le_f32_bytes());
}

fn put_adam<S: Real>(out: &mut Vec<u8>, a: &AdamState<S>) {
    out.extend_from_slice(&a.t.to_le_bytes());
    for v in [&a.m, &a.v] {
        out.extend_from_slice(
            &ParameterSet { values: v.clone() }.to_le_f32_bytes(),
        );
    }
}

/// Serializes the six parameter sets, three optimizer states and counters.
pub fn encode<S: Real>(bundle: &LearnerBundle<S>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, bundle.actor_spec.input_dim);
    put_u32(&mut out, bundle.actor_spec.output_dim);
    for spec in [&bundle.actor_spec, &bundle.critic_spec] {
        put_u32(&mut out, spec.hidden_layers.len());
        for &w in &spec.hidden_layers {
            put_u32(&mut out, w);
        }
    }
    for p in [
        &bundle.actor,
        &bundle.critic1,
        &bundle.critic2,
        &bundle.actor_target,
        &bundle.critic1_target,
        &bundle.critic2_target,
    ] {
        put_block(&mut out, p);
    }
    for a in [&bundle.actor_adam, &bundle.critic1_adam, &bundle.critic2_adam] {
        put_adam(&mut out, a);
    }
    out.extend_from_slice(&bundle.step.to_le_bytes());
    out.extend_from_slice(&bundle.actor_updates.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn floats<S: Real>(&mut self, n: usize) -> Result<Vec<S>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Checkpoint("block length overflows".into()))?;
        Ok(ParameterSet::from_le_f32_bytes(self.take(len)?)?.values)
    }

    fn widths(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > 64 {
            return Err(Error::Checkpoint(format!("implausible hidden layer count {n}")));
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

/// Header fields, available without decoding the parameter blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

fn read_header(r: &mut Reader) -> Result<CheckpointHeader> {
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let obs_dim = r.u32()?;
    let action_dim = r.u32()?;
    if action_dim != ACTION_DIM {
        return Err(Error::Checkpoint(format!(
            "checkpoint action dimension {action_dim}, expected {ACTION_DIM}"
        )));
    }
    Ok(CheckpointHeader {
        obs_dim,
        action_dim,
        actor_hidden: r.widths()?,
        critic_hidden: r.widths()?,
    })
}

pub fn decode_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    read_header(&mut Reader { bytes, pos: 0 })
}

/// Rebuilds a bundle; `config` supplies the hyperparameters, which are not stored.
pub fn decode<S: Real>(bytes: &[u8], config: LearnerConfig, seed: u64) -> Result<LearnerBundle<S>> {
    let mut r = Reader { bytes, pos: 0 };
    let h = read_header(&mut r)?;
    let net = NetworkConfig {
        actor_hidden: h.actor_hidden.clone(),
        critic_hidden: h.critic_hidden.clone(),
        ..NetworkConfig::default()
    };
    let actor_spec = net
        .actor_spec(h.obs_dim)
        .map_err(|e| Error::Checkpoint(format!("invalid actor shape: {e}")))?;
    let critic_spec = net
        .critic_spec(h.obs_dim)
        .map_err(|e| Error::Checkpoint(format!("invalid critic shape: {e}")))?;
    let expected = |spec: &MlpSpec| spec.parameter_count();
    let mut blocks = Vec::with_capacity(6);
    for (k, spec) in [&actor_spec, &critic_spec, &critic_spec]
        .iter()
        .cycle()
        .take(6)
        .enumerate()
    {
        let n = r.u64()? as usize;
        if n != expected(spec) {
            return Err(Error::Checkpoint(format!(
                "parameter block {k} has {n} values, expected {}",
                expected(spec)
            )));
        }
        let values = r.floats::<S>(n)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("parameter block {k} is not finite")));
        }
        blocks.push(ParameterSet { values });
    }
    let mut adams = Vec::with_capacity(3);
    for &spec in &[&actor_spec, &critic_spec, &critic_spec] {
        let t = r.u64()?;
        let n = expected(spec);
        adams.push(AdamState {
            m: r.floats(n)?,
            v: r.floats(n)?,
            t,
        });
    }
    let step = r.u64()?;
    let actor_updates = r.u64()?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    let [actor, c1, c2, at, c1t, c2t]: [ParameterSet<S>; 6] =
        blocks.try_into().expect("six blocks");
    let [aa, c1a, c2a]: [AdamState<S>; 3] = adams.try_into().expect("three states");
    let mut b = LearnerBundle::from_parts(
        actor_spec,
        critic_spec,
        actor,
        c1,
        c2,
        config,
        ChaCha8Rng::seed_from_u64(seed),
    );
    b.actor_target = at;
    b.critic1_target = c1t;
    b.critic2_target = c2t;
    b.actor_adam = aa;
    b.critic1_adam = c1a;
    b.critic2_adam = c2a;
    b.step = step;
    b.actor_updates = actor_updates;
    Ok(b)
}

pub fn save<S: Real>(bundle: &LearnerBundle<S>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(bundle)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load<S: Real>(path: &Path, config: LearnerConfig, seed: u64) -> Result<LearnerBundle<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> LearnerBundle<f32> {
        let net = NetworkConfig {
            actor_hidden: vec![5, 3],
            critic_hidden: vec![4],
            actor_final_scale: 0.01,
        };
        LearnerBundle::new(6, &net, LearnerConfig::default(), 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut b = bundle();
        b.step = 17;
        b.actor_updates = 8;
        b.critic2_adam.t = 4;
        b.critic2_adam.m[0] = 0.25;
        let bytes = encode(&b);
        let d: LearnerBundle<f32> = decode(&bytes, LearnerConfig::default(), 0).unwrap();
        assert_eq!(encode(&d), bytes);
        assert_eq!(d.actor, b.actor);
        assert_eq!(d.critic2_adam, b.critic2_adam);
        assert_eq!(d.step, 17);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = encode(&bundle());
        assert!(decode::<f32>(&bytes[..bytes.len() - 1], LearnerConfig::default(), 0).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode::<f32>(&bad, LearnerConfig::default(), 0),
            Err(Error::Checkpoint(_))
        ));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(decode::<f32>(&v2, LearnerConfig::default(), 0).is_err());
    }

    #[test]
    fn header_reports_dims() {
        let h = decode_header(&encode(&bundle())).unwrap();
        assert_eq!(h.obs_dim, 6);
        assert_eq!(h.actor_hidden, vec![5, 3]);
        assert_eq!(h.critic_hidden, vec![4]);
    }
}
