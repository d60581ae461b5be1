//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "RLCK"
//! version u32      currently 1
//! kind    u8       0 = plain MLP, 1 = actor-critic
//! kind 0: n_sizes u32, then each layer width as u32
//! kind 1: n_trunk u32, trunk widths as u32, n_actions u32
//! tensors          for each parameter tensor in canonical order
//!                  (per layer: weights row-major, then biases):
//!                  len u64, then len f64 values
//! has_opt u8       0/1
//! if has_opt:      step u64, first-moment tensors, second-moment
//!                  tensors (same shapes/order as parameters)
//! ```
//!
//! Save→load→save is byte-identical for finite parameters.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{ActorCriticNet, AdamState, Layer, Mlp};

const MAGIC: &[u8; 4] = b"RLCK";
const VERSION: u32 = 1;
const KIND_MLP: u8 = 0;
const KIND_ACTOR_CRITIC: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint holds a different model kind")]
    WrongKind,
    #[error("malformed checkpoint: {0}")]
    Malformed(&'static str),
}

fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_tensor(w: &mut impl Write, t: &[f64]) -> io::Result<()> {
    write_u64(w, t.len() as u64)?;
    for x in t {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u8(r: &mut impl Read) -> io::Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf)?;
    Ok(buf[0])
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_tensor(r: &mut impl Read, expect_len: usize) -> Result<Vec<f64>, CheckpointError> {
    let len = read_u64(r)? as usize;
    if len != expect_len {
        return Err(CheckpointError::Malformed("tensor length mismatch"));
    }
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_header(w: &mut impl Write, kind: u8) -> io::Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    w.write_all(&[kind])
}

fn read_header(r: &mut impl Read, want_kind: u8) -> Result<(), CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    if read_u8(r)? != want_kind {
        return Err(CheckpointError::WrongKind);
    }
    Ok(())
}

fn write_optimizer(
    w: &mut impl Write,
    opt: Option<&AdamState>,
) -> io::Result<()> {
    match opt {
        None => w.write_all(&[0]),
        Some(adam) => {
            w.write_all(&[1])?;
            write_u64(w, adam.step)?;
            for t in &adam.m {
                write_tensor(w, t)?;
            }
            for t in &adam.v {
                write_tensor(w, t)?;
            }
            Ok(())
        }
    }
}

fn read_optimizer(
    r: &mut impl Read,
    shapes: &[usize],
) -> Result<Option<AdamState>, CheckpointError> {
    match read_u8(r)? {
        0 => Ok(None),
        1 => {
            let mut adam = AdamState::new(shapes);
            adam.step = read_u64(r)?;
            for (i, n) in shapes.iter().enumerate() {
                adam.m[i] = read_tensor(r, *n)?;
            }
            for (i, n) in shapes.iter().enumerate() {
                adam.v[i] = read_tensor(r, *n)?;
            }
            Ok(Some(adam))
        }
        _ => Err(CheckpointError::Malformed("bad optimizer flag")),
    }
}

pub fn save_mlp(
    path: &Path,
    net: &Mlp,
    opt: Option<&AdamState>,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, KIND_MLP)?;
    write_u32(&mut w, net.sizes.len() as u32)?;
    for s in &net.sizes {
        write_u32(&mut w, *s as u32)?;
    }
    write_params_then_opt(&mut w, &net.param_slices(), opt)?;
    w.flush()?;
    Ok(())
}

fn write_params_then_opt(
    w: &mut impl Write,
    params: &[&[f64]],
    opt: Option<&AdamState>,
) -> io::Result<()> {
    for t in params {
        write_tensor(w, t)?;
    }
    write_optimizer(w, opt)
}

pub fn load_mlp(path: &Path) -> Result<(Mlp, Option<AdamState>), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, KIND_MLP)?;
    let n_sizes = read_u32(&mut r)? as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(CheckpointError::Malformed("implausible layer count"));
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(read_u32(&mut r)? as usize);
    }
    if sizes.iter().any(|s| *s == 0) {
        return Err(CheckpointError::Malformed("zero layer width"));
    }
    let mut layers = Vec::with_capacity(n_sizes - 1);
    for win in sizes.windows(2) {
        let (in_dim, out_dim) = (win[0], win[1]);
        let w = read_tensor(&mut r, in_dim * out_dim)?;
        let b = read_tensor(&mut r, out_dim)?;
        layers.push(Layer { w, b, in_dim, out_dim });
    }
    let net = Mlp { layers, sizes };
    let opt = read_optimizer(&mut r, &net.param_shapes())?;
    Ok((net, opt))
}

pub fn save_actor_critic(
    path: &Path,
    net: &ActorCriticNet,
    opt: Option<&AdamState>,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, KIND_ACTOR_CRITIC)?;
    write_u32(&mut w, net.trunk_sizes.len() as u32)?;
    for s in &net.trunk_sizes {
        write_u32(&mut w, *s as u32)?;
    }
    write_u32(&mut w, net.n_actions() as u32)?;
    write_params_then_opt(&mut w, &net.param_slices(), opt)?;
    w.flush()?;
    Ok(())
}

pub fn load_actor_critic(
    path: &Path,
) -> Result<(ActorCriticNet, Option<AdamState>), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, KIND_ACTOR_CRITIC)?;
    let n_sizes = read_u32(&mut r)? as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(CheckpointError::Malformed("implausible trunk depth"));
    }
    let mut trunk_sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        trunk_sizes.push(read_u32(&mut r)? as usize);
    }
    let n_actions = read_u32(&mut r)? as usize;
    if trunk_sizes.iter().any(|s| *s == 0) || n_actions == 0 {
        return Err(CheckpointError::Malformed("zero width"));
    }
    let mut trunk = Vec::with_capacity(n_sizes - 1);
    for win in trunk_sizes.windows(2) {
        let (in_dim, out_dim) = (win[0], win[1]);
        let w = read_tensor(&mut r, in_dim * out_dim)?;
        let b = read_tensor(&mut r, out_dim)?;
        trunk.push(Layer { w, b, in_dim, out_dim });
    }
    let top = *trunk_sizes.last().unwrap();
    let actor = Layer {
        w: read_tensor(&mut r, top * n_actions)?,
        b: read_tensor(&mut r, n_actions)?,
        in_dim: top,
        out_dim: n_actions,
    };
    let critic = Layer {
        w: read_tensor(&mut r, top)?,
        b: read_tensor(&mut r, 1)?,
        in_dim: top,
        out_dim: 1,
    };
    let net = ActorCriticNet { trunk, actor, critic, trunk_sizes };
    let opt = read_optimizer(&mut r, &net.param_shapes())?;
    Ok((net, opt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_round_trip_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[9, 16, 7], &mut rng);
        let mut adam = AdamState::new(&net.param_shapes());
        adam.step = 42;
        adam.m[0][3] = 0.125;
        adam.v[2][1] = 7.5e-3;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_mlp(&path, &net, Some(&adam)).unwrap();
        let (loaded, opt) = load_mlp(&path).unwrap();
        assert_eq!(loaded, net);
        assert_eq!(opt.unwrap(), adam);

        // forward output identical bit for bit
        let x = [0.1, -0.2, 0.3, 0.0, 0.5, -0.6, 0.7, 0.9, -1.0];
        let a = net.forward(&x);
        let b = loaded.forward(&x);
        assert_eq!(a, b);

        // re-save produces identical bytes
        let path2 = dir.path().join("net2.ckpt");
        save_mlp(&path2, &loaded, Some(&adam)).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn actor_critic_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = ActorCriticNet::new(&[9, 12, 10], 7, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ac.ckpt");
        save_actor_critic(&path, &net, None).unwrap();
        let (loaded, opt) = load_actor_critic(&path).unwrap();
        assert_eq!(loaded, net);
        assert!(opt.is_none());
    }

    #[test]
    fn rejects_wrong_kind_and_garbage() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::new(&[3, 2], &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_mlp(&path, &net, None).unwrap();
        assert!(matches!(load_actor_critic(&path), Err(CheckpointError::WrongKind)));

        let garbage = dir.path().join("g.ckpt");
        std::fs::write(&garbage, b"not a checkpoint").unwrap();
        assert!(matches!(load_mlp(&garbage), Err(CheckpointError::BadMagic)));
    }
}
