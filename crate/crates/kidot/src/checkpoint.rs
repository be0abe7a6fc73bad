//! Versioned training checkpoints.
//!
//! Layout: magic `KIDOTCKP`, `u32` version, a length-prefixed TOML block
//! holding the training config and loop counters, then a `u32` segment
//! count followed by named segments (`u32` name length, name, `u64` value
//! count, little-endian `f64` values).

use std::fs;
use std::path::Path;

use kidot_core::param::ParamVector;
use kidot_core::training::{RmsProp, TrainConfig, TrainState};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::Reader;

const MAGIC: &[u8; 8] = b"KIDOTCKP";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    stale_epochs: usize,
    stopped_early: bool,
    rms_rho: [f64; 2],
    rms_eps: [f64; 2],
}

fn segments(state: &TrainState) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    for (prefix, p) in [("phi", &state.phi), ("theta", &state.theta)] {
        for seg in p.layout().segments() {
            out.push((format!("{prefix}/{}", seg.name), p.values()[seg.range()].to_vec()));
        }
    }
    out.push(("opt_phi/v".into(), state.opt_phi.v.clone()));
    out.push(("opt_theta/v".into(), state.opt_theta.v.clone()));
    out.push(("best_val_psnr".into(), state.best_val_psnr.into_iter().collect()));
    out
}

pub fn to_bytes(cfg: &TrainConfig, state: &TrainState) -> Result<Vec<u8>> {
    let header = Header {
        config: cfg.clone(),
        epoch: state.epoch,
        stale_epochs: state.stale_epochs,
        stopped_early: state.stopped_early,
        rms_rho: [state.opt_phi.rho, state.opt_theta.rho],
        rms_eps: [state.opt_phi.eps, state.opt_theta.eps],
    };
    let text = toml::to_string(&header).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let segs = segments(state);
    out.extend_from_slice(&(segs.len() as u32).to_le_bytes());
    for (name, values) in segs {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, cfg: &TrainConfig, state: &TrainState) -> Result<()> {
    fs::write(path, to_bytes(cfg, state)?).map_err(Error::io(path))
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<(TrainConfig, TrainState)> {
    let mut r = Reader::new(bytes, path);
    if r.take(8)? != MAGIC {
        return Err(Error::corrupt(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: version,
            expected: VERSION,
        });
    }
    let text_len = r.u64()? as usize;
    let text = std::str::from_utf8(r.take(text_len)?).map_err(|_| Error::corrupt(path, "config block is not UTF-8"))?;
    let header: Header = toml::from_str(text).map_err(|e| Error::corrupt(path, format!("config block: {e}")))?;
    let count = r.u32()? as usize;
    let mut segs = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| Error::corrupt(path, "segment name is not UTF-8"))?
            .to_string();
        let n = r.u64()? as usize;
        segs.push((name, r.f64s(n)?));
    }
    r.finish()?;

    let cfg = header.config;
    let mut segs = segs.into_iter();
    let mut next = |expected: &str, len: Option<usize>| -> Result<Vec<f64>> {
        let (name, values) = segs
            .next()
            .ok_or_else(|| Error::Core(kidot_core::Error::LayoutMismatch(format!("missing segment {expected}"))))?;
        if name != expected || len.is_some_and(|l| l != values.len()) {
            return Err(Error::Core(kidot_core::Error::LayoutMismatch(format!(
                "segment {name} ({} values) where {expected} was expected",
                values.len()
            ))));
        }
        Ok(values)
    };
    let mut read_params = |prefix: &str, layout: kidot_core::ParamLayout| -> Result<ParamVector> {
        let mut values = Vec::with_capacity(layout.total_len());
        for seg in layout.segments() {
            values.extend(next(&format!("{prefix}/{}", seg.name), Some(seg.len()))?);
        }
        Ok(ParamVector::from_values(layout, values)?)
    };
    let phi = read_params("phi", cfg.regularizer.layout()?)?;
    let theta = read_params("theta", cfg.critic.layout()?)?;
    let v_phi = next("opt_phi/v", Some(phi.len()))?;
    let v_theta = next("opt_theta/v", Some(theta.len()))?;
    let best = next("best_val_psnr", None)?;
    if best.len() > 1 {
        return Err(Error::corrupt(path, "best_val_psnr holds more than one value"));
    }
    if segs.next().is_some() {
        return Err(Error::Core(kidot_core::Error::LayoutMismatch(
            "unexpected extra segments".into(),
        )));
    }
    let state = TrainState {
        phi,
        theta,
        opt_phi: RmsProp {
            rho: header.rms_rho[0],
            eps: header.rms_eps[0],
            v: v_phi,
        },
        opt_theta: RmsProp {
            rho: header.rms_rho[1],
            eps: header.rms_eps[1],
            v: v_theta,
        },
        epoch: header.epoch,
        best_val_psnr: best.first().copied(),
        stale_epochs: header.stale_epochs,
        stopped_early: header.stopped_early,
    };
    Ok((cfg, state))
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainConfig, TrainState)> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    from_bytes(&bytes, path)
}

/// Loads a checkpoint and refuses it unless its architectures match `cfg`.
pub fn load_checkpoint_for(path: &Path, cfg: &TrainConfig) -> Result<TrainState> {
    let (saved, state) = load_checkpoint(path)?;
    if saved.regularizer != cfg.regularizer || saved.critic != cfg.critic {
        return Err(Error::Core(kidot_core::Error::LayoutMismatch(
            "checkpoint architecture differs from the configured one".into(),
        )));
    }
    Ok(state)
}
