//! Resumable distillation state, stored at full precision.

use datm_core::distill::{DistillState, LogRow, MatchWindow};

use super::codec::{Decoder, Encoder};
use super::dsyn::{get_body, put_body};
use super::FormatError;

const MAGIC: &[u8; 4] = b"DSTA";
const VERSION: u32 = 1;

pub fn encode(state: &DistillState, config_digest: &[u8; 32]) -> Result<Vec<u8>, FormatError> {
    let mut e = Encoder::new(MAGIC, VERSION);
    e.bytes(config_digest);
    put_body(&mut e, &state.synset, true)?;
    e.f64s(&state.vel_images);
    e.f64s(&state.vel_logits);
    e.f64(state.vel_alpha);
    let w = &state.window;
    for v in [w.t_lower, w.t_float, w.t_upper, w.t_init, w.ramp_iters, w.span, w.steps, state.iter, state.failures] {
        e.u64(v as u64);
    }
    e.u64(state.log.len() as u64);
    for r in &state.log {
        for v in [r.iter, r.expert, r.t, r.t_float] {
            e.u64(v as u64);
        }
        e.f64s(&[r.loss, r.alpha, r.gnorm_img, r.gnorm_logit, r.gnorm_alpha, r.ms, r.label_std]);
    }
    Ok(e.finish())
}

/// Returns the stored config digest alongside the state.
pub fn decode(bytes: &[u8]) -> Result<([u8; 32], DistillState), FormatError> {
    let mut d = Decoder::open(bytes, MAGIC)?;
    if d.version != VERSION {
        return Err(FormatError::Version(d.version));
    }
    let digest = d.array32()?;
    let synset = get_body(&mut d, true)?;
    let vel_images = d.f64s(synset.images.len())?;
    let vel_logits = d.f64s(synset.logits.len())?;
    let vel_alpha = d.f64()?;
    let mut u = [0usize; 9];
    for v in &mut u {
        *v = d.usize64()?;
    }
    let window = MatchWindow {
        t_lower: u[0],
        t_float: u[1],
        t_upper: u[2],
        t_init: u[3],
        ramp_iters: u[4],
        span: u[5],
        steps: u[6],
    };
    let rows = d.usize64()?;
    let mut log = Vec::with_capacity(rows.min(1 << 20));
    for _ in 0..rows {
        let (iter, expert, t, t_float) = (d.usize64()?, d.usize64()?, d.usize64()?, d.usize64()?);
        let f = d.f64s(7)?;
        log.push(LogRow {
            iter,
            expert,
            t,
            t_float,
            loss: f[0],
            alpha: f[1],
            gnorm_img: f[2],
            gnorm_logit: f[3],
            gnorm_alpha: f[4],
            ms: f[5],
            label_std: f[6],
        });
    }
    d.finish()?;
    let state = DistillState { synset, vel_images, vel_logits, vel_alpha, window, iter: u[7], failures: u[8], log };
    Ok((digest, state))
}
