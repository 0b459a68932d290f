//! `TFA1` adapter checkpoints.
//!
//! ```text
//! "TFA1"
//! u32 d, u32 h, f32 alpha, f32 beta, u64 seed, u32 epoch
//! image adapter: f32 W1[d*h], b1[h], W2[h*d], b2[d]
//! text adapter:  same
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{AdapterParams, Mlp};
use crate::binio::{self, ByteReader};
use crate::error::{Error, Result};

pub const TFA_MAGIC: &[u8; 4] = b"TFA1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: AdapterParams,
    pub seed: u64,
    /// Epochs trained.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let mut out = Vec::new();
        out.extend_from_slice(TFA_MAGIC);
        binio::put_u32(&mut out, binio::to_u32(p.dim(), "d")?);
        binio::put_u32(&mut out, binio::to_u32(p.hidden_dim(), "h")?);
        binio::put_f32(&mut out, p.alpha);
        binio::put_f32(&mut out, p.beta);
        binio::put_u64(&mut out, self.seed);
        binio::put_u32(&mut out, binio::to_u32(self.epoch, "epoch")?);
        for mlp in [&p.image, &p.text] {
            for s in mlp.slices() {
                binio::put_f32_block(&mut out, s.iter());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(TFA_MAGIC)?;
        let d = r.u32("d")? as usize;
        let h = r.u32("h")? as usize;
        let alpha = f64::from(r.f32("alpha")?);
        let beta = f64::from(r.f32("beta")?);
        let seed = r.u64("seed")?;
        let epoch = r.u32("epoch")? as usize;
        let read_mlp = |r: &mut ByteReader| -> Result<Mlp> {
            let w1 = r.f32_block(d * h, "W1")?;
            let b1 = r.f32_block(h, "b1")?;
            let w2 = r.f32_block(h * d, "W2")?;
            let b2 = r.f32_block(d, "b2")?;
            Ok(Mlp {
                w1: Array2::from_shape_vec((d, h), w1).expect("sized above"),
                b1: Array1::from(b1),
                w2: Array2::from_shape_vec((h, d), w2).expect("sized above"),
                b2: Array1::from(b2),
            })
        };
        let image = read_mlp(&mut r)?;
        let text = read_mlp(&mut r)?;
        if r.remaining() != 0 {
            return Err(Error::format(
                r.offset(),
                format!("{} trailing bytes after weights", r.remaining()),
            ));
        }
        let params = AdapterParams::new(image, text, alpha, beta)
            .map_err(|e| Error::format(8, e.to_string()))?;
        Ok(Self {
            params,
            seed,
            epoch,
        })
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &ck.to_bytes()?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&binio::read_file(path.as_ref())?)
}
