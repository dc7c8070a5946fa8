//! CCKP checkpoint files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "CCKP"  version:u32
//! input_height:u32 input_width:u32 n_hidden:u32 hidden_widths:[u32; n_hidden]
//! embedding_dim:u32 proj_dim:u32 step:u64
//! query parameters, then key parameters, each f32 in declaration order
//! n_queues:u32, then per queue (video space first, cycle space second):
//!   capacity:u32 dim:u32 write_ptr:u32 fill:u32
//!   video_ids:[u32; capacity] buffer:[f32; capacity * dim]
//! ```

use std::fs;
use std::path::Path;

use crate::encoder::{init_params, EncoderConfig, MomentumPair, Network, Role};
use crate::error::{Error, Result};
use crate::queue::QueueState;

pub const MAGIC: &[u8; 4] = b"CCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    pub nets: MomentumPair,
    /// `(video-space queue, cycle-space queue)`.
    pub queues: Option<(QueueState, QueueState)>,
    pub step: u64,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = &self.encoder;
        put_u32(&mut out, cfg.input_height);
        put_u32(&mut out, cfg.input_width);
        put_u32(&mut out, cfg.hidden_widths.len());
        for &w in &cfg.hidden_widths {
            put_u32(&mut out, w);
        }
        put_u32(&mut out, cfg.embedding_dim);
        put_u32(&mut out, cfg.proj_dim);
        out.extend_from_slice(&self.step.to_le_bytes());
        for net in [&self.nets.query, &self.nets.key] {
            for p in net.params() {
                put_f32s(&mut out, p.data());
            }
        }
        match &self.queues {
            None => put_u32(&mut out, 0),
            Some((a, b)) => {
                put_u32(&mut out, 2);
                for q in [a, b] {
                    put_u32(&mut out, q.capacity());
                    put_u32(&mut out, q.dim());
                    put_u32(&mut out, q.write_ptr());
                    put_u32(&mut out, q.fill());
                    for &v in q.raw_video_ids() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                    put_f32s(&mut out, q.raw_buffer());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}, expected \"CCKP\""),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported checkpoint version {version}"),
            });
        }
        let input_height = r.u32()? as usize;
        let input_width = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        if n_hidden > 64 {
            return Err(r.err(format!("implausible hidden layer count {n_hidden}")));
        }
        let hidden_widths = (0..n_hidden)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let encoder = EncoderConfig {
            input_height,
            input_width,
            hidden_widths,
            embedding_dim: r.u32()? as usize,
            proj_dim: r.u32()? as usize,
        };
        encoder
            .validate()
            .map_err(|e| r.err(format!("invalid encoder config: {e}")))?;
        let step = r.u64()?;

        let mut nets = init_params(&encoder, 0)?;
        for net in [&mut nets.query, &mut nets.key] {
            read_params(&mut r, net)?;
        }
        nets.key.backbone.role = Role::Key;

        let queues = match r.u32()? {
            0 => None,
            2 => Some((read_queue(&mut r)?, read_queue(&mut r)?)),
            n => return Err(r.err(format!("expected 0 or 2 queues, found {n}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            encoder,
            nets,
            queues,
            step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_params(r: &mut Reader<'_>, net: &mut Network<f32>) -> Result<()> {
    for p in net.params_mut() {
        let vals = r.f32s(p.numel())?;
        p.data_mut().copy_from_slice(&vals);
    }
    Ok(())
}

fn read_queue(r: &mut Reader<'_>) -> Result<QueueState> {
    let capacity = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let write_ptr = r.u32()? as usize;
    let fill = r.u32()? as usize;
    let ids = (0..capacity).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let buffer = r.f32s(capacity * dim)?;
    QueueState::from_parts(capacity, dim, buffer, ids, write_ptr, fill)
        .map_err(|e| r.err(e.to_string()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: String) -> Error {
        Error::Format {
            offset: self.pos as u64,
            message,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated: need {n} more bytes, {} available",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.err("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn sample() -> Checkpoint {
        let encoder = EncoderConfig {
            input_height: 3,
            input_width: 4,
            hidden_widths: vec![5, 6],
            embedding_dim: 4,
            proj_dim: 3,
        };
        let mut nets = init_params(&encoder, 4).unwrap();
        nets.key.heads.cycle.bias.data_mut()[1] = 0.25;
        let mut a = QueueState::new(3, 3).unwrap();
        a.enqueue_dequeue(&Tensor::eye(3), &[7, 8, 9]).unwrap();
        let b = QueueState::new(2, 3).unwrap();
        Checkpoint {
            encoder,
            nets,
            queues: Some((a, b)),
            step: 42,
        }
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
        let bare = Checkpoint { queues: None, ..ck };
        assert_eq!(Checkpoint::from_bytes(&bare.to_bytes()).unwrap(), bare);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
