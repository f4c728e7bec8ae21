//! Versioned little-endian binary container for a [`LatentModel`].
//!
//! Layout: magic `LKOOPCK1`, format version, `dt`, `m`, the action-cost
//! matrix, the three network shapes, then every parameter tensor in
//! registration order as `(name, rank, extents, f64 values)`.

use std::io::{Read, Write};
use std::path::Path;

use super::model::LatentModel;
use crate::diffcore::{Mlp, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"LKOOPCK1";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("unexpected end of checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
}

impl<T: Real> LatentModel<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_f64(&mut out, self.dt.to_f64_lossy());
        put_u32(&mut out, self.act_dim() as u32);
        for &v in self.action_cost.data() {
            put_f64(&mut out, v.to_f64_lossy());
        }
        for net in [&self.encoder, &self.decoder, &self.cost_net] {
            put_u32(&mut out, net.dims().len() as u32);
            for &d in net.dims() {
                put_u32(&mut out, d as u32);
            }
        }
        put_u32(&mut out, self.params.len() as u32);
        for (_, name, t) in self.params.iter() {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank() as u32);
            for &d in t.shape() {
                put_u32(&mut out, d as u32);
            }
            for &v in t.data() {
                put_f64(&mut out, v.to_f64_lossy());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut rd = Reader { buf, pos: 0 };
        if rd.take(8)? != MAGIC {
            return Err(Error::Format("not a latent model checkpoint".into()));
        }
        let version = rd.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let dt = T::lit(rd.f64()?);
        let m = rd.usize()?;
        let r = (0..m * m).map(|_| rd.f64().map(T::lit)).collect::<Result<Vec<_>>>()?;
        let action_cost = Tensor::matrix(m, m, r)?;
        let mut net_dims = Vec::new();
        for _ in 0..3 {
            let n = rd.usize()?;
            if n < 2 {
                return Err(Error::Format("network with fewer than two layer sizes".into()));
            }
            net_dims.push((0..n).map(|_| rd.usize()).collect::<Result<Vec<_>>>()?);
        }
        let count = rd.usize()?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let len = rd.usize()?;
            let name = String::from_utf8(rd.take(len)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
            let rank = rd.usize()?;
            let shape = (0..rank).map(|_| rd.usize()).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rd.f64().map(T::lit)).collect::<Result<Vec<_>>>()?;
            params.add(name, Tensor::new(shape, data)?);
        }
        if rd.pos != buf.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }

        let mut next = 0usize;
        let mut nets = Vec::new();
        for (dims, prefix) in net_dims.into_iter().zip(["encoder", "decoder", "cost"]) {
            let mut layers = Vec::new();
            for (i, w) in dims.windows(2).enumerate() {
                let (wid, bid) = (ParamId(next), ParamId(next + 1));
                next += 2;
                if wid.0 >= params.len() || bid.0 >= params.len() {
                    return Err(Error::Format("checkpoint is missing network tensors".into()));
                }
                let ok = params.name(wid) == format!("{prefix}.{i}.weight")
                    && params.get(wid).shape() == [w[1], w[0]]
                    && params.name(bid) == format!("{prefix}.{i}.bias")
                    && params.get(bid).shape() == [w[1]];
                if !ok {
                    return Err(Error::Format(format!("layer {prefix}.{i} does not match its declared shape")));
                }
                layers.push((wid, bid));
            }
            nets.push(Mlp::from_ids(dims, layers));
        }
        let (mu, omega) = (ParamId(next), ParamId(next + 1));
        if omega.0 + 1 != params.len() || params.name(mu) != "eig.mu" || params.name(omega) != "eig.omega" {
            return Err(Error::Format("checkpoint eigenvalue tensors missing".into()));
        }
        let cost_net = nets.pop().expect("three nets");
        let decoder = nets.pop().expect("three nets");
        let encoder = nets.pop().expect("three nets");
        Self::from_parts(params, encoder, decoder, cost_net, mu, omega, action_cost, dt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}
