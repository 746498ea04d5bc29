use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::model::{CrossModalConfig, CrossModalParams};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"RCXM";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CrossModalConfig,
    pub tensors: Vec<TensorInfo>,
}

/// Layout: magic, u32 version, u32 manifest length, manifest JSON, then per
/// tensor `u32 ndim`, `u32` dims and row-major little-endian `f32` data.
pub fn write_params(w: &mut impl Write, params: &CrossModalParams) -> Result<()> {
    let named = params.named_tensors();
    let manifest = Manifest {
        config: params.config,
        tensors: named
            .iter()
            .map(|(n, m)| TensorInfo { name: n.clone(), shape: vec![m.nrows(), m.ncols()] })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, m) in named {
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(m.nrows() as u32).to_le_bytes())?;
        w.write_all(&(m.ncols() as u32).to_le_bytes())?;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                w.write_all(&(m[(r, c)] as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_params(r: &mut impl Read) -> Result<CrossModalParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a parameter container".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported container version {version}")));
    }
    let len = read_u32(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let manifest: Manifest = serde_json::from_slice(&json)?;
    let mut params = CrossModalParams::zeros(manifest.config)?;
    let mut named = params.named_tensors_mut();
    if named.len() != manifest.tensors.len() {
        return Err(Error::Parse(format!(
            "manifest lists {} tensors, configuration expects {}",
            manifest.tensors.len(),
            named.len()
        )));
    }
    for ((name, m), info) in named.iter_mut().zip(&manifest.tensors) {
        let expect = vec![m.nrows(), m.ncols()];
        if *name != info.name || info.shape != expect {
            return Err(Error::Parse(format!("tensor {} {:?} does not match {name} {expect:?}", info.name, info.shape)));
        }
        let ndim = read_u32(r)? as usize;
        let dims = (0..ndim).map(|_| read_u32(r).map(|x| x as usize)).collect::<Result<Vec<_>>>()?;
        if dims != expect {
            return Err(Error::Parse(format!("tensor {name}: header {dims:?}, manifest {expect:?}")));
        }
        for rr in 0..m.nrows() {
            for c in 0..m.ncols() {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                m[(rr, c)] = f32::from_le_bytes(b) as f64;
            }
        }
    }
    drop(named);
    if !params.is_finite() {
        return Err(Error::Parse("non-finite parameter".into()));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_to_f32_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = CrossModalConfig { d: 8, patch: 2, layers: 2, image_shape: (4, 4), radar_shape: (4, 6) };
        let p = CrossModalParams::random(cfg, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &p).unwrap();
        let q = read_params(&mut buf.as_slice()).unwrap();
        for ((na, a), (nb, b)) in p.named_tensors().iter().zip(q.named_tensors()) {
            assert_eq!(*na, nb);
            assert!(a.iter().zip(b.iter()).all(|(x, y)| *y == (*x as f32) as f64));
        }
        let mut again = Vec::new();
        write_params(&mut again, &q).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_corruption() {
        let cfg = CrossModalConfig { d: 4, patch: 2, layers: 1, image_shape: (2, 2), radar_shape: (2, 2) };
        let p = CrossModalParams::zeros(cfg).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, &p).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_params(&mut bad.as_slice()).is_err());
        assert!(read_params(&mut &buf[..buf.len() - 2]).is_err());
    }
}
