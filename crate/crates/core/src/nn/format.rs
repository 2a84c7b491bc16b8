//! Binary model archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    "TDNN"
//! version  u32 (= 1)
//! height   u32
//! width    u32
//! layers   u32
//! per layer:
//!   kind        u8   0 = conv, 1 = fully connected
//!   activation  u8   0 = none, 1 = relu
//!   conv:  filters u32, size u32, stride u32, padding u8 (0 = same)
//!   fc:    in_dim u32, out_dim u32
//!   weights  u64 count, then count × f64
//!   bias     u64 count, then count × f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, LayerKind, LayerSpec, NetworkModel, Padding};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"TDNN";
pub const MODEL_VERSION: u32 = 1;

pub fn save_model(model: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkModel> {
    read_model(&mut BufReader::new(File::open(path)?))
}

pub fn write_model(model: &NetworkModel, w: &mut impl Write) -> Result<()> {
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    let (h, wd) = model.input_shape();
    write_u32(w, h)?;
    write_u32(w, wd)?;
    write_u32(w, model.layers().len())?;
    for layer in model.layers() {
        let kind = match layer.spec.kind {
            LayerKind::Conv { .. } => 0u8,
            LayerKind::FullyConnected { .. } => 1u8,
        };
        let act = match layer.spec.activation {
            Activation::None => 0u8,
            Activation::Relu => 1u8,
        };
        w.write_all(&[kind, act])?;
        match layer.spec.kind {
            LayerKind::Conv {
                filters,
                size,
                stride,
                padding: Padding::Same,
            } => {
                write_u32(w, filters)?;
                write_u32(w, size)?;
                write_u32(w, stride)?;
                w.write_all(&[0u8])?;
            }
            LayerKind::FullyConnected { in_dim, out_dim } => {
                write_u32(w, in_dim)?;
                write_u32(w, out_dim)?;
            }
        }
        write_f64s(w, &layer.weights)?;
        write_f64s(w, &layer.bias)?;
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<NetworkModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    let magic = cur.take(4)?;
    if magic != MODEL_MAGIC {
        return Err(Error::Version(format!(
            "unrecognized model magic {:02x?}",
            magic
        )));
    }
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Version(format!(
            "model format version {version}, this build reads {MODEL_VERSION}"
        )));
    }
    let h = cur.u32()? as usize;
    let w = cur.u32()? as usize;
    let n_layers = cur.u32()? as usize;
    let mut specs = Vec::new();
    let mut params = Vec::new();
    for idx in 0..n_layers {
        let header = cur.take(2)?;
        let activation = match header[1] {
            0 => Activation::None,
            1 => Activation::Relu,
            a => return Err(Error::Corrupt(format!("layer {idx}: activation tag {a}"))),
        };
        let kind = match header[0] {
            0 => {
                let filters = cur.u32()? as usize;
                let size = cur.u32()? as usize;
                let stride = cur.u32()? as usize;
                let pad = cur.take(1)?[0];
                if pad != 0 {
                    return Err(Error::Corrupt(format!("layer {idx}: padding tag {pad}")));
                }
                LayerKind::Conv {
                    filters,
                    size,
                    stride,
                    padding: Padding::Same,
                }
            }
            1 => LayerKind::FullyConnected {
                in_dim: cur.u32()? as usize,
                out_dim: cur.u32()? as usize,
            },
            k => return Err(Error::Corrupt(format!("layer {idx}: kind tag {k}"))),
        };
        specs.push(LayerSpec { kind, activation });
        let weights = cur.f64s()?;
        let bias = cur.f64s()?;
        params.push((weights, bias));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    let mut model = NetworkModel::zeroed((h, w), &specs)
        .map_err(|e| Error::Corrupt(format!("layer stack: {e}")))?;
    for (idx, (layer, (weights, bias))) in model.layers_mut().iter_mut().zip(params).enumerate() {
        if weights.len() != layer.weights.len() || bias.len() != layer.bias.len() {
            return Err(Error::Corrupt(format!(
                "layer {idx}: parameter count does not match its spec"
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Corrupt(format!("layer {idx}: non-finite parameter")));
        }
        layer.weights = weights;
        layer.bias = bias;
    }
    Ok(model)
}

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidModel(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        let n = usize::try_from(n).map_err(|_| Error::Corrupt("array length".into()))?;
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Corrupt("array length".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> NetworkModel {
        NetworkModel::initialized((8, 8), &NetworkModel::conv_mlp_specs((8, 8), 2, 6, 3), 17)
            .unwrap()
    }

    fn encode(m: &NetworkModel) -> Vec<u8> {
        let mut buf = Vec::new();
        write_model(m, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode(&m);
        let back = read_model(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        for (a, b) in m.layers().iter().zip(back.layers()) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.weights), bits(&b.weights));
        }
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = encode(&model());
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = read_model(&mut &bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::Corrupt(_) | Error::Version(_)),
                "{cut}: {err}"
            );
        }
        let err = read_model(&mut &bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Corrupt(_)));
    }

    #[test]
    fn flipped_magic_is_version_error() {
        let mut bytes = encode(&model());
        bytes[0] ^= 0xff;
        assert!(matches!(
            read_model(&mut bytes.as_slice()),
            Err(Error::Version(_))
        ));
        let mut bytes = encode(&model());
        bytes[4] = 9;
        assert!(matches!(
            read_model(&mut bytes.as_slice()),
            Err(Error::Version(_))
        ));
    }

    #[test]
    fn save_and_load_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tdnn");
        let m = model();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }
}
