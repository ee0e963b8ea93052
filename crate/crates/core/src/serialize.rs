//! Flat binary weight container.
//!
//! Layout: header (magic `SSFN`, version u32, record count u32), then per
//! record: name length u32 + UTF-8 name, dtype tag u8, rank u8, dims u32 each,
//! raw little-endian values. Everything little-endian; round-trips are
//! bit-exact.

use std::path::Path;

use crate::arch::ModelGraph;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Shape;

pub const MAGIC: &[u8; 4] = b"SSFN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<u32>,
    /// Raw little-endian element bytes.
    pub payload: Vec<u8>,
}

impl TensorRecord {
    pub fn numel(&self) -> usize {
        self.dims.iter().product::<u32>() as usize
    }

    pub fn shape(&self) -> Result<Shape> {
        if self.dims.len() != 4 {
            return Err(Error::Container(format!(
                "record '{}' has rank {}, expected 4",
                self.name,
                self.dims.len()
            )));
        }
        Shape::new(
            self.dims[0] as usize,
            self.dims[1] as usize,
            self.dims[2] as usize,
            self.dims[3] as usize,
        )
    }

    pub fn values<T: Scalar>(&self) -> Result<Vec<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Container(format!(
                "record '{}' holds {} values, requested {}",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        let width = self.dtype.byte_width();
        if self.payload.len() != self.numel() * width {
            return Err(Error::Container(format!(
                "record '{}' payload is {} bytes for {} elements",
                self.name,
                self.payload.len(),
                self.numel()
            )));
        }
        Ok(self.payload.chunks_exact(width).map(T::read_le).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightFile {
    pub records: Vec<TensorRecord>,
}

impl WeightFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for rec in &self.records {
            out.extend_from_slice(&(rec.name.len() as u32).to_le_bytes());
            out.extend_from_slice(rec.name.as_bytes());
            out.push(rec.dtype.tag());
            out.push(rec.dims.len() as u8);
            for d in &rec.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&rec.payload);
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<WeightFile> {
        let mut r = Reader { data, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Container("bad magic; not a weight container".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Container(format!("unsupported container version {version}")));
        }
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Container("record name is not UTF-8".into()))?;
            let dtype = DType::from_tag(r.u8()?)
                .ok_or_else(|| Error::Container(format!("record '{name}': unknown dtype tag")))?;
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()?);
            }
            let numel = dims.iter().product::<u32>() as usize;
            let payload = r.take(numel * dtype.byte_width())?.to_vec();
            records.push(TensorRecord {
                name,
                dtype,
                dims,
                payload,
            });
        }
        if r.pos != data.len() {
            return Err(Error::Container(format!(
                "{} trailing bytes after the last record",
                data.len() - r.pos
            )));
        }
        Ok(WeightFile { records })
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<WeightFile> {
        WeightFile::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Container("container truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Serialize every parameter and state tensor of a model, in visit order.
pub fn model_to_weights<T: Scalar>(model: &ModelGraph<T>) -> WeightFile {
    let mut records = Vec::new();
    model.visit(&mut |_, name, shape, data| {
        let mut payload = Vec::with_capacity(data.len() * T::DTYPE.byte_width());
        for v in data {
            v.write_le(&mut payload);
        }
        records.push(TensorRecord {
            name: name.to_string(),
            dtype: T::DTYPE,
            dims: vec![shape.n as u32, shape.c as u32, shape.h as u32, shape.w as u32],
            payload,
        });
    });
    WeightFile { records }
}

/// Load a container into a built model by record name. Every tensor the model
/// declares must be present with the exact shape and dtype, and no record may
/// be left over; mismatches are reported by layer name.
pub fn load_weights_into<T: Scalar>(model: &mut ModelGraph<T>, file: &WeightFile) -> Result<()> {
    use std::collections::HashMap;
    let mut by_name: HashMap<&str, &TensorRecord> =
        file.records.iter().map(|r| (r.name.as_str(), r)).collect();
    let mut failure: Option<Error> = None;
    model.visit_mut(&mut |_, name, shape, data| {
        if failure.is_some() {
            return;
        }
        let Some(rec) = by_name.remove(name) else {
            failure = Some(Error::Container(format!("container is missing tensor '{name}'")));
            return;
        };
        match rec.shape() {
            Ok(rec_shape) if rec_shape == shape => match rec.values::<T>() {
                Ok(values) => data.copy_from_slice(&values),
                Err(e) => failure = Some(e),
            },
            Ok(rec_shape) => {
                failure = Some(Error::Container(format!(
                    "tensor '{name}': container shape {rec_shape} != model shape {shape}"
                )));
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Container(format!(
            "container holds {} tensors the model does not declare, e.g. '{extra}'",
            by_name.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_model, spec_seesaw_toy};

    #[test]
    fn container_round_trip_is_bit_exact() {
        let model = build_model::<f32>(&spec_seesaw_toy(), 7).unwrap();
        let file = model_to_weights(&model);
        let bytes = file.to_bytes();
        let parsed = WeightFile::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, file);
        assert_eq!(parsed.to_bytes(), bytes);
    }

    #[test]
    fn export_load_export_matches() {
        let spec = spec_seesaw_toy();
        let model = build_model::<f32>(&spec, 7).unwrap();
        let bytes = model_to_weights(&model).to_bytes();

        let mut other = build_model::<f32>(&spec, 8).unwrap();
        let file = WeightFile::from_bytes(&bytes).unwrap();
        load_weights_into(&mut other, &file).unwrap();
        assert_eq!(model_to_weights(&other).to_bytes(), bytes);
    }

    #[test]
    fn load_rejects_shape_mismatch_by_name() {
        let spec = spec_seesaw_toy();
        let model = build_model::<f32>(&spec, 7).unwrap();
        let mut file = model_to_weights(&model);
        file.records[0].dims = vec![1, 1, 1, 1];
        file.records[0].payload.truncate(4);
        let mut target = build_model::<f32>(&spec, 7).unwrap();
        let err = load_weights_into(&mut target, &file).unwrap_err().to_string();
        assert!(err.contains(&file.records[0].name), "{err}");
    }

    #[test]
    fn load_rejects_missing_and_extra_records() {
        let spec = spec_seesaw_toy();
        let model = build_model::<f32>(&spec, 7).unwrap();
        let mut file = model_to_weights(&model);
        let dropped = file.records.remove(3);
        let mut target = build_model::<f32>(&spec, 7).unwrap();
        assert!(load_weights_into(&mut target, &file)
            .unwrap_err()
            .to_string()
            .contains(&dropped.name));

        let mut file = model_to_weights(&model);
        let mut ghost = file.records[0].clone();
        ghost.name = "ghost.weight".into();
        file.records.push(ghost);
        assert!(load_weights_into(&mut target, &file)
            .unwrap_err()
            .to_string()
            .contains("ghost.weight"));
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(WeightFile::from_bytes(b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").is_err());
    }
}
