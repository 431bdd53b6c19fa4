use std::fs;
use std::path::Path;

use super::model::{Dims, Layer, LayerSpec, Model, Params};
use super::tensor::{Precision, Scalar, Tensor};
use super::train::{EpochRecord, History};
use super::CnnError;

pub const MAGIC: &[u8; 4] = b"RCNN";
pub const FORMAT_VERSION: u16 = 1;

/// A model loaded from disk in whichever precision it was saved.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Single(Model<f32>),
    Double(Model<f64>),
}

impl AnyModel {
    pub fn precision(&self) -> Precision {
        match self {
            AnyModel::Single(_) => Precision::Single,
            AnyModel::Double(_) => Precision::Double,
        }
    }

    pub fn into_single(self) -> Model<f32> {
        match self {
            AnyModel::Single(m) => m,
            AnyModel::Double(m) => cast_model(&m),
        }
    }
}

pub fn cast_model<F: Scalar, G: Scalar>(model: &Model<F>) -> Model<G> {
    let layers = model
        .layers()
        .iter()
        .map(|l| Layer {
            spec: l.spec,
            frozen: l.frozen,
            params: l.params.as_ref().map(|p| Params {
                weights: p.weights.cast(),
                bias: p.bias.iter().map(|b| G::from_f64_lossy(b.to_f64().unwrap_or(f64::NAN))).collect(),
            }),
        })
        .collect();
    Model::from_parts(model.input_dims(), layers, model.seed()).expect("same architecture")
}

fn spec_record(spec: &LayerSpec) -> (u8, u32, u32, f64) {
    match *spec {
        LayerSpec::Conv2D { filters, kernel } => (1, filters as u32, kernel as u32, 0.0),
        LayerSpec::ReLU => (2, 0, 0, 0.0),
        LayerSpec::MaxPool => (3, 0, 0, 0.0),
        LayerSpec::Flatten => (4, 0, 0, 0.0),
        LayerSpec::Dense { units } => (5, units as u32, 0, 0.0),
        LayerSpec::Dropout { rate } => (6, 0, 0, rate),
        LayerSpec::Softmax => (7, 0, 0, 0.0),
    }
}

fn spec_from_record(tag: u8, a: u32, b: u32, rate: f64) -> Result<LayerSpec, CnnError> {
    Ok(match tag {
        1 => LayerSpec::Conv2D { filters: a as usize, kernel: b as usize },
        2 => LayerSpec::ReLU,
        3 => LayerSpec::MaxPool,
        4 => LayerSpec::Flatten,
        5 => LayerSpec::Dense { units: a as usize },
        6 => LayerSpec::Dropout { rate },
        7 => LayerSpec::Softmax,
        _ => return Err(CnnError::Format(format!("unknown layer tag {tag}"))),
    })
}

/// Little-endian encoding: magic, version, precision flag, input dims,
/// seed, layer table, then parameter payloads in layer order.
pub fn model_to_bytes<F: Scalar>(model: &Model<F>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(F::PRECISION.flag());
    for d in model.input_dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.seed().to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        let (tag, a, b, rate) = spec_record(&layer.spec);
        out.push(tag);
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.push(layer.frozen as u8);
    }
    for p in model.layers().iter().filter_map(|l| l.params.as_ref()) {
        out.extend_from_slice(&(p.weights.len() as u64).to_le_bytes());
        for &w in p.weights.data() {
            w.to_le(&mut out);
        }
        out.extend_from_slice(&(p.bias.len() as u64).to_le_bytes());
        for &b in &p.bias {
            b.to_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CnnError> {
        let end = self.pos.checked_add(n).ok_or(CnnError::DimOverflow)?;
        if end > self.bytes.len() {
            return Err(CnnError::Truncated { offset: self.pos });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CnnError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CnnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CnnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CnnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn values<F: Scalar>(&mut self, expected: usize) -> Result<Vec<F>, CnnError> {
        let count = self.u64()?;
        if count != expected as u64 {
            return Err(CnnError::Format(format!("payload holds {count} values, expected {expected}")));
        }
        let width = F::PRECISION.byte_width();
        let raw = self.take(expected.checked_mul(width).ok_or(CnnError::DimOverflow)?)?;
        Ok(raw.chunks_exact(width).map(F::from_le).collect())
    }
}

struct Header {
    precision: Precision,
    input_dims: Dims,
    seed: u64,
    specs: Vec<(LayerSpec, bool)>,
}

fn read_header(r: &mut Reader) -> Result<Header, CnnError> {
    if r.take(4).map_err(|_| CnnError::BadMagic)? != MAGIC {
        return Err(CnnError::BadMagic);
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(CnnError::Version { found: version, expected: FORMAT_VERSION });
    }
    let flag = r.u8()?;
    let precision = Precision::from_flag(flag)
        .ok_or_else(|| CnnError::Format(format!("unknown precision flag {flag}")))?;
    let input_dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    input_dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(CnnError::DimOverflow)?;
    let seed = r.u64()?;
    let n = r.u32()? as usize;
    // each table row is 18 bytes; reject counts the file cannot hold
    if n.checked_mul(18).is_none_or(|b| b > r.remaining()) {
        return Err(CnnError::Truncated { offset: r.pos });
    }
    let mut specs = Vec::with_capacity(n);
    for _ in 0..n {
        let tag = r.u8()?;
        let (a, b) = (r.u32()?, r.u32()?);
        let rate = f64::from_bits(r.u64()?);
        let frozen = r.u8()? != 0;
        specs.push((spec_from_record(tag, a, b, rate)?, frozen));
    }
    Ok(Header { precision, input_dims, seed, specs })
}

fn read_body<F: Scalar>(r: &mut Reader, header: Header) -> Result<Model<F>, CnnError> {
    let mut dims = header.input_dims;
    let mut layers = Vec::with_capacity(header.specs.len());
    for (spec, frozen) in header.specs {
        let params = match spec.param_shape(dims) {
            Some((wshape, blen)) => {
                let wlen = wshape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(CnnError::DimOverflow)?;
                let weights = Tensor::from_vec(wshape, r.values::<F>(wlen)?)?;
                let bias = r.values::<F>(blen)?;
                Some(Params { weights, bias })
            }
            None => None,
        };
        dims = spec.output_dims(dims).map_err(|e| CnnError::Format(e.to_string()))?;
        layers.push(Layer { spec, params, frozen });
    }
    if r.remaining() != 0 {
        return Err(CnnError::Format(format!("{} trailing bytes", r.remaining())));
    }
    Model::from_parts(header.input_dims, layers, header.seed)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<AnyModel, CnnError> {
    let mut r = Reader { bytes, pos: 0 };
    let header = read_header(&mut r)?;
    match header.precision {
        Precision::Single => read_body::<f32>(&mut r, header).map(AnyModel::Single),
        Precision::Double => read_body::<f64>(&mut r, header).map(AnyModel::Double),
    }
}

pub fn save_model<F: Scalar>(model: &Model<F>, path: &Path) -> Result<(), CnnError> {
    fs::write(path, model_to_bytes(model)).map_err(|source| CnnError::Io { path: path.to_path_buf(), source })
}

pub fn load_model(path: &Path) -> Result<AnyModel, CnnError> {
    let bytes = fs::read(path).map_err(|source| CnnError::Io { path: path.to_path_buf(), source })?;
    model_from_bytes(&bytes)
}

pub const HISTORY_HEADER: [&str; 5] = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"];

pub fn write_history_csv(history: &History, path: &Path) -> Result<(), CnnError> {
    let csv_err = |e: csv::Error| CnnError::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(HISTORY_HEADER).map_err(csv_err)?;
    for r in &history.records {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            r.val_loss.to_string(),
            r.val_acc.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| CnnError::Io { path: path.to_path_buf(), source })
}

pub fn read_history_csv(path: &Path) -> Result<History, CnnError> {
    let csv_err = |e: csv::Error| CnnError::Format(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut records = Vec::new();
    for row in r.records() {
        let row = row.map_err(csv_err)?;
        let field = |i: usize| -> Result<f64, CnnError> {
            row.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CnnError::Format(format!("bad history field {i} in {row:?}")))
        };
        records.push(EpochRecord {
            epoch: field(0)? as usize,
            train_loss: field(1)?,
            train_acc: field(2)?,
            val_loss: field(3)?,
            val_acc: field(4)?,
        });
    }
    Ok(History { records })
}
