//! Dense tensors and the DFGT interchange format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   "DFGT"          4 bytes
//! version 0x01            1 byte
//! dtype   0x00 f32 | 0x01 u8 | 0x02 i32
//! ndim    1..=4           1 byte
//! shape   ndim x u32
//! payload row-major, little-endian elements
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub const MAGIC: [u8; 4] = *b"DFGT";
pub const VERSION: u8 = 0x01;
pub const MAX_NDIM: usize = 4;

/// Tolerance on the per-pixel sum of a [`ProbabilityMap`].
pub const PROB_SUM_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    U8,
    I32,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0x00,
            Dtype::U8 => 0x01,
            Dtype::I32 => 0x02,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0x00 => Ok(Dtype::F32),
            0x01 => Ok(Dtype::U8),
            0x02 => Ok(Dtype::I32),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::U8(_) => Dtype::U8,
            TensorData::I32(_) => Dtype::I32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A contiguous row-major tensor of rank 1 to 4.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: TensorData,
}

fn element_count(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_NDIM {
        return Err(Error::InvalidTensor(format!(
            "ndim must be in 1..={MAX_NDIM}, got {}",
            shape.len()
        )));
    }
    let mut n: u64 = 1;
    for &d in shape {
        if d == 0 {
            return Err(Error::InvalidTensor(format!(
                "zero-sized dimension in {shape:?}"
            )));
        }
        if d > u32::MAX as usize {
            return Err(Error::InvalidTensor(format!("dimension {d} exceeds u32")));
        }
        n = n.checked_mul(d as u64).ok_or_else(|| {
            Error::InvalidTensor(format!("element count of {shape:?} overflows u64"))
        })?;
    }
    usize::try_from(n).map_err(|_| Error::InvalidTensor(format!("element count {n} exceeds usize")))
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let n = element_count(&shape)?;
        if n != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {n} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::new(shape, TensorData::U8(data))
    }

    pub fn from_i32(shape: Vec<usize>, data: Vec<i32>) -> Result<Self> {
        Self::new(shape, TensorData::I32(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Some(v),
            _ => None,
        }
    }

    /// Values widened to `f64`, whatever the stored dtype.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::I32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    fn header(&self) -> Vec<u8> {
        let mut h = Vec::with_capacity(7 + 4 * self.ndim());
        h.extend_from_slice(&MAGIC);
        h.push(VERSION);
        h.push(self.dtype().code());
        h.push(self.ndim() as u8);
        for &d in &self.shape {
            h.extend_from_slice(&(d as u32).to_le_bytes());
        }
        h
    }

    /// Encodes to an in-memory DFGT byte string.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 4 * self.ndim() + self.len() * self.dtype().size());
        // Writing to a Vec cannot fail.
        write_tensor(self, &mut out).expect("in-memory write");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        read_tensor(&mut &bytes[..])
    }
}

/// Writes `t` as DFGT and returns the number of bytes emitted.
pub fn write_tensor<W: Write>(t: &DenseTensor, sink: &mut W) -> Result<usize> {
    element_count(&t.shape)?;
    let header = t.header();
    sink.write_all(&header)?;
    let payload: Vec<u8> = match &t.data {
        TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        TensorData::U8(v) => v.clone(),
        TensorData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    };
    sink.write_all(&payload)?;
    Ok(header.len() + payload.len())
}

fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

fn read_exact_or_truncated<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<()> {
    let got = read_full(source, buf)?;
    if got < buf.len() {
        return Err(Error::Truncated {
            expected: buf.len(),
            actual: got,
        });
    }
    Ok(())
}

/// Reads one DFGT tensor, validating magic, version, dtype and payload length.
pub fn read_tensor<R: Read>(source: &mut R) -> Result<DenseTensor> {
    let mut fixed = [0u8; 7];
    read_exact_or_truncated(source, &mut fixed)?;
    let magic = [fixed[0], fixed[1], fixed[2], fixed[3]];
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if fixed[4] != VERSION {
        return Err(Error::UnsupportedVersion(fixed[4]));
    }
    let dtype = Dtype::from_code(fixed[5])?;
    let ndim = fixed[6] as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::InvalidTensor(format!("ndim {ndim} out of range")));
    }
    let mut shape_bytes = vec![0u8; 4 * ndim];
    read_exact_or_truncated(source, &mut shape_bytes)?;
    let shape: Vec<usize> = shape_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n = element_count(&shape)?;
    let nbytes = n
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::InvalidTensor("payload size overflows".into()))?;
    let mut payload = vec![0u8; nbytes];
    read_exact_or_truncated(source, &mut payload)?;
    let data = match dtype {
        Dtype::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        Dtype::U8 => TensorData::U8(payload),
        Dtype::I32 => TensorData::I32(
            payload
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
    };
    DenseTensor::new(shape, data)
}

pub fn write_file(path: impl AsRef<Path>, t: &DenseTensor) -> Result<usize> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    let n = write_tensor(t, &mut w)?;
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(n)
}

pub fn read_file(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    read_tensor(&mut BufReader::new(file))
}

/// Per-pixel feature vectors, shape `[H, W, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        let t = DenseTensor::from_f32(vec![height, width, dim], data)?;
        Self::from_tensor(t)
    }

    pub fn from_tensor(t: DenseTensor) -> Result<Self> {
        if t.ndim() != 3 {
            return Err(Error::InvalidTensor(format!(
                "feature map must be [H, W, d], got {:?}",
                t.shape()
            )));
        }
        let (height, width, dim) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let data = match t.into_data() {
            TensorData::F32(v) => v,
            other => {
                return Err(Error::InvalidTensor(format!(
                    "feature map must be f32, got {:?}",
                    other.dtype()
                )))
            }
        };
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidTensor(format!(
                "non-finite feature at flat index {i}"
            )));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::from_f32(vec![self.height, self.width, self.dim], self.data.clone())
            .expect("validated at construction")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn pixel_at(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Per-pixel class posteriors, shape `[H, W, K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        let t = DenseTensor::from_f32(vec![height, width, classes], data)?;
        Self::from_tensor(t)
    }

    pub fn from_tensor(t: DenseTensor) -> Result<Self> {
        if t.ndim() != 3 {
            return Err(Error::InvalidTensor(format!(
                "probability map must be [H, W, K], got {:?}",
                t.shape()
            )));
        }
        let (height, width, classes) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        if classes < 2 {
            return Err(Error::InvalidTensor("probability map needs K >= 2".into()));
        }
        let data = match t.into_data() {
            TensorData::F32(v) => v,
            other => {
                return Err(Error::InvalidTensor(format!(
                    "probability map must be f32, got {:?}",
                    other.dtype()
                )))
            }
        };
        for (i, px) in data.chunks_exact(classes).enumerate() {
            if px.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidTensor(format!(
                    "probability outside [0,1] at pixel {i}"
                )));
            }
            let sum: f32 = px.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::InvalidTensor(format!(
                    "probabilities at pixel {i} sum to {sum}"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }

    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::from_f32(
            vec![self.height, self.width, self.classes],
            self.data.clone(),
        )
        .expect("validated at construction")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn prob(&self, index: usize, class: usize) -> f32 {
        self.data[index * self.classes + class]
    }

    pub fn pixel_at(&self, index: usize) -> &[f32] {
        &self.data[index * self.classes..(index + 1) * self.classes]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Arg-max label map; ties resolve to the lowest class id.
    pub fn argmax(&self) -> LabelMask {
        let labels = self
            .data
            .chunks_exact(self.classes)
            .map(|px| {
                let mut best = 0;
                for k in 1..px.len() {
                    if px[k] > px[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        LabelMask {
            height: self.height,
            width: self.width,
            num_classes: self.classes,
            data: labels,
        }
    }
}

/// Integer class map, shape `[H, W]`; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, num_classes: usize, data: Vec<u8>) -> Result<Self> {
        if !(2..=256).contains(&num_classes) {
            return Err(Error::InvalidTensor(format!(
                "num_classes {num_classes} out of range"
            )));
        }
        element_count(&[height, width])?;
        if data.len() != height * width {
            return Err(Error::InvalidTensor(format!(
                "label mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v as usize >= num_classes) {
            return Err(Error::InvalidTensor(format!(
                "label {v} >= K = {num_classes}"
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            data,
        })
    }

    pub fn background(height: usize, width: usize, num_classes: usize) -> Result<Self> {
        Self::new(height, width, num_classes, vec![0; height * width])
    }

    pub fn from_tensor(t: DenseTensor, num_classes: usize) -> Result<Self> {
        if t.ndim() != 2 {
            return Err(Error::InvalidTensor(format!(
                "label mask must be [H, W], got {:?}",
                t.shape()
            )));
        }
        let (h, w) = (t.shape()[0], t.shape()[1]);
        match t.into_data() {
            TensorData::U8(v) => Self::new(h, w, num_classes, v),
            other => Err(Error::InvalidTensor(format!(
                "label mask must be u8, got {:?}",
                other.dtype()
            ))),
        }
    }

    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::from_u8(vec![self.height, self.width], self.data.clone()).expect("validated")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn class_mask(&self, class: usize) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |i| self.data[i] as usize == class)
    }

    pub fn contains(&self, class: usize) -> bool {
        self.data.iter().any(|&v| v as usize == class)
    }
}
