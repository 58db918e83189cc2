//! Binary rasters and axis-aligned box prompts.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, TensorData};

/// A dense `H x W` boolean raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "BinaryMask {}x{} ({} set)",
            self.height,
            self.width,
            self.count()
        )?;
        if self.height * self.width <= 1024 {
            for r in 0..self.height {
                let row: String = (0..self.width)
                    .map(|c| if self.get(r, c) { '#' } else { '.' })
                    .collect();
                writeln!(f, "  {row}")?;
            }
        }
        Ok(())
    }
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        Self {
            height,
            width,
            data: (0..height * width).map(&mut f).collect(),
        }
    }

    /// Parses rows like `"#..#"`; any char other than `.` and `0` is set.
    pub fn from_rows(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut data = Vec::with_capacity(height * width);
        for row in rows {
            assert_eq!(row.chars().count(), width, "ragged mask rows");
            data.extend(row.chars().map(|ch| ch != '.' && ch != '0'));
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn get_index(&self, index: usize) -> bool {
        self.data[index]
    }

    pub fn set_index(&mut self, index: usize, value: bool) {
        self.data[index] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&v| v)
    }

    /// Flat indices of set pixels in row-major order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
    }

    pub fn same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a && **b)
            .count())
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    /// Pixels set in `self` and inside `bx`.
    pub fn restrict_to_box(&self, bx: &BoxPrompt) -> BinaryMask {
        let mut out = BinaryMask::empty(self.height, self.width);
        for r in bx.row_min..=bx.row_max.min(self.height.saturating_sub(1)) {
            for c in bx.col_min..=bx.col_max.min(self.width.saturating_sub(1)) {
                let i = r * self.width + c;
                out.data[i] = self.data[i];
            }
        }
        out
    }

    /// Tight bounding box of the set pixels, if any.
    pub fn bounding_box(&self) -> Option<BoxPrompt> {
        let mut it = self.ones();
        let first = it.next()?;
        let (mut r0, mut c0) = (first / self.width, first % self.width);
        let (mut r1, mut c1) = (r0, c0);
        for i in it {
            let (r, c) = (i / self.width, i % self.width);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
        Some(BoxPrompt {
            row_min: r0,
            col_min: c0,
            row_max: r1,
            col_max: c1,
        })
    }

    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::from_u8(
            vec![self.height, self.width],
            self.data.iter().map(|&v| v as u8).collect(),
        )
        .expect("mask dimensions are positive")
    }

    /// Any nonzero value counts as set.
    pub fn from_tensor(t: &DenseTensor) -> Result<Self> {
        if t.ndim() != 2 {
            return Err(Error::InvalidTensor(format!(
                "mask must be [H, W], got {:?}",
                t.shape()
            )));
        }
        let (h, w) = (t.shape()[0], t.shape()[1]);
        let data = match t.data() {
            TensorData::U8(v) => v.iter().map(|&x| x != 0).collect(),
            TensorData::I32(v) => v.iter().map(|&x| x != 0).collect(),
            TensorData::F32(v) => v.iter().map(|&x| x != 0.0).collect(),
        };
        Self::new(h, w, data)
    }
}

/// Inclusive, axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoxPrompt {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BoxPrompt {
    pub fn new(row_min: usize, col_min: usize, row_max: usize, col_max: usize) -> Result<Self> {
        if row_min > row_max || col_min > col_max {
            return Err(Error::InvalidArgument(format!(
                "degenerate box rows [{row_min},{row_max}] cols [{col_min},{col_max}]"
            )));
        }
        Ok(Self {
            row_min,
            col_min,
            row_max,
            col_max,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            row_min: 0,
            col_min: 0,
            row_max: height - 1,
            col_max: width - 1,
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }

    pub fn contains_box(&self, other: &BoxPrompt) -> bool {
        self.row_min <= other.row_min
            && self.col_min <= other.col_min
            && self.row_max >= other.row_max
            && self.col_max >= other.col_max
    }

    pub fn area(&self) -> usize {
        (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.row_max < height && self.col_max < width
    }

    /// Moves every edge outward by `amount`, clipped to `height x width`.
    pub fn expanded(&self, amount: usize, height: usize, width: usize) -> BoxPrompt {
        BoxPrompt {
            row_min: self.row_min.saturating_sub(amount),
            col_min: self.col_min.saturating_sub(amount),
            row_max: (self.row_max + amount).min(height - 1),
            col_max: (self.col_max + amount).min(width - 1),
        }
    }

    /// `[row_min, col_min, row_max, col_max]`, the wire order.
    pub fn to_array(&self) -> [usize; 4] {
        [self.row_min, self.col_min, self.row_max, self.col_max]
    }
}

impl fmt::Display for BoxPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rows [{}, {}] cols [{}, {}]",
            self.row_min, self.row_max, self.col_min, self.col_max
        )
    }
}
