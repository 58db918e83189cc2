use crate::error::{Error, Result};
use crate::mask::{BinaryMask, BoxPrompt};

/// A set of pixels kept both as a member list and as a same-shape raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelSet {
    members: Vec<usize>,
    raster: BinaryMask,
}

impl PixelSet {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            members: Vec::new(),
            raster: BinaryMask::empty(height, width),
        }
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            members: mask.ones().collect(),
            raster: mask.clone(),
        }
    }

    pub fn from_coords(height: usize, width: usize, coords: &[(usize, usize)]) -> Result<Self> {
        let mut s = Self::empty(height, width);
        for &(r, c) in coords {
            if r >= height || c >= width {
                return Err(Error::InvalidArgument(format!(
                    "pixel ({r}, {c}) outside {height}x{width}"
                )));
            }
            s.insert(r * width + c);
        }
        Ok(s)
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Adds a pixel by flat index; returns false if it was already present.
    pub fn insert(&mut self, index: usize) -> bool {
        if self.raster.get_index(index) {
            return false;
        }
        self.raster.set_index(index, true);
        self.members.push(index);
        true
    }

    pub fn contains(&self, index: usize) -> bool {
        self.raster.get_index(index)
    }

    pub fn contains_rc(&self, row: usize, col: usize) -> bool {
        self.raster.get(row, col)
    }

    /// Flat indices in insertion order.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width();
        self.members.iter().map(move |&i| (i / w, i % w))
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.raster
    }

    pub fn is_subset_of(&self, other: &PixelSet) -> bool {
        self.raster.is_subset_of(&other.raster)
    }

    pub fn bounding_box(&self) -> Option<BoxPrompt> {
        let w = self.width();
        let mut it = self.members.iter().map(|&i| (i / w, i % w));
        let (r, c) = it.next()?;
        let mut b = BoxPrompt {
            row_min: r,
            col_min: c,
            row_max: r,
            col_max: c,
        };
        for (r, c) in it {
            b.row_min = b.row_min.min(r);
            b.row_max = b.row_max.max(r);
            b.col_min = b.col_min.min(c);
            b.col_max = b.col_max.max(c);
        }
        Some(b)
    }
}

/// Offsets `(dr, dc) != (0, 0)` with Euclidean length strictly below `radius`.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if (dr, dc) != (0, 0) && dr * dr + dc * dc < r * r {
                out.push((dr, dc));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_and_members_agree() {
        let mut s = PixelSet::empty(3, 4);
        assert!(s.insert(5));
        assert!(!s.insert(5));
        assert!(s.insert(0));
        assert_eq!(s.len(), 2);
        assert_eq!(s.mask().count(), 2);
        assert!(s.contains_rc(1, 1));
        assert_eq!(s.bounding_box(), Some(BoxPrompt::new(0, 0, 1, 1).unwrap()));
        let round = PixelSet::from_mask(s.mask());
        assert_eq!(round.mask(), s.mask());
    }

    #[test]
    fn disk_of_radius_two() {
        let d = disk_offsets(2);
        // 4-neighbours and diagonals
        assert_eq!(d.len(), 8);
        assert!(d.contains(&(1, 1)) && !d.contains(&(2, 0)));
        assert_eq!(disk_offsets(1).len(), 0);
        assert_eq!(disk_offsets(4).len(), 44);
    }
}
