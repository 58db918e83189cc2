//! Connected components and pseudo-label assembly.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::{LabelMask, ProbabilityMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "4" => Ok(Connectivity::Four),
            "8" => Ok(Connectivity::Eight),
            other => Err(Error::Config(format!(
                "connectivity must be 4 or 8, got {other:?}"
            ))),
        }
    }
}

impl Connectivity {
    /// Neighbours already visited in a raster scan.
    fn backward(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Links the larger root under the smaller so roots stay at first pixels.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub height: usize,
    pub width: usize,
    /// Component id per pixel, 0 outside the mask.
    pub labels: Vec<u32>,
    /// `sizes[c - 1]` is the size of component `c`.
    pub sizes: Vec<usize>,
    /// Row-major index of each component's first pixel.
    pub first_pixels: Vec<usize>,
    pub connectivity: Connectivity,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn component_mask(&self, id: u32) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |i| self.labels[i] == id)
    }
}

/// Labels components with ids assigned in order of their first pixel.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentLabeling {
    let (h, w) = (mask.height(), mask.width());
    let mut uf = UnionFind::new(h * w);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !mask.get_index(i) {
                continue;
            }
            for &(dr, dc) in connectivity.backward() {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr >= 0 && cc >= 0 && (cc as usize) < w && mask.get(rr as usize, cc as usize) {
                    uf.union(i, rr as usize * w + cc as usize);
                }
            }
        }
    }
    let mut id_of_root = vec![0u32; h * w];
    let mut labels = vec![0u32; h * w];
    let mut sizes = Vec::new();
    let mut first_pixels = Vec::new();
    for i in mask.ones() {
        let root = uf.find(i);
        if id_of_root[root] == 0 {
            sizes.push(0);
            first_pixels.push(i);
            id_of_root[root] = sizes.len() as u32;
        }
        let id = id_of_root[root];
        labels[i] = id;
        sizes[id as usize - 1] += 1;
    }
    ComponentLabeling {
        height: h,
        width: w,
        labels,
        sizes,
        first_pixels,
        connectivity,
    }
}

/// Keeps only the largest component; ties go to the earliest first pixel.
pub fn keep_largest(mask: &BinaryMask, connectivity: Connectivity) -> BinaryMask {
    let cc = connected_components(mask, connectivity);
    // ids already follow first-pixel order, so the first maximum wins
    let best = cc
        .sizes
        .iter()
        .enumerate()
        .fold(None::<(usize, usize)>, |acc, (i, &s)| match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((i, s)),
        });
    match best {
        Some((i, _)) => cc.component_mask(i as u32 + 1),
        None => mask.clone(),
    }
}

/// Largest 6- or 26-connected component of a stack of slices.
///
/// `Four` maps to face adjacency across slices, `Eight` to full adjacency.
pub fn keep_largest_3d(
    slices: &[BinaryMask],
    connectivity: Connectivity,
) -> Result<Vec<BinaryMask>> {
    let Some(first) = slices.first() else {
        return Ok(Vec::new());
    };
    for s in slices {
        first.same_shape(s)?;
    }
    let (h, w) = (first.height(), first.width());
    let plane = h * w;
    let n = plane * slices.len();
    let on = |i: usize| slices[i / plane].get_index(i % plane);
    let mut offsets = Vec::new();
    for dz in -1isize..=0 {
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                let backward = dz < 0 || (dz == 0 && (dr < 0 || (dr == 0 && dc < 0)));
                let faces = (dz != 0) as u8 + (dr != 0) as u8 + (dc != 0) as u8;
                if backward && (connectivity == Connectivity::Eight || faces == 1) {
                    offsets.push((dz, dr, dc));
                }
            }
        }
    }
    let mut uf = UnionFind::new(n);
    for z in 0..slices.len() {
        for r in 0..h {
            for c in 0..w {
                let i = z * plane + r * w + c;
                if !on(i) {
                    continue;
                }
                for &(dz, dr, dc) in &offsets {
                    let (zz, rr, cc) = (z as isize + dz, r as isize + dr, c as isize + dc);
                    if zz < 0 || rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                        continue;
                    }
                    let j = zz as usize * plane + rr as usize * w + cc as usize;
                    if on(j) {
                        uf.union(i, j);
                    }
                }
            }
        }
    }
    let mut size = vec![0usize; n];
    for i in (0..n).filter(|&i| on(i)) {
        let root = uf.find(i);
        size[root] += 1;
    }
    // roots are first voxels, so scanning upward keeps the earliest on ties
    let best = (0..n)
        .filter(|&i| size[i] > 0)
        .fold(None::<usize>, |acc, i| match acc {
            Some(b) if size[b] >= size[i] => acc,
            _ => Some(i),
        });
    let Some(best) = best else {
        return Ok(slices.to_vec());
    };
    Ok((0..slices.len())
        .map(|z| {
            BinaryMask::from_fn(h, w, |i| {
                on(z * plane + i) && uf.find(z * plane + i) == best
            })
        })
        .collect())
}

/// Merges per-class masks into one label map; contested pixels go to the
/// class with the highest posterior, ties to the lower class.
pub fn assemble_labels(masks: &[(usize, BinaryMask)], probs: &ProbabilityMap) -> Result<LabelMask> {
    let (h, w, k) = (probs.height(), probs.width(), probs.classes());
    let mut labels = vec![0u8; h * w];
    let mut best = vec![f32::NEG_INFINITY; h * w];
    for (class, m) in masks {
        if *class == 0 || *class >= k {
            return Err(Error::InvalidArgument(format!(
                "class {class} outside 1..{k}"
            )));
        }
        if m.height() != h || m.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "class {class} mask {}x{} vs {h}x{w}",
                m.height(),
                m.width()
            )));
        }
    }
    let mut order: Vec<&(usize, BinaryMask)> = masks.iter().collect();
    order.sort_by_key(|(c, _)| *c);
    for (class, m) in order {
        for i in m.ones() {
            let p = probs.prob(i, *class);
            if p > best[i] {
                best[i] = p;
                labels[i] = *class as u8;
            }
        }
    }
    LabelMask::new(h, w, k, labels)
}
