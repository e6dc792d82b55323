//! Sources of repulsion inputs: the unlabeled points on which particle
//! predictions are pushed apart.

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Layout of a flattened image row: `H × W × C`, channels fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RepulsionSource {
    /// Rows of the training inputs.
    TrainInputs(Matrix),
    /// Training rows with their `patch_side × patch_side` tiles shuffled.
    PatchShuffle {
        data: Matrix,
        patch_side: usize,
        shape: ImageShape,
    },
    /// Rows of an unlabeled (typically out-of-distribution) pool.
    OodPool(Matrix),
    /// I.i.d. uniform noise on `[low, high)^dim`.
    UniformNoise { low: f64, high: f64, dim: usize },
    /// I.i.d. uniform samples from a box, one `(low, high)` pair per dimension.
    UniformDomain { bounds: Vec<(f64, f64)> },
}

impl RepulsionSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            RepulsionSource::TrainInputs(m) | RepulsionSource::OodPool(m) => {
                if m.rows() == 0 {
                    return Err(Error::Empty("repulsion pool"));
                }
            }
            RepulsionSource::PatchShuffle {
                data,
                patch_side,
                shape,
            } => {
                if data.rows() == 0 {
                    return Err(Error::Empty("repulsion pool"));
                }
                if data.cols() != shape.len() {
                    return Err(Error::DimensionMismatch {
                        context: "patch-shuffle image size".into(),
                        expected: shape.len(),
                        found: data.cols(),
                    });
                }
                check_patch(*shape, *patch_side)?;
            }
            RepulsionSource::UniformNoise { low, high, dim } => {
                if !(low < high) || *dim == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "uniform noise needs low < high and dim > 0, got [{low}, {high}) x {dim}"
                    )));
                }
            }
            RepulsionSource::UniformDomain { bounds } => {
                if bounds.is_empty() {
                    return Err(Error::Empty("uniform domain bounds"));
                }
                if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo < hi)) {
                    return Err(Error::InvalidConfig(format!(
                        "uniform domain bound [{lo}, {hi}) is empty"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self {
            RepulsionSource::TrainInputs(m) | RepulsionSource::OodPool(m) => m.cols(),
            RepulsionSource::PatchShuffle { data, .. } => data.cols(),
            RepulsionSource::UniformNoise { dim, .. } => *dim,
            RepulsionSource::UniformDomain { bounds } => bounds.len(),
        }
    }

    /// Draws a batch of `size` repulsion inputs.
    ///
    /// Pool-backed sources sample rows without replacement, falling back to
    /// sampling with replacement when `size` exceeds the pool.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, size: usize) -> Result<Matrix> {
        if size == 0 {
            return Err(Error::Empty("repulsion batch"));
        }
        self.validate()?;
        match self {
            RepulsionSource::TrainInputs(m) | RepulsionSource::OodPool(m) => {
                Ok(m.select_rows(&sample_rows(rng, m.rows(), size)))
            }
            RepulsionSource::PatchShuffle {
                data,
                patch_side,
                shape,
            } => {
                let mut out = data.select_rows(&sample_rows(rng, data.rows(), size));
                for r in 0..size {
                    let shuffled = patch_shuffle(out.row(r), *shape, *patch_side, rng)?;
                    out.row_mut(r).copy_from_slice(&shuffled);
                }
                Ok(out)
            }
            RepulsionSource::UniformNoise { low, high, dim } => Ok(Matrix::from_vec(
                size,
                *dim,
                (0..size * dim).map(|_| rng.random_range(*low..*high)).collect(),
            )),
            RepulsionSource::UniformDomain { bounds } => {
                let mut data = Vec::with_capacity(size * bounds.len());
                for _ in 0..size {
                    for &(lo, hi) in bounds {
                        data.push(rng.random_range(lo..hi));
                    }
                }
                Ok(Matrix::from_vec(size, bounds.len(), data))
            }
        }
    }
}

fn sample_rows<R: Rng + ?Sized>(rng: &mut R, pool: usize, size: usize) -> Vec<usize> {
    if size <= pool {
        index::sample(rng, pool, size).into_vec()
    } else {
        (0..size).map(|_| rng.random_range(0..pool)).collect()
    }
}

fn check_patch(shape: ImageShape, patch_side: usize) -> Result<()> {
    if patch_side == 0 {
        return Err(Error::InvalidConfig("patch side must be positive".into()));
    }
    if patch_side > shape.height.max(shape.width) {
        return Err(Error::PatchTooLarge {
            patch: patch_side,
            height: shape.height,
            width: shape.width,
        });
    }
    Ok(())
}

/// Tile rectangle `(row, col, height, width)` in pixels.
type Tile = (usize, usize, usize, usize);

fn tiles(shape: ImageShape, p: usize) -> Vec<Tile> {
    let mut out = Vec::new();
    for r in (0..shape.height).step_by(p) {
        for c in (0..shape.width).step_by(p) {
            out.push((r, c, p.min(shape.height - r), p.min(shape.width - c)));
        }
    }
    out
}

/// A rearrangement of an image's tiles: tile `k` of the output is taken from
/// tile `source[k]` of the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePermutation {
    pub shape: ImageShape,
    pub patch_side: usize,
    pub source: Vec<usize>,
}

impl TilePermutation {
    /// Draws a permutation that shuffles tiles uniformly within each
    /// tile-shape class (edge tiles are smaller when `p` does not divide the
    /// image). Classes are shuffled in order of first appearance in row-major
    /// tile order.
    pub fn random<R: Rng + ?Sized>(shape: ImageShape, patch_side: usize, rng: &mut R) -> Result<Self> {
        check_patch(shape, patch_side)?;
        let tiles = tiles(shape, patch_side);
        let mut classes: Vec<((usize, usize), Vec<usize>)> = Vec::new();
        for (k, t) in tiles.iter().enumerate() {
            let key = (t.2, t.3);
            match classes.iter_mut().find(|(s, _)| *s == key) {
                Some((_, members)) => members.push(k),
                None => classes.push((key, vec![k])),
            }
        }
        let mut source: Vec<usize> = (0..tiles.len()).collect();
        for (_, members) in &classes {
            let mut shuffled = members.clone();
            shuffled.shuffle(rng);
            for (&dest, &src) in members.iter().zip(&shuffled) {
                source[dest] = src;
            }
        }
        Ok(Self {
            shape,
            patch_side,
            source,
        })
    }

    pub fn inverse(&self) -> Self {
        let mut source = vec![0; self.source.len()];
        for (dest, &src) in self.source.iter().enumerate() {
            source[src] = dest;
        }
        Self {
            shape: self.shape,
            patch_side: self.patch_side,
            source,
        }
    }

    pub fn apply(&self, image: &[f64]) -> Result<Vec<f64>> {
        if image.len() != self.shape.len() {
            return Err(Error::DimensionMismatch {
                context: "image size".into(),
                expected: self.shape.len(),
                found: image.len(),
            });
        }
        let tiles = tiles(self.shape, self.patch_side);
        let (w, ch) = (self.shape.width, self.shape.channels);
        let mut out = vec![0.0; image.len()];
        for (dest, &src) in self.source.iter().enumerate() {
            let (dr, dc, th, tw) = tiles[dest];
            let (sr, sc, _, _) = tiles[src];
            for y in 0..th {
                let d0 = ((dr + y) * w + dc) * ch;
                let s0 = ((sr + y) * w + sc) * ch;
                out[d0..d0 + tw * ch].copy_from_slice(&image[s0..s0 + tw * ch]);
            }
        }
        Ok(out)
    }
}

/// Shuffles the `p × p` tiles of one `H × W × C` image (channels move together).
pub fn patch_shuffle<R: Rng + ?Sized>(
    image: &[f64],
    shape: ImageShape,
    patch_side: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    TilePermutation::random(shape, patch_side, rng)?.apply(image)
}
