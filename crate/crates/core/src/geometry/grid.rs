use crate::error::{Error, Result};

/// Pixel-center lattice over `[-1, 1]²`, stored row-major.
///
/// Pixel `(row, col)` sits at `x = -1 + (2 col + 1) / W`, `y = -1 + (2 row + 1) / H`,
/// so no coordinate touches the domain boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateGrid {
    height: usize,
    width: usize,
    coords: Vec<[f64; 2]>,
}

pub fn make_grid(height: usize, width: usize) -> Result<CoordinateGrid> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!(
            "grid dimensions must be positive, got {height}x{width}"
        )));
    }
    let mut coords = Vec::with_capacity(height * width);
    for r in 0..height {
        let y = pixel_center(r, height);
        for c in 0..width {
            coords.push([pixel_center(c, width), y]);
        }
    }
    Ok(CoordinateGrid {
        height,
        width,
        coords,
    })
}

#[inline]
pub(crate) fn pixel_center(index: usize, count: usize) -> f64 {
    -1.0 + (2 * index + 1) as f64 / count as f64
}

impl CoordinateGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of coordinates, `H * W`.
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn coord(&self, row: usize, col: usize) -> [f64; 2] {
        self.coords[row * self.width + col]
    }
}

/// Dense row-major scalar field on an `H x W` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if values.len() != height * width {
            return Err(Error::invalid(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Image {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }

    /// `max - min` over all pixels.
    pub fn value_range(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    }

    pub fn scaled(&self, alpha: f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn matches_grid(&self, grid: &CoordinateGrid) -> bool {
        self.height == grid.height() && self.width == grid.width()
    }
}
