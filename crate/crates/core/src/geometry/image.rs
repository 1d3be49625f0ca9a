use super::{CategoryId, Rgb};
use crate::error::{Error, Result};

fn check_dims(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Per-pixel camera-z depth in meters with an explicit validity mask.
///
/// Invalid pixels store `0.0`; the mask is authoritative.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Builds a map from a per-pixel closure; non-finite or non-positive
    /// outputs become invalid.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Self {
        let mut map = DepthMap::invalid(width, height);
        for y in 0..height {
            for x in 0..width {
                if let Some(d) = f(x, y) {
                    map.set(x, y, d);
                }
            }
        }
        map
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Depth at `(x, y)` if valid.
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.get_index(y * self.width + x)
    }

    pub fn get_index(&self, i: usize) -> Option<f64> {
        self.valid[i].then(|| self.values[i])
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// Sets a depth; anything not finite and positive invalidates the pixel.
    pub fn set(&mut self, x: usize, y: usize, d: f64) {
        let i = y * self.width + x;
        self.set_index(i, d);
    }

    pub fn set_index(&mut self, i: usize, d: f64) {
        if d.is_finite() && d > 0.0 {
            self.values[i] = d;
            self.valid[i] = true;
        } else {
            self.values[i] = 0.0;
            self.valid[i] = false;
        }
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.set(x, y, 0.0);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Keeps only pixels where `keep` is true.
    pub fn masked(&self, keep: &[bool]) -> Result<DepthMap> {
        if keep.len() != self.len() {
            return Err(Error::Dimension("mask length".into()));
        }
        let mut out = self.clone();
        for (i, k) in keep.iter().enumerate() {
            if !k {
                out.set_index(i, 0.0);
            }
        }
        Ok(out)
    }

    pub fn ensure_same_dims(&self, other: &DepthMap) -> Result<()> {
        check_dims("depth maps", self.dims(), other.dims())
    }
}

/// RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorMap {
    width: usize,
    height: usize,
    data: Vec<Rgb>,
}

impl ColorMap {
    pub fn new(width: usize, height: usize) -> Self {
        ColorMap {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.data[y * self.width + x]
    }

    /// Stores a color clamped to `[0, 1]`; NaN channels become 0.
    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        let i = y * self.width + x;
        self.set_index(i, c);
    }

    pub fn set_index(&mut self, i: usize, c: Rgb) {
        self.data[i] = c.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.data
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        check_dims("color map", self.dims(), dims)
    }
}

/// Per-pixel category identifiers; `0` means empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMap {
    width: usize,
    height: usize,
    data: Vec<CategoryId>,
}

impl SemanticMap {
    pub fn new(width: usize, height: usize) -> Self {
        SemanticMap {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<CategoryId>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "semantic data has {} entries for {width}x{height}",
                data.len()
            )));
        }
        Ok(SemanticMap { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> CategoryId {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, id: CategoryId) {
        self.data[y * self.width + x] = id;
    }

    pub fn ids(&self) -> &[CategoryId] {
        &self.data
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        check_dims("semantic map", self.dims(), dims)
    }
}
