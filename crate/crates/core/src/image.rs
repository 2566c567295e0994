//! Dense row-major image buffers.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image<P> {
    width: u32,
    height: u32,
    data: Vec<P>,
}

/// Binary per-pixel mask.
pub type Mask = Image<bool>;
/// Depth in meters; zero or non-finite marks an invalid pixel.
pub type DepthImage = Image<f32>;
/// 8-bit RGB color.
pub type ColorImage = Image<[u8; 3]>;

impl<P: Clone> Image<P> {
    pub fn filled(width: u32, height: u32, value: P) -> Self {
        Self { width, height, data: vec![value; (width as usize) * (height as usize)] }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<P>) -> Result<Self> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(Error::Dimension(format!(
                "buffer of {} pixels does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> P) -> Self {
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn same_dims<Q>(&self, other: &Image<Q>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn index(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> &P {
        &self.data[self.index(u, v)]
    }

    #[inline]
    pub fn set(&mut self, u: u32, v: u32, value: P) {
        let i = self.index(u, v);
        self.data[i] = value;
    }

    /// Bounds-checked access with signed coordinates.
    pub fn get_checked(&self, u: i64, v: i64) -> Option<&P> {
        if u < 0 || v < 0 || u >= self.width as i64 || v >= self.height as i64 {
            None
        } else {
            Some(self.get(u as u32, v as u32))
        }
    }

    pub fn pixels(&self) -> &[P] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [P] {
        &mut self.data
    }

    pub fn map<Q>(&self, f: impl Fn(&P) -> Q) -> Image<Q> {
        Image { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn invert(&self) -> Mask {
        self.map(|&b| !b)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect();
        Image { width: self.width, height: self.height, data }
    }

    pub fn or(&self, other: &Mask) -> Mask {
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect();
        Image { width: self.width, height: self.height, data }
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Tight bounding box `(x, y, w, h)` of the set pixels.
    pub fn bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for v in 0..self.height {
            for u in 0..self.width {
                if *self.get(u, v) {
                    any = true;
                    x0 = x0.min(u);
                    y0 = y0.min(v);
                    x1 = x1.max(u);
                    y1 = y1.max(v);
                }
            }
        }
        any.then(|| BBox { x: x0, y: y0, w: x1 - x0 + 1, h: y1 - y0 + 1 })
    }
}

/// Axis-aligned pixel box: top-left corner and size, covering
/// columns `x..x + w` and rows `y..y + h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x as f64, self.y as f64, self.w as f64, self.h as f64]
    }
}
