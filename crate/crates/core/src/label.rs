use crate::error::{Result, SegError};

/// Class index reserved for pixels that carry no label.
pub const VOID: u8 = 255;

/// Per-pixel class indices of one image, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if h == 0 || w == 0 || data.len() != h * w {
            return Err(SegError::Shape(format!("label map {h}x{w} with {} values", data.len())));
        }
        Ok(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, value: u8) -> Self {
        Self { h, w, data: vec![value; h * w] }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.w + x] = v;
    }

    /// Every non-void entry must be `< num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.data.iter().position(|&v| v != VOID && v as usize >= num_classes) {
            Some(i) => Err(SegError::Data(format!(
                "label {} at pixel {i} is outside 0..{num_classes}",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn void_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == VOID).count()
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.w) {
            row.reverse();
        }
        out
    }

    /// Nearest-neighbour resize under the align-corners mapping.
    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> Self {
        let ys = crate::tensor::align_corners_nearest(self.h, out_h);
        let xs = crate::tensor::align_corners_nearest(self.w, out_w);
        let mut data = Vec::with_capacity(out_h * out_w);
        for &y in &ys {
            for &x in &xs {
                data.push(self.get(y, x));
            }
        }
        Self { h: out_h, w: out_w, data }
    }
}
