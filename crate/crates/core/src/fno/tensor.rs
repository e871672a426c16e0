use crate::error::{Error, Result};

/// Dense (batch, channels, height, width) array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// All channels of sample `b`.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.shape[1] * self.plane_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.shape[1] * self.plane_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let p = self.plane_len();
        let off = (b * self.shape[1] + c) * p;
        &self.data[off..off + p]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let p = self.plane_len();
        let off = (b * self.shape[1] + c) * p;
        &mut self.data[off..off + p]
    }

    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[((b * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack single samples (each `channels × h × w`) into a batch.
    pub fn stack(samples: &[&[f64]], channels: usize, h: usize, w: usize) -> Result<Self> {
        let n = channels * h * w;
        let mut data = Vec::with_capacity(samples.len() * n);
        for s in samples {
            if s.len() != n {
                return Err(Error::Shape(format!("sample has {} values, expected {n}", s.len())));
            }
            data.extend_from_slice(s);
        }
        Tensor4::from_vec([samples.len(), channels, h, w], data)
    }
}
