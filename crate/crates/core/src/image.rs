//! Minimal float image buffers.

/// Row-major RGB image with linear float channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, value: [f32; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self { width, height, data }
    }

    pub fn get(&self, row: u32, col: u32) -> [f32; 3] {
        self.data[row as usize * self.width as usize + col as usize]
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Single channel `c` as a scalar image.
    pub fn channel(&self, c: usize) -> ScalarImage {
        ScalarImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| p[c]).collect(),
        }
    }
}

/// Row-major single-channel float image (depth, alpha, masks).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl ScalarImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self { width, height, data }
    }

    pub fn get(&self, row: u32, col: u32) -> f32 {
        self.data[row as usize * self.width as usize + col as usize]
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}
