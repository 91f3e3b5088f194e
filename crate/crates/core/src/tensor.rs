//! Minimal channel-major (C,H,W) tensor used for images, prediction stacks,
//! and network activations.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor3 {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::DimMismatch(format!(
                "tensor data length {} does not match {}x{}x{}",
                data.len(),
                c,
                h,
                w
            )));
        }
        Ok(Tensor3 { c, h, w, data })
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.h + y) * self.w + x]
    }

    /// Channel `c` as a row-major H*W slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.c == other.c && self.h == other.h && self.w == other.w
    }

    /// Stacks single-channel planes into one tensor.
    pub fn stack_planes(planes: &[&[f32]], h: usize, w: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            if p.len() != h * w {
                return Err(Error::DimMismatch(format!(
                    "plane length {} does not match {}x{}",
                    p.len(),
                    h,
                    w
                )));
            }
            data.extend_from_slice(p);
        }
        Ok(Tensor3 {
            c: planes.len(),
            h,
            w,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_channel_major() {
        let mut t = Tensor3::zeros(2, 3, 4);
        *t.at_mut(1, 2, 3) = 5.0;
        assert_eq!(t.as_slice()[1 * 12 + 2 * 4 + 3], 5.0);
        assert_eq!(t.at(1, 2, 3), 5.0);
        assert_eq!(t.channel(1)[2 * 4 + 3], 5.0);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor3::from_vec(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Tensor3::from_vec(1, 2, 2, vec![0.0; 4]).is_ok());
    }
}
