use super::Scalar;
use crate::error::{Error, Result};
use crate::pixelops::Plane;

/// Channel-major feature map of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![T::zero(); c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::shape(format!("{c}x{h}x{w} tensor needs {} values, got {}", c * h * w, data.len())));
        }
        Ok(Self { c, h, w, data })
    }

    /// Replicates a grayscale plane into `channels` identical channels.
    pub fn from_plane(p: &Plane, channels: usize) -> Self {
        let one: Vec<T> = p.data.iter().map(|&v| T::of(v as f64)).collect();
        let mut data = Vec::with_capacity(one.len() * channels);
        for _ in 0..channels {
            data.extend_from_slice(&one);
        }
        Self { c: channels, h: p.h, w: p.w, data }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let hw = self.hw();
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let hw = self.hw();
        &mut self.data[c * hw..(c + 1) * hw]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    /// Stacks `self` on top of `other` along channels.
    pub fn concat_channels(&self, other: &Self) -> Result<Self> {
        if (self.h, self.w) != (other.h, other.w) {
            return Err(Error::shape(format!("cannot concatenate {}x{} and {}x{} maps", self.h, self.w, other.h, other.w)));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self { c: self.c + other.c, h: self.h, w: self.w, data })
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, first: usize) -> (Self, Self) {
        let cut = first * self.hw();
        (
            Self { c: first, h: self.h, w: self.w, data: self.data[..cut].to_vec() },
            Self { c: self.c - first, h: self.h, w: self.w, data: self.data[cut..].to_vec() },
        )
    }
}
