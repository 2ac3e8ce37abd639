//! Small convolutional image backbone.
//!
//! A stack of 3x3 stride-2 conv blocks, global average pooling, and a linear
//! head. It stands in for a large pretrained backbone; anything that
//! produces a feature row of the same dimension can feed
//! [`crate::net::ReconNet::forward_from_feature`] instead.

use crate::error::{Error, Result};
use crate::img::Image;
use crate::nn::{ConvBlock, Linear, ParamSet, Tape, TapeParams, Var};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct ImageEncoder {
    blocks: Vec<ConvBlock>,
    head: Linear,
    img_size: usize,
    img_channels: usize,
    /// `[C, H', W']` after the conv stack; the head flattens this grid so
    /// spatial layout survives into the feature row.
    final_shape: [usize; 3],
}

impl ImageEncoder {
    pub fn build(
        ps: &mut ParamSet,
        name: &str,
        img_size: usize,
        img_channels: usize,
        conv_channels: &[usize],
        d_img: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut blocks = Vec::with_capacity(conv_channels.len());
        let mut in_ch = img_channels;
        let mut side = img_size;
        for (i, &out_ch) in conv_channels.iter().enumerate() {
            blocks.push(ConvBlock::new(ps, &format!("{name}.conv{i}"), in_ch, out_ch, rng));
            in_ch = out_ch;
            side = side.div_ceil(2);
        }
        let flat = in_ch * side * side;
        let head = Linear::new(ps, &format!("{name}.head"), flat, d_img, rng);
        ImageEncoder {
            blocks,
            head,
            img_size,
            img_channels,
            final_shape: [in_ch, side, side],
        }
    }

    pub fn check_shape(&self, image: &Image) -> Result<()> {
        if image.height != self.img_size
            || image.width != self.img_size
            || image.channels != self.img_channels
        {
            return Err(Error::invalid(format!(
                "image shape {}x{}x{} does not match configured {}x{}x{}",
                image.height,
                image.width,
                image.channels,
                self.img_size,
                self.img_size,
                self.img_channels
            )));
        }
        Ok(())
    }

    /// Encodes an image into a `1 x d_img` feature row.
    pub fn apply<'t>(&self, tape: &'t Tape, tp: &TapeParams<'t>, image: &Image) -> Result<Var<'t>> {
        self.check_shape(image)?;
        Ok(self.apply_tensor(tape, tp, image.to_tensor()))
    }

    pub fn apply_tensor<'t>(
        &self,
        tape: &'t Tape,
        tp: &TapeParams<'t>,
        pixels: crate::nn::Tensor,
    ) -> Var<'t> {
        self.apply_var(tp, tape.leaf(pixels))
    }

    /// Encoder over an existing tape variable, keeping its gradient chain.
    pub fn apply_var<'t>(&self, tp: &TapeParams<'t>, pixels: Var<'t>) -> Var<'t> {
        let mut x = pixels;
        for block in &self.blocks {
            x = block.apply(tp, x);
        }
        let flat = self.final_shape[0] * self.final_shape[1] * self.final_shape[2];
        let flattened = x.reshape(&[1, flat]);
        self.head.apply(tp, flattened)
    }
}
