//! Landscape `1×4` patch tokenisation of `C×H×W` images.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PATCH_WIDTH: usize = 4;

/// Flat source index, in a `[B, C, H, W]` buffer, of every element of the
/// `[B, H, W/4, C·4]` token tensor. Token feature `f = channel·4 + offset`.
pub(crate) fn patchify_indices(batch: usize, channels: usize, h: usize, w: usize) -> Vec<usize> {
    let cols = w / PATCH_WIDTH;
    let mut idx = Vec::with_capacity(batch * channels * h * w);
    for b in 0..batch {
        for r in 0..h {
            for c in 0..cols {
                for ch in 0..channels {
                    for p in 0..PATCH_WIDTH {
                        idx.push(((b * channels + ch) * h + r) * w + c * PATCH_WIDTH + p);
                    }
                }
            }
        }
    }
    idx
}

/// Inverse permutation of [`patchify_indices`].
pub(crate) fn unpatchify_indices(batch: usize, channels: usize, h: usize, w: usize) -> Vec<usize> {
    let fwd = patchify_indices(batch, channels, h, w);
    let mut inv = vec![0; fwd.len()];
    for (dst, &src) in fwd.iter().enumerate() {
        inv[src] = dst;
    }
    inv
}

fn check_width(w: usize) -> Result<()> {
    if w == 0 || !w.is_multiple_of(PATCH_WIDTH) {
        return Err(Error::invalid(format!(
            "image width {w} is not a positive multiple of the patch width {PATCH_WIDTH}"
        )));
    }
    Ok(())
}

/// `C×H×W` image to `H × (W/4)` tokens of dimension `4C`.
pub fn patchify(image: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::invalid(format!(
            "patchify expects C×H×W, got {:?}",
            image.shape()
        )));
    };
    check_width(w)?;
    let src = image.data();
    let data = patchify_indices(1, c, h, w)
        .iter()
        .map(|&i| src[i])
        .collect();
    Tensor::new(vec![h, w / PATCH_WIDTH, c * PATCH_WIDTH], data)
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor) -> Result<Tensor> {
    let &[h, cols, dim] = tokens.shape() else {
        return Err(Error::invalid(format!(
            "unpatchify expects H×cols×dim, got {:?}",
            tokens.shape()
        )));
    };
    if dim % PATCH_WIDTH != 0 {
        return Err(Error::invalid(format!(
            "token dim {dim} not a multiple of 4"
        )));
    }
    let c = dim / PATCH_WIDTH;
    let w = cols * PATCH_WIDTH;
    let src = tokens.data();
    let data = unpatchify_indices(1, c, h, w)
        .iter()
        .map(|&i| src[i])
        .collect();
    Tensor::new(vec![c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_resolution_shape() {
        let img = Tensor::zeros(vec![2, 64, 1024]);
        assert_eq!(patchify(&img).unwrap().shape(), &[64, 256, 8]);
    }

    #[test]
    fn token_layout() {
        let img = Tensor::from_fn(vec![2, 2, 8], |i| i as f64);
        let tok = patchify(&img).unwrap();
        // token (r=1, c=1): channel 0 pixels (1, 4..8) then channel 1
        let t = &tok.data()[(2 + 1) * 8..(2 + 2) * 8];
        assert_eq!(t, &[12.0, 13.0, 14.0, 15.0, 28.0, 29.0, 30.0, 31.0]);
    }

    #[test]
    fn constant_image_gives_identical_tokens() {
        let tok = patchify(&Tensor::full(vec![2, 3, 16], 0.25)).unwrap();
        assert!(tok.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn rejects_bad_width() {
        assert!(patchify(&Tensor::zeros(vec![2, 4, 10])).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_exact(h in 1usize..6, cols in 1usize..6, c in 1usize..4, seed in any::<u64>()) {
            let img = Tensor::from_fn(vec![c, h, cols * 4], |i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 * 0.37);
            let back = unpatchify(&patchify(&img).unwrap()).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
