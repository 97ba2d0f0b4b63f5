//! Visual backbone: turns one or two grayscale images into the source
//! sequence of patch feature vectors.
//!
//! Two conv+pool stages (3x3 kernels, same padding, 2x2 average pooling)
//! shrink each view by 4x in both spatial directions, then every patch of the
//! resulting feature map is flattened and linearly projected to the model
//! width. Multi-view inputs concatenate along the patch axis.

mod image;

pub use image::{load_image, load_imgf, load_pgm, write_imgf, write_pgm, Image};

use rand_chacha::ChaCha8Rng;

use crate::tensor::{
    BoundParams, Graph, ParamGroup, ParamId, ParameterStore, Tensor, TensorError,
};
use crate::transformer::Linear;

use thiserror::Error;

type Result<T> = std::result::Result<T, BackboneError>;

/// Total spatial shrink factor of the conv stack (two 2x2 pools).
pub const POOL_FACTOR: usize = 4;
/// Largest number of views per example (frontal plus optional lateral).
pub const MAX_VIEWS: usize = 2;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("image is {height}x{width}, which {reason}")]
    BadImageShape {
        height: usize,
        width: usize,
        reason: String,
    },
    #[error("expected 1 to {MAX_VIEWS} views, got {got}")]
    ViewCount { got: usize },
    #[error("patch size {patch} must be a positive multiple of {POOL_FACTOR}")]
    BadPatchSize { patch: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct BackboneConfig {
    /// Patch size on the input image; must be a multiple of [`POOL_FACTOR`].
    pub patch_size: usize,
    /// Output feature width d.
    pub feature_dim: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
}

impl BackboneConfig {
    pub fn new(patch_size: usize, feature_dim: usize) -> Self {
        Self {
            patch_size,
            feature_dim,
            conv1_channels: 8,
            conv2_channels: 16,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(POOL_FACTOR) {
            return Err(BackboneError::BadPatchSize {
                patch: self.patch_size,
            });
        }
        Ok(())
    }

    /// Patch count for one view of the given dimensions.
    pub fn patches_per_view(&self, height: usize, width: usize) -> Result<usize> {
        self.validate()?;
        if height == 0 || width == 0 || !height.is_multiple_of(self.patch_size) || !width.is_multiple_of(self.patch_size)
        {
            return Err(BackboneError::BadImageShape {
                height,
                width,
                reason: format!("is not divisible by patch size {}", self.patch_size),
            });
        }
        Ok((height / self.patch_size) * (width / self.patch_size))
    }
}

/// Patch feature sequence `[n_patches, feature_dim]`.
#[derive(Debug, Clone)]
pub struct PatchFeatures {
    pub n_patches: usize,
    pub feature_dim: usize,
    pub features: Tensor,
}

/// The trainable extractor. All parameters live in the `Visual` group so the
/// trainer can give them their own learning rate.
#[derive(Debug, Clone)]
pub struct ConvBackbone {
    pub cfg: BackboneConfig,
    conv1: Linear,
    conv2: Linear,
    proj: Linear,
}

impl ConvBackbone {
    pub fn init(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: BackboneConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let conv1 = Linear::init_grouped(
            store,
            &format!("{prefix}.conv1"),
            9,
            cfg.conv1_channels,
            rng,
            ParamGroup::Visual,
        )?;
        let conv2 = Linear::init_grouped(
            store,
            &format!("{prefix}.conv2"),
            9 * cfg.conv1_channels,
            cfg.conv2_channels,
            rng,
            ParamGroup::Visual,
        )?;
        let cell = cfg.patch_size / POOL_FACTOR;
        let proj = Linear::init_grouped(
            store,
            &format!("{prefix}.proj"),
            cell * cell * cfg.conv2_channels,
            cfg.feature_dim,
            rng,
            ParamGroup::Visual,
        )?;
        Ok(Self {
            cfg,
            conv1,
            conv2,
            proj,
        })
    }

    /// Ids of the backbone's parameters (the "visual" learning-rate group).
    pub fn parameter_group(&self, store: &ParameterStore) -> Vec<ParamId> {
        store.group_ids(ParamGroup::Visual)
    }

    /// Extracts the source sequence X for one example (1 or 2 views).
    pub fn extract(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        images: &[Image],
    ) -> Result<PatchFeatures> {
        if images.is_empty() || images.len() > MAX_VIEWS {
            return Err(BackboneError::ViewCount { got: images.len() });
        }
        let mut views = Vec::with_capacity(images.len());
        for img in images {
            views.push(self.extract_view(g, p, img)?);
        }
        let refs: Vec<&Tensor> = views.iter().collect();
        let features = if refs.len() == 1 {
            views[0].clone()
        } else {
            g.concat(0, &refs)?
        };
        Ok(PatchFeatures {
            n_patches: features.rows(),
            feature_dim: self.cfg.feature_dim,
            features,
        })
    }

    fn extract_view(&self, g: &mut Graph, p: &BoundParams, img: &Image) -> Result<Tensor> {
        self.cfg.patches_per_view(img.height, img.width)?;
        let (h, w) = (img.height, img.width);
        let x = Tensor::new(vec![h * w, 1], img.pixels.clone())?;
        let x = self.conv_stage(g, p, &x, &self.conv1, h, w, 1)?;
        let (h, w) = (h / 2, w / 2);
        let x = self.conv_stage(g, p, &x, &self.conv2, h, w, self.cfg.conv1_channels)?;
        let (h, w) = (h / 2, w / 2);
        // flatten each patch of the final map and project to feature_dim
        let cell = self.cfg.patch_size / POOL_FACTOR;
        let map = patch_map(h, w, self.cfg.conv2_channels, cell);
        let n_patches = (h / cell) * (w / cell);
        let patches = g.gather(
            &x,
            map,
            vec![n_patches, cell * cell * self.cfg.conv2_channels],
        )?;
        Ok(self.proj.forward(g, p, &patches)?)
    }

    /// One conv+relu+pool stage over a channels-last `[h*w, c_in]` map.
    #[allow(clippy::too_many_arguments)]
    fn conv_stage(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        x: &Tensor,
        kernel: &Linear,
        h: usize,
        w: usize,
        c_in: usize,
    ) -> Result<Tensor> {
        let cols = g.gather(x, im2col_map(h, w, c_in), vec![h * w, 9 * c_in])?;
        let y = kernel.forward(g, p, &cols)?;
        let y = g.relu(&y)?;
        // pool in channels-first layout, then return to channels-last
        let c_out = y.cols();
        let yt = g.transpose(&y)?;
        let ycf = g.reshape(&yt, vec![c_out, h, w])?;
        let pooled = g.avg_pool_2x2(&ycf)?;
        let flat = g.reshape(&pooled, vec![c_out, (h / 2) * (w / 2)])?;
        Ok(g.transpose(&flat)?)
    }
}

/// Index map for a 3x3 same-padded convolution expressed as a gather:
/// output row = spatial position, columns = the 3x3 neighbourhood per input
/// channel (`None` where the window falls off the image).
fn im2col_map(h: usize, w: usize, c_in: usize) -> Vec<Option<usize>> {
    let mut map = Vec::with_capacity(h * w * 9 * c_in);
    for r in 0..h as isize {
        for c in 0..w as isize {
            for dr in -1..=1 {
                for dc in -1..=1 {
                    for ch in 0..c_in {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr >= 0 && rr < h as isize && cc >= 0 && cc < w as isize {
                            map.push(Some((rr as usize * w + cc as usize) * c_in + ch));
                        } else {
                            map.push(None);
                        }
                    }
                }
            }
        }
    }
    map
}

/// Index map flattening each `cell x cell` patch of a channels-last map into
/// one row, patches in row-major order.
fn patch_map(h: usize, w: usize, c: usize, cell: usize) -> Vec<Option<usize>> {
    let (ph, pw) = (h / cell, w / cell);
    let mut map = Vec::with_capacity(ph * pw * cell * cell * c);
    for pr in 0..ph {
        for pc in 0..pw {
            for r in 0..cell {
                for cc in 0..cell {
                    for ch in 0..c {
                        let row = pr * cell + r;
                        let col = pc * cell + cc;
                        map.push(Some((row * w + col) * c + ch));
                    }
                }
            }
        }
    }
    map
}
