//! Differentiable rendering of isotropic gaussian splats and the losses used
//! to fit them.

pub mod density;
pub mod gaussian;
pub mod loss;
pub mod optim;
pub mod raster;
pub mod ssim;
pub mod uncertainty;

pub use density::{densify_and_prune, DensifyReport, DensifyThresholds, DensityStats};
pub use gaussian::{Gaussian3D, SplatMap, PARAMS_PER_GAUSSIAN};
pub use loss::{edge_aware_tv, loss_reconstruction, loss_reconstruction_masked, ReconLoss, ReconWeights};
pub use optim::{Adam, AdamState};
pub use raster::{backward, rasterize, rasterize_reference, render, ForwardState, PixelGradients, RenderGradients, RenderOutput, RenderSettings};
pub use ssim::{ssim, ssim_backward, ssim_with_grad};
pub use uncertainty::{kmeans, loss_uncertainty, FeatureProvider, HandcraftedFeatures, UncertaintyModel};
