//! Differentiable Gaussian splatting: primitives, rasterization with
//! analytic gradients, image losses and the optimization loop.

mod gaussian;
mod loss;
mod optimize;
mod render;
mod ssim;

pub use gaussian::{
    init_from_cloud, knn_scales, normalize_quat, offsets, quat_to_matrix, sigmoid, softmax, Gaussian3D,
    GaussianScene, ObjectGaussians, BASE_PARAMS, MIN_INIT_SCALE,
};
pub use render::{
    rasterize, rasterize_grad, rasterize_grad_with, rasterize_with, RenderOutput, RenderSettings, ALPHA_MAX,
    COV_DILATION, DEFAULT_ALPHA_MIN, MAX_CONDITION, TILE, TRANSMITTANCE_MIN,
};
pub use ssim::{multiscale_ssim, ssim, ssim_kernel, ssim_raw, MsSsimProxy, PerceptualLoss, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use loss::{loss_input, loss_virtual, InputWeights, LossOutput, VirtualWeights, BACKGROUND_CLASS, PROB_FLOOR};
pub use optimize::{optimize, optimize_with, LearningRates, OptimConfig, OptimTrace, TrainView, VirtualView, DEFAULT_THETA};
