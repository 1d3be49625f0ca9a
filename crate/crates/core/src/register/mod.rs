//! Depth alignment: global scale-shift fit and non-rigid registration of
//! estimated depth onto condition geometry.

mod adam;
mod align;
mod chamfer;
pub mod kdtree;
pub mod mlp;
mod pyramid;

pub use adam::Adam;
pub use align::{affine_residual, apply_affine, fit_scale_shift, fit_scale_shift_or_fallback, AffineDepthParams};
pub use chamfer::{chamfer_points, chamfer_with_grad, truncated_chamfer, Correspondences};
pub use kdtree::KdTree;
pub use pyramid::{
    register, rotate_with_jacobian, DeformationPyramid, LevelCache, Normalization, RegistrationParams,
    RegistrationResult, WarpLevel, WarpMode,
};
