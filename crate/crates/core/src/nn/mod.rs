//! Differentiable layer primitives.

pub mod activation;
pub mod conv;
pub mod convlstm;
pub mod gradcheck;
pub mod init;

pub use activation::{elu, sigmoid};
pub use conv::{conv2d, conv3d, deconv2d, same_padding, Conv2d, Conv3d, ConvGeometry, ConvTranspose2d, LayerGrads};
pub use convlstm::{convlstm_step, ConvLstmCache, ConvLstmCell, ConvLstmGrads, ConvLstmState};
pub use gradcheck::{grad_check, grad_check_report, relative_error, GradCheckReport};
