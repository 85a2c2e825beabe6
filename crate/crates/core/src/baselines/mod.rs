//! Classic comparison methods: PCA background modelling, incremental robust PCA,
//! the pixel-difference threshold classifier and threshold sweeps.

pub mod pca;
pub mod rpca;
pub mod svd;
pub mod sweep;
pub mod threshold;

pub use pca::{pca_background, pca_fit, PcaBackgroundModel};
pub use rpca::{batch_pcp, rpca_update, PcpResult, RpcaState};
pub use sweep::{default_grid, threshold_sweep, SweepPoint, SweepResult};
pub use threshold::threshold_classify;
