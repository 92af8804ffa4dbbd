//! Small fully-connected networks with hand-written reverse mode, Adam,
//! target tracking, the squashed-Gaussian policy head and critic ensembles.

pub mod adam;
pub mod checkpoint;
pub mod ensemble;
pub mod mlp;
pub mod policy;

pub use adam::{adam_step, polyak_update, AdamState};
pub use checkpoint::{Blob, Checkpoint};
pub use ensemble::{critic_input, ensemble_forward, CriticEnsembleNet, EnsembleBatch, EnsembleOutput};
pub use mlp::{
    backward_batch, forward_batch, input_gradient, mlp_backward, mlp_forward, predict_batch, Activation, ForwardCache, MlpSpec,
    ParamVector, Segment, SegmentKind,
};
pub use policy::{policy_sample, GaussianPolicyHead, PolicyBatch, SampleMode};
