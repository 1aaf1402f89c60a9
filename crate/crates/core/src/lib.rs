pub mod autodiff;
pub mod container;
pub mod correction;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod report;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Gradients, ParamId, ParamStore, Tape, Var};
pub use error::{Error, Result};
pub use optim::{AdamConfig, AdamState};
pub use tensor::Tensor;
pub use dataset::{Dataset, LabelNoiseMode, MultimodalDataset, MultimodalSample};
pub use synth::{GeneratorConfig, NoiseConfig};
pub use model::{Model, ModelConfig, Modality};
