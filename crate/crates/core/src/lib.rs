pub mod autodiff;
pub mod datagen;
pub mod learners;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod trainer;
