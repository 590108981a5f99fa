pub mod analysis;
pub mod bits;
pub mod channel;
pub mod codec;
pub mod detect;
pub mod experiment;
pub mod mlp;
pub mod seed;
pub mod trial;
