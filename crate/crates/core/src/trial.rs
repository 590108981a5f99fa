//! One simulated write/read of an array: payload, encoding, selector
//! failures, sneak mask and noisy readout, each from its own seeded stream.

use crate::channel::{
    compute_sneak_mask, read_array_with, sample_failures_with, CellArray, ChannelError, ChannelParams, FailureMask,
    ReadArray, SneakMask,
};
use crate::codec::{CodecError, EncodedArray, Scheme};
use crate::seed::{self, Stream};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone)]
pub struct ArrayInstance {
    pub payload: Vec<u8>,
    pub stored: EncodedArray,
    pub fails: FailureMask,
    pub sneak: SneakMask,
    pub reads: ReadArray,
}

impl ArrayInstance {
    pub fn cells(&self) -> CellArray {
        CellArray(self.stored.bits.clone())
    }
}

/// Trial `index` under `master`. Payload bits are fair coin flips.
pub fn simulate(params: &ChannelParams, scheme: &Scheme, master: u64, index: u64) -> Result<ArrayInstance, SimError> {
    params.validate()?;
    let n = params.n;
    let mut data = seed::rng_for(master, index, Stream::Data);
    let payload: Vec<u8> = (0..scheme.payload_len(n)).map(|_| data.random_range(0..2u8)).collect();
    let stored = scheme.write(&payload, n)?;
    let fails = sample_failures_with(params, &mut seed::rng_for(master, index, Stream::Failures));
    let cells = CellArray(stored.bits.clone());
    let sneak = compute_sneak_mask(&cells, &fails)?;
    let reads = read_array_with(&cells, &sneak, params, &mut seed::rng_for(master, index, Stream::Noise))?;
    Ok(ArrayInstance {
        payload,
        stored,
        fails,
        sneak,
        reads,
    })
}
