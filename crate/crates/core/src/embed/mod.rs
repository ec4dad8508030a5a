//! Structural node embeddings.

mod factorize;
mod graphwave;
mod table;

pub use factorize::{global_embed_factorize, randomized_svd, FactorizeConfig, Factorization, SymmetricSparse};
pub use graphwave::{
    auto_scales, graphwave_embed, graphwave_from_adjacency, heat_wavelets, WaveletConfig, ZERO_WEIGHT_FLOOR,
};
pub use table::{global_embed_load, EmbeddingTable};
