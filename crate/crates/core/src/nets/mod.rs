//! Encoder families: the x-vector baseline, the prototypical-network
//! encoder, and the relation-network encoder with its comparison network.

mod forward;
mod spec;
mod weights;

pub use forward::{
    comparison_graph, embed, embed_batch, encoder_graph, stack_frames, EncoderNodes, GraphMode, Tap,
};
pub use spec::{EncoderSpec, FcLayer, HeadSpec, TdnnLayerSpec, FULL_TDNN};
pub use weights::{
    build_network, init_from_pretrained, load_weights, load_weights_for, save_weights, NetworkWeights,
    WEIGHTS_MAGIC,
};

#[cfg(test)]
mod tests;
