//! Attention capture, local angular attention maps and epipolar-plane images.

mod attention;
mod epi;

pub use attention::{
    capture_attention, local_angular_attention, records_for_block, records_from_trace, AttentionRecord,
    LocalAngularMap, Region, FIG_THRESHOLD,
};
pub use epi::{epi_extract, EpiAxis};
