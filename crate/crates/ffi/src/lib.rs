//! C ABI over the flitext library: load a checkpoint behind an opaque
//! handle, classify text, and query parameter and FLOPs counts.
//!
//! Every fallible function returns a `FlitextStatus`; on failure the message
//! is available from `flitext_last_error_message` on the same thread.

mod cost;
mod model;
mod status;

pub use cost::{flitext_alignment_parse, flitext_count_params, flitext_estimate_flops, FlitextModelKind};
pub use model::{
    flitext_model_free, flitext_model_load, flitext_model_num_classes, flitext_model_predict, FlitextModel,
};
pub use status::{flitext_last_error_message, FlitextStatus};
