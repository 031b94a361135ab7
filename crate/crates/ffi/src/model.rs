use std::ffi::c_char;
use std::path::Path;

use flitext::data::{TokenBatch, Vocab};
use flitext::models::{load_checkpoint, predict_logits, CheckpointModel};
use flitext::pipeline::VOCAB_FILE;

use crate::status::{guard, null, text, Failure, FlitextStatus};

/// A loaded checkpoint with its vocabulary. Opaque to C.
pub struct FlitextModel {
    model: CheckpointModel,
    vocab: Vocab,
}

impl FlitextModel {
    fn probabilities(&self, input: &str) -> flitext::Result<Vec<f64>> {
        let net = self.model.network();
        let ids = self.vocab.encode(input, net.max_seq().unwrap_or(usize::MAX));
        let batch = TokenBatch::from_sequences(&[ids], net.min_seq())?;
        let logits = predict_logits(net, &batch)?.remove(0);
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
        let sum: f64 = exp.iter().sum();
        Ok(exp.into_iter().map(|e| e / sum).collect())
    }
}

/// Loads a checkpoint. `vocab_path` may be null, in which case the
/// vocabulary file next to the checkpoint is used. On success `*out` owns a
/// handle that must be released with `flitext_model_free`.
///
/// # Safety
/// String arguments must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flitext_model_load(
    ckpt_path: *const c_char,
    vocab_path: *const c_char,
    out: *mut *mut FlitextModel,
) -> FlitextStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = Path::new(text(ckpt_path, "ckpt_path")?);
        let vocab_file = if vocab_path.is_null() {
            ckpt.with_file_name(VOCAB_FILE)
        } else {
            Path::new(text(vocab_path, "vocab_path")?).to_path_buf()
        };
        let model = load_checkpoint(ckpt)?;
        let vocab = Vocab::load(&vocab_file)?;
        *out = Box::into_raw(Box::new(FlitextModel { model, vocab }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from `flitext_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn flitext_model_free(model: *mut FlitextModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn flitext_model_num_classes(model: *const FlitextModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.network().classes())
}

/// Class probabilities for one text. `*out_len` always receives the class
/// count; when `capacity` is smaller nothing else is written and
/// `FLITEXT_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `model` must be a live handle, `input` nul-terminated, `out_probs` valid
/// for `capacity` writes and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn flitext_model_predict(
    model: *const FlitextModel,
    input: *const c_char,
    out_probs: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> FlitextStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        let classes = m.model.network().classes();
        *out_len = classes;
        if capacity < classes {
            return Err(Failure(
                FlitextStatus::BufferTooSmall,
                format!("need room for {classes} probabilities, got {capacity}"),
            ));
        }
        if out_probs.is_null() {
            return Err(null("out_probs"));
        }
        let probs = m.probabilities(text(input, "input")?)?;
        std::slice::from_raw_parts_mut(out_probs, classes).copy_from_slice(&probs);
        Ok(())
    })
}
