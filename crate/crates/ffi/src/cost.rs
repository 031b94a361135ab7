use std::ffi::c_char;

use flitext::efficiency::{count_params, estimate_flops, ModelSpec};
use flitext::pipeline::{AlignmentSpec, RunConfig};

use crate::status::{guard, null, text, Failure, FlitextStatus};

/// Which of the two configured networks a cost query refers to.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlitextModelKind {
    Inspirer = 0,
    Target = 1,
}

/// # Safety
/// `config_toml` must be null or nul-terminated.
unsafe fn spec(config_toml: *const c_char, kind: FlitextModelKind) -> Result<ModelSpec, Failure> {
    let cfg = if config_toml.is_null() {
        RunConfig::reference()
    } else {
        RunConfig::from_toml(text(config_toml, "config_toml")?)?
    };
    Ok(match kind {
        FlitextModelKind::Inspirer => ModelSpec::Inspirer(cfg.inspirer),
        FlitextModelKind::Target => ModelSpec::Target(cfg.target),
    })
}

/// Inference parameter count of one network declared in a run config
/// (TOML text; null selects the reference config). Sizes are taken as
/// declared, including the vocabulary size.
///
/// # Safety
/// `config_toml` must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flitext_count_params(
    config_toml: *const c_char,
    kind: FlitextModelKind,
    out: *mut u64,
) -> FlitextStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = count_params(&spec(config_toml, kind)?) as u64;
        Ok(())
    })
}

/// Headline FLOPs of one forward pass over a sequence of `seq_len` tokens,
/// counting a multiply-add as two operations.
///
/// # Safety
/// `config_toml` must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flitext_estimate_flops(
    config_toml: *const c_char,
    kind: FlitextModelKind,
    seq_len: usize,
    out: *mut u64,
) -> FlitextStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = estimate_flops(&spec(config_toml, kind)?, seq_len)?.total;
        Ok(())
    })
}

/// Parses an alignment such as `{0,1}-{2,5}` and checks it against a model
/// with `layers` transformer layers and the given filter sizes. Pairs are
/// written as (layer, filter size) into `out_pairs`, two entries per pair;
/// `*out_len` receives the pair count. When `pair_capacity` is too small
/// only the count is written.
///
/// # Safety
/// `spec_text` must be nul-terminated, `filter_sizes` valid for `n_sizes`
/// reads, `out_pairs` valid for `2 * pair_capacity` writes, `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn flitext_alignment_parse(
    spec_text: *const c_char,
    layers: usize,
    filter_sizes: *const usize,
    n_sizes: usize,
    out_pairs: *mut usize,
    pair_capacity: usize,
    out_len: *mut usize,
) -> FlitextStatus {
    guard(|| {
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        let sizes = match n_sizes {
            0 => &[][..],
            _ if filter_sizes.is_null() => return Err(null("filter_sizes")),
            n => std::slice::from_raw_parts(filter_sizes, n),
        };
        let spec: AlignmentSpec = text(spec_text, "spec_text")?.parse()?;
        spec.validate(layers, sizes)?;
        let pairs = spec.pairs();
        *out_len = pairs.len();
        if pair_capacity < pairs.len() {
            return Err(Failure(
                FlitextStatus::BufferTooSmall,
                format!("need room for {} pairs, got {pair_capacity}", pairs.len()),
            ));
        }
        if out_pairs.is_null() {
            return Err(null("out_pairs"));
        }
        let out = std::slice::from_raw_parts_mut(out_pairs, 2 * pairs.len());
        for (i, (l, k)) in pairs.iter().enumerate() {
            out[2 * i] = *l;
            out[2 * i + 1] = *k;
        }
        Ok(())
    })
}
