//! C ABI over `lora-forge`.
//!
//! Every fallible function returns an [`LfStatus`]; on failure the message is
//! kept per thread and read with [`lf_last_error_message`]. Objects cross the
//! boundary as opaque pointers created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Token ids are `uint32_t`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lora_forge::composition::{compose_modules, CompositionSpec};
use lora_forge::lora::{self, AdaptedModel, CompositionMode, LoraModule};
use lora_forge::metrics::{rouge_l, rouge_n};
use lora_forge::transformer::{self, forward_logits, generate_greedy, LanguageModel, Model, ModelConfig};
use lora_forge::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Io = 5,
    Corrupt = 6,
    Incompatible = 7,
    Numeric = 8,
    BufferTooSmall = 9,
    Internal = 10,
}

/// How modules are combined by [`lf_compose`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfCompositionMode {
    AbSpace = 0,
    DeltaSpace = 1,
}

/// Opaque base model.
pub struct LfModel(Model<f32>);

/// Opaque adapter module.
pub struct LfModule(LoraModule);

/// Opaque base model with adapters applied.
pub struct LfAdapted(AdaptedModel<f32>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LfStatus {
    match e {
        Error::Config(_) | Error::Mode(_) => LfStatus::Config,
        Error::Data(_) | Error::Schema { .. } => LfStatus::Data,
        Error::Io { .. } => LfStatus::Io,
        Error::Corruption { .. } | Error::Version { .. } => LfStatus::Corrupt,
        Error::Compatibility { .. } | Error::Dimension { .. } => LfStatus::Incompatible,
        Error::Numeric(_) => LfStatus::Numeric,
        Error::Index { .. } | Error::Length(_) => LfStatus::InvalidArgument,
        _ => LfStatus::Internal,
    }
}

enum Fail {
    Status(LfStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(LfStatus::NullArgument, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LfStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            LfStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(LfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn tokens_arg(p: *const u32, len: usize) -> Result<Vec<usize>, Fail> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null("token buffer"));
    }
    Ok(std::slice::from_raw_parts(p, len).iter().map(|&t| t as usize).collect())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out<T: Copy>(src: &[T], out: *mut T, cap: usize, out_len: *mut usize) -> Result<(), Fail> {
    if out_len.is_null() {
        return Err(null("length output"));
    }
    *out_len = src.len();
    if src.len() > cap {
        return Err(Fail::Status(
            LfStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if out.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length without the NUL, or 0
/// when there is no error.
#[no_mangle]
pub unsafe extern "C" fn lf_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Builds a randomly initialized model from a JSON config with the fields
/// `vocab_size, d_model, n_heads, n_layers, d_ffn, max_seq_len, seed` and
/// optionally `tied_head`.
#[no_mangle]
pub unsafe extern "C" fn lf_model_new(config_json: *const c_char, out: *mut *mut LfModel) -> LfStatus {
    guard(|| {
        let text = str_arg(config_json, "config")?;
        let config: ModelConfig = serde_json::from_str(text).map_err(Error::from)?;
        put(out, LfModel(transformer::build_model(&config)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_model_load(path: *const c_char, out: *mut *mut LfModel) -> LfStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        put(out, LfModel(transformer::load_model(Path::new(p))?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_model_save(model: *const LfModel, path: *const c_char) -> LfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        transformer::save_model(&m.0, Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_model_free(model: *mut LfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vocabulary size, or 0 for a null model.
#[no_mangle]
pub unsafe extern "C" fn lf_model_vocab_size(model: *const LfModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().vocab_size)
}

unsafe fn last_logits(lm: &dyn LanguageModel<f32>, tokens: *const u32, len: usize, out: *mut f32, cap: usize, out_len: *mut usize) -> Result<(), Fail> {
    let toks = tokens_arg(tokens, len)?;
    let logits = forward_logits(lm, &toks)?;
    let v = lm.config().vocab_size;
    let data = logits.data();
    copy_out(&data[data.len() - v..], out, cap, out_len)
}

unsafe fn generate(
    lm: &dyn LanguageModel<f32>,
    prompt: *const u32,
    len: usize,
    max_new: usize,
    stop: i64,
    out: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> Result<(), Fail> {
    let toks = tokens_arg(prompt, len)?;
    let stop = usize::try_from(stop).ok();
    let gen: Vec<u32> = generate_greedy(lm, &toks, max_new, stop)?.into_iter().map(|t| t as u32).collect();
    copy_out(&gen, out, cap, out_len)
}

/// Logits of the next token after `tokens` (length `vocab_size`).
#[no_mangle]
pub unsafe extern "C" fn lf_model_next_logits(
    model: *const LfModel,
    tokens: *const u32,
    len: usize,
    out: *mut f32,
    cap: usize,
    out_len: *mut usize,
) -> LfStatus {
    guard(|| last_logits(&as_ref(model, "model")?.0, tokens, len, out, cap, out_len))
}

/// Greedy continuation of `prompt`; `stop < 0` disables the stop token.
#[no_mangle]
pub unsafe extern "C" fn lf_model_generate(
    model: *const LfModel,
    prompt: *const u32,
    len: usize,
    max_new: usize,
    stop: i64,
    out: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> LfStatus {
    guard(|| generate(&as_ref(model, "model")?.0, prompt, len, max_new, stop, out, cap, out_len))
}

#[no_mangle]
pub unsafe extern "C" fn lf_module_load(path: *const c_char, out: *mut *mut LfModule) -> LfStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        put(out, LfModule(lora::load_module(Path::new(p))?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_module_save(module: *const LfModule, path: *const c_char) -> LfStatus {
    guard(|| {
        let m = as_ref(module, "module")?;
        lora::save_module(&m.0, Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_module_free(module: *mut LfModule) {
    if !module.is_null() {
        drop(Box::from_raw(module));
    }
}

/// Adapter rank, or 0 for a null module.
#[no_mangle]
pub unsafe extern "C" fn lf_module_rank(module: *const LfModule) -> usize {
    module.as_ref().map_or(0, |m| m.0.rank())
}

/// CRC-32 of the module's serialized bytes.
#[no_mangle]
pub unsafe extern "C" fn lf_module_checksum(module: *const LfModule, out: *mut u32) -> LfStatus {
    guard(|| {
        let m = as_ref(module, "module")?;
        if out.is_null() {
            return Err(null("checksum output"));
        }
        *out = m.0.checksum();
        Ok(())
    })
}

/// Weighted composition of `n` modules.
#[no_mangle]
pub unsafe extern "C" fn lf_compose(
    modules: *const *const LfModule,
    weights: *const f64,
    n: usize,
    mode: LfCompositionMode,
    out: *mut *mut LfModule,
) -> LfStatus {
    guard(|| {
        if n == 0 {
            return Err(Fail::Status(LfStatus::InvalidArgument, "no modules to compose".into()));
        }
        if modules.is_null() || weights.is_null() {
            return Err(null("modules or weights"));
        }
        let mods = std::slice::from_raw_parts(modules, n)
            .iter()
            .map(|&p| as_ref(p, "module").map(|m| m.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let w = std::slice::from_raw_parts(weights, n).to_vec();
        let mode = match mode {
            LfCompositionMode::AbSpace => CompositionMode::AbSpace,
            LfCompositionMode::DeltaSpace => CompositionMode::DeltaSpace,
        };
        put(out, LfModule(compose_modules(&CompositionSpec::new(&mods, w, mode))?))
    })
}

/// Attaches a module to a copy of `model`.
#[no_mangle]
pub unsafe extern "C" fn lf_apply(model: *const LfModel, module: *const LfModule, out: *mut *mut LfAdapted) -> LfStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let md = as_ref(module, "module")?;
        put(out, LfAdapted(lora::apply_module(&m.0, &md.0)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_adapted_free(adapted: *mut LfAdapted) {
    if !adapted.is_null() {
        drop(Box::from_raw(adapted));
    }
}

#[no_mangle]
pub unsafe extern "C" fn lf_adapted_next_logits(
    adapted: *const LfAdapted,
    tokens: *const u32,
    len: usize,
    out: *mut f32,
    cap: usize,
    out_len: *mut usize,
) -> LfStatus {
    guard(|| last_logits(&as_ref(adapted, "adapted model")?.0, tokens, len, out, cap, out_len))
}

#[no_mangle]
pub unsafe extern "C" fn lf_adapted_generate(
    adapted: *const LfAdapted,
    prompt: *const u32,
    len: usize,
    max_new: usize,
    stop: i64,
    out: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> LfStatus {
    guard(|| generate(&as_ref(adapted, "adapted model")?.0, prompt, len, max_new, stop, out, cap, out_len))
}

/// Folds the adapters into the base weights as a new model.
#[no_mangle]
pub unsafe extern "C" fn lf_merge(adapted: *const LfAdapted, out: *mut *mut LfModel) -> LfStatus {
    guard(|| put(out, LfModel(lora::merge(&as_ref(adapted, "adapted model")?.0))))
}

/// ROUGE F1 of `hyp` against `reference`: `n` = 1 or 2 for ROUGE-N, 0 for
/// ROUGE-L.
#[no_mangle]
pub unsafe extern "C" fn lf_rouge_f1(
    hyp: *const u32,
    hyp_len: usize,
    reference: *const u32,
    ref_len: usize,
    n: u32,
    out: *mut f64,
) -> LfStatus {
    guard(|| {
        let h = tokens_arg(hyp, hyp_len)?;
        let r = tokens_arg(reference, ref_len)?;
        if out.is_null() {
            return Err(null("score output"));
        }
        *out = match n {
            0 => rouge_l(&h, &r).f1,
            n => rouge_n(&h, &r, n as usize).f1,
        };
        Ok(())
    })
}
