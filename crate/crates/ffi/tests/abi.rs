use std::ffi::CString;
use std::ptr;

use lora_forge_ffi::*;

const CONFIG: &str = r#"{"vocab_size": 12, "d_model": 8, "n_heads": 2, "n_layers": 1, "d_ffn": 16, "max_seq_len": 16, "seed": 3}"#;

fn model() -> *mut LfModel {
    let c = CString::new(CONFIG).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { lf_model_new(c.as_ptr(), &mut m) }, LfStatus::Ok);
    m
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { lf_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { std::ffi::CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned();
    assert_eq!(n, s.len().max(n.min(255)));
    s
}

#[test]
fn model_round_trip_and_generation() {
    let m = model();
    assert_eq!(unsafe { lf_model_vocab_size(m) }, 12);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.bin").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { lf_model_save(m, path.as_ptr()) }, LfStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { lf_model_load(path.as_ptr(), &mut back) }, LfStatus::Ok);

    let prompt = [1u32, 5, 6];
    let (mut a, mut b) = ([0f32; 12], [0f32; 12]);
    let mut n = 0usize;
    unsafe {
        assert_eq!(lf_model_next_logits(m, prompt.as_ptr(), 3, a.as_mut_ptr(), 12, &mut n), LfStatus::Ok);
        assert_eq!(lf_model_next_logits(back, prompt.as_ptr(), 3, b.as_mut_ptr(), 12, &mut n), LfStatus::Ok);
    }
    assert_eq!(n, 12);
    assert_eq!(a, b);

    let mut out = [0u32; 4];
    unsafe {
        assert_eq!(lf_model_generate(m, prompt.as_ptr(), 3, 4, -1, out.as_mut_ptr(), 4, &mut n), LfStatus::Ok);
    }
    assert_eq!(n, 4);
    let mut small = [0u32; 2];
    let st = unsafe { lf_model_generate(m, prompt.as_ptr(), 3, 4, -1, small.as_mut_ptr(), 2, &mut n) };
    assert_eq!(st, LfStatus::BufferTooSmall);
    assert_eq!(n, 4);
    unsafe {
        lf_model_free(m);
        lf_model_free(back);
    }
}

#[test]
fn errors_are_codes_with_messages() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { lf_model_new(ptr::null(), &mut m) }, LfStatus::NullArgument);
    assert!(last_error().contains("null"));
    let bad = CString::new(r#"{"vocab_size": 0, "d_model": 8, "n_heads": 2, "n_layers": 1, "d_ffn": 16, "max_seq_len": 16, "seed": 3}"#).unwrap();
    assert_eq!(unsafe { lf_model_new(bad.as_ptr(), &mut m) }, LfStatus::Config);
    let missing = CString::new("/nonexistent/x.lora").unwrap();
    let mut md = ptr::null_mut();
    assert_eq!(unsafe { lf_module_load(missing.as_ptr(), &mut md) }, LfStatus::Io);
    assert!(last_error().contains("/nonexistent/x.lora"));

    let mdl = model();
    let too_big = [99u32];
    let mut out = [0f32; 12];
    let mut n = 0;
    let st = unsafe { lf_model_next_logits(mdl, too_big.as_ptr(), 1, out.as_mut_ptr(), 12, &mut n) };
    assert_eq!(st, LfStatus::InvalidArgument);
    unsafe { lf_model_free(mdl) };
}

#[test]
fn compose_apply_merge() {
    use lora_forge::lora::{attach_adapters, extract_module, save_module, LoraConfig, Provenance};
    let base: lora_forge::transformer::ModelConfig = serde_json::from_str(CONFIG).unwrap();
    let base = lora_forge::transformer::build_model(&base).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut handles = Vec::new();
    for seed in 0..2u64 {
        let a = attach_adapters(&base, &LoraConfig::attention(2, seed)).unwrap();
        let mut module = extract_module(&a, Provenance::default());
        for ad in &mut module.adapters {
            ad.b.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = 0.01 * (i as f32 + seed as f32));
        }
        let p = dir.path().join(format!("m{seed}.lora"));
        save_module(&module, &p).unwrap();
        let c = CString::new(p.to_str().unwrap()).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { lf_module_load(c.as_ptr(), &mut h) }, LfStatus::Ok);
        assert_eq!(unsafe { lf_module_rank(h) }, 2);
        handles.push(h as *const LfModule);
    }
    let mut composed = ptr::null_mut();
    let w = [0.5, 0.5];
    assert_eq!(
        unsafe { lf_compose(handles.as_ptr(), w.as_ptr(), 2, LfCompositionMode::DeltaSpace, &mut composed) },
        LfStatus::Ok
    );
    assert_eq!(unsafe { lf_module_rank(composed) }, 4);
    let mut crc = 0u32;
    assert_eq!(unsafe { lf_module_checksum(composed, &mut crc) }, LfStatus::Ok);
    assert_ne!(crc, 0);

    let m = model();
    let mut adapted = ptr::null_mut();
    assert_eq!(unsafe { lf_apply(m, composed, &mut adapted) }, LfStatus::Ok);
    let mut merged = ptr::null_mut();
    assert_eq!(unsafe { lf_merge(adapted, &mut merged) }, LfStatus::Ok);
    let toks = [1u32, 4, 7, 9];
    let (mut a, mut b) = ([0f32; 12], [0f32; 12]);
    let mut n = 0;
    unsafe {
        lf_adapted_next_logits(adapted, toks.as_ptr(), 4, a.as_mut_ptr(), 12, &mut n);
        lf_model_next_logits(merged, toks.as_ptr(), 4, b.as_mut_ptr(), 12, &mut n);
    }
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-5);
    }
    unsafe {
        lf_adapted_free(adapted);
        lf_model_free(merged);
        lf_model_free(m);
        lf_module_free(composed);
        for h in handles {
            lf_module_free(h as *mut LfModule);
        }
    }
}

#[test]
fn rouge_through_the_abi() {
    let h = [1u32, 2, 3, 4];
    let r = [1u32, 3, 4];
    let mut f = 0.0;
    assert_eq!(unsafe { lf_rouge_f1(h.as_ptr(), 4, r.as_ptr(), 3, 0, &mut f) }, LfStatus::Ok);
    assert!((f - 6.0 / 7.0).abs() < 1e-12);
    assert_eq!(unsafe { lf_rouge_f1(h.as_ptr(), 4, r.as_ptr(), 3, 1, &mut f) }, LfStatus::Ok);
    assert!((f - 6.0 / 7.0).abs() < 1e-12);
}
