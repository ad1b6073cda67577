//! Compiles a C program against the generated header and the static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "lora_forge.h"

int main(void) {
    const char *cfg = "{\"vocab_size\": 10, \"d_model\": 8, \"n_heads\": 2, \"n_layers\": 1, \"d_ffn\": 8, \"max_seq_len\": 12, \"seed\": 1}";
    LfModel *m = NULL;
    if (lf_model_new(cfg, &m) != LF_STATUS_OK) return 10;
    uint32_t prompt[2] = {1, 5};
    uint32_t out[3];
    size_t n = 0;
    if (lf_model_generate(m, prompt, 2, 3, -1, out, 3, &n) != LF_STATUS_OK || n != 3) return 11;
    LfModule *mod = NULL;
    if (lf_module_load("/nonexistent.lora", &mod) != LF_STATUS_IO) return 12;
    char buf[256];
    if (lf_last_error_message(buf, sizeof buf) == 0 || strstr(buf, "nonexistent") == NULL) return 13;
    lf_model_free(m);
    printf("ok %s\n", lf_version());
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // Test binaries live in target/<profile>/deps; the library one level up.
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let lib = lib_dir.join("liblora_forge_ffi.a");
    assert!(lib.is_file(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let st = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(st.status.success(), "cc failed: {}", String::from_utf8_lossy(&st.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
