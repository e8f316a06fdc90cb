//! Compiles and runs a small C program against the generated header and the
//! produced static library, proving the ABI from the consumer side.

use std::path::PathBuf;
use std::process::Command;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps; the library sits one level up.
    let mut dir = std::env::current_exe().expect("test binary path");
    dir.pop(); // file name
    dir.pop(); // deps/
    dir
}

#[test]
fn c_program_links_and_runs() {
    let cc = match ["cc", "gcc", "clang"]
        .iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    {
        Some(c) => *c,
        None => {
            eprintln!("no C compiler available; skipping ABI smoke test");
            return;
        }
    };
    let lib = target_dir().join("libtnanet_ffi.a");
    assert!(
        lib.exists(),
        "static library not found at {} (built as part of the test target's dependencies)",
        lib.display()
    );
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(
        include.join("tnanet.h").exists(),
        "generated header missing"
    );

    let scratch = tempfile::tempdir().unwrap();
    // Build a tiny checkpoint for the C program to load.
    let hp = tnanet::model::HyperParams::for_input(4, 21).unwrap();
    let params = tnanet::model::TnanetParams::init(hp, 77).unwrap();
    let ckpt = scratch.path().join("model.tnanet");
    tnanet::checkpoint::save_checkpoint_file(&ckpt, &params).unwrap();

    let c_source = r#"
#include "tnanet.h"
#include <stdio.h>
#include <stdlib.h>

int main(int argc, char **argv) {
    if (argc < 2) return 10;
    printf("version %s\n", tnanet_version());
    if (tnanet_feature_count() != 38 || tnanet_window_count() != 70) return 11;

    struct TnanetModel *model = NULL;
    if (tnanet_model_load(argv[1], &model) != TNANET_STATUS_OK) return 12;
    size_t channels = 0, len = 0;
    if (tnanet_model_dims(model, &channels, &len) != TNANET_STATUS_OK) return 13;

    size_t n = channels * len;
    double *matrix = malloc(n * sizeof(double));
    for (size_t i = 0; i < n; i++) matrix[i] = (double)(i % 7) / 7.0;
    double probs[2] = {0, 0};
    unsigned char label = 9;
    if (tnanet_model_predict(model, matrix, n, probs, &label) != TNANET_STATUS_OK) return 14;
    if (probs[0] + probs[1] < 0.999 || probs[0] + probs[1] > 1.001) return 15;
    if (label > 1) return 16;

    /* Wrong shape must fail with a retrievable message. */
    if (tnanet_model_predict(model, matrix, n - 1, probs, NULL)
        != TNANET_STATUS_SHAPE_MISMATCH) return 17;
    char msg[128];
    if (tnanet_last_error(msg, sizeof msg) == 0) return 18;

    free(matrix);
    tnanet_model_free(model);
    printf("ok %.6f %.6f\n", probs[0], probs[1]);
    return 0;
}
"#;
    let src = scratch.path().join("smoke.c");
    std::fs::write(&src, c_source).unwrap();
    let exe = scratch.path().join("smoke");
    let compile = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .output()
        .expect("compiler runs");
    assert!(
        compile.status.success(),
        "C compilation failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );
    let run = Command::new(&exe)
        .arg(&ckpt)
        .output()
        .expect("smoke binary runs");
    assert!(
        run.status.success(),
        "C program exit {:?}:\n{}",
        run.status.code(),
        String::from_utf8_lossy(&run.stdout)
    );
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("ok "), "{stdout}");
}
