//! Compiles a small C program against the generated header and the static
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "qmc_amis.h"

int main(void) {
    QmcPointSet *ps = NULL;
    if (qmc_sobol_generate(3, 2, 1, &ps) != QMC_STATUS_OK) return 1;
    const double *v = qmc_point_set_values(ps);
    size_t n = qmc_point_set_len(ps);
    double sum = 0.0;
    for (size_t i = 0; i < n * 2; i++) sum += v[i];
    qmc_point_set_free(ps);

    double z = 0.0;
    if (qmc_inv_norm_cdf(2.0, &z) != QMC_STATUS_INVALID_ARGUMENT) return 2;
    if (qmc_last_error() == NULL) return 3;

    QmcConfig *cfg = NULL;
    if (qmc_config_parse("experiment = nope\n", &cfg) != QMC_STATUS_INVALID_ARGUMENT) return 4;
    printf("%zu %.3f %s\n", n, sum / (double)(n * 2), qmc_last_error());
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib = target_dir().join("libqmc_amis_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    let exe = dir.path().join("client");
    std::fs::write(&src, PROGRAM).unwrap();

    let status = Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");

    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "client exited with {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut parts = text.split_whitespace();
    assert_eq!(parts.next(), Some("8"));
    let mean: f64 = parts.next().unwrap().parse().unwrap();
    // every coordinate of a Sobol' net has exactly one point per 1/8 cell
    assert!((mean - 0.5).abs() < 0.0625, "{text}");
    assert!(text.contains("nope"));
}
