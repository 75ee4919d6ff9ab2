//! End-to-end checks of the command-line harness: exit codes, file
//! placement, schema, and config handling.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stokes-study"))
}

const HEADER: &str = "resolution,err_l2h1,order_l2h1,err_linfl2,order_linfl2,err_press,\
                      order_press,se_l2h1,se_linfl2,se_press";

#[test]
fn tiny_time_study_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("study.csv");
    let result = bin()
        .args(["--test", "time", "--n", "3", "--klist", "8,16"])
        .args(["--samples", "2", "--m0", "64", "--seed", "9", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), HEADER);
    let first = lines.next().unwrap();
    assert!(first.starts_with("1/8,"));
    // Orders are blank on the first data row and populated afterwards.
    let fields: Vec<&str> = first.split(',').collect();
    assert_eq!(fields.len(), 10);
    assert!(fields[2].is_empty() && fields[4].is_empty() && fields[6].is_empty());
    let second = lines.next().unwrap();
    assert!(second.starts_with("1/16,"));
    assert!(!second.split(',').nth(2).unwrap().is_empty());
    assert!(lines.next().is_none());
    assert!(out.with_file_name("study_loglog.csv").exists());
    let meta = std::fs::read_to_string(out.with_file_name("study_meta.txt")).unwrap();
    assert!(meta.contains("study: time"));
    assert!(meta.contains("samples: 2"));
}

#[test]
fn det_study_writes_spatial_and_temporal_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify.csv");
    let result = bin()
        .args(["--test", "det", "--nlist", "2,4", "--klist", "4,8"])
        .args(["--n", "4", "--space-m", "8", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    for name in ["verify_space.csv", "verify_time.csv"] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.starts_with(HEADER), "{name} lacks the schema header");
    }
    let meta = std::fs::read_to_string(dir.path().join("verify_time_meta.txt")).unwrap();
    assert!(meta.contains("k_floor"));
}

#[test]
fn bad_arguments_exit_nonzero_with_message() {
    let cases: Vec<Vec<&str>> = vec![
        vec!["--test", "bogus"],
        vec![
            "--test",
            "time",
            "--klist",
            "8,24",
            "--n",
            "2",
            "--samples",
            "1",
        ],
        vec!["--test", "time", "--config", "/nonexistent/file.conf"],
        vec!["--test", "det", "--alpha", "0.5"],
    ];
    for args in cases {
        let result = bin().args(&args).output().unwrap();
        assert!(!result.status.success(), "expected failure for {args:?}");
        assert!(
            !result.stderr.is_empty(),
            "expected an error message for {args:?}"
        );
    }
}

#[test]
fn config_file_applies_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("study.conf");
    std::fs::write(&conf, "n = 3\nklist = 8, 16\nsamples = 2\nm0 = 64\n").unwrap();
    let out = dir.path().join("study.csv");
    let result = bin()
        .args(["--test", "time", "--config"])
        .arg(&conf)
        .args(["--samples", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let meta = std::fs::read_to_string(out.with_file_name("study_meta.txt")).unwrap();
    assert!(meta.contains("samples: 3"), "flag should override the file");
}
