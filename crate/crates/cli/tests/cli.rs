use std::process::Command;

fn wallnet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wallnet")).args(args).output().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = wallnet(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn train_help_lists_flags() {
    let out = wallnet(&["train", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--arch", "--profile", "--split", "--epochs", "--lambda-rec", "--scaling", "--seed"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = wallnet(&["train", "--arch", "fcnn", "--profile", "dielectric", "--dataset", dir.path().join("nope").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
