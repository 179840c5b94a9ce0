use std::path::Path;

use sphardy::cli::{main_with_args, EXIT_INVALID_CONFIG, EXIT_INVARIANT, EXIT_NUMERICAL, EXIT_OK};
use sphardy::io::{read_coeffs, Table};

const SMALL: &[&str] = &["--n-trial", "10", "--n-test", "6"];

fn run(dir: &Path, args: &[&str]) -> i32 {
    let mut all = vec!["sphardy".to_string()];
    all.extend(args.iter().map(|s| s.to_string()));
    all.push("--out-dir".into());
    all.push(dir.display().to_string());
    main_with_args(all)
}

fn with_small<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(SMALL);
    v.extend_from_slice(extra);
    v
}

#[test]
fn validate_passes_and_detects_corruption() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &with_small("validate", &[])), EXIT_OK);
    assert!(d.path().join("multipliers.csv").exists());
    assert_eq!(run(d.path(), &with_small("validate", &["--corrupt-degree", "3"])), EXIT_INVARIANT);
}

#[test]
fn demo_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(a.path(), &with_small("demo", &[])), EXIT_OK);
    assert_eq!(run(b.path(), &with_small("demo", &[])), EXIT_OK);
    for f in ["modes.csv", "report.csv", "pair.json", "svd_plus.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
}

#[test]
fn noiseless_demo_recovers_modes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &with_small("demo", &["--noise", "0"])), EXIT_OK);
    let t = Table::read(&d.path().join("modes.csv")).unwrap();
    for v in t.column("bep1_error").unwrap() {
        assert!(v <= 1e-6);
    }
}

#[test]
fn pairgen_then_continue_round_trips() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &with_small("pairgen", &[])), EXIT_OK);
    let phi = d.path().join("phi.json");
    assert_eq!(run(d.path(), &with_small("continue", &[phi.to_str().unwrap()])), EXIT_OK);
    let psi = read_coeffs(&d.path().join("psi.json")).unwrap();
    let got = read_coeffs(&d.path().join("psi_continued.json")).unwrap();
    assert!((&psi - &got).norm() <= 1e-8 * psi.norm());
    // printed values carry 17 significant digits and parse back exactly
    let text = std::fs::read_to_string(&phi).unwrap();
    let back = read_coeffs(&phi).unwrap();
    assert_eq!(sphardy::io::coeffs_to_json(&back).unwrap(), text);
}

#[test]
fn pairgen_then_decompose_recovers_potentials() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &with_small("pairgen", &[])), EXIT_OK);
    let field = d.path().join("field.csv");
    assert_eq!(run(d.path(), &with_small("decompose", &[field.to_str().unwrap()])), EXIT_OK);
    assert!(d.path().join("decomposition.json").exists());
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &with_small("demo", &["--theta-c", "4.0"])), EXIT_INVALID_CONFIG);
    assert_eq!(run(d.path(), &with_small("demo", &["--n-test", "0", "--eps", "-1"])), EXIT_INVALID_CONFIG);
    assert_eq!(run(d.path(), &["no-such-command"]), EXIT_INVALID_CONFIG);
    let missing = d.path().join("missing.json");
    assert_eq!(run(d.path(), &with_small("continue", &[missing.to_str().unwrap()])), EXIT_INVALID_CONFIG);
    // a tiny eps leaves only constants in the witness space
    let code = run(d.path(), &["pairgen", "--n-trial", "4", "--n-test", "2", "--eps", "1e-300"]);
    assert!(code == EXIT_NUMERICAL || code == EXIT_OK, "code {code}");
}

#[test]
fn config_file_is_applied() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\nn_trial = 10\nn_test = 6\nseed = 11\n").unwrap();
    assert_eq!(run(d.path(), &["pairgen", "--config", cfg.to_str().unwrap()]), EXIT_OK);
    let text = std::fs::read_to_string(d.path().join("config.txt")).unwrap();
    assert!(text.contains("seed = 11") || text.contains("seed=11"), "{text}");
}
