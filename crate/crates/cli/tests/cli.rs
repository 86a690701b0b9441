use std::path::PathBuf;
use std::process::{Command, Output};

fn example(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/examples")
        .join(format!("{name}.sint"))
}

fn sint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sint"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn sint_on(args: &[&str], files: &[&str]) -> Output {
    let paths: Vec<String> = files.iter().map(|f| example(f).display().to_string()).collect();
    let mut all: Vec<&str> = args.to_vec();
    all.extend(paths.iter().map(String::as_str));
    sint(&all)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("valid json")
}

#[test]
fn check_accepts_with_summary() {
    let o = sint_on(&["check"], &["survey_green"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("4 levels, 3 types, 6 processes"), "{}", stdout(&o));
}

#[test]
fn check_rejects_with_rule_and_position() {
    let o = sint_on(&["check", "--json"], &["hasty_green"]);
    assert_eq!(o.status.code(), Some(1));
    let v = json(&o);
    assert_eq!(v["schema"], 1);
    assert_eq!(v["status"], "rejected");
    assert_eq!(v["error"]["class"], "SyncPatternViolation");
    assert_eq!(v["error"]["rule"], "⊕L");
    assert_eq!(v["error"]["definition"], "A");
    assert!(v["error"]["span"].as_str().unwrap().contains(':'));
}

#[test]
fn check_lattice_error() {
    let o = sint_on(&["check", "--json"], &["two_tops"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json(&o)["error"]["class"], "NoUniqueJoin");
}

#[test]
fn unreadable_file_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.sint");
    let o = sint(&["check", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_to_budget_is_exit_3() {
    let o = sint_on(&["run", "--seed", "1", "--max-steps", "50"], &["survey_green"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("kind=label payload=ask"));
}

#[test]
fn silent_divergence_hits_budget() {
    // Mutual recursion spawns forever without sending anything.
    let o = sint_on(&["run", "--json", "--max-steps", "200"], &["mutual"]);
    let v = json(&o);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(v["status"], "budget");
    assert!(v["trace"].as_array().unwrap().is_empty());
}

#[test]
fn run_closed_program_is_poised() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("one.sint");
    std::fs::write(
        &f,
        "secrecy\n  #hi < ()\n  #lo < (#hi)\nend\n\
         theory T[]\nend\n\
         stype signature\nend\n\
         proc signature\n  proc P[T] provide (x : 1[#lo]) using () at [#lo] = close x\nend\n\
         exec P[]\n",
    )
    .unwrap();
    let o = sint(&["run", "--json", f.to_str().unwrap()]);
    let v = json(&o);
    assert_eq!(o.status.code(), Some(0), "{v}");
    assert_eq!(v["status"], "poised");
    assert_eq!(v["trace"][0]["kind"], "close");
}

#[test]
fn run_is_deterministic_per_seed() {
    let a = sint_on(&["run", "--seed", "7", "--max-steps", "300"], &["bank"]);
    let b = sint_on(&["run", "--seed", "7", "--max-steps", "300"], &["bank"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn ni_equivalent_is_exit_0() {
    let o = sint_on(&["ni", "--json"], &["survey_green", "survey_red"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&o)["verdict"], "equivalent");
}

#[test]
fn ni_needs_sync_checked_programs() {
    let o = sint_on(&["ni"], &["reckless_green", "reckless_red"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ni_distinguished_is_exit_4() {
    let o = sint_on(
        &["ni", "--json", "--unsafe-skip-sync"],
        &["reckless_green", "reckless_red"],
    );
    assert_eq!(o.status.code(), Some(4));
    let v = json(&o);
    assert_eq!(v["verdict"], "distinguished");
    assert!(!v["observed"].as_array().unwrap().is_empty());
    assert!(!v["schedule"].as_array().unwrap().is_empty());
}

#[test]
fn ni_state_budget_is_exit_5() {
    let o = sint_on(&["ni", "--max-states", "3"], &["survey_green", "survey_red"]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn ni_rejects_unknown_observer() {
    let o = sint_on(&["ni", "--observer", "nobody"], &["survey_green", "survey_red"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ni_sampled_mode() {
    let o = sint_on(
        &["ni", "--mode", "sampled", "--seeds", "10", "--unsafe-skip-sync"],
        &["hasty_green", "hasty_red"],
    );
    let code = o.status.code().unwrap();
    assert!(code == 0 || code == 4, "exit {code}");
}

#[test]
fn fmt_output_is_a_fixpoint() {
    let once = sint_on(&["fmt"], &["bank"]);
    assert_eq!(once.status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bank.sint");
    std::fs::write(&f, &once.stdout).unwrap();
    let twice = sint(&["fmt", f.to_str().unwrap()]);
    assert_eq!(once.stdout, twice.stdout);
    assert_eq!(sint(&["check", f.to_str().unwrap()]).status.code(), Some(0));
}
