use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use memtweak::tweak::{TweakTable, TABLE1_TEXT};

fn memtweak(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memtweak"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn attack_succeeds_with_exit_zero() {
    let o = memtweak(&["attack", "--seed", "7", "--pages", "512"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let out = stdout(&o);
    assert!(out.contains("outcome=ShellcodeActive\n"));
    assert!(out.starts_with("command=attack\nseed=7\npages=512\nmode=vulnerable\n"));
}

#[test]
fn mitigated_attack_exits_one() {
    let o = memtweak(&[
        "attack",
        "--seed",
        "7",
        "--pages",
        "512",
        "--mode",
        "mitigated",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("outcome=Failed(BridgeNotFound)\n"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(memtweak(&["attack", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        memtweak(&["attack", "--mode", "sideways"]).status.code(),
        Some(2)
    );
    assert_eq!(
        memtweak(&["attack", "--trials", "0"]).status.code(),
        Some(2)
    );
    assert_eq!(memtweak(&[]).status.code(), Some(2));
    let o = memtweak(&["attack", "--table", "/nonexistent/table.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reading table"));
    assert_eq!(memtweak(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_scenario_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("bad.scenario");
    fs::write(&s, "seed=1\nflavour=strong\n").unwrap();
    let o = memtweak(&["attack", "--scenario", path_str(&s)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key"));
}

#[test]
fn scenario_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("run.scenario");
    fs::write(
        &s,
        "# small guest\nseed=3\npage_count=256\nbridge_offset=0x200\n",
    )
    .unwrap();
    let o = memtweak(&["find-bridge", "--scenario", path_str(&s), "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("seed=4\npages=256\n"));
    let bpa = out.lines().find_map(|l| l.strip_prefix("bpa=")).unwrap();
    assert!(bpa.ends_with("200"), "{bpa}");
}

#[test]
fn reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["attack", "inject", "find-cc", "demo-mitigated"] {
        let a = dir.path().join(format!("{cmd}-a.txt"));
        let b = dir.path().join(format!("{cmd}-b.txt"));
        for out in [&a, &b] {
            let o = memtweak(&[
                cmd,
                "--seed",
                "5",
                "--pages",
                "256",
                "--report",
                path_str(out),
            ]);
            assert!(o.stdout.is_empty());
            assert_eq!(o.status.code(), Some(0), "{cmd}");
        }
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap(), "{cmd}");
    }
}

#[test]
fn timings_are_opt_in() {
    let plain = stdout(&memtweak(&["attack", "--seed", "2", "--pages", "128"]));
    assert!(!plain.contains("time_"));
    let timed = stdout(&memtweak(&[
        "attack",
        "--seed",
        "2",
        "--pages",
        "128",
        "--timings",
    ]));
    assert!(timed.contains("time_cc_us="));
}

#[test]
fn trials_aggregate() {
    let o = memtweak(&["attack", "--seed", "10", "--pages", "128", "--trials", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for t in 0..3 {
        assert!(out.contains(&format!("[trial {t}]\ncommand=attack\nseed={}\n", 10 + t)));
    }
    assert!(out.ends_with("[summary]\ntrials=3\nsuccesses=3\n"));
}

#[test]
fn recovered_table_equals_ground_truth_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.txt");
    let truth = dir.path().join("truth.txt");
    let o = memtweak(&[
        "recover-tweak",
        "--seed",
        "3",
        "--samples",
        "64",
        "--table-out",
        path_str(&out),
        "--truth-out",
        path_str(&truth),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("matches_ground_truth=true\n"));
    assert_eq!(fs::read(&out).unwrap(), fs::read(&truth).unwrap());
    assert_eq!(fs::read_to_string(&out).unwrap(), TABLE1_TEXT);
}

#[test]
fn recovered_random_table_matches_generator() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rec.txt");
    let truth = dir.path().join("truth.txt");
    let o = memtweak(&[
        "recover-tweak",
        "--seed",
        "9",
        "--random-table",
        "--table-out",
        path_str(&out),
        "--truth-out",
        path_str(&truth),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(&out).unwrap(), fs::read(&truth).unwrap());
    assert_eq!(TweakTable::load(&out).unwrap(), TweakTable::random(9));
}

#[test]
fn table_flag_accepts_bundled_and_recovered_files() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.txt");
    assert_eq!(
        memtweak(&[
            "recover-tweak",
            "--seed",
            "1",
            "--table-out",
            path_str(&rec)
        ])
        .status
        .code(),
        Some(0)
    );
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/table1.txt");
    let mut reports = Vec::new();
    for table in [&bundled, &rec] {
        let o = memtweak(&[
            "attack",
            "--seed",
            "1",
            "--pages",
            "128",
            "--table",
            path_str(table),
        ]);
        assert_eq!(o.status.code(), Some(0));
        reports.push(o.stdout);
    }
    assert_eq!(reports[0], reports[1]);

    // A wrong attacker table finds nothing.
    let wrong = dir.path().join("wrong.txt");
    TweakTable::random(1).save(&wrong).unwrap();
    let o = memtweak(&[
        "attack",
        "--seed",
        "1",
        "--pages",
        "128",
        "--table",
        path_str(&wrong),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn mitigated_recovery_fails_in_band() {
    let o = memtweak(&["recover-tweak", "--seed", "3", "--mode", "mitigated"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("verdict=inconsistent\n"));
    assert!(!out.contains("matches_ground_truth"));
}

#[test]
fn probe_randomness_report() {
    let o = memtweak(&["probe-randomness", "--seed", "0", "--address", "0x1000"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("probe_address=0x000001000\n"));
    assert!(out.contains("pass_monobit=true\n"));
    assert!(out.contains("pass_runs=true\n"));
    assert!(out.contains("mode_verdict=ecb-like\n"));
    assert!(out.contains("equal_cipher_plaintexts_linear=true\n"));
}

#[test]
fn demo_mitigated_holds() {
    let o = memtweak(&["demo-mitigated", "--seed", "4", "--pages", "128"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("equal_cipher_holds=0\n"));
    assert!(out.contains("recovery_verdict=inconsistent\n"));
    assert!(out.ends_with("mitigation_holds=true\n"));
}

#[test]
fn inject_shows_dumps() {
    let o = memtweak(&["inject", "--seed", "6", "--pages", "128"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("victim=ShellcodeActive\n"));
    assert!(out.contains("# victim ciphertext after\n"));
}
