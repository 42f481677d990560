use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "core", "tests", "fixtures", name]
        .iter()
        .collect()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coref-adj"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Sample files copied as `a.conll` … `d.conll` so the ids are a-d.
fn sample(dir: &Path) -> Vec<String> {
    ["a", "b", "c", "d"]
        .iter()
        .map(|id| {
            let path = dir.join(format!("{id}.conll"));
            fs::copy(fixture(&format!("sample_{id}.conll")), &path).unwrap();
            path.to_string_lossy().into_owned()
        })
        .collect()
}

#[test]
fn adjudicate_writes_the_merged_file() {
    let dir = tempfile::tempdir().unwrap();
    let files = sample(dir.path());
    let mut args = vec!["adjudicate"];
    args.extend(files.iter().map(String::as_str));
    args.extend(["--objective", "u"]);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("cost 6"));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        fs::read_to_string(fixture("sample_merged.conll")).unwrap()
    );
}

#[test]
fn readjudicate_keeps_enforced_fields() {
    let input = fixture("review_pinned.conll");
    let out = run(&["readjudicate", input.to_str().unwrap(), "--objective", "u"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, fs::read_to_string(fixture("review_resolved.conll")).unwrap());

    // every objective leaves the `=` cells as they were
    let original = fs::read_to_string(&input).unwrap();
    let marked = |t: &str| -> Vec<String> {
        t.lines()
            .filter_map(|l| l.rsplit('\t').next())
            .filter(|c| c.starts_with('='))
            .map(str::to_string)
            .collect()
    };
    for objective in ["u", "ua", "v", "va"] {
        let out = run(&["readjudicate", input.to_str().unwrap(), "--objective", objective]);
        assert_eq!(code(&out), 0);
        assert_eq!(marked(&String::from_utf8(out.stdout).unwrap()), marked(&original));
    }
}

#[test]
fn one_file_is_a_usage_error() {
    let out = run(&["adjudicate", fixture("sample_a.conll").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("u >= 2"));
    assert_eq!(code(&run(&["adjudicate", "--objective", "w"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
}

#[test]
fn parse_errors_name_the_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let files = sample(dir.path());
    fs::write(&files[1], "#begin document\n1\t(3\n2\t-\n#end document\n").unwrap();
    let out = run(&["adjudicate", &files[0], &files[1]]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("b.conll") && err.contains("line 2"), "{err}");
}

#[test]
fn result_output_is_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let files = sample(dir.path());
    for objective in ["u", "ua", "v", "va"] {
        let result = dir.path().join(format!("result_{objective}.conll"));
        let mut args = vec!["adjudicate", "--objective", objective, "--output", "result", "-o"];
        args.push(result.to_str().unwrap());
        args.extend(files.iter().map(String::as_str));
        assert_eq!(code(&run(&args)), 0);
        let first = fs::read_to_string(&result).unwrap();

        let again = dir.path().join("again.conll");
        let mut args = vec!["adjudicate", "--objective", objective, "--output", "result", "-o"];
        args.push(again.to_str().unwrap());
        args.extend(files.iter().map(String::as_str));
        args.push(result.to_str().unwrap());
        assert_eq!(code(&run(&args)), 0);
        assert_eq!(fs::read_to_string(&again).unwrap(), first, "{objective}");
    }
}

#[test]
fn infeasible_enforcement_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("review_pinned.conll"))
        .unwrap()
        .replace("1\t(2\t(3\t(1|(2)\t(2\t=(2", "1\t(2\t(3\t(1|(2)\t(2\t=(2|(2)")
        .replace("3\t2)\t3)\t1)\t2)\t2)", "3\t2)\t3)\t1)\t2)\t=2)");
    let path = dir.path().join("bad.conll");
    fs::write(&path, text).unwrap();
    let out = run(&["readjudicate", path.to_str().unwrap(), "--objective", "u"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("infeasible"));
}

#[test]
fn generate_bench_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("ds2");
    let out = run(&[
        "generate",
        "--preset",
        "ds2",
        "--seed",
        "4",
        "--tokens",
        "300",
        "--chains",
        "8",
        "--annotators",
        "3",
        "-o",
        inst.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["1.conll", "2.conll", "3.conll", "truth.conll"] {
        assert!(inst.join(f).exists(), "{f}");
    }

    let report = dir.path().join("report.tsv");
    let out = run(&[
        "bench",
        inst.to_str().unwrap(),
        "--timeout",
        "5",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let tsv = fs::read_to_string(&report).unwrap();
    assert_eq!(tsv.lines().count(), 9);
    assert!(tsv.starts_with("instance\tstrategy\tobjective"));
    assert!(stderr(&out).contains("strategy"));

    let files: Vec<String> = (1..=3)
        .map(|i| inst.join(format!("{i}.conll")).to_string_lossy().into_owned())
        .collect();
    let mut args = vec!["export-asp"];
    args.extend(files.iter().map(String::as_str));
    let out = run(&args);
    assert_eq!(code(&out), 0);
    let facts = String::from_utf8(out.stdout).unwrap();
    assert!(facts.lines().any(|l| l.starts_with("mention(")));
    assert!(facts.lines().any(|l| l.starts_with("cm(")));

    let out = run(&[
        "export-asp",
        "--merged",
        fixture("review_pinned.conll").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8(out.stdout).unwrap().contains("forced"));
}

#[test]
fn tight_budget_on_a_large_instance_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("ds1");
    let out = run(&[
        "generate",
        "--preset",
        "ds1",
        "--seed",
        "0",
        "-o",
        inst.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let mut files: Vec<String> = fs::read_dir(&inst)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_stem().unwrap() != "truth")
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    files.sort();
    let mut args = vec!["adjudicate", "--objective", "u", "--timeout", "0.05", "-o"];
    let merged = dir.path().join("merged.conll");
    args.push(merged.to_str().unwrap());
    args.extend(files.iter().map(String::as_str));
    let out = run(&args);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).starts_with("feasible"));
    assert!(merged.exists());
}

#[test]
fn oracle_agrees_on_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let files = sample(dir.path());
    let mut args = vec!["oracle", "--objective", "v"];
    args.extend(files.iter().map(String::as_str));
    let out = run(&args);
    assert_eq!(code(&out), 0);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "cost 12, 2 optimal selections\n"
    );
}
