mod common;

use common::{cli, stdout, tiny};

fn s(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_reports_counts_and_reruns_quietly() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, _) = tiny(tmp.path());
    let first = cli(&["gen-data", "--config", s(&cfg)]);
    assert!(first.status.success());
    let text = stdout(&first);
    assert!(text.contains("20 shapes in 2 categories, 60 partial views"), "{text}");
    assert!(text.contains("wrote 81 files"), "{text}");
    let again = cli(&["gen-data", "--config", s(&cfg)]);
    assert!(again.status.success());
    assert!(stdout(&again).contains("no changes"), "{}", stdout(&again));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepochs = 3\nbogus = 1\n").unwrap();
    assert_eq!(cli(&["gen-data", "--config", s(&bad)]).status.code(), Some(2));
    std::fs::write(&bad, "[network]\nspf_levels = 9\n").unwrap();
    assert_eq!(cli(&["train", "--config", s(&bad)]).status.code(), Some(2));
    assert_eq!(
        cli(&["ablate", "--methods", "AZ", "--data", s(tmp.path())])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(cli(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn io_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.toml");
    let o = cli(&["gen-data", "--config", s(&missing)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.toml"));

    // a data directory below a regular file cannot be created
    let file = tmp.path().join("file");
    std::fs::write(&file, b"x").unwrap();
    let (cfg, _) = tiny(tmp.path());
    let o = cli(&["gen-data", "--config", s(&cfg), "--data", s(&file.join("data"))]);
    assert_eq!(o.status.code(), Some(3));

    assert_eq!(
        cli(&["train", "--config", s(&cfg), "--data", s(&tmp.path().join("nothing"))])
            .status
            .code(),
        Some(3)
    );
    let o = cli(&[
        "report",
        "--ledger",
        &format!("x={}", s(&tmp.path().join("nope.jsonl"))),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn oracle_eval_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, _) = tiny(tmp.path());
    assert!(cli(&["gen-data", "--config", s(&cfg)]).status.success());
    for split in ["train", "test"] {
        let o = cli(&["eval", "--config", s(&cfg), "--oracle", "--split", split]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let csv_path = tmp.path().join("out").join("eval").join(format!("{split}.csv"));
        let mut r = csv::Reader::from_path(&csv_path).unwrap();
        let headers = r.headers().unwrap().clone();
        let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
        let rows: Vec<_> = r.records().map(|x| x.unwrap()).collect();
        let manifest = protoshape_core::synth::read_manifest(&tmp.path().join("data")).unwrap();
        let expected = manifest
            .samples
            .iter()
            .filter(|m| format!("{:?}", m.split).to_lowercase() == split)
            .count();
        assert_eq!(rows.len(), expected);
        for row in &rows {
            assert_eq!(row[col("cd_dense")].parse::<f64>().unwrap(), 0.0);
            assert_eq!(row[col("f_score")].parse::<f64>().unwrap(), 1.0);
        }
    }
}

#[test]
fn seed_flag_changes_the_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, _) = tiny(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(cli(&["gen-data", "--config", s(&cfg), "--data", s(&a), "--seed", "1"])
        .status
        .success());
    assert!(cli(&["gen-data", "--config", s(&cfg), "--data", s(&b), "--seed", "2"])
        .status
        .success());
    let read = |d: &std::path::Path| std::fs::read(d.join("complete").join("c0_0000.pcf")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn full_cli_pipeline_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, _) = tiny(tmp.path());
    let run = |args: &[&str]| {
        let mut all = args.to_vec();
        all.extend(["--config", s(&cfg), "--deterministic"]);
        let o = cli(&all);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    run(&["gen-data"]);
    assert!(run(&["train-pretext"]).contains("held-out accuracy"));
    assert!(run(&["fit-prototypes"]).contains("monotone true"));
    assert!(run(&["train"]).contains("ledger written"));
    assert!(run(&["eval"]).contains("consistency"));
    assert!(run(&["ablate"]).contains("H cd <= A cd"));

    let out = tmp.path().join("out");
    let abl = std::fs::read_to_string(out.join("ablation").join("ablation.csv")).unwrap();
    let lines: Vec<&str> = abl.lines().collect();
    assert_eq!(lines.len(), 9, "{abl}");
    assert!(lines[0].starts_with("method,spf,pri,ds,proj,cd,f_score,"));
    let methods: String = lines[1..].iter().map(|l| &l[..1]).collect();
    assert_eq!(methods, "ABCDEFGH");
    assert!(
        lines[1].starts_with("A,-,-,-,-,") && lines[1].ends_with(",9.16,0.635"),
        "{abl}"
    );
    assert!(
        lines[8].starts_with("H,2,yes,cos,yes,") && lines[8].ends_with(",8.05,0.709"),
        "{abl}"
    );

    let la = out.join("ablation").join("A").join("ledger.jsonl");
    let lh = out.join("ablation").join("H").join("ledger.jsonl");
    run(&[
        "report",
        "--ledger",
        &format!("baseline={}", s(&la)),
        "--ledger",
        &format!("ours={}", s(&lh)),
    ]);
    let rep = out.join("report");
    let curves = std::fs::read_to_string(rep.join("curves.csv")).unwrap();
    assert!(curves.starts_with("run,epoch,metric,value\n"));
    assert!(curves.lines().any(|l| l.starts_with("baseline,1,val_cd_dense,")));
    assert!(curves.lines().any(|l| l.starts_with("ours,2,train_total,")));
    let tails = std::fs::read_to_string(rep.join("tails.csv")).unwrap();
    let mut series: Vec<&str> = tails.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    series.dedup();
    assert_eq!(
        series,
        [
            "baseline_standard",
            "baseline_nonstandard",
            "ours_standard",
            "ours_nonstandard"
        ]
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 2);

    // idempotent: rerunning training rewrites identical bytes
    let ledger = out.join("train").join("ledger.jsonl");
    let before = std::fs::read(&ledger).unwrap();
    let ckpt = std::fs::read(out.join("train").join("completion.ckpt")).unwrap();
    run(&["train"]);
    assert!(before == std::fs::read(&ledger).unwrap());
    assert!(ckpt == std::fs::read(out.join("train").join("completion.ckpt")).unwrap());
}
