use std::path::Path;
use std::process::{Command, Output};

fn mvdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvdr"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mvdr(args);
    assert!(
        out.status.success(),
        "mvdr {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    ok(&["synth", "--out", s(&data), "--docs", "60", "--seed", "3"]);
    data
}

#[test]
fn version_and_help() {
    let v = ok(&["--version"]);
    assert!(v.starts_with("mvdr "));
    let help = ok(&["--help"]);
    for cmd in [
        "gen-queries",
        "train",
        "index",
        "search",
        "eval",
        "analyze",
        "pipeline",
        "selftest",
    ] {
        assert!(help.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn selftest_passes() {
    let out = ok(&["selftest"]);
    assert!(!out.contains("FAIL"), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 7);
}

#[test]
fn bad_invocations_fail_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = mvdr(&["eval", "--bogus"]);
    assert!(!out.status.success());
    let out = mvdr(&[
        "eval",
        "--run",
        "/nonexistent/run",
        "--qrels",
        "/nonexistent/q",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/run"));
    let out = mvdr(&["pipeline", "--mode", "de", "--out-dir", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.corpus"));
    let out = mvdr(&["--threads", "0", "selftest"]);
    assert!(!out.status.success());
}

#[test]
fn pipeline_runs_in_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cfg = data.join("config.toml");
    for mode in ["de", "dce"] {
        let out_dir = dir.path().join(mode);
        let table = ok(&[
            "pipeline",
            "--config",
            s(&cfg),
            "--mode",
            mode,
            "--out-dir",
            s(&out_dir),
        ]);
        assert!(
            table.contains("mrr@10") && table.contains("ndcg@10"),
            "{table}"
        );
        let run = std::fs::read_to_string(out_dir.join("run.trec")).unwrap();
        let first: Vec<&str> = run.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(first.len(), 6);
        assert_eq!(first[1], "Q0");
        assert_eq!(first[5], format!("mvdr-{mode}"));
        for f in ["quality.csv", "diversity.csv", "buckets.csv", "sweep.csv"] {
            assert!(out_dir.join("analysis").join(f).is_file());
        }
    }
}

#[test]
fn stage_commands_reproduce_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cfg = data.join("config.toml");
    let piped = dir.path().join("piped");
    ok(&["pipeline", "--config", s(&cfg), "--out-dir", s(&piped)]);

    let st = dir.path().join("staged");
    std::fs::create_dir_all(&st).unwrap();
    let corpus = data.join("corpus.tsv");
    let gen = st.join("gen.jsonl");
    let ckpt = st.join("model.ckpt");
    let index = st.join("index.mvix");
    let run = st.join("run.trec");
    ok(&[
        "gen-queries",
        "--config",
        s(&cfg),
        "--corpus",
        s(&corpus),
        "--out",
        s(&gen),
    ]);
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--corpus",
        s(&corpus),
        "--triples",
        s(&data.join("train_triples.jsonl")),
        "--gen-queries",
        s(&gen),
        "--out",
        s(&ckpt),
    ]);
    assert!(st.join("model.ckpt.loss.csv").is_file());
    ok(&[
        "index",
        "--mode",
        "dce",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&corpus),
        "--gen-queries",
        s(&gen),
        "--out",
        s(&index),
    ]);
    ok(&[
        "search",
        "--checkpoint",
        s(&ckpt),
        "--index",
        s(&index),
        "--queries",
        s(&data.join("dev_queries.tsv")),
        "--topk",
        "100",
        "--out",
        s(&run),
        "--tag",
        "mvdr-dce",
    ]);
    for (a, b) in [
        ("gen_queries.jsonl", &gen),
        ("model.ckpt", &ckpt),
        ("index.mvix", &index),
        ("run.trec", &run),
    ] {
        assert_eq!(
            std::fs::read(piped.join(a)).unwrap(),
            std::fs::read(b).unwrap(),
            "{a} differs"
        );
    }

    let csv = st.join("metrics.csv");
    let table = ok(&[
        "eval",
        "--run",
        s(&run),
        "--qrels",
        s(&data.join("dev_qrels.txt")),
        "--metrics",
        "mrr@10,recall@100",
        "--out",
        s(&csv),
    ]);
    assert!(table.contains("recall@100"));
    assert!(std::fs::read_to_string(&csv)
        .unwrap()
        .starts_with("metric,n_queries,value"));

    let report = st.join("report");
    ok(&[
        "analyze",
        "--gen-queries",
        s(&gen),
        "--gold-queries",
        s(&data.join("dev_queries.tsv")),
        "--run",
        s(&run),
        "--qrels",
        s(&data.join("dev_qrels.txt")),
        "--out",
        s(&report),
        "--sweep",
        "1,5,10",
    ]);
    let sweep = std::fs::read_to_string(report.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4);
}

#[test]
fn checkpoint_and_index_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cfg = data.join("config.toml");
    let corpus = data.join("corpus.tsv");
    let gen = dir.path().join("gen.jsonl");
    ok(&[
        "gen-queries",
        "--config",
        s(&cfg),
        "--corpus",
        s(&corpus),
        "--out",
        s(&gen),
    ]);
    let mut ckpts = Vec::new();
    for dim in ["8", "16"] {
        let c = dir.path().join(format!("m{dim}.ckpt"));
        ok(&[
            "train",
            "--config",
            s(&cfg),
            "--corpus",
            s(&corpus),
            "--gen-queries",
            s(&gen),
            "--finetune-epochs",
            "0",
            "--pretrain-epochs",
            "1",
            "--embed-dim",
            dim,
            "--out",
            s(&c),
        ]);
        ckpts.push(c);
    }
    let index = dir.path().join("i.mvix");
    ok(&[
        "index",
        "--mode",
        "de",
        "--checkpoint",
        s(&ckpts[0]),
        "--corpus",
        s(&corpus),
        "--out",
        s(&index),
    ]);
    let out = mvdr(&[
        "search",
        "--checkpoint",
        s(&ckpts[1]),
        "--index",
        s(&index),
        "--queries",
        s(&data.join("dev_queries.tsv")),
        "--out",
        s(&dir.path().join("r")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimensions"));
}
