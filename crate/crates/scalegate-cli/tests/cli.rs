//! End-to-end tests driving the CLI in process.

use std::path::Path;

use scalegate_cli::{run, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION};

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("scalegate").chain(args.iter().copied()))
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(cli(&["gen-data", "--does-not-exist", "1"]), EXIT_USAGE);
    assert_eq!(cli(&["no-such-subcommand"]), EXIT_USAGE);
    assert_eq!(cli(&["--help"]), EXIT_OK);
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        assert_eq!(
            cli(&["gen-data", "--n", "200", "--seed", "7", "--out", &s(out)]),
            EXIT_OK
        );
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dir.path().join("manifest_gen-data.json").exists());
}

#[test]
fn resolve_attaches_registry_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("raw.jsonl");
    let lines = [
        r#"{"id":"a","features":[0.1,0.2],"label":0,"gsd":{"kind":"unknown"},"sensor":"Sentinel-2","source":"t"}"#,
        r#"{"id":"b","features":[0.1,0.2],"label":1,"gsd":{"kind":"unknown"},"sensor":"mystery","source":"t"}"#,
        r#"{"id":"c","features":[0.1,0.2],"label":0,"gsd":{"kind":"exact","value":0.5},"sensor":"usgs-hro","source":"t"}"#,
    ];
    std::fs::write(&input, lines.join("\n")).unwrap();
    let out = dir.path().join("resolved.jsonl");
    assert_eq!(
        cli(&["resolve", "--input", &s(&input), "--out", &s(&out)]),
        EXIT_OK
    );
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert!(rows[0].contains(r#""kind":"exact","value":10.0"#), "{}", rows[0]);
    assert!(rows[1].contains(r#""kind":"unknown""#), "{}", rows[1]);
    // pre-annotated samples keep their annotation
    assert!(rows[2].contains(r#""value":0.5"#), "{}", rows[2]);

    // a registry file layering over the defaults
    let reg = dir.path().join("registry.json");
    std::fs::write(&reg, r#"{"mystery": {"kind":"range","lo":0.5,"hi":2.0}}"#).unwrap();
    assert_eq!(
        cli(&["resolve", "--input", &s(&input), "--registry", &s(&reg), "--out", &s(&out)]),
        EXIT_OK
    );
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().nth(1).unwrap().contains(r#""kind":"range""#));

    // malformed registry is a validation error
    std::fs::write(&reg, r#"{"bad": {"kind":"exact","value":-1.0}}"#).unwrap();
    assert_eq!(
        cli(&["resolve", "--input", &s(&input), "--registry", &s(&reg), "--out", &s(&out)]),
        EXIT_VALIDATION
    );
}

#[test]
fn pipeline_produces_reports_and_validates_dims() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    assert_eq!(
        cli(&["gen-data", "--n", "700", "--seed", "3", "--out", &s(&corpus)]),
        EXIT_OK
    );

    // config file + flag precedence: the flag wins
    let cfg = dir.path().join("train.json");
    std::fs::write(&cfg, r#"{"steps": 9999, "eval_interval": 20}"#).unwrap();
    let out_dir = dir.path().join("run");
    assert_eq!(
        cli(&[
            "train",
            "--corpus",
            &s(&corpus),
            "--variant",
            "cs_hlora",
            "--config",
            &s(&cfg),
            "--steps",
            "120",
            "--seed",
            "5",
            "--out-dir",
            &s(&out_dir),
        ]),
        EXIT_OK
    );
    let ckpt = out_dir.join("checkpoint.json");
    assert!(ckpt.exists());
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with(
        "step,loss_total,loss_task,loss_nll,lambda,grad_norm,calib_ratio,effmag_layer0,effmag_layer1"
    ));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest_train.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["steps"], 120, "flag must override config file");
    assert_eq!(manifest["config"]["eval_interval"], 20, "file must override default");

    assert_eq!(
        cli(&["eval", "--checkpoint", &s(&ckpt), "--corpus", &s(&corpus), "--out-dir", &s(&out_dir)]),
        EXIT_OK
    );
    assert!(out_dir.join("eval.csv").exists());

    assert_eq!(
        cli(&[
            "spoof",
            "--checkpoint",
            &s(&ckpt),
            "--true-g",
            "0.15",
            "--gen-seed",
            "3",
            "--eval-n",
            "200",
            "--resamples",
            "100",
            "--out-dir",
            &s(&out_dir),
        ]),
        EXIT_OK
    );
    let spoof = std::fs::read_to_string(out_dir.join("spoof.csv")).unwrap();
    assert_eq!(spoof.lines().count(), 14, "header plus 13 grid rows");

    assert_eq!(
        cli(&["probe", "--checkpoint", &s(&ckpt), "--corpus", &s(&corpus), "--out-dir", &s(&out_dir)]),
        EXIT_OK
    );
    assert!(out_dir.join("probe.csv").exists());

    assert_eq!(
        cli(&["gates", "--checkpoint", &s(&ckpt), "--out-dir", &s(&out_dir)]),
        EXIT_OK
    );
    let gates = std::fs::read_to_string(out_dir.join("gates.csv")).unwrap();
    assert_eq!(gates.lines().count(), 201);

    // dimension conflict is a validation error naming the dimensions
    let other = dir.path().join("wide.jsonl");
    assert_eq!(
        cli(&[
            "gen-data", "--n", "50", "--seed", "3", "--feature-dim", "36", "--out", &s(&other)
        ]),
        EXIT_OK
    );
    assert_eq!(
        cli(&["eval", "--checkpoint", &s(&ckpt), "--corpus", &s(&other)]),
        EXIT_VALIDATION
    );

    // gate curves require the gated variant
    let vl_dir = dir.path().join("vl");
    assert_eq!(
        cli(&[
            "train",
            "--corpus",
            &s(&corpus),
            "--variant",
            "vanilla_lora",
            "--steps",
            "40",
            "--out-dir",
            &s(&vl_dir),
        ]),
        EXIT_OK
    );
    assert_eq!(
        cli(&["gates", "--checkpoint", &s(&vl_dir.join("checkpoint.json")), "--out-dir", &s(&vl_dir)]),
        EXIT_VALIDATION
    );
}

#[test]
fn cli_outputs_are_deterministic() {
    let make = |root: &Path| {
        let corpus = root.join("corpus.jsonl");
        assert_eq!(
            cli(&["gen-data", "--n", "400", "--seed", "11", "--out", &s(&corpus)]),
            EXIT_OK
        );
        let out = root.join("run");
        assert_eq!(
            cli(&[
                "train",
                "--corpus",
                &s(&corpus),
                "--variant",
                "cs_hlora",
                "--steps",
                "60",
                "--seed",
                "2",
                "--out-dir",
                &s(&out),
            ]),
            EXIT_OK
        );
        assert_eq!(
            cli(&[
                "spoof",
                "--checkpoint",
                &s(&out.join("checkpoint.json")),
                "--gen-seed",
                "11",
                "--eval-n",
                "100",
                "--resamples",
                "50",
                "--out-dir",
                &s(&out),
            ]),
            EXIT_OK
        );
        out
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let o1 = make(d1.path());
    let o2 = make(d2.path());
    for name in ["checkpoint.json", "metrics.csv", "spoof.csv"] {
        assert_eq!(
            std::fs::read(o1.join(name)).unwrap(),
            std::fs::read(o2.join(name)).unwrap(),
            "{name} differs"
        );
    }
}
