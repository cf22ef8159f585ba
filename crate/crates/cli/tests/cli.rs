use std::path::Path;
use std::process::{Command, Output};

fn mmcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmcp")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_tensor_lists_pqs_ones() {
    for (dims, ones) in [("2,2,2", 8), ("3,3,2", 18), ("2,3,4", 24)] {
        let out = mmcp(&["gen-tensor", "--dims", dims]);
        assert_eq!(code(&out), 0);
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["ones"].as_array().unwrap().len(), ones);
    }
}

#[test]
fn usage_errors_exit_4() {
    assert_eq!(code(&mmcp(&["decompose", "--rank", "7"])), 4);
    assert_eq!(code(&mmcp(&["decompose", "--dims", "2,2", "--rank", "7"])), 4);
    assert_eq!(code(&mmcp(&["decompose", "--dims", "2,2,2", "--rank", "0"])), 4);
    assert_eq!(code(&mmcp(&["no-such-command"])), 4);
    assert_eq!(code(&mmcp(&["verify", "no_such_fixture"])), 4);
}

#[test]
fn verify_shipped_fixtures() {
    for name in ["strassen", "t332_r15"] {
        let out = mmcp(&["verify", name]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("m1 ="));
    }
}

#[test]
fn flipped_entry_exits_3_and_malformed_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let text = matmul_fixture();
    let flipped = dir.path().join("flipped.json");
    std::fs::write(&flipped, text.replacen("[\"1\", \"0\", \"1\"", "[\"-1\", \"0\", \"1\"", 1)).unwrap();
    assert_eq!(code(&mmcp(&["verify", path_str(&flipped)])), 3);

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, &text[..text.len() / 2]).unwrap();
    assert_eq!(code(&mmcp(&["verify", path_str(&broken)])), 4);

    let wrong_rank = dir.path().join("rank.json");
    std::fs::write(&wrong_rank, text.replace("\"rank\": 7", "\"rank\": 6")).unwrap();
    let out = mmcp(&["verify", path_str(&wrong_rank)]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rank"));

    let wrong_dims = dir.path().join("wrong.json");
    std::fs::write(&wrong_dims, text.replace("[2, 2, 2]", "[2, 2, 3]")).unwrap();
    assert_eq!(code(&mmcp(&["verify", path_str(&wrong_dims)])), 4);
}

fn matmul_fixture() -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/strassen.json")).unwrap()
}

#[test]
fn decompose_is_reproducible_and_no_fit_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let out = mmcp(&["decompose", "--dims", "2,2,2", "--rank", "7", "--seed", "5", "--out", path_str(p)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dir.path().join("a_trace.csv").exists());

    let out = mmcp(&["decompose", "--dims", "2,2,2", "--rank", "6", "--restarts", "2", "--seed", "1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn pipeline_output_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = mmcp(&["pipeline", "--dims", "2,2,2", "--rank", "7", "--seed", "1", "--out", path_str(&run)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["decompose.json", "sparsify.json", "rationalize.json", "certificate.json", "program.txt", "report.json"] {
        assert!(run.join(name).exists(), "missing {name}");
    }
    let verified = mmcp(&["verify", path_str(&run.join("rationalize.json"))]);
    assert_eq!(code(&verified), 0);
    let pseudo = mmcp(&["export", path_str(&run.join("rationalize.json")), "--format", "pseudocode"]);
    assert!(String::from_utf8_lossy(&pseudo.stdout).starts_with("# 7 multiplications"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "dims = \"2,2,2\"\nrank = 6\nrestarts = 1\n\n[sweep]\nc_values = [20.0, 40.0]\n").unwrap();
    let csv = dir.path().join("sweep.csv");
    let out = mmcp(&["sweep", "--config", path_str(&cfg), "--rank", "7", "--restarts", "5", "--seed", "1", "--out", path_str(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("c,best_phi,status,restarts_used,wall_time"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("40"));

    std::fs::write(&cfg, "dims = \"2,2,2\"\nbogus_key = 1\n").unwrap();
    assert_eq!(code(&mmcp(&["decompose", "--config", path_str(&cfg), "--rank", "7"])), 4);
}
