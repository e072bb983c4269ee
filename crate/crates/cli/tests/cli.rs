use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Self {
        Env {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, body: &str) {
        fs::write(self.path(name), body).unwrap();
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_panda"))
            .current_dir(self.dir.path())
            .args(["--meta", "meta"])
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Value {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        serde_json::from_slice(&out.stdout).unwrap()
    }

    fn fails(&self, args: &[&str], code: i32) -> (Value, String) {
        let out = self.run(args);
        assert_eq!(
            out.status.code(),
            Some(code),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let stdout = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
        (stdout, String::from_utf8_lossy(&out.stderr).into_owned())
    }

    fn outsource(&self) {
        self.ok(&["keygen", "--out", "key.json"]);
        self.ok(&["outsource", "--key-file", "key.json", "--store", "store"]);
    }
}

/// Ten sensitive values s1..s10; five of them also occur in cleartext, plus
/// five cleartext-only values.
fn example_relation() -> String {
    let mut s = String::from("tuple_id,k,note,sensitive\n");
    for i in 1..=10 {
        s += &format!("ts{i},s{i},x,1\n");
    }
    for i in [1, 2, 3, 5, 6] {
        s += &format!("tn{i},s{i},y,0\n");
    }
    for i in 11..=15 {
        s += &format!("tn{i},ns{i},y,0\n");
    }
    s
}

fn tuple_ids(v: &Value) -> Vec<String> {
    let mut ids: Vec<String> = v["tuples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["tuple_id"].as_str().unwrap().to_string())
        .collect();
    ids.sort();
    ids
}

fn example_setup() -> Env {
    let env = Env::new();
    env.write("r.csv", &example_relation());
    let r = env.ok(&["ingest", "--name", "r", "--csv", "r.csv", "--attr", "k"]);
    assert_eq!(r["sensitive"], 10);
    assert_eq!(r["nonsensitive"], 10);
    let b = env.ok(&["bin", "--table", "r", "--identity"]);
    assert_eq!(b["layout"]["sensitive_bins"], 5);
    assert_eq!(b["layout"]["nonsensitive_bins"], 2);
    env.outsource();
    env
}

#[test]
fn selection_fetches_two_bins() {
    let env = example_setup();
    let q = env.ok(&["query", "--table", "r", "--value", "s2", "--show-av"]);
    assert_eq!(q["result"]["fetched_sensitive"], 2);
    assert_eq!(q["result"]["fetched_nonsensitive"], 5);
    assert_eq!(tuple_ids(&q["result"]), ["tn2", "ts2"]);
    let av = q["adversarial_view"].as_array().unwrap();
    assert_eq!(av.len(), 2);
    // the cloud never sees the queried value on its own
    let values = av[1]["request"]["values"].as_array().unwrap();
    assert_eq!(values.len(), 5);

    let none = env.ok(&["query", "--table", "r", "--value", "nope", "--show-av"]);
    assert_eq!(none["result"]["fetched_sensitive"], 0);
    assert!(none["adversarial_view"].as_array().unwrap().is_empty());

    let sweep = env.ok(&["query", "--table", "r", "--sweep"]);
    assert_eq!(sweep["queries"], 15);
    assert_eq!(sweep["matching_tuples"], 20);
    assert_eq!(sweep["fetched_min"], 7);
    assert_eq!(sweep["fetched_max"], 7);

    let a = env.ok(&["audit", "--report", "report.json"]);
    assert_eq!(a["passed"], true);
    assert_eq!(a["bipartite"][0]["edges"], 10);
    assert_eq!(a["allocation"]["probability"], "1/9");
    let saved: Value = serde_json::from_str(&fs::read_to_string(env.path("report.json")).unwrap()).unwrap();
    assert_eq!(saved, a);
}

fn nine_pairs() -> String {
    let mut s = String::from("tuple_id,k,sensitive\n");
    for i in 1..=9 {
        s += &format!("s{i},v{i},1\nn{i},v{i},0\n");
    }
    s
}

fn frequent_trace(mode: &[&str]) -> (Env, Output) {
    let env = Env::new();
    env.write("r.csv", &nine_pairs());
    env.ok(&["ingest", "--name", "r", "--csv", "r.csv", "--attr", "k"]);
    let mut args = vec!["bin", "--table", "r", "--identity"];
    args.extend_from_slice(mode);
    env.ok(&args);
    env.outsource();
    for _ in 0..4 {
        for v in ["v1", "v4", "v7"] {
            env.ok(&["query", "--table", "r", "--value", v]);
        }
    }
    let out = env.run(&["audit", "--checks", "skew"]);
    (env, out)
}

#[test]
fn workload_layout_spreads_frequent_queries() {
    let (_env, out) = frequent_trace(&["--mode", "workload", "--frequent", "v1,v4,v7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["skew"][0]["fetch_counts"], serde_json::json!([4, 4, 4]));
    assert_eq!(r["skew"][0]["flagged"], false);
}

#[test]
fn naive_layout_fails_skew_audit() {
    let (_env, out) = frequent_trace(&[]);
    assert_eq!(out.status.code(), Some(3));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["passed"], false);
    assert_eq!(r["skew"][0]["flagged"], true);
    assert_eq!(r["skew"][0]["hot"].as_array().unwrap().len(), 1);
}

#[test]
fn inserts_raise_overhead_until_rebin() {
    let env = example_setup();
    let mut queries = 0;
    let mut sweep = || {
        let s = env.ok(&["query", "--table", "r", "--sweep"]);
        queries += s["queries"].as_u64().unwrap();
        s["fetched_mean"].as_f64().unwrap()
    };
    let mut means = vec![sweep()];
    for b in 1..=7 {
        let mut csv = String::from("tuple_id,k,note,sensitive\n");
        for i in 1..=5 {
            csv += &format!("bs{b}-{i},b{b}-{i},z,1\nbn{b}-{i},b{b}-{i},z,0\n");
        }
        env.write("batch.csv", &csv);
        let ins = env.ok(&["insert", "--table", "r", "--csv", "batch.csv"]);
        assert_eq!(ins["sensitive_uploaded"], 5);
        assert_eq!(ins["cleartext_uploaded"], 5);
        means.push(sweep());
        assert_eq!(env.ok(&["audit", "--checks", "bipartite,size"])["passed"], true);
    }
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
    assert!(means[7] > means[0]);

    let stats = env.ok(&["stats"]);
    let l = &stats["relations"][0]["layouts"][0];
    assert_eq!(l["rebin_recommended"], true);
    assert_eq!(l["queries"], queries);

    let err = env.fails(&["bin", "--table", "r", "--identity"], 1).1;
    assert!(err.contains("--rebin"));
    env.ok(&["bin", "--table", "r", "--identity", "--rebin"]);
    let after = env.ok(&["query", "--table", "r", "--sweep"]);
    assert!(after["fetched_mean"].as_f64().unwrap() < means[7]);
    assert_eq!(after["matching_tuples"], 90);
    assert_eq!(env.ok(&["audit"])["passed"], true);
    let stats = env.ok(&["stats"]);
    assert_eq!(stats["relations"][0]["layouts"][0]["rebin_recommended"], false);
}

#[test]
fn insert_of_duplicate_ids_is_rejected() {
    let env = example_setup();
    env.write("dup.csv", "tuple_id,k,note,sensitive\nts1,s1,x,1\n");
    env.fails(&["insert", "--table", "r", "--csv", "dup.csv"], 1);
    // nothing changed
    assert_eq!(
        env.ok(&["query", "--table", "r", "--value", "s1"])["tuples"]
            .as_array()
            .unwrap()
            .len(),
        2
    );
}

#[test]
fn usage_errors_exit_one() {
    let env = Env::new();
    env.fails(&["frobnicate"], 1);
    let err = env.fails(&["query", "--table", "r", "--value", "x"], 1).1;
    assert!(err.contains("panda ingest"));
    env.write("r.csv", &example_relation());
    env.fails(&["ingest", "--name", "r", "--csv", "r.csv", "--attr", "missing"], 1);
    env.fails(&["bin", "--table", "r", "--mode", "bogus"], 1);
}

#[test]
fn lock_file_blocks_concurrent_commands() {
    let env = example_setup();
    fs::write(env.path("meta/.lock"), "123").unwrap();
    let err = env.fails(&["stats"], 1).1;
    assert!(err.contains("locked"));
    fs::remove_file(env.path("meta/.lock")).unwrap();
    env.ok(&["stats"]);
    assert!(!env.path("meta/.lock").exists());
}

#[test]
fn tampered_ciphertext_exits_two() {
    let env = example_setup();
    let bin = env.path("store/r/sensitive.bin");
    let mut bytes = fs::read(&bin).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&bin, bytes).unwrap();
    let (_, err) = env.fails(&["query", "--table", "r", "--sweep"], 2);
    assert!(err.contains("integrity"), "{err}");
}

#[test]
fn layout_swapped_behind_the_store_exits_two() {
    let env = example_setup();
    // rebuild the layout offline with another permutation
    let layout = env.path("meta/layouts/r.k.json");
    let saved = fs::read(&layout).unwrap();
    let other = Env::new();
    other.write("r.csv", &example_relation());
    other.ok(&["ingest", "--name", "r", "--csv", "r.csv", "--attr", "k"]);
    other.ok(&["bin", "--table", "r", "--seed", "99"]);
    fs::copy(other.path("meta/layouts/r.k.json"), &layout).unwrap();
    let (_, err) = env.fails(&["query", "--table", "r", "--value", "s2"], 2);
    assert!(err.contains("hint:"));
    fs::write(&layout, saved).unwrap();
    env.ok(&["query", "--table", "r", "--value", "s2"]);
}

const EMPLOYEE: &str = "tuple_id,EID,Name,sensitive\nr1,E101,Adam,1\nr2,E102,Bob,0\nr3,E103,John,0\n";
const PROJECT: &str = "tuple_id,EeID,Project,sensitive\nt1,E101,Security,1\nt2,E102,Design,1\nt3,E103,Code,0\nt4,E103,Sale,0\nt5,E102,Sale,0\n";

fn join_setup(project: &str) -> Env {
    let env = Env::new();
    env.write("e.csv", EMPLOYEE);
    env.write("p.csv", project);
    env.ok(&["ingest", "--name", "Employee", "--csv", "e.csv", "--attr", "EID"]);
    env.ok(&["ingest", "--name", "Project", "--csv", "p.csv", "--attr", "EeID"]);
    env.ok(&["bin", "--table", "Employee"]);
    env.outsource();
    env
}

#[test]
fn join_parent_child() {
    let env = join_setup(PROJECT);
    let args = [
        "join",
        "--parent",
        "Employee",
        "--child",
        "Project",
        "--key",
        "EID",
        "--child-key",
        "EeID",
    ];
    let j = env.ok(&args);
    assert_eq!(j["rows"], 5);
    let pairs: Vec<(String, String, String)> = j["joined"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            let s = |v: &Value| v.as_str().unwrap().to_string();
            (s(&r["parent"]["tuple_id"]), s(&r["child"]["tuple_id"]), s(&r["origin"]))
        })
        .collect();
    let expect = [
        ("r1", "t1", "encrypted"),
        ("r2", "t2", "encrypted"),
        ("r2", "t5", "cleartext"),
        ("r3", "t3", "cleartext"),
        ("r3", "t4", "cleartext"),
    ];
    assert_eq!(pairs.len(), expect.len());
    for (got, want) in pairs.iter().zip(expect) {
        assert_eq!((got.0.as_str(), got.1.as_str(), got.2.as_str()), want);
    }

    let mut sel = args.to_vec();
    sel.extend(["--select", "E103", "--fresh-fetch"]);
    let j = env.ok(&sel);
    assert_eq!(j["rows"], 2);
    assert_eq!(tuple_ids(&j["fresh_fetch"]), ["r3"]);

    // a second run reuses the prepared tables
    assert_eq!(env.ok(&args)["rows"], 5);
    env.fails(
        &[
            "join",
            "--parent",
            "Employee",
            "--child",
            "Project",
            "--key",
            "EID",
            "--child-key",
            "Project",
        ],
        1,
    );
}

#[test]
fn join_constraint_violation_exits_two() {
    // E101 is sensitive in Employee but has a cleartext project
    let env = join_setup(&format!("{PROJECT}t6,E101,Leak,0\n"));
    let (_, err) = env.fails(
        &[
            "join",
            "--parent",
            "Employee",
            "--child",
            "Project",
            "--key",
            "EID",
            "--child-key",
            "EeID",
        ],
        2,
    );
    assert!(err.contains("E101"));
    let g = env.ok(&[
        "join",
        "--parent",
        "Employee",
        "--child",
        "Project",
        "--key",
        "EID",
        "--child-key",
        "EeID",
        "--general",
    ]);
    assert_eq!(g["rows"], 6);
}

#[test]
fn range_queries() {
    let env = Env::new();
    let mut csv = String::from("tuple_id,k,sensitive\n");
    for i in 1..=16 {
        csv += &format!("s{i},{i},1\nn{i},{i},0\n");
    }
    env.write("r.csv", &csv);
    env.ok(&["ingest", "--name", "r", "--csv", "r.csv", "--attr", "k"]);
    env.ok(&["bin", "--table", "r"]);
    env.outsource();

    let base = ["range", "--table", "r", "--attr", "k", "--numeric", "--seed", "5"];
    let q = |extra: &[&'static str]| -> Vec<&'static str> { base.iter().chain(extra).copied().collect() };
    let r = env.ok(&q(&["--from", "4", "--to", "7"]));
    let mut want: Vec<String> = (4..=7).flat_map(|i| [format!("n{i}"), format!("s{i}")]).collect();
    want.sort();
    assert_eq!(tuple_ids(&r), want);
    let fetched = r["fetched_sensitive"].as_u64().unwrap() + r["fetched_nonsensitive"].as_u64().unwrap();
    assert!(fetched >= 8);

    let r = env.ok(&q(&["--from", "1", "--to", "4", "--strategy", "best"]));
    assert_eq!(tuple_ids(&r).len(), 8);

    let (_, err) = env.fails(&q(&["--from", "8", "--to", "12", "--strategy", "best"]), 1);
    assert!(err.contains("--strategy least"));
    let r = env.ok(&q(&[
        "--from",
        "8",
        "--to",
        "12",
        "--strategy",
        "best",
        "--allow-full-scan",
    ]));
    assert_eq!(tuple_ids(&r).len(), 10);
    assert_eq!(r["fetched_sensitive"], 16);
    assert_eq!(r["fetched_nonsensitive"], 16);

    let stats = env.ok(&["stats"]);
    assert_eq!(stats["relations"][0]["range_trees"], serde_json::json!(["k"]));
}

#[test]
fn gen_writes_partitioned_csvs() {
    let env = Env::new();
    let g = env.ok(&["gen", "--out", "data", "--lineitems", "500", "--sensitivity", "20"]);
    assert_eq!(g["generated"][1]["rows"], 500);
    let r = env.ok(&[
        "ingest",
        "--name",
        "LineItem",
        "--csv",
        "data/lineitem.csv",
        "--attr",
        "l_suppkey",
    ]);
    assert_eq!(r["rows"], 500);
    assert_eq!(r["sensitive"], g["generated"][1]["sensitive"]);
}
