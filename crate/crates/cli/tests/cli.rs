use std::path::Path;
use std::process::{Command, Output};

fn lanesim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanesim"))
        .current_dir(dir)
        .env_remove("LANESIM_WORKERS")
        .args(args)
        .output()
        .expect("spawn lanesim")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn generate_partition_run_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&lanesim(d, &["generate", "--rows", "4", "--cols", "4", "--trips", "200", "--window", "300"]));
    let net = std::fs::read_to_string(d.join("network.csv")).unwrap();
    assert_eq!(net.lines().filter(|l| l.starts_with("node,")).count(), 16);
    assert_eq!(net.lines().filter(|l| l.starts_with("edge,")).count(), 48);

    let io = ["--network", "network.csv", "--demand", "trips.csv"];
    let mut args = vec!["partition"];
    args.extend(io);
    args.extend(["--shards", "2", "--epsilon", "0.1", "--out", "part.csv"]);
    ok(&lanesim(d, &args));
    let part = std::fs::read_to_string(d.join("part.csv")).unwrap();
    assert!(part.starts_with("# lanesim partition v1 k=2\n"));
    assert_eq!(part.lines().count(), 17);

    let mut base = vec!["run"];
    base.extend(io);
    base.extend(["--end", "600", "--check-invariants"]);
    let run = |extra: &[&str]| {
        let mut a = base.clone();
        a.extend(extra);
        let o = lanesim(d, &a);
        ok(&o);
        o
    };
    run(&["--out", "k1.csv", "--metrics", "m.csv"]);
    run(&["--shards", "2", "--partition", "part.csv", "--out", "k2.csv", "--checkpoint-every", "500", "--checkpoint", "c.ckpt"]);
    let k1 = std::fs::read(d.join("k1.csv")).unwrap();
    let k2 = std::fs::read(d.join("k2.csv")).unwrap();
    assert!(k1.starts_with(b"id,depart,enter,arrive,travel_time,distance\n"));
    assert_eq!(k1.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count(), 201);
    let sorted = |b: &[u8]| {
        let mut v: Vec<&[u8]> = b.split(|&c| c == b'\n').collect();
        v.sort();
        v.into_iter().map(<[u8]>::to_vec).collect::<Vec<_>>()
    };
    assert_eq!(sorted(&k1), sorted(&k2), "strict results differ between shard counts");
    let metrics = std::fs::read_to_string(d.join("m.csv")).unwrap();
    assert!(metrics.starts_with("step,time_s,waiting,live,finished,"));

    let mut resume = vec!["run"];
    resume.extend(io);
    resume.extend(["--resume", "c.ckpt", "--out", "rest.csv"]);
    ok(&lanesim(d, &resume));
    let rest = std::fs::read(d.join("rest.csv")).unwrap();
    let before: std::collections::HashSet<Vec<u8>> = sorted(&k2).into_iter().collect();
    for line in sorted(&rest).into_iter().filter(|l| !l.is_empty()) {
        assert!(before.contains(&line), "resumed row not in full run: {}", String::from_utf8_lossy(&line));
    }
}

#[test]
fn errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = lanesim(dir.path(), &["run", "--network", "missing.csv", "--demand", "missing.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));

    ok(&lanesim(dir.path(), &["generate", "--rows", "3", "--cols", "3", "--trips", "10"]));
    let o = lanesim(dir.path(), &["run", "--network", "network.csv", "--demand", "trips.csv", "--dt=-1"]);
    assert_eq!(o.status.code(), Some(1));
}
