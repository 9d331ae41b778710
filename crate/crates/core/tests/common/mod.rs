#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_copinet"))
}

/// Runs the binary in `dir` with logging silenced.
pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env("COPI_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Every file below `root`, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub const TINY_SETTINGS: &str = "max_epochs=1\nbatch_size=8\n";

/// Writes a train/val/test split and a one-epoch training config into `dir`.
pub fn tiny_workspace(dir: &Path, sizes: &str) {
    let o = run(dir, &["--deterministic", "gen", "--split", sizes, "--seed", "3", "--out", "data"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    fs::write(dir.join("settings.cfg"), TINY_SETTINGS).unwrap();
    fs::write(
        dir.join("train.cfg"),
        format!(
            "variant=copinet\n{TINY_SETTINGS}train_data=data/train.rpm\nval_data=data/val.rpm\ntest_data=data/test.rpm\n"
        ),
    )
    .unwrap();
}

/// Every subcommand with deterministic flags, writing below `out/`, paired
/// with the output path it owns.
pub fn deterministic_commands() -> Vec<(&'static str, &'static str, Vec<&'static str>)> {
    vec![
        ("gen", "out/gen", vec!["--deterministic", "gen", "--count", "6", "--seed", "9", "--out", "out/gen.rpm"]),
        ("train", "out/run", vec!["--deterministic", "train", "--config", "train.cfg", "--out", "out/run"]),
        (
            "eval",
            "out/eval.json",
            vec!["--deterministic", "eval", "--checkpoint", "out/run/model.ckpt", "--data", "data/test.rpm", "--out", "out/eval.json"],
        ),
        (
            "ablate",
            "out/ablate",
            vec!["--deterministic", "ablate", "--data", "data", "--seeds", "0,1", "--config", "settings.cfg", "--out", "out/ablate"],
        ),
        (
            "sweep",
            "out/sweep",
            vec![
                "--deterministic",
                "sweep",
                "--data",
                "data",
                "--sizes",
                "4,8",
                "--seeds",
                "0",
                "--config",
                "settings.cfg",
                "--out",
                "out/sweep",
            ],
        ),
        (
            "gradcheck",
            "out/grad.json",
            vec!["--deterministic", "gradcheck", "--instances", "1", "--per-param", "2", "--out", "out/grad.json"],
        ),
        ("audit", "out/audit.json", vec!["--deterministic", "audit", "--data", "data/test.rpm", "--out", "out/audit.json"]),
        ("oracle", "out/oracle.json", vec!["--deterministic", "oracle", "--data", "data/test.rpm", "--out", "out/oracle.json"]),
    ]
}

/// Runs every subcommand twice and reports, per command, whether both runs
/// succeeded with identical stdout and bytewise identical output files.
/// Expects [`tiny_workspace`] in `dir`.
pub fn reproducibility(dir: &Path) -> Vec<(&'static str, bool)> {
    let cmds = deterministic_commands();
    let mut passes = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(dir.join("out"));
        fs::create_dir_all(dir.join("out")).unwrap();
        let outputs: Vec<Output> = cmds.iter().map(|(_, _, args)| run(dir, args)).collect();
        passes.push((outputs, snapshot(dir)));
    }
    let owned = |snap: &BTreeMap<PathBuf, Vec<u8>>, prefix: &str| -> Vec<(PathBuf, Vec<u8>)> {
        snap.iter()
            .filter(|(p, _)| p.to_string_lossy().starts_with(prefix))
            .map(|(p, b)| (p.clone(), b.clone()))
            .collect()
    };
    cmds.iter()
        .enumerate()
        .map(|(i, (name, prefix, _))| {
            let (o1, o2) = (&passes[0].0[i], &passes[1].0[i]);
            let files = owned(&passes[0].1, prefix);
            let ok = o1.status.success()
                && o2.status.success()
                && o1.stdout == o2.stdout
                && !files.is_empty()
                && files == owned(&passes[1].1, prefix);
            (*name, ok)
        })
        .collect()
}
