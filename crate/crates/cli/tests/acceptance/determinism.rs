//! Re-running a command with the same config and seed gives identical bytes.

use std::path::{Path, PathBuf};
use std::process::Command;

use super::Outcome;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn meshsplat(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_meshsplat"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!(
            "`meshsplat {}` exited with {status}",
            args.join(" ")
        ))
    }
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

pub fn run() -> Outcome {
    let smoke = fixture("smoke.toml");
    let smoke = smoke.to_str().unwrap();
    let runs: [(&str, Vec<&str>); 4] = [
        ("full", vec!["full", "--config", smoke, "--seed", "11"]),
        (
            "stage1 parallel",
            vec![
                "stage1",
                "--config",
                smoke,
                "--set",
                "stage1.batch_execution=\"parallel\"",
            ],
        ),
        (
            "stage2 free",
            vec![
                "stage2",
                "--config",
                smoke,
                "--set",
                "stage2.mode=\"free\"",
                "--seed",
                "3",
            ],
        ),
        (
            "stage2 frozen",
            vec![
                "stage2",
                "--config",
                smoke,
                "--set",
                "stage2.mode=\"frozen_positions\"",
            ],
        ),
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut compared = 0;
    let mut problems = Vec::new();
    for (i, (name, args)) in runs.iter().enumerate() {
        let a = tmp.path().join(format!("{i}a"));
        let b = tmp.path().join(format!("{i}b"));
        if let Err(e) = meshsplat(args, &a).and_then(|_| meshsplat(args, &b)) {
            problems.push(e);
            continue;
        }
        let (fa, fb) = (files(&a), files(&b));
        let checkpoints = fa
            .iter()
            .filter(|p| p.extension().is_some_and(|e| e == "gdck"))
            .count();
        if checkpoints == 0 {
            problems.push(format!("{name}: no checkpoint written"));
        }
        for (x, y) in fa.iter().zip(&fb) {
            // the resolved config names the output directory
            if x.ends_with("config.resolved.toml") {
                continue;
            }
            compared += 1;
            if x.strip_prefix(&a).ok() != y.strip_prefix(&b).ok()
                || std::fs::read(x).unwrap() != std::fs::read(y).unwrap()
            {
                problems.push(format!("{name}: {} differs", x.display()));
            }
        }
        if fa.len() != fb.len() {
            problems.push(format!("{name}: file sets differ"));
        }
    }
    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{} commands run twice, {compared} artifacts byte-identical including checkpoints",
                runs.len()
            )
        } else {
            problems.join("; ")
        },
    )
}
