//! Runs the shipped experiment configs and prints one line per acceptance
//! criterion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hjreg_cli::config::load;
use hjreg_cli::{run, Kind, RunSummary};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

struct Run {
    summary: RunSummary,
    wall_seconds: f64,
    _dir: tempfile::TempDir,
}

impl Run {
    fn passed(&self) -> bool {
        self.summary.exit_code == 0 && self.summary.manifest.checks.iter().all(|c| c.passed)
    }

    fn check(&self, name: &str) -> bool {
        self.summary
            .manifest
            .checks
            .iter()
            .any(|c| c.name == name && c.passed)
    }

    fn failures(&self) -> String {
        let failed: Vec<String> = self
            .summary
            .manifest
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} = {} {} {}", c.name, c.value, c.relation, c.bound))
            .collect();
        match &self.summary.manifest.error {
            Some(e) => format!("exit {}: {e}; {}", self.summary.exit_code, failed.join("; ")),
            None => failed.join("; "),
        }
    }
}

fn run_config(name: &str) -> Run {
    let path = configs().join(format!("{name}.toml"));
    let text = std::fs::read_to_string(&path).unwrap();
    let table: toml::Table = toml::from_str(&text).unwrap();
    let kind: Kind = table["kind"].as_str().unwrap().parse().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(Some(&path), kind, &[], &[], None);
    let summary = run(kind, cfg, dir.path());
    let timing: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("timing.json")).unwrap()).unwrap();
    Run {
        summary,
        wall_seconds: timing["wall_seconds"].as_f64().unwrap(),
        _dir: dir,
    }
}

/// Every artifact except the wall-clock timing, by file name.
fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().is_some_and(|n| n != "timing.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn deterministic(name: &str) -> Result<(), String> {
    let a = run_config(name);
    let b = run_config(name);
    let (fa, fb) = (artifacts(&a.summary.out_dir), artifacts(&b.summary.out_dir));
    if fa.keys().ne(fb.keys()) {
        return Err(format!("{name}: artifact lists differ"));
    }
    if !fa.contains_key("manifest.json") || !fa.contains_key("report.json") {
        return Err(format!("{name}: missing manifest or report"));
    }
    match fa.iter().find(|(k, v)| fb[*k] != **v) {
        Some((k, _)) => Err(format!("{name}: {k} differs between runs")),
        None => Ok(()),
    }
}

fn main() {
    let mut results: Vec<(usize, bool, String)> = Vec::new();
    let mut record = |n: usize, ok: bool, detail: String| results.push((n, ok, detail));

    let c01 = run_config("c01_fundamental_free_particle");
    record(
        1,
        c01.passed() && c01.wall_seconds <= 30.0,
        format!("{:.2} s; {}", c01.wall_seconds, c01.failures()),
    );
    let c02 = run_config("c02_fundamental_discounted");
    record(2, c02.passed(), c02.failures());
    let c03 = run_config("c03_gradient_formulas");
    record(3, c03.passed(), c03.failures());
    let c04 = run_config("c04_propcheck");
    record(4, c04.passed(), c04.failures());
    let c05 = run_config("c05_moreau");
    record(5, c05.passed(), c05.failures());
    let c06 = run_config("c06_localization");
    let c11 = run_config("c11_singularity");
    record(
        6,
        c06.passed() && c05.check("localization_slack") && c11.check("localization_slack"),
        format!("{} {}", c06.failures(), c11.failures()),
    );
    let c07 = run_config("c07_discounted");
    record(7, c07.passed(), c07.failures());
    let c08 = run_config("c08_lift");
    record(8, c08.passed(), c08.failures());
    let c09 = run_config("c09_regularize_convergence");
    record(
        9,
        c09.check("errors_monotone") && c09.check("final_error_factor"),
        c09.failures(),
    );
    let c10 = run_config("c10_gradient_limit");
    record(
        10,
        c10.check("gradient_distance_spacings") && c10.check("brute_force_gap"),
        c10.failures(),
    );
    record(11, c11.passed(), c11.failures());
    let det = ["c01_fundamental_free_particle", "c05_moreau", "c11_singularity"]
        .iter()
        .map(|n| deterministic(n))
        .collect::<Result<Vec<_>, _>>();
    record(12, det.is_ok(), det.err().unwrap_or_default());

    for (n, ok, detail) in &results {
        if *ok {
            println!("criterion {n}: PASS");
        } else {
            println!("criterion {n}: FAIL ({detail})");
        }
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    if !failed.is_empty() {
        eprintln!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
