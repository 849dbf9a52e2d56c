//! One line per acceptance criterion. Thresholds and budgets are pinned here,
//! independent of the tolerances written in the bundled configs.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use crossprop::config::ExperimentConfig;
use crossprop::study::{run_study, RunOptions, StudySummary};

enum Bound {
    Below(f64),
    Above(f64),
    AtLeast(f64),
    Within(f64, f64),
}

impl Bound {
    fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::Below(t) => v < t,
            Bound::Above(t) => v > t,
            Bound::AtLeast(t) => v >= t,
            Bound::Within(lo, hi) => (lo..=hi).contains(&v),
        }
    }
}

struct Requirement {
    criterion: u32,
    study: &'static str,
    check: &'static str,
    bound: Bound,
}

const fn req(criterion: u32, study: &'static str, check: &'static str, bound: Bound) -> Requirement {
    Requirement { criterion, study, check, bound }
}

const REQUIREMENTS: &[Requirement] = &[
    req(1, "transfer_closed_form", "max relative L2 error, random cases", Bound::Below(1e-6)),
    req(1, "transfer_closed_form", "worked case width error", Bound::Below(1e-12)),
    req(1, "transfer_closed_form", "worked case relative L2 error", Bound::Below(1e-6)),
    req(2, "fourier_intertwining", "max residual of F T(mu,a,b) = T(mu,b,-a) F", Bound::Below(1e-6)),
    req(3, "invariants_schrodinger", "symplectic defect", Bound::Below(1e-8)),
    req(3, "invariants_schrodinger", "min eigenvalue of Im Gamma", Bound::Above(0.0)),
    req(3, "invariants_bloch", "symplectic defect", Bound::Below(1e-8)),
    req(3, "invariants_bloch", "min eigenvalue of Im Gamma", Bound::Above(0.0)),
    req(3, "invariants_two_level_2d", "symplectic defect", Bound::Below(1e-8)),
    req(3, "invariants_two_level_2d", "min eigenvalue of Im Gamma", Bound::Above(0.0)),
    req(4, "invariants_schrodinger", "eigenvector norm defect", Bound::Below(1e-10)),
    req(4, "invariants_schrodinger", "eigenspace defect", Bound::Below(1e-8)),
    req(4, "invariants_schrodinger", "Theta Hermiticity residual", Bound::Below(1e-9)),
    req(4, "invariants_schrodinger", "random Theta points", Bound::AtLeast(100.0)),
    req(4, "invariants_bloch", "eigenvector norm defect", Bound::Below(1e-10)),
    req(4, "invariants_bloch", "eigenspace defect", Bound::Below(1e-8)),
    req(4, "invariants_bloch", "Theta Hermiticity residual", Bound::Below(1e-9)),
    req(4, "invariants_bloch", "random Theta points", Bound::AtLeast(100.0)),
    req(4, "invariants_two_level_2d", "eigenvector norm defect", Bound::Below(1e-10)),
    req(4, "invariants_two_level_2d", "eigenspace defect", Bound::Below(1e-8)),
    req(4, "invariants_two_level_2d", "Theta Hermiticity residual", Bound::Below(1e-9)),
    req(4, "invariants_two_level_2d", "random Theta points", Bound::AtLeast(100.0)),
    req(5, "gapped_adiabatic_1d", "observed order (minimum over consecutive eps)", Bound::AtLeast(0.9)),
    req(6, "schrodinger_crossing_1d", "observed order (minimum over consecutive eps)", Bound::AtLeast(0.5)),
    req(6, "schrodinger_crossing_1d", "evaluation time outside the boundary layer", Bound::Above(0.0)),
    req(7, "schrodinger_crossing_1d", "band-2 overlap with the spawned branch", Bound::Above(0.98)),
    req(7, "schrodinger_crossing_1d", "band-2 mass / sqrt(eps) relative to prediction", Bound::Below(0.1)),
    req(8, "phase_expansion", "Lambda'' vs 2 mu + alpha.beta (derived parameters)", Bound::Below(1e-4)),
    req(8, "phase_expansion", "zeta' vs J grad(h1 - h2)", Bound::Below(1e-4)),
    req(9, "hk_pendulum", "observed order (minimum over consecutive eps)", Bound::AtLeast(0.8)),
    req(9, "hk_harmonic", "largest L2 error", Bound::Below(1e-6)),
    req(10, "oracle_convergence", "norm drift over 1000 steps", Bound::Below(1e-10)),
    req(10, "oracle_convergence", "dt-halving error ratio", Bound::Within(3.5, 4.5)),
];

/// Runtime budget per criterion; criteria sharing a study share its time.
fn budget(criterion: u32) -> Duration {
    Duration::from_secs(match criterion {
        1 => 5,
        2 => 2,
        3 | 4 => 5,
        5 => 60,
        6 | 7 => 180,
        8 => 5,
        9 => 60,
        10 => 20,
        _ => unreachable!(),
    })
}

/// Sweep parameters the criteria fix, checked against the bundled configs.
fn check_setup(cfg: &ExperimentConfig) -> Vec<String> {
    let mut issues = Vec::new();
    let mut expect_eps = |want: &[f64]| {
        if cfg.eps != want {
            issues.push(format!("{}: eps {:?}, expected {:?}", cfg.study, cfg.eps, want));
        }
    };
    match cfg.study.as_str() {
        "gapped_adiabatic_1d" => expect_eps(&[2e-2, 1e-2, 5e-3, 2.5e-3]),
        "schrodinger_crossing_1d" => expect_eps(&[2e-2, 1e-2, 5e-3]),
        "hk_pendulum" => expect_eps(&[1e-2, 5e-3]),
        _ => {}
    }
    let time = cfg.time.as_ref();
    match cfg.study.as_str() {
        "gapped_adiabatic_1d" if time.and_then(|t| t.t_end) != Some(1.0) => issues.push("adiabatic run must end at T = 1".into()),
        "schrodinger_crossing_1d" if time.and_then(|t| t.after_crossing) != Some(0.5) => {
            issues.push("crossing run must be evaluated 0.5 after the crossing".into())
        }
        s if s.starts_with("invariants") && time.and_then(|t| t.t_end) != Some(5.0) => issues.push(format!("{s}: trajectories must run to T = 5")),
        _ => {}
    }
    if cfg.study == "schrodinger_crossing_1d" && cfg.tolerances.check_eps != Some(5e-3) {
        issues.push("transferred-branch fidelity must be checked at eps = 5e-3".into());
    }
    issues
}

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn main() {
    let out = tempfile::tempdir().unwrap();
    let mut studies: Vec<&str> = REQUIREMENTS.iter().map(|r| r.study).collect();
    studies.dedup();
    let mut summaries: BTreeMap<&str, Result<StudySummary, String>> = BTreeMap::new();
    let mut times: BTreeMap<&str, Duration> = BTreeMap::new();
    let mut setup_issues = Vec::new();
    for study in studies {
        if summaries.contains_key(study) {
            continue;
        }
        let cfg = ExperimentConfig::from_file(&configs_dir().join(format!("{study}.json"))).unwrap();
        setup_issues.extend(check_setup(&cfg));
        let opts = RunOptions { out_dir: out.path().to_path_buf(), seed: None, verbose: false };
        let start = Instant::now();
        let summary = run_study(&cfg, &opts).map_err(|e| e.to_string());
        times.insert(study, start.elapsed());
        summaries.insert(study, summary);
    }

    // criterion 1 additionally needs at least 20 random cases in the stated |mu| range
    let mut extra: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    if let Some(Ok(s)) = summaries.get("transfer_closed_form") {
        let cases = s.details["cases"].as_array().cloned().unwrap_or_default();
        let in_range = cases.iter().filter(|c| c["mu"].as_f64().is_some_and(|m| (0.05..=5.0).contains(&m.abs()))).count();
        if cases.len() < 20 || in_range != cases.len() {
            extra.entry(1).or_default().push(format!("{} random cases, {in_range} with |mu| in [0.05, 5]", cases.len()));
        }
    }

    let mut all_pass = setup_issues.is_empty();
    for issue in &setup_issues {
        println!("setup FAIL: {issue}");
    }
    for criterion in 1..=10u32 {
        let mut failures = extra.remove(&criterion).unwrap_or_default();
        let mut studies_used: Vec<&str> = Vec::new();
        for r in REQUIREMENTS.iter().filter(|r| r.criterion == criterion) {
            if !studies_used.contains(&r.study) {
                studies_used.push(r.study);
            }
            match summaries.get(r.study) {
                Some(Ok(s)) => match s.checks.iter().find(|c| c.name == r.check) {
                    Some(c) if r.bound.holds(c.value) => {}
                    Some(c) => failures.push(format!("{}: {} = {:.4e}", r.study, r.check, c.value)),
                    None => failures.push(format!("{}: missing check '{}'", r.study, r.check)),
                },
                Some(Err(e)) => failures.push(format!("{}: {e}", r.study)),
                None => failures.push(format!("{}: not run", r.study)),
            }
        }
        let elapsed: Duration = studies_used.iter().filter_map(|s| times.get(s)).sum();
        if elapsed > budget(criterion) {
            failures.push(format!("runtime {:.1}s over budget {:?}", elapsed.as_secs_f64(), budget(criterion)));
        }
        let pass = failures.is_empty();
        all_pass &= pass;
        println!(
            "criterion {criterion:>2}: {} ({:.2}s){}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if pass { String::new() } else { format!(" {}", failures.join("; ")) }
        );
    }
    if !all_pass {
        eprintln!("acceptance criteria failed");
        std::process::exit(1);
    }
}
