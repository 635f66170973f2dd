//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs in-process checks against `dib_core` and end-to-end runs of the `dib`
//! binary. Exits non-zero when a criterion fails that is not listed in
//! [`KNOWN_SHORTFALLS`].

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use dib_core::data::{make_prototype_dataset, Split};
use dib_core::decomposition::{build_base_expansion, decode_index, to_digits};
use dib_core::dib::empirical_v_entropy;
use dib_core::info::empirical_entropy;
use dib_core::models::{family_sweep, one_hot, FamilySpec};
use dib_core::optim::OptimConfig;
use dib_core::oracle::{exact_v_entropy, TabularFamily};
use dib_core::probes::{pair_signs, sign_test};
use dib_core::rng::{rng_from, standard_normal};
use serde_json::Value;

const GRAD_INSTANCES: usize = 10;
const GRAD_BUDGET: Duration = Duration::from_secs(10);
const ORACLE_TOL: f64 = 1e-9;
const NEGATIVE_CONTROL_MIN_RISK: f64 = 0.1;
const THEOREM_BUDGET: Duration = Duration::from_secs(120);
const PROP_BUDGET: Duration = Duration::from_secs(300);
const AXIOM_TOL: f64 = 0.05;
const AXIOM_BUDGET: Duration = Duration::from_secs(300);
const ESTIMATOR_TOL: f64 = 1e-6;
const ESTIMATOR_BUDGET: Duration = Duration::from_secs(30);
const MINIMALITY_SLACK: f64 = 0.05;
const SWEEP_BUDGET: Duration = Duration::from_secs(1800);
const LARGE_BETA_MAX_ABOVE_CHANCE: f64 = 0.10;
const ZERO_BETA_MIN_ABOVE_CHANCE: f64 = 0.20;
const PAC_MIN_FRACTION: f64 = 0.9;
const PAC_BUDGET: Duration = Duration::from_secs(120);
const PROBE_SEEDS: [u64; 3] = [0, 1, 2];
const PROBE_P: f64 = 0.1;
const PROBE_BUDGET: Duration = Duration::from_secs(1800);

/// Criteria that fail at desk scale; see the README.
const KNOWN_SHORTFALLS: &[&str] = &["distractor-decodability"];

struct Verdict {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn dib(out: &Path, args: &[&str]) -> PathBuf {
    let o = Command::new(env!("CARGO_BIN_EXE_dib")).arg("--out").arg(out).args(args).output().expect("binary runs");
    assert!(o.status.success(), "dib {args:?}: {}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradient_suite() -> Verdict {
    let t = Instant::now();
    let results = common::run_gradcheck(GRAD_INSTANCES, 2024);
    let elapsed = t.elapsed();
    let (name, _, worst) = results.iter().cloned().fold(("", 0, 0.0), |a, b| if b.2 > a.2 { b } else { a });
    let bad: Vec<&str> = results.iter().filter(|r| r.2 >= common::FD_REL_TOL).map(|r| r.0).collect();
    Verdict {
        name: "gradient-suite",
        passed: bad.is_empty() && elapsed < GRAD_BUDGET,
        detail: format!(
            "{} primitives x {GRAD_INSTANCES} instances, h {:e}, worst rel err {worst:.2e} ({name}) < {:e}, failing {bad:?}, {} < {}",
            results.len(),
            common::FD_STEP,
            common::FD_REL_TOL,
            secs(elapsed),
            secs(GRAD_BUDGET)
        ),
    }
}

fn oracle_erms(out: &Path) -> Verdict {
    let t = Instant::now();
    let r = json(dib(out, &["oracle", "--check", "theorem1"]).join("oracle.json"));
    let elapsed = t.elapsed();
    let t1 = &r["theorem1"];
    let neg = &r["negative_control"];
    let all_visited = t1["subsets"].as_array().unwrap().iter().all(|s| s["visited_all"] == true);
    let passed = t1["passed"] == true
        && f(&t1["worst_test_risk"]) <= ORACLE_TOL
        && f(&neg["worst_test_risk"]) > NEGATIVE_CONTROL_MIN_RISK
        && all_visited
        && elapsed < THEOREM_BUDGET;
    Verdict {
        name: "oracle-erm",
        passed,
        detail: format!(
            "{} train subsets, every ERM visited {all_visited}, worst ERM test risk {:.2e} <= {ORACLE_TOL:e}, identity control {:.4} > {NEGATIVE_CONTROL_MIN_RISK}, {} < {}",
            t1["subsets"].as_array().unwrap().len(),
            f(&t1["worst_test_risk"]),
            f(&neg["worst_test_risk"]),
            secs(elapsed),
            secs(THEOREM_BUDGET)
        ),
    }
}

fn oracle_minimality(out: &Path) -> Verdict {
    let t = Instant::now();
    let r = json(dib(out, &["oracle", "--check", "prop2"]).join("oracle.json"));
    let elapsed = t.elapsed();
    let p = &r["proposition2"];
    let checks: Vec<String> = p["checks"].as_array().unwrap().iter().map(|c| format!("{}={}", c["name"].as_str().unwrap(), c["passed"])).collect();
    Verdict {
        name: "oracle-minimality",
        passed: p["passed"] == true && p["exhaustive"] == true && elapsed < PROP_BUDGET,
        detail: format!("{}, exhaustive {}, {} < {}", checks.join(" "), p["exhaustive"], secs(elapsed), secs(PROP_BUDGET)),
    }
}

fn v_info(spec: &FamilySpec, z: &dib_core::tensor::Tensor, y: &[usize], seed: u64) -> f64 {
    empirical_entropy(y) - empirical_v_entropy(spec, z, y, &OptimConfig::default(), seed).unwrap()
}

fn estimator_axioms() -> Verdict {
    let t = Instant::now();
    let (mut min_info, mut max_indep, mut worst_step) = (f64::INFINITY, 0.0f64, f64::NEG_INFINITY);
    let widths = [1, 4, 16, 64];
    let mut nested = [0.0; 4];
    for seed in 0..3 {
        let ds = make_prototype_dataset(200, 2, 16, 0.3, seed).unwrap();
        let x = ds.x(Split::Train);
        let y = ds.y(Split::Train);
        min_info = min_info.min(v_info(&FamilySpec::mlp(16, &[64], 2), &x, &y, seed));
        let noise = standard_normal(&mut rng_from(seed, 77), &[x.rows(), 2]);
        max_indep = max_indep.max(v_info(&FamilySpec::mlp(2, &[64], 2), &noise, &y, seed).abs());
        for (m, fam) in nested.iter_mut().zip(family_sweep(&FamilySpec::mlp(16, &[1], 2), &widths).unwrap()) {
            *m += empirical_v_entropy(&fam, &x, &y, &OptimConfig::default(), seed).unwrap() / 3.0;
        }
    }
    for w in nested.windows(2) {
        worst_step = worst_step.max(w[1] - w[0]);
    }
    let elapsed = t.elapsed();
    Verdict {
        name: "estimator-axioms",
        passed: min_info >= -AXIOM_TOL && max_indep < AXIOM_TOL && worst_step <= AXIOM_TOL && elapsed < AXIOM_BUDGET,
        detail: format!(
            "3 seeds: min info {min_info:.4} >= -{AXIOM_TOL}, max |info| on independent z {max_indep:.4} < {AXIOM_TOL}, train-fit widths {widths:?} worst increase {worst_step:.4} <= {AXIOM_TOL}, {} < {}",
            secs(elapsed),
            secs(AXIOM_BUDGET)
        ),
    }
}

fn estimator_vs_oracle() -> Verdict {
    let t = Instant::now();
    let symbols = [0, 0, 0, 1, 1, 2];
    let labels = [0, 0, 1, 1, 1, 0];
    let mut joint = vec![vec![0.0; 3]; 2];
    for (&z, &y) in symbols.iter().zip(&labels) {
        joint[y][z] += 1.0 / 6.0;
    }
    let mut worst = 0.0f64;
    for r in [0.5, 0.25, 0.1, 0.05] {
        let est = empirical_v_entropy(&FamilySpec::tabular(3, 2, r), &one_hot(&symbols, 3), &labels, &OptimConfig::default(), 0).unwrap();
        let exact = exact_v_entropy(&joint, &TabularFamily::grid(2, r, &[]).unwrap()).unwrap();
        worst = worst.max((est - exact).abs());
    }
    let elapsed = t.elapsed();
    Verdict {
        name: "estimator-vs-oracle",
        passed: worst < ESTIMATOR_TOL && elapsed < ESTIMATOR_BUDGET,
        detail: format!("6 points, resolutions 0.5..0.05, max |empirical - exact| {worst:.2e} < {ESTIMATOR_TOL:e}, {} < {}", secs(elapsed), secs(ESTIMATOR_BUDGET)),
    }
}

fn beta_sweep(out: &Path) -> (Verdict, Verdict) {
    let cfg = root().join("configs/distractor_sweep.toml");
    let t = Instant::now();
    let r = json(dib(out, &["--config", cfg.to_str().unwrap(), "sweep"]).join("sweep.json"));
    let elapsed = t.elapsed();
    let cells = r["summary"].as_array().unwrap();
    let betas: Vec<f64> = cells.iter().map(|c| f(&c["beta"])).collect();
    let min_info: Vec<f64> = cells.iter().map(|c| f(&c["min_info"])).collect();
    let gaps: Vec<f64> = cells.iter().map(|c| f(&c["worst_gap"])).collect();
    let monotone = min_info.windows(2).all(|w| w[1] <= w[0] + MINIMALITY_SLACK);
    let best = (0..gaps.len()).min_by(|&a, &b| gaps[a].total_cmp(&gaps[b])).unwrap();
    let zero = betas.iter().position(|&b| b == 0.0).unwrap();
    let large = (0..betas.len()).max_by(|&a, &b| betas[a].total_cmp(&betas[b])).unwrap();
    let sweep = Verdict {
        name: "beta-sweep",
        passed: monotone && gaps[best] < gaps[zero] && elapsed < SWEEP_BUDGET,
        detail: format!(
            "betas {betas:?} x {} seeds: mean minimality {} (slack {MINIMALITY_SLACK}), worst-ERM gap {} best beta {} {:.3} < beta 0 {:.3}, {} < {}",
            cells[0]["runs"],
            fmt_list(&min_info),
            fmt_list(&gaps),
            betas[best],
            gaps[best],
            gaps[zero],
            secs(elapsed),
            secs(SWEEP_BUDGET)
        ),
    };
    let file: toml::Value = toml::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    let chance = 1.0 / file["data"]["distractor_classes"].as_integer().unwrap() as f64;
    let acc: Vec<f64> = cells.iter().map(|c| f(&c["distractor_test_acc"])).collect();
    let decod = Verdict {
        name: "distractor-decodability",
        passed: acc[large] <= chance + LARGE_BETA_MAX_ABOVE_CHANCE && acc[zero] >= chance + ZERO_BETA_MIN_ABOVE_CHANCE,
        detail: format!(
            "chance {chance:.2}: beta {} acc {:.3} <= {:.2}, beta 0 acc {:.3} >= {:.2} (all betas {})",
            betas[large],
            acc[large],
            chance + LARGE_BETA_MAX_ABOVE_CHANCE,
            acc[zero],
            chance + ZERO_BETA_MIN_ABOVE_CHANCE,
            fmt_list(&acc)
        ),
    };
    (sweep, decod)
}

fn fmt_list(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", "))
}

fn base_expansion() -> Verdict {
    let digits = to_digits(627, 10, 4);
    let labels: Vec<usize> = (0..500).map(|i| (i * 7) % 10).collect();
    let plan = build_base_expansion(&labels, 10).unwrap();
    let mut seen = std::collections::HashSet::new();
    let round_trip = (0..500).all(|i| decode_index(&plan, i).unwrap() == plan.per_class_index[i] && seen.insert((labels[i], plan.row(i).to_vec())));
    Verdict {
        name: "base-expansion",
        passed: round_trip && digits == [0, 6, 2, 7],
        detail: format!("500 examples round trip and distinct {round_trip}, 627 -> {digits:?}"),
    }
}

fn pac_bound(out: &Path) -> Verdict {
    let t = Instant::now();
    let r = json(dib(out, &["oracle", "--check", "pac", "--m", "16", "--draws", "200", "--delta", "0.1"]).join("oracle.json"));
    let elapsed = t.elapsed();
    let p = &r["pac"];
    Verdict {
        name: "pac-bound",
        passed: f(&p["fraction_below"]) >= PAC_MIN_FRACTION && elapsed < PAC_BUDGET,
        detail: format!(
            "M {} draws {} delta {}: bound {:.4}, gap 0.9-quantile {:.4}, fraction below {:.3} >= {PAC_MIN_FRACTION}, {} < {}",
            p["m"],
            p["draws"],
            p["delta"],
            f(&p["bound"]),
            f(&p["gap_quantile"]),
            f(&p["fraction_below"]),
            secs(elapsed),
            secs(PAC_BUDGET)
        ),
    }
}

fn probe_correlation(out: &Path) -> Verdict {
    let cfg = root().join("configs/probe_zoo.toml");
    let t = Instant::now();
    let (mut conc, mut disc, mut taus, mut kept) = (0, 0, vec![], vec![]);
    for seed in PROBE_SEEDS {
        let s = seed.to_string();
        let r = json(dib(out, &["--seed", &s, "--config", cfg.to_str().unwrap(), "probe"]).join("report.json"));
        let reports = r["reports"].as_array().unwrap();
        let probe: Vec<f64> = reports.iter().map(|m| f(&m["probe"])).collect();
        let gap: Vec<f64> = reports.iter().map(|m| f(&m["gap_ll"])).collect();
        let (c, d) = pair_signs(&probe, &gap).unwrap();
        conc += c;
        disc += d;
        taus.push(f(&r["tau_logloss"]["tau"]));
        kept.push(reports.len());
    }
    let elapsed = t.elapsed();
    let mean_tau = taus.iter().sum::<f64>() / taus.len() as f64;
    let p = sign_test(conc, disc).unwrap();
    Verdict {
        name: "probe-correlation",
        passed: mean_tau > 0.0 && p < PROBE_P && elapsed < PROBE_BUDGET,
        detail: format!(
            "zoo seeds {PROBE_SEEDS:?}, models kept {kept:?}, tau_logloss {} mean {mean_tau:.3} > 0, pooled pairs {conc}/{disc} sign test p {p:.2e} < {PROBE_P}, {} < {}",
            fmt_list(&taus),
            secs(elapsed),
            secs(PROBE_BUDGET)
        ),
    }
}

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

/// Runs a command, removes its run directory and runs it again; the second
/// run may use a different worker count.
fn rerun_identical(out: &Path, args: &[&str], workers: &str) -> bool {
    let dir = dib(out, args);
    let first = read_tree(&dir);
    std::fs::remove_dir_all(&dir).unwrap();
    let mut again = vec!["--workers", workers];
    again.extend_from_slice(args);
    let dir2 = dib(out, &again);
    dir == dir2 && first == read_tree(&dir2)
}

fn determinism(out: &Path) -> Verdict {
    let train = ["--seed", "5", "train", "--n-per-class", "30", "--epochs", "3", "--k", "2", "--beta", "1"];
    let ckpt = dib(out, &train).join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap().to_string();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("data-gen", vec!["--seed", "5", "data-gen", "--n-per-class", "30", "--distractor-classes", "3"]),
        ("train", train.to_vec()),
        ("downstream", vec!["downstream", "--checkpoint", &ckpt, "--gamma", "0.1", "--epochs", "3"]),
        ("probe", vec!["probe", "--n-per-class", "30", "--zoo-size", "5", "--zoo-epochs", "3", "--threshold", "10"]),
        ("oracle", vec!["oracle", "--check", "theorem1,prop2,pac", "--draws", "20"]),
        ("sweep", vec!["sweep", "--beta", "0,1", "--seeds", "2", "--family", "8", "--distractor-classes", "2", "--n-per-class", "12", "--epochs", "2", "--k", "2"]),
    ];
    let results: Vec<(&str, bool)> = commands.iter().map(|(name, args)| (*name, rerun_identical(out, args, "2"))).collect();
    Verdict {
        name: "determinism",
        passed: results.iter().all(|r| r.1),
        detail: format!(
            "bit-identical run directories on rerun (second run with 2 workers): {}",
            results.iter().map(|(n, ok)| format!("{n}={ok}")).collect::<Vec<_>>().join(" ")
        ),
    }
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let total = Instant::now();
    let mut verdicts = vec![gradient_suite(), oracle_erms(out), oracle_minimality(out), estimator_axioms(), estimator_vs_oracle()];
    let (sweep, decod) = beta_sweep(out);
    verdicts.extend([sweep, decod, base_expansion(), pac_bound(out), probe_correlation(out), determinism(out)]);
    let mut unexpected = vec![];
    for (i, v) in verdicts.iter().enumerate() {
        let tag = match (v.passed, KNOWN_SHORTFALLS.contains(&v.name)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known shortfall)",
            (false, false) => {
                unexpected.push(v.name);
                "FAIL"
            }
        };
        println!("[{tag}] {:>2} {}: {}", i + 1, v.name, v.detail);
    }
    let passed = verdicts.iter().filter(|v| v.passed).count();
    println!("acceptance: {passed}/{} passed in {}", verdicts.len(), secs(total.elapsed()));
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
