use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dib_core::checkpoint::Checkpoint;
use dib_core::data::Dataset;
use dib_core::dib::{fit_on_representation, train_encoder, ErmMode, RunReport};
use dib_core::models::{Encoder, FamilySpec};
use dib_core::optim::OptimConfig;
use dib_core::oracle::{
    construct_z_star, exact_pac_gap, standard_candidates, verify_proposition2, verify_theorem1, Channel, FiniteProblem, PacReport,
    Proposition2Report, TabularFamily, Theorem1Report,
};
use dib_core::probes::{make_zoo, probe_sweep, train_zoo, ZooModel};
use dib_core::rng::derive_seed;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{run_dir, write_toml, Check, DataConfig, DownstreamConfig, ErmModes, FileConfig, Targets, TrainConfig};
use crate::{Command, Globals};

pub fn run(g: &Globals, file: &FileConfig, command: &Command) -> Result<()> {
    let dir = match command {
        Command::Train(_) => train(g, &file.data, &file.train)?,
        Command::Downstream(_) => downstream(g, &file.data, &file.downstream)?,
        Command::Probe(_) => probe(g, file)?,
        Command::Oracle(_) => oracle(g, file)?,
        Command::Sweep(_) => sweep(g, file)?,
        Command::DataGen(_) => data_gen(g, &file.data)?,
    };
    println!("{}", dir.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| path.display().to_string())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn data_gen(g: &Globals, data: &DataConfig) -> Result<PathBuf> {
    let ds = data.dataset(g.seed)?;
    let (dir, _) = run_dir(&g.out, "data-gen", data, g.seed)?;
    ds.save_csv(&dir.join("dataset.csv"))?;
    write_toml(&dir.join("config.toml"), &FileConfig { seed: Some(g.seed), data: data.clone(), ..Default::default() })?;
    Ok(dir)
}

fn train_one(ds: &Dataset, train: &TrainConfig, seed: u64) -> Result<(Checkpoint, RunReport)> {
    let (model, report) = train_encoder(ds, &train.encoder_config(ds.dim()), &train.dib_config(ds.n_classes), &train.optim, seed)?;
    Ok((model.checkpoint(), report))
}

fn train(g: &Globals, data: &DataConfig, train: &TrainConfig) -> Result<PathBuf> {
    let ds = data.dataset(g.seed)?;
    let (dir, hash) = run_dir(&g.out, "train", &(data, train), g.seed)?;
    let (mut ck, mut report) = train_one(&ds, train, g.seed)?;
    let ck_path = dir.join("model.ckpt");
    ck.set_meta("seed", g.seed);
    ck.set_meta("config_hash", &hash);
    ck.save(&ck_path)?;
    report.config_hash = hash;
    report.checkpoint_path = Some(ck_path.display().to_string());
    report.write_json(&dir.join("report.json"))?;
    report.write_csv(&dir.join("epochs.csv"))?;
    ds.save_csv(&dir.join("dataset.csv"))?;
    write_toml(&dir.join("config.toml"), &FileConfig { seed: Some(g.seed), data: data.clone(), train: train.clone(), ..Default::default() })?;
    Ok(dir)
}

#[derive(Clone, Debug, Serialize)]
struct DownstreamRow {
    mode: String,
    gamma: f64,
    family: String,
    train_risk: f64,
    test_risk: f64,
    gap: f64,
    train_acc: f64,
    test_acc: f64,
}

fn erm_modes(mode: ErmModes, gammas: &[f64]) -> Vec<ErmMode> {
    let mut out = vec![];
    if matches!(mode, ErmModes::Avg | ErmModes::Both) {
        out.push(ErmMode::Average);
    }
    if matches!(mode, ErmModes::Worst | ErmModes::Both) {
        out.extend(gammas.iter().map(|&gamma| ErmMode::Worst { gamma }));
    }
    out
}

fn targets_of(ds: &Dataset, targets: Targets) -> Result<(Vec<usize>, usize)> {
    match targets {
        Targets::Labels => Ok((ds.labels.clone(), ds.n_classes)),
        Targets::Distractor => match &ds.distractor_labels {
            Some(d) => Ok((d.clone(), ds.n_distractor_classes)),
            None => bail!(dib_core::DibError::Config("dataset has no distractor labels".into())),
        },
    }
}

fn hidden_tag(hidden: &[usize]) -> String {
    hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x")
}

fn downstream_rows(
    encoder: &Encoder,
    ds: &Dataset,
    targets: Targets,
    hidden: &[usize],
    modes: &[ErmMode],
    budget: &OptimConfig,
    seed: u64,
) -> Result<Vec<DownstreamRow>> {
    let (t, n) = targets_of(ds, targets)?;
    let family = FamilySpec::mlp(encoder.z_dim, hidden, n);
    modes
        .par_iter()
        .enumerate()
        .map(|(i, &mode)| {
            let r = fit_on_representation(encoder, &family, ds, &t, mode, budget, derive_seed(seed, i as u64))?;
            let (name, gamma) = match mode {
                ErmMode::Average => ("avg", 0.0),
                ErmMode::Worst { gamma } => ("worst", gamma),
            };
            Ok(DownstreamRow {
                mode: name.into(),
                gamma,
                family: hidden_tag(hidden),
                train_risk: r.train_risk,
                test_risk: r.test_risk,
                gap: r.gap(),
                train_acc: r.train_acc,
                test_acc: r.test_acc,
            })
        })
        .collect()
}

fn downstream(g: &Globals, data: &DataConfig, cfg: &DownstreamConfig) -> Result<PathBuf> {
    let Some(ck_path) = &cfg.checkpoint else {
        bail!(dib_core::DibError::Config("downstream needs --checkpoint".into()));
    };
    let ck = Checkpoint::load(ck_path)?;
    let encoder = ck.encoder("encoder")?;
    // A training run stores its dataset next to the checkpoint.
    let beside = ck_path.parent().map(|p| p.join("dataset.csv"));
    let ds = match beside {
        Some(p) if data.path.is_none() && p.exists() => Dataset::load_csv(&p)?,
        _ => data.dataset(g.seed)?,
    };
    if ds.dim() != encoder.net.input_dim() {
        bail!(dib_core::DibError::Dimension(format!("encoder expects {} inputs, dataset has {}", encoder.net.input_dim(), ds.dim())));
    }
    let (dir, _) = run_dir(&g.out, "downstream", &(data, cfg), g.seed)?;
    let rows = downstream_rows(&encoder, &ds, cfg.targets, &cfg.family_hidden, &erm_modes(cfg.mode, &cfg.gammas), &cfg.optim, g.seed)?;
    write_csv(&dir.join("downstream.csv"), &rows)?;
    write_json(&dir.join("report.json"), &rows)?;
    write_toml(
        &dir.join("config.toml"),
        &FileConfig { seed: Some(g.seed), data: data.clone(), downstream: cfg.clone(), ..Default::default() },
    )?;
    Ok(dir)
}

fn load_zoo(dir: &Path) -> Result<Vec<ZooModel>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ckpt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!(dib_core::DibError::Config(format!("no .ckpt files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(ZooModel::from_checkpoint(&id, &Checkpoint::load(p)?)?)
        })
        .collect()
}

fn probe(g: &Globals, file: &FileConfig) -> Result<PathBuf> {
    let cfg = &file.probe;
    let ds = file.data.dataset(g.seed)?;
    let (dir, _) = run_dir(&g.out, "probe", &(&file.data, cfg), g.seed)?;
    let models = match &cfg.zoo {
        Some(zoo) => load_zoo(zoo)?,
        None => {
            let members = make_zoo(&cfg.zoo_spec, ds.dim(), ds.n_classes, g.seed)?;
            let models = train_zoo(&ds, &members, g.seed)?;
            let zoo_dir = dir.join("zoo");
            std::fs::create_dir_all(&zoo_dir)?;
            for m in &models {
                let mut ck = Checkpoint::new();
                ck.add_encoder("encoder", &m.encoder);
                ck.add_classifier("suff_head", &m.head);
                ck.save(&zoo_dir.join(format!("{}.ckpt", m.id)))?;
            }
            models
        }
    };
    let sweep = probe_sweep(&models, &ds, &cfg.settings, derive_seed(g.seed, 0x9B0))?;
    sweep.write_csv(&dir.join("probe.csv"))?;
    sweep.write_json(&dir.join("report.json"))?;
    write_toml(&dir.join("config.toml"), &FileConfig { seed: Some(g.seed), data: file.data.clone(), probe: cfg.clone(), ..Default::default() })?;
    Ok(dir)
}

#[derive(Debug, Serialize)]
struct OracleReport {
    passed: bool,
    theorem1: Option<Theorem1Report>,
    negative_control: Option<Theorem1Report>,
    proposition2: Option<Proposition2Report>,
    pac: Option<PacReport>,
}

fn oracle(g: &Globals, file: &FileConfig) -> Result<PathBuf> {
    let cfg = &file.oracle;
    let problem = match &cfg.problem {
        Some(p) => FiniteProblem::load(p)?,
        None => FiniteProblem::uniform_blocks(8, 2, 4)?,
    };
    let mut candidates = standard_candidates(&problem)?;
    if let Some(pred) = &cfg.predictor {
        candidates[0].1 = construct_z_star(&problem, pred)?;
    }
    let star = candidates[0].1.clone();
    let marginal = [problem.label_marginal()];
    let large = TabularFamily::grid(problem.y_size, cfg.resolution, &marginal)?;
    let (dir, _) = run_dir(&g.out, "oracle", &(&problem, cfg), g.seed)?;
    let mut report = OracleReport { passed: true, theorem1: None, negative_control: None, proposition2: None, pac: None };
    if cfg.checks.contains(&Check::Theorem1) {
        let subsets = problem.one_per_class_subsets();
        let t = verify_theorem1(&problem, &star, &large, &subsets, false)?;
        let n = verify_theorem1(&problem, &Channel::identity(problem.x_size)?, &large, &subsets, true)?;
        report.passed &= t.passed && n.passed;
        report.theorem1 = Some(t);
        report.negative_control = Some(n);
    }
    if cfg.checks.contains(&Check::Prop2) {
        let small = TabularFamily::grid(problem.y_size, cfg.small_resolution, &marginal)?;
        let p = verify_proposition2(&problem, &candidates, &small, &large, "z_star")?;
        report.passed &= p.passed;
        report.proposition2 = Some(p);
    }
    if cfg.checks.contains(&Check::Pac) {
        let p = exact_pac_gap(&problem, &star, &large, cfg.m, cfg.draws, cfg.beta, cfg.k, cfg.delta, g.seed)?;
        report.passed &= p.passed;
        report.pac = Some(p);
    }
    write_json(&dir.join("oracle.json"), &report)?;
    write_toml(&dir.join("config.toml"), &FileConfig { seed: Some(g.seed), oracle: cfg.clone(), ..Default::default() })?;
    if !report.passed {
        eprintln!("oracle: at least one check failed, see {}", dir.join("oracle.json").display());
    }
    Ok(dir)
}

#[derive(Clone, Debug, Serialize)]
struct SweepRow {
    beta: f64,
    seed: u64,
    family: usize,
    min_info: f64,
    suff_info: f64,
    avg_train_risk: f64,
    avg_test_risk: f64,
    worst_train_risk: f64,
    worst_test_risk: f64,
    worst_gap: f64,
    distractor_test_acc: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
struct SweepCell {
    beta: f64,
    family: usize,
    runs: usize,
    min_info: f64,
    worst_gap: f64,
    avg_test_risk: f64,
    distractor_test_acc: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn sweep_run(ds: &Dataset, train: &TrainConfig, beta: f64, families: &[usize], gamma: f64, budget: &OptimConfig, seed: u64) -> Result<Vec<SweepRow>> {
    let cfg = TrainConfig { beta, ..train.clone() };
    let (model, report) = train_encoder(ds, &cfg.encoder_config(ds.dim()), &cfg.dib_config(ds.n_classes), &cfg.optim, seed)?;
    let enc = &model.encoder;
    families
        .iter()
        .map(|&w| {
            let fs = derive_seed(seed, 0xF000 + w as u64);
            let rows = downstream_rows(enc, ds, Targets::Labels, &[w], &[ErmMode::Average, ErmMode::Worst { gamma }], budget, fs)?;
            let distractor = match ds.distractor_labels {
                Some(_) => Some(downstream_rows(enc, ds, Targets::Distractor, &[w], &[ErmMode::Average], budget, derive_seed(fs, 1))?[0].test_acc),
                None => None,
            };
            Ok(SweepRow {
                beta,
                seed,
                family: w,
                min_info: report.min_info,
                suff_info: report.suff_info,
                avg_train_risk: rows[0].train_risk,
                avg_test_risk: rows[0].test_risk,
                worst_train_risk: rows[1].train_risk,
                worst_test_risk: rows[1].test_risk,
                worst_gap: rows[1].gap,
                distractor_test_acc: distractor,
            })
        })
        .collect()
}

fn sweep(g: &Globals, file: &FileConfig) -> Result<PathBuf> {
    let s = &file.sweep;
    if s.betas.is_empty() || s.seeds == 0 || s.families.is_empty() {
        bail!(dib_core::DibError::Config("sweep needs at least one beta, seed and family".into()));
    }
    let (dir, _) = run_dir(&g.out, "sweep", &(&file.data, &file.train, s), g.seed)?;
    let seeds: Vec<u64> = (0..s.seeds as u64).map(|i| g.seed + i).collect();
    let datasets: Vec<Dataset> = seeds.iter().map(|&sd| file.data.dataset(sd)).collect::<Result<_, _>>()?;
    let grid: Vec<(f64, usize)> = s.betas.iter().flat_map(|&b| (0..seeds.len()).map(move |i| (b, i))).collect();
    let rows: Vec<SweepRow> = grid
        .par_iter()
        .map(|&(beta, i)| sweep_run(&datasets[i], &file.train, beta, &s.families, s.gamma, &s.downstream_optim, seeds[i]))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut cells = vec![];
    for &beta in &s.betas {
        for &family in &s.families {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.beta == beta && r.family == family).collect();
            let distractor = sel.iter().map(|r| r.distractor_test_acc).collect::<Option<Vec<f64>>>();
            cells.push(SweepCell {
                beta,
                family,
                runs: sel.len(),
                min_info: mean(sel.iter().map(|r| r.min_info)),
                worst_gap: mean(sel.iter().map(|r| r.worst_gap)),
                avg_test_risk: mean(sel.iter().map(|r| r.avg_test_risk)),
                distractor_test_acc: distractor.map(|d| mean(d.into_iter())),
            });
        }
    }
    write_csv(&dir.join("sweep.csv"), &rows)?;
    write_json(&dir.join("sweep.json"), &serde_json::json!({ "runs": rows, "summary": cells }))?;
    write_toml(
        &dir.join("config.toml"),
        &FileConfig { seed: Some(g.seed), data: file.data.clone(), train: file.train.clone(), sweep: s.clone(), ..Default::default() },
    )?;
    Ok(dir)
}

