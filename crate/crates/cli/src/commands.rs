use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use costdet::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use costdet::detector::{DetectorConfig, InferConfig};
use costdet::evaluator::{
    compare_cost_vs_threshold, comparison_svg, evaluate, metrics_csv, sweep_csv, threshold_grid,
    threshold_sweep, EvalConfig, FpDenominator, MetricsReport,
};
use costdet::experiment::{metrics_table, run_experiment, ExperimentConfig, ExperimentResult};
use costdet::losses::CostConfig;
use costdet::syndata::{
    generate, load_dataset, save_dataset, split_of, GenConfig, Split, SyntheticSlice,
};
use costdet::trainer::{train_with, TrainConfig};

use crate::args::*;

/// A problem with the invocation itself (bad path, bad flag value).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(usage(format!(
            "config file {} does not exist",
            path.display()
        )));
    }
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&s).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

fn load_data(dir: &Path) -> Result<Vec<SyntheticSlice>> {
    if !dir.join("manifest.json").is_file() {
        return Err(usage(format!(
            "no dataset at {} (manifest.json missing)",
            dir.display()
        )));
    }
    Ok(load_dataset(dir)?)
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(usage(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    Ok(load_checkpoint(path)?)
}

fn select(data: &[SyntheticSlice], split: SplitArg) -> Result<Vec<&SyntheticSlice>> {
    let out = match split {
        SplitArg::Train => split_of(data, Split::Train),
        SplitArg::Val => split_of(data, Split::Val),
        SplitArg::Test => split_of(data, Split::Test),
        SplitArg::All => data.iter().collect(),
    };
    if out.is_empty() {
        return Err(costdet::Error::EmptySplit(format!("{split:?} split has no slices")).into());
    }
    Ok(out)
}

fn eval_config(a: &EvalArgs) -> Result<EvalConfig> {
    if !a.threshold.is_finite() {
        return Err(usage("--threshold must be finite"));
    }
    Ok(EvalConfig {
        infer: InferConfig {
            threshold: a.threshold,
            max_det: a.max_det,
            ..InferConfig::default()
        },
        fp_denominator: match a.fp_denominator {
            FpArg::All => FpDenominator::All,
            FpArg::PositiveOnly => FpDenominator::PositiveOnly,
        },
        ..EvalConfig::default()
    })
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("bad grid {s:?}; expected start:stop:step")))?;
    match nums.as_slice() {
        [a, b, c] => Ok(threshold_grid(*a, *b, *c)?),
        _ => Err(usage(format!("bad grid {s:?}; expected start:stop:step"))),
    }
}

fn apply_costs(mut c: CostConfig, a: &CostArgs) -> CostConfig {
    if let Some(v) = a.alpha_lesion {
        c.alpha_lesion = v;
    }
    if let Some(v) = a.beta_lesion {
        c.beta_lesion = v;
    }
    if let Some(v) = a.alpha_slice {
        c.alpha_slice = v;
    }
    if let Some(v) = a.beta_slice {
        c.beta_slice = v;
    }
    if a.use_slice_loss {
        c.use_slice_loss = true;
    }
    c
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut cfg: GenConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    if let Some(n) = a.n {
        cfg.n_slices = n;
    }
    if let Some(p) = a.positive_fraction {
        cfg.positive_fraction = p;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let slices = generate(&cfg)?;
    let m = save_dataset(&slices, &a.out)?;
    write(&a.out.join("gen_config.json"), to_json(&cfg))?;
    println!(
        "wrote {} slices to {} (train {}, val {}, test {}; {} positive)",
        m.slice_count,
        a.out.display(),
        m.split_counts.train,
        m.split_counts.val,
        m.split_counts.test,
        m.positive_count
    );
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let mut base: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    base.cost = apply_costs(base.cost, &a.cost);
    if let Some(e) = a.epochs {
        base.epochs = e;
    }
    if let Some(lr) = a.lr {
        base.lr = lr;
    }
    if a.augment {
        base.augment = true;
    }
    if let Some(k) = a.checkpoint_every {
        base.checkpoint_every = k;
    }
    base.eval.infer.threshold = a.threshold;
    base.eval.infer.max_det = a.max_det;
    if let Some(c) = data.first().map(|s| s.channels) {
        base.detector.channels = c;
    }
    base.validate_config()?;
    let seeds = if a.seeds.is_empty() {
        vec![base.seed]
    } else {
        a.seeds.clone()
    };
    let tag = base.cost.tag();

    for seed in seeds {
        let cfg = TrainConfig {
            seed,
            ..base.clone()
        };
        let dir = a.out.join(format!("seed_{seed}")).join(&tag);
        let every = cfg.checkpoint_every;
        let (params, log) = train_with(&data, &cfg, |epoch, p| {
            if every > 0 && epoch % every == 0 && epoch < cfg.epochs {
                save_checkpoint(
                    &Checkpoint::heads(p.clone(), cfg.cost),
                    &dir.join(format!("model_epoch{epoch:04}.ckpt")),
                )?;
            }
            Ok(())
        })?;
        let path = dir.join("model.ckpt");
        let sha = save_checkpoint(&Checkpoint::heads(params, cfg.cost), &path)?;
        write(&dir.join("train_log.csv"), log.to_csv())?;
        write(&dir.join("train_config.json"), to_json(&cfg))?;
        let last = log.rows.last().expect("epochs >= 1");
        eprintln!(
            "seed {seed}: {} updates in {:.1}s",
            log.updates, log.wall_time_secs
        );
        println!(
            "{tag} seed {seed}: final mean loss {:.6}; checkpoint {} sha256 {sha}",
            last.train.total,
            path.display()
        );
    }
    Ok(())
}

fn column_name(ck: &Checkpoint, path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    if stem == "model" {
        format!("{} (seed {})", ck.tag(), ck.seed)
    } else {
        stem.to_string()
    }
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let slices = select(&data, a.eval.split)?;
    let cfg = eval_config(&a.eval)?;
    let mut columns: Vec<(String, MetricsReport)> = Vec::new();
    for path in &a.checkpoints {
        let ck = load_ckpt(path)?;
        let r = evaluate(&ck.model, &slices, &cfg)?;
        columns.push((column_name(&ck, path), r));
    }
    let table = metrics_table(
        &format!("{:?} split, threshold {}", a.eval.split, a.eval.threshold),
        &columns,
    );
    write(&a.out.join("table.md"), &table)?;
    write(&a.out.join("metrics.json"), to_json(&columns))?;
    write(
        &a.out.join("metrics.csv"),
        metrics_csv(&columns.iter().map(|c| &c.1).collect::<Vec<_>>()),
    )?;
    print!("{table}");
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let slices = select(&data, a.eval.split)?;
    let cfg = eval_config(&a.eval)?;
    let grid = parse_grid(&a.grid)?;
    let ck = load_ckpt(&a.checkpoint)?;
    let rows = threshold_sweep(&ck.model, &slices, &grid, &cfg)?;
    write(&a.out.join("sweep.csv"), sweep_csv(&rows))?;
    write(&a.out.join("sweep.json"), to_json(&rows))?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}

pub fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let slices = select(&data, a.eval.split)?;
    let cfg = eval_config(&a.eval)?;
    let grid = parse_grid(&a.grid)?;
    let base = load_ckpt(&a.baseline)?;
    let cost = load_ckpt(&a.cost)?;
    let rep = compare_cost_vs_threshold(&base.model, &cost.model, &slices, &grid, &cfg)?;
    write(&a.out.join("compare.json"), to_json(&rep))?;
    write(&a.out.join("compare.svg"), comparison_svg(&rep))?;
    println!("{}", rep.summary());
    Ok(())
}

pub fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            if !p.is_file() {
                return Err(usage(format!("config file {} does not exist", p.display())));
            }
            ExperimentConfig::load(p)?
        }
        None => ExperimentConfig::default(),
    };
    if !a.seeds.is_empty() {
        cfg.seeds = a.seeds.clone();
    }
    cfg.validate()?;
    let res = run_experiment(&cfg, Some(&a.out))?;
    print_report(&cfg, &res);
    Ok(())
}

fn print_report(cfg: &ExperimentConfig, res: &ExperimentResult) {
    for t in &cfg.tables {
        println!("{}", res.table_markdown(t));
    }
    for c in &res.comparisons {
        println!("seed {} {}: {}", c.seed, c.tag, c.report.summary());
    }
}

pub fn cmd_report(a: &ReportArgs) -> Result<()> {
    let dir: &PathBuf = &a.dir;
    let cfg_path = dir.join("config.json");
    let sum_path = dir.join("summary.json");
    if !cfg_path.is_file() || !sum_path.is_file() {
        return Err(usage(format!(
            "{} is not an experiment directory",
            dir.display()
        )));
    }
    let cfg = ExperimentConfig::load(&cfg_path)?;
    let res: ExperimentResult = read_json(&sum_path)?;
    let mut md = String::new();
    for t in &cfg.tables {
        md.push_str(&res.table_markdown(t));
        md.push('\n');
    }
    for c in &res.comparisons {
        md.push_str(&format!(
            "- seed {} {}: {}\n",
            c.seed,
            c.tag,
            c.report.summary()
        ));
    }
    write(&dir.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}

pub fn cmd_oracle(a: &OracleArgs) -> Result<()> {
    let sha = save_checkpoint(&Checkpoint::oracle(&DetectorConfig::default()), &a.out)?;
    println!("oracle checkpoint {} sha256 {sha}", a.out.display());
    Ok(())
}
