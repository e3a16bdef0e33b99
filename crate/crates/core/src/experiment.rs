//! Multi-seed experiments over several cost regimes, with metric tables and
//! cost-vs-threshold comparisons written to an output directory.
//!
//! Layout of the output directory:
//!
//! ```text
//! config.json
//! seed_<s>/<tag>/model.ckpt, train_log.csv, metrics.json, metrics.csv
//! seed_<s>/compare_<tag>.json, compare_<tag>.svg
//! table_<name>.md, table_<name>.csv     medians over seeds
//! summary.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::detector::Model;
use crate::error::{Error, Result};
use crate::evaluator::{
    compare_cost_vs_threshold, comparison_svg, evaluate, metrics_csv, threshold_grid,
    ComparisonReport, MetricsReport,
};
use crate::losses::CostConfig;
use crate::syndata::{generate, load_dataset, split_of, GenConfig, Split, SyntheticSlice};
use crate::trainer::{train, TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Synthetic data regenerated per seed (`seed` is replaced by the run seed).
    Generate(GenConfig),
    /// A saved dataset shared by every seed.
    Path { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub title: String,
    pub regimes: Vec<CostConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub train: TrainConfig,
    pub tables: Vec<TableSpec>,
    /// Tag of the model swept over thresholds in comparisons.
    pub baseline: String,
    /// Tags of cost-trained models compared against the swept baseline.
    pub compare: Vec<String>,
    pub sweep: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Generate(GenConfig::default()),
            train: benchmark_train(),
            tables: default_tables(),
            baseline: CostConfig::default().tag(),
            compare: vec![CostConfig::lesion(3.0, 1.0).tag()],
            sweep: default_sweep(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// Training settings for the synthetic benchmark. The heads see fixed features
/// and only a few thousand updates, so they need a far larger step than the
/// per-run default.
pub fn benchmark_train() -> TrainConfig {
    TrainConfig {
        epochs: 60,
        lr: 0.1,
        validate: false,
        ..TrainConfig::default()
    }
}

pub fn default_sweep() -> Vec<f64> {
    threshold_grid(0.05, 0.95, 0.05).expect("static grid")
}

/// Lesion-cost, slice-cost and joint-cost tables, each with the three
/// regimes `(1,1)`, `(3,1)`, `(1,3)`.
pub fn default_tables() -> Vec<TableSpec> {
    let w = [(1.0, 1.0), (3.0, 1.0), (1.0, 3.0)];
    vec![
        TableSpec {
            name: "lesion".into(),
            title: "Lesion-level costs".into(),
            regimes: w.iter().map(|&(a, b)| CostConfig::lesion(a, b)).collect(),
        },
        TableSpec {
            name: "slice".into(),
            title: "Slice-level costs, lesion costs (1,1)".into(),
            regimes: w
                .iter()
                .map(|&(a, b)| CostConfig::default().with_slice(a, b))
                .collect(),
        },
        TableSpec {
            name: "joint".into(),
            title: "Equal costs at both levels".into(),
            regimes: w
                .iter()
                .map(|&(a, b)| CostConfig::lesion(a, b).with_slice(a, b))
                .collect(),
        },
    ]
}

impl ExperimentConfig {
    /// Distinct regimes across all tables, in first-appearance order.
    pub fn regimes(&self) -> Vec<CostConfig> {
        let mut out: Vec<CostConfig> = Vec::new();
        for t in &self.tables {
            for r in &t.regimes {
                if !out.iter().any(|o| o.tag() == r.tag()) {
                    out.push(*r);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if let DataSource::Generate(g) = &self.data {
            g.validate()?;
        }
        let mut probe = self.train.clone();
        probe.cost = CostConfig::default();
        probe.validate_config()?;
        for r in self.regimes() {
            r.validate()?;
        }
        crate::evaluator::check_thresholds(&self.sweep)?;
        let tags: Vec<String> = self.regimes().iter().map(CostConfig::tag).collect();
        for t in self.compare.iter().chain(std::iter::once(&self.baseline)) {
            if !self.compare.is_empty() && !tags.contains(t) {
                return Err(Error::Config(format!(
                    "compared regime {t} is not trained by any table"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("experiment config: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// The dataset used for `seed`.
    pub fn dataset(&self, seed: u64) -> Result<Vec<SyntheticSlice>> {
        match &self.data {
            DataSource::Generate(g) => generate(&GenConfig { seed, ..g.clone() }),
            DataSource::Path { path } => load_dataset(path),
        }
    }
}

/// One trained model evaluated on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub tag: String,
    pub cost: CostConfig,
    pub test: MetricsReport,
    pub checkpoint_sha256: Option<String>,
    #[serde(skip)]
    pub log: Option<TrainLog>,
    #[serde(skip)]
    pub model: Option<Model>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub tag: String,
    pub report: ComparisonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub runs: Vec<RunResult>,
    pub comparisons: Vec<SeedComparison>,
}

/// Median of the finite values, NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub type MetricFn = fn(&MetricsReport) -> f64;

/// Row labels and accessors of the metric tables.
pub const TABLE_ROWS: [(&str, MetricFn); 5] = [
    ("Lesion-level FP", |r| r.lesion_fp_per_slice),
    ("Lesion-level FNR", |r| r.lesion_fnr),
    ("Slice-level FPR", |r| r.slice_fpr),
    ("Slice-level FNR", |r| r.slice_fnr),
    ("ACC", |r| r.slice_acc),
];

impl ExperimentResult {
    pub fn runs_for(&self, tag: &str) -> Vec<&RunResult> {
        self.runs.iter().filter(|r| r.tag == tag).collect()
    }

    /// Median over seeds of a metric for one regime.
    pub fn median_metric(&self, tag: &str, f: fn(&MetricsReport) -> f64) -> f64 {
        median(
            &self
                .runs_for(tag)
                .iter()
                .map(|r| f(&r.test))
                .collect::<Vec<_>>(),
        )
    }

    /// `rows × regimes` medians in the order of [`TABLE_ROWS`].
    pub fn table_values(&self, spec: &TableSpec) -> Vec<Vec<f64>> {
        TABLE_ROWS
            .iter()
            .map(|(_, f)| {
                spec.regimes
                    .iter()
                    .map(|c| self.median_metric(&c.tag(), *f))
                    .collect()
            })
            .collect()
    }

    pub fn table_markdown(&self, spec: &TableSpec) -> String {
        let n = self
            .runs
            .iter()
            .map(|r| r.seed)
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        let headers: Vec<String> = spec.regimes.iter().map(regime_label).collect();
        render_markdown(
            &format!("{} (median over {n} seeds)", spec.title),
            &headers,
            &self.table_values(spec),
        )
    }

    pub fn table_csv(&self, spec: &TableSpec) -> String {
        let mut s = String::from("metric");
        for c in &spec.regimes {
            s.push(',');
            s.push_str(&c.tag());
        }
        s.push('\n');
        for ((label, _), vals) in TABLE_ROWS.iter().zip(self.table_values(spec)) {
            s.push_str(label);
            for v in vals {
                s.push(',');
                s.push_str(&fmt4(v));
            }
            s.push('\n');
        }
        s
    }
}

fn render_markdown(title: &str, headers: &[String], values: &[Vec<f64>]) -> String {
    let mut s = format!("### {title}\n\n| |");
    for h in headers {
        s.push_str(&format!(" {h} |"));
    }
    s.push('\n');
    s.push_str(&"|---".repeat(headers.len() + 1));
    s.push_str("|\n");
    for ((label, _), vals) in TABLE_ROWS.iter().zip(values) {
        s.push_str(&format!("| {label} |"));
        for v in vals {
            s.push_str(&format!(" {} |", fmt4(*v)));
        }
        s.push('\n');
    }
    s
}

/// Metric table with one column per named report, rows as in [`TABLE_ROWS`].
pub fn metrics_table(title: &str, columns: &[(String, MetricsReport)]) -> String {
    let headers: Vec<String> = columns.iter().map(|c| c.0.clone()).collect();
    let values: Vec<Vec<f64>> = TABLE_ROWS
        .iter()
        .map(|(_, f)| columns.iter().map(|c| f(&c.1)).collect())
        .collect();
    render_markdown(title, &headers, &values)
}

fn fmt4(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.4}")
    }
}

pub fn regime_label(c: &CostConfig) -> String {
    let mut s = format!("α_lesion={}, β_lesion={}", c.alpha_lesion, c.beta_lesion);
    if c.use_slice_loss {
        s.push_str(&format!(
            "; α_slice={}, β_slice={}",
            c.alpha_slice, c.beta_slice
        ));
    }
    s
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

/// Trains one model per `(seed, regime)`, evaluates each on the test split
/// and builds the configured comparisons. When `out` is given, every
/// artifact is written there. Runs are independent and execute in parallel;
/// results are ordered by seed, then regime.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let regimes = cfg.regimes();
    let datasets: Vec<Vec<SyntheticSlice>> = cfg
        .seeds
        .iter()
        .map(|&s| cfg.dataset(s))
        .collect::<Result<_>>()?;
    for (seed, d) in cfg.seeds.iter().zip(&datasets) {
        if split_of(d, Split::Test).is_empty() {
            return Err(Error::EmptySplit(format!(
                "seed {seed}: test split has no slices"
            )));
        }
    }

    let jobs: Vec<(usize, CostConfig)> = (0..cfg.seeds.len())
        .flat_map(|i| regimes.iter().map(move |r| (i, *r)))
        .collect();
    let runs: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(i, cost)| {
            let seed = cfg.seeds[i];
            let tcfg = TrainConfig {
                seed,
                cost,
                ..cfg.train.clone()
            };
            let (params, log) = train(&datasets[i], &tcfg)?;
            let model = Model::Heads(params.clone());
            let test = split_of(&datasets[i], Split::Test);
            let report = evaluate(&model, &test, &cfg.train.eval)?;
            let sha = match out {
                Some(dir) => {
                    let run_dir = dir.join(format!("seed_{seed}")).join(cost.tag());
                    write(&run_dir.join("train_log.csv"), log.to_csv())?;
                    write(&run_dir.join("metrics.json"), json(&report))?;
                    write(&run_dir.join("metrics.csv"), metrics_csv(&[&report]))?;
                    Some(save_checkpoint(
                        &Checkpoint::heads(params, cost),
                        &run_dir.join("model.ckpt"),
                    )?)
                }
                None => None,
            };
            Ok(RunResult {
                seed,
                tag: cost.tag(),
                cost,
                test: report,
                checkpoint_sha256: sha,
                log: Some(log),
                model: Some(model),
            })
        })
        .collect::<Result<_>>()?;

    let mut by_key: BTreeMap<(u64, String), &RunResult> = BTreeMap::new();
    for r in &runs {
        by_key.insert((r.seed, r.tag.clone()), r);
    }
    let mut comparisons = Vec::new();
    for (i, &seed) in cfg.seeds.iter().enumerate() {
        let test = split_of(&datasets[i], Split::Test);
        let Some(base) = by_key.get(&(seed, cfg.baseline.clone())) else {
            continue;
        };
        for tag in &cfg.compare {
            let Some(cost) = by_key.get(&(seed, tag.clone())) else {
                continue;
            };
            let report = compare_cost_vs_threshold(
                base.model.as_ref().expect("model kept"),
                cost.model.as_ref().expect("model kept"),
                &test,
                &cfg.sweep,
                &cfg.train.eval,
            )?;
            if let Some(dir) = out {
                let d = dir.join(format!("seed_{seed}"));
                write(&d.join(format!("compare_{tag}.json")), json(&report))?;
                write(
                    &d.join(format!("compare_{tag}.svg")),
                    comparison_svg(&report),
                )?;
            }
            comparisons.push(SeedComparison {
                seed,
                tag: tag.clone(),
                report,
            });
        }
    }

    let result = ExperimentResult { runs, comparisons };
    if let Some(dir) = out {
        write(&dir.join("config.json"), cfg.to_json())?;
        for t in &cfg.tables {
            write(
                &dir.join(format!("table_{}.md", t.name)),
                result.table_markdown(t),
            )?;
            write(
                &dir.join(format!("table_{}.csv", t.name)),
                result.table_csv(t),
            )?;
        }
        write(&dir.join("summary.json"), json(&result))?;
    }
    Ok(result)
}
