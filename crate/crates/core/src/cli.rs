//! Command-line front end: `gen`, `train`, `score` and `compare`.
//!
//! Any long flag may also come from a `--config` file of `key = value`
//! lines; flags given on the command line win.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::epidemic::{
    compare_methods, derive_seed, parse_method_list, EvalReport, Method, MmenSelector, NamedGraph,
    SirConfig,
};
use crate::error::{MmenError, Result};
use crate::features::{featurize, write_features_csv, WalkConfig};
use crate::graph::{load_cascade, save_cascade, synth_cascade, CascadeGraph, SynthConfig};
use crate::model::{score_graph, Ablation, ModelConfig, ModelInput};
use crate::train::{select_seeds, train, TrainConfig, TrainHistory};

pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "best.ckpt";
pub const HISTORY: &str = "history.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(name = "mmen", version, about = "Find key spreaders in retweet cascades")]
pub struct Cli {
    /// File of `key = value` lines supplying default flag values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cascade dataset with train/val/test splits.
    Gen(GenArgs),
    /// Train the model on a dataset's training split.
    Train(TrainArgs),
    /// Score the nodes of one cascade with a checkpoint.
    Score(ScoreArgs),
    /// Compare seed selectors on a dataset's test split.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub graphs: usize,
    #[arg(long, default_value_t = 200)]
    pub min_nodes: usize,
    #[arg(long, default_value_t = 500)]
    pub max_nodes: usize,
    /// Extra non-tree edges per node.
    #[arg(long, default_value_t = 0.1)]
    pub extra_edge_frac: f64,
    /// Noise scale on synthetic follower counts.
    #[arg(long, default_value_t = 0.5)]
    pub attr_noise: f64,
}

#[derive(Debug, Clone, Args)]
pub struct WalkArgs {
    #[arg(long, default_value_t = 10)]
    pub walks_per_node: usize,
    #[arg(long, default_value_t = 4)]
    pub walk_len: usize,
    /// Treat cascades as undirected for walks and attention.
    #[arg(long)]
    pub undirected: bool,
}

impl WalkArgs {
    fn config(&self, seed: u64) -> WalkConfig {
        WalkConfig {
            walks_per_node: self.walks_per_node,
            walk_len: self.walk_len,
            rng_seed: seed,
            undirected: self.undirected,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for best.ckpt and history.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Variant: none, no-user, no-memory, no-fusion, a comma list, or all.
    /// Several variants are written to one subdirectory each.
    #[arg(long, default_value = "none")]
    pub ablate: String,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    /// Weight of the seed-count penalty.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Coverage radius in hops.
    #[arg(long, default_value_t = 1)]
    pub d_cover: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.05)]
    pub seed_fraction: f64,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 16)]
    pub head_dim: usize,
    /// Memory matrices per layer.
    #[arg(long, default_value_t = 4)]
    pub memory_groups: usize,
    /// Slots per memory matrix.
    #[arg(long, default_value_t = 32)]
    pub memory_slots: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[command(flatten)]
    pub walk: WalkArgs,
    /// Also write per-graph feature CSVs under <out>/features.
    #[arg(long)]
    pub dump_features: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Cascade directory with edges.tsv and optional users.tsv.
    #[arg(long)]
    pub graph: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub seed_fraction: f64,
    #[command(flatten)]
    pub walk: WalkArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model checkpoint; repeat to compare ablation variants side by side.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Comma-separated methods out of mmen, degree, kshell, hindex,
    /// leaderrank, greedy, random.
    #[arg(long, default_value = "mmen,degree,kshell,hindex,leaderrank,greedy,random")]
    pub methods: String,
    /// Output directory for report.csv and report.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Infection probability; defaults to 1.5x the epidemic threshold.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub seed_fraction: f64,
    /// Coverage radius for the greedy baseline.
    #[arg(long, default_value_t = 1)]
    pub d_cover: usize,
    #[command(flatten)]
    pub walk: WalkArgs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub graphs: Vec<String>,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Manifest {
    pub fn load(dataset: &Path) -> Result<Manifest> {
        let path = dataset.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| MmenError::io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| MmenError::Data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dataset: &Path) -> Result<()> {
        let path = dataset.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| MmenError::io(&path, e))
    }
}

/// 70/15/15 split sizes by index.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 0.7).round() as usize;
    let val = ((n as f64 * 0.15).round() as usize).min(n - train);
    (train, val, n - train - val)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MmenError::io(dir, e))
}

pub fn cmd_gen(args: &GenArgs, seed: u64) -> Result<Manifest> {
    if args.graphs == 0 || args.min_nodes > args.max_nodes {
        return Err(MmenError::InvalidParam(format!(
            "need graphs >= 1 and min-nodes <= max-nodes, got {} graphs of {}..={} nodes",
            args.graphs, args.min_nodes, args.max_nodes
        )));
    }
    create_dir(&args.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::with_capacity(args.graphs);
    for i in 0..args.graphs {
        let n_nodes = rng.random_range(args.min_nodes..=args.max_nodes);
        let g = synth_cascade(SynthConfig {
            n_nodes,
            extra_edge_frac: args.extra_edge_frac,
            attr_noise: args.attr_noise,
            rng_seed: derive_seed(seed, i as u64),
        })?;
        let name = format!("g{i:03}");
        save_cascade(&g, args.out.join(&name))?;
        names.push(name);
    }
    let (tr, va, _) = split_sizes(names.len());
    let manifest = Manifest {
        seed,
        train: names[..tr].to_vec(),
        val: names[tr..tr + va].to_vec(),
        test: names[tr + va..].to_vec(),
        graphs: names,
    };
    manifest.save(&args.out)?;
    Ok(manifest)
}

fn load_split(dataset: &Path, names: &[String]) -> Result<Vec<CascadeGraph>> {
    names.iter().map(|n| load_cascade(dataset.join(n))).collect()
}

pub fn parse_ablations(spec: &str) -> Result<Vec<Ablation>> {
    if spec.trim() == "all" {
        return Ok(Ablation::study_variants().to_vec());
    }
    let out: Vec<Ablation> = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Ablation::parse)
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(MmenError::InvalidParam("empty --ablate list".into()));
    }
    Ok(out)
}

impl TrainArgs {
    pub fn train_config(&self, ablation: Ablation, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            lambda: self.lambda,
            d_cover: self.d_cover,
            patience: self.patience,
            seed_fraction: self.seed_fraction,
            rng_seed: seed,
            model: ModelConfig {
                heads: self.heads,
                head_dim: self.head_dim,
                memory_groups: self.memory_groups,
                memory_slots: self.memory_slots,
                layers: self.layers,
                undirected: self.walk.undirected,
                ablation,
                ..ModelConfig::default()
            },
            walk: self.walk.config(seed),
        }
    }
}

/// Result of training one variant.
#[derive(Debug, Clone)]
pub struct TrainedVariant {
    pub ablation: Ablation,
    pub dir: PathBuf,
    pub history: TrainHistory,
}

pub fn cmd_train(args: &TrainArgs, seed: u64) -> Result<Vec<TrainedVariant>> {
    let ablations = parse_ablations(&args.ablate)?;
    for a in &ablations {
        args.train_config(*a, seed).validate()?;
    }
    let manifest = Manifest::load(&args.data)?;
    let mut train_graphs = load_split(&args.data, &manifest.train)?;
    let mut val_graphs = load_split(&args.data, &manifest.val)?;
    if val_graphs.is_empty() {
        if train_graphs.len() < 2 {
            return Err(MmenError::Data(
                "need at least two training graphs when the validation split is empty".into(),
            ));
        }
        let k = train_graphs.len().div_ceil(5);
        val_graphs = train_graphs.split_off(train_graphs.len() - k);
    }
    if train_graphs.is_empty() {
        return Err(MmenError::Data("training split is empty".into()));
    }
    create_dir(&args.out)?;
    if args.dump_features {
        let dir = args.out.join("features");
        create_dir(&dir)?;
        let walk = args.walk.config(seed);
        for name in manifest.train.iter().chain(&manifest.val) {
            let g = load_cascade(args.data.join(name))?;
            let f = featurize(&g, &walk)?;
            write_features_csv(dir.join(format!("{name}.csv")), &g, &[&f.user, &f.structure])?;
        }
    }
    let mut out = Vec::with_capacity(ablations.len());
    for ablation in ablations {
        let cfg = args.train_config(ablation, seed);
        let dir = if out.is_empty() && args.ablate.trim() != "all" && !args.ablate.contains(',') {
            args.out.clone()
        } else {
            args.out.join(ablation.method_name())
        };
        create_dir(&dir)?;
        let outcome = train(&train_graphs, &val_graphs, &cfg)?;
        outcome.params.save(dir.join(CHECKPOINT))?;
        outcome.history.write_csv(dir.join(HISTORY))?;
        println!(
            "{}: final val loss {:.6} (best epoch {} of {})",
            ablation.method_name(),
            outcome.history.best_val_loss,
            outcome.history.best_epoch,
            outcome.history.epochs.len()
        );
        out.push(TrainedVariant {
            ablation,
            dir,
            history: outcome.history,
        });
    }
    Ok(out)
}

fn num(x: f64) -> String {
    x.to_string()
}

pub fn cmd_score(args: &ScoreArgs, seed: u64) -> Result<String> {
    let params = ParamStore::load(&args.checkpoint)?;
    let selector = MmenSelector::new(params, args.walk.config(seed))?;
    let g = load_cascade(&args.graph)?;
    let input = ModelInput::prepare(&g, &selector.walk, selector.model.undirected)?;
    let scores = score_graph(&input, &selector.params, &selector.model)?;
    let seeds = select_seeds(&scores.scores, args.seed_fraction)?;
    let mut is_seed = vec![false; g.num_nodes()];
    for &s in &seeds.members {
        is_seed[s] = true;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let enc = |e: csv::Error| MmenError::Data(format!("csv encoding failed: {e}"));
    w.write_record(["node", "score", "s_user", "s_struct", "w_user", "w_stru", "is_seed"])
        .map_err(enc)?;
    for v in 0..g.num_nodes() {
        w.write_record([
            g.label(v).to_string(),
            num(scores.scores[v]),
            scores.s_user.as_ref().map(|s| num(s[v])).unwrap_or_default(),
            num(scores.s_struct[v]),
            num(scores.weights.0),
            num(scores.weights.1),
            u8::from(is_seed[v]).to_string(),
        ])
        .map_err(enc)?;
    }
    let bytes = w.into_inner().map_err(|e| MmenError::Data(e.to_string()))?;
    let text = String::from_utf8(bytes).expect("csv output is utf-8");
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&args.out, &text).map_err(|e| MmenError::io(&args.out, e))?;
    Ok(text)
}

pub fn cmd_compare(args: &CompareArgs, seed: u64) -> Result<EvalReport> {
    let names = parse_method_list(&args.methods)?;
    let walk = args.walk.config(seed);
    let mut methods = Vec::new();
    for name in &names {
        if name == "mmen" {
            if args.checkpoint.is_empty() {
                return Err(MmenError::InvalidParam(
                    "method `mmen` needs at least one --checkpoint".into(),
                ));
            }
            for ck in &args.checkpoint {
                let params = ParamStore::load(ck)?;
                methods.push(Method::Mmen(MmenSelector::new(params, walk)?));
            }
        } else if name == "greedy" {
            if args.d_cover == 0 {
                return Err(MmenError::InvalidParam("d-cover must be >= 1".into()));
            }
            methods.push(Method::Greedy { d: args.d_cover });
        } else {
            methods.push(Method::baseline(name)?);
        }
    }
    let manifest = Manifest::load(&args.data)?;
    if manifest.test.is_empty() {
        return Err(MmenError::Data("test split is empty".into()));
    }
    let graphs: Vec<NamedGraph> = manifest
        .test
        .iter()
        .map(|n| {
            Ok(NamedGraph {
                name: n.clone(),
                graph: load_cascade(args.data.join(n))?,
            })
        })
        .collect::<Result<_>>()?;
    let sir = SirConfig {
        mu: args.mu,
        runs: args.runs,
        rng_seed: seed,
    };
    let report = compare_methods(&graphs, &methods, &sir, args.seed_fraction)?;
    create_dir(&args.out)?;
    report.write_csv(args.out.join(REPORT_CSV))?;
    let table = report.text_table();
    let path = args.out.join(REPORT_TXT);
    fs::write(&path, &table).map_err(|e| MmenError::io(&path, e))?;
    print!("{table}");
    Ok(report)
}

/// Turns a `key = value` config file into long flags. `true` becomes a
/// bare switch and `false` drops the key.
pub fn config_args(text: &str, path: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: &str| MmenError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err("expected `key = value`"))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(parse_err("bad key"));
        }
        if key == "config" {
            return Err(parse_err("config files cannot nest"));
        }
        match value {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(value.to_string());
            }
        }
    }
    Ok(out)
}

/// Splices config-file flags in right after the subcommand. Keys that
/// also appear on the command line are left out.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>> {
    let mut config = None;
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            config = argv.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        }
    }
    let Some(path) = config else {
        return Ok(argv);
    };
    let path = PathBuf::from(path);
    let text = fs::read_to_string(&path).map_err(|e| MmenError::io(&path, e))?;
    let given: Vec<&str> = argv
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();
    let mut extra = Vec::new();
    let mut skipping = false;
    for a in config_args(&text, &path)? {
        if let Some(key) = a.strip_prefix("--") {
            skipping = given.contains(&key);
        }
        if !skipping {
            extra.push(a);
        }
    }
    let sub = argv
        .iter()
        .position(|a| ["gen", "train", "score", "compare"].contains(&a.as_str()));
    let at = sub.map_or(argv.len(), |i| i + 1);
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| MmenError::InvalidParam(format!("cannot size thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Gen(a) => {
            let m = cmd_gen(a, cli.seed)?;
            println!(
                "wrote {} graphs to {} ({} train / {} val / {} test)",
                m.graphs.len(),
                a.out.display(),
                m.train.len(),
                m.val.len(),
                m.test.len()
            );
        }
        Command::Train(a) => {
            cmd_train(a, cli.seed)?;
        }
        Command::Score(a) => {
            cmd_score(a, cli.seed)?;
            println!("wrote {}", a.out.display());
        }
        Command::Compare(a) => {
            cmd_compare(a, cli.seed)?;
        }
    }
    Ok(())
}

/// Full entry point; returns the process exit code.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
