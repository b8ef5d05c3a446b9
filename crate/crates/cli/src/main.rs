//! `tinygbdt`: train, inspect and evaluate reuse-penalized tree ensembles.

mod values;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tinygbdt::codec::{decode, encode, size_report, SizeReport};
use tinygbdt::data::{load_csv, load_features, split_train_test, Dataset, LabelColumn, TaskKind};
use tinygbdt::eval::{
    evaluate, grid_search, pareto_filter, reuse_factor, score, write_csv, write_json, GridSpec,
    DEFAULT_TEST_FRACTION,
};
use tinygbdt::model::{Ensemble, NumericType, Prediction};
use tinygbdt::trainer::{train_detailed, TrainConfig};

#[derive(Parser)]
#[command(name = "tinygbdt", version, about = "Gradient boosted trees that share thresholds and leaf values")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a CSV file and write a .toad model.
    Train(TrainCmd),
    /// Predict with a .toad model.
    Predict(PredictCmd),
    /// Convert a JSON model to .toad.
    Encode(EncodeCmd),
    /// Dump the layout of a .toad model.
    Inspect(InspectCmd),
    /// Train on one split and score on the other, or score an existing model.
    Eval(EvalCmd),
    /// Train and score every configuration of a penalty grid.
    Grid(GridCmd),
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Label column, by header name or zero-based index.
    #[arg(long)]
    label: String,
    /// regression, binary or multiclass:<classes>.
    #[arg(long)]
    task: TaskKind,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let label: LabelColumn = self.label.parse().expect("label parsing is infallible");
        Ok(load_csv(&self.data, &label, self.task)?)
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML file with configuration keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Penalty for a feature not used so far.
    #[arg(long)]
    tinygbdt_penalty_feature: Option<f64>,
    /// Penalty for a threshold not used so far.
    #[arg(long)]
    tinygbdt_penalty_threshold: Option<f64>,
    /// Size limit of the encoded model in bytes.
    #[arg(long)]
    tinygbdt_forestsize: Option<u64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_bins: Option<usize>,
    #[arg(long)]
    min_gain: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = read_text(path)?;
                toml::from_str(&text).with_context(|| format!("bad configuration in {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(
            tinygbdt_penalty_feature => iota,
            tinygbdt_penalty_threshold => xi,
            max_iterations => max_iterations,
            max_depth => max_depth,
            learning_rate => learning_rate,
            lambda => lambda,
            gamma => gamma,
            max_bins => max_bins,
            min_gain => min_gain,
            seed => seed
        );
        if self.tinygbdt_forestsize.is_some() {
            c.forestsize_budget = self.tinygbdt_forestsize;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Model file to write.
    #[arg(long, short)]
    output: PathBuf,
    /// Also write the model as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct PredictCmd {
    /// .toad model file.
    #[arg(long)]
    model: PathBuf,
    /// CSV file of inputs.
    #[arg(long)]
    data: PathBuf,
    /// Label column to skip; without it every column is an input.
    #[arg(long)]
    label: Option<String>,
    /// Prediction CSV; standard output if absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeCmd {
    /// JSON model, as written by `train --json`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct InspectCmd {
    model: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Score this model on the whole file instead of training.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    test_fraction: f64,
}

#[derive(Args)]
struct GridCmd {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Feature penalties, e.g. `0,2^-10..2^15`.
    #[arg(long, default_value = "2^-10..2^15")]
    iota: String,
    /// Threshold penalties.
    #[arg(long, default_value = "2^-10..2^15")]
    xi: String,
    /// Iteration counts; defaults to the configured one.
    #[arg(long)]
    iterations: Option<String>,
    /// Depths; defaults to the configured one.
    #[arg(long)]
    depths: Option<String>,
    /// Size limit in bytes, enforced in training and on the output rows.
    #[arg(long)]
    budget: Option<u64>,
    /// Keep only the rows no other row beats on both metric and size.
    #[arg(long)]
    pareto: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    test_fraction: f64,
    /// Worker threads; all cores if absent.
    #[arg(long)]
    jobs: Option<usize>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_model(path: &Path) -> Result<Ensemble> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    decode(&bytes).with_context(|| format!("{} is not a valid model", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn print_config(c: &TrainConfig) {
    println!("config {}", serde_json::to_string(c).expect("config serializes"));
}

fn print_sizes(r: &SizeReport) {
    println!(
        "size: {} bytes ({} bits: metadata {}, feature map {}, thresholds {}, leaf values {}, trees {}, padding {})",
        r.total_bytes,
        r.total_bits,
        r.metadata,
        r.feature_threshold_map,
        r.global_thresholds,
        r.global_leaf_values,
        r.trees,
        r.padding
    );
}

fn cmd_train(a: &TrainCmd) -> Result<()> {
    let cfg = a.config.resolve()?;
    print_config(&cfg);
    let ds = a.data.load()?;
    let out = train_detailed(&ds, &cfg)?;
    let e = &out.ensemble;
    let enc = encode(e)?;
    write_file(&a.output, &enc.bytes)?;
    if let Some(path) = &a.json {
        write_file(path, serde_json::to_string_pretty(e)?.as_bytes())?;
    }
    println!(
        "trained {} rounds ({:?}): {} trees, {} internal nodes, {} leaves, {} features, {} thresholds, {} leaf values",
        out.rounds,
        out.stop,
        e.trees.len(),
        e.node_count(),
        e.leaf_count(),
        e.tables.features().len(),
        e.tables.threshold_count(),
        e.tables.leaf_values().len()
    );
    print_sizes(&size_report(e));
    println!("wrote {}", a.output.display());
    Ok(())
}

fn cmd_predict(a: &PredictCmd) -> Result<()> {
    let e = read_model(&a.model)?;
    let rows: Vec<Vec<f64>> = match &a.label {
        Some(label) => {
            let ds = load_csv(&a.data, &label.parse().expect("infallible"), e.task)?;
            ds.rows().map(<[f64]>::to_vec).collect()
        }
        None => load_features(&a.data)?.rows().map(<[f64]>::to_vec).collect(),
    };
    let mut w = csv_writer(a.output.as_deref())?;
    let k = e.class_count();
    match e.task {
        TaskKind::Regression => w.write_record(["prediction"])?,
        TaskKind::Binary => w.write_record(["class", "p0", "p1"])?,
        TaskKind::Multiclass { .. } => {
            let mut header = vec!["class".to_string()];
            header.extend((0..k).map(|c| format!("p{c}")));
            w.write_record(&header)?;
        }
    }
    for (i, x) in rows.iter().enumerate() {
        let p = e.predict(x).with_context(|| format!("row {i}"))?;
        match p {
            Prediction::Value(v) => w.write_record([v.to_string()])?,
            Prediction::Class { class, probabilities } => {
                let mut rec = vec![class.to_string()];
                rec.extend(probabilities.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let out: Box<dyn Write> = match path {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("cannot write {}", p.display()))?),
        None => Box::new(io::stdout()),
    };
    Ok(csv::Writer::from_writer(out))
}

fn cmd_encode(a: &EncodeCmd) -> Result<()> {
    let text = read_text(&a.input)?;
    let e: Ensemble =
        serde_json::from_str(&text).with_context(|| format!("{} is not a JSON model", a.input.display()))?;
    let enc = encode(&e)?;
    write_file(&a.output, &enc.bytes)?;
    print_sizes(&size_report(&e));
    println!("wrote {}", a.output.display());
    Ok(())
}

#[derive(Serialize)]
struct FeatureLine {
    name: String,
    input_index: usize,
    width_bits: u32,
    numeric_type: NumericType,
    thresholds: Vec<f64>,
}

#[derive(Serialize)]
struct TreeLine {
    internal_nodes: usize,
    leaves: usize,
    depth: usize,
}

#[derive(Serialize)]
struct Inspection {
    version: u64,
    task: TaskKind,
    class_count: usize,
    tree_count: usize,
    max_depth: usize,
    input_features: usize,
    features: Vec<FeatureLine>,
    threshold_count: usize,
    leaf_values: Vec<f32>,
    sizes: SizeReport,
    reuse_factor: Option<f64>,
    trees: Vec<TreeLine>,
}

fn inspection(e: &Ensemble) -> Inspection {
    Inspection {
        version: tinygbdt::codec::VERSION,
        task: e.task,
        class_count: e.class_count(),
        tree_count: e.trees.len(),
        max_depth: e.max_depth,
        input_features: e.n_features,
        features: e
            .tables
            .features()
            .iter()
            .enumerate()
            .map(|(i, f)| FeatureLine {
                name: format!("f{}", i + 1),
                input_index: f.input_index,
                width_bits: f.repr.bits(),
                numeric_type: f.repr.numeric_type,
                thresholds: f.thresholds.clone(),
            })
            .collect(),
        threshold_count: e.tables.threshold_count(),
        leaf_values: e.tables.leaf_values().to_vec(),
        sizes: size_report(e),
        reuse_factor: reuse_factor(e),
        trees: e
            .trees
            .iter()
            .map(|t| TreeLine {
                internal_nodes: t.internal_count(),
                leaves: t.leaf_count(),
                depth: t.depth(),
            })
            .collect(),
    }
}

fn cmd_inspect(a: &InspectCmd) -> Result<()> {
    let e = read_model(&a.model)?;
    let r = inspection(&e);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(());
    }
    println!("format version {}", r.version);
    println!("task {}", r.task);
    println!("trees K={}, max depth {}", r.tree_count, r.max_depth);
    println!("input features d={}", r.input_features);
    println!("used features |F|={}", r.features.len());
    for f in &r.features {
        let kind = match f.numeric_type {
            NumericType::Integer => "integer",
            NumericType::Float => "float",
        };
        let plural = if f.thresholds.len() == 1 { "" } else { "s" };
        println!(
            "  {}: input {}, {} {}-bit {kind} threshold{plural} {:?}",
            f.name,
            f.input_index,
            f.thresholds.len(),
            f.width_bits,
            f.thresholds
        );
    }
    println!("global thresholds {}", r.threshold_count);
    println!("global leaf values V={} {:?}", r.leaf_values.len(), r.leaf_values);
    print_sizes(&r.sizes);
    match r.reuse_factor {
        Some(rf) => println!("reuse factor {rf:.4}"),
        None => println!("reuse factor undefined (no stored values)"),
    }
    for (i, t) in r.trees.iter().enumerate() {
        println!(
            "  tree {i}: {} internal, {} leaves, depth {}",
            t.internal_nodes, t.leaves, t.depth
        );
    }
    Ok(())
}

fn cmd_eval(a: &EvalCmd) -> Result<()> {
    let ds = a.data.load()?;
    if let Some(path) = &a.model {
        let e = read_model(path)?;
        let m = score(&e, &ds)?;
        println!("{} {m}", tinygbdt::eval::MetricName::for_task(e.task).as_str());
        print_sizes(&size_report(&e));
        return Ok(());
    }
    let cfg = a.config.resolve()?;
    print_config(&cfg);
    let (tr, te) = split_train_test(&ds, a.test_fraction, cfg.seed)?;
    let out = train_detailed(&tr, &cfg)?;
    let report = evaluate(&out.ensemble, &te, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_grid(a: &GridCmd) -> Result<()> {
    let base = a.config.resolve()?;
    let grid = GridSpec {
        iotas: values::parse_penalties(&a.iota)?,
        xis: values::parse_penalties(&a.xi)?,
        iterations: match &a.iterations {
            Some(s) => values::parse_counts(s)?,
            None => vec![base.max_iterations],
        },
        depths: match &a.depths {
            Some(s) => values::parse_counts(s)?,
            None => vec![base.max_depth],
        },
    };
    print_config(&base);
    let ds = a.data.load()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = a.jobs {
        if j == 0 {
            bail!("--jobs must be positive");
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build()?;
    let rows = pool.install(|| grid_search(&ds, &grid, &base, a.budget, a.test_fraction))?;
    let rows = if a.pareto { pareto_filter(&rows) } else { rows };
    if let Some(path) = &a.csv {
        let f = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
        write_csv(&rows, io::BufWriter::new(f))?;
    }
    if let Some(path) = &a.json {
        let f = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
        write_json(&rows, io::BufWriter::new(f))?;
    }
    if a.csv.is_none() && a.json.is_none() {
        write_csv(&rows, io::stdout().lock())?;
    }
    eprintln!("{} rows", rows.len());
    Ok(())
}

/// 2 when an input file does not exist, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let missing = err
        .chain()
        .filter_map(|e| e.downcast_ref::<io::Error>())
        .any(|e| e.kind() == io::ErrorKind::NotFound);
    if missing {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Grid(a) => cmd_grid(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
