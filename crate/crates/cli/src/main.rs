//! `replab`: train, analyze, rewrite and sweep small MLPs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 training divergence,
//! 1 anything else.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use replab_core::data::{gen_synthetic, pca_control_with, write_container};
use replab_core::harness::{
    best_of_set, csv_to_table, fmt_num, render_table, run, summary_table, sweep, sweep_csv, with_workers, write_run,
    ExperimentConfig, Method, Preset, RegularizerChoice, RunReport, Splits, SweepAxis, SweepSpec,
};
use replab_core::ion::{
    cpn_csv, cpn_search, dead_unit_alignment, ion_linear, ion_relu, verify_identical, AffineTransform, CpnConfig,
    CpnObjective, RANDOM_Q_MAX_CONDITION,
};
use replab_core::metrics::{activation_dump, characteristics_with, report_csv_header, report_csv_row, CharacteristicsOptions};
use replab_core::mi::{mi_bounds, MiConfig};
use replab_core::network::{load_checkpoint, save_checkpoint};
use replab_core::{Activation, Error, Network, Result};

#[derive(Parser)]
#[command(name = "replab", version, about = "Hidden-representation experiments on small MLPs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON); `sweep` expects a sweep spec.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Built-in configuration used when no --config is given.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    preset: PresetArg,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic or PCA-controlled dataset as an RLDS container.
    GenData(GenDataArgs),
    /// Train `trials` networks and write errors, characteristics and checkpoints.
    Train(TrainArgs),
    /// Characteristics of a checkpoint's hidden layers on the test split.
    Analyze(AnalyzeArgs),
    /// Apply an output-preserving rewrite to one layer of a checkpoint.
    Ion(IonArgs),
    /// Search rewrites for a network with comparable performance.
    Cpn(CpnArgs),
    /// Mutual-information bounds of a checkpoint's hidden layers.
    Mi(MiArgs),
    /// Run a sweep over one config axis.
    Sweep(SweepArgs),
    /// Tabulate run reports under --out and pick the best regularizer.
    Report,
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of underlying factors.
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 4000)]
    samples: usize,
    #[arg(long, default_value_t = 1000)]
    ambient: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Instead of synthetic data, keep the top-k principal components of the
    /// configured dataset (all splits pooled).
    #[arg(long)]
    pca_k: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Regularizer name (baseline, L1W, L2W, dropout, BN, CR, cw-CR, VR,
    /// cw-VR, L1R, RR, cw-RR).
    #[arg(long)]
    regularizer: Option<String>,
    #[arg(long)]
    loss_weight: Option<f64>,
    #[arg(long)]
    target_layer: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated layers; all hidden layers by default.
    #[arg(long, value_delimiter = ',')]
    layers: Vec<usize>,
    /// Use every sample instead of positive activations only.
    #[arg(long)]
    all_samples: bool,
    /// Also dump per-sample activations of these units (first layer).
    #[arg(long, value_delimiter = ',')]
    dump_units: Vec<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum IonKind {
    /// Random permutation and positive scales (ReLU layers).
    Ppd,
    /// Random well-conditioned affine map (linear layers).
    General,
    /// Whitening from test-split activations (linear layers).
    Whitening,
    /// Rotate null directions onto units and zero them (linear layers).
    DeadUnits,
}

#[derive(Args)]
struct IonArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    layer: usize,
    #[arg(long, value_enum, default_value = "ppd")]
    kind: IonKind,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    MaxCorr,
    MinCorr,
}

#[derive(Args)]
struct CpnArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    layer: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, value_enum, default_value = "max-corr")]
    objective: ObjectiveArg,
    /// Allowed validation-error increase, in points.
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = 5)]
    fine_tune_epochs: usize,
}

#[derive(Args)]
struct MiArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',')]
    layers: Vec<usize>,
    /// Fixed noise variance; otherwise a fraction of the mean unit variance.
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, default_value_t = replab_core::mi::DEFAULT_MAX_SAMPLES)]
    max_samples: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// Used with a preset when no --config sweep spec is given.
    #[arg(long, value_enum)]
    axis: Option<AxisArg>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    /// Comma-separated regularizers crossed with the values.
    #[arg(long, value_delimiter = ',')]
    regularizers: Vec<String>,
    /// Comma-separated factor counts (synthetic) or PCA k values.
    #[arg(long, value_delimiter = ',')]
    d_values: Vec<usize>,
    /// Use the preset's synthetic dataset instead of MNIST.
    #[arg(long)]
    synthetic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    #[value(alias = "loss_weight")]
    LossWeight,
    #[value(alias = "d_factors")]
    DFactors,
    #[value(alias = "pca_k")]
    PcaK,
    #[value(alias = "data_size")]
    DataSize,
    #[value(alias = "layer_width")]
    LayerWidth,
    Optimizer,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::LossWeight => SweepAxis::LossWeight,
            AxisArg::DFactors => SweepAxis::DFactors,
            AxisArg::PcaK => SweepAxis::PcaK,
            AxisArg::DataSize => SweepAxis::DataSize,
            AxisArg::LayerWidth => SweepAxis::LayerWidth,
            AxisArg::Optimizer => SweepAxis::Optimizer,
        }
    }
}

fn preset(g: &Global) -> Preset {
    match g.preset {
        PresetArg::Paper => Preset::Paper,
        PresetArg::Desk => Preset::Desk,
    }
}

fn experiment(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => preset(g).config(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn data(cfg: &ExperimentConfig) -> Result<Splits> {
    cfg.dataset.load(Path::new("."))
}

fn hidden_layers(net: &Network, requested: &[usize]) -> Vec<usize> {
    if requested.is_empty() {
        (1..net.num_layers()).collect()
    } else {
        requested.to_vec()
    }
}

/// Timestamps go only here, never into result files.
fn log(out: &Path, msg: &str) -> Result<()> {
    use std::io::Write;
    fs::create_dir_all(out)?;
    let t = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut f = fs::OpenOptions::new().create(true).append(true).open(out.join("run.log"))?;
    writeln!(f, "{t} {msg}")?;
    Ok(())
}

fn emit(out: &Path, name: &str, csv: &str) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(name), csv)?;
    print!("{}", csv_to_table(csv));
    Ok(())
}

fn gen_data(g: &Global, a: &GenDataArgs) -> Result<()> {
    let seed = g.seed.unwrap_or(0);
    let ds = match a.pca_k {
        Some(k) => {
            let cfg = experiment(g)?;
            let s = data(&cfg)?;
            let pool = s.train.merged(&s.val)?.merged(&s.test)?;
            pca_control_with(&pool, k, cfg.dataset.pca_mode)?
        }
        None => gen_synthetic(a.d, a.classes, a.samples, a.ambient, seed)?,
    };
    fs::create_dir_all(&g.out)?;
    let path = g.out.join("data.rlds");
    write_container(&path, &ds)?;
    println!("wrote {} ({} samples, dim {}, {} classes)", path.display(), ds.len(), ds.dim(), ds.k);
    Ok(())
}

fn train_cmd(g: &Global, a: &TrainArgs) -> Result<()> {
    let mut cfg = experiment(g)?;
    if let Some(r) = &a.regularizer {
        cfg.regularizer.method = r.parse()?;
        if cfg.name.is_empty() || cfg.name == "baseline" {
            cfg.name = cfg.regularizer.method.to_string();
        }
    }
    if let Some(w) = a.loss_weight {
        cfg.regularizer.loss_weight = w;
    }
    if let Some(l) = a.target_layer {
        cfg.regularizer.target_layer = l;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    cfg.checkpoints = true;
    cfg.validate()?;
    log(&g.out, &format!("train start {}", cfg.name))?;
    let start = Instant::now();
    let out = run(&cfg, Path::new(".")).map_err(|e| {
        if matches!(e, Error::Divergence { .. }) {
            eprintln!("config:\n{}", cfg.to_json());
        }
        e
    })?;
    write_run(&out, &cfg, &g.out)?;
    log(&g.out, &format!("train done in {:.1}s", start.elapsed().as_secs_f64()))?;
    print!("{}", summary_table(&out.report));
    Ok(())
}

fn analyze(g: &Global, a: &AnalyzeArgs) -> Result<()> {
    let net = load_checkpoint(&a.checkpoint)?;
    let test = data(&experiment(g)?)?.test;
    let layers = hidden_layers(&net, &a.layers);
    let opts = if a.all_samples {
        CharacteristicsOptions::all_samples()
    } else {
        CharacteristicsOptions::positive_only()
    };
    let run_name = a.checkpoint.file_stem().map_or("net".into(), |s| s.to_string_lossy().into_owned());
    let mut csv = report_csv_header() + "\n";
    let caps = net.capture(&test, &layers)?;
    for cap in &caps {
        let rep = characteristics_with(cap, opts)?;
        csv.push_str(&report_csv_row(&run_name, "", 0.0, &rep));
        csv.push('\n');
    }
    if !a.dump_units.is_empty() {
        activation_dump(&caps[0], &a.dump_units, &g.out.join("activations.csv"))?;
    }
    emit(&g.out, "analyze.csv", &csv)
}

fn ion_cmd(g: &Global, a: &IonArgs) -> Result<()> {
    let net = load_checkpoint(&a.checkpoint)?;
    let test = data(&experiment(g)?)?.test;
    let l = a.layer;
    if l == 0 || l >= net.num_layers() {
        return Err(Error::Config(format!("layer {l} is not a hidden layer")));
    }
    let width = net.width(l);
    let seed = g.seed.unwrap_or(0);
    let linear = net.layer(l).spec.activation == Activation::Linear;
    let rewritten = match a.kind {
        IonKind::Ppd => {
            let t = AffineTransform::random_ppd(width, 0.5, 2.0, seed)?;
            let perm: Vec<usize> = (0..width)
                .map(|i| (0..width).find(|&j| t.q[(i, j)] != 0.0).expect("one entry per row"))
                .collect();
            let scales: Vec<f64> = (0..width).map(|j| t.q[(perm.iter().position(|&p| p == j).unwrap(), j)]).collect();
            ion_relu(&net, l, &perm, &scales)?
        }
        _ if !linear => return Err(Error::Config(format!("--kind needs a linear layer; layer {l} is not"))),
        IonKind::General => ion_linear(&net, l, &AffineTransform::random_general(width, RANDOM_Q_MAX_CONDITION, seed)?)?,
        IonKind::Whitening => {
            let cap = net.capture_layer(&test, l)?;
            ion_linear(&net, l, &AffineTransform::whitening_of(&cap, 1e-8)?)?
        }
        IonKind::DeadUnits => {
            let cap = net.capture_layer(&test, l)?;
            let al = dead_unit_alignment(&net, l, &cap, true)?;
            println!("rank {} of {width}; {} null units, max |z| {:.3e}", al.rank, al.null_units.len(), al.max_null_abs);
            al.network
        }
    };
    let dev = verify_identical(&net, &rewritten, &test.x)?;
    let opts = CharacteristicsOptions::positive_only();
    let mut csv = report_csv_header() + "\n";
    for (name, n) in [("original", &net), ("rewritten", &rewritten)] {
        let rep = characteristics_with(&n.capture_layer(&test, l)?, opts)?;
        csv.push_str(&report_csv_row(name, "", 0.0, &rep));
        csv.push('\n');
    }
    emit(&g.out, "ion.csv", &csv)?;
    println!("max output deviation {dev:.3e}");
    save_checkpoint(&rewritten, &g.out.join("ion.rlnn"))
}

fn cpn_cmd(g: &Global, a: &CpnArgs) -> Result<()> {
    let net = load_checkpoint(&a.checkpoint)?;
    let s = data(&experiment(g)?)?;
    let mut cfg = CpnConfig {
        trials: a.trials,
        seed: g.seed.unwrap_or(0),
        objective: match a.objective {
            ObjectiveArg::MaxCorr => CpnObjective::MaxCorr,
            ObjectiveArg::MinCorr => CpnObjective::MinCorr,
        },
        margin: a.margin,
        ..CpnConfig::default()
    };
    cfg.fine_tune.epochs = a.fine_tune_epochs;
    let (best, rep) = with_workers(g.workers, || cpn_search(&net, a.layer, &s.train, &s.val, &cfg))??;
    emit(&g.out, "cpn.csv", &cpn_csv(&rep))?;
    println!(
        "baseline error {}; selected trial {} (comparable: {})",
        fmt_num(rep.baseline_error),
        rep.selected,
        rep.comparable
    );
    save_checkpoint(&best, &g.out.join("cpn.rlnn"))
}

fn mi_cmd(g: &Global, a: &MiArgs) -> Result<()> {
    let net = load_checkpoint(&a.checkpoint)?;
    let test = data(&experiment(g)?)?.test;
    let cfg = MiConfig {
        sigma2: a.sigma2,
        max_samples: a.max_samples,
        seed: g.seed.unwrap_or(0),
        ..MiConfig::default()
    };
    let mut csv = String::from("layer,mi_x_lo,mi_x_hi,mi_y_lo,mi_y_hi,sigma2,n_sub\n");
    for cap in net.capture(&test, &hidden_layers(&net, &a.layers))? {
        let (x, y) = with_workers(g.workers, || mi_bounds(&cap, &cfg))??;
        let _ = writeln!(csv, "{},{},{},{},{},{},{}", cap.layer, x.lower, x.upper, y.lower, y.upper, x.sigma2, x.n);
    }
    emit(&g.out, "mi.csv", &csv)
}

fn sweep_value(axis: SweepAxis, s: &str) -> Value {
    match axis {
        SweepAxis::Optimizer => Value::String(s.to_string()),
        _ => serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string())),
    }
}

fn sweep_cmd(g: &Global, a: &SweepArgs) -> Result<()> {
    let mut spec = match &g.config {
        Some(p) => SweepSpec::from_json(
            &fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        )?,
        None => {
            let axis: SweepAxis = a
                .axis
                .ok_or_else(|| Error::Config("--axis is required without a --config sweep spec".into()))?
                .into();
            if a.values.is_empty() {
                return Err(Error::Config("--values is required without a --config sweep spec".into()));
            }
            let base = if a.synthetic {
                preset(g).synthetic_config(a.d_values.first().copied().unwrap_or(10))
            } else {
                preset(g).config()
            };
            let regularizers = a
                .regularizers
                .iter()
                .map(|r| Ok(RegularizerChoice::new(r.parse::<Method>()?, 0.0)))
                .collect::<Result<Vec<_>>>()?;
            SweepSpec {
                base,
                axis,
                values: a.values.iter().map(|v| sweep_value(axis, v)).collect(),
                d_values: a.d_values.clone(),
                regularizers,
            }
        }
    };
    if let Some(s) = g.seed {
        spec.base.seed = s;
    }
    let points = spec.points()?.len();
    log(&g.out, &format!("sweep start: {points} points on {}", spec.axis))?;
    let start = Instant::now();
    let rows = with_workers(g.workers, || sweep(&spec, Path::new(".")))??;
    log(&g.out, &format!("sweep done in {:.1}s", start.elapsed().as_secs_f64()))?;
    fs::write(g.out.join("sweep.json"), serde_json::to_string_pretty(&spec)? + "\n")?;
    emit(&g.out, "sweep.csv", &sweep_csv(spec.axis, &rows))
}

fn report_cmd(g: &Global) -> Result<()> {
    let mut dirs = vec![g.out.clone()];
    if let Ok(rd) = fs::read_dir(&g.out) {
        let mut subs: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
        subs.sort();
        dirs.extend(subs);
    }
    let mut reports: Vec<RunReport> = Vec::new();
    for d in &dirs {
        let p = d.join("report.json");
        if p.is_file() {
            reports.push(serde_json::from_str(&fs::read_to_string(&p)?)?);
        }
        let sweep = d.join("sweep.csv");
        if sweep.is_file() {
            println!("{}", sweep.display());
            print!("{}", csv_to_table(&fs::read_to_string(sweep)?));
        }
    }
    if reports.is_empty() {
        return Err(Error::Config(format!("no report.json under {}", g.out.display())));
    }
    let mut csv = String::from("run,regularizer,loss_weight,trials,val_error_mean,val_error_std,test_error_mean,test_error_std\n");
    for r in &reports {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.name,
            r.method,
            r.loss_weight,
            r.trials.len(),
            r.val_error.mean,
            r.val_error.std,
            r.test_error.mean,
            r.test_error.std
        );
    }
    emit(&g.out, "report.csv", &csv)?;
    if let Some(s) = best_of_set(&reports) {
        let headers: Vec<String> = ["selected", "val_error", "test_error", "improvement"].iter().map(|s| s.to_string()).collect();
        let row = vec![
            s.label,
            format!("{}±{}", fmt_num(s.val_error_mean), fmt_num(s.val_error_std)),
            fmt_num(s.test_error_mean),
            s.improvement.map_or("n/a".into(), fmt_num),
        ];
        print!("\n{}", render_table(&headers, &[row]));
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.cmd {
        Cmd::GenData(a) => gen_data(g, a),
        Cmd::Train(a) => with_workers(g.workers, || train_cmd(g, a))?,
        Cmd::Analyze(a) => analyze(g, a),
        Cmd::Ion(a) => ion_cmd(g, a),
        Cmd::Cpn(a) => cpn_cmd(g, a),
        Cmd::Mi(a) => mi_cmd(g, a),
        Cmd::Sweep(a) => sweep_cmd(g, a),
        Cmd::Report => report_cmd(g),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Divergence { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
