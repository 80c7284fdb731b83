//! `featlik`: fit class-conditional feature densities, score dumps with them
//! and evaluate detection quality.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use featlik::archive::{self, ModelArchive};
use featlik::density::{self, ClassDensities, DensityKind, FitConfig};
use featlik::features::{self, FeatureSet};
use featlik::metrics::{self, PositiveClass};
use featlik::preprocess;
use featlik::scoring::{self, ScoreTable};
use featlik::syngen::RNG_NAME;
use featlik::Error;

const EXIT_IO: u8 = 2;
const EXIT_FIT: u8 = 3;
const EXIT_DIMS: u8 = 4;

#[derive(Parser)]
#[command(name = "featlik", version, about = "Class-conditional density models over deep features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a preprocessor and per-class densities on a labeled feature dump.
    Fit(FitArgs),
    /// Write per-class log-likelihoods for every sample of a dump.
    Score(ScoreArgs),
    /// Report likelihood-classifier accuracy on a labeled dump.
    Classify(ScoreArgs),
    /// AUROC/AUPR of in-distribution versus out-of-distribution score files.
    Eval(EvalArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Training dump; repeat to concatenate several dumps of the same layer.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Where to write the model archive.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Tied)]
    kind: KindArg,
    #[arg(long, default_value_t = preprocess::DEFAULT_POOL_FACTOR)]
    pool: usize,
    #[arg(long, default_value_t = preprocess::DEFAULT_RETAIN)]
    retain: f64,
    #[arg(long = "gmm-max-k", default_value_t = 10)]
    gmm_max_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Score file destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// In-distribution score file, then out-of-distribution score file.
    #[arg(long, num_args = 1, required = true)]
    input: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = PositiveArg::In)]
    positive: PositiveArg,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
    /// Also write the threshold sweep here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Tied,
    Sep,
    Gmm,
}

impl From<KindArg> for DensityKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Tied => DensityKind::Tied,
            KindArg::Sep => DensityKind::Separate,
            KindArg::Gmm => DensityKind::Gmm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PositiveArg {
    In,
    Ood,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Tsv,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

/// Exit code for a library error, given the code used for
/// non-I/O failures of the current stage.
fn classify_error(err: &Error, stage_code: u8) -> u8 {
    match err {
        Error::DimensionMismatch { .. } => EXIT_DIMS,
        Error::Io(_)
        | Error::BadMagic { .. }
        | Error::UnsupportedVersion(_)
        | Error::TruncatedFile(_)
        | Error::LabelOutOfRange { .. }
        | Error::InvalidFeatureSet(_)
        | Error::CorruptArchive(_)
        | Error::MalformedScores(_)
        | Error::EmptyScoreList => EXIT_IO,
        _ => stage_code,
    }
}

fn context(path: &Path, stage_code: u8) -> impl Fn(Error) -> Failure + '_ {
    move |e| Failure::new(classify_error(&e, stage_code), format!("{}: {e}", path.display()))
}

fn read_dump(path: &Path) -> Result<FeatureSet, Failure> {
    features::read_feature_dump(path).map_err(context(path, EXIT_IO))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn concat(sets: Vec<FeatureSet>) -> Result<FeatureSet, Failure> {
    let mut iter = sets.into_iter();
    let mut first = iter.next().expect("clap requires at least one input");
    for other in iter {
        if other.n_dims != first.n_dims || other.spatial_shape != first.spatial_shape {
            return Err(Failure::new(
                EXIT_DIMS,
                format!(
                    "input dumps disagree on feature shape ({} vs {} dims)",
                    first.n_dims, other.n_dims
                ),
            ));
        }
        first.labels.extend(other.labels);
        first.data.extend(other.data);
    }
    Ok(first)
}

fn cmd_fit(args: &FitArgs) -> Result<(), Failure> {
    if args.pool == 0 {
        return Err(Failure::new(EXIT_IO, "--pool must be at least 1"));
    }
    if !(args.retain > 0.0 && args.retain <= 1.0) {
        return Err(Failure::new(EXIT_IO, "--retain must lie in (0, 1]"));
    }
    if args.gmm_max_k == 0 {
        return Err(Failure::new(EXIT_IO, "--gmm-max-k must be at least 1"));
    }
    let sets = args.input.iter().map(|p| read_dump(p)).collect::<Result<Vec<_>, _>>()?;
    let train = concat(sets)?;
    let fit_err = |e: Error| Failure::new(classify_error(&e, EXIT_FIT), format!("fit failed: {e}"));

    let counts = train.class_counts();
    if counts.iter().all(|&c| c == 0) {
        return Err(fit_err(Error::NoLabeledSamples));
    }
    let pre = preprocess::fit_preprocessor(&train, args.pool, args.retain).map_err(fit_err)?;
    let z = preprocess::transform(&pre, &train).map_err(fit_err)?;
    let cfg = FitConfig {
        gmm_max_components: args.gmm_max_k,
        seed: args.seed,
        ..FitConfig::new(args.kind.into())
    };
    let model = density::fit(&z, &cfg).map_err(fit_err)?;

    let mut report = String::new();
    let _ = writeln!(report, "layer {}", train.layer_name);
    for (k, c) in counts.iter().enumerate() {
        let _ = writeln!(report, "class {k}: {c} samples");
    }
    let _ = writeln!(
        report,
        "pca: {} -> {} -> {} dims, retained variance {:.6}",
        pre.input_dims(),
        pre.pooled_dims(),
        pre.output_dims(),
        pre.explained_variance_ratio()
    );
    if let ClassDensities::Gmm(mixtures) = model.params() {
        for (k, m) in mixtures.iter().enumerate() {
            let _ = writeln!(report, "class {k}: selected K = {}", m.n_components());
        }
    }
    let events = model.jitter_events();
    if events.is_empty() {
        let _ = writeln!(report, "jitter: none");
    }
    for (class, comp, jitter) in events {
        let who = match (class, comp) {
            (None, _) => "shared covariance".to_string(),
            (Some(k), None) => format!("class {k}"),
            (Some(k), Some(c)) => format!("class {k} component {c}"),
        };
        let _ = writeln!(report, "jitter: {who} regularised with {jitter:e}");
    }

    let provenance = format!(
        "layer={}; kind={}; pool={}; retain={}; gmm_max_k={}; seed={}; rng={RNG_NAME}",
        train.layer_name,
        model.kind().name(),
        args.pool,
        args.retain,
        args.gmm_max_k,
        args.seed
    );
    let archive = ModelArchive::new(pre, model, provenance).map_err(fit_err)?;
    archive::save_model(&archive, &args.model).map_err(context(&args.model, EXIT_IO))?;
    let _ = writeln!(report, "model written to {}", args.model.display());
    print!("{report}");
    Ok(())
}

fn score_dump(args: &ScoreArgs) -> Result<ScoreTable, Failure> {
    let model = archive::load_model(&args.model).map_err(context(&args.model, EXIT_IO))?;
    let test = read_dump(&args.input)?;
    scoring::score_set(&model.density, &model.preprocessor, &test).map_err(context(&args.input, EXIT_IO))
}

fn cmd_score(args: &ScoreArgs) -> Result<(), Failure> {
    let table = score_dump(args)?;
    let text = scoring::format_scores(&table);
    match &args.out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_classify(args: &ScoreArgs) -> Result<(), Failure> {
    let table = score_dump(args)?;
    let acc = scoring::classify_accuracy(&table).map_err(context(&args.input, EXIT_IO))?;
    if let Some(path) = &args.out {
        write_text(path, &scoring::format_scores(&table))?;
    }
    println!("accuracy {:.1}% ({} samples)", 100.0 * acc, table.n_samples());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    let [in_path, ood_path] = args.input.as_slice() else {
        return Err(Failure::new(
            EXIT_IO,
            "eval takes exactly two --input files: in-distribution then out-of-distribution",
        ));
    };
    let load = |p: &PathBuf| scoring::import_scores(p).map_err(context(p, EXIT_IO));
    let (ins, outs) = (load(in_path)?, load(ood_path)?);
    let positive = match args.positive {
        PositiveArg::In => PositiveClass::InDistribution,
        PositiveArg::Ood => PositiveClass::OutOfDistribution,
    };
    let eval_err = |e: Error| Failure::new(classify_error(&e, EXIT_IO), format!("eval failed: {e}"));
    let report = metrics::evaluate_detection(&ins.uncertainty, &outs.uncertainty, positive).map_err(eval_err)?;
    if let Some(path) = &args.out {
        let sweep = metrics::sweep_thresholds(&ins.uncertainty, &outs.uncertainty).map_err(eval_err)?;
        write_text(path, &metrics::format_sweep(&sweep))?;
    }
    match args.format {
        FormatArg::Text => print!("{}", report.to_text()),
        FormatArg::Tsv => print!("{}", report.to_delimited()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Score(a) => cmd_score(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
