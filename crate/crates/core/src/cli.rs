//! The `ci-pipeline` command line.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::analysis::{
    assign_external, attribute_table, group_partitions, partition_report, rank_images, write_attribute_csv,
    write_report_csv,
};
use crate::error::{Error, Result};
use crate::io::{self as store, SyntheticSpec};
use crate::pipeline::{self, ReducerChoice};
use crate::regress::{self, RidgePenalty};
use crate::types::{
    CiRegressor, EmbeddingSet, LikesIndex, PartitionModel, PipelineConfig, DEFAULT_KMEANS_MAX_ITERS,
    DEFAULT_KMEANS_TOL, DEFAULT_MIN_LIKES, DEFAULT_N_PARTITIONS, DEFAULT_REDUCED_DIM, DEFAULT_SEED, DEFAULT_THETA_CI,
    DEFAULT_THETA_IMAGE,
};

pub const LOG_ENV: &str = "CI_PIPELINE_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "ci-pipeline",
    version,
    about = "Common-interest scoring of image collections"
)]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write planted synthetic embeddings, likes and ground truth.
    Synth(SynthArgs),
    /// Fit a partition model and print its partitions by CI.
    Fit(FitArgs),
    /// Fit the CI regressor on a partition model's images.
    Train(TrainArgs),
    /// Score embeddings with a regressor, in input order.
    Score(ScoreArgs),
    /// Score embeddings and sort by score descending.
    Rank(ScoreArgs),
    /// Split a model's partitions into Comm, Inter and Subj.
    Group(ModelArgs),
    /// Attribute percentages and quartiles per group.
    Attrs(AttrsArgs),
    /// Group shares of an external embedding collection.
    Assign(AssignArgs),
    /// Final partitions sorted by CI.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory for embeddings.ciem, likes.csv and ground_truth.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SyntheticSpec::default().n_topics)]
    n_topics: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().topic_dim)]
    dim: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().n_users)]
    n_users: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().common_topic_count)]
    common_topics: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().common_like_prob)]
    common_like_prob: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().niche_users_per_topic)]
    niche_users: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().images_per_topic)]
    images_per_topic: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().cluster_std)]
    cluster_std: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().max_likes_per_topic)]
    max_likes: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().seed)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReducerFlag {
    Pca,
    Identity,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    likes: PathBuf,
    /// Where to write the partition model JSON.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with pipeline settings; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReducerFlag::Pca)]
    reducer: ReducerFlag,
    #[arg(long, default_value_t = DEFAULT_N_PARTITIONS)]
    n_partitions: usize,
    #[arg(long, default_value_t = DEFAULT_THETA_IMAGE)]
    theta_image: f64,
    #[arg(long, default_value_t = DEFAULT_THETA_CI)]
    theta_ci: f64,
    /// Ignored with `--reducer identity`.
    #[arg(long, default_value_t = DEFAULT_REDUCED_DIM)]
    reduced_dim: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_LIKES)]
    min_likes: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_KMEANS_MAX_ITERS)]
    kmeans_max_iters: usize,
    #[arg(long, default_value_t = DEFAULT_KMEANS_TOL)]
    kmeans_tol: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Where to write the regressor JSON.
    #[arg(long)]
    out: PathBuf,
    /// Ridge penalty; omitted means 1e-4 * trace(Xc^T Xc) / d.
    #[arg(long)]
    ridge_lambda: Option<f64>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    regressor: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Clamp scores to [0, 1].
    #[arg(long)]
    clamp: bool,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct AttrsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    attributes: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AssignArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Optional CSV of `image_id,group` per input image.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json_line(out: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    let mut w = sink(out)?;
    serde_json::to_writer(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    store::read_embeddings(BufReader::new(File::open(path)?))
}

fn load_likes(path: &Path) -> Result<LikesIndex> {
    store::read_likes(BufReader::new(File::open(path)?))
}

fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_topics: args.n_topics,
        topic_dim: args.dim,
        n_users: args.n_users,
        common_topic_count: args.common_topics,
        common_like_prob: args.common_like_prob,
        niche_users_per_topic: args.niche_users,
        images_per_topic: args.images_per_topic,
        cluster_std: args.cluster_std,
        max_likes_per_topic: args.max_likes,
        seed: args.seed,
    };
    let data = store::generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out)?;
    let mut w = BufWriter::new(File::create(args.out.join("embeddings.ciem"))?);
    store::write_embedding_set(&data.embeddings, &mut w)?;
    let mut w = BufWriter::new(File::create(args.out.join("likes.csv"))?);
    store::write_likes(&data.likes, &mut w)?;
    w.flush()?;
    let truth = json!({ "spec": spec, "truth": data.truth });
    write_json_line(Some(&args.out.join("ground_truth.json")), &truth)
}

fn fit_config(args: &FitArgs, matches: &ArgMatches) -> Result<PipelineConfig> {
    let mut config: PipelineConfig = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => PipelineConfig::default(),
    };
    let given = |id: &str| args.config.is_none() || matches.value_source(id) == Some(ValueSource::CommandLine);
    if given("n_partitions") {
        config.n_partitions = args.n_partitions;
    }
    if given("theta_image") {
        config.theta_image = args.theta_image;
    }
    if given("theta_ci") {
        config.theta_ci = args.theta_ci;
    }
    if given("reduced_dim") {
        config.reduced_dim = args.reduced_dim;
    }
    if given("min_likes") {
        config.min_likes = args.min_likes;
    }
    if given("seed") {
        config.seed = args.seed;
    }
    if given("kmeans_max_iters") {
        config.kmeans_max_iters = args.kmeans_max_iters;
    }
    if given("kmeans_tol") {
        config.kmeans_tol = args.kmeans_tol;
    }
    config.validate()?;
    Ok(config)
}

fn fit(args: &FitArgs, matches: &ArgMatches) -> Result<()> {
    let config = fit_config(args, matches)?;
    let embeddings = load_embeddings(&args.embeddings)?;
    let likes = load_likes(&args.likes)?;
    let reducer = match args.reducer {
        ReducerFlag::Pca => ReducerChoice::Pca,
        ReducerFlag::Identity => ReducerChoice::Identity,
    };
    let model = pipeline::fit(&embeddings, &likes, &config, reducer)?;
    store::save_model(&model, &args.out)?;
    let mut out = sink(None)?;
    write_report_csv(&partition_report(&model)?, &mut out)
}

fn train(args: &TrainArgs) -> Result<()> {
    let model: PartitionModel = store::load_model(&args.model)?;
    let embeddings = load_embeddings(&args.embeddings)?;
    let penalty = args.ridge_lambda.map_or(RidgePenalty::Auto, RidgePenalty::Fixed);
    let report = regress::train(&model, &embeddings, penalty, args.train_fraction, args.seed)?;
    store::save_model(&report.regressor, &args.out)?;
    let summary = json!({
        "n_train": report.n_train,
        "n_test": report.n_test,
        "train_r2": report.train_r2,
        "test_r2": report.test_r2,
        "ridge_lambda": report.regressor.ridge_lambda,
    });
    write_json_line(None, &summary)
}

fn score(args: &ScoreArgs, sorted: bool) -> Result<()> {
    let regressor: CiRegressor = store::load_model(&args.regressor)?;
    let embeddings = load_embeddings(&args.embeddings)?;
    let scored = if sorted {
        rank_images(&regressor, &embeddings, args.clamp)?
    } else {
        let scores = regress::predict(&regressor, &embeddings.to_matrix(), args.clamp)?;
        embeddings.ids().map(str::to_owned).zip(scores).collect()
    };
    let mut w = csv::Writer::from_writer(sink(args.out.as_deref())?);
    w.write_record(["image_id", "score"])?;
    for (id, s) in scored {
        w.write_record([id, s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn groups_of(model: &PartitionModel) -> Result<crate::types::GroupAssignment> {
    group_partitions(&model.ci_scores, &model.final_sizes())
}

fn group(args: &ModelArgs) -> Result<()> {
    let model: PartitionModel = store::load_model(&args.model)?;
    write_json_line(args.out.as_deref(), &groups_of(&model)?)
}

fn attrs(args: &AttrsArgs) -> Result<()> {
    let model: PartitionModel = store::load_model(&args.model)?;
    let attributes = store::read_attributes(BufReader::new(File::open(&args.attributes)?))?;
    let table = attribute_table(&attributes, &groups_of(&model)?, &model.final_assignment())?;
    match args.format {
        Format::Csv => write_attribute_csv(&table, sink(args.out.as_deref())?),
        Format::Json => write_json_line(args.out.as_deref(), &table),
    }
}

fn assign(args: &AssignArgs) -> Result<()> {
    let model: PartitionModel = store::load_model(&args.model)?;
    let embeddings = load_embeddings(&args.embeddings)?;
    let result = assign_external(&model, &groups_of(&model)?, &embeddings)?;
    if let Some(path) = &args.labels {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["image_id", "group"])?;
        for (id, g) in &result.labels {
            w.write_record([id.as_str(), g.name()])?;
        }
        w.flush()?;
    }
    let [comm, inter, subj] = result.shares;
    let summary = json!({
        "total": result.labels.len(),
        "counts": { "comm": result.counts[0], "inter": result.counts[1], "subj": result.counts[2] },
        "shares": { "comm": comm, "inter": inter, "subj": subj },
    });
    write_json_line(args.out.as_deref(), &summary)
}

fn report(args: &ReportArgs) -> Result<()> {
    let model: PartitionModel = store::load_model(&args.model)?;
    let rows = partition_report(&model)?;
    match args.format {
        Format::Csv => write_report_csv(&rows, sink(args.out.as_deref())?),
        Format::Json => write_json_line(args.out.as_deref(), &rows),
    }
}

fn dispatch(cli: &Cli, matches: &ArgMatches) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit(a, matches.subcommand_matches("fit").expect("fit matches")),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a, false),
        Command::Rank(a) => score(a, true),
        Command::Group(a) => group(a),
        Command::Attrs(a) => attrs(a),
        Command::Assign(a) => assign(a),
        Command::Report(a) => report(a),
    }
}

fn is_usage(err: &Error) -> bool {
    matches!(
        err,
        Error::NPartitions(_)
            | Error::ThetaImage(_)
            | Error::ThetaCi(_)
            | Error::ReducedDim(_)
            | Error::MinLikes(_)
            | Error::MaxIters(_)
            | Error::KMeansTol(_)
            | Error::Fraction(_)
    )
}

fn report_error(message: &str) {
    let line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("{}", json!({ "error": line }));
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 2 on usage errors, 1 on data errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "error")).try_init();
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            report_error(&e.to_string());
            return 2;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            report_error(&e.to_string());
            return 2;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            report_error(&e.to_string());
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli, &matches)) {
        Ok(()) => 0,
        // a closed downstream pipe, as with `| head`
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            report_error(&e.to_string());
            if is_usage(&e) {
                2
            } else {
                1
            }
        }
    }
}
