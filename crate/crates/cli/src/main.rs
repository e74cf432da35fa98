//! `dnc` command line: synthetic data generation, training, evaluation, and
//! exemplar-based explanations.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric/degenerate
//! error. All metrics go to stdout as `key=value` lines so runs are easy to
//! script against.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dnc_core::error::Error;
use dnc_core::explain::{build_rule, exhaustive_rivals, similarity_report};
use dnc_core::io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use dnc_core::io::dataset::{gen_synthetic, load_csv, save_csv, SyntheticSpec};
use dnc_core::trainer::{
    evaluate, knn_induction_eval, ClassifierKind, ClassifierState, ClusterAlgo, KSpec,
    TrainConfig, Trainer,
};

#[derive(Parser)]
#[command(
    name = "dnc",
    about = "Deep nearest centroids: nonparametric classification with sub-centroid explanations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-blob dataset with coarse and fine labels.
    GenData(GenDataArgs),
    /// Train a classifier and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Print a similarity report (and optionally an IF...THEN rule) for one query.
    Explain(ExplainArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of coarse classes C.
    #[arg(long)]
    classes: usize,
    /// Gaussian subclusters per class G (fine label = class * G + subcluster).
    #[arg(long)]
    subclusters: usize,
    /// Input dimensionality m.
    #[arg(long)]
    dim: usize,
    /// Points per subcluster.
    #[arg(long)]
    per_cluster: usize,
    /// Spread of each blob around its unit-direction center.
    #[arg(long)]
    sigma: f64,
    /// Scale of the class-specific offset against the shared anchor
    /// directions; smaller values interleave the classes more tightly.
    #[arg(long, default_value_t = 0.4)]
    class_spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Optional second CSV receiving a held-out split.
    #[arg(long)]
    test_out: Option<PathBuf>,
    /// Fraction of rows diverted to --test-out.
    #[arg(long, default_value_t = 0.2)]
    test_frac: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Dnc,
    Softmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClusterAlgoArg {
    Sinkhorn,
    Kmeans,
}

#[derive(Args)]
struct TrainArgs {
    /// Training CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ClassifierArg::Dnc)]
    classifier: ClassifierArg,
    /// Sub-centroids per class.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// File with one K per class (overrides --k).
    #[arg(long)]
    k_map: Option<PathBuf>,
    /// Momentum coefficient for sub-centroid updates.
    #[arg(long, default_value_t = 0.999)]
    mu: f64,
    /// Sinkhorn temperature.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Sinkhorn row/column passes per assignment.
    #[arg(long, default_value_t = 3)]
    sinkhorn_iters: usize,
    /// Feature-memory capacity in batches (0 disables the memory).
    #[arg(long, default_value_t = 8)]
    memory_batches: usize,
    /// Similarity scale inside the loss softmax.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Anchor sub-centroids to real observations after this many epochs.
    #[arg(long)]
    anchor_after_epoch: Option<usize>,
    /// Clustering algorithm (kmeans is a comparison arm).
    #[arg(long, value_enum, default_value_t = ClusterAlgoArg::Sinkhorn)]
    cluster_algo: ClusterAlgoArg,
    /// Embedding dimensionality d.
    #[arg(long, default_value_t = 16)]
    output_dim: usize,
    /// Comma-separated hidden layer widths; "none" trains a linear encoder.
    #[arg(long, default_value = "64,64")]
    hidden_dims: String,
    /// Optional polynomial learning-rate decay power.
    #[arg(long)]
    poly_decay_power: Option<f64>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Evaluation CSV.
    #[arg(long)]
    data: PathBuf,
    /// Also run the coarse-to-fine 1-NN induction protocol (needs fine labels).
    #[arg(long, default_value_t = false)]
    knn_fine: bool,
    /// Training CSV supplying the 1-NN reference points for --knn-fine.
    #[arg(long)]
    train_data: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset CSV; the query row and any rule anchors resolve against it.
    #[arg(long)]
    data: PathBuf,
    /// Row to explain.
    #[arg(long)]
    query_index: usize,
    /// Number of top-scoring classes in the similarity report.
    #[arg(long, default_value_t = 4)]
    top_m: usize,
    /// Also print the IF...THEN rule of this class over exhaustive rivals.
    #[arg(long)]
    emit_rule: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version displays are successful runs.
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Data(_) | Error::Checkpoint(_) | Error::Io(_) => 2,
        Error::DegenerateInput(_) | Error::Shape(_) | Error::Contract(_) => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Explain(args) => explain(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<(), Error> {
    let dataset = gen_synthetic(&SyntheticSpec {
        classes: args.classes,
        subclusters: args.subclusters,
        dim: args.dim,
        per_cluster: args.per_cluster,
        sigma: args.sigma,
        seed: args.seed,
        class_spread: args.class_spread,
    })?;
    match args.test_out {
        Some(test_path) => {
            let (train, test) = dataset.split(args.test_frac, args.seed)?;
            save_csv(&args.out, &train)?;
            save_csv(&test_path, &test)?;
            println!("train_rows={}", train.len());
            println!("test_rows={}", test.len());
        }
        None => {
            save_csv(&args.out, &dataset)?;
            println!("rows={}", dataset.len());
        }
    }
    Ok(())
}

fn read_k_map(path: &PathBuf) -> Result<Vec<usize>, Error> {
    let text = std::fs::read_to_string(path)?;
    let ks: Vec<usize> = text
        .split([',', '\n', ' '])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Data(format!("k-map entry '{s}' is not an integer")))
        })
        .collect::<Result<_, _>>()?;
    if ks.is_empty() {
        return Err(Error::Data("k-map file has no entries".into()));
    }
    Ok(ks)
}

fn parse_hidden_dims(text: &str) -> Result<Vec<usize>, Error> {
    let trimmed = text.trim();
    if trimmed.is_empty() || trimmed == "none" {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|c| {
            c.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad hidden width '{c}'")))
        })
        .collect()
}

fn train(args: TrainArgs) -> Result<(), Error> {
    let dataset = load_csv(&args.data)?;
    let k = match &args.k_map {
        Some(path) => KSpec::PerClass(read_k_map(path)?),
        None => KSpec::Global(args.k),
    };
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        classifier: match args.classifier {
            ClassifierArg::Dnc => ClassifierKind::Dnc,
            ClassifierArg::Softmax => ClassifierKind::Softmax,
        },
        k,
        mu: args.mu,
        epsilon: args.epsilon,
        sinkhorn_iters: args.sinkhorn_iters,
        memory_batches: args.memory_batches,
        temperature: args.temperature,
        learning_rate: args.lr,
        seed: args.seed,
        anchor_after_epoch: args.anchor_after_epoch,
        cluster_algo: match args.cluster_algo {
            ClusterAlgoArg::Sinkhorn => ClusterAlgo::Sinkhorn,
            ClusterAlgoArg::Kmeans => ClusterAlgo::KMeans,
        },
        output_dim: args.output_dim,
        hidden_dims: parse_hidden_dims(&args.hidden_dims)?,
        poly_decay_power: args.poly_decay_power,
    };
    let mut trainer = Trainer::new(config, &dataset)?;
    let report = trainer.run()?;
    for (i, loss) in report.loss_curve.iter().enumerate() {
        println!("epoch={} loss={loss}", i + 1);
    }
    if report.degenerate_updates > 0 {
        eprintln!(
            "warning: {} degenerate momentum updates were skipped",
            report.degenerate_updates
        );
    }
    let metrics = evaluate(&trainer.state.encoder, &trainer.state.classifier, &dataset)?;
    println!("train_top1={}", metrics.top1);
    save_checkpoint(&args.out, &Checkpoint::from_state(&trainer.state))?;
    println!("checkpoint={}", args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Error> {
    let state = load_checkpoint(&args.ckpt)?.into_state()?;
    let dataset = load_csv(&args.data)?;
    let metrics = evaluate(&state.encoder, &state.classifier, &dataset)?;
    println!("top1={}", metrics.top1);
    println!("top5={}", metrics.top5);
    println!("top5_defined={}", metrics.top5_defined);
    if args.knn_fine {
        let train_path = args.train_data.ok_or_else(|| {
            Error::Config("--knn-fine needs --train-data for the 1-NN reference set".into())
        })?;
        let train = load_csv(&train_path)?;
        let acc = knn_induction_eval(&state.encoder, &train, &dataset)?;
        println!("knn_fine_top1={acc}");
    }
    Ok(())
}

fn explain(args: ExplainArgs) -> Result<(), Error> {
    let state = load_checkpoint(&args.ckpt)?.into_state()?;
    let dataset = load_csv(&args.data)?;
    if args.query_index >= dataset.len() {
        return Err(Error::Data(format!(
            "query index {} out of range for {} rows",
            args.query_index,
            dataset.len()
        )));
    }
    let bank = match &state.classifier {
        ClassifierState::Dnc { bank, .. } => bank,
        ClassifierState::Softmax(_) => {
            return Err(Error::Data(
                "explain requires a dnc checkpoint; this one holds a softmax classifier".into(),
            ))
        }
    };
    let query_input = dataset.inputs().select_rows(&[args.query_index]);
    let (query_feature, _) = state.encoder.forward(&query_input)?;
    let report = similarity_report(args.query_index, query_feature.row(0), bank, args.top_m)?;
    print!("{report}");
    println!("label={}", dataset.labels()[args.query_index]);

    if let Some(class_id) = args.emit_rule {
        if class_id >= bank.num_classes() {
            return Err(Error::Data(format!(
                "--emit-rule class {class_id} out of range for {} classes",
                bank.num_classes()
            )));
        }
        let rule = build_rule(bank, class_id, &exhaustive_rivals(bank, class_id))?;
        println!("rule={rule}");
    }
    Ok(())
}
