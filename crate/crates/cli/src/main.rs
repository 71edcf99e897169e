//! `identikit` command line. Every subcommand writes under `--out`:
//!
//! ```text
//! gen         authentic.csv synthetic.csv manifest.txt
//! train       model.idk train.csv
//! embed       embeddings.csv
//! eval        verify.txt | identify.txt | link.txt
//! link        link.txt link_{intra_authentic,intra_synthetic,cross}_hist.csv
//! experiment  see the experiment module
//! report      report.txt (also printed)
//! ```
//!
//! Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use identikit::bioeval::{
    cross_scores, embed_dataset, histogram_export, identification_top1, intra_scores,
    linkage_report, parse_kv, verification_report,
};
use identikit::datagen::{
    derive_subset, fit_generator, make_authentic, read_csv, sample_synthetic, write_csv,
    LabeledDataset, Provenance,
};
use identikit::embedder::{init_model, load_model, save_model, ClassificationHead, EmbeddingModel};
use identikit::experiment::{run_experiment, ExperimentConfig, RunManifest, StageSeeds};
use identikit::trainer::{train, Strategy, TrainFileConfig};
use identikit::{Error, Result};

#[derive(Parser)]
#[command(
    name = "identikit",
    version,
    about = "Identity leakage toolkit for synthetic training data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate authentic and synthetic datasets from an experiment config.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a dataset CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "cls")]
        strategy: String,
        /// Weight of the classification term; only with `--strategy cl`.
        #[arg(long)]
        alpha: Option<f64>,
        /// Model file of the teacher; required by `kt` and `cl`.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Keep only the first N samples of every class.
        #[arg(long)]
        subset: Option<usize>,
        /// Training config (flat TOML); defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed; replaces the config's init, head and shuffle seeds
        /// with the ones the experiment pipeline derives for students.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write embeddings of a dataset.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on dataset files.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Dataset to evaluate; the authentic side in link mode.
        #[arg(long)]
        data: PathBuf,
        /// Synthetic dataset, link mode only.
        #[arg(long)]
        synthetic: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linkage report between an authentic and a synthetic dataset.
    Link {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        authentic: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full study.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; overrides the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise a finished run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Verify,
    Identify,
    Link,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_experiment_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn parse_strategy(name: &str, alpha: Option<f64>) -> Result<Strategy> {
    let strategy: Strategy = name.parse()?;
    match (strategy, alpha) {
        (Strategy::Cl { .. }, Some(a)) => format!("cl:{a}").parse(),
        (_, Some(_)) => Err(Error::Config(
            "--alpha only applies to --strategy cl".into(),
        )),
        (s, None) => Ok(s),
    }
}

fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    read_csv(path, Provenance::Authentic)
}

fn cmd_gen(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = load_experiment_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let seeds = StageSeeds::new(cfg.seed);
    ensure_dir(out)?;
    let authentic = make_authentic(
        cfg.num_classes,
        cfg.per_class,
        cfg.input_dim,
        cfg.sigma_authentic,
        seeds.authentic,
    )?;
    let generator = fit_generator(&authentic, cfg.lambda, cfg.sigma_synthetic, seeds.generator)?;
    let synthetic = sample_synthetic(&generator, cfg.per_class, seeds.synthetic)?;
    let mut manifest = RunManifest::new(
        cfg.seed,
        seeds
            .entries()
            .into_iter()
            .filter(|(n, _)| ["authentic", "generator", "synthetic"].contains(n))
            .map(|(n, s)| (n.to_string(), s))
            .collect(),
    );
    for (name, ds) in [("authentic.csv", &authentic), ("synthetic.csv", &synthetic)] {
        write_csv(ds, &out.join(name))?;
        manifest.add_file(out, name)?;
    }
    manifest.complete = true;
    manifest.write(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &Path,
    strategy: &str,
    alpha: Option<f64>,
    teacher: Option<&Path>,
    subset: Option<usize>,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let strategy = parse_strategy(strategy, alpha)?;
    let teacher: Option<EmbeddingModel> = match (strategy.needs_teacher(), teacher) {
        (true, None) => {
            return Err(Error::Config(format!(
                "strategy {} needs a teacher model: pass --teacher <FILE>",
                strategy.label()
            )))
        }
        (true, Some(p)) => Some(load_model(p)?.0),
        (false, _) => None,
    };
    let mut cfg = match config {
        Some(p) => TrainFileConfig::load(p)?,
        None => TrainFileConfig::default(),
    };
    if let Some(s) = seed {
        let seeds = StageSeeds::new(s);
        cfg.init_seed = seeds.student_init;
        cfg.head_seed = seeds.student_head;
        cfg.seed = seeds.student_shuffle;
    }
    let mut ds = load_dataset(data)?;
    if let Some(n) = subset {
        ds = derive_subset(&ds, n)?;
    }
    let mut model = init_model(&cfg.model(ds.input_dim()))?;
    let mut head = ClassificationHead::init(cfg.embedding_dim, ds.num_classes(), cfg.head_seed)?;
    let report = train(
        &mut model,
        &mut head,
        &ds,
        strategy,
        &cfg.optimizer(),
        &cfg.cosface(),
        teacher.as_ref(),
    )?;
    ensure_dir(out)?;
    report.write_csv(&out.join("train.csv"))?;
    save_model(
        &out.join("model.idk"),
        &model,
        strategy.uses_head().then_some(&head),
    )
}

fn cmd_embed(model: &Path, data: &Path, out: &Path) -> Result<()> {
    let (model, _) = load_model(model)?;
    let ds = load_dataset(data)?;
    let (emb, labels) = embed_dataset(&model, &ds)?;
    ensure_dir(out)?;
    let mut text = String::from("label");
    for j in 0..emb.cols() {
        text.push_str(&format!(",e{j}"));
    }
    text.push('\n');
    for (i, y) in labels.iter().enumerate() {
        text.push_str(&y.to_string());
        for v in emb.row(i) {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    write(&out.join("embeddings.csv"), &text)
}

fn cmd_eval(
    model: &Path,
    mode: Mode,
    data: &Path,
    synthetic: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let (model, head) = load_model(model)?;
    let ds = load_dataset(data)?;
    let (name, text) = match mode {
        Mode::Verify => {
            let report = verification_report(&intra_scores(&model, &ds)?)?;
            ("verify.txt", report.to_kv(""))
        }
        Mode::Identify => {
            let head = head.ok_or_else(|| {
                Error::Config(
                    "identify mode needs a model saved with its classification head".into(),
                )
            })?;
            let (emb, labels) = embed_dataset(&model, &ds)?;
            let top1 = identification_top1(&emb, &labels, &head)?;
            (
                "identify.txt",
                format!(
                    "id_top1 = {:.3}\nid_top1_exact = {top1}\nsamples = {}\n",
                    top1.percent(),
                    labels.len()
                ),
            )
        }
        Mode::Link => {
            let synthetic = synthetic
                .ok_or_else(|| Error::Config("link mode needs --synthetic <FILE>".into()))?;
            let syn = read_csv(synthetic, Provenance::Synthetic)?;
            ("link.txt", linkage_report(&model, &ds, &syn)?.to_kv())
        }
    };
    ensure_dir(out)?;
    write(&out.join(name), &text)
}

fn cmd_link(
    model: &Path,
    authentic: &Path,
    synthetic: &Path,
    bins: usize,
    out: &Path,
) -> Result<()> {
    let (model, _) = load_model(model)?;
    let auth = load_dataset(authentic)?;
    let syn = read_csv(synthetic, Provenance::Synthetic)?;
    let report = linkage_report(&model, &auth, &syn)?;
    ensure_dir(out)?;
    write(&out.join("link.txt"), &report.to_kv())?;
    for (name, scores) in [
        ("intra_authentic", intra_scores(&model, &auth)?),
        ("intra_synthetic", intra_scores(&model, &syn)?),
        ("cross", cross_scores(&model, &auth, &syn)?),
    ] {
        histogram_export(&scores, bins)?.write_csv(&out.join(format!("link_{name}_hist.csv")))?;
    }
    println!(
        "expected_nonmatches_per_100 = {}",
        report.expected_nonmatches_per_100
    );
    Ok(())
}

fn cmd_experiment(config: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let mut cfg = load_experiment_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let root = out.map_or_else(|| PathBuf::from(&cfg.out), Path::to_path_buf);
    let outcome = run_experiment(&cfg, &root)?;
    println!(
        "{} rows written to {}",
        outcome.rows.len(),
        root.join("summary.csv").display()
    );
    Ok(())
}

/// Aligns `summary.csv` into columns and appends the headline linkage numbers.
fn render_report(summary: &str, link: Option<&str>) -> Result<String> {
    let mut lines = summary.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Input("summary.csv is empty".into()))?
        .split(',')
        .collect();
    let mut table = vec![header.iter().map(|h| h.to_string()).collect::<Vec<_>>()];
    for line in lines.filter(|l| !l.is_empty()) {
        let cells: Vec<String> = line.split(',').map(str::to_string).collect();
        table.push(cells);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|k| {
            table
                .iter()
                .map(|r| r.get(k).map_or(0, String::len))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(k, (c, w))| {
                if k < 2 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    if let Some(link) = link {
        out.push('\n');
        for (k, v) in parse_kv(link)? {
            if !k.ends_with("_exact") && !k.ends_with("_threshold") {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
    }
    Ok(out)
}

fn cmd_report(out: &Path) -> Result<()> {
    let path = out.join("summary.csv");
    let summary = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let link = std::fs::read_to_string(out.join("reports/link.txt")).ok();
    let text = render_report(&summary, link.as_deref())?;
    write(&out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, seed, out } => cmd_gen(config.as_deref(), seed, &out),
        Command::Train {
            data,
            strategy,
            alpha,
            teacher,
            subset,
            config,
            seed,
            out,
        } => cmd_train(
            &data,
            &strategy,
            alpha,
            teacher.as_deref(),
            subset,
            config.as_deref(),
            seed,
            &out,
        ),
        Command::Embed { model, data, out } => cmd_embed(&model, &data, &out),
        Command::Eval {
            model,
            mode,
            data,
            synthetic,
            out,
        } => cmd_eval(&model, mode, &data, synthetic.as_deref(), &out),
        Command::Link {
            model,
            authentic,
            synthetic,
            bins,
            out,
        } => cmd_link(&model, &authentic, &synthetic, bins, &out),
        Command::Experiment { config, seed, out } => {
            cmd_experiment(config.as_deref(), seed, out.as_deref())
        }
        Command::Report { out } => cmd_report(&out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
