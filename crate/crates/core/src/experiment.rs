//! End-to-end study: authentic identities, a teacher trained on them, a
//! leaky generator, synthetic subsets, and a grid of students evaluated on
//! fresh held-out identities.
//!
//! Output layout under the run directory:
//!
//! ```text
//! config.toml                  resolved configuration
//! manifest.txt                 seeds, completeness, sha256 of every file
//! summary.csv                  one row per (dataset, strategy) plus the baseline
//! data/{authentic,synthetic,heldout}.csv
//! models/teacher.idk           models/<cell>.idk
//! train/teacher.csv            train/<cell>.csv
//! reports/link.txt             teacher-scored linkage report
//! reports/link_{intra_authentic,intra_synthetic,cross}_hist.csv
//! reports/<cell>.txt           held-out verification, identification, linkage
//! ```
//!
//! `<cell>` is `<dataset>_<strategy>`, e.g. `synthetic-20_cl-1e-5`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bioeval::{
    balanced_pairs, embed_dataset, histogram_export, identification_top1, intra_scores,
    linkage_report, verification_accuracy, verification_report, LinkageReport, Rate,
    VerificationReport,
};
use crate::datagen::{
    derive_subset, fit_generator, make_authentic, sample_synthetic, write_csv, LabeledDataset,
};
use crate::embedder::{
    init_model, save_model, Activation, ClassificationHead, EmbeddingModel, ModelConfig,
};
use crate::error::{Error, Result};
use crate::losses::CosFaceConfig;
use crate::seed::derive_seed;
use crate::trainer::{train, OptimizerConfig, Strategy};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_classes: usize,
    /// Samples per class for both authentic and synthetic data.
    pub per_class: usize,
    pub input_dim: usize,
    pub sigma_authentic: f64,
    pub sigma_synthetic: f64,
    pub lambda: f64,
    pub heldout_classes: usize,
    pub heldout_per_class: usize,

    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
    pub margin: f64,
    pub scale: f64,

    pub momentum: f64,
    pub weight_decay: f64,
    pub teacher_learning_rate: f64,
    pub teacher_batch_size: usize,
    pub teacher_epochs: usize,
    pub teacher_milestones: Vec<usize>,
    pub student_learning_rate: f64,
    pub student_batch_size: usize,
    pub student_epochs: usize,
    pub student_milestones: Vec<usize>,

    /// `cls`, `kt`, `cl` (one entry per value of `alphas`) or `cl:<alpha>`.
    pub strategies: Vec<String>,
    pub subsets: Vec<usize>,
    pub alphas: Vec<f64>,
    pub histogram_bins: usize,
    pub seed: u64,
    pub out: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let loss = CosFaceConfig::default();
        let teacher = OptimizerConfig::teacher_default();
        let student = OptimizerConfig::default();
        ExperimentConfig {
            num_classes: 100,
            per_class: 60,
            input_dim: 64,
            sigma_authentic: 2.5,
            sigma_synthetic: 2.0,
            lambda: 0.5,
            heldout_classes: 100,
            heldout_per_class: 10,
            hidden_dims: model.hidden_dims,
            embedding_dim: model.embedding_dim,
            activation: model.activation,
            margin: loss.margin,
            scale: loss.scale,
            momentum: student.momentum,
            weight_decay: student.weight_decay,
            teacher_learning_rate: teacher.learning_rate,
            teacher_batch_size: teacher.batch_size,
            teacher_epochs: teacher.epochs,
            teacher_milestones: teacher.milestones,
            student_learning_rate: student.learning_rate,
            student_batch_size: student.batch_size,
            student_epochs: student.epochs,
            student_milestones: student.milestones,
            strategies: vec!["cls".into(), "kt".into(), "cl".into()],
            subsets: vec![10, 20, 40, 60],
            alphas: vec![1e-5, 2e-5],
            histogram_bins: 50,
            seed: 0,
            out: "results".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 || self.heldout_classes < 2 {
            return bad("need at least 2 training and 2 held-out classes".into());
        }
        if self.per_class < 3 || self.heldout_per_class < 3 {
            return bad("the pair protocol needs at least 3 samples per class".into());
        }
        if self.subsets.is_empty() {
            return bad("at least one subset size is required".into());
        }
        if let Some(&n) = self.subsets.iter().find(|&&n| n < 3 || n > self.per_class) {
            return bad(format!(
                "subset size {n} must lie in [3, per_class = {}]",
                self.per_class
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.sigma_authentic >= 0.0 && self.sigma_synthetic >= 0.0) {
            return bad("noise scales must be >= 0".into());
        }
        if self.histogram_bins < 2 {
            return bad("histogram_bins must be at least 2".into());
        }
        self.strategy_list()?;
        self.model_config(0).validate()?;
        self.loss().validate()?;
        self.teacher_optimizer(0).validate()?;
        self.student_optimizer(0).validate()?;
        Ok(())
    }

    /// Expanded strategies, in config order.
    pub fn strategy_list(&self) -> Result<Vec<Strategy>> {
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        let mut out = Vec::new();
        for s in &self.strategies {
            if s.trim().eq_ignore_ascii_case("cl") {
                if self.alphas.is_empty() {
                    return Err(Error::Config(
                        "strategy `cl` needs a non-empty alphas list".into(),
                    ));
                }
                for &alpha in &self.alphas {
                    out.push(format!("cl:{alpha}").parse()?);
                }
            } else {
                out.push(s.parse()?);
            }
        }
        Ok(out)
    }

    pub fn model_config(&self, init_seed: u64) -> ModelConfig {
        ModelConfig {
            input_dim: self.input_dim,
            hidden_dims: self.hidden_dims.clone(),
            embedding_dim: self.embedding_dim,
            activation: self.activation,
            activate_output: false,
            init_seed,
        }
    }

    pub fn loss(&self) -> CosFaceConfig {
        CosFaceConfig {
            margin: self.margin,
            scale: self.scale,
        }
    }

    pub fn teacher_optimizer(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.teacher_learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.teacher_batch_size,
            epochs: self.teacher_epochs,
            milestones: self.teacher_milestones.clone(),
            seed,
            jitter: 0.0,
        }
    }

    pub fn student_optimizer(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.student_learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.student_batch_size,
            epochs: self.student_epochs,
            milestones: self.student_milestones.clone(),
            seed,
            jitter: 0.0,
        }
    }
}

/// Every seed the pipeline uses, derived from the master seed by stage name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSeeds {
    pub authentic: u64,
    pub teacher_init: u64,
    pub teacher_head: u64,
    pub teacher_shuffle: u64,
    pub generator: u64,
    pub synthetic: u64,
    pub heldout: u64,
    pub heldout_pairs: u64,
    pub student_init: u64,
    pub student_head: u64,
    pub student_shuffle: u64,
}

impl StageSeeds {
    pub fn new(master: u64) -> Self {
        let d = |stage: &str| derive_seed(master, stage, 0);
        StageSeeds {
            authentic: d("authentic"),
            teacher_init: d("teacher-init"),
            teacher_head: d("teacher-head"),
            teacher_shuffle: d("teacher-shuffle"),
            generator: d("generator"),
            synthetic: d("synthetic"),
            heldout: d("heldout"),
            heldout_pairs: d("heldout-pairs"),
            student_init: d("student-init"),
            student_head: d("student-head"),
            student_shuffle: d("student-shuffle"),
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("authentic", self.authentic),
            ("teacher-init", self.teacher_init),
            ("teacher-head", self.teacher_head),
            ("teacher-shuffle", self.teacher_shuffle),
            ("generator", self.generator),
            ("synthetic", self.synthetic),
            ("heldout", self.heldout),
            ("heldout-pairs", self.heldout_pairs),
            ("student-init", self.student_init),
            ("student-head", self.student_head),
            ("student-shuffle", self.student_shuffle),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub master_seed: u64,
    pub complete: bool,
    pub failed_stage: Option<String>,
    pub seeds: Vec<(String, u64)>,
    /// Paths relative to the run directory, with hex sha256.
    pub files: Vec<(String, String)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RunManifest {
    pub fn new(master_seed: u64, seeds: Vec<(String, u64)>) -> Self {
        RunManifest {
            version: TOOLKIT_VERSION.into(),
            master_seed,
            complete: false,
            failed_stage: None,
            seeds,
            files: Vec::new(),
        }
    }

    /// Records the checksum of `root/rel`.
    pub fn add_file(&mut self, root: &Path, rel: &str) -> Result<()> {
        let path = root.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.files.push((rel.to_string(), sha256_hex(&bytes)));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "version = {}\nmaster_seed = {}\ncomplete = {}\n",
            self.version, self.master_seed, self.complete
        );
        if let Some(stage) = &self.failed_stage {
            out.push_str(&format!("failed_stage = {stage}\n"));
        }
        for (name, s) in &self.seeds {
            out.push_str(&format!("seed.{name} = {s}\n"));
        }
        for (rel, sum) in &self.files {
            out.push_str(&format!("sha256.{rel} = {sum}\n"));
        }
        out
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join("manifest.txt");
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub strategy: String,
    /// On the balanced held-out pair set; the error rates use every pair.
    pub verify_acc: Rate,
    pub eer: Rate,
    pub fmr100: Rate,
    pub fmr1000: Rate,
    /// `None` for strategies without a classification head.
    pub id_top1_synth: Option<Rate>,
    pub id_top1_auth: Option<Rate>,
}

pub const SUMMARY_HEADER: &str =
    "dataset,strategy,verify_acc,eer,fmr100,fmr1000,id_top1_synth,id_top1_auth";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let opt = |r: &Option<Rate>| r.map_or_else(|| "NA".to_string(), |r| r.to_string());
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.dataset,
            r.strategy,
            r.verify_acc,
            r.eer,
            r.fmr100,
            r.fmr1000,
            opt(&r.id_top1_synth),
            opt(&r.id_top1_auth)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub rows: Vec<SummaryRow>,
    /// Teacher-scored authentic vs full synthetic set.
    pub linkage: LinkageReport,
    pub manifest: RunManifest,
}

/// File-safe cell name.
pub fn cell_name(dataset: &str, strategy: &Strategy) -> String {
    let s = match strategy {
        Strategy::Cls => "cls".to_string(),
        Strategy::Kt => "kt".to_string(),
        Strategy::Cl { alpha } => format!("cl-{alpha:e}"),
    };
    format!("{dataset}_{s}")
}

struct Run {
    root: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest
            .files
            .push((rel.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    fn write_with(&mut self, rel: &str, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        f(&path)?;
        self.manifest.add_file(&self.root, rel)
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        f(self).map_err(|e| {
            self.manifest.failed_stage = Some(name.to_string());
            // best effort; the stage error is what the caller needs
            let _ = self.manifest.write(&self.root);
            Error::Stage {
                stage: name.to_string(),
                source: Box::new(e),
            }
        })
    }
}

fn report_text(
    heldout: &VerificationReport,
    balanced: (Rate, f64),
    id_synth: Option<Rate>,
    id_auth: Option<Rate>,
    link: &LinkageReport,
) -> String {
    let mut out = heldout.to_kv("heldout_");
    out.push_str(&format!("heldout_balanced_verify_acc = {}\n", balanced.0));
    out.push_str(&format!(
        "heldout_balanced_verify_acc_threshold = {}\n",
        balanced.1
    ));
    let opt = |r: Option<Rate>| r.map_or_else(|| "NA".to_string(), |r| r.to_string());
    out.push_str(&format!("id_top1_synth = {}\n", opt(id_synth)));
    out.push_str(&format!("id_top1_auth = {}\n", opt(id_auth)));
    out.push_str(&link.to_kv());
    out
}

struct Evaluated {
    row: SummaryRow,
    text: String,
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    dataset: &str,
    strategy: &Strategy,
    model: &EmbeddingModel,
    head: Option<&ClassificationHead>,
    own: &LabeledDataset,
    other: &LabeledDataset,
    heldout: &LabeledDataset,
    pair_seed: u64,
    link: (&LabeledDataset, &LabeledDataset),
) -> Result<Evaluated> {
    let heldout_scores = intra_scores(model, heldout)?;
    let verify = verification_report(&heldout_scores)?;
    let (verify_acc, verify_acc_threshold) =
        verification_accuracy(&balanced_pairs(&heldout_scores, pair_seed)?)?;
    let ident = |ds: &LabeledDataset| -> Result<Option<Rate>> {
        match head {
            Some(h) => {
                let (emb, labels) = embed_dataset(model, ds)?;
                Ok(Some(identification_top1(&emb, &labels, h)?))
            }
            None => Ok(None),
        }
    };
    let (own_id, other_id) = (ident(own)?, ident(other)?);
    let (id_synth, id_auth) = match own.provenance() {
        crate::datagen::Provenance::Synthetic => (own_id, other_id),
        crate::datagen::Provenance::Authentic => (other_id, own_id),
    };
    let link = linkage_report(model, link.0, link.1)?;
    Ok(Evaluated {
        text: report_text(
            &verify,
            (verify_acc, verify_acc_threshold),
            id_synth,
            id_auth,
            &link,
        ),
        row: SummaryRow {
            dataset: dataset.to_string(),
            strategy: strategy.label(),
            verify_acc,
            eer: verify.eer,
            fmr100: verify.fmr100,
            fmr1000: verify.fmr1000,
            id_top1_synth: id_synth,
            id_top1_auth: id_auth,
        },
    })
}

/// Runs the whole study into `root`. A failing stage leaves earlier outputs
/// in place and a manifest with `complete = false` naming the stage.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let strategies = cfg.strategy_list()?;
    let seeds = StageSeeds::new(cfg.seed);
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut run = Run {
        root: root.to_path_buf(),
        manifest: RunManifest::new(
            cfg.seed,
            seeds
                .entries()
                .into_iter()
                .map(|(n, s)| (n.to_string(), s))
                .collect(),
        ),
    };
    run.write("config.toml", cfg.to_toml().as_bytes())?;

    let authentic = run.stage("authentic", |r| {
        let ds = make_authentic(
            cfg.num_classes,
            cfg.per_class,
            cfg.input_dim,
            cfg.sigma_authentic,
            seeds.authentic,
        )?;
        r.write_with("data/authentic.csv", |p| write_csv(&ds, p))?;
        Ok(ds)
    })?;

    let (teacher, teacher_head) = run.stage("teacher", |r| {
        let mut model = init_model(&cfg.model_config(seeds.teacher_init))?;
        let mut head =
            ClassificationHead::init(cfg.embedding_dim, cfg.num_classes, seeds.teacher_head)?;
        let report = train(
            &mut model,
            &mut head,
            &authentic,
            Strategy::Cls,
            &cfg.teacher_optimizer(seeds.teacher_shuffle),
            &cfg.loss(),
            None,
        )?;
        r.write("train/teacher.csv", report.to_csv().as_bytes())?;
        r.write_with("models/teacher.idk", |p| save_model(p, &model, Some(&head)))?;
        Ok((model, head))
    })?;

    let synthetic = run.stage("synthetic", |r| {
        let generator =
            fit_generator(&authentic, cfg.lambda, cfg.sigma_synthetic, seeds.generator)?;
        let max_subset = *cfg.subsets.iter().max().expect("validated non-empty");
        let ds = sample_synthetic(&generator, max_subset.max(3), seeds.synthetic)?;
        r.write_with("data/synthetic.csv", |p| write_csv(&ds, p))?;
        Ok(ds)
    })?;

    let heldout = run.stage("heldout", |r| {
        let ds = make_authentic(
            cfg.heldout_classes,
            cfg.heldout_per_class,
            cfg.input_dim,
            cfg.sigma_authentic,
            seeds.heldout,
        )?;
        r.write_with("data/heldout.csv", |p| write_csv(&ds, p))?;
        Ok(ds)
    })?;

    let linkage = run.stage("linkage", |r| {
        let link = linkage_report(&teacher, &authentic, &synthetic)?;
        r.write("reports/link.txt", link.to_kv().as_bytes())?;
        for (name, scores) in [
            ("intra_authentic", intra_scores(&teacher, &authentic)?),
            ("intra_synthetic", intra_scores(&teacher, &synthetic)?),
            (
                "cross",
                crate::bioeval::cross_scores(&teacher, &authentic, &synthetic)?,
            ),
        ] {
            let hist = histogram_export(&scores, cfg.histogram_bins)?;
            r.write_with(&format!("reports/link_{name}_hist.csv"), |p| {
                hist.write_csv(p)
            })?;
        }
        Ok(link)
    })?;

    let mut rows = Vec::new();
    let baseline = run.stage("baseline", |r| {
        let ev = evaluate(
            "authentic",
            &Strategy::Cls,
            &teacher,
            Some(&teacher_head),
            &authentic,
            &synthetic,
            &heldout,
            seeds.heldout_pairs,
            (&authentic, &synthetic),
        )?;
        r.write("reports/authentic_cls.txt", ev.text.as_bytes())?;
        Ok(ev.row)
    })?;
    rows.push(baseline);

    for &n in &cfg.subsets {
        let dataset = format!("synthetic-{n}");
        let subset = run.stage(&dataset, |_| derive_subset(&synthetic, n))?;
        for strategy in &strategies {
            let cell = cell_name(&dataset, strategy);
            let row = run.stage(&cell, |r| {
                let mut model = init_model(&cfg.model_config(seeds.student_init))?;
                let mut head = ClassificationHead::init(
                    cfg.embedding_dim,
                    cfg.num_classes,
                    seeds.student_head,
                )?;
                let report = train(
                    &mut model,
                    &mut head,
                    &subset,
                    *strategy,
                    &cfg.student_optimizer(seeds.student_shuffle),
                    &cfg.loss(),
                    strategy.needs_teacher().then_some(&teacher),
                )?;
                let head = strategy.uses_head().then_some(head);
                r.write(&format!("train/{cell}.csv"), report.to_csv().as_bytes())?;
                r.write_with(&format!("models/{cell}.idk"), |p| {
                    save_model(p, &model, head.as_ref())
                })?;
                let ev = evaluate(
                    &dataset,
                    strategy,
                    &model,
                    head.as_ref(),
                    &subset,
                    &authentic,
                    &heldout,
                    seeds.heldout_pairs,
                    (&authentic, &subset),
                )?;
                r.write(&format!("reports/{cell}.txt"), ev.text.as_bytes())?;
                Ok(ev.row)
            })?;
            rows.push(row);
        }
    }

    run.stage("summary", |r| {
        r.write("summary.csv", summary_csv(&rows).as_bytes())
    })?;
    run.manifest.complete = true;
    run.manifest.write(root)?;
    Ok(ExperimentOutcome {
        rows,
        linkage,
        manifest: run.manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            num_classes: 4,
            per_class: 6,
            input_dim: 8,
            heldout_classes: 3,
            heldout_per_class: 4,
            hidden_dims: vec![8],
            embedding_dim: 4,
            teacher_epochs: 2,
            teacher_milestones: vec![1],
            student_epochs: 2,
            student_milestones: vec![1],
            subsets: vec![3, 6],
            teacher_batch_size: 8,
            student_batch_size: 8,
            histogram_bins: 10,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.strategy_list().unwrap().len(), 4);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(matches!(
            ExperimentConfig::parse("bogus = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("per_class = 10\nsubsets = [10, 20]"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("strategies = [\"nope\"]"),
            Err(Error::Config(_))
        ));
        let cfg =
            ExperimentConfig::parse("strategies = [\"kt\", \"cl:0.5\"]\nlambda = 0.25").unwrap();
        assert_eq!(
            cfg.strategy_list().unwrap(),
            vec![Strategy::Kt, Strategy::Cl { alpha: 0.5 }]
        );
    }

    #[test]
    fn summary_rows_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let out = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(out.rows.len(), 2 * 4 + 1);
        let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 9);
        assert!(csv
            .lines()
            .any(|l| l.starts_with("synthetic-3,KT,") && l.ends_with(",NA,NA")));
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(manifest.contains("complete = true"));
        for rel in [
            "summary.csv",
            "reports/link.txt",
            "models/teacher.idk",
            "data/heldout.csv",
        ] {
            assert!(manifest.contains(&format!("sha256.{rel} = ")), "{rel}");
        }
    }

    #[test]
    fn failing_stage_is_named_and_marked() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.student_learning_rate = 1e12;
        let err = run_experiment(&cfg, dir.path()).unwrap_err();
        let stage = match &err {
            Error::Stage { stage, .. } => stage.clone(),
            other => panic!("unexpected {other}"),
        };
        assert!(stage.starts_with("synthetic-3_"), "{stage}");
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(manifest.contains("complete = false"));
        assert!(manifest.contains(&format!("failed_stage = {stage}\n")));
        assert!(dir.path().join("models/teacher.idk").exists());
    }
}
