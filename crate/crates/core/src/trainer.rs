//! Deterministic mini-batch training for the three strategies.
//!
//! * `Cls` trains model and head with the margin cosine loss on labels.
//! * `Kt` regresses the student's embeddings onto a frozen teacher's; labels
//!   are never read.
//! * `Cl` mixes both with weight `alpha` on the classification term.
//!
//! Optimizer is SGD with momentum, weight decay folded into the gradient
//! before the momentum update, and a step schedule dividing the learning rate
//! by 10 at each milestone. The last partial batch of an epoch is kept.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::embedder::{backward, forward, ClassificationHead, EmbeddingModel};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, cosface_loss, kt_loss, CosFaceConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub milestones: Vec<usize>,
    pub seed: u64,
    /// Standard deviation of Gaussian noise added to each input feature per
    /// batch. Zero disables augmentation.
    pub jitter: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            epochs: 64,
            milestones: vec![40, 48, 52],
            seed: 0,
            jitter: 0.0,
        }
    }
}

impl OptimizerConfig {
    /// Schedule used for teachers trained on authentic data.
    pub fn teacher_default() -> Self {
        OptimizerConfig {
            epochs: 32,
            milestones: vec![20, 28],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad(format!("jitter must be >= 0, got {}", self.jitter));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1".into());
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "milestones must be strictly increasing: {:?}",
                self.milestones
            ));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.epochs) {
            return bad(format!(
                "milestones {:?} must be below epochs {}",
                self.milestones, self.epochs
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Cls,
    Kt,
    Cl { alpha: f64 },
}

impl Strategy {
    pub fn needs_teacher(&self) -> bool {
        !matches!(self, Strategy::Cls)
    }

    pub fn uses_head(&self) -> bool {
        !matches!(self, Strategy::Kt)
    }

    /// `CLS`, `KT`, or `CL(alpha)` with alpha in shortest form.
    pub fn label(&self) -> String {
        match self {
            Strategy::Cls => "CLS".into(),
            Strategy::Kt => "KT".into(),
            Strategy::Cl { alpha } => format!("CL({alpha:e})"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    /// Accepts `cls`, `kt`, `cl` (alpha 1e-5) and `cl:<alpha>`, case-insensitive.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "cls" => Ok(Strategy::Cls),
            "kt" => Ok(Strategy::Kt),
            "cl" => Ok(Strategy::Cl { alpha: 1e-5 }),
            other => {
                let alpha = other
                    .strip_prefix("cl:")
                    .and_then(|a| a.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))?;
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(Error::Config(format!(
                        "alpha must lie in [0, 1], got {alpha}"
                    )));
                }
                Ok(Strategy::Cl { alpha })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_lr: Vec<f64>,
    pub epochs: usize,
    pub wall_seconds: f64,
}

impl TrainReport {
    /// CSV `epoch,lr,mean_loss`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,mean_loss\n");
        for (e, (lr, loss)) in self.epoch_lr.iter().zip(&self.epoch_loss).enumerate() {
            out.push_str(&format!("{e},{lr},{loss}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub fn lr_at(epoch: usize, opt: &OptimizerConfig) -> f64 {
    let drops = opt.milestones.iter().filter(|&&m| m <= epoch).count();
    opt.learning_rate / 10f64.powi(drops as i32)
}

/// One SGD update: `v = momentum*v + (g + wd*theta)`, `theta -= lr*v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Dimension(format!(
            "params {}, grads {}, velocity {}",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("gradient entry {i} is not finite")));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + (g + weight_decay * *p);
        *p -= lr * *v;
    }
    Ok(())
}

struct Velocity {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
    head: Vec<f64>,
}

impl Velocity {
    fn zeros(model: &EmbeddingModel, head: &ClassificationHead) -> Self {
        Velocity {
            layers: model
                .layers()
                .iter()
                .map(|l| {
                    (
                        vec![0.0; l.weights.as_slice().len()],
                        vec![0.0; l.bias.len()],
                    )
                })
                .collect(),
            head: vec![0.0; head.weights.as_slice().len()],
        }
    }
}

fn check_compatibility(
    model: &EmbeddingModel,
    head: &ClassificationHead,
    data: &LabeledDataset,
    strategy: Strategy,
    teacher: Option<&EmbeddingModel>,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Input("training data is empty".into()));
    }
    if model.input_dim() != data.input_dim() {
        return Err(Error::Dimension(format!(
            "model expects {} features, data has {}",
            model.input_dim(),
            data.input_dim()
        )));
    }
    if let Strategy::Cl { alpha } = strategy {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
    }
    if strategy.uses_head() {
        if head.num_classes() != data.num_classes() {
            return Err(Error::Config(format!(
                "head has {} classes, data has {}",
                head.num_classes(),
                data.num_classes()
            )));
        }
        if head.embedding_dim() != model.embedding_dim() {
            return Err(Error::Dimension(format!(
                "head width {} vs embedding width {}",
                head.embedding_dim(),
                model.embedding_dim()
            )));
        }
    }
    if strategy.needs_teacher() {
        let t = teacher.ok_or_else(|| {
            Error::Config(format!(
                "strategy {} requires a teacher model",
                strategy.label()
            ))
        })?;
        if t.input_dim() != data.input_dim() || t.embedding_dim() != model.embedding_dim() {
            return Err(Error::Dimension(format!(
                "teacher maps {}->{}, student maps {}->{}",
                t.input_dim(),
                t.embedding_dim(),
                model.input_dim(),
                model.embedding_dim()
            )));
        }
    }
    Ok(())
}

/// Trains `model` (and `head` for strategies with a classification term) in
/// place. The teacher is only read.
pub fn train(
    model: &mut EmbeddingModel,
    head: &mut ClassificationHead,
    data: &LabeledDataset,
    strategy: Strategy,
    opt: &OptimizerConfig,
    loss_cfg: &CosFaceConfig,
    teacher: Option<&EmbeddingModel>,
) -> Result<TrainReport> {
    opt.validate()?;
    loss_cfg.validate()?;
    check_compatibility(model, head, data, strategy, teacher)?;
    let started = Instant::now();

    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = seed::rng(opt.seed);
    let mut jitter_rng = seed::rng(seed::derive_seed(opt.seed, "jitter", 0));
    let mut velocity = Velocity::zeros(model, head);
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(opt.epochs),
        epoch_lr: Vec::with_capacity(opt.epochs),
        epochs: opt.epochs,
        wall_seconds: 0.0,
    };

    for epoch in 0..opt.epochs {
        let lr = lr_at(epoch, opt);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(opt.batch_size).enumerate() {
            let mut batch = data.samples().select_rows(idx);
            if opt.jitter > 0.0 {
                let noise = seed::gaussian_vec(&mut jitter_rng, batch.as_slice().len(), opt.jitter);
                for (x, e) in batch.as_mut_slice().iter_mut().zip(noise) {
                    *x += e;
                }
            }
            let (emb, cache) = forward(model, &batch)?;
            let out = match strategy {
                Strategy::Kt => {
                    let t = teacher.expect("checked").embed(&batch)?;
                    kt_loss(&emb, &t)?
                }
                Strategy::Cls => {
                    let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
                    cosface_loss(&emb, &labels, head, loss_cfg)?
                }
                Strategy::Cl { alpha } => {
                    let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
                    let t = teacher.expect("checked").embed(&batch)?;
                    combined_loss(&emb, &labels, head, &t, alpha, loss_cfg)?
                }
            };
            loss_sum += out.value * idx.len() as f64;
            let grads = backward(model, &cache, &out.grad_embeddings)?;
            let at = |e: Error| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            };
            for (layer, (g, (vw, vb))) in model
                .layers_mut()
                .iter_mut()
                .zip(grads.layers.iter().zip(velocity.layers.iter_mut()))
            {
                sgd_step(
                    layer.weights.as_mut_slice(),
                    g.weights.as_slice(),
                    vw,
                    lr,
                    opt.momentum,
                    opt.weight_decay,
                )
                .map_err(at)?;
                sgd_step(
                    &mut layer.bias,
                    &g.bias,
                    vb,
                    lr,
                    opt.momentum,
                    opt.weight_decay,
                )
                .map_err(at)?;
            }
            if let Some(gh) = &out.grad_head {
                sgd_step(
                    head.weights.as_mut_slice(),
                    gh.as_slice(),
                    &mut velocity.head,
                    lr,
                    opt.momentum,
                    opt.weight_decay,
                )
                .map_err(at)?;
            }
        }
        report.epoch_loss.push(loss_sum / n as f64);
        report.epoch_lr.push(lr);
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Flat `key = value` training configuration. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFileConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub milestones: Vec<usize>,
    pub seed: u64,
    pub jitter: f64,
    pub margin: f64,
    pub scale: f64,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: crate::embedder::Activation,
    pub init_seed: u64,
    pub head_seed: u64,
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        let loss = CosFaceConfig::default();
        let model = crate::embedder::ModelConfig::default();
        TrainFileConfig {
            learning_rate: opt.learning_rate,
            momentum: opt.momentum,
            weight_decay: opt.weight_decay,
            batch_size: opt.batch_size,
            epochs: opt.epochs,
            milestones: opt.milestones,
            seed: opt.seed,
            jitter: opt.jitter,
            margin: loss.margin,
            scale: loss.scale,
            hidden_dims: model.hidden_dims,
            embedding_dim: model.embedding_dim,
            activation: model.activation,
            init_seed: 1,
            head_seed: 2,
        }
    }
}

impl TrainFileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            milestones: self.milestones.clone(),
            seed: self.seed,
            jitter: self.jitter,
        }
    }

    pub fn cosface(&self) -> CosFaceConfig {
        CosFaceConfig {
            margin: self.margin,
            scale: self.scale,
        }
    }

    pub fn model(&self, input_dim: usize) -> crate::embedder::ModelConfig {
        crate::embedder::ModelConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            embedding_dim: self.embedding_dim,
            activation: self.activation,
            activate_output: false,
            init_seed: self.init_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_authentic, Provenance};
    use crate::embedder::{init_model, Activation, Dense, ModelConfig};
    use approx::assert_relative_eq;

    fn small_model(input_dim: usize, seed: u64) -> EmbeddingModel {
        init_model(&ModelConfig {
            input_dim,
            hidden_dims: vec![16],
            embedding_dim: 8,
            activation: Activation::Relu,
            activate_output: false,
            init_seed: seed,
        })
        .unwrap()
    }

    fn quick_opt(epochs: usize) -> OptimizerConfig {
        OptimizerConfig {
            epochs,
            milestones: vec![],
            batch_size: 16,
            seed: 3,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn schedule_divides_at_milestones() {
        let opt = OptimizerConfig::default();
        assert_eq!(lr_at(0, &opt), 0.1);
        assert_relative_eq!(lr_at(41, &opt), 0.01, max_relative = 1e-15);
        assert_relative_eq!(lr_at(53, &opt), 1e-4, max_relative = 1e-15);
        assert_eq!(lr_at(39, &opt), 0.1);
        assert_eq!(lr_at(40, &opt), lr_at(47, &opt));
    }

    #[test]
    fn sgd_step_hand_values() {
        // plain gradient descent
        let (mut p, mut v) = (vec![1.0], vec![0.0]);
        sgd_step(&mut p, &[0.5], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p, vec![0.95]);
        // fixed point
        let (mut p, mut v) = (vec![2.0], vec![0.0]);
        sgd_step(&mut p, &[0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!((p[0], v[0]), (2.0, 0.0));
        // v = 0.9*0 + (0.5 + 5e-4*1) = 0.5005; theta = 1 - 0.1*0.5005 = 0.94995
        let (mut p, mut v) = (vec![1.0], vec![0.0]);
        sgd_step(&mut p, &[0.5], &mut v, 0.1, 0.9, 5e-4).unwrap();
        assert_relative_eq!(v[0], 0.5005, max_relative = 1e-15);
        assert_relative_eq!(p[0], 0.94995, max_relative = 1e-15);
        assert!(matches!(
            sgd_step(&mut p, &[f64::NAN], &mut v, 0.1, 0.9, 0.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn one_step_on_half_square_from_one() {
        // loss theta^2/2 has gradient theta
        let (mut p, mut v) = (vec![1.0], vec![0.0]);
        let g = p.clone();
        sgd_step(&mut p, &g, &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_relative_eq!(p[0], 0.9, max_relative = 1e-15);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let data = make_authentic(4, 5, 8, 0.3, 1).unwrap();
        let mut m = small_model(8, 2);
        let mut h = ClassificationHead::init(8, 4, 3).unwrap();
        let (m0, h0) = (m.clone(), h.clone());
        let opt = OptimizerConfig {
            learning_rate: 0.0,
            ..quick_opt(3)
        };
        train(
            &mut m,
            &mut h,
            &data,
            Strategy::Cls,
            &opt,
            &CosFaceConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(m, m0);
        assert_eq!(h, h0);
    }

    #[test]
    fn cls_reduces_loss_on_separable_data() {
        for seed in 0..3 {
            let data = make_authentic(4, 12, 8, 0.2, seed).unwrap();
            let mut m = small_model(8, seed + 10);
            let mut h = ClassificationHead::init(8, 4, seed + 20).unwrap();
            let r = train(
                &mut m,
                &mut h,
                &data,
                Strategy::Cls,
                &quick_opt(10),
                &CosFaceConfig::default(),
                None,
            )
            .unwrap();
            assert!(r.epoch_loss[9] < r.epoch_loss[0], "{:?}", r.epoch_loss);
        }
    }

    #[test]
    fn training_is_deterministic_and_leaves_teacher_alone() {
        let data = make_authentic(4, 6, 8, 0.3, 5).unwrap();
        let teacher = small_model(8, 99);
        let before = teacher.checksum();
        let run = || {
            let mut m = small_model(8, 1);
            let mut h = ClassificationHead::init(8, 4, 2).unwrap();
            let r = train(
                &mut m,
                &mut h,
                &data,
                Strategy::Cl { alpha: 0.5 },
                &quick_opt(4),
                &CosFaceConfig::default(),
                Some(&teacher),
            )
            .unwrap();
            (m, h, r.epoch_loss)
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert_eq!(teacher.checksum(), before);
    }

    #[test]
    fn kt_ignores_labels() {
        let data = make_authentic(4, 6, 8, 0.3, 5).unwrap();
        let mut permuted_labels = data.labels().to_vec();
        permuted_labels.rotate_left(7);
        let permuted = LabeledDataset::new(
            data.samples().clone(),
            permuted_labels,
            4,
            Provenance::Authentic,
        )
        .unwrap();
        let teacher = small_model(8, 99);
        let run = |d: &LabeledDataset| {
            let mut m = small_model(8, 1);
            let mut h = ClassificationHead::init(8, 4, 2).unwrap();
            train(
                &mut m,
                &mut h,
                d,
                Strategy::Kt,
                &quick_opt(3),
                &CosFaceConfig::default(),
                Some(&teacher),
            )
            .unwrap();
            m.flatten()
        };
        assert_eq!(run(&data), run(&permuted));
    }

    #[test]
    fn precondition_errors() {
        let data = make_authentic(4, 4, 8, 0.3, 5).unwrap();
        let mut m = small_model(8, 1);
        let mut h = ClassificationHead::init(8, 4, 2).unwrap();
        let cfg = CosFaceConfig::default();
        assert!(matches!(
            train(
                &mut m,
                &mut h,
                &data,
                Strategy::Kt,
                &quick_opt(1),
                &cfg,
                None
            ),
            Err(Error::Config(_))
        ));
        let mut h3 = ClassificationHead::init(8, 3, 2).unwrap();
        assert!(matches!(
            train(
                &mut m,
                &mut h3,
                &data,
                Strategy::Cls,
                &quick_opt(1),
                &cfg,
                None
            ),
            Err(Error::Config(_))
        ));
        let bad = OptimizerConfig {
            milestones: vec![5, 3],
            ..quick_opt(10)
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = OptimizerConfig {
            milestones: vec![10],
            ..quick_opt(10)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn report_trace_matches_schedule() {
        let data = make_authentic(3, 4, 8, 0.3, 5).unwrap();
        let mut m = small_model(8, 1);
        let mut h = ClassificationHead::init(8, 3, 2).unwrap();
        let opt = OptimizerConfig {
            epochs: 6,
            milestones: vec![2, 4],
            ..quick_opt(6)
        };
        let r = train(
            &mut m,
            &mut h,
            &data,
            Strategy::Cls,
            &opt,
            &CosFaceConfig::default(),
            None,
        )
        .unwrap();
        let expected: Vec<f64> = (0..6).map(|e| lr_at(e, &opt)).collect();
        assert_eq!(r.epoch_lr, expected);
        assert_eq!(r.to_csv().lines().count(), 7);
    }

    #[test]
    fn non_finite_gradient_names_the_epoch() {
        let data = make_authentic(3, 4, 8, 0.3, 5).unwrap();
        let mut m = small_model(8, 1);
        let mut h = ClassificationHead::init(8, 3, 2).unwrap();
        let opt = OptimizerConfig {
            learning_rate: 1e300,
            momentum: 0.0,
            ..quick_opt(5)
        };
        let err = train(
            &mut m,
            &mut h,
            &data,
            Strategy::Cls,
            &opt,
            &CosFaceConfig::default(),
            None,
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                Error::Numeric(_) | Error::Input(_) | Error::Degenerate(_)
            ),
            "{err}"
        );
    }

    #[test]
    fn config_file_defaults_and_unknown_keys() {
        let c = TrainFileConfig::parse("").unwrap();
        assert_eq!(c.optimizer(), OptimizerConfig::default());
        assert_eq!(c.cosface(), CosFaceConfig::default());
        let c = TrainFileConfig::parse("epochs = 5\nmilestones = [2, 4]\nlearning_rate = 0.05\n")
            .unwrap();
        assert_eq!(c.epochs, 5);
        assert_eq!(c.milestones, vec![2, 4]);
        assert!(matches!(
            TrainFileConfig::parse("epochz = 3"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("CLS".parse::<Strategy>().unwrap(), Strategy::Cls);
        assert_eq!("kt".parse::<Strategy>().unwrap(), Strategy::Kt);
        assert_eq!(
            "cl:2e-5".parse::<Strategy>().unwrap(),
            Strategy::Cl { alpha: 2e-5 }
        );
        assert!("cl:3".parse::<Strategy>().is_err());
        assert!("arcface".parse::<Strategy>().is_err());
        assert_eq!(Strategy::Cl { alpha: 1e-5 }.label(), "CL(1e-5)");
    }

    #[test]
    fn dense_is_used_for_velocity_shapes() {
        let m = small_model(8, 1);
        let h = ClassificationHead::init(8, 4, 2).unwrap();
        let v = Velocity::zeros(&m, &h);
        let shapes: Vec<usize> = m.layers().iter().map(|l: &Dense| l.bias.len()).collect();
        assert_eq!(
            v.layers.iter().map(|(_, b)| b.len()).collect::<Vec<_>>(),
            shapes
        );
    }
}
