//! Labeled identity data on the unit sphere.
//!
//! Authentic identities are random unit prototypes; each sample is the
//! unit-normalized prototype plus isotropic Gaussian noise. The noise has
//! per-coordinate standard deviation `sigma / sqrt(input_dim)`, so `sigma` is
//! the expected noise norm relative to the unit prototype, independent of
//! dimension.
//!
//! The synthetic generator mixes each authentic class mean with a fresh random
//! direction, weighted by the leakage `lambda`, and samples around the result.
//! Samples are stored class-major: all samples of class 0, then class 1, ...

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{normalized, Matrix};
use crate::seed::{self, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Authentic,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityPrototype {
    pub class_id: usize,
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    pub prototypes: Vec<IdentityPrototype>,
    pub sigma_intra: f64,
    pub leakage: f64,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn new(
        samples: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} samples but {} labels",
                samples.rows(),
                labels.len()
            )));
        }
        let mut counts = vec![0usize; num_classes];
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::Protocol(format!(
                    "label {y} outside [0, {num_classes})"
                )));
            }
            counts[y] += 1;
        }
        if let Some(c) = counts.iter().position(|&k| k == 0) {
            return Err(Error::Protocol(format!("class {c} has no samples")));
        }
        Ok(LabeledDataset {
            samples,
            labels,
            num_classes,
            provenance,
        })
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Unit-normalized mean of each class.
    pub fn class_mean_directions(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.input_dim();
        let mut sums = vec![vec![0.0; d]; self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            for (s, v) in sums[y].iter_mut().zip(self.samples.row(i)) {
                *s += v;
            }
        }
        sums.iter()
            .enumerate()
            .map(|(c, s)| {
                normalized(s).ok_or_else(|| Error::Degenerate(format!("class {c} has a zero mean")))
            })
            .collect()
    }
}

fn noisy_unit(rng: &mut SeededRng, prototype: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let std = sigma / (prototype.len() as f64).sqrt();
    let noise = seed::gaussian_vec(rng, prototype.len(), std);
    let v: Vec<f64> = prototype.iter().zip(noise).map(|(p, n)| p + n).collect();
    normalized(&v).ok_or_else(|| Error::Degenerate("sample collapsed to zero".into()))
}

fn sample_around(
    prototypes: &[Vec<f64>],
    per_class: usize,
    sigma: f64,
    rng: &mut SeededRng,
    provenance: Provenance,
) -> Result<LabeledDataset> {
    let dim = prototypes.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(prototypes.len() * per_class * dim);
    let mut labels = Vec::with_capacity(prototypes.len() * per_class);
    for (c, p) in prototypes.iter().enumerate() {
        for _ in 0..per_class {
            if sigma == 0.0 {
                data.extend_from_slice(p);
            } else {
                data.extend(noisy_unit(rng, p, sigma)?);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(
        Matrix::from_vec(labels.len(), dim, data)?,
        labels,
        prototypes.len(),
        provenance,
    )
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be >= 0, got {sigma}")));
    }
    Ok(())
}

/// Random unit prototypes for `num_classes` identities, in class order.
pub fn authentic_prototypes(num_classes: usize, input_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed);
    (0..num_classes)
        .map(|_| seed::random_unit(&mut rng, input_dim))
        .collect()
}

pub fn make_authentic(
    num_classes: usize,
    per_class: usize,
    input_dim: usize,
    sigma_intra: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    if per_class < 2 {
        return Err(Error::Config("need at least 2 samples per class".into()));
    }
    if input_dim < 8 {
        return Err(Error::Config("input_dim must be at least 8".into()));
    }
    check_sigma(sigma_intra)?;
    let mut rng = seed::rng(seed);
    let prototypes: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| seed::random_unit(&mut rng, input_dim))
        .collect();
    sample_around(
        &prototypes,
        per_class,
        sigma_intra,
        &mut rng,
        Provenance::Authentic,
    )
}

pub fn fit_generator(
    authentic: &LabeledDataset,
    lambda: f64,
    sigma_intra: f64,
    seed: u64,
) -> Result<GeneratorModel> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    check_sigma(sigma_intra)?;
    let means = authentic.class_mean_directions()?;
    let mut rng = seed::rng(seed);
    let prototypes = means
        .into_iter()
        .enumerate()
        .map(|(c, p)| {
            let r = seed::random_unit(&mut rng, p.len());
            let mixed: Vec<f64> = p
                .iter()
                .zip(&r)
                .map(|(pi, ri)| lambda * pi + (1.0 - lambda) * ri)
                .collect();
            let direction = normalized(&mixed)
                .ok_or_else(|| Error::Degenerate(format!("class {c} prototype cancelled out")))?;
            Ok(IdentityPrototype {
                class_id: c,
                direction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratorModel {
        prototypes,
        sigma_intra,
        leakage: lambda,
        seed,
    })
}

pub fn sample_synthetic(
    generator: &GeneratorModel,
    k_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if k_per_class == 0 {
        return Err(Error::Config("k_per_class must be at least 1".into()));
    }
    let protos: Vec<Vec<f64>> = generator
        .prototypes
        .iter()
        .map(|p| p.direction.clone())
        .collect();
    let mut rng = seed::rng(seed);
    sample_around(
        &protos,
        k_per_class,
        generator.sigma_intra,
        &mut rng,
        Provenance::Synthetic,
    )
}

/// Keeps the first `per_class` samples of every class, preserving order.
pub fn derive_subset(ds: &LabeledDataset, per_class: usize) -> Result<LabeledDataset> {
    if let Some((c, k)) = ds
        .class_counts()
        .into_iter()
        .enumerate()
        .find(|&(_, k)| k < per_class)
    {
        return Err(Error::Protocol(format!(
            "class {c} has {k} samples, subset needs {per_class}"
        )));
    }
    if per_class == 0 {
        return Err(Error::Protocol("subset size must be at least 1".into()));
    }
    let mut taken = vec![0usize; ds.num_classes];
    let keep: Vec<usize> = ds
        .labels
        .iter()
        .enumerate()
        .filter_map(|(i, &y)| {
            taken[y] += 1;
            (taken[y] <= per_class).then_some(i)
        })
        .collect();
    let labels = keep.iter().map(|&i| ds.labels[i]).collect();
    LabeledDataset::new(
        ds.samples.select_rows(&keep),
        labels,
        ds.num_classes,
        ds.provenance,
    )
}

/// CSV with header `label,f0,f1,...`; floats in shortest round-trip form.
pub fn write_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["label".to_string()];
    header.extend((0..ds.input_dim()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let mut record = Vec::with_capacity(ds.input_dim() + 1);
    for (i, y) in ds.labels.iter().enumerate() {
        record.clear();
        record.push(y.to_string());
        record.extend(ds.samples.row(i).iter().map(|v| format!("{v}")));
        w.write_record(&record).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset CSV. The class count is `max(label) + 1`.
pub fn read_csv(path: &Path, provenance: Provenance) -> Result<LabeledDataset> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.get(0) != Some("label") {
        return Err(Error::format(path, "first column must be `label`"));
    }
    for (j, h) in header.iter().skip(1).enumerate() {
        if h != format!("f{j}") {
            return Err(Error::format(path, format!("unexpected column `{h}`")));
        }
    }
    let dim = header.len() - 1;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| Error::format(path, format!("row {}: bad {what}", row + 1));
        labels.push(rec[0].parse::<usize>().map_err(|_| bad("label"))?);
        for v in rec.iter().skip(1) {
            data.push(v.parse::<f64>().map_err(|_| bad("feature"))?);
        }
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(
        Matrix::from_vec(labels.len(), dim, data)?,
        labels,
        num_classes,
        provenance,
    )
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}
