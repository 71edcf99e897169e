//! Biometric evaluation: pair protocol, cosine scoring, EER / FMR100 /
//! FMR1000, verification accuracy, top-1 identification and the
//! cross-dataset linkage report.
//!
//! A comparison with score `s` is a match at threshold `t` when `s >= t`, so
//! `FMR(t)` counts imposter scores `>= t` and `FNMR(t)` counts genuine scores
//! `< t`. The ROC of a finite score set is a step function; every distinct
//! operating point is reached by one of the candidate thresholds: each
//! distinct score, each midpoint between adjacent distinct scores, and the
//! next float above the maximum score (which accepts nothing).
//!
//! Rates are kept as exact fractions of pair counts.

use std::fmt;
use std::path::Path;

use crate::datagen::{csv_err, LabeledDataset};
use crate::embedder::{ClassificationHead, EmbeddingModel};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};

pub const FMR100_BOUND: f64 = 0.01;
pub const FMR1000_BOUND: f64 = 0.001;

/// An exact fraction of counts, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rate {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Rate {
    pub fn new(num: u64, den: u64) -> Self {
        assert!(den > 0, "rate with zero denominator");
        assert!(num <= den, "rate above one");
        let g = gcd(num, den).max(1);
        Rate {
            num: num / g,
            den: den / g,
        }
    }

    pub fn numerator(&self) -> u64 {
        self.num
    }

    pub fn denominator(&self) -> u64 {
        self.den
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `100 * rate`, computed as `(100 * num) / den` so whole percentages are exact.
    pub fn percent(&self) -> f64 {
        (100 * self.num as u128) as f64 / self.den as f64
    }
}

impl fmt::Display for Rate {
    /// Percentage with three decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}", self.percent())
    }
}

impl std::str::FromStr for Rate {
    type Err = Error;

    /// Parses `num/den`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("`{s}` is not a fraction num/den"));
        let (n, d) = s.split_once('/').ok_or_else(bad)?;
        let num: u64 = n.trim().parse().map_err(|_| bad())?;
        let den: u64 = d.trim().parse().map_err(|_| bad())?;
        if den == 0 || num > den {
            return Err(bad());
        }
        Ok(Rate::new(num, den))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairProtocol {
    /// Two per class, in class order.
    pub references: Vec<usize>,
    pub probes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub eer: Rate,
    pub eer_threshold: f64,
    pub fmr100: Rate,
    pub fmr100_threshold: f64,
    pub fmr1000: Rate,
    pub fmr1000_threshold: f64,
    pub accuracy: Rate,
    pub accuracy_threshold: f64,
    pub genuine_count: usize,
    pub imposter_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkageReport {
    pub intra_authentic: VerificationReport,
    pub intra_synthetic: VerificationReport,
    pub cross: VerificationReport,
    pub expected_nonmatches_per_100: f64,
}

pub fn embed_dataset(model: &EmbeddingModel, ds: &LabeledDataset) -> Result<(Matrix, Vec<usize>)> {
    if model.input_dim() != ds.input_dim() {
        return Err(Error::Dimension(format!(
            "model expects {} features, dataset has {}",
            model.input_dim(),
            ds.input_dim()
        )));
    }
    Ok((model.embed(ds.samples())?, ds.labels().to_vec()))
}

pub use crate::losses::cosine;

pub fn build_protocol(labels: &[usize], num_classes: usize) -> Result<PairProtocol> {
    let mut seen = vec![0usize; num_classes];
    let mut refs = vec![Vec::with_capacity(2); num_classes];
    let mut probes = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::Protocol(format!(
                "label {y} outside [0, {num_classes})"
            )));
        }
        seen[y] += 1;
        if seen[y] <= 2 {
            refs[y].push(i);
        } else {
            probes.push(i);
        }
    }
    if let Some((c, &k)) = seen.iter().enumerate().find(|(_, &k)| k < 3) {
        return Err(Error::Protocol(format!(
            "class {c} has {k} samples; the pair protocol needs at least 3"
        )));
    }
    Ok(PairProtocol {
        references: refs.concat(),
        probes,
    })
}

/// Every reference against every probe, reference-major.
pub fn collect_scores(
    ref_embeddings: &Matrix,
    ref_labels: &[usize],
    probe_embeddings: &Matrix,
    probe_labels: &[usize],
) -> Result<ScoreSet> {
    if ref_embeddings.rows() != ref_labels.len() || probe_embeddings.rows() != probe_labels.len() {
        return Err(Error::Dimension(
            "embedding rows and labels disagree".into(),
        ));
    }
    if ref_labels.is_empty() || probe_labels.is_empty() {
        return Err(Error::Protocol(
            "both sides need at least one sample".into(),
        ));
    }
    if ref_embeddings.cols() != probe_embeddings.cols() {
        return Err(Error::Dimension(format!(
            "reference width {} vs probe width {}",
            ref_embeddings.cols(),
            probe_embeddings.cols()
        )));
    }
    let norms = |m: &Matrix| -> Result<Vec<f64>> {
        (0..m.rows())
            .map(|i| {
                let n = norm(m.row(i));
                if n > 0.0 && n.is_finite() {
                    Ok(n)
                } else {
                    Err(Error::Degenerate(format!("embedding {i} has zero norm")))
                }
            })
            .collect()
    };
    let rn = norms(ref_embeddings)?;
    let pn = norms(probe_embeddings)?;
    let mut scores = ScoreSet::default();
    for (r, &ry) in ref_labels.iter().enumerate() {
        let u = ref_embeddings.row(r);
        for (p, &py) in probe_labels.iter().enumerate() {
            let s = (dot(u, probe_embeddings.row(p)) / (rn[r] * pn[p])).clamp(-1.0, 1.0);
            if ry == py {
                scores.genuine.push(s);
            } else {
                scores.imposter.push(s);
            }
        }
    }
    Ok(scores)
}

impl ScoreSet {
    pub fn validate(&self) -> Result<()> {
        if self.genuine.is_empty() || self.imposter.is_empty() {
            return Err(Error::Protocol(format!(
                "need genuine and imposter scores, have {} and {}",
                self.genuine.len(),
                self.imposter.len()
            )));
        }
        if let Some(s) = self
            .genuine
            .iter()
            .chain(&self.imposter)
            .find(|s| !(-1.0..=1.0).contains(*s))
        {
            return Err(Error::Input(format!("score {s} outside [-1, 1]")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.genuine.len() + self.imposter.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// CSV `kind,score`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["kind", "score"])
            .map_err(|e| csv_err(path, e))?;
        for (kind, list) in [("genuine", &self.genuine), ("imposter", &self.imposter)] {
            for s in list {
                w.write_record([kind, &format!("{s}")])
                    .map_err(|e| csv_err(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut out = ScoreSet::default();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let bad = || Error::format(path, format!("row {}: expected kind,score", row + 1));
            let score: f64 = rec.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            match rec.get(0) {
                Some("genuine") => out.genuine.push(score),
                Some("imposter") => out.imposter.push(score),
                _ => return Err(bad()),
            }
        }
        Ok(out)
    }
}

/// Benchmark-style balanced pair set: every pair of the smaller side plus an
/// equally sized seeded sample of the larger side, original order kept.
pub fn balanced_pairs(s: &ScoreSet, seed: u64) -> Result<ScoreSet> {
    s.validate()?;
    let mut rng = crate::seed::rng(seed);
    let mut pick = |list: &[f64], k: usize| -> Vec<f64> {
        if list.len() == k {
            return list.to_vec();
        }
        let mut idx = rand::seq::index::sample(&mut rng, list.len(), k).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| list[i]).collect()
    };
    let k = s.genuine.len().min(s.imposter.len());
    Ok(ScoreSet {
        genuine: pick(&s.genuine, k),
        imposter: pick(&s.imposter, k),
    })
}

/// Sorted candidate thresholds for a score set.
pub fn candidate_thresholds(s: &ScoreSet) -> Vec<f64> {
    let mut all: Vec<f64> = s.genuine.iter().chain(&s.imposter).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut out = Vec::with_capacity(2 * all.len() + 1);
    for (i, &v) in all.iter().enumerate() {
        out.push(v);
        if let Some(&next) = all.get(i + 1) {
            let mid = v + (next - v) / 2.0;
            if mid > v && mid < next {
                out.push(mid);
            }
        }
    }
    if let Some(&max) = all.last() {
        out.push(max.next_up());
    }
    out
}

/// Count-based view of the ROC: for each candidate, `(t, false matches, false non-matches)`.
struct Sweep {
    g: usize,
    i: usize,
    points: Vec<(f64, usize, usize)>,
}

fn sweep(s: &ScoreSet) -> Result<Sweep> {
    s.validate()?;
    let mut g = s.genuine.clone();
    let mut im = s.imposter.clone();
    g.sort_by(f64::total_cmp);
    im.sort_by(f64::total_cmp);
    let points = candidate_thresholds(s)
        .into_iter()
        .map(|t| {
            let fnm = g.partition_point(|&x| x < t);
            let fm = im.len() - im.partition_point(|&x| x < t);
            (t, fm, fnm)
        })
        .collect();
    Ok(Sweep {
        g: g.len(),
        i: im.len(),
        points,
    })
}

fn eer_from(sw: &Sweep) -> (Rate, f64) {
    let (g, i) = (sw.g as u128, sw.i as u128);
    let mut best: Option<(u128, f64, usize, usize)> = None;
    for &(t, fm, fnm) in &sw.points {
        let gap = (fm as u128 * g).abs_diff(fnm as u128 * i);
        if best.is_none_or(|(b, ..)| gap < b) {
            best = Some((gap, t, fm, fnm));
        }
    }
    let (_, t, fm, fnm) = best.expect("candidate set is never empty");
    let num = fm as u128 * g + fnm as u128 * i;
    let den = 2 * g * i;
    (rate_u128(num, den), t)
}

fn rate_u128(num: u128, den: u128) -> Rate {
    let mut a = num;
    let mut b = den;
    while b != 0 {
        (a, b) = (b, a % b);
    }
    let g = a.max(1);
    Rate::new(
        u64::try_from(num / g).expect("rate numerator fits u64"),
        u64::try_from(den / g).expect("rate denominator fits u64"),
    )
}

fn fmr_point_from(sw: &Sweep, bound: f64) -> (Rate, f64) {
    let mut best: Option<(usize, f64)> = None;
    for &(t, fm, fnm) in &sw.points {
        if fm as f64 / sw.i as f64 <= bound && best.is_none_or(|(b, _)| fnm < b) {
            best = Some((fnm, t));
        }
    }
    let (fnm, t) = best.expect("threshold above every score accepts nothing");
    (Rate::new(fnm as u64, sw.g as u64), t)
}

fn accuracy_from(sw: &Sweep) -> (Rate, f64) {
    let mut best: Option<(usize, f64)> = None;
    for &(t, fm, fnm) in &sw.points {
        let correct = (sw.g - fnm) + (sw.i - fm);
        if best.is_none_or(|(b, _)| correct > b) {
            best = Some((correct, t));
        }
    }
    let (correct, t) = best.expect("candidate set is never empty");
    (Rate::new(correct as u64, (sw.g + sw.i) as u64), t)
}

/// Equal error rate `(FMR + FNMR) / 2` at the threshold minimizing `|FMR - FNMR|`
/// (smallest such threshold).
pub fn compute_eer(s: &ScoreSet) -> Result<(Rate, f64)> {
    Ok(eer_from(&sweep(s)?))
}

/// Lowest FNMR with `FMR <= fmr_bound`, and the smallest threshold reaching it.
pub fn compute_fmr_point(s: &ScoreSet, fmr_bound: f64) -> Result<(Rate, f64)> {
    if !(fmr_bound > 0.0 && fmr_bound < 1.0) {
        return Err(Error::Config(format!(
            "fmr bound must lie in (0, 1), got {fmr_bound}"
        )));
    }
    Ok(fmr_point_from(&sweep(s)?, fmr_bound))
}

/// Best fraction of correctly decided pairs over all thresholds.
pub fn verification_accuracy(s: &ScoreSet) -> Result<(Rate, f64)> {
    Ok(accuracy_from(&sweep(s)?))
}

pub fn verification_report(s: &ScoreSet) -> Result<VerificationReport> {
    let sw = sweep(s)?;
    let (eer, eer_threshold) = eer_from(&sw);
    let (fmr100, fmr100_threshold) = fmr_point_from(&sw, FMR100_BOUND);
    let (fmr1000, fmr1000_threshold) = fmr_point_from(&sw, FMR1000_BOUND);
    let (accuracy, accuracy_threshold) = accuracy_from(&sw);
    Ok(VerificationReport {
        eer,
        eer_threshold,
        fmr100,
        fmr100_threshold,
        fmr1000,
        fmr1000_threshold,
        accuracy,
        accuracy_threshold,
        genuine_count: sw.g,
        imposter_count: sw.i,
    })
}

/// Fraction of samples whose most similar (normalized) head column is their
/// own class. A tie for the maximum counts as a miss.
pub fn identification_top1(
    embeddings: &Matrix,
    labels: &[usize],
    head: &ClassificationHead,
) -> Result<Rate> {
    if embeddings.rows() != labels.len() {
        return Err(Error::Dimension(
            "embedding rows and labels disagree".into(),
        ));
    }
    if embeddings.cols() != head.embedding_dim() {
        return Err(Error::Dimension(format!(
            "embedding width {} vs head width {}",
            embeddings.cols(),
            head.embedding_dim()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Input("no samples to identify".into()));
    }
    let c = head.num_classes();
    if let Some(&y) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Protocol(format!(
            "label {y} not covered by a {c}-class head"
        )));
    }
    let centers: Vec<Vec<f64>> = (0..c)
        .map(|j| {
            crate::linalg::normalized(&head.weights.column(j))
                .ok_or_else(|| Error::Degenerate(format!("head column {j} has zero norm")))
        })
        .collect::<Result<_>>()?;
    let mut hits = 0u64;
    for (i, &y) in labels.iter().enumerate() {
        let e = embeddings.row(i);
        let n = norm(e);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Degenerate(format!("embedding {i} has zero norm")));
        }
        let own = dot(e, &centers[y]);
        let beaten = centers
            .iter()
            .enumerate()
            .any(|(j, w)| j != y && dot(e, w) >= own);
        if !beaten {
            hits += 1;
        }
    }
    Ok(Rate::new(hits, labels.len() as u64))
}

/// Embeddings with their labels.
type Labeled = (Matrix, Vec<usize>);

/// `(references, probes)`.
fn protocol_split(emb: &Matrix, ds: &LabeledDataset) -> Result<(Labeled, Labeled)> {
    let p = build_protocol(ds.labels(), ds.num_classes())?;
    let pick = |idx: &[usize]| {
        (
            emb.select_rows(idx),
            idx.iter().map(|&i| ds.labels()[i]).collect::<Vec<_>>(),
        )
    };
    Ok((pick(&p.references), pick(&p.probes)))
}

/// Intra-dataset scores under the pair protocol.
pub fn intra_scores(scorer: &EmbeddingModel, ds: &LabeledDataset) -> Result<ScoreSet> {
    let (emb, _) = embed_dataset(scorer, ds)?;
    let ((re, rl), (pe, pl)) = protocol_split(&emb, ds)?;
    collect_scores(&re, &rl, &pe, &pl)
}

/// Authentic references against synthetic probes; class `c` is the same
/// identity on both sides.
pub fn cross_scores(
    scorer: &EmbeddingModel,
    authentic: &LabeledDataset,
    synthetic: &LabeledDataset,
) -> Result<ScoreSet> {
    if authentic.num_classes() != synthetic.num_classes() {
        return Err(Error::Protocol(format!(
            "class spaces differ: {} authentic vs {} synthetic",
            authentic.num_classes(),
            synthetic.num_classes()
        )));
    }
    let (ae, _) = embed_dataset(scorer, authentic)?;
    let (se, _) = embed_dataset(scorer, synthetic)?;
    let ((re, rl), _) = protocol_split(&ae, authentic)?;
    let (_, (pe, pl)) = protocol_split(&se, synthetic)?;
    collect_scores(&re, &rl, &pe, &pl)
}

impl LinkageReport {
    pub fn from_scores(
        intra_authentic: &ScoreSet,
        intra_synthetic: &ScoreSet,
        cross: &ScoreSet,
    ) -> Result<Self> {
        let cross = verification_report(cross)?;
        let expected_nonmatches_per_100 = cross.fmr1000.percent();
        Ok(LinkageReport {
            intra_authentic: verification_report(intra_authentic)?,
            intra_synthetic: verification_report(intra_synthetic)?,
            cross,
            expected_nonmatches_per_100,
        })
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (prefix, r) in [
            ("intra_authentic_", &self.intra_authentic),
            ("intra_synthetic_", &self.intra_synthetic),
            ("cross_", &self.cross),
        ] {
            out.push_str(&r.to_kv(prefix));
        }
        out.push_str(&format!(
            "expected_nonmatches_per_100 = {}\n",
            self.expected_nonmatches_per_100
        ));
        out
    }
}

pub fn linkage_report(
    scorer: &EmbeddingModel,
    authentic: &LabeledDataset,
    synthetic: &LabeledDataset,
) -> Result<LinkageReport> {
    LinkageReport::from_scores(
        &intra_scores(scorer, authentic)?,
        &intra_scores(scorer, synthetic)?,
        &cross_scores(scorer, authentic, synthetic)?,
    )
}

impl VerificationReport {
    /// Flat `key = value` lines; rates as percentages with three decimals
    /// plus their exact fraction.
    pub fn to_kv(&self, prefix: &str) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{prefix}{k} = {v}\n"));
        line("genuine_count", self.genuine_count.to_string());
        line("imposter_count", self.imposter_count.to_string());
        for (name, rate, t) in [
            ("eer", self.eer, self.eer_threshold),
            ("fmr100", self.fmr100, self.fmr100_threshold),
            ("fmr1000", self.fmr1000, self.fmr1000_threshold),
            ("verify_acc", self.accuracy, self.accuracy_threshold),
        ] {
            line(name, rate.to_string());
            line(
                &format!("{name}_exact"),
                format!("{}/{}", rate.num, rate.den),
            );
            line(&format!("{name}_threshold"), format!("{t}"));
        }
        out
    }
}

/// Parses flat `key = value` lines, skipping blanks and `#` comments.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Input(format!("expected `key = value`, got `{l}`")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` uniform edges from -1 to 1.
    pub edges: Vec<f64>,
    pub genuine: Vec<u64>,
    pub imposter: Vec<u64>,
}

pub fn histogram_export(s: &ScoreSet, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::Config("a histogram needs at least 2 bins".into()));
    }
    let edges: Vec<f64> = (0..=bins)
        .map(|k| -1.0 + 2.0 * k as f64 / bins as f64)
        .collect();
    let bin_of = |x: f64| (((x + 1.0) / 2.0 * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    let count = |list: &[f64]| {
        let mut c = vec![0u64; bins];
        for &x in list {
            c[bin_of(x)] += 1;
        }
        c
    };
    Ok(Histogram {
        genuine: count(&s.genuine),
        imposter: count(&s.imposter),
        edges,
    })
}

impl Histogram {
    /// CSV `bin_low,bin_high,genuine_count,imposter_count`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["bin_low", "bin_high", "genuine_count", "imposter_count"])
            .map_err(|e| csv_err(path, e))?;
        for k in 0..self.genuine.len() {
            w.write_record([
                format!("{}", self.edges[k]),
                format!("{}", self.edges[k + 1]),
                self.genuine[k].to_string(),
                self.imposter[k].to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut h = Histogram {
            edges: Vec::new(),
            genuine: Vec::new(),
            imposter: Vec::new(),
        };
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let bad = || Error::format(path, format!("row {}: malformed histogram row", row + 1));
            if rec.len() != 4 {
                return Err(bad());
            }
            let lo: f64 = rec[0].parse().map_err(|_| bad())?;
            let hi: f64 = rec[1].parse().map_err(|_| bad())?;
            if h.edges.is_empty() {
                h.edges.push(lo);
            }
            h.edges.push(hi);
            h.genuine.push(rec[2].parse().map_err(|_| bad())?);
            h.imposter.push(rec[3].parse().map_err(|_| bad())?);
        }
        Ok(h)
    }
}
