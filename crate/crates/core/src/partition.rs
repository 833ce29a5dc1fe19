//! Synthetic datasets and client partitioning.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Batch, ModelSpec, ParamVector};
use crate::rng::{self, domain};

/// Bounded retries when a random partition leaves a client empty.
pub const MAX_PARTITION_ATTEMPTS: u64 = 100;

/// Labelled feature matrix with a fixed train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        classes: usize,
        train: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        let n = labels.len();
        if dim == 0 || features.len() != n * dim {
            return Err(Error::Dimension {
                expected: n * dim,
                got: features.len(),
                context: "dataset features",
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&test) {
            if i >= n || seen[i] {
                return Err(Error::invalid(format!(
                    "split index {i} is out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        if train.len() + test.len() != n {
            return Err(Error::invalid("train and test do not cover the dataset"));
        }
        let mut present = vec![false; classes];
        for &i in &train {
            present[labels[i]] = true;
        }
        if let Some(c) = present.iter().position(|p| !p) {
            return Err(Error::invalid(format!("class {c} has no training sample")));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            classes,
            train,
            test,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows `idx` as a batch. The batch centre is the mean feature vector
    /// of those rows.
    pub fn batch(&self, idx: &[usize]) -> Batch {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        let mut center = vec![0.0; self.dim];
        for &i in idx {
            let r = self.row(i);
            x.extend_from_slice(r);
            for (c, v) in center.iter_mut().zip(r) {
                *c += v;
            }
        }
        if !idx.is_empty() {
            center.iter_mut().for_each(|c| *c /= idx.len() as f64);
        }
        let y = idx.iter().map(|&i| self.labels[i]).collect();
        Batch::new(x, y, self.dim).with_center(center)
    }

    /// Normalized label distribution over `idx`.
    pub fn label_histogram(&self, idx: &[usize]) -> Vec<f64> {
        let mut h = vec![0.0; self.classes];
        for &i in idx {
            h[self.labels[i]] += 1.0;
        }
        if !idx.is_empty() {
            h.iter_mut().for_each(|v| *v /= idx.len() as f64);
        }
        h
    }
}

/// Gaussian class blobs with unit covariance. Class `c` is centred at
/// `sep * u_c`: the signed axis vectors `+e_0, -e_0, +e_1, ...` while
/// they last, random unit directions beyond `2 d` classes. Labels cycle
/// `0, 1, ..., C-1`; each class is split 80/20 into train/test.
pub fn make_synthetic(n: usize, d: usize, classes: usize, sep: f64, seed: u64) -> Result<Dataset> {
    let mut bad = Vec::new();
    if classes == 0 {
        bad.push("data.classes: must be positive".to_string());
    } else if n < 10 * classes {
        bad.push(format!("data.n: need at least 10 samples per class (n = {n}, classes = {classes})"));
    }
    if d < 2 {
        bad.push(format!("data.d: need at least 2 dimensions, got {d}"));
    }
    if !(sep > 0.0 && sep.is_finite()) {
        bad.push(format!("data.sep: must be positive, got {sep}"));
    }
    if !bad.is_empty() {
        return Err(Error::Config(bad));
    }

    let mut r = rng::stream(seed, &[domain::DATA]);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut u = vec![0.0; d];
            if c < 2 * d {
                u[c / 2] = if c % 2 == 0 { 1.0 } else { -1.0 };
            } else {
                let mut norm = 0.0;
                while norm == 0.0 {
                    u.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
                    norm = model::dot(&u, &u).sqrt();
                }
                u.iter_mut().for_each(|v| *v /= norm);
            }
            u.into_iter().map(|v| sep * v).collect()
        })
        .collect();

    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut features = Vec::with_capacity(n * d);
    for &y in &labels {
        for j in 0..d {
            let z: f64 = r.sample(StandardNormal);
            features.push(centers[y][j] + z);
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (c..n).step_by(classes).collect();
        idx.shuffle(&mut r);
        let n_test = idx.len() / 5;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Dataset::new(features, labels, d, classes, train, test)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Iid,
    Dirichlet,
    Pathological,
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionKind::Iid => "iid",
            PartitionKind::Dirichlet => "dirichlet",
            PartitionKind::Pathological => "pathological",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    /// Dirichlet concentration.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_classes_per_client")]
    pub classes_per_client: usize,
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    0.3
}

fn default_classes_per_client() -> usize {
    2
}

impl PartitionSpec {
    pub fn iid(m: usize, seed: u64) -> Self {
        PartitionSpec {
            kind: PartitionKind::Iid,
            alpha: default_alpha(),
            classes_per_client: default_classes_per_client(),
            m,
            seed,
        }
    }

    pub fn dirichlet(m: usize, alpha: f64, seed: u64) -> Self {
        PartitionSpec {
            kind: PartitionKind::Dirichlet,
            alpha,
            ..PartitionSpec::iid(m, seed)
        }
    }

    pub fn pathological(m: usize, classes_per_client: usize, seed: u64) -> Self {
        PartitionSpec {
            kind: PartitionKind::Pathological,
            classes_per_client,
            ..PartitionSpec::iid(m, seed)
        }
    }

    /// Constraints that do not depend on the dataset.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.m == 0 {
            out.push("partition.m: must be at least 1".to_string());
        }
        if self.kind == PartitionKind::Dirichlet && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            out.push(format!("partition.alpha: must be positive, got {}", self.alpha));
        }
        if self.kind == PartitionKind::Pathological && self.classes_per_client == 0 {
            out.push("partition.classes_per_client: must be at least 1".to_string());
        }
        out
    }
}

/// One client's slice of the training set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    /// Dataset row indices, ascending.
    pub indices: Vec<usize>,
    /// Seed of this client's private random stream.
    pub rng_stream: u64,
}

/// Splits the training set of `ds` across `spec.m` clients.
///
/// Dirichlet splitting draws, for every class, client proportions from a
/// symmetric `Dir(alpha)` and cuts that class's samples accordingly.
/// Pathological splitting sorts by label, cuts into `m * classes_per_client`
/// near-equal pieces that never straddle a class boundary (when there are
/// at least as many pieces as classes) and deals `classes_per_client`
/// pieces to every client.
pub fn partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    let mut bad = spec.violations();
    let n_train = ds.train().len();
    if spec.m > n_train {
        bad.push(format!(
            "partition.m: {} clients but only {n_train} training samples",
            spec.m
        ));
    }
    if spec.kind == PartitionKind::Pathological {
        if spec.classes_per_client > ds.classes() {
            bad.push(format!(
                "partition.classes_per_client: {} exceeds the {} classes",
                spec.classes_per_client,
                ds.classes()
            ));
        }
        if spec.m * spec.classes_per_client > n_train {
            bad.push(format!(
                "partition: {} pieces requested from {n_train} training samples",
                spec.m * spec.classes_per_client
            ));
        }
    }
    if !bad.is_empty() {
        return Err(Error::Config(bad));
    }

    for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let mut r = rng::stream(spec.seed, &[domain::PARTITION, attempt]);
        let assignment = match spec.kind {
            PartitionKind::Iid => split_iid(ds, spec.m, &mut r),
            PartitionKind::Dirichlet => split_dirichlet(ds, spec.m, spec.alpha, &mut r),
            PartitionKind::Pathological => split_pathological(ds, spec.m, spec.classes_per_client, &mut r),
        };
        if assignment.iter().all(|s| !s.is_empty()) {
            return Ok(assignment
                .into_iter()
                .enumerate()
                .map(|(client_id, mut indices)| {
                    indices.sort_unstable();
                    ClientShard {
                        client_id,
                        indices,
                        rng_stream: rng::derive_key(spec.seed, &[domain::CLIENT, client_id as u64]),
                    }
                })
                .collect());
        }
    }
    Err(Error::EmptyShard {
        attempts: MAX_PARTITION_ATTEMPTS as usize,
    })
}

/// Contiguous near-equal pieces; the first `len % parts` are one longer.
fn cut<T: Clone>(items: &[T], parts: usize) -> Vec<Vec<T>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(items[start..start + len].to_vec());
        start += len;
    }
    out
}

fn split_iid(ds: &Dataset, m: usize, r: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx = ds.train().to_vec();
    idx.shuffle(r);
    cut(&idx, m)
}

fn by_class(ds: &Dataset) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); ds.classes()];
    for &i in ds.train() {
        out[ds.labels()[i]].push(i);
    }
    out
}

fn split_dirichlet(ds: &Dataset, m: usize, alpha: f64, r: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let mut shards = vec![Vec::new(); m];
    for mut idx in by_class(ds) {
        idx.shuffle(r);
        let mut p: Vec<f64> = (0..m).map(|_| gamma.sample(r)).collect();
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            p.iter_mut().for_each(|v| *v /= total);
        } else {
            // every gamma draw underflowed; hand the class to one client
            let k = r.random_range(0..m);
            p.iter_mut().enumerate().for_each(|(i, v)| *v = f64::from(u8::from(i == k)));
        }
        let n = idx.len();
        let mut acc = 0.0;
        let mut start = 0;
        for (client, share) in p.iter().enumerate() {
            acc += share;
            let end = if client + 1 == m {
                n
            } else {
                ((acc * n as f64) as usize).min(n)
            };
            let end = end.max(start);
            shards[client].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    shards
}

fn split_pathological(ds: &Dataset, m: usize, per_client: usize, r: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let pieces_total = m * per_client;
    let mut classes = by_class(ds);
    for c in classes.iter_mut() {
        c.shuffle(r);
    }
    let pieces: Vec<Vec<usize>> = if pieces_total >= ds.classes() {
        // pieces per class: start at one each, then repeatedly split the
        // class whose pieces are currently largest
        let mut count = vec![1usize; classes.len()];
        for _ in classes.len()..pieces_total {
            let best = (0..classes.len())
                .max_by(|&a, &b| {
                    let sa = classes[a].len() as f64 / count[a] as f64;
                    let sb = classes[b].len() as f64 / count[b] as f64;
                    sa.total_cmp(&sb).then(b.cmp(&a))
                })
                .expect("at least one class");
            count[best] += 1;
        }
        classes
            .iter()
            .zip(&count)
            .flat_map(|(idx, &k)| cut(idx, k))
            .collect()
    } else {
        let sorted: Vec<usize> = classes.concat();
        cut(&sorted, pieces_total)
    };
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    order.shuffle(r);
    order
        .chunks(per_client)
        .map(|ids| ids.iter().flat_map(|&k| pieces[k].iter().copied()).collect())
        .collect()
}

/// Shard assignment dump: `{"<client_id>": [indices...]}`.
pub fn shard_dump(shards: &[ClientShard]) -> BTreeMap<String, Vec<usize>> {
    shards
        .iter()
        .map(|s| (s.client_id.to_string(), s.indices.clone()))
        .collect()
}

/// Probe-point estimate of the gradient heterogeneity
/// `max_i sup_x |grad f_i(x) - grad f(x)|`, with `f = (1/m) sum_i f_i`
/// and each `f_i` the full-shard loss.
///
/// The supremum over all of parameter space is replaced by a maximum over
/// `probes`, so the result is a lower bound on the true constant.
pub fn estimate_beta(
    spec: &ModelSpec,
    ds: &Dataset,
    shards: &[ClientShard],
    probes: &[ParamVector],
) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::invalid("estimate_beta needs at least one probe point"));
    }
    if shards.is_empty() {
        return Err(Error::invalid("estimate_beta needs at least one shard"));
    }
    if let Some(s) = shards.iter().find(|s| s.indices.is_empty()) {
        return Err(Error::invalid(format!("shard of client {} is empty", s.client_id)));
    }
    let batches: Vec<Batch> = shards.iter().map(|s| ds.batch(&s.indices)).collect();
    let m = batches.len() as f64;
    let mut beta: f64 = 0.0;
    for x in probes {
        let grads = batches
            .iter()
            .map(|b| model::gradient(spec, x, b))
            .collect::<Result<Vec<_>>>()?;
        let mut mean = vec![0.0; x.len()];
        for g in &grads {
            for (a, v) in mean.iter_mut().zip(g.iter()) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m);
        for g in &grads {
            let dev: f64 = g.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
            beta = beta.max(dev.sqrt());
        }
    }
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(seed: u64) -> Dataset {
        make_synthetic(1250, 4, 10, 3.0, seed).unwrap()
    }

    fn assert_exact_cover(ds: &Dataset, shards: &[ClientShard]) {
        let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, ds.train().to_vec());
        assert!(shards.iter().all(|s| !s.indices.is_empty()));
    }

    #[test]
    fn synthetic_split_sizes() {
        let ds = make_synthetic(100, 2, 2, 6.0, 1).unwrap();
        assert_eq!(ds.train().len(), 80);
        assert_eq!(ds.test().len(), 20);
        let h = ds.label_histogram(ds.test());
        assert_eq!(h, vec![0.5, 0.5]);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = make_synthetic(100, 3, 4, 2.0, 11).unwrap();
        let b = make_synthetic(100, 3, 4, 2.0, 11).unwrap();
        assert_eq!(a.features().len(), b.features().len());
        assert!(a
            .features()
            .iter()
            .zip(b.features())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a, b);
        assert_ne!(a, make_synthetic(100, 3, 4, 2.0, 12).unwrap());
    }

    #[test]
    fn degenerate_synthetic_arguments() {
        assert!(matches!(make_synthetic(10, 2, 2, 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(make_synthetic(100, 1, 2, 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(make_synthetic(100, 2, 2, 0.0, 0), Err(Error::Config(_))));
        match make_synthetic(5, 1, 2, -1.0, 0) {
            Err(Error::Config(v)) => assert_eq!(v.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn iid_equal_split() {
        let ds = blobs(3);
        assert_eq!(ds.train().len(), 1000);
        let shards = partition(&ds, &PartitionSpec::iid(10, 4)).unwrap();
        assert!(shards.iter().all(|s| s.indices.len() == 100));
        assert_exact_cover(&ds, &shards);
    }

    #[test]
    fn pathological_two_labels_per_client() {
        for seed in 0..5 {
            let ds = blobs(seed);
            let shards = partition(&ds, &PartitionSpec::pathological(10, 2, seed)).unwrap();
            assert_exact_cover(&ds, &shards);
            for s in &shards {
                let labels = ds.label_histogram(&s.indices).iter().filter(|&&h| h > 0.0).count();
                assert!(labels <= 2, "client {} has {labels} labels", s.client_id);
            }
        }
    }

    #[test]
    fn pathological_with_fewer_pieces_than_classes() {
        let ds = blobs(1);
        let shards = partition(&ds, &PartitionSpec::pathological(3, 2, 1)).unwrap();
        assert_eq!(shards.len(), 3);
        assert_exact_cover(&ds, &shards);
    }

    #[test]
    fn pathological_rejects_too_many_classes() {
        let ds = blobs(1);
        assert!(matches!(
            partition(&ds, &PartitionSpec::pathological(4, 11, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dirichlet_small_alpha_is_skewed() {
        for seed in 0..5 {
            let ds = make_synthetic(1000, 2, 2, 3.0, seed).unwrap();
            let shards = partition(&ds, &PartitionSpec::dirichlet(16, 0.3, seed)).unwrap();
            assert_exact_cover(&ds, &shards);
            let most = shards
                .iter()
                .map(|s| ds.label_histogram(&s.indices).into_iter().fold(0.0, f64::max))
                .fold(0.0, f64::max);
            assert!(most > 0.6, "seed {seed}: max majority {most}");
        }
    }

    #[test]
    fn dirichlet_large_alpha_matches_global_histogram() {
        for seed in 0..5 {
            let ds = make_synthetic(10_000, 5, 2, 3.0, seed).unwrap();
            let shards = partition(&ds, &PartitionSpec::dirichlet(10, 1000.0, seed)).unwrap();
            assert_exact_cover(&ds, &shards);
            let global = ds.label_histogram(ds.train());
            for s in &shards {
                for (h, g) in ds.label_histogram(&s.indices).iter().zip(&global) {
                    assert!((h - g).abs() <= 0.05 * g, "seed {seed} client {}: {h} vs {g}", s.client_id);
                }
            }
        }
    }

    #[test]
    fn exhausted_resampling_reports_error() {
        // 20 clients over 24 samples at tiny alpha nearly always leaves one empty
        let ds = make_synthetic(30, 2, 2, 3.0, 0).unwrap();
        let err = partition(&ds, &PartitionSpec::dirichlet(20, 1e-3, 0)).unwrap_err();
        assert!(matches!(err, Error::EmptyShard { attempts: 100 }), "{err:?}");
        assert!(err.to_string().contains("larger alpha"));
    }

    #[test]
    fn too_many_clients_is_config_error() {
        let ds = make_synthetic(30, 2, 2, 3.0, 0).unwrap();
        assert!(matches!(partition(&ds, &PartitionSpec::iid(25, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn beta_two_client_quadratic() {
        let ds = Dataset::new(vec![0.0, 2.0], vec![0, 0], 1, 1, vec![0, 1], vec![]).unwrap();
        let shards = vec![
            ClientShard { client_id: 0, indices: vec![0], rng_stream: 0 },
            ClientShard { client_id: 1, indices: vec![1], rng_stream: 1 },
        ];
        let spec = ModelSpec::quadratic(1);
        let probes: Vec<ParamVector> = [-3.0, 0.0, 1.0, 7.5].iter().map(|&x| vec![x].into()).collect();
        let b = estimate_beta(&spec, &ds, &shards, &probes).unwrap();
        assert!((b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn beta_zero_for_identical_shards_and_single_client() {
        let ds = make_synthetic(100, 2, 2, 3.0, 0).unwrap();
        let spec = ModelSpec::logistic(2, 2);
        let same = vec![
            ClientShard { client_id: 0, indices: ds.train().to_vec(), rng_stream: 0 },
            ClientShard { client_id: 1, indices: ds.train().to_vec(), rng_stream: 1 },
        ];
        let probes = vec![spec.init(1, &[0]), spec.init(2, &[0])];
        assert_eq!(estimate_beta(&spec, &ds, &same, &probes).unwrap(), 0.0);
        let one = partition(&ds, &PartitionSpec::iid(1, 0)).unwrap();
        assert_eq!(estimate_beta(&spec, &ds, &one, &probes).unwrap(), 0.0);
    }

    #[test]
    fn beta_rejects_empty_inputs() {
        let ds = make_synthetic(100, 2, 2, 3.0, 0).unwrap();
        let spec = ModelSpec::logistic(2, 2);
        let shards = partition(&ds, &PartitionSpec::iid(2, 0)).unwrap();
        assert!(estimate_beta(&spec, &ds, &shards, &[]).is_err());
        let empty = vec![ClientShard { client_id: 0, indices: vec![], rng_stream: 0 }];
        assert!(estimate_beta(&spec, &ds, &empty, &[spec.init(0, &[])]).is_err());
    }

    #[test]
    fn dump_keys_are_client_ids() {
        let ds = make_synthetic(100, 2, 2, 3.0, 0).unwrap();
        let shards = partition(&ds, &PartitionSpec::iid(4, 0)).unwrap();
        let v = serde_json::to_value(shard_dump(&shards)).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 4);
        assert_eq!(v["3"].as_array().unwrap().len(), 20);
    }
}
