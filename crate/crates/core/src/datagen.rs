//! Synthetic base datasets, class splits, and the uniform episode sampler.
//!
//! A dataset directory holds `manifest.json` and `data.csv`. The CSV header
//! is `class_id,f0,...,f{d-1}` with one sample per row; floats are written
//! in shortest round-trip form so a reload is bit-exact.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::rng::Stream;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("split `{0}` would be empty")]
    EmptySplit(Split),
    #[error("split sizes {sizes:?} do not add up to {total} classes")]
    BadRatios { sizes: Vec<usize>, total: usize },
    #[error("class {0} requested for more than one split")]
    Overlap(usize),
    #[error("class {0} not present in dataset")]
    UnknownClass(usize),
    #[error("episode needs {needed} classes but the dataset has {available}")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("class {class_id} has {available} samples, episode needs {needed}")]
    InsufficientSamples {
        class_id: usize,
        needed: usize,
        available: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: field {field}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        field: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Validation { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Not yet partitioned.
    All,
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::All => "all",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    pub class_separation: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRecord {
    pub id: usize,
    pub samples: Vec<Vec<f64>>,
}

/// Labeled feature vectors grouped by class, sorted by class id.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseDataset {
    pub feature_dim: usize,
    pub split: Split,
    pub classes: Vec<ClassRecord>,
    pub generator: Option<GeneratorParams>,
}

impl BaseDataset {
    pub fn new(
        feature_dim: usize,
        split: Split,
        mut classes: Vec<ClassRecord>,
        generator: Option<GeneratorParams>,
    ) -> Result<Self, DataError> {
        if feature_dim == 0 {
            return Err(DataError::InvalidParam("feature_dim must be positive".into()));
        }
        classes.sort_by_key(|c| c.id);
        for w in classes.windows(2) {
            if w[0].id == w[1].id {
                return Err(DataError::InvalidParam(format!("duplicate class id {}", w[0].id)));
            }
        }
        for c in &classes {
            if let Some(bad) = c.samples.iter().find(|s| s.len() != feature_dim) {
                return Err(DataError::InvalidParam(format!(
                    "class {} has a sample of length {} (feature_dim {feature_dim})",
                    c.id,
                    bad.len()
                )));
            }
        }
        Ok(Self {
            feature_dim,
            split,
            classes,
            generator,
        })
    }

    pub fn class_ids(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, id: usize) -> Option<&ClassRecord> {
        self.classes
            .binary_search_by_key(&id, |c| c.id)
            .ok()
            .map(|i| &self.classes[i])
    }

    pub fn num_samples(&self) -> usize {
        self.classes.iter().map(|c| c.samples.len()).sum()
    }
}

/// Class means uniform on the sphere of radius `class_separation`; samples are
/// mean plus isotropic Gaussian noise. Class `c` draws from the child stream
/// `Stream::new(seed).split(c)`: the mean first, then samples row by row.
pub fn generate_synthetic(params: &GeneratorParams) -> Result<BaseDataset, DataError> {
    let p = params;
    if p.feature_dim < 2 {
        return Err(DataError::InvalidParam(
            "feature_dim must be at least 2 for sphere sampling".into(),
        ));
    }
    if p.num_classes == 0 || p.samples_per_class == 0 {
        return Err(DataError::InvalidParam(
            "num_classes and samples_per_class must be positive".into(),
        ));
    }
    if !(p.class_separation >= 0.0 && p.class_separation.is_finite()) {
        return Err(DataError::InvalidParam("class_separation must be >= 0".into()));
    }
    if !(p.noise_scale >= 0.0 && p.noise_scale.is_finite()) {
        return Err(DataError::InvalidParam("noise_scale must be >= 0".into()));
    }
    let root = Stream::new(p.seed);
    let classes = (0..p.num_classes)
        .map(|id| {
            let mut rng = root.split(id as u64);
            let mean = loop {
                let v: Vec<f64> = (0..p.feature_dim).map(|_| rng.standard_normal()).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    break v.iter().map(|x| x / norm * p.class_separation).collect::<Vec<_>>();
                }
            };
            let samples = (0..p.samples_per_class)
                .map(|_| {
                    mean.iter()
                        .map(|m| m + p.noise_scale * rng.standard_normal())
                        .collect()
                })
                .collect();
            ClassRecord { id, samples }
        })
        .collect();
    BaseDataset::new(p.feature_dim, Split::All, classes, Some(p.clone()))
}

/// Partition classes (in id order) into train/val/test blocks whose sizes are
/// the rounded `ratios`. The rounded sizes must add up to the class count.
pub fn split_classes(
    dataset: &BaseDataset,
    ratios: [f64; 3],
) -> Result<(BaseDataset, BaseDataset, BaseDataset), DataError> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(DataError::InvalidParam(format!("split ratios must be positive: {ratios:?}")));
    }
    let sizes: Vec<usize> = ratios.iter().map(|r| r.round() as usize).collect();
    let total = dataset.num_classes();
    for (size, split) in sizes.iter().zip([Split::Train, Split::Val, Split::Test]) {
        if *size == 0 {
            return Err(DataError::EmptySplit(split));
        }
    }
    if sizes.iter().sum::<usize>() != total {
        return Err(DataError::BadRatios { sizes, total });
    }
    let ids = dataset.class_ids();
    let train = ids[..sizes[0]].to_vec();
    let val = ids[sizes[0]..sizes[0] + sizes[1]].to_vec();
    let test = ids[sizes[0] + sizes[1]..].to_vec();
    split_by_ids(dataset, [train, val, test])
}

/// Partition by explicit class id lists; the lists must be non-empty and
/// pairwise disjoint.
pub fn split_by_ids(
    dataset: &BaseDataset,
    ids: [Vec<usize>; 3],
) -> Result<(BaseDataset, BaseDataset, BaseDataset), DataError> {
    let mut seen = std::collections::HashSet::new();
    for (list, split) in ids.iter().zip([Split::Train, Split::Val, Split::Test]) {
        if list.is_empty() {
            return Err(DataError::EmptySplit(split));
        }
        for &id in list {
            if !seen.insert(id) {
                return Err(DataError::Overlap(id));
            }
            if dataset.class(id).is_none() {
                return Err(DataError::UnknownClass(id));
            }
        }
    }
    let make = |list: &Vec<usize>, split| {
        let classes = list
            .iter()
            .map(|&id| dataset.class(id).expect("checked above").clone())
            .collect();
        BaseDataset::new(dataset.feature_dim, split, classes, dataset.generator.clone())
    };
    Ok((
        make(&ids[0], Split::Train)?,
        make(&ids[1], Split::Val)?,
        make(&ids[2], Split::Test)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleRef {
    pub class_id: usize,
    pub index: usize,
}

/// One n-way k-shot task. `classes` is sorted; a sample's label is the
/// position of its class in `classes`. Support and query are class-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub query_shot: usize,
    pub classes: Vec<usize>,
    pub support: Vec<SampleRef>,
    pub query: Vec<SampleRef>,
}

/// Dense view of an episode: support and query feature matrices with labels.
#[derive(Debug, Clone)]
pub struct EpisodeData {
    pub way: usize,
    pub shot: usize,
    pub support: Tensor,
    pub support_labels: Vec<usize>,
    pub query: Tensor,
    pub query_labels: Vec<usize>,
}

impl Episode {
    pub fn support_labels(&self) -> Vec<usize> {
        (0..self.way).flat_map(|c| std::iter::repeat_n(c, self.shot)).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        (0..self.way)
            .flat_map(|c| std::iter::repeat_n(c, self.query_shot))
            .collect()
    }

    pub fn materialize(&self, dataset: &BaseDataset) -> Result<EpisodeData, DataError> {
        let d = dataset.feature_dim;
        let gather = |refs: &[SampleRef]| -> Result<Tensor, DataError> {
            let mut data = Vec::with_capacity(refs.len() * d);
            for r in refs {
                let class = dataset.class(r.class_id).ok_or(DataError::UnknownClass(r.class_id))?;
                let sample = class.samples.get(r.index).ok_or(DataError::InsufficientSamples {
                    class_id: r.class_id,
                    needed: r.index + 1,
                    available: class.samples.len(),
                })?;
                data.extend_from_slice(sample);
            }
            Ok(Tensor::matrix(refs.len(), d, data).expect("non-empty episode"))
        };
        Ok(EpisodeData {
            way: self.way,
            shot: self.shot,
            support: gather(&self.support)?,
            support_labels: self.support_labels(),
            query: gather(&self.query)?,
            query_labels: self.query_labels(),
        })
    }
}

/// Uniform classes without replacement, then uniform samples without
/// replacement within each class (in sorted class order): the first `shot`
/// draws go to the support set, the remaining `query_shot` to the query set.
pub fn sample_episode(
    dataset: &BaseDataset,
    way: usize,
    shot: usize,
    query_shot: usize,
    rng: &mut Stream,
) -> Result<Episode, DataError> {
    if way == 0 || shot == 0 || query_shot == 0 {
        return Err(DataError::InvalidParam("way, shot and query must be positive".into()));
    }
    if dataset.num_classes() < way {
        return Err(DataError::InsufficientClasses {
            needed: way,
            available: dataset.num_classes(),
        });
    }
    let per_class = shot + query_shot;
    if let Some(c) = dataset.classes.iter().find(|c| c.samples.len() < per_class) {
        return Err(DataError::InsufficientSamples {
            class_id: c.id,
            needed: per_class,
            available: c.samples.len(),
        });
    }
    let mut classes: Vec<usize> = rng
        .sample_indices(dataset.num_classes(), way)
        .into_iter()
        .map(|i| dataset.classes[i].id)
        .collect();
    classes.sort_unstable();

    let mut support = Vec::with_capacity(way * shot);
    let mut query = Vec::with_capacity(way * query_shot);
    for &class_id in &classes {
        let n = dataset.class(class_id).expect("sampled from dataset").samples.len();
        let picks = rng.sample_indices(n, per_class);
        let refs = picks.iter().map(|&index| SampleRef { class_id, index });
        support.extend(refs.clone().take(shot));
        query.extend(refs.skip(shot));
    }
    Ok(Episode {
        way,
        shot,
        query_shot,
        classes,
        support,
        query,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    feature_dim: usize,
    split: Split,
    class_ids: Vec<usize>,
    class_counts: Vec<usize>,
    generator: Option<GeneratorParams>,
    seed: Option<u64>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.csv";

pub fn save_dataset(dataset: &BaseDataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = Manifest {
        feature_dim: dataset.feature_dim,
        split: dataset.split,
        class_ids: dataset.class_ids(),
        class_counts: dataset.classes.iter().map(|c| c.samples.len()).collect(),
        seed: dataset.generator.as_ref().map(|g| g.seed),
        generator: dataset.generator.clone(),
    };
    let mpath = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, json + "\n").map_err(io_err(&mpath))?;

    let dpath = dir.join(DATA_FILE);
    let mut out = String::new();
    out.push_str("class_id");
    for j in 0..dataset.feature_dim {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for class in &dataset.classes {
        for sample in &class.samples {
            out.push_str(&class.id.to_string());
            for x in sample {
                out.push(',');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
    }
    let mut file = fs::File::create(&dpath).map_err(io_err(&dpath))?;
    file.write_all(out.as_bytes()).map_err(io_err(&dpath))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<BaseDataset, DataError> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DataError::Parse {
        path: mpath.clone(),
        line: e.line(),
        field: e.column(),
        msg: e.to_string(),
    })?;
    if manifest.class_ids.len() != manifest.class_counts.len() {
        return Err(DataError::Validation {
            path: mpath,
            msg: "class_ids and class_counts differ in length".into(),
        });
    }

    let dpath = dir.join(DATA_FILE);
    let text = fs::read_to_string(&dpath).map_err(io_err(&dpath))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let expected_cols = manifest.feature_dim + 1;
    let header_cols: Vec<&str> = header.split(',').collect();
    if header_cols.len() != expected_cols || header_cols[0] != "class_id" {
        return Err(DataError::Parse {
            path: dpath,
            line: 1,
            field: header_cols.len(),
            msg: format!("expected header class_id,f0..f{}", manifest.feature_dim.saturating_sub(1)),
        });
    }
    let parse_err = |line: usize, field: usize, msg: String| DataError::Parse {
        path: dpath.clone(),
        line,
        field,
        msg,
    };

    let mut classes: Vec<ClassRecord> = Vec::new();
    for (i, row) in lines.enumerate() {
        let line = i + 2;
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != expected_cols {
            return Err(parse_err(
                line,
                fields.len(),
                format!("expected {expected_cols} columns, found {}", fields.len()),
            ));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|e| parse_err(line, 1, format!("bad class id `{}`: {e}", fields[0])))?;
        let mut sample = Vec::with_capacity(manifest.feature_dim);
        for (j, f) in fields[1..].iter().enumerate() {
            let x: f64 = f
                .parse()
                .map_err(|e| parse_err(line, j + 2, format!("bad float `{f}`: {e}")))?;
            sample.push(x);
        }
        match classes.last_mut() {
            Some(c) if c.id == id => c.samples.push(sample),
            _ => classes.push(ClassRecord {
                id,
                samples: vec![sample],
            }),
        }
    }

    let ids: Vec<usize> = classes.iter().map(|c| c.id).collect();
    let counts: Vec<usize> = classes.iter().map(|c| c.samples.len()).collect();
    if ids != manifest.class_ids || counts != manifest.class_counts {
        return Err(DataError::Validation {
            path: dpath,
            msg: format!(
                "manifest lists {} classes / {} samples, data has {} classes / {} samples",
                manifest.class_ids.len(),
                manifest.class_counts.iter().sum::<usize>(),
                ids.len(),
                counts.iter().sum::<usize>()
            ),
        });
    }
    BaseDataset::new(manifest.feature_dim, manifest.split, classes, manifest.generator)
}

/// Episode list as CSV rows `episode,role,class_id,sample_index`.
pub fn save_episodes(episodes: &[Episode], path: &Path) -> Result<(), DataError> {
    let mut out = String::from("episode,role,class_id,sample_index\n");
    for (e, ep) in episodes.iter().enumerate() {
        for (role, refs) in [("support", &ep.support), ("query", &ep.query)] {
            for r in refs.iter() {
                out.push_str(&format!("{e},{role},{},{}\n", r.class_id, r.index));
            }
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn load_episodes(path: &Path) -> Result<Vec<Episode>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parse_err = |line: usize, field: usize, msg: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        field,
        msg,
    };
    let mut raw: Vec<(Vec<SampleRef>, Vec<SampleRef>)> = Vec::new();
    for (i, row) in text.lines().enumerate().skip(1) {
        let line = i + 1;
        if row.is_empty() {
            continue;
        }
        let f: Vec<&str> = row.split(',').collect();
        if f.len() != 4 {
            return Err(parse_err(line, f.len(), "expected 4 columns".into()));
        }
        let num = |j: usize| -> Result<usize, DataError> {
            f[j].parse()
                .map_err(|e| parse_err(line, j + 1, format!("bad integer `{}`: {e}", f[j])))
        };
        let (e, class_id, index) = (num(0)?, num(2)?, num(3)?);
        if e != raw.len() && e + 1 != raw.len() {
            return Err(parse_err(line, 1, format!("episode {e} out of order")));
        }
        if e == raw.len() {
            raw.push((Vec::new(), Vec::new()));
        }
        let r = SampleRef { class_id, index };
        match f[1] {
            "support" => raw[e].0.push(r),
            "query" => raw[e].1.push(r),
            other => return Err(parse_err(line, 2, format!("unknown role `{other}`"))),
        }
    }
    raw.into_iter()
        .enumerate()
        .map(|(e, (support, query))| {
            let mut classes: Vec<usize> = support.iter().map(|r| r.class_id).collect();
            classes.dedup();
            let way = classes.len();
            let invalid = |msg: &str| DataError::Validation {
                path: path.to_path_buf(),
                msg: format!("episode {e}: {msg}"),
            };
            if way == 0 || support.len() % way != 0 || query.len() % way != 0 || query.is_empty() {
                return Err(invalid("uneven class counts"));
            }
            let ep = Episode {
                way,
                shot: support.len() / way,
                query_shot: query.len() / way,
                classes,
                support,
                query,
            };
            let sorted = ep.classes.windows(2).all(|w| w[0] < w[1]);
            let labels_ok = ep
                .support
                .iter()
                .zip(ep.support_labels())
                .chain(ep.query.iter().zip(ep.query_labels()))
                .all(|(r, l)| ep.classes[l] == r.class_id);
            if !sorted || !labels_ok {
                return Err(invalid("samples are not grouped by sorted class"));
            }
            Ok(ep)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64) -> GeneratorParams {
        GeneratorParams {
            num_classes: 10,
            samples_per_class: 30,
            feature_dim: 4,
            class_separation: 3.0,
            noise_scale: 1.0,
            seed,
        }
    }

    #[test]
    fn zero_noise_gives_class_means() {
        let mut p = params(1);
        p.noise_scale = 0.0;
        let ds = generate_synthetic(&p).unwrap();
        for c in &ds.classes {
            let first = &c.samples[0];
            let norm = first.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 3.0).abs() < 1e-12);
            assert!(c.samples.iter().all(|s| s == first));
        }
    }

    #[test]
    fn zero_separation_centers_at_origin() {
        let mut p = params(2);
        p.class_separation = 0.0;
        p.noise_scale = 0.0;
        let ds = generate_synthetic(&p).unwrap();
        assert!(ds.classes.iter().all(|c| c.samples[0].iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(generate_synthetic(&params(7)).unwrap(), generate_synthetic(&params(7)).unwrap());
        assert_ne!(generate_synthetic(&params(7)).unwrap(), generate_synthetic(&params(8)).unwrap());
    }

    #[test]
    fn one_dimensional_features_rejected() {
        let mut p = params(1);
        p.feature_dim = 1;
        assert!(matches!(generate_synthetic(&p), Err(DataError::InvalidParam(_))));
    }

    #[test]
    fn mini_imagenet_proportions() {
        let mut p = params(3);
        p.num_classes = 100;
        p.samples_per_class = 2;
        let ds = generate_synthetic(&p).unwrap();
        let (tr, va, te) = split_classes(&ds, [64.0, 16.0, 20.0]).unwrap();
        assert_eq!((tr.num_classes(), va.num_classes(), te.num_classes()), (64, 16, 20));
        assert_eq!(tr.split, Split::Train);
        let mut all: Vec<usize> = tr.class_ids();
        all.extend(va.class_ids());
        all.extend(te.class_ids());
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn singleton_splits() {
        let mut p = params(3);
        p.num_classes = 3;
        let ds = generate_synthetic(&p).unwrap();
        let (a, b, c) = split_classes(&ds, [1.0, 1.0, 1.0]).unwrap();
        assert_eq!((a.class_ids(), b.class_ids(), c.class_ids()), (vec![0], vec![1], vec![2]));
    }

    #[test]
    fn bad_splits_rejected() {
        let ds = generate_synthetic(&params(3)).unwrap();
        assert!(matches!(split_classes(&ds, [5.0, 3.0, 1.0]), Err(DataError::BadRatios { .. })));
        assert!(matches!(split_classes(&ds, [9.6, 0.4, 1.0]), Err(DataError::EmptySplit(Split::Val))));
        assert!(matches!(
            split_by_ids(&ds, [vec![0, 1], vec![1, 2], vec![3]]),
            Err(DataError::Overlap(1))
        ));
    }

    #[test]
    fn episode_shapes() {
        let ds = generate_synthetic(&params(4)).unwrap();
        let mut rng = Stream::new(9);
        let ep = sample_episode(&ds, 5, 1, 15, &mut rng).unwrap();
        assert_eq!((ep.support.len(), ep.query.len()), (5, 75));
        let data = ep.materialize(&ds).unwrap();
        assert_eq!(data.support.shape(), &[5, 4]);
        assert_eq!(data.query.shape(), &[75, 4]);
    }

    #[test]
    fn full_way_uses_every_class() {
        let ds = generate_synthetic(&params(4)).unwrap();
        let ep = sample_episode(&ds, 10, 2, 3, &mut Stream::new(1)).unwrap();
        assert_eq!(ep.classes, ds.class_ids());
    }

    #[test]
    fn insufficient_data_is_named() {
        let ds = generate_synthetic(&params(4)).unwrap();
        assert!(matches!(
            sample_episode(&ds, 11, 1, 1, &mut Stream::new(1)),
            Err(DataError::InsufficientClasses { needed: 11, available: 10 })
        ));
        assert!(matches!(
            sample_episode(&ds, 5, 20, 15, &mut Stream::new(1)),
            Err(DataError::InsufficientSamples { needed: 35, available: 30, .. })
        ));
    }

    #[test]
    fn round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&params(5)).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn wrong_column_count_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&params(5)).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join(DATA_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("3,1.0,2.0\n");
        fs::write(&path, text).unwrap();
        match load_dataset(dir.path()) {
            Err(DataError::Parse { line, field, .. }) => {
                assert_eq!(line, 10 * 30 + 2);
                assert_eq!(field, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_mismatch_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&params(5)).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join(DATA_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let trimmed: Vec<&str> = text.lines().filter(|l| !l.starts_with("9,")).collect();
        fs::write(&path, trimmed.join("\n")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DataError::Validation { .. })));
    }

    #[test]
    fn episode_file_round_trip() {
        let ds = generate_synthetic(&params(6)).unwrap();
        let mut rng = Stream::new(2);
        let eps: Vec<Episode> = (0..5).map(|_| sample_episode(&ds, 5, 2, 3, &mut rng).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.csv");
        save_episodes(&eps, &path).unwrap();
        assert_eq!(load_episodes(&path).unwrap(), eps);
    }
}
