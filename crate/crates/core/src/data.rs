//! Classification datasets: seeded synthetic generators and CSV files.
//!
//! A [`DataSpec`] is a one-line descriptor such as
//! `synthetic-gaussians:classes=2,samples=2000,features=2,seed=7` or
//! `csv:path=train.csv,classes=3,shape=1x4x4`, so a dataset can be named in
//! a config file or an NNP dataset record and regenerated exactly.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{numel, NdArray, Rng};

pub const IMAGE_SIDE: usize = 28;
/// Stripes, checkerboard, blank, vertical stripes, diagonal stripes.
pub const IMAGE_PATTERNS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub enum DataKind {
    /// One isotropic unit-variance blob per class; centers on a circle of radius 3.
    SyntheticGaussians {
        features: usize,
    },
    /// `1×28×28` patterned images with noise, one pattern per class.
    SyntheticImages,
    Csv {
        path: PathBuf,
        shape: Option<Vec<usize>>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub kind: DataKind,
    pub classes: usize,
    /// Sample count for synthetic kinds; ignored for CSV.
    pub samples: usize,
    pub seed: Option<u64>,
}

impl DataSpec {
    pub fn gaussians(classes: usize, samples: usize, features: usize) -> Self {
        DataSpec {
            kind: DataKind::SyntheticGaussians { features },
            classes,
            samples,
            seed: None,
        }
    }

    pub fn images(classes: usize, samples: usize) -> Self {
        DataSpec {
            kind: DataKind::SyntheticImages,
            classes,
            samples,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// The shape of one sample, known without loading.
    pub fn sample_shape(&self) -> Option<Vec<usize>> {
        match &self.kind {
            DataKind::SyntheticGaussians { features } => Some(vec![*features]),
            DataKind::SyntheticImages => Some(vec![1, IMAGE_SIDE, IMAGE_SIDE]),
            DataKind::Csv { shape, .. } => shape.clone(),
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        if self.classes == 0 {
            return Err(Error::Data("class count must be positive".into()));
        }
        let seed = self.seed.unwrap_or(0);
        match &self.kind {
            DataKind::SyntheticGaussians { features } => gaussians(self.classes, self.samples, *features, seed),
            DataKind::SyntheticImages => images(self.classes, self.samples, seed),
            DataKind::Csv { path, shape } => read_csv(path, self.classes, shape.as_deref()),
        }
    }
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

impl fmt::Display for DataSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            DataKind::SyntheticGaussians { features } => write!(
                f,
                "synthetic-gaussians:classes={},samples={},features={features}",
                self.classes, self.samples
            )?,
            DataKind::SyntheticImages => {
                write!(f, "synthetic-images:classes={},samples={}", self.classes, self.samples)?
            }
            DataKind::Csv { path, shape } => {
                write!(f, "csv:path={},classes={}", path.display(), self.classes)?;
                if let Some(s) = shape {
                    write!(f, ",shape={}", shape_text(s))?;
                }
            }
        }
        if let Some(seed) = self.seed {
            write!(f, ",seed={seed}")?;
        }
        Ok(())
    }
}

impl FromStr for DataSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut classes = None;
        let mut samples = None;
        let mut features = None;
        let mut seed = None;
        let mut path = None;
        let mut shape = None;
        let bad = |k: &str, v: &str| Error::Config(format!("data: bad value `{v}` for `{k}`"));
        for item in rest.split(',').filter(|i| !i.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("data: expected key=value, got `{item}`")))?;
            match k {
                "classes" => classes = Some(v.parse().map_err(|_| bad(k, v))?),
                "samples" => samples = Some(v.parse().map_err(|_| bad(k, v))?),
                "features" => features = Some(v.parse().map_err(|_| bad(k, v))?),
                "seed" => seed = Some(v.parse().map_err(|_| bad(k, v))?),
                "path" => path = Some(PathBuf::from(v)),
                "shape" => {
                    shape = Some(
                        v.split('x')
                            .map(|d| d.parse::<usize>().map_err(|_| bad(k, v)))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                _ => return Err(Error::Config(format!("data: unknown key `{k}`"))),
            }
        }
        let kind = match kind {
            "synthetic-gaussians" => DataKind::SyntheticGaussians {
                features: features.unwrap_or(2),
            },
            "synthetic-images" => DataKind::SyntheticImages,
            "csv" => DataKind::Csv {
                path: path.ok_or_else(|| Error::Config("data: csv needs `path=`".into()))?,
                shape,
            },
            other => return Err(Error::Config(format!("data: unknown source `{other}`"))),
        };
        let default_classes = if matches!(kind, DataKind::SyntheticImages) {
            3
        } else {
            2
        };
        Ok(DataSpec {
            kind,
            classes: classes.unwrap_or(default_classes),
            samples: samples.unwrap_or(1000),
            seed,
        })
    }
}

/// Samples stored row-major, one label per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sample_shape: Vec<usize>,
    pub classes: usize,
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(sample_shape: &[usize], classes: usize, features: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        let width = numel(sample_shape);
        if features.len() != width * labels.len() {
            return Err(Error::Data(format!(
                "{} values do not make {} samples of shape {sample_shape:?}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {l} out of range for {classes} classes")));
        }
        Ok(Dataset {
            sample_shape: sample_shape.to_vec(),
            classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        numel(&self.sample_shape)
    }

    /// Inputs `(B, sample_shape…)` and labels `(B, 1)` for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<(NdArray, NdArray)> {
        let w = self.sample_len();
        let mut x = Vec::with_capacity(indices.len() * w);
        let mut t = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(&self.features[i * w..(i + 1) * w]);
            t.push(self.labels[i] as f32);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        Ok((
            NdArray::from_vec(&shape, x)?,
            NdArray::from_vec(&[indices.len(), 1], t)?,
        ))
    }
}

/// Balanced labels `i mod classes`, shuffled.
fn balanced_labels(classes: usize, samples: usize, rng: &mut Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    rng.shuffle(&mut labels);
    labels
}

/// Center of class `k` among `classes`: radius 3 on the plane of the first two features.
pub fn gaussian_center(k: usize, classes: usize, features: usize) -> Vec<f32> {
    let angle = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
    let mut c = vec![0.0f32; features];
    if features >= 1 {
        c[0] = (3.0 * angle.cos()) as f32;
    }
    if features >= 2 {
        c[1] = (3.0 * angle.sin()) as f32;
    }
    c
}

fn gaussians(classes: usize, samples: usize, features: usize, seed: u64) -> Result<Dataset> {
    if features == 0 {
        return Err(Error::Data("gaussians need at least one feature".into()));
    }
    let mut rng = Rng::new(seed);
    let labels = balanced_labels(classes, samples, &mut rng);
    let centers: Vec<Vec<f32>> = (0..classes).map(|k| gaussian_center(k, classes, features)).collect();
    let mut x = Vec::with_capacity(samples * features);
    for &l in &labels {
        for c in &centers[l] {
            x.push(c + rng.normal());
        }
    }
    Dataset::new(&[features], classes, x, labels)
}

/// Noise-free value of pattern `class` at `(r, c)` with the given phase.
pub fn image_pattern(class: usize, r: usize, c: usize, phase: usize) -> f32 {
    let on = match class {
        0 => ((r + phase) / 2).is_multiple_of(2),
        1 => (((r + phase) / 4) + ((c + phase) / 4)).is_multiple_of(2),
        2 => false,
        3 => ((c + phase) / 2).is_multiple_of(2),
        _ => ((r + c + phase) / 3).is_multiple_of(2),
    };
    if on {
        1.0
    } else {
        0.0
    }
}

fn images(classes: usize, samples: usize, seed: u64) -> Result<Dataset> {
    if classes > IMAGE_PATTERNS {
        return Err(Error::Data(format!(
            "synthetic images have {IMAGE_PATTERNS} patterns, {classes} classes requested"
        )));
    }
    let mut rng = Rng::new(seed);
    let labels = balanced_labels(classes, samples, &mut rng);
    let px = IMAGE_SIDE * IMAGE_SIDE;
    let mut x = Vec::with_capacity(samples * px);
    for &l in &labels {
        let phase = rng.below(8);
        for r in 0..IMAGE_SIDE {
            for c in 0..IMAGE_SIDE {
                x.push(image_pattern(l, r, c, phase) + 0.3 * rng.normal());
            }
        }
    }
    Dataset::new(&[1, IMAGE_SIDE, IMAGE_SIDE], classes, x, labels)
}

/// Rows of `label,f1,…,fn`; lines starting with `#` are skipped.
fn read_csv(path: &std::path::Path, classes: usize, shape: Option<&[usize]>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut labels = Vec::new();
    let mut features = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let row = i + 1;
        let label: usize = record
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Data(format!("{}: row {row}: bad label", path.display())))?;
        let n = record.len() - 1;
        match width {
            None => width = Some(n),
            Some(w) if w != n => {
                return Err(Error::Data(format!(
                    "{}: row {row} has {n} features, expected {w}",
                    path.display()
                )))
            }
            _ => {}
        }
        for v in record.iter().skip(1) {
            features.push(
                v.parse::<f32>()
                    .map_err(|_| Error::Data(format!("{}: row {row}: bad value `{v}`", path.display())))?,
            );
        }
        labels.push(label);
    }
    let width = width.unwrap_or(0);
    let shape = match shape {
        Some(s) if numel(s) != width => {
            return Err(Error::Data(format!(
                "{}: {width} features per row do not fit shape {s:?}",
                path.display()
            )))
        }
        Some(s) => s.to_vec(),
        None => vec![width],
    };
    Dataset::new(&shape, classes, features, labels)
}
