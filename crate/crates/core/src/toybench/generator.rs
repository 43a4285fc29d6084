//! 2D toy problems with an analytic labelling rule and a familiar region.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::mlp::Dataset;
use crate::predictions::{GroupTag, RecordMeta};

/// Rejection sampling gives up below this acceptance rate.
pub const MIN_ACCEPTANCE: f64 = 0.01;
/// Fraction of the sampling box added on every side of the test grid.
pub const GRID_MARGIN: f64 = 0.1;

const BLOB_STD: f64 = 0.9;
/// `(x, y, class)`; two Gaussians per class.
const BLOB_CENTERS: [(f64, f64, usize); 4] = [
    (-2.0, 1.5, 0),
    (-2.0, -1.5, 1),
    (2.0, -1.5, 0),
    (2.0, 1.5, 1),
];
const MOON_NOISE: f64 = 0.15;
const XOR_STD: f64 = 0.7;
const XOR_CENTER: f64 = 1.5;
const RING_RADII: [f64; 2] = [1.0, 2.5];
const RING_NOISE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Two Gaussians per class, labelled by the nearest center.
    Blobs,
    /// Interleaved half circles, labelled by the nearer arc.
    Moons,
    /// Four quadrant blobs, label = sign(x) xor sign(y).
    Xor,
    /// Concentric annuli, labelled by radius.
    Rings,
}

impl Generator {
    pub const ALL: [Generator; 4] = [Generator::Blobs, Generator::Moons, Generator::Xor, Generator::Rings];

    pub fn as_str(self) -> &'static str {
        match self {
            Generator::Blobs => "blobs",
            Generator::Moons => "moons",
            Generator::Xor => "xor",
            Generator::Rings => "rings",
        }
    }

    /// Draws one unlabelled point from the full (unrestricted) distribution.
    pub fn sample(self, rng: &mut impl Rng) -> [f64; 2] {
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        match self {
            Generator::Blobs => {
                let (cx, cy, _) = BLOB_CENTERS[rng.random_range(0..BLOB_CENTERS.len())];
                [cx + BLOB_STD * unit.sample(rng), cy + BLOB_STD * unit.sample(rng)]
            }
            Generator::Moons => {
                let t = rng.random_range(0.0..std::f64::consts::PI);
                let (x, y) = if rng.random_bool(0.5) {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                [x + MOON_NOISE * unit.sample(rng), y + MOON_NOISE * unit.sample(rng)]
            }
            Generator::Xor => {
                let sx = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let sy = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                [
                    sx * XOR_CENTER + XOR_STD * unit.sample(rng),
                    sy * XOR_CENTER + XOR_STD * unit.sample(rng),
                ]
            }
            Generator::Rings => {
                let r = RING_RADII[usize::from(rng.random_bool(0.5))] + RING_NOISE * unit.sample(rng);
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                [r * a.cos(), r * a.sin()]
            }
        }
    }

    /// Ground-truth class of any point in the plane.
    pub fn label(self, p: [f64; 2]) -> usize {
        match self {
            Generator::Blobs => {
                let d = |c: &(f64, f64, usize)| (p[0] - c.0).powi(2) + (p[1] - c.1).powi(2);
                let mut best = &BLOB_CENTERS[0];
                for c in &BLOB_CENTERS[1..] {
                    if d(c) < d(best) {
                        best = c;
                    }
                }
                best.2
            }
            Generator::Moons => {
                let upper = arc_distance(p, [0.0, 0.0], true);
                let lower = arc_distance(p, [1.0, 0.5], false);
                usize::from(lower < upper)
            }
            Generator::Xor => usize::from((p[0] > 0.0) != (p[1] > 0.0)),
            Generator::Rings => {
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                usize::from(r > (RING_RADII[0] + RING_RADII[1]) / 2.0)
            }
        }
    }

    /// `[[x_min, x_max], [y_min, y_max]]` holding essentially all the mass.
    pub fn bounds(self) -> [[f64; 2]; 2] {
        match self {
            Generator::Blobs => {
                let m = 3.0 * BLOB_STD;
                [[-2.0 - m, 2.0 + m], [-1.5 - m, 1.5 + m]]
            }
            Generator::Moons => {
                let m = 3.0 * MOON_NOISE;
                [[-1.0 - m, 2.0 + m], [-0.5 - m, 1.0 + m]]
            }
            Generator::Xor => {
                let e = XOR_CENTER + 3.0 * XOR_STD;
                [[-e, e], [-e, e]]
            }
            Generator::Rings => {
                let e = RING_RADII[1] + 3.0 * RING_NOISE;
                [[-e, e], [-e, e]]
            }
        }
    }

    /// Mean of the full distribution.
    pub fn centroid(self) -> [f64; 2] {
        match self {
            Generator::Moons => [0.5, 0.25],
            _ => [0.0, 0.0],
        }
    }
}

/// Distance from `p` to the unit half circle centred at `c` (upper half when
/// `upper`, lower half otherwise).
fn arc_distance(p: [f64; 2], c: [f64; 2], upper: bool) -> f64 {
    let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
    let on_side = if upper { dy >= 0.0 } else { dy <= 0.0 };
    if on_side {
        ((dx * dx + dy * dy).sqrt() - 1.0).abs()
    } else {
        let to = |ex: f64| ((dx - ex).powi(2) + dy * dy).sqrt();
        to(1.0).min(to(-1.0))
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Generator::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown generator `{s}`")))
    }
}

/// The part of the plane training and validation data come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamiliarRegion {
    WholePlane,
    /// Points with `normal · x <= offset`.
    HalfPlane { normal: [f64; 2], offset: f64 },
}

impl FamiliarRegion {
    /// Half-plane through the generator's centroid with normal `(1, 0)`.
    pub fn default_for(generator: Generator) -> Self {
        let c = generator.centroid();
        FamiliarRegion::HalfPlane {
            normal: [1.0, 0.0],
            offset: c[0],
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            FamiliarRegion::WholePlane => true,
            FamiliarRegion::HalfPlane { normal, offset } => normal[0] * p[0] + normal[1] * p[1] <= offset,
        }
    }

    fn validate(&self) -> Result<()> {
        if let FamiliarRegion::HalfPlane { normal, offset } = self {
            let len = (normal[0] * normal[0] + normal[1] * normal[1]).sqrt();
            if !offset.is_finite() || (len - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("half-plane needs a unit normal and finite offset"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub generator: Generator,
    pub familiar_region: FamiliarRegion,
    pub n_train: usize,
    pub n_val: usize,
    /// Size of the unrestricted pool used as unlabeled data.
    pub n_unsup: usize,
    pub grid_resolution: usize,
    /// Share of labels, per split, replaced by the other class.
    pub label_noise: f64,
    pub seed: u64,
}

impl ToySpec {
    pub fn new(generator: Generator) -> Self {
        ToySpec {
            generator,
            familiar_region: FamiliarRegion::default_for(generator),
            n_train: 1200,
            n_val: 1200,
            n_unsup: 4800,
            grid_resolution: 100,
            label_noise: 0.05,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Error::invalid("n_train and n_val must be positive"));
        }
        if self.grid_resolution < 2 {
            return Err(Error::invalid("grid resolution must be at least 2"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::invalid("label noise must lie in [0, 0.5)"));
        }
        self.familiar_region.validate()
    }

    /// Test-grid extent: the sampling box widened by [`GRID_MARGIN`].
    pub fn grid_bounds(&self) -> [[f64; 2]; 2] {
        self.generator.bounds().map(|[lo, hi]| {
            let pad = GRID_MARGIN * (hi - lo);
            [lo - pad, hi + pad]
        })
    }
}

/// Generated splits. Ids carry a prefix per split: `tr`, `va`, `g`, `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub train: Dataset,
    pub val: Dataset,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub grid: Dataset,
    pub grid_ids: Vec<String>,
    pub grid_groups: Vec<GroupTag>,
    /// Unlabeled draws from the unrestricted distribution.
    pub unsup: Array2<f64>,
    pub unsup_ids: Vec<String>,
}

impl ToyData {
    pub fn train_meta(&self) -> Vec<RecordMeta> {
        meta(&self.train_ids, &self.train.labels, |_| GroupTag::Train)
    }

    pub fn val_meta(&self) -> Vec<RecordMeta> {
        meta(&self.val_ids, &self.val.labels, |_| GroupTag::Val)
    }

    pub fn grid_meta(&self) -> Vec<RecordMeta> {
        meta(&self.grid_ids, &self.grid.labels, |i| self.grid_groups[i])
    }
}

fn meta(ids: &[String], labels: &[usize], group: impl Fn(usize) -> GroupTag) -> Vec<RecordMeta> {
    ids.iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (id, &y))| RecordMeta {
            id: id.clone(),
            label: Some(y),
            group: group(i),
            novelty: None,
        })
        .collect()
}

/// Flips exactly `round(noise * n)` labels chosen uniformly at random.
fn flip_labels(labels: &mut [usize], noise: f64, rng: &mut impl Rng) {
    let k = (noise * labels.len() as f64).round() as usize;
    for i in index::sample(rng, labels.len(), k) {
        // binary problems: the other class
        labels[i] = 1 - labels[i];
    }
}

fn sample_region(spec: &ToySpec, n: usize, stream: u64, prefix: &str) -> Result<(Dataset, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, stream));
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    let mut tries = 0usize;
    while y.len() < n {
        let p = spec.generator.sample(&mut rng);
        tries += 1;
        if spec.familiar_region.contains(p) {
            let i = y.len();
            x[[i, 0]] = p[0];
            x[[i, 1]] = p[1];
            y.push(spec.generator.label(p));
        } else if tries >= 1000 && (y.len() as f64) < MIN_ACCEPTANCE * tries as f64 {
            return Err(Error::invalid(format!(
                "familiar region accepts under {:.0}% of samples",
                MIN_ACCEPTANCE * 100.0
            )));
        }
    }
    flip_labels(&mut y, spec.label_noise, &mut rng);
    let ids = (0..n).map(|i| format!("{prefix}{i}")).collect();
    Ok((Dataset::new(x, y)?, ids))
}

/// Draws train and validation data inside the familiar region, the tagged
/// evaluation grid and an unrestricted unlabeled pool.
pub fn generate(spec: &ToySpec) -> Result<ToyData> {
    spec.validate()?;
    let (train, train_ids) = sample_region(spec, spec.n_train, 1, "tr")?;
    let (val, val_ids) = sample_region(spec, spec.n_val, 2, "va")?;

    let r = spec.grid_resolution;
    let [[x0, x1], [y0, y1]] = spec.grid_bounds();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 3));
    let mut grid = Array2::zeros((r * r, 2));
    let mut labels = Vec::with_capacity(r * r);
    let mut groups = Vec::with_capacity(r * r);
    for iy in 0..r {
        for ix in 0..r {
            let p = [
                x0 + (x1 - x0) * ix as f64 / (r - 1) as f64,
                y0 + (y1 - y0) * iy as f64 / (r - 1) as f64,
            ];
            let i = labels.len();
            grid[[i, 0]] = p[0];
            grid[[i, 1]] = p[1];
            labels.push(spec.generator.label(p));
            groups.push(if spec.familiar_region.contains(p) {
                GroupTag::FamiliarTest
            } else {
                GroupTag::NovelTest
            });
        }
    }

    flip_labels(&mut labels, spec.label_noise, &mut noise_rng);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 4));
    let unsup = Array2::from_shape_vec(
        (spec.n_unsup, 2),
        (0..spec.n_unsup).flat_map(|_| spec.generator.sample(&mut rng)).collect(),
    )
    .expect("n_unsup x 2 values");

    Ok(ToyData {
        train,
        val,
        train_ids,
        val_ids,
        grid: Dataset::new(grid, labels)?,
        grid_ids: (0..r * r).map(|i| format!("g{i}")).collect(),
        grid_groups: groups,
        unsup,
        unsup_ids: (0..spec.n_unsup).map(|i| format!("u{i}")).collect(),
    })
}
