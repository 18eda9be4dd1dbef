//! Seeded synthetic left-coronary trees with known labels, shuffled noisy
//! copies with known correspondences, and planted stenoses.
//!
//! Feature layout (indices into `ArteryNode::features`; the rest is zero
//! padding up to `d_in`):
//!
//! | index | feature                                   |
//! |-------|-------------------------------------------|
//! | 0     | degree / 4                                |
//! | 1, 2  | start point x, y (image coords, scaled)   |
//! | 3, 4  | end point x, y                            |
//! | 5, 6  | segment center x, y                       |
//! | 7     | length / 100                              |
//! | 8     | mean diameter / 5                         |
//! | 9, 10 | unit direction x, y                       |
//! | 11    | depth below LMA / 5                       |
//!
//! Image coordinates are scaled as `(c − 256) / 256`.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ArteryLabel, ArteryNode, CoarseLabel, VascularGraph, ViewAngle, DEFAULT_FEATURE_DIM};
use crate::permutation::PermutationMatrix;
use crate::seed;

/// Number of meaningful leading features.
pub const MEANINGFUL_FEATURES: usize = 12;
/// Feature indices carrying image positions.
pub const POSITION_FEATURES: [usize; 6] = [1, 2, 3, 4, 5, 6];
const DIRECTION_FEATURES: [usize; 2] = [9, 10];

/// Diameter samples per segment.
pub const PROFILE_SAMPLES: usize = 48;
/// Period, in samples, of the baseline diameter ripple.
pub const RIPPLE_PERIOD: usize = 12;
const RIPPLE_AMPLITUDE: f64 = 0.002;
/// Standard deviation, in samples, of a planted notch.
pub const NOTCH_WIDTH: f64 = 2.5;

const IMAGE_CENTER: f64 = 256.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedLesion {
    pub segment: ArteryLabel,
    /// Narrowing in percent, `(0, 100)`.
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    pub lad_segments: usize,
    pub lcx_segments: usize,
    pub d_branches: usize,
    pub om_branches: usize,
    pub view: ViewAngle,
    /// Standard deviation of additive Gaussian noise on the meaningful
    /// features.
    #[serde(default)]
    pub feature_noise: f64,
    #[serde(default)]
    pub geometry_seed: u64,
    #[serde(default)]
    pub stenosis_plan: Vec<PlantedLesion>,
    #[serde(default = "default_d_in")]
    pub d_in: usize,
}

fn default_d_in() -> usize {
    DEFAULT_FEATURE_DIM
}

impl TreeSpec {
    pub fn new(lad: usize, lcx: usize, d: usize, om: usize, view: ViewAngle) -> Self {
        TreeSpec {
            lad_segments: lad,
            lcx_segments: lcx,
            d_branches: d,
            om_branches: om,
            view,
            feature_noise: 0.0,
            geometry_seed: 0,
            stenosis_plan: Vec::new(),
            d_in: DEFAULT_FEATURE_DIM,
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.lad_segments + self.lcx_segments + self.d_branches + self.om_branches
    }

    pub fn validate(&self) -> Result<()> {
        if self.lad_segments == 0 || self.lcx_segments == 0 {
            return Err(Error::validation("LAD and LCX need at least one segment each"));
        }
        if self.d_branches > self.lad_segments {
            return Err(Error::validation(format!(
                "{} diagonal branches need as many LAD segments, have {}",
                self.d_branches, self.lad_segments
            )));
        }
        if self.om_branches > self.lcx_segments {
            return Err(Error::validation(format!(
                "{} obtuse marginal branches need as many LCX segments, have {}",
                self.om_branches, self.lcx_segments
            )));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::validation("feature_noise must be finite and >= 0"));
        }
        if self.d_in < MEANINGFUL_FEATURES {
            return Err(Error::validation(format!(
                "d_in must be at least {MEANINGFUL_FEATURES}, got {}",
                self.d_in
            )));
        }
        for l in &self.stenosis_plan {
            l.segment.validate()?;
            if !(l.percent > 0.0 && l.percent < 100.0) {
                return Err(Error::validation(format!(
                    "planted percent {} for {} outside (0, 100)",
                    l.percent, l.segment
                )));
            }
        }
        Ok(())
    }
}

/// `d0 · (1 + a·cos(2π t / P)) · (1 − q·exp(−(t − c)² / 2w²))` with
/// `q = percent / 100`. Placing `c` on a ripple crest makes the narrowing
/// between the notch floor and crests well outside the notch `percent`.
pub fn planted_profile(d0: f64, len: usize, center: Option<f64>, percent: f64) -> Vec<f64> {
    let q = percent / 100.0;
    (0..len)
        .map(|t| {
            let t = t as f64;
            let ripple = 1.0 + RIPPLE_AMPLITUDE * (2.0 * PI * t / RIPPLE_PERIOD as f64).cos();
            let notch = match center {
                Some(c) => 1.0 - q * (-(t - c).powi(2) / (2.0 * NOTCH_WIDTH * NOTCH_WIDTH)).exp(),
                None => 1.0,
            };
            d0 * ripple * notch
        })
        .collect()
}

struct Segment {
    label: ArteryLabel,
    parent: Option<usize>,
    start: [f64; 2],
    end: [f64; 2],
    heading: f64,
    diameter: f64,
    depth: usize,
}

fn walk(start: [f64; 2], heading: f64, length: f64) -> [f64; 2] {
    [start[0] + length * heading.cos(), start[1] + length * heading.sin()]
}

fn scaled(c: f64) -> f64 {
    (c - IMAGE_CENTER) / IMAGE_CENTER
}

/// Builds the tree in canonical order: LMA, LAD1.., LCX1.., D1.., OM1...
/// Headings are in image coordinates (y grows downward).
pub fn generate_tree(spec: &TreeSpec) -> Result<VascularGraph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.geometry_seed);
    let mut jitter = |deg: f64| rng.random_range(-deg..=deg).to_radians();
    let mut segs: Vec<Segment> = Vec::with_capacity(spec.node_count());
    let mut lengths = ChaCha8Rng::seed_from_u64(seed::derive(spec.geometry_seed, &[1]));
    let mut len = |base: f64| base * lengths.random_range(0.85..1.15);
    let mut widths = ChaCha8Rng::seed_from_u64(seed::derive(spec.geometry_seed, &[2]));
    let mut width = |base: f64| base * widths.random_range(0.9..1.1);

    let lma_heading = 90f64.to_radians() + jitter(8.0);
    let lma_start = [IMAGE_CENTER, 60.0];
    segs.push(Segment {
        label: ArteryLabel::coarse(CoarseLabel::LMA),
        parent: None,
        start: lma_start,
        end: walk(lma_start, lma_heading, len(40.0)),
        heading: lma_heading,
        diameter: width(4.5),
        depth: 0,
    });

    let chain = |segs: &mut Vec<Segment>,
                 coarse: CoarseLabel,
                 count: usize,
                 heading0: f64,
                 turn: f64,
                 base_len: f64,
                 base_d: f64,
                 jitter: &mut dyn FnMut(f64) -> f64,
                 len: &mut dyn FnMut(f64) -> f64,
                 width: &mut dyn FnMut(f64) -> f64| {
        let mut parent = 0;
        let mut heading = heading0 + jitter(8.0);
        for k in 0..count {
            let start = segs[parent].end;
            let end = walk(start, heading, len(base_len));
            segs.push(Segment {
                label: ArteryLabel { coarse, sub: Some(k as u32 + 1) },
                parent: Some(parent),
                start,
                end,
                heading,
                diameter: width(base_d * 0.92f64.powi(k as i32)),
                depth: k + 1,
            });
            parent = segs.len() - 1;
            heading += turn + jitter(6.0);
        }
    };
    chain(&mut segs, CoarseLabel::LAD, spec.lad_segments, 40f64.to_radians(), 12f64.to_radians(), 70.0, 3.6, &mut jitter, &mut len, &mut width);
    chain(&mut segs, CoarseLabel::LCX, spec.lcx_segments, 155f64.to_radians(), 15f64.to_radians(), 55.0, 3.2, &mut jitter, &mut len, &mut width);

    let lad0 = 1;
    let lcx0 = 1 + spec.lad_segments;
    for (coarse, count, host0, offset, base_len) in [
        (CoarseLabel::D, spec.d_branches, lad0, -45.0f64, 45.0),
        (CoarseLabel::OM, spec.om_branches, lcx0, 50.0, 40.0),
    ] {
        for k in 0..count {
            let host = host0 + k;
            let heading = segs[host].heading + offset.to_radians() + jitter(8.0);
            let start = segs[host].end;
            segs.push(Segment {
                label: ArteryLabel { coarse, sub: Some(k as u32 + 1) },
                parent: Some(host),
                start,
                end: walk(start, heading, len(base_len)),
                heading,
                diameter: width(2.2),
                depth: segs[host].depth + 1,
            });
        }
    }

    for lesion in &spec.stenosis_plan {
        if !segs.iter().any(|s| s.label == lesion.segment) {
            return Err(Error::validation(format!(
                "stenosis planned on {}, which the tree does not contain",
                lesion.segment
            )));
        }
    }

    let n = segs.len();
    let mut degree = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    for (i, s) in segs.iter().enumerate() {
        if let Some(p) = s.parent {
            edges.push((p, i));
            degree[p] += 1;
            degree[i] += 1;
        }
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.geometry_seed, &[3]));
    let noise = Normal::new(0.0, spec.feature_noise).map_err(|e| Error::validation(e.to_string()))?;
    let nodes = segs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let center_sample = spec
                .stenosis_plan
                .iter()
                .find(|l| l.segment == s.label)
                .map(|l| ((PROFILE_SAMPLES / 2 / RIPPLE_PERIOD * RIPPLE_PERIOD) as f64, l.percent));
            let diameters = planted_profile(
                s.diameter,
                PROFILE_SAMPLES,
                center_sample.map(|c| c.0),
                center_sample.map_or(0.0, |c| c.1),
            );
            let centerline: Vec<[f64; 2]> = (0..PROFILE_SAMPLES)
                .map(|k| {
                    let t = k as f64 / (PROFILE_SAMPLES - 1) as f64;
                    [
                        s.start[0] + t * (s.end[0] - s.start[0]),
                        s.start[1] + t * (s.end[1] - s.start[1]),
                    ]
                })
                .collect();
            let (dx, dy) = (s.end[0] - s.start[0], s.end[1] - s.start[1]);
            let length = dx.hypot(dy);
            let mean_d = diameters.iter().sum::<f64>() / diameters.len() as f64;
            let mut features = vec![0.0; spec.d_in];
            features[..MEANINGFUL_FEATURES].copy_from_slice(&[
                degree[i] as f64 / 4.0,
                scaled(s.start[0]),
                scaled(s.start[1]),
                scaled(s.end[0]),
                scaled(s.end[1]),
                scaled(0.5 * (s.start[0] + s.end[0])),
                scaled(0.5 * (s.start[1] + s.end[1])),
                length / 100.0,
                mean_d / 5.0,
                dx / length,
                dy / length,
                s.depth as f64 / 5.0,
            ]);
            if spec.feature_noise > 0.0 {
                for f in &mut features[..MEANINGFUL_FEATURES] {
                    *f += noise.sample(&mut noise_rng);
                }
            }
            ArteryNode {
                id: i,
                features,
                label: Some(s.label),
                centerline: Some(centerline),
                diameters: Some(diameters),
            }
        })
        .collect();
    VascularGraph::new(format!("synthetic-{}", spec.geometry_seed), spec.view, nodes, edges)
}

/// Shuffled copy with jittered features. Node `i` of `g` becomes node
/// `perm.apply(i)` of the copy. Positional features first get one shared
/// random similarity transform (rotation, scale, shift of size `σ`), then
/// every meaningful feature gets independent `N(0, σ²)` noise. Labels,
/// centerlines and diameters are carried over unchanged.
pub fn perturb(g: &VascularGraph, sigma: f64, seed: u64) -> Result<(VascularGraph, PermutationMatrix)> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::validation(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: Vec<usize> = (0..g.n()).collect();
    assignment.shuffle(&mut rng);
    let perm = PermutationMatrix::new(assignment)?;
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::validation(e.to_string()))?;
    let meaningful = MEANINGFUL_FEATURES.min(g.feature_dim());
    let (angle, scale, tx, ty) = if sigma > 0.0 {
        (
            normal.sample(&mut rng),
            1.0 + normal.sample(&mut rng),
            normal.sample(&mut rng),
            normal.sample(&mut rng),
        )
    } else {
        (0.0, 1.0, 0.0, 0.0)
    };
    let (c, s) = (angle.cos(), angle.sin());
    let nodes = g
        .nodes()
        .iter()
        .map(|v| {
            let mut f = v.features.clone();
            if sigma > 0.0 {
                for pair in POSITION_FEATURES.chunks(2) {
                    let (x, y) = (pair[0], pair[1]);
                    if y < meaningful {
                        let (px, py) = (f[x], f[y]);
                        f[x] = scale * (c * px - s * py) + tx;
                        f[y] = scale * (s * px + c * py) + ty;
                    }
                }
                let [x, y] = DIRECTION_FEATURES;
                if y < meaningful {
                    let (px, py) = (f[x], f[y]);
                    f[x] = c * px - s * py;
                    f[y] = s * px + c * py;
                }
                for v in &mut f[..meaningful] {
                    *v += normal.sample(&mut rng);
                }
            }
            ArteryNode {
                id: perm.apply(v.id),
                features: f,
                ..v.clone()
            }
        })
        .collect();
    let edges = g
        .edges()
        .iter()
        .map(|&(a, b)| (perm.apply(a), perm.apply(b)))
        .collect();
    Ok((VascularGraph::new(g.id(), g.view(), nodes, edges)?, perm))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Composition and view shared by every tree. Its `feature_noise` is
    /// applied through [`perturb`]; `geometry_seed` and `stenosis_plan`
    /// are replaced per tree.
    pub tree: TreeSpec,
    pub count: usize,
    /// Train, test and template sizes; must sum to `count`.
    pub splits: [usize; 3],
    /// Probability that a non-LMA segment carries a planted lesion.
    #[serde(default)]
    pub lesion_rate: f64,
    /// Range of planted narrowing, percent.
    #[serde(default = "default_lesion_range")]
    pub lesion_percent: [f64; 2],
}

fn default_lesion_range() -> [f64; 2] {
    [1.0, 95.0]
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        if self.splits.iter().sum::<usize>() != self.count {
            return Err(Error::validation(format!(
                "splits {}/{}/{} do not sum to count {}",
                self.splits[0], self.splits[1], self.splits[2], self.count
            )));
        }
        if !(0.0..=1.0).contains(&self.lesion_rate) {
            return Err(Error::validation("lesion_rate must lie in [0, 1]"));
        }
        let [lo, hi] = self.lesion_percent;
        if !(lo > 0.0 && lo <= hi && hi < 100.0) {
            return Err(Error::validation("lesion_percent must satisfy 0 < lo <= hi < 100"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Template,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticGraph {
    pub split: Split,
    pub graph: VascularGraph,
    pub lesions: Vec<PlantedLesion>,
}

/// `count` trees, each with its own geometry, lesions, noise and node
/// order, all derived from `seed`. Graph ids are `g000`, `g001`, ...
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<Vec<SyntheticGraph>> {
    spec.validate()?;
    let width = spec.count.saturating_sub(1).to_string().len().max(3);
    let splits = [Split::Train, Split::Test, Split::Template];
    let mut split_of = Vec::with_capacity(spec.count);
    for (s, &k) in splits.iter().zip(&spec.splits) {
        split_of.extend(std::iter::repeat_n(*s, k));
    }
    let labels = generate_tree(&TreeSpec { stenosis_plan: vec![], feature_noise: 0.0, ..spec.tree.clone() })?
        .labels()?;
    (0..spec.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[i as u64, 0]));
            let mut lesions = Vec::new();
            for &segment in labels.iter().filter(|l| l.coarse != CoarseLabel::LMA) {
                if rng.random_bool(spec.lesion_rate) {
                    let [lo, hi] = spec.lesion_percent;
                    lesions.push(PlantedLesion { segment, percent: rng.random_range(lo..=hi) });
                }
            }
            let tree = TreeSpec {
                feature_noise: 0.0,
                geometry_seed: seed::derive(seed, &[i as u64, 1]),
                stenosis_plan: lesions.clone(),
                ..spec.tree.clone()
            };
            let clean = generate_tree(&tree)?;
            let (g, _) = perturb(&clean, spec.tree.feature_noise, seed::derive(seed, &[i as u64, 2]))?;
            Ok(SyntheticGraph {
                split: split_of[i],
                graph: g.with_id(format!("g{i:0width$}")),
                lesions,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ground_truth_permutation, PrimaryAngle, SecondaryAngle};
    use crate::labeling::{structural_loss, AnatomyTable};
    use crate::stenosis::{stenosis_percent, DiameterProfile};

    const VIEW: ViewAngle = ViewAngle::new(PrimaryAngle::LAO, SecondaryAngle::CRA);

    #[test]
    fn small_spec_shape() {
        let g = generate_tree(&TreeSpec::new(2, 1, 1, 1, VIEW)).unwrap();
        assert_eq!((g.n(), g.edges().len()), (6, 5));
        let t = AnatomyTable::default();
        assert_eq!(structural_loss(&g, &g.coarse_labels().unwrap(), &t).unwrap(), 0.0);
        assert_eq!(g.feature_dim(), DEFAULT_FEATURE_DIM);
        g.check_unique_labels().unwrap();
    }

    #[test]
    fn deterministic_per_seed() {
        let mut s = TreeSpec::new(3, 2, 2, 1, VIEW);
        s.geometry_seed = 42;
        s.feature_noise = 0.05;
        let a = generate_tree(&s).unwrap();
        assert_eq!(a.to_json_string(), generate_tree(&s).unwrap().to_json_string());
        s.geometry_seed = 43;
        assert_ne!(a.to_json_string(), generate_tree(&s).unwrap().to_json_string());
    }

    #[test]
    fn random_specs_are_valid_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = AnatomyTable::default();
        for k in 0..100 {
            let lad = rng.random_range(1..5);
            let lcx = rng.random_range(1..4);
            let mut s = TreeSpec::new(lad, lcx, rng.random_range(0..=lad), rng.random_range(0..=lcx), VIEW);
            s.geometry_seed = k;
            let g = generate_tree(&s).unwrap();
            assert_eq!(g.n(), s.node_count());
            assert_eq!(structural_loss(&g, &g.coarse_labels().unwrap(), &t).unwrap(), 0.0);
            let back = VascularGraph::from_json_str(&g.to_json_string()).unwrap();
            assert_eq!(back, g);
        }
    }

    #[test]
    fn spec_errors() {
        assert!(generate_tree(&TreeSpec::new(1, 1, 2, 0, VIEW)).is_err());
        assert!(generate_tree(&TreeSpec::new(1, 1, 0, 2, VIEW)).is_err());
        assert!(generate_tree(&TreeSpec::new(0, 1, 0, 0, VIEW)).is_err());
        let mut s = TreeSpec::new(1, 1, 0, 0, VIEW);
        s.stenosis_plan = vec![PlantedLesion { segment: ArteryLabel::new(CoarseLabel::D, Some(1)).unwrap(), percent: 40.0 }];
        assert!(generate_tree(&s).is_err());
        s.stenosis_plan[0].segment = ArteryLabel::new(CoarseLabel::LAD, Some(1)).unwrap();
        s.stenosis_plan[0].percent = 100.0;
        assert!(generate_tree(&s).is_err());
    }

    #[test]
    fn planted_lesion_recovered() {
        let mut s = TreeSpec::new(3, 2, 1, 1, VIEW);
        let lad2 = ArteryLabel::new(CoarseLabel::LAD, Some(2)).unwrap();
        s.stenosis_plan = vec![PlantedLesion { segment: lad2, percent: 62.0 }];
        let g = generate_tree(&s).unwrap();
        for v in g.nodes() {
            let f = stenosis_percent(&DiameterProfile::new(v.diameters.clone().unwrap()).unwrap());
            if v.label == Some(lad2) {
                assert!((f.percent - 62.0).abs() < 1e-3, "{}", f.percent);
            } else {
                assert!(!f.detected(), "{:?}", f);
            }
        }
    }

    #[test]
    fn zero_noise_identity_shuffle_keeps_features() {
        let g = generate_tree(&TreeSpec::new(2, 2, 1, 1, VIEW)).unwrap();
        let (h, p) = perturb(&g, 0.0, 5).unwrap();
        for v in g.nodes() {
            assert_eq!(v.features, h.node(p.apply(v.id)).features);
        }
        assert_eq!(ground_truth_permutation(&g, &h).unwrap(), p);
    }

    #[test]
    fn perturb_permutation_is_label_correspondence() {
        let g = generate_tree(&TreeSpec::new(3, 2, 2, 2, VIEW)).unwrap();
        for seed in 0..20 {
            let (h, p) = perturb(&g, 0.1, seed).unwrap();
            assert_eq!(ground_truth_permutation(&g, &h).unwrap(), p);
        }
        assert!(perturb(&g, -1.0, 0).is_err());
    }

    #[test]
    fn noise_magnitude_on_non_positional_features() {
        let g = generate_tree(&TreeSpec::new(3, 2, 2, 2, VIEW)).unwrap();
        let sigma = 0.05;
        let (mut sum, mut count) = (0.0, 0usize);
        for seed in 0..50 {
            let (h, p) = perturb(&g, sigma, seed).unwrap();
            for v in g.nodes() {
                let w = &h.node(p.apply(v.id)).features;
                for k in [0, 7, 8, 11] {
                    sum += (w[k] - v.features[k]).abs();
                    count += 1;
                }
            }
        }
        let mean = sum / count as f64;
        let want = sigma * (2.0 / PI).sqrt();
        assert!((mean - want).abs() < 0.1 * want, "{mean} vs {want}");
    }

    fn dataset_spec() -> DatasetSpec {
        let mut tree = TreeSpec::new(3, 2, 2, 2, VIEW);
        tree.feature_noise = 0.05;
        DatasetSpec { tree, count: 10, splits: [5, 3, 2], lesion_rate: 0.3, lesion_percent: [1.0, 95.0] }
    }

    #[test]
    fn dataset_is_deterministic_and_split() {
        let a = generate_dataset(&dataset_spec(), 9).unwrap();
        let b = generate_dataset(&dataset_spec(), 9).unwrap();
        assert_eq!(a.len(), 10);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.graph.to_json_string(), y.graph.to_json_string());
        }
        assert_eq!(a.iter().filter(|g| g.split == Split::Test).count(), 3);
        assert_eq!(a[9].split, Split::Template);
        assert_eq!(a[0].graph.id(), "g000");
        assert!(a.iter().any(|g| !g.lesions.is_empty()));
        let c = generate_dataset(&dataset_spec(), 10).unwrap();
        assert_ne!(a[0].graph.to_json_string(), c[0].graph.to_json_string());
        let mut bad = dataset_spec();
        bad.splits = [5, 3, 3];
        assert!(generate_dataset(&bad, 0).is_err());
    }

    #[test]
    fn dataset_lesions_match_profiles() {
        for sg in generate_dataset(&dataset_spec(), 3).unwrap() {
            for v in sg.graph.nodes() {
                let f = stenosis_percent(&DiameterProfile::new(v.diameters.clone().unwrap()).unwrap());
                match sg.lesions.iter().find(|l| Some(l.segment) == v.label) {
                    Some(l) => assert!((f.percent - l.percent).abs() < 1e-3),
                    None => assert!(!f.detected()),
                }
            }
        }
    }
}
