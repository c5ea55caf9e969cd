//! Random label-map sampling from an empirical box distribution.
//!
//! Fitting records, per training tile, how many boxes it held and the
//! pooled box sizes. Sampling draws a box count from that histogram, then
//! places boxes one at a time: size resampled from the pool with a small
//! multiplicative jitter, position uniform, rejecting placements that
//! overlap an accepted box by more than a pairwise IoU cap.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BBox, DataError, DatasetManifest, LabelMap, ManifestEntry, Split};
use crate::rng::{seeded, streams};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("cannot fit a distribution from an empty manifest")]
    EmptyManifest,

    #[error("distribution has no count entries")]
    EmptyCounts,

    #[error("distribution has boxes per tile but no sizes to draw from")]
    NoSizes,

    #[error("count probabilities sum to {0}, expected 1")]
    BadProbabilities(f64),

    #[error("box size {w}x{h} is outside [1, {tile_size}]")]
    SizeOutOfRange { w: u32, h: u32, tile_size: u32 },

    #[error("size jitter {0} must lie in [0, 1)")]
    BadJitter(f64),

    #[error("pairwise IoU cap {0} must lie in [0, 1]")]
    BadIouCap(f64),

    #[error("max placement attempts must be at least 1")]
    ZeroAttempts,

    #[error("row bands must be at least 1 when set")]
    ZeroRowBands,

    #[error("sampled a target of {target} boxes but placed none within the attempt budget")]
    NoBoxesPlaced { target: u32 },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("{context} {path}: {source}")]
    Io {
        context: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed distribution file {path}: {source}")]
    Malformed {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Empirical distribution of per-tile box counts and pooled box sizes.
///
/// `counts` maps a box count to its probability (JSON object keys, so
/// counts appear as strings on disk); `sizes` is the pool of observed
/// `(w, h)` pairs, sampled uniformly with repetition preserved so common
/// sizes stay common.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDistribution {
    pub tile_size: u32,
    pub counts: BTreeMap<u32, f64>,
    pub sizes: Vec<(u32, u32)>,
}

impl BoxDistribution {
    /// Checks probabilities sum to 1 and sizes fit the tile.
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.counts.is_empty() {
            return Err(SamplerError::EmptyCounts);
        }
        let sum: f64 = self.counts.values().sum();
        if (sum - 1.0).abs() > 1e-9 || self.counts.values().any(|&p| p < 0.0) {
            return Err(SamplerError::BadProbabilities(sum));
        }
        let needs_sizes = self.counts.iter().any(|(&c, &p)| c > 0 && p > 0.0);
        if needs_sizes && self.sizes.is_empty() {
            return Err(SamplerError::NoSizes);
        }
        for &(w, h) in &self.sizes {
            if w == 0 || h == 0 || w > self.tile_size || h > self.tile_size {
                return Err(SamplerError::SizeOutOfRange {
                    w,
                    h,
                    tile_size: self.tile_size,
                });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), SamplerError> {
        let text = serde_json::to_string_pretty(self).expect("distribution serialization is total");
        std::fs::write(path, text.as_bytes()).map_err(|source| SamplerError::Io {
            context: "writing distribution",
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SamplerError> {
        let text = std::fs::read_to_string(path).map_err(|source| SamplerError::Io {
            context: "reading distribution",
            path: path.to_path_buf(),
            source,
        })?;
        let dist: BoxDistribution =
            serde_json::from_str(&text).map_err(|source| SamplerError::Malformed {
                path: path.to_path_buf(),
                source,
            })?;
        dist.validate()?;
        Ok(dist)
    }
}

/// Fits the empirical distribution over a manifest's annotations.
///
/// `tile_size` is passed explicitly because manifests carry no pixel
/// dimensions; it bounds valid sizes and becomes the sampling canvas.
pub fn fit_distribution(
    manifest: &DatasetManifest,
    tile_size: u32,
) -> Result<BoxDistribution, SamplerError> {
    if manifest.entries.is_empty() {
        return Err(SamplerError::EmptyManifest);
    }
    let mut histogram: BTreeMap<u32, u64> = BTreeMap::new();
    let mut sizes = Vec::new();
    for entry in &manifest.entries {
        *histogram.entry(entry.boxes.len() as u32).or_insert(0) += 1;
        for b in &entry.boxes {
            sizes.push((b.w, b.h));
        }
    }
    let n = manifest.entries.len() as f64;
    let counts = histogram
        .into_iter()
        .map(|(count, freq)| (count, freq as f64 / n))
        .collect();
    let dist = BoxDistribution {
        tile_size,
        counts,
        sizes,
    };
    dist.validate()?;
    Ok(dist)
}

/// Sampling behavior knobs. Defaults mirror the training-data statistics:
/// a low pairwise-overlap cap keeps panicles visually distinct, and the
/// small size jitter breaks up exact repeats of pooled sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub seed: u64,
    /// Maximum IoU allowed between any two placed boxes.
    pub max_pair_iou: f64,
    /// Half-width of the uniform multiplicative size jitter.
    pub size_jitter: f64,
    /// Placement attempts per box before it is dropped with a warning.
    pub max_placement_attempts: u32,
    /// When set, each box is anchored to one of this many horizontal
    /// bands, imitating row-planted fields. Off by default.
    pub row_bands: Option<u32>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            seed: 0,
            max_pair_iou: 0.1,
            size_jitter: 0.05,
            max_placement_attempts: 100,
            row_bands: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(0.0..1.0).contains(&self.size_jitter) {
            return Err(SamplerError::BadJitter(self.size_jitter));
        }
        if !(0.0..=1.0).contains(&self.max_pair_iou) {
            return Err(SamplerError::BadIouCap(self.max_pair_iou));
        }
        if self.max_placement_attempts == 0 {
            return Err(SamplerError::ZeroAttempts);
        }
        if self.row_bands == Some(0) {
            return Err(SamplerError::ZeroRowBands);
        }
        Ok(())
    }
}

/// A sampled label map with its boxes and how many placements gave up.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub labelmap: LabelMap,
    pub boxes: Vec<BBox>,
    /// Boxes dropped after exhausting the attempt budget; the realized
    /// count is the drawn target minus this.
    pub dropped: u32,
}

/// Samples one label map using the caller's generator (the seeded-stream
/// form used by [`generate_random_manifest`]).
pub fn sample_labelmap_with_rng(
    dist: &BoxDistribution,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SampleOutcome, SamplerError> {
    dist.validate()?;
    cfg.validate()?;

    let target = draw_count(dist, rng);
    let mut boxes: Vec<BBox> = Vec::with_capacity(target as usize);
    let mut dropped = 0u32;
    for _ in 0..target {
        match place_box(dist, cfg, &boxes, rng) {
            Some(b) => boxes.push(b),
            None => {
                dropped += 1;
                log::warn!(
                    "dropped a box after {} placement attempts (placed {}, target {})",
                    cfg.max_placement_attempts,
                    boxes.len(),
                    target
                );
            }
        }
    }
    if target > 0 && boxes.is_empty() {
        return Err(SamplerError::NoBoxesPlaced { target });
    }

    boxes.sort();
    let labelmap = LabelMap::from_boxes(&boxes, dist.tile_size, dist.tile_size)?;
    Ok(SampleOutcome {
        labelmap,
        boxes,
        dropped,
    })
}

/// Samples one label map from the config's seed alone.
pub fn sample_labelmap(
    dist: &BoxDistribution,
    cfg: &SamplerConfig,
) -> Result<SampleOutcome, SamplerError> {
    let mut rng = seeded(cfg.seed, streams::SAMPLE_BASE);
    sample_labelmap_with_rng(dist, cfg, &mut rng)
}

/// Inverse-CDF draw over the count histogram (ascending count order).
fn draw_count(dist: &BoxDistribution, rng: &mut ChaCha8Rng) -> u32 {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last = 0;
    for (&count, &p) in &dist.counts {
        cumulative += p;
        last = count;
        if u < cumulative {
            return count;
        }
    }
    // Float round-off can leave the total a hair under 1.
    last
}

/// Tries to place one box under the pairwise IoU cap.
fn place_box(
    dist: &BoxDistribution,
    cfg: &SamplerConfig,
    accepted: &[BBox],
    rng: &mut ChaCha8Rng,
) -> Option<BBox> {
    let tile = dist.tile_size;
    for _ in 0..cfg.max_placement_attempts {
        let (w0, h0) = dist.sizes[rng.random_range(0..dist.sizes.len())];
        let w = jitter_size(w0, cfg.size_jitter, tile, rng);
        let h = jitter_size(h0, cfg.size_jitter, tile, rng);

        let x = rng.random_range(0..=tile - w);
        let y = match cfg.row_bands {
            None => rng.random_range(0..=tile - h),
            Some(k) => {
                // The box starts inside a uniformly chosen band; degenerate
                // overlaps clamp to the nearest valid start row.
                let band = rng.random_range(0..k);
                let lo = (u64::from(band) * u64::from(tile) / u64::from(k)) as u32;
                let hi = ((u64::from(band) + 1) * u64::from(tile) / u64::from(k)) as u32;
                let hi = hi.saturating_sub(1).min(tile - h);
                let lo = lo.min(tile - h);
                if lo >= hi {
                    lo
                } else {
                    rng.random_range(lo..=hi)
                }
            }
        };

        let candidate = BBox { x, y, w, h };
        if accepted.iter().all(|b| b.iou(&candidate) <= cfg.max_pair_iou) {
            return Some(candidate);
        }
    }
    None
}

/// Applies the multiplicative jitter: uniform factor in
/// `[1 - jitter, 1 + jitter)`, rounded and clamped to `[1, tile]`.
fn jitter_size(size: u32, jitter: f64, tile: u32, rng: &mut ChaCha8Rng) -> u32 {
    let factor = 1.0 + jitter * (2.0 * rng.random::<f64>() - 1.0);
    let jittered = (size as f64 * factor).round() as i64;
    jittered.clamp(1, i64::from(tile)) as u32
}

/// Samples `n` label maps, writes them as PNGs plus a manifest into
/// `out_dir`, and returns the manifest (paths relative to it).
///
/// Entry `i` draws from its own seeded stream, so regenerating with the
/// same seed reproduces every file byte-for-byte and changing `n` never
/// changes the first `n` maps.
pub fn generate_random_manifest(
    dist: &BoxDistribution,
    cfg: &SamplerConfig,
    n: usize,
    out_dir: &Path,
) -> Result<DatasetManifest, SamplerError> {
    std::fs::create_dir_all(out_dir).map_err(|source| SamplerError::Io {
        context: "creating output directory",
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut manifest = DatasetManifest::new(Split::Train);
    manifest.set_base_dir(out_dir);
    for i in 0..n {
        let mut rng = seeded(cfg.seed, streams::SAMPLE_BASE + i as u64);
        let outcome = sample_labelmap_with_rng(dist, cfg, &mut rng)?;
        let id = format!("synth_{i:05}");
        let file = format!("{id}_label.png");
        outcome.labelmap.save_png(&out_dir.join(&file))?;
        manifest.push(ManifestEntry {
            id,
            image: None,
            labelmap: Some(PathBuf::from(file)),
            boxes: outcome.boxes,
            provenance: None,
        })?;
    }
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dist() -> BoxDistribution {
        BoxDistribution {
            tile_size: 64,
            counts: BTreeMap::from([(2, 0.25), (3, 0.5), (4, 0.25)]),
            sizes: vec![(8, 6), (10, 8), (7, 7), (9, 10), (6, 9)],
        }
    }

    #[test]
    fn fit_matches_hand_computed_histogram() {
        let mut m = DatasetManifest::new(Split::Train);
        let mk = |id: &str, boxes: Vec<BBox>| ManifestEntry {
            id: id.into(),
            image: None,
            labelmap: None,
            boxes,
            provenance: None,
        };
        let b = |x, y, w, h| BBox::new(x, y, w, h).unwrap();
        m.push(mk("a", vec![b(0, 0, 4, 4), b(10, 0, 6, 5)])).unwrap();
        m.push(mk("b", vec![b(0, 0, 4, 4)])).unwrap();
        m.push(mk("c", vec![b(2, 2, 3, 7), b(20, 20, 4, 4)])).unwrap();
        m.push(mk("d", vec![])).unwrap();

        let dist = fit_distribution(&m, 64).unwrap();
        assert_eq!(dist.tile_size, 64);
        assert_eq!(
            dist.counts,
            BTreeMap::from([(0, 0.25), (1, 0.25), (2, 0.5)])
        );
        assert_eq!(
            dist.sizes,
            vec![(4, 4), (6, 5), (4, 4), (3, 7), (4, 4)]
        );
    }

    #[test]
    fn fit_rejects_empty_and_oversized() {
        let m = DatasetManifest::new(Split::Train);
        assert!(matches!(
            fit_distribution(&m, 64),
            Err(SamplerError::EmptyManifest)
        ));

        let mut m = DatasetManifest::new(Split::Train);
        m.push(ManifestEntry {
            id: "a".into(),
            image: None,
            labelmap: None,
            boxes: vec![BBox::new(0, 0, 80, 4).unwrap()],
            provenance: None,
        })
        .unwrap();
        assert!(matches!(
            fit_distribution(&m, 64),
            Err(SamplerError::SizeOutOfRange { w: 80, .. })
        ));
    }

    #[test]
    fn validation_catches_bad_distributions() {
        let mut d = small_dist();
        d.counts.insert(5, 0.5);
        assert!(matches!(
            d.validate(),
            Err(SamplerError::BadProbabilities(_))
        ));

        let d = BoxDistribution {
            tile_size: 64,
            counts: BTreeMap::from([(3, 1.0)]),
            sizes: vec![],
        };
        assert!(matches!(d.validate(), Err(SamplerError::NoSizes)));

        // All mass on zero boxes needs no sizes.
        let d = BoxDistribution {
            tile_size: 64,
            counts: BTreeMap::from([(0, 1.0)]),
            sizes: vec![],
        };
        assert!(d.validate().is_ok());
    }

    #[test]
    fn sampled_maps_respect_constraints() {
        let dist = small_dist();
        let cfg = SamplerConfig {
            seed: 11,
            ..SamplerConfig::default()
        };
        for i in 0..50 {
            let mut rng = seeded(cfg.seed, streams::SAMPLE_BASE + i);
            let s = sample_labelmap_with_rng(&dist, &cfg, &mut rng).unwrap();
            assert!(!s.boxes.is_empty());
            assert!(s.boxes.len() <= 4);
            assert_eq!(s.labelmap.width(), 64);
            for b in &s.boxes {
                assert!(b.fits(64, 64));
            }
            for (j, a) in s.boxes.iter().enumerate() {
                for b in &s.boxes[j + 1..] {
                    assert!(
                        a.iou(b) <= cfg.max_pair_iou + 1e-12,
                        "{a:?} vs {b:?} iou {}",
                        a.iou(b)
                    );
                }
            }
            // The label map is exactly the union of the boxes.
            let expect = LabelMap::from_boxes(&s.boxes, 64, 64).unwrap();
            assert_eq!(s.labelmap, expect);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let dist = small_dist();
        let cfg = SamplerConfig {
            seed: 5,
            ..SamplerConfig::default()
        };
        let a = sample_labelmap(&dist, &cfg).unwrap();
        let b = sample_labelmap(&dist, &cfg).unwrap();
        assert_eq!(a, b);

        let other = sample_labelmap(
            &dist,
            &SamplerConfig {
                seed: 6,
                ..cfg
            },
        )
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn jitter_perturbs_large_sizes() {
        let mut rng = seeded(3, 0);
        // 5% of 40 is 2px, so neighbors appear.
        let sizes: BTreeMap<u32, u32> =
            (0..2000).map(|_| jitter_size(40, 0.05, 64, &mut rng)).fold(
                BTreeMap::new(),
                |mut acc, s| {
                    *acc.entry(s).or_insert(0) += 1;
                    acc
                },
            );
        assert!(sizes.len() >= 3, "jitter produced {sizes:?}");
        assert!(sizes.keys().all(|&s| (38..=42).contains(&s)));

        // Jitter never pushes a size out of [1, tile].
        for _ in 0..500 {
            let s = jitter_size(64, 0.05, 64, &mut rng);
            assert!((1..=64).contains(&s));
        }
    }

    #[test]
    fn impossible_targets_error_instead_of_underdelivering_silently() {
        // Tile-sized boxes cannot coexist under a 0.1 IoU cap: a 2-box
        // target places the first and must report the second as dropped.
        // (Placing zero of a positive target is an error, but that needs
        // an unplaceable size, which validation already rejects.)
        let dist = BoxDistribution {
            tile_size: 16,
            counts: BTreeMap::from([(2, 1.0)]),
            sizes: vec![(16, 16)],
        };
        let cfg = SamplerConfig {
            seed: 1,
            max_placement_attempts: 5,
            ..SamplerConfig::default()
        };
        let mut rng = seeded(cfg.seed, streams::SAMPLE_BASE);
        let s = sample_labelmap_with_rng(&dist, &cfg, &mut rng).unwrap();
        assert_eq!(s.boxes.len(), 1);
        assert_eq!(s.dropped, 1);
    }

    #[test]
    fn distribution_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dist.json");
        let dist = small_dist();
        dist.save(&path).unwrap();
        let back = BoxDistribution::load(&path).unwrap();
        assert_eq!(back, dist);

        // Counts serialize as a JSON object with string keys.
        let value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(value["counts"]["3"], 0.5);
        assert_eq!(value["tile_size"], 64);
        assert_eq!(value["sizes"][0], serde_json::json!([8, 6]));
    }

    #[test]
    fn generated_set_is_reproducible_and_prefix_stable() {
        let dist = small_dist();
        let cfg = SamplerConfig {
            seed: 21,
            ..SamplerConfig::default()
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();

        let m5 = generate_random_manifest(&dist, &cfg, 5, dir_a.path()).unwrap();
        let m3 = generate_random_manifest(&dist, &cfg, 3, dir_b.path()).unwrap();
        assert_eq!(m5.entries.len(), 5);
        assert_eq!(m5.entries[..3], m3.entries[..]);

        // Byte-identical PNGs across runs.
        for e in &m3.entries {
            let rel = e.labelmap.as_ref().unwrap();
            let a = std::fs::read(dir_a.path().join(rel)).unwrap();
            let b = std::fs::read(dir_b.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel:?} differs between runs");
        }

        // The manifest on disk validates (all files present).
        let loaded = DatasetManifest::load(&dir_a.path().join("manifest.json")).unwrap();
        assert_eq!(loaded, m5);
    }
}
