//! Saliency maps and video fingerprints: normalization, synthetic
//! generation, trace pairing, and the on-disk library format.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{from_spherical, make_quaternion, SphericalAngles, Vec3};
use crate::pgm;
use crate::trace::SampledTrace;

/// Relative weight of the smoothing floor added by [`normalize_saliency`]:
/// every cell receives `NORMALIZE_EPSILON_RATIO * max_cell` before the mass
/// is normalized, so a trace crossing a zero-saliency region still produces
/// a finite log-likelihood.
pub const NORMALIZE_EPSILON_RATIO: f64 = 1e-6;

/// A nonnegative heat map over a W x H equirectangular frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    t_ms: i64,
    /// Row-major cells, `cells[row * width + col]`.
    cells: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, t_ms: i64, cells: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "saliency map must be at least 1x1, got {width}x{height}"
            )));
        }
        if cells.len() != width * height {
            return Err(Error::invalid(format!(
                "cell count {} does not match {width}x{height}",
                cells.len()
            )));
        }
        if let Some(bad) = cells.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::invalid(format!(
                "saliency cells must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(SaliencyMap {
            width,
            height,
            t_ms,
            cells,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn t_ms(&self) -> i64 {
        self.t_ms
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn cell(&self, col: usize, row: usize) -> f64 {
        self.cells[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.cells.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.cells.iter().fold(0.0, |a, &b| a.max(b))
    }

    /// (col, row) of the largest cell; row-major first on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &c) in self.cells.iter().enumerate() {
            if c > self.cells[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    /// Unit direction of a cell's center.
    pub fn cell_direction(&self, col: usize, row: usize) -> Vec3 {
        cell_center_direction(self.width, self.height, col, row)
    }
}

/// Unit direction corresponding to the center of cell (col, row) on a
/// width x height equirectangular grid (inverse of the projection at the
/// half-cell point).
pub fn cell_center_direction(width: usize, height: usize, col: usize, row: usize) -> Vec3 {
    let azimuth_deg = (col as f64 + 0.5) / width as f64 * 360.0;
    let sin_alt = 1.0 - (2.0 * row as f64 + 1.0) / height as f64;
    let altitude_deg = sin_alt.clamp(-1.0, 1.0).asin().to_degrees();
    from_spherical(SphericalAngles {
        azimuth_deg,
        altitude_deg,
    })
}

/// Normalize a map into a probability distribution with a smoothing floor:
/// every cell becomes `(cell + eps) / sum(cell + eps)` where
/// `eps = NORMALIZE_EPSILON_RATIO * max_cell`. Errors if all cells are zero.
pub fn normalize_saliency(map: &SaliencyMap) -> Result<SaliencyMap> {
    let max = map.max();
    if max <= 0.0 {
        return Err(Error::DegenerateSaliency);
    }
    let eps = NORMALIZE_EPSILON_RATIO * max;
    let total: f64 = map.cells.iter().map(|c| c + eps).sum();
    let cells = map.cells.iter().map(|c| (c + eps) / total).collect();
    SaliencyMap::new(map.width, map.height, map.t_ms, cells)
}

/// The saliency-map sequence identifying one video.
///
/// Maps share dimensions and are spaced exactly `frame_interval_ms` apart,
/// starting at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFingerprint {
    video_id: String,
    frame_interval_ms: i64,
    maps: Vec<SaliencyMap>,
}

impl VideoFingerprint {
    pub fn new(
        video_id: impl Into<String>,
        frame_interval_ms: i64,
        maps: Vec<SaliencyMap>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if maps.is_empty() {
            return Err(Error::invalid("fingerprint must contain at least one map"));
        }
        if frame_interval_ms < 1 {
            return Err(Error::invalid(format!(
                "frame interval must be at least 1 ms, got {frame_interval_ms}"
            )));
        }
        let (w, h) = (maps[0].width, maps[0].height);
        for (k, m) in maps.iter().enumerate() {
            if (m.width, m.height) != (w, h) {
                return Err(Error::invalid(format!(
                    "map {k} is {}x{}, expected {w}x{h}",
                    m.width, m.height
                )));
            }
            let expected_t = k as i64 * frame_interval_ms;
            if m.t_ms != expected_t {
                return Err(Error::invalid(format!(
                    "map {k} has t={} ms, expected {expected_t} on a {frame_interval_ms} ms grid",
                    m.t_ms
                )));
            }
        }
        Ok(VideoFingerprint {
            video_id,
            frame_interval_ms,
            maps,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frame_interval_ms(&self) -> i64 {
        self.frame_interval_ms
    }

    pub fn maps(&self) -> &[SaliencyMap] {
        &self.maps
    }

    pub fn width(&self) -> usize {
        self.maps[0].width
    }

    pub fn height(&self) -> usize {
        self.maps[0].height
    }

    /// Timestamp of the last map, in milliseconds.
    pub fn duration_ms(&self) -> i64 {
        self.maps.last().expect("fingerprint is nonempty").t_ms
    }

    /// Index of the map with the nearest timestamp; exact midpoints resolve
    /// to the earlier map.
    pub fn nearest_map_index(&self, t_ms: i64) -> usize {
        if t_ms <= 0 {
            return 0;
        }
        let k = t_ms / self.frame_interval_ms;
        let k = k.min(self.maps.len() as i64 - 1) as usize;
        if k + 1 >= self.maps.len() {
            return k;
        }
        let d_before = t_ms - self.maps[k].t_ms;
        let d_after = self.maps[k + 1].t_ms - t_ms;
        if d_before <= d_after {
            k
        } else {
            k + 1
        }
    }
}

/// Parameters for synthetic fingerprint generation: `blob_count` Gaussian
/// blobs whose centers drift along seeded great circles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "default_synth_width")]
    pub width: usize,
    #[serde(default = "default_synth_height")]
    pub height: usize,
    pub blob_count: usize,
    pub blob_sigma_deg: f64,
    pub drift_speed_deg_s: f64,
    pub duration_s: f64,
    pub frame_interval_ms: i64,
    #[serde(default)]
    pub seed: u64,
}

fn default_synth_width() -> usize {
    64
}

fn default_synth_height() -> usize {
    32
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("synth grid must be at least 1x1"));
        }
        if self.blob_count < 1 {
            return Err(Error::invalid("blob count must be at least 1"));
        }
        if self.blob_sigma_deg <= 0.0 {
            return Err(Error::invalid("blob sigma must be positive"));
        }
        if self.drift_speed_deg_s < 0.0 {
            return Err(Error::invalid("drift speed must be nonnegative"));
        }
        if self.duration_s <= 0.0 {
            return Err(Error::invalid("duration must be positive"));
        }
        if self.frame_interval_ms < 1 {
            return Err(Error::invalid("frame interval must be at least 1 ms"));
        }
        Ok(())
    }
}

fn random_unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v.scaled(1.0 / n);
        }
    }
}

/// Generate a deterministic synthetic fingerprint: per frame, the map is a
/// mixture of `blob_count` Gaussian bumps in great-circle angular distance,
/// each center rotating about a seeded axis at `drift_speed_deg_s`.
pub fn synth_fingerprint(video_id: &str, spec: &SynthSpec) -> Result<VideoFingerprint> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut blobs = Vec::with_capacity(spec.blob_count);
    for _ in 0..spec.blob_count {
        let center = random_unit_vector(&mut rng);
        // Drift axis orthogonal to the center: the center then traces a
        // great circle at the configured angular speed.
        let mut axis = random_unit_vector(&mut rng);
        while axis.cross(center).norm() < 1e-6 {
            axis = random_unit_vector(&mut rng);
        }
        let axis = axis
            .cross(center)
            .normalized()
            .expect("cross of non-parallel units is nonzero");
        blobs.push((center, axis));
    }

    let frame_count = (spec.duration_s * 1000.0 / spec.frame_interval_ms as f64).floor() as usize;
    let frame_count = frame_count.max(1);
    let inv_two_sigma_sq = 1.0 / (2.0 * spec.blob_sigma_deg * spec.blob_sigma_deg);

    let mut directions = Vec::with_capacity(spec.width * spec.height);
    for row in 0..spec.height {
        for col in 0..spec.width {
            directions.push(cell_center_direction(spec.width, spec.height, col, row));
        }
    }

    let mut maps = Vec::with_capacity(frame_count);
    for k in 0..frame_count {
        let t_ms = k as i64 * spec.frame_interval_ms;
        let t_s = t_ms as f64 / 1000.0;
        let centers: Vec<Vec3> = blobs
            .iter()
            .map(|&(center, axis)| {
                make_quaternion(axis, spec.drift_speed_deg_s * t_s)
                    .expect("axis is unit")
                    .rotate(center)
            })
            .collect();
        let cells = directions
            .iter()
            .map(|&d| {
                centers
                    .iter()
                    .map(|&c| {
                        let ang = d.angle_to_deg(c);
                        (-ang * ang * inv_two_sigma_sq).exp()
                    })
                    .sum()
            })
            .collect();
        maps.push(SaliencyMap::new(spec.width, spec.height, t_ms, cells)?);
    }
    VideoFingerprint::new(video_id, spec.frame_interval_ms, maps)
}

/// A trace sample paired with its fingerprint map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedPair {
    pub t_ms: i64,
    pub v: Vec3,
    pub map_index: usize,
}

/// Result of [`align_pairs`]: the surviving pairs plus the number of
/// samples dropped for falling beyond the fingerprint duration.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPairs {
    pub pairs: Vec<AlignedPair>,
    pub dropped: usize,
}

/// Pair each sample with the fingerprint map of nearest timestamp (exact
/// midpoints resolve to the earlier map). Samples whose timestamp exceeds
/// the fingerprint duration are dropped and counted; zero survivors is an
/// error.
pub fn align_pairs(
    samples: &SampledTrace,
    fp: &VideoFingerprint,
    tau_s: f64,
) -> Result<AlignedPairs> {
    if tau_s <= 0.0 {
        return Err(Error::invalid(format!(
            "sampling interval must be positive, got {tau_s}"
        )));
    }
    let mut pairs = Vec::with_capacity(samples.samples.len());
    let mut dropped = 0usize;
    for &(t_ms, v) in &samples.samples {
        if t_ms > fp.duration_ms() {
            dropped += 1;
            continue;
        }
        pairs.push(AlignedPair {
            t_ms,
            v,
            map_index: fp.nearest_map_index(t_ms),
        });
    }
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(AlignedPairs { pairs, dropped })
}

/// A set of fingerprints with unique video ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FingerprintLibrary {
    entries: Vec<VideoFingerprint>,
}

impl FingerprintLibrary {
    pub fn new(entries: Vec<VideoFingerprint>) -> Result<Self> {
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                if a.video_id == b.video_id {
                    return Err(Error::invalid(format!(
                        "duplicate video id {:?}",
                        a.video_id
                    )));
                }
            }
        }
        Ok(FingerprintLibrary { entries })
    }

    pub fn entries(&self) -> &[VideoFingerprint] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoFingerprint> {
        self.entries.iter().find(|f| f.video_id == video_id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FingerprintManifest {
    video_id: String,
    width: usize,
    height: usize,
    frame_interval_ms: i64,
    frame_count: usize,
    /// Cell value corresponding to the PGM maxval 65535.
    scale_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LibraryIndex {
    fingerprints: Vec<String>,
}

fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

/// Write a fingerprint as `manifest.json` plus one 16-bit PGM per map.
/// Cells quantize as `round(65535 * cell / scale_max)` with `scale_max`
/// the largest cell across all maps (1.0 for an all-zero fingerprint).
pub fn save_fingerprint(fp: &VideoFingerprint, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scale_max = {
        let m = fp.maps.iter().map(|m| m.max()).fold(0.0, f64::max);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let manifest = FingerprintManifest {
        video_id: fp.video_id.clone(),
        width: fp.width(),
        height: fp.height(),
        frame_interval_ms: fp.frame_interval_ms,
        frame_count: fp.maps.len(),
        scale_max,
    };
    let manifest_path = dir.join("manifest.json");
    let json =
        serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail");
    std::fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;

    for (k, map) in fp.maps.iter().enumerate() {
        let data: Vec<u16> = map
            .cells
            .iter()
            .map(|&c| ((65_535.0 * c / scale_max).round()).clamp(0.0, 65_535.0) as u16)
            .collect();
        pgm::write_file(&dir.join(frame_file_name(k)), map.width, map.height, &data)?;
    }
    Ok(())
}

/// Load a fingerprint directory written by [`save_fingerprint`], rejecting
/// dimension or frame-count mismatches.
pub fn load_fingerprint(dir: &Path) -> Result<VideoFingerprint> {
    let manifest_path = dir.join("manifest.json");
    let text =
        std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: FingerprintManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(&manifest_path, format!("bad manifest: {e}")))?;
    if manifest.frame_count == 0 {
        return Err(Error::format(&manifest_path, "frame_count is zero"));
    }
    if manifest.scale_max <= 0.0 || !manifest.scale_max.is_finite() {
        return Err(Error::format(
            &manifest_path,
            format!("scale_max must be positive, got {}", manifest.scale_max),
        ));
    }
    let mut maps = Vec::with_capacity(manifest.frame_count);
    for k in 0..manifest.frame_count {
        let frame_path = dir.join(frame_file_name(k));
        let (w, h, data) = pgm::read_file(&frame_path)?;
        if (w, h) != (manifest.width, manifest.height) {
            return Err(Error::format(
                &frame_path,
                format!(
                    "frame is {w}x{h}, manifest says {}x{}",
                    manifest.width, manifest.height
                ),
            ));
        }
        let cells = data
            .iter()
            .map(|&q| q as f64 / 65_535.0 * manifest.scale_max)
            .collect();
        maps.push(SaliencyMap::new(
            w,
            h,
            k as i64 * manifest.frame_interval_ms,
            cells,
        )?);
    }
    VideoFingerprint::new(manifest.video_id, manifest.frame_interval_ms, maps)
}

/// Write a library as one fingerprint directory per video (named by video
/// id) plus a `library.json` index.
pub fn save_library(library: &FingerprintLibrary, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(library.len());
    for fp in library.entries() {
        let sub = fp.video_id().to_string();
        save_fingerprint(fp, &dir.join(&sub))?;
        names.push(sub);
    }
    let index = LibraryIndex {
        fingerprints: names,
    };
    let path = dir.join("library.json");
    let json = serde_json::to_string_pretty(&index).expect("index serialization cannot fail");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// Load a library directory written by [`save_library`].
pub fn load_library(dir: &Path) -> Result<FingerprintLibrary> {
    let path = dir.join("library.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: LibraryIndex =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, format!("bad index: {e}")))?;
    let entries: Result<Vec<VideoFingerprint>> = index
        .fingerprints
        .iter()
        .map(|name| load_fingerprint(&dir.join(name)))
        .collect();
    FingerprintLibrary::new(entries?)
}

/// Paths of all files belonging to a saved fingerprint, in a fixed order.
/// Useful for byte-level comparisons of two saved copies.
pub fn fingerprint_file_names(fp: &VideoFingerprint) -> Vec<PathBuf> {
    let mut names = vec![PathBuf::from("manifest.json")];
    for k in 0..fp.maps().len() {
        names.push(PathBuf::from(frame_file_name(k)));
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::to_spherical;

    fn uniform_map(w: usize, h: usize, value: f64) -> SaliencyMap {
        SaliencyMap::new(w, h, 0, vec![value; w * h]).unwrap()
    }

    fn test_spec(seed: u64) -> SynthSpec {
        SynthSpec {
            width: 64,
            height: 32,
            blob_count: 2,
            blob_sigma_deg: 10.0,
            drift_speed_deg_s: 3.0,
            duration_s: 10.0,
            frame_interval_ms: 200,
            seed,
        }
    }

    #[test]
    fn normalize_uniform_map() {
        let n = normalize_saliency(&uniform_map(4, 2, 1.0)).unwrap();
        for &c in n.cells() {
            assert!((c - 1.0 / 8.0).abs() < 1e-15);
        }
        assert!((n.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_one_hot_keeps_floor() {
        let mut cells = vec![0.0; 8];
        cells[3] = 2.0;
        let map = SaliencyMap::new(4, 2, 0, cells).unwrap();
        let n = normalize_saliency(&map).unwrap();
        let floor = n.cells()[0];
        assert!(floor > 0.0, "floor must be strictly positive");
        assert!(n.cells()[3] > 0.99);
        assert!((n.sum() - 1.0).abs() < 1e-12);
        // Floor = eps / total with eps = 1e-6 * max.
        let eps = NORMALIZE_EPSILON_RATIO * 2.0;
        assert!((floor - eps / (2.0 + 8.0 * eps)).abs() < 1e-18);
    }

    #[test]
    fn normalize_rejects_all_zero() {
        let map = SaliencyMap::new(4, 2, 0, vec![0.0; 8]).unwrap();
        assert!(matches!(
            normalize_saliency(&map),
            Err(Error::DegenerateSaliency)
        ));
    }

    #[test]
    fn normalize_is_idempotent() {
        // Re-normalizing shifts each cell by at most eps * |1 - c*N| with
        // eps = 1e-6 * max of the already-normalized map, so the fixed
        // point is approximate, not exact.
        let mut cells = vec![0.1; 12];
        cells[5] = 3.0;
        cells[7] = 1.5;
        let map = SaliencyMap::new(4, 3, 0, cells).unwrap();
        let once = normalize_saliency(&map).unwrap();
        let twice = normalize_saliency(&once).unwrap();
        let bound = NORMALIZE_EPSILON_RATIO * once.max() * 12.0;
        for (a, b) in once.cells().iter().zip(twice.cells()) {
            assert!((a - b).abs() <= bound, "{a} vs {b} beyond {bound}");
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = test_spec(99);
        let a = synth_fingerprint("v", &spec).unwrap();
        let b = synth_fingerprint("v", &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synth_static_fingerprint_has_identical_frames() {
        let spec = SynthSpec {
            blob_count: 1,
            drift_speed_deg_s: 0.0,
            ..test_spec(7)
        };
        let fp = synth_fingerprint("v", &spec).unwrap();
        let first = fp.maps()[0].cells().to_vec();
        for m in fp.maps() {
            assert_eq!(m.cells(), first.as_slice());
        }
    }

    #[test]
    fn synth_blob_mass_concentrates_within_three_sigma() {
        // Oracle: a 2-D Gaussian holds 1 - exp(-9/2) = 98.9% of its mass
        // within 3 sigma, so the discrete grid must hold at least 95%.
        let spec = SynthSpec {
            blob_count: 1,
            blob_sigma_deg: 10.0,
            ..test_spec(3)
        };
        let fp = synth_fingerprint("v", &spec).unwrap();
        let frame0 = &fp.maps()[0];
        let (bc, br) = frame0.argmax();
        let center = frame0.cell_direction(bc, br);
        let mut inside = 0.0;
        let mut total = 0.0;
        for row in 0..frame0.height() {
            for col in 0..frame0.width() {
                let c = frame0.cell(col, row);
                total += c;
                if frame0.cell_direction(col, row).angle_to_deg(center)
                    <= 3.0 * spec.blob_sigma_deg
                {
                    inside += c;
                }
            }
        }
        assert!(
            inside / total >= 0.95,
            "only {:.3} of mass within 3 sigma",
            inside / total
        );
    }

    #[test]
    fn synth_seeds_rarely_collide() {
        let mut collisions = 0;
        for pair in 0..100u64 {
            let a = synth_fingerprint("a", &test_spec(2 * pair)).unwrap();
            let b = synth_fingerprint("b", &test_spec(2 * pair + 1)).unwrap();
            if a.maps()[0].argmax() == b.maps()[0].argmax() {
                collisions += 1;
            }
        }
        assert!(collisions <= 1, "{collisions} argmax collisions in 100 pairs");
    }

    #[test]
    fn fingerprint_requires_constant_spacing() {
        let maps = vec![
            uniform_map(4, 2, 1.0),
            SaliencyMap::new(4, 2, 150, vec![1.0; 8]).unwrap(),
        ];
        assert!(VideoFingerprint::new("v", 100, maps).is_err());
    }

    #[test]
    fn align_pairs_basic() {
        let fp = synth_fingerprint("v", &test_spec(5)).unwrap();
        let dir = Vec3::new(1.0, 0.0, 0.0);
        let sampled = SampledTrace {
            frame: crate::geometry::Frame::Vr,
            samples: vec![(0, dir), (800, dir), (1600, dir)],
        };
        let aligned = align_pairs(&sampled, &fp, 0.8).unwrap();
        assert_eq!(aligned.dropped, 0);
        assert_eq!(aligned.pairs[0].map_index, 0);
        assert_eq!(aligned.pairs[1].map_index, 4);
        assert_eq!(aligned.pairs[2].map_index, 8);
    }

    #[test]
    fn align_pairs_drops_beyond_duration() {
        // 10 s fingerprint vs 20 s of samples at 0.8 s spacing: samples
        // after t = 9800 (the last map) drop.
        let fp = synth_fingerprint("v", &test_spec(6)).unwrap();
        let dir = Vec3::new(0.0, 1.0, 0.0);
        let samples: Vec<(i64, Vec3)> = (0..25).map(|k| (k * 800, dir)).collect();
        let sampled = SampledTrace {
            frame: crate::geometry::Frame::Vr,
            samples,
        };
        let aligned = align_pairs(&sampled, &fp, 0.8).unwrap();
        let expected_kept = (0..25).filter(|k| k * 800 <= fp.duration_ms()).count();
        assert_eq!(aligned.pairs.len(), expected_kept);
        assert_eq!(aligned.dropped, 25 - expected_kept);
        // Order preserved, no duplicates.
        for w in aligned.pairs.windows(2) {
            assert!(w[0].t_ms < w[1].t_ms);
        }
    }

    #[test]
    fn align_pairs_matched_rates_pair_every_map() {
        // Sampling at the frame interval over the same duration pairs each
        // map exactly once.
        let fp = synth_fingerprint("v", &test_spec(8)).unwrap();
        let dir = Vec3::new(1.0, 0.0, 0.0);
        let samples: Vec<(i64, Vec3)> = fp.maps().iter().map(|m| (m.t_ms(), dir)).collect();
        let sampled = SampledTrace {
            frame: crate::geometry::Frame::Vr,
            samples,
        };
        let aligned = align_pairs(&sampled, &fp, fp.frame_interval_ms() as f64 / 1000.0).unwrap();
        assert_eq!(aligned.pairs.len(), fp.maps().len());
        assert_eq!(aligned.dropped, 0);
        for (k, p) in aligned.pairs.iter().enumerate() {
            assert_eq!(p.map_index, k);
        }
    }

    #[test]
    fn align_pairs_no_overlap_errors() {
        let fp = synth_fingerprint("v", &test_spec(6)).unwrap();
        let sampled = SampledTrace {
            frame: crate::geometry::Frame::Vr,
            samples: vec![(50_000, Vec3::new(1.0, 0.0, 0.0))],
        };
        assert!(matches!(
            align_pairs(&sampled, &fp, 0.8),
            Err(Error::NoOverlap)
        ));
    }

    #[test]
    fn cell_direction_round_trips_through_projection() {
        let (w, h) = (64, 32);
        for (col, row) in [(0, 0), (31, 15), (63, 31), (10, 5)] {
            let dir = cell_center_direction(w, h, col, row);
            let p = crate::geometry::equirect_project(to_spherical(dir), w, h).unwrap();
            assert!((p.w - (col as f64 + 0.5)).abs() < 1e-9);
            assert!((p.h - (row as f64 + 0.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn library_requires_unique_ids() {
        let fp1 = synth_fingerprint("same", &test_spec(1)).unwrap();
        let fp2 = synth_fingerprint("same", &test_spec(2)).unwrap();
        assert!(FingerprintLibrary::new(vec![fp1, fp2]).is_err());
    }

    #[test]
    fn fingerprint_disk_round_trip_is_byte_identical() {
        let dir = std::env::temp_dir().join(format!("fp_roundtrip_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        for seed in 0..5 {
            let fp = synth_fingerprint(&format!("video_{seed}"), &test_spec(seed)).unwrap();
            let first = dir.join(format!("first_{seed}"));
            let second = dir.join(format!("second_{seed}"));
            save_fingerprint(&fp, &first).unwrap();
            let loaded = load_fingerprint(&first).unwrap();
            save_fingerprint(&loaded, &second).unwrap();
            for name in fingerprint_file_names(&fp) {
                let a = std::fs::read(first.join(&name)).unwrap();
                let b = std::fs::read(second.join(&name)).unwrap();
                assert_eq!(a, b, "file {name:?} differs after round trip");
            }
        }
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn library_disk_round_trip() {
        let dir = std::env::temp_dir().join(format!("lib_roundtrip_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let lib = FingerprintLibrary::new(vec![
            synth_fingerprint("video_000", &test_spec(10)).unwrap(),
            synth_fingerprint("video_001", &test_spec(11)).unwrap(),
        ])
        .unwrap();
        save_library(&lib, &dir).unwrap();
        let loaded = load_library(&dir).unwrap();
        assert_eq!(loaded.len(), 2);
        assert!(loaded.get("video_001").is_some());
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn load_rejects_mismatched_dimensions() {
        let dir = std::env::temp_dir().join(format!("fp_badload_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let fp = synth_fingerprint("v", &test_spec(42)).unwrap();
        save_fingerprint(&fp, &dir).unwrap();
        // Overwrite frame 1 with the wrong dimensions.
        crate::pgm::write_file(&dir.join(frame_file_name(1)), 2, 2, &[0, 1, 2, 3]).unwrap();
        assert!(matches!(
            load_fingerprint(&dir),
            Err(Error::Format { .. })
        ));
        let _ = std::fs::remove_dir_all(&dir);
    }
}
