//! Synthetic scene oracle, manifests, annotation ingestion and scene
//! rebalancing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::read_annotations;
use crate::catalog::{Annotation, ClassCatalog};
use crate::conditioning::{build_confmap, GacConfig};
use crate::error::{Error, Result};
use crate::geometry::RadarGeometry;
use crate::grid::Grid;
use crate::maps::RAMap;
use crate::rng::SeededRng;

/// Objects are placed within this fraction of the azimuth field of view.
const AZIMUTH_SPAN: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub name: String,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Class mix in catalog order.
    pub class_probs: Vec<f64>,
    /// Multiplicative speckle level ν.
    #[serde(default = "default_speckle")]
    pub speckle: f64,
    #[serde(default)]
    pub clutter_blobs: usize,
    #[serde(default = "default_clutter_amplitude")]
    pub clutter_amplitude: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub seed: u64,
}

fn default_speckle() -> f64 {
    0.1
}

fn default_clutter_amplitude() -> f64 {
    0.15
}

impl SceneConfig {
    pub fn validate(&self, geometry: &RadarGeometry, catalog: &ClassCatalog) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scene {:?}: {m}", self.name)));
        if self.name.is_empty() || self.name.contains([',', '/', '\\']) {
            return bad("name must be non-empty without ',' or path separators".into());
        }
        if self.min_objects > self.max_objects {
            return bad(format!("min_objects {} > max_objects {}", self.min_objects, self.max_objects));
        }
        if self.class_probs.len() != catalog.len() {
            return bad(format!(
                "{} class probabilities for {} classes",
                self.class_probs.len(),
                catalog.len()
            ));
        }
        if self.class_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("class probabilities must be finite and >= 0".into());
        }
        let total: f64 = self.class_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("class probabilities sum to {total}, expected 1"));
        }
        if !(self.speckle.is_finite() && self.speckle >= 0.0) {
            return bad(format!("speckle {} must be >= 0", self.speckle));
        }
        if !(self.clutter_amplitude.is_finite() && self.clutter_amplitude >= 0.0) {
            return bad(format!("clutter_amplitude {} must be >= 0", self.clutter_amplitude));
        }
        if !(self.min_range > 0.0 && self.min_range <= self.max_range && self.max_range <= geometry.r_max) {
            return bad(format!(
                "range limits [{}, {}] must satisfy 0 < min <= max <= {}",
                self.min_range, self.max_range, geometry.r_max
            ));
        }
        Ok(())
    }

    /// The four default scene types with their characteristic class mixes.
    pub fn defaults(geometry: &RadarGeometry) -> Vec<SceneConfig> {
        let far = geometry.r_max * 0.9;
        let scene = |name: &str, n: (usize, usize), probs: [f64; 3], range: (f64, f64), seed| SceneConfig {
            name: name.into(),
            min_objects: n.0,
            max_objects: n.1,
            class_probs: probs.to_vec(),
            speckle: default_speckle(),
            clutter_blobs: 1,
            clutter_amplitude: default_clutter_amplitude(),
            min_range: range.0,
            max_range: range.1,
            seed,
        };
        vec![
            scene("parking_lot", (1, 4), [0.4, 0.2, 0.4], (2.0, far * 0.5), 1),
            scene("campus_road", (1, 4), [0.5, 0.3, 0.2], (2.0, far * 0.7), 2),
            scene("city_street", (2, 5), [0.3, 0.3, 0.4], (3.0, far), 3),
            scene("highway", (1, 3), [0.0, 0.0, 1.0], (5.0, far), 4),
        ]
    }
}

fn sample_class(probs: &[f64], rng: &mut SeededRng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Draws an object list from the scene distribution.
pub fn sample_annotations(scene: &SceneConfig, geometry: &RadarGeometry, rng: &mut SeededRng) -> Vec<Annotation> {
    let n = scene.min_objects + rng.below(scene.max_objects - scene.min_objects + 1);
    let span = geometry.theta_max * AZIMUTH_SPAN;
    (0..n)
        .map(|_| {
            let class_id = sample_class(&scene.class_probs, rng);
            let range = rng.uniform_in(scene.min_range, scene.max_range);
            let azimuth = rng.uniform_in(-span, span);
            Annotation::new(range, azimuth, class_id)
        })
        .collect()
}

/// Noise-free amplitude: the GAC-corrected ConfMap summed over classes.
pub fn noiseless_ramap(
    annotations: &[Annotation],
    geometry: &RadarGeometry,
    catalog: &ClassCatalog,
    gac: &GacConfig,
) -> Result<RAMap> {
    let grid = build_confmap(annotations, geometry, catalog, Some(gac))?.collapse();
    RAMap::new(*geometry, grid, 1.0)
}

/// Renders a fixed object list with speckle and clutter.
pub fn render_frame(
    annotations: &[Annotation],
    scene: &SceneConfig,
    geometry: &RadarGeometry,
    catalog: &ClassCatalog,
    gac: &GacConfig,
    rng: &mut SeededRng,
) -> Result<RAMap> {
    let clean = noiseless_ramap(annotations, geometry, catalog, gac)?.into_grid();
    let (rows, cols) = clean.shape();
    let mut grid = if scene.speckle > 0.0 {
        let z = rng.normal_grid(rows, cols);
        clean.zip_map(&z, |a, z| a * (1.0 + scene.speckle * z).max(0.0))?
    } else {
        clean
    };
    for _ in 0..scene.clutter_blobs {
        let ci = rng.uniform_in(0.0, rows as f64);
        let cj = rng.uniform_in(0.0, cols as f64);
        let sigma = rng.uniform_in(1.0, 3.0);
        let amp = scene.clutter_amplitude * rng.uniform_in(0.5, 1.0);
        add_blob(&mut grid, ci, cj, sigma, amp);
    }
    RAMap::new(*geometry, grid.clamp(0.0, 1.0), 1.0)
}

fn add_blob(grid: &mut Grid, ci: f64, cj: f64, sigma: f64, amp: f64) {
    let reach = (3.0 * sigma).ceil() as isize;
    let (rows, cols) = (grid.rows() as isize, grid.cols() as isize);
    let (i0, j0) = (ci.floor() as isize, cj.floor() as isize);
    for i in (i0 - reach).max(0)..=(i0 + reach).min(rows - 1) {
        for j in (j0 - reach).max(0)..=(j0 + reach).min(cols - 1) {
            let di = i as f64 + 0.5 - ci;
            let dj = j as f64 + 0.5 - cj;
            let v = amp * (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            grid.add_at(i as usize, j as usize, v);
        }
    }
}

/// One synthetic frame: sampled objects and the observed RAMap.
pub fn simulate_frame(
    scene: &SceneConfig,
    geometry: &RadarGeometry,
    catalog: &ClassCatalog,
    gac: &GacConfig,
    rng: &mut SeededRng,
) -> Result<(Vec<Annotation>, RAMap)> {
    let annotations = sample_annotations(scene, geometry, rng);
    let map = render_frame(&annotations, scene, geometry, catalog, gac, rng)?;
    Ok((annotations, map))
}

#[derive(Debug, Clone)]
pub struct SimulatedFrame {
    pub frame_id: String,
    pub scene: String,
    pub annotations: Vec<Annotation>,
    pub ramap: RAMap,
}

/// `n` frames cycling through `scenes`; frame `k` of a scene draws from its
/// own stream keyed by `(seed, scene.seed, k)`.
pub fn simulate_frames(
    scenes: &[SceneConfig],
    n: usize,
    geometry: &RadarGeometry,
    catalog: &ClassCatalog,
    gac: &GacConfig,
    seed: u64,
) -> Result<Vec<SimulatedFrame>> {
    if n > 0 && scenes.is_empty() {
        return Err(Error::Config("no scenes configured".into()));
    }
    for s in scenes {
        s.validate(geometry, catalog)?;
    }
    (0..n)
        .into_par_iter()
        .map(|k| {
            let scene = &scenes[k % scenes.len()];
            let idx = k / scenes.len();
            let mut rng = SeededRng::derive(seed, &[scene.seed, idx as u64]);
            let (annotations, ramap) = simulate_frame(scene, geometry, catalog, gac, &mut rng)?;
            Ok(SimulatedFrame {
                frame_id: format!("{}_{idx:05}", scene.name),
                scene: scene.name.clone(),
                annotations,
                ramap,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame_id: String,
    pub scene: String,
    pub split: Split,
    pub annotation_path: PathBuf,
    pub ramap_path: PathBuf,
    pub confmap_path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Frame counts per scene within one split.
    pub fn scene_counts(&self, split: Split) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for e in self.split(split) {
            *counts.entry(e.scene.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e).map_err(|e| Error::Data(format!("manifest: {e}")))?;
        }
        if self.entries.is_empty() {
            w.write_record(["frame_id", "scene", "split", "annotation_path", "ramap_path", "confmap_path"])
                .map_err(|e| Error::Data(format!("manifest: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("manifest: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(format!("manifest: {e}")))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let entries = r
            .deserialize()
            .map(|row| {
                row.map_err(|e| {
                    let line = e.position().map(|p| p.line()).unwrap_or(0);
                    Error::Data(format!("manifest line {line}: {e}"))
                })
            })
            .collect::<Result<Vec<ManifestEntry>>>()?;
        Ok(DatasetManifest { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    /// Loads a manifest and resolves its relative paths against the
    /// manifest's directory. Every referenced file must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            for p in [&mut e.annotation_path, &mut e.ramap_path, &mut e.confmap_path] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.exists() {
                    return Err(Error::Data(format!(
                        "manifest {}: frame {} references missing file {}",
                        path.display(),
                        e.frame_id,
                        p.display()
                    )));
                }
            }
        }
        Ok(m)
    }
}

/// Deterministic shuffled split. `round(f·n)` frames go to train; before the
/// rest of the test slots are filled, every scene with at least two frames
/// contributes one test frame.
pub fn build_manifest(
    frames: Vec<ManifestEntry>,
    split_fraction: f64,
    rng: &mut SeededRng,
) -> Result<DatasetManifest> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::domain("split_fraction", split_fraction, "(0, 1)"));
    }
    if frames.is_empty() {
        return Err(Error::Data("cannot split an empty frame set".into()));
    }
    let n = frames.len();
    let n_train = (split_fraction * n as f64).round() as usize;
    let n_test = n - n_train;
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);

    let mut by_scene: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &k in &order {
        by_scene.entry(frames[k].scene.as_str()).or_default().push(k);
    }
    let mut is_test = vec![false; n];
    let mut taken = 0;
    for ids in by_scene.values() {
        if taken < n_test && ids.len() >= 2 {
            is_test[ids[0]] = true;
            taken += 1;
        }
    }
    for &k in &order {
        if taken == n_test {
            break;
        }
        if !is_test[k] {
            is_test[k] = true;
            taken += 1;
        }
    }
    let entries = frames
        .into_iter()
        .enumerate()
        .map(|(k, mut e)| {
            e.split = if is_test[k] { Split::Test } else { Split::Train };
            e
        })
        .collect();
    Ok(DatasetManifest { entries })
}

/// Moves training scene counts to `targets`.
///
/// Scenes below target are topped up from `synthetic` (entries of the same
/// scene, used in order); scenes above target are trimmed from the end.
/// Any net growth is removed from the scenes without a target, in
/// proportion to their size, so the training total stays constant. Test
/// entries are untouched.
pub fn rebalance(
    manifest: &DatasetManifest,
    targets: &BTreeMap<String, usize>,
    synthetic: &[ManifestEntry],
) -> Result<DatasetManifest> {
    let mut train: BTreeMap<String, Vec<ManifestEntry>> = BTreeMap::new();
    for e in manifest.split(Split::Train) {
        train.entry(e.scene.clone()).or_default().push(e.clone());
    }
    let mut deficits = Vec::new();
    let mut growth: isize = 0;
    for (scene, &target) in targets {
        let current = train.get(scene).map_or(0, Vec::len);
        growth += target as isize - current as isize;
        if target > current {
            let pool: Vec<&ManifestEntry> = synthetic.iter().filter(|e| &e.scene == scene).collect();
            let need = target - current;
            if pool.len() < need {
                deficits.push(format!("{scene}: need {need} synthetic frames, have {}", pool.len()));
                continue;
            }
            let list = train.entry(scene.clone()).or_default();
            list.extend(pool[..need].iter().map(|e| ManifestEntry {
                split: Split::Train,
                ..(*e).clone()
            }));
        } else if let Some(list) = train.get_mut(scene) {
            list.truncate(target);
        }
    }

    if growth > 0 {
        let donors: Vec<(String, usize)> = train
            .iter()
            .filter(|(s, _)| !targets.contains_key(*s))
            .map(|(s, l)| (s.clone(), l.len()))
            .collect();
        let available: usize = donors.iter().map(|d| d.1).sum();
        let growth = growth as usize;
        if available < growth {
            deficits.push(format!(
                "untargeted scenes hold {available} frames, cannot offset {growth} added"
            ));
        } else if growth > 0 {
            for (scene, cut) in proportional_cuts(&donors, growth) {
                let list = train.get_mut(&scene).expect("donor scene present");
                list.truncate(list.len() - cut);
            }
        }
    }
    if !deficits.is_empty() {
        return Err(Error::Data(format!("unreachable rebalance targets: {}", deficits.join("; "))));
    }

    let mut entries: Vec<ManifestEntry> = train.into_values().flatten().collect();
    entries.extend(manifest.split(Split::Test).cloned());
    Ok(DatasetManifest { entries })
}

/// Splits `total` across donors by size using largest remainders; ties go
/// to the earlier donor.
fn proportional_cuts(donors: &[(String, usize)], total: usize) -> Vec<(String, usize)> {
    let size: usize = donors.iter().map(|d| d.1).sum();
    let mut cuts: Vec<(usize, f64)> = donors
        .iter()
        .map(|d| {
            let exact = total as f64 * d.1 as f64 / size as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = cuts.iter().map(|c| c.0).sum();
    let mut order: Vec<usize> = (0..donors.len()).collect();
    order.sort_by(|&a, &b| cuts[b].1.total_cmp(&cuts[a].1));
    for &k in order.iter().take(total - assigned) {
        cuts[k].0 += 1;
    }
    donors.iter().zip(cuts).map(|(d, c)| (d.0.clone(), c.0)).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestedAnnotations {
    pub frames: BTreeMap<String, Vec<Annotation>>,
    /// Records outside the radar field of view.
    pub dropped: usize,
}

/// Reads an annotation CSV, drops out-of-view records and groups the rest
/// by frame id.
pub fn ingest_annotations(
    path: impl AsRef<Path>,
    geometry: &RadarGeometry,
    catalog: &ClassCatalog,
) -> Result<IngestedAnnotations> {
    let mut out = IngestedAnnotations::default();
    for rec in read_annotations(path, catalog)? {
        let entry = out.frames.entry(rec.frame_id).or_default();
        if rec.annotation.validate(geometry, catalog).is_ok() {
            entry.push(rec.annotation);
        } else {
            out.dropped += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> RadarGeometry {
        RadarGeometry::new(64, 64, 50.0, 60f64.to_radians()).unwrap()
    }

    fn quiet(scene: &SceneConfig) -> SceneConfig {
        SceneConfig {
            speckle: 0.0,
            clutter_blobs: 0,
            ..scene.clone()
        }
    }

    fn entry(id: &str, scene: &str) -> ManifestEntry {
        ManifestEntry {
            frame_id: id.into(),
            scene: scene.into(),
            split: Split::Train,
            annotation_path: format!("annotations/{id}.csv").into(),
            ramap_path: format!("ramap/{id}.ramap").into(),
            confmap_path: format!("confmap/{id}.cnfm").into(),
        }
    }

    #[test]
    fn default_scenes_validate() {
        let g = geom();
        for s in SceneConfig::defaults(&g) {
            s.validate(&g, &ClassCatalog::default()).unwrap();
        }
    }

    #[test]
    fn bad_probabilities_rejected() {
        let g = geom();
        let mut s = SceneConfig::defaults(&g)[0].clone();
        s.class_probs = vec![0.5, 0.5, 0.5];
        assert!(matches!(s.validate(&g, &ClassCatalog::default()), Err(Error::Config(_))));
    }

    #[test]
    fn noise_off_matches_collapsed_confmap() {
        let (g, cat, gac) = (geom(), ClassCatalog::default(), GacConfig::default());
        let scene = quiet(&SceneConfig::defaults(&g)[2]);
        let mut rng = SeededRng::new(5);
        let (anns, map) = simulate_frame(&scene, &g, &cat, &gac, &mut rng).unwrap();
        let conf = build_confmap(&anns, &g, &cat, Some(&gac)).unwrap().collapse();
        assert!(map.grid().max_abs_diff(&conf).unwrap() <= 1e-6);
        assert_eq!(map.grid(), &conf);
    }

    #[test]
    fn fixed_seed_same_frame() {
        let (g, cat, gac) = (geom(), ClassCatalog::default(), GacConfig::default());
        let scene = &SceneConfig::defaults(&g)[0];
        let a = simulate_frame(scene, &g, &cat, &gac, &mut SeededRng::new(9)).unwrap();
        let b = simulate_frame(scene, &g, &cat, &gac, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn speckle_is_unbiased_on_target() {
        let (g, cat) = (geom(), ClassCatalog::default());
        // (r_ref / r)² = 0.5 puts the target peak at half scale
        let gac = GacConfig {
            r_ref: 20.0 * 0.5f64.sqrt(),
            ..GacConfig::default()
        };
        let ann = [Annotation::new(20.0, 0.0, 2)];
        let clean = noiseless_ramap(&ann, &g, &cat, &gac).unwrap();
        let (i, j) = g.bin_of(20.0, 0.0).unwrap();
        let target = clean.grid().get(i, j);
        assert!((target - 0.5).abs() < 0.05, "target amplitude {target}");
        let scene = SceneConfig {
            clutter_blobs: 0,
            speckle: 0.1,
            ..SceneConfig::defaults(&g)[0].clone()
        };
        let mut rng = SeededRng::new(123);
        let frames = 1000;
        let mut sum = 0.0;
        for _ in 0..frames {
            sum += render_frame(&ann, &scene, &g, &cat, &gac, &mut rng).unwrap().grid().get(i, j);
        }
        let mean = sum / frames as f64;
        assert!((mean - target).abs() / target < 0.02, "{mean} vs {target}");
    }

    #[test]
    fn frames_cycle_scenes_and_are_reproducible() {
        let (g, cat, gac) = (geom(), ClassCatalog::default(), GacConfig::default());
        let scenes = SceneConfig::defaults(&g);
        let a = simulate_frames(&scenes, 6, &g, &cat, &gac, 3).unwrap();
        let b = simulate_frames(&scenes, 6, &g, &cat, &gac, 3).unwrap();
        let ids: Vec<&str> = a.iter().map(|f| f.frame_id.as_str()).collect();
        assert_eq!(
            ids,
            ["parking_lot_00000", "campus_road_00000", "city_street_00000", "highway_00000", "parking_lot_00001", "campus_road_00001"]
        );
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.annotations, y.annotations);
            assert_eq!(x.ramap, y.ramap);
        }
        assert!(simulate_frames(&scenes, 0, &g, &cat, &gac, 3).unwrap().is_empty());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let frames: Vec<_> = (0..10).map(|k| entry(&format!("f{k}"), "a")).collect();
        let m = build_manifest(frames.clone(), 0.8, &mut SeededRng::new(1)).unwrap();
        assert_eq!(m.split(Split::Train).count(), 8);
        assert_eq!(m.split(Split::Test).count(), 2);
        let again = build_manifest(frames.clone(), 0.8, &mut SeededRng::new(1)).unwrap();
        assert_eq!(m, again);
        assert!(build_manifest(vec![], 0.8, &mut SeededRng::new(1)).is_err());
        assert!(build_manifest(frames.clone(), 1.0, &mut SeededRng::new(1)).is_err());
        assert!(build_manifest(frames, 0.0, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn every_scene_with_two_frames_reaches_test() {
        // exhaustive over scene sizes 1..=4 for four scenes and many seeds
        for sizes in [[2, 2, 2, 2], [1, 2, 3, 4], [4, 3, 2, 1], [2, 9, 2, 2], [1, 1, 2, 8]] {
            let mut frames = Vec::new();
            for (s, &n) in sizes.iter().enumerate() {
                for k in 0..n {
                    frames.push(entry(&format!("s{s}_{k}"), &format!("scene{s}")));
                }
            }
            for seed in 0..50 {
                let m = build_manifest(frames.clone(), 0.8, &mut SeededRng::new(seed)).unwrap();
                let test = m.scene_counts(Split::Test);
                let n_test = frames.len() - (0.8 * frames.len() as f64).round() as usize;
                let eligible = sizes.iter().filter(|&&n| n >= 2).count();
                for (s, &n) in sizes.iter().enumerate() {
                    if n >= 2 && eligible <= n_test {
                        assert!(test.contains_key(&format!("scene{s}")), "{sizes:?} seed {seed}");
                    }
                }
                assert_eq!(m.len(), frames.len());
                assert_eq!(test.values().sum::<usize>(), n_test);
            }
        }
    }

    fn table_fixture() -> (DatasetManifest, Vec<ManifestEntry>) {
        let mut entries = Vec::new();
        for (scene, n) in [("parking_lot", 198), ("campus_road", 103), ("city_street", 29), ("highway", 51)] {
            for k in 0..n {
                entries.push(entry(&format!("{scene}_{k:05}"), scene));
            }
        }
        let mut synthetic = Vec::new();
        for scene in ["city_street", "highway"] {
            for k in 0..40 {
                synthetic.push(entry(&format!("{scene}_syn{k:05}"), scene));
            }
        }
        (DatasetManifest { entries }, synthetic)
    }

    #[test]
    fn identity_targets() {
        let (m, syn) = table_fixture();
        let targets = m.scene_counts(Split::Train);
        let out = rebalance(&m, &targets, &syn).unwrap();
        assert_eq!(out.scene_counts(Split::Train), targets);
        assert_eq!(out.len(), m.len());
    }

    #[test]
    fn table_row_shape_at_one_percent() {
        let (m, syn) = table_fixture();
        let targets = BTreeMap::from([("city_street".to_string(), 53), ("highway".to_string(), 75)]);
        let out = rebalance(&m, &targets, &syn).unwrap();
        let c = out.scene_counts(Split::Train);
        assert_eq!(c["city_street"], 53);
        assert_eq!(c["highway"], 75);
        // 48 added; cut 48·198/301 = 31.57 and 48·103/301 = 16.43
        assert_eq!(c["parking_lot"], 198 - 32);
        assert_eq!(c["campus_road"], 103 - 16);
        assert_eq!(out.len(), 381);
    }

    #[test]
    fn unreachable_target_lists_deficit() {
        let (m, syn) = table_fixture();
        let targets = BTreeMap::from([("city_street".to_string(), 100)]);
        let err = rebalance(&m, &targets, &syn).unwrap_err().to_string();
        assert!(err.contains("city_street") && err.contains("need 71"), "{err}");
    }

    #[test]
    fn manifest_csv_round_trip() {
        let m = build_manifest(
            (0..5).map(|k| entry(&format!("f{k}"), "a")).collect(),
            0.8,
            &mut SeededRng::new(0),
        )
        .unwrap();
        let text = m.to_csv().unwrap();
        assert!(text.starts_with("frame_id,scene,split,annotation_path,ramap_path,confmap_path\n"));
        assert_eq!(DatasetManifest::parse(&text).unwrap(), m);
        let empty = DatasetManifest::default().to_csv().unwrap();
        assert!(DatasetManifest::parse(&empty).unwrap().is_empty());
    }

    #[test]
    fn ingest_converts_and_drops() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        fs::write(&path, "frame_id,x_m,y_m,class_name\na,0,10,car\na,10,10,pedestrian\nb,40,1,car\n").unwrap();
        let g = RadarGeometry::new(64, 64, 50.0, 60f64.to_radians()).unwrap();
        let got = ingest_annotations(&path, &g, &ClassCatalog::default()).unwrap();
        assert_eq!(got.dropped, 1);
        let a = &got.frames["a"];
        assert!((a[0].range - 10.0).abs() < 1e-12 && a[0].azimuth == 0.0);
        assert!((a[1].range - 14.142).abs() < 1e-3);
        assert!((a[1].azimuth.to_degrees() - 45.0).abs() < 1e-9);
        assert!(got.frames["b"].is_empty());

        fs::write(&path, "frame_id,x_m,y_m,class_name\na,0,10,car\na,zz,10,car\n").unwrap();
        let err = ingest_annotations(&path, &g, &ClassCatalog::default()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
