//! Synthetic paired-view dataset: generation, filtering, scene-level split
//! and JSON-lines storage.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dit::{Conditioning, Direction};
use crate::flowmatch::TrainSample;
use crate::geometry::{
    make_camera_path, render_pair, BoxSequence, CameraPath, ContextGrid, DepthMap, GeometryError, Intrinsics,
    PathKind, Scene, SceneParams, DYNAMIC_PATH_KINDS,
};
use crate::signal::{encode_trackgrid, SignalError};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("split needs at least {needed} scenes, found {scenes}")]
    TooFewScenes { scenes: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("manifest lists {expected} {split} records but the file holds {found}")]
    CountMismatch { split: Split, expected: usize, found: usize },
    #[error("unsupported dataset format version {0}")]
    Version(u32),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Eval => "eval",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.as_str())
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub scene: u64,
    pub path: u64,
}

/// One rendered (scene, camera path) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Index of the source scene; all records of a scene share a split.
    pub scene: usize,
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "G")]
    pub grid: usize,
    #[serde(rename = "K")]
    pub dct_order: usize,
    pub b_ref: BoxSequence,
    pub b_tgt: BoxSequence,
    /// `G²×2K` DCT track tokens, row-major over the track grid.
    pub dct_tokens: Vec<Vec<f32>>,
    pub context0: ContextGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth0: Option<DepthMap>,
    pub path_kind: PathKind,
    pub path_magnitude: f64,
    pub intrinsics: Intrinsics,
    pub seeds: Seeds,
    pub split: Split,
}

impl SampleRecord {
    /// Regenerates the camera poses from the stored seeds.
    pub fn camera_path(&self) -> Result<CameraPath, GeometryError> {
        Ok(make_camera_path(self.path_kind, self.frames, self.path_magnitude, self.seeds.path)?
            .with_intrinsics(self.intrinsics))
    }

    pub fn flat_tokens(&self) -> Vec<f64> {
        self.dct_tokens.iter().flatten().map(|&v| f64::from(v)).collect()
    }

    /// Source and target sequences for a transformation direction.
    pub fn source_target(&self, direction: Direction) -> (&BoxSequence, &BoxSequence) {
        match direction {
            Direction::FirstToVideo => (&self.b_ref, &self.b_tgt),
            Direction::VideoToFirst => (&self.b_tgt, &self.b_ref),
        }
    }

    /// Model conditioning with `source` as the frame-aligned reference path.
    pub fn conditioning_with(&self, source: &BoxSequence) -> Conditioning {
        Conditioning {
            reference: Some(source.to_flat()),
            trajectories: Some(self.flat_tokens()),
            context: Some(self.context0.values.clone()),
        }
    }

    pub fn conditioning(&self, direction: Direction) -> Conditioning {
        self.conditioning_with(self.source_target(direction).0)
    }

    pub fn train_sample(&self, direction: Direction) -> TrainSample {
        TrainSample {
            id: self.id.clone(),
            x1: self.source_target(direction).1.to_flat(),
            cond: self.conditioning(direction),
        }
    }

    /// True when the camera never moves.
    pub fn is_static_camera(&self) -> bool {
        self.path_kind == PathKind::Static || self.path_magnitude == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Minimum first-frame-view center displacement, as a fraction of the
    /// frame diagonal.
    pub min_displacement: f64,
    pub min_area: f64,
    pub max_area: f64,
    /// Box centers must stay within `[lo, hi]²` in both views.
    pub center_bounds: (f64, f64),
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_displacement: 0.05,
            min_area: 0.002,
            max_area: 0.6,
            center_bounds: (-0.2, 1.2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    StaticObject,
    Size,
    Offscreen,
    /// The object left the view of one of the cameras entirely (behind it).
    Render,
}

/// Accepts a record or names the first failed criterion (checked in the
/// order static object, size, offscreen).
pub fn filter(b_ref: &BoxSequence, b_tgt: &BoxSequence, cfg: &FilterConfig) -> Result<(), RejectReason> {
    let diagonal = std::f64::consts::SQRT_2;
    let displacement = match b_ref.boxes.first() {
        Some(first) => b_ref
            .iter()
            .map(|b| (b.cx - first.cx).hypot(b.cy - first.cy))
            .fold(0.0, f64::max),
        None => 0.0,
    };
    if displacement < cfg.min_displacement * diagonal {
        return Err(RejectReason::StaticObject);
    }
    let all = || b_ref.iter().chain(b_tgt.iter());
    if all().any(|b| !(cfg.min_area..=cfg.max_area).contains(&b.area())) {
        return Err(RejectReason::Size);
    }
    let (lo, hi) = cfg.center_bounds;
    if all().any(|b| !(lo..=hi).contains(&b.cx) || !(lo..=hi).contains(&b.cy)) {
        return Err(RejectReason::Offscreen);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_scenes: usize,
    pub paths_per_scene: usize,
    pub frames: usize,
    pub grid: usize,
    pub dct_order: usize,
    pub seed: u64,
    pub eval_fraction: f64,
    pub val_fraction: f64,
    pub path_magnitude: f64,
    pub scene: SceneParams,
    pub filter: FilterConfig,
    /// Threads used for rendering; output does not depend on it.
    #[serde(skip, default = "one")]
    pub workers: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_scenes: 500,
            paths_per_scene: 10,
            frames: 24,
            grid: 12,
            dct_order: 20,
            seed: 0,
            eval_fraction: 0.025,
            val_fraction: 0.02,
            path_magnitude: 1.0,
            scene: SceneParams::default(),
            filter: FilterConfig::default(),
            workers: 1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.n_scenes == 0 || self.paths_per_scene == 0 {
            return bad("n_scenes and paths_per_scene must be >= 1".into());
        }
        if self.frames < 2 || self.grid == 0 {
            return bad("frames must be >= 2 and grid >= 1".into());
        }
        if self.dct_order == 0 || self.dct_order > self.frames {
            return bad(format!("dct_order must lie in [1, {}]", self.frames));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return bad("eval_fraction must lie in (0, 1)".into());
        }
        if !(self.val_fraction >= 0.0 && self.eval_fraction + self.val_fraction < 1.0) {
            return bad("val_fraction must be >= 0 with eval_fraction + val_fraction < 1".into());
        }
        Ok(())
    }
}

fn one() -> usize {
    1
}

/// Deterministic seed derivation (SplitMix64 finalizer over a mixed key).
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Camera path family of path `j` of scene `scene`; families rotate with the
/// scene index so every family is equally frequent overall.
pub fn path_kind_for(scene: usize, j: usize) -> PathKind {
    DYNAMIC_PATH_KINDS[(scene + j) % DYNAMIC_PATH_KINDS.len()]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub eval: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Eval => self.eval,
        }
    }

    fn bump(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Val => self.val += 1,
            Split::Eval => self.eval += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub counts: SplitCounts,
    pub candidates: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
    pub scenes: SplitCounts,
    pub generation: GenConfig,
}

/// Renders, filters and encodes every candidate pair of one scene.
fn scene_records(
    scene_idx: usize,
    cfg: &GenConfig,
) -> Result<(Vec<SampleRecord>, Vec<RejectReason>), DataError> {
    let scene_seed = derive_seed(cfg.seed, scene_idx as u64, 0);
    let scene = Scene::generate(scene_seed, cfg.frames, &cfg.scene);
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for j in 0..cfg.paths_per_scene {
        let kind = path_kind_for(scene_idx, j);
        let path_seed = derive_seed(cfg.seed, scene_idx as u64, j as u64 + 1);
        let path = make_camera_path(kind, cfg.frames, cfg.path_magnitude, path_seed)?;
        let pair = match render_pair(&scene, &path, cfg.grid) {
            Ok(p) => p,
            Err(GeometryError::ObjectNotVisible { .. }) => {
                rejected.push(RejectReason::Render);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if let Err(reason) = filter(&pair.b_ref, &pair.b_tgt, &cfg.filter) {
            rejected.push(reason);
            continue;
        }
        let tokens = encode_trackgrid(&pair.tracks, cfg.dct_order)?
            .iter()
            .map(|t| t.features().into_iter().map(|v| v as f32).collect())
            .collect();
        let mut context0 = pair.context0;
        let mut depth0 = pair.depth0;
        // stored as f32; quantize now so in-memory and on-disk records agree
        for v in context0.values.iter_mut().chain(depth0.inv_depth.iter_mut()) {
            *v = f64::from(*v as f32);
        }
        accepted.push(SampleRecord {
            id: format!("s{scene_idx:05}-p{j:02}"),
            scene: scene_idx,
            frames: cfg.frames,
            grid: cfg.grid,
            dct_order: cfg.dct_order,
            b_ref: pair.b_ref,
            b_tgt: pair.b_tgt,
            dct_tokens: tokens,
            context0,
            depth0: Some(depth0),
            path_kind: kind,
            path_magnitude: cfg.path_magnitude,
            intrinsics: path.intrinsics,
            seeds: Seeds {
                scene: scene_seed,
                path: path_seed,
            },
            split: Split::Train,
        });
    }
    Ok((accepted, rejected))
}

/// Assigns splits at scene granularity by a seeded shuffle of the distinct
/// scene ids: `round(n·eval_fraction)` scenes go to eval, then
/// `round(n·val_fraction)` to val, the rest to train.
pub fn split(records: &mut [SampleRecord], eval_fraction: f64, val_fraction: f64, seed: u64) -> Result<(), DataError> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) || !(val_fraction >= 0.0 && eval_fraction + val_fraction < 1.0) {
        return Err(DataError::InvalidConfig(format!(
            "fractions eval={eval_fraction} val={val_fraction} out of range"
        )));
    }
    let scenes: Vec<usize> = records.iter().map(|r| r.scene).collect::<BTreeSet<_>>().into_iter().collect();
    let n = scenes.len();
    let n_eval = (n as f64 * eval_fraction).round() as usize;
    let n_val = (n as f64 * val_fraction).round() as usize;
    if n_eval == 0 || n_eval + n_val >= n {
        let needed = (1.0 / eval_fraction).ceil() as usize;
        return Err(DataError::TooFewScenes {
            scenes: n,
            needed: needed.max(n_eval + n_val + 1),
        });
    }
    let mut order = scenes;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = BTreeMap::new();
    for (i, s) in order.into_iter().enumerate() {
        let split = if i < n_eval {
            Split::Eval
        } else if i < n_eval + n_val {
            Split::Val
        } else {
            Split::Train
        };
        assignment.insert(s, split);
    }
    for r in records.iter_mut() {
        r.split = assignment[&r.scene];
    }
    Ok(())
}

/// In-memory dataset: every accepted record plus the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

type SceneOutput = (Vec<SampleRecord>, Vec<RejectReason>);

/// Generates the dataset in memory. Deterministic for a fixed `cfg.seed`
/// regardless of `cfg.workers`.
pub fn generate(cfg: &GenConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let workers = cfg.workers.clamp(1, cfg.n_scenes);
    let per_scene: Vec<Result<SceneOutput, DataError>> = if workers == 1 {
        (0..cfg.n_scenes).map(|s| scene_records(s, cfg)).collect()
    } else {
        let mut slots: Vec<Option<Result<_, DataError>>> = (0..cfg.n_scenes).map(|_| None).collect();
        std::thread::scope(|scope| {
            let chunk = cfg.n_scenes.div_ceil(workers);
            for (w, out) in slots.chunks_mut(chunk).enumerate() {
                scope.spawn(move || {
                    for (i, slot) in out.iter_mut().enumerate() {
                        *slot = Some(scene_records(w * chunk + i, cfg));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every scene rendered")).collect()
    };

    let mut records = Vec::new();
    let mut rejected: BTreeMap<RejectReason, usize> = BTreeMap::new();
    for r in per_scene {
        let (acc, rej) = r?;
        records.extend(acc);
        for reason in rej {
            *rejected.entry(reason).or_default() += 1;
        }
    }
    split(&mut records, cfg.eval_fraction, cfg.val_fraction, derive_seed(cfg.seed, u64::MAX, 0))?;
    let mut counts = SplitCounts::default();
    let mut scene_split: BTreeMap<usize, Split> = BTreeMap::new();
    for r in records.iter_mut() {
        // depth maps are only needed by the warping baselines on eval
        if r.split != Split::Eval {
            r.depth0 = None;
        }
        counts.bump(r.split);
        scene_split.insert(r.scene, r.split);
    }
    let mut scenes = SplitCounts::default();
    for s in scene_split.values() {
        scenes.bump(*s);
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: FORMAT_VERSION,
            counts,
            candidates: cfg.n_scenes * cfg.paths_per_scene,
            rejected,
            scenes,
            generation: cfg.clone(),
        },
        records,
    })
}

/// Writes `train.jsonl`, `val.jsonl`, `eval.jsonl` and `manifest.json`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        for r in ds.split(split) {
            serde_json::to_writer(&mut w, r).map_err(|source| DataError::Json {
                path: path.clone(),
                line: 0,
                source,
            })?;
            w.write_all(b"\n").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&ds.manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, DataError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|source| DataError::Json {
        path: path.clone(),
        line: 1,
        source,
    })?;
    if m.format_version != FORMAT_VERSION {
        return Err(DataError::Version(m.format_version));
    }
    Ok(m)
}

/// Reads one split file, checking its record count against the manifest.
pub fn read_split(dir: &Path, split: Split, manifest: &DatasetManifest) -> Result<Vec<SampleRecord>, DataError> {
    let path = dir.join(split.file_name());
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|source| DataError::Json {
            path: path.clone(),
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    let expected = manifest.counts.get(split);
    if out.len() != expected {
        return Err(DataError::CountMismatch {
            split,
            expected,
            found: out.len(),
        });
    }
    Ok(out)
}

/// Loads the listed splits (all three when `splits` is empty).
pub fn load_dataset(dir: &Path, splits: &[Split]) -> Result<Dataset, DataError> {
    let manifest = read_manifest(dir)?;
    let wanted: &[Split] = if splits.is_empty() { &Split::ALL } else { splits };
    let mut records = Vec::new();
    for &s in wanted {
        records.extend(read_split(dir, s, &manifest)?);
    }
    Ok(Dataset { manifest, records })
}
