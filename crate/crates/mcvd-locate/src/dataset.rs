//! Scenario sampling, labeled-sample generation, deterministic splitting,
//! and dataset persistence (`<name>.meta.json` + `<name>.data.csv`).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::config::SceneConfig;
use crate::error::{Error, Result};
use crate::exec;
use crate::features::{build_feature_matrix, feature_names, flatten, FLAT_WIDTH};
use crate::geom::{tx_world_positions, Pose, UnitQuaternion, Vec3};
use crate::rng::{derive_rng, mix_seed, stream_key, Domain};
use crate::simulator::simulate_scene;

pub const DATASET_LAYOUT_VERSION: &str = "mcvd-locate/v1";

pub const N_LABELS: usize = 25;

/// One labeled sample: flattened features plus the ground-truth pose and
/// transmitter positions it was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: u64,
    /// Flattened feature matrix, `features::FLAT_WIDTH` reals.
    pub features: Vec<f64>,
    pub label_position: Vec3,
    pub label_quat: UnitQuaternion,
    pub label_tx: [Vec3; 6],
    /// Scene seed this sample was simulated with.
    pub seed_used: u64,
}

impl SampleRecord {
    /// Labels in regression order: position (3), quaternion wxyz (4),
    /// transmitters (18).
    pub fn labels(&self) -> [f64; N_LABELS] {
        let mut out = [0.0; N_LABELS];
        out[0] = self.label_position.x;
        out[1] = self.label_position.y;
        out[2] = self.label_position.z;
        out[3] = self.label_quat.w;
        out[4] = self.label_quat.x;
        out[5] = self.label_quat.y;
        out[6] = self.label_quat.z;
        for (k, tx) in self.label_tx.iter().enumerate() {
            out[7 + 3 * k] = tx.x;
            out[7 + 3 * k + 1] = tx.y;
            out[7 + 3 * k + 2] = tx.z;
        }
        out
    }
}

pub fn label_names() -> Vec<String> {
    let mut names = vec![
        "pos_x".into(),
        "pos_y".into(),
        "pos_z".into(),
        "quat_w".into(),
        "quat_x".into(),
        "quat_y".into(),
        "quat_z".into(),
    ];
    for k in 0..6 {
        names.push(format!("tx{k}_x"));
        names.push(format!("tx{k}_y"));
        names.push(format!("tx{k}_z"));
    }
    names
}

/// A generated dataset plus the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub scene: SceneConfig,
    pub seed: u64,
    pub records: Vec<SampleRecord>,
}

/// Uniform random scenario: direction uniform on the sphere, range uniform
/// on [d_min, d_max], orientation uniform on SO(3).
pub fn sample_pose(cfg: &SceneConfig, rng: &mut Xoshiro256PlusPlus) -> Pose {
    let dir = loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if let Ok(u) = v.normalized() {
            break u;
        }
    };
    let radius = cfg.d_min + (cfg.d_max - cfg.d_min) * rng.random::<f64>();
    let orientation = UnitQuaternion::normalize(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    Pose {
        position: dir.scale(radius),
        orientation,
    }
}

/// Simulates `n_samples` independent scenes and extracts features for each.
/// Pure function of (cfg, n_samples, seed); identical output for any worker
/// count.
pub fn generate_dataset(cfg: &SceneConfig, n_samples: usize, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let layout = cfg.layout();
    let records = exec::map_indexed(n_samples, |i| -> Result<SampleRecord> {
        let make = || -> Result<SampleRecord> {
            let mut pose_rng = derive_rng(seed, stream_key(Domain::Pose, i as u64, 0, 0));
            let pose = sample_pose(cfg, &mut pose_rng);
            let scene_seed = mix_seed(seed, i as u64);
            let log = simulate_scene(cfg, &pose, scene_seed)?;
            let features = flatten(&build_feature_matrix(&log)?);
            Ok(SampleRecord {
                sample_id: i as u64,
                features,
                label_position: pose.position,
                label_quat: pose.orientation,
                label_tx: tx_world_positions(&pose, &layout),
                seed_used: scene_seed,
            })
        };
        make().map_err(|e| Error::State(format!("failed generating sample {i}: {e}")))
    });
    let records: Vec<SampleRecord> = records.into_iter().collect::<Result<_>>()?;
    Ok(Dataset {
        scene: cfg.clone(),
        seed,
        records,
    })
}

/// Train/validation/test fractions plus the seed for the keyed assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub split_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            split_seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid("split fractions must be positive"));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split fractions must sum to 1"));
        }
        Ok(())
    }
}

/// Record indices per split, each ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Exact split sizes via largest-remainder rounding.
fn split_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let mut sizes = [0usize; 3];
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(3);
    let mut assigned = 0;
    for (i, f) in fractions.iter().enumerate() {
        let target = f * n as f64;
        sizes[i] = target.floor() as usize;
        assigned += sizes[i];
        remainders.push((target - target.floor(), i));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for k in 0..n - assigned {
        sizes[remainders[k % 3].1] += 1;
    }
    sizes
}

/// Disjoint covering split, a pure function of each record's sample_id and
/// the split seed — shuffling the input never moves a sample across splits.
pub fn split(records: &[SampleRecord], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    if records.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let sizes = split_sizes(records.len(), [spec.train, spec.val, spec.test]);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| {
        (
            mix_seed(spec.split_seed, records[i].sample_id),
            records[i].sample_id,
        )
    });
    let mut parts = order.split_off(sizes[0]);
    let mut train = order;
    let mut test = parts.split_off(sizes[1]);
    let mut val = parts;
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, val, test })
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    layout_version: String,
    scene: SceneConfig,
    n_samples: usize,
    seed: u64,
}

fn side_paths(base: &Path) -> (PathBuf, PathBuf) {
    let mut meta = OsString::from(base.as_os_str());
    meta.push(".meta.json");
    let mut data = OsString::from(base.as_os_str());
    data.push(".data.csv");
    (PathBuf::from(meta), PathBuf::from(data))
}

fn header_row() -> Vec<String> {
    let mut cols = vec!["sample_id".to_string()];
    cols.extend(feature_names());
    cols.extend(label_names());
    cols.push("seed_used".to_string());
    cols
}

/// Writes `<base>.meta.json` and `<base>.data.csv`. Reals use the shortest
/// round-trip decimal form, so load(save(x)) == x bit for bit.
pub fn save_dataset(ds: &Dataset, base: &Path) -> Result<()> {
    let (meta_path, data_path) = side_paths(base);
    let meta = DatasetMeta {
        layout_version: DATASET_LAYOUT_VERSION.to_string(),
        scene: ds.scene.clone(),
        n_samples: ds.records.len(),
        seed: ds.seed,
    };
    let mut meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::State(format!("metadata serialization failed: {e}")))?;
    meta_json.push('\n');
    fs::write(&meta_path, meta_json)?;

    let mut w = csv::Writer::from_path(&data_path)?;
    w.write_record(header_row())?;
    let mut row: Vec<String> = Vec::with_capacity(2 + FLAT_WIDTH + N_LABELS);
    for rec in &ds.records {
        row.clear();
        row.push(rec.sample_id.to_string());
        row.extend(rec.features.iter().map(|v| format!("{v}")));
        row.extend(rec.labels().iter().map(|v| format!("{v}")));
        row.push(rec.seed_used.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_cell<T: std::str::FromStr>(cell: &str, row: usize, col: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    cell.parse().map_err(|e| Error::MalformedRecord {
        row,
        message: format!("column {col}: cannot parse {cell:?}: {e}"),
    })
}

/// Loads a dataset written by `save_dataset`. Version, header, and row
/// errors are distinct; nothing is returned on any failure.
pub fn load_dataset(base: &Path) -> Result<Dataset> {
    let (meta_path, data_path) = side_paths(base);
    let meta_text = fs::read_to_string(&meta_path)?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::MalformedHeader(format!("{}: {e}", meta_path.display())))?;
    if meta.layout_version != DATASET_LAYOUT_VERSION {
        return Err(Error::VersionMismatch {
            found: meta.layout_version,
            expected: DATASET_LAYOUT_VERSION.to_string(),
        });
    }

    let mut rdr = csv::Reader::from_path(&data_path)?;
    let expected = header_row();
    let header = rdr.headers()?.clone();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::MalformedHeader(format!(
            "{}: column names do not match the v1 layout",
            data_path.display()
        )));
    }

    let n_cols = expected.len();
    let mut records = Vec::with_capacity(meta.n_samples);
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2; // 1-based, after the header line
        let rec = rec.map_err(|e| Error::MalformedRecord {
            row,
            message: e.to_string(),
        })?;
        if i >= meta.n_samples {
            return Err(Error::MalformedRecord {
                row,
                message: format!("more rows than the declared n_samples = {}", meta.n_samples),
            });
        }
        if rec.len() != n_cols {
            return Err(Error::MalformedRecord {
                row,
                message: format!("expected {n_cols} columns, found {}", rec.len()),
            });
        }
        let sample_id = parse_cell(&rec[0], row, "sample_id")?;
        let mut features = Vec::with_capacity(FLAT_WIDTH);
        for c in 0..FLAT_WIDTH {
            features.push(parse_cell(&rec[1 + c], row, &expected[1 + c])?);
        }
        let mut labels = [0.0f64; N_LABELS];
        for (c, slot) in labels.iter_mut().enumerate() {
            *slot = parse_cell(&rec[1 + FLAT_WIDTH + c], row, &expected[1 + FLAT_WIDTH + c])?;
        }
        let seed_used = parse_cell(&rec[n_cols - 1], row, "seed_used")?;
        let mut label_tx = [Vec3::ZERO; 6];
        for (k, tx) in label_tx.iter_mut().enumerate() {
            *tx = Vec3::new(
                labels[7 + 3 * k],
                labels[7 + 3 * k + 1],
                labels[7 + 3 * k + 2],
            );
        }
        records.push(SampleRecord {
            sample_id,
            features,
            label_position: Vec3::new(labels[0], labels[1], labels[2]),
            // stored labels are already unit quaternions; rebuild verbatim
            label_quat: UnitQuaternion {
                w: labels[3],
                x: labels[4],
                y: labels[5],
                z: labels[6],
            },
            label_tx,
            seed_used,
        });
    }
    if records.len() < meta.n_samples {
        return Err(Error::TruncatedFile(format!(
            "{}: {} rows, metadata declares {}",
            data_path.display(),
            records.len(),
            meta.n_samples
        )));
    }
    Ok(Dataset {
        scene: meta.scene,
        seed: meta.seed,
        records,
    })
}
