//! Snapshot files, dataset manifests, checkpoints, run configs and field
//! export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Normalization, Role};
use crate::error::{Error, Result};
use crate::fdm::GridField;
use crate::models::{Model, ModelSpec};
use crate::pde::PdeConfig;
use crate::tensor::Tensor;
use crate::train::{AdamState, EpochRecord, SplitIndex, TrainConfig, TrainerState};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"DIAF";
pub const SNAPSHOT_VERSION: u16 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DIAC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// JSON sidecar stored next to each snapshot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub role: Role,
    pub normalization: Normalization,
    pub dt: f64,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub sizes: Vec<usize>,
    pub extents: Vec<(f64, f64)>,
    pub dtype: Dtype,
    /// Row-major values, widened to f64.
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn from_field(field: &GridField, dtype: Dtype) -> Self {
        Snapshot {
            sizes: field.values().shape().to_vec(),
            extents: field.extents().to_vec(),
            dtype,
            values: field.values().to_vec(),
        }
    }

    /// A field whose leading (non-spatial) axes are kept as stored.
    pub fn to_field(&self) -> Result<GridField> {
        GridField::new(Tensor::new(self.sizes.clone(), self.values.clone())?, self.extents.clone())
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), detail: detail.into() }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_snapshot(s: &Snapshot) -> Result<Vec<u8>> {
    let n: usize = s.sizes.iter().product();
    if n != s.values.len() || s.extents.len() > s.sizes.len() || s.sizes.len() > u8::MAX as usize {
        return Err(Error::invalid(format!("snapshot sizes {:?} do not fit {} values", s.sizes, s.values.len())));
    }
    let mut b = Vec::with_capacity(16 + 8 * s.sizes.len() + 16 * s.extents.len() + n * s.dtype.size());
    b.extend_from_slice(SNAPSHOT_MAGIC);
    b.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    b.push(s.dtype.code());
    b.push(s.sizes.len() as u8);
    b.push(s.extents.len() as u8);
    for &n in &s.sizes {
        b.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for &(lo, hi) in &s.extents {
        b.extend_from_slice(&lo.to_le_bytes());
        b.extend_from_slice(&hi.to_le_bytes());
    }
    match s.dtype {
        Dtype::F32 => s.values.iter().for_each(|&v| b.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => s.values.iter().for_each(|&v| b.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(b)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(self.path, format!("truncated: needed {n} bytes at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| format_err(self.path, "size overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_snapshot(bytes: &[u8], path: &Path) -> Result<Snapshot> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(4).map_err(|_| format_err(path, "file too short for a header"))? != SNAPSHOT_MAGIC {
        return Err(format_err(path, "bad magic, not a snapshot file"));
    }
    let version = r.u16()?;
    if version != SNAPSHOT_VERSION {
        return Err(format_err(path, format!("unsupported snapshot version {version}")));
    }
    let code = r.u8()?;
    let dtype = Dtype::from_code(code).ok_or_else(|| format_err(path, format!("unknown dtype code {code}")))?;
    let n_axes = r.u8()? as usize;
    let n_ext = r.u8()? as usize;
    if n_ext > n_axes {
        return Err(format_err(path, format!("{n_ext} extents for {n_axes} axes")));
    }
    let sizes = (0..n_axes).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let extents = (0..n_ext).map(|_| Ok((r.f64()?, r.f64()?))).collect::<Result<Vec<_>>>()?;
    let n = sizes.iter().try_fold(1usize, |a, &s| a.checked_mul(s)).ok_or_else(|| format_err(path, "size overflow"))?;
    let payload = r.take(n.checked_mul(dtype.size()).ok_or_else(|| format_err(path, "size overflow"))?)?;
    if r.pos != bytes.len() {
        return Err(format_err(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let values = match dtype {
        Dtype::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Ok(Snapshot { sizes, extents, dtype, values })
}

/// Writes the snapshot and, when given, its JSON sidecar.
pub fn save_snapshot(path: &Path, s: &Snapshot, meta: Option<&SnapshotMeta>) -> Result<()> {
    write_file(path, &encode_snapshot(s)?)?;
    if let Some(m) = meta {
        write_file(&sidecar_path(path), serde_json::to_string_pretty(m)?.as_bytes())?;
    }
    Ok(())
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot> {
    decode_snapshot(&read_file(path)?, path)
}

pub fn load_sidecar(path: &Path) -> Result<SnapshotMeta> {
    let p = sidecar_path(path);
    Ok(serde_json::from_slice(&read_file(&p)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub grid: Vec<usize>,
    pub extents: Vec<(f64, f64)>,
    pub dtype: Dtype,
    pub dt: f64,
    pub roles: Vec<Role>,
    /// `snapshots[i][r]`: file of role `roles[r]` at snapshot i, relative to the manifest.
    pub snapshots: Vec<Vec<String>>,
    pub mask: Option<String>,
    pub split_seed: u64,
    pub inflow: Vec<f64>,
    pub provenance: String,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes one snapshot file (plus sidecar) per role and snapshot and a
/// manifest into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path, dtype: Dtype, split_seed: u64) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sizes = ds.grid.clone();
    let mut snapshots = Vec::with_capacity(ds.len());
    for (i, frame) in ds.frames.iter().enumerate() {
        let mut files = Vec::with_capacity(ds.roles.len());
        for (r, values) in frame.iter().enumerate() {
            let name = format!("{}_{i:05}.diaf", ds.roles[r].name());
            let snap = Snapshot { sizes: sizes.clone(), extents: ds.extents.clone(), dtype, values: values.clone() };
            let meta = SnapshotMeta { role: ds.roles[r], normalization: ds.norms[r], dt: ds.dt, provenance: ds.provenance.clone() };
            save_snapshot(&dir.join(&name), &snap, Some(&meta))?;
            files.push(name);
        }
        snapshots.push(files);
    }
    let mask = match &ds.mask {
        Some(m) => {
            let name = "mask.diaf".to_string();
            // the mask is binary, exact in either dtype
            let snap = Snapshot { sizes: sizes.clone(), extents: ds.extents.clone(), dtype, values: m.clone() };
            save_snapshot(&dir.join(&name), &snap, None)?;
            Some(name)
        }
        None => None,
    };
    let manifest = Manifest {
        grid: ds.grid.clone(),
        extents: ds.extents.clone(),
        dtype,
        dt: ds.dt,
        roles: ds.roles.clone(),
        snapshots,
        mask,
        split_seed,
        inflow: ds.inflow.clone(),
        provenance: ds.provenance.clone(),
    };
    write_file(&dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Loads a dataset from a directory holding `manifest.json`, or from the
/// manifest path itself.
pub fn load_dataset(path: &Path) -> Result<(Dataset, Manifest)> {
    let (dir, mpath) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_NAME))
    } else {
        (path.parent().map(Path::to_path_buf).unwrap_or_default(), path.to_path_buf())
    };
    let manifest: Manifest = serde_json::from_slice(&read_file(&mpath)?)?;
    let check = |p: &Path, s: &Snapshot| -> Result<()> {
        if s.sizes != manifest.grid || s.dtype != manifest.dtype {
            return Err(format_err(p, format!("{:?} {:?} differs from manifest {:?} {:?}", s.sizes, s.dtype, manifest.grid, manifest.dtype)));
        }
        Ok(())
    };
    let mut frames = Vec::with_capacity(manifest.snapshots.len());
    let mut norms = vec![Normalization::identity(crate::data::NormKind::MaxAbs); manifest.roles.len()];
    for files in &manifest.snapshots {
        if files.len() != manifest.roles.len() {
            return Err(format_err(&mpath, "snapshot entry does not list one file per role"));
        }
        let mut frame = Vec::with_capacity(files.len());
        for (r, f) in files.iter().enumerate() {
            let p = dir.join(f);
            let s = load_snapshot(&p)?;
            check(&p, &s)?;
            if let Ok(meta) = load_sidecar(&p) {
                norms[r] = meta.normalization;
            }
            frame.push(s.values);
        }
        frames.push(frame);
    }
    let mask = match &manifest.mask {
        Some(f) => {
            let p = dir.join(f);
            let s = load_snapshot(&p)?;
            check(&p, &s)?;
            Some(s.values)
        }
        None => None,
    };
    let ds = Dataset {
        grid: manifest.grid.clone(),
        extents: manifest.extents.clone(),
        dt: manifest.dt,
        roles: manifest.roles.clone(),
        frames,
        norms,
        mask,
        inflow: manifest.inflow.clone(),
        provenance: manifest.provenance.clone(),
    };
    Ok((ds, manifest))
}

/// Model, PDE and training settings in one JSON document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelSpec,
    /// Overrides `model.pde` when present.
    pub pde: Option<PdeConfig>,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = self.model.clone();
        if let Some(p) = &self.pde {
            spec.pde = Some(p.clone());
        }
        spec
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&read_file(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    spec: ModelSpec,
    train: TrainConfig,
    params: Vec<(String, Vec<usize>)>,
    adam_t: u64,
    rng_seed: u64,
    /// Decimal string, the word position is 128 bits wide.
    rng_word_pos: String,
    history: Vec<EpochRecord>,
    split: SplitIndex,
    test_mse: Option<f64>,
}

/// A model plus the full training state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub names: Vec<String>,
    pub state: TrainerState,
    /// Final test MSE once training has finished.
    pub test_mse: Option<f64>,
}

impl Checkpoint {
    pub fn new(model: &Model, train: &TrainConfig, state: TrainerState, test_mse: Option<f64>) -> Self {
        Checkpoint {
            spec: model.spec().clone(),
            train: train.clone(),
            names: model.params().names().to_vec(),
            state,
            test_mse,
        }
    }

    /// Rebuilds the model with the stored parameters.
    pub fn model(&self) -> Result<Model> {
        let mut m = Model::new(self.spec.clone())?;
        if m.params().names() != self.names.as_slice() {
            return Err(Error::invalid("checkpoint parameter names do not match the model"));
        }
        m.params_mut().set_values(self.state.params.clone())?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            spec: self.spec.clone(),
            train: self.train.clone(),
            params: self.names.iter().cloned().zip(self.state.params.iter().map(|p| p.shape().to_vec())).collect(),
            adam_t: self.state.adam.t,
            rng_seed: self.state.rng_seed,
            rng_word_pos: self.state.rng_word_pos.to_string(),
            history: self.state.history.clone(),
            split: self.state.split.clone(),
            test_mse: self.test_mse,
        };
        let json = serde_json::to_vec(&header)?;
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.extend_from_slice(&(json.len() as u64).to_le_bytes());
        b.extend_from_slice(&json);
        let blobs = self.state.params.iter().map(|p| p.data()).chain(self.state.adam.m.iter().map(|m| m.as_slice())).chain(self.state.adam.v.iter().map(|v| v.as_slice()));
        for blob in blobs {
            for v in blob {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0, path };
        if r.take(4).map_err(|_| format_err(path, "file too short for a header"))? != CHECKPOINT_MAGIC {
            return Err(format_err(path, "bad magic, not a checkpoint"));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(format_err(path, format!("unsupported checkpoint version {version}")));
        }
        let len = r.u64()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(len)?)?;
        let read_blobs = |r: &mut Reader| -> Result<Vec<Vec<f64>>> {
            header.params.iter().map(|(_, s)| r.f64s(s.iter().product())).collect()
        };
        let params = read_blobs(&mut r)?;
        let m = read_blobs(&mut r)?;
        let v = read_blobs(&mut r)?;
        if r.pos != bytes.len() {
            return Err(format_err(path, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let params = header
            .params
            .iter()
            .zip(params)
            .map(|((_, s), d)| Tensor::new(s.clone(), d))
            .collect::<Result<Vec<_>>>()?;
        let rng_word_pos = header.rng_word_pos.parse().map_err(|_| format_err(path, "bad rng word position"))?;
        Ok(Checkpoint {
            spec: header.spec,
            train: header.train,
            names: header.params.into_iter().map(|(n, _)| n).collect(),
            state: TrainerState {
                params,
                adam: AdamState { t: header.adam_t, m, v },
                rng_seed: header.rng_seed,
                rng_word_pos,
                history: header.history,
                split: header.split,
            },
            test_mse: header.test_mse,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Pgm,
}

/// CSV rows `x,y,value` (shortest round-trip formatting) or an 8-bit
/// min-max mapped PGM of a 2D field, or of a 1D field as one row.
pub fn export_field(field: &GridField, path: &Path, format: ExportFormat) -> Result<()> {
    let s = field.spatial_shape().to_vec();
    if field.values().numel() != s.iter().product::<usize>() || s.len() > 2 {
        return Err(Error::invalid(format!("export needs a single 1D or 2D field, got {:?}", field.values().shape())));
    }
    let (nx, ny) = if s.len() == 2 { (s[0], s[1]) } else { (s[0], 1) };
    let v = field.values().data();
    let bytes = match format {
        ExportFormat::Csv => {
            let mut out = String::from("x,y,value\n");
            for i in 0..nx {
                for j in 0..ny {
                    let y = if s.len() == 2 { field.coord(1, j) } else { 0.0 };
                    out.push_str(&format!("{},{},{}\n", field.coord(0, i), y, v[i * ny + j]));
                }
            }
            out.into_bytes()
        }
        ExportFormat::Pgm => {
            // rows follow the second axis so the first axis runs left to right
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
            for j in 0..ny {
                for i in 0..nx {
                    let g = if hi > lo { ((v[i * ny + j] - lo) / (hi - lo) * 255.0).round() } else { 128.0 };
                    out.push(g as u8);
                }
            }
            out
        }
    };
    write_file(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_channel3d, gen_vortex_street, Channel3dConfig, VortexStreetConfig};
    use crate::train::Trainer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(n: usize, seed: u64) -> GridField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridField::new(Tensor::from_fn(&[n, n], |_| rng.gen_range(-1e3..1e3)), vec![(0.0, 2.0), (-1.0, 1.0)]).unwrap()
    }

    #[test]
    fn snapshot_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let f = random_field(16, 3);
        let s = Snapshot::from_field(&f, Dtype::F64);
        let p = dir.path().join("a.diaf");
        save_snapshot(&p, &s, None).unwrap();
        let back = load_snapshot(&p).unwrap();
        assert_eq!(back.sizes, s.sizes);
        assert!(back.values.iter().zip(&s.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.extents, s.extents);
        // f32 payload: values representable in f32 survive exactly
        let s32 = Snapshot { dtype: Dtype::F32, values: s.values.iter().map(|&v| v as f32 as f64).collect(), ..s.clone() };
        save_snapshot(&p, &s32, None).unwrap();
        assert_eq!(load_snapshot(&p).unwrap(), s32);
        assert_eq!(std::fs::metadata(&p).unwrap().len() as usize, 4 + 2 + 3 + 16 + 32 + 256 * 4);
    }

    #[test]
    fn snapshot_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let s = Snapshot::from_field(&random_field(4, 1), Dtype::F64);
        let mut bytes = encode_snapshot(&s).unwrap();
        let p = dir.path().join("x.diaf");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(load_snapshot(&p), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(load_snapshot(&p), Err(Error::Format { .. })));
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, &bytes).unwrap();
        let err = load_snapshot(&p).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        assert!(matches!(load_snapshot(&dir.path().join("missing.diaf")), Err(Error::Io { .. })));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_vortex_street(&VortexStreetConfig { n: 16, n_snapshots: 4, ..Default::default() }).unwrap();
        save_dataset(&ds, dir.path(), Dtype::F64, 7).unwrap();
        let (back, m) = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(m.split_seed, 7);
        let meta = load_sidecar(&dir.path().join(&m.snapshots[0][0])).unwrap();
        assert_eq!(meta.normalization, ds.norms[0]);

        let ch = gen_channel3d(&Channel3dConfig { n: 8, n_snapshots: 2, ..Default::default() }).unwrap();
        let d2 = dir.path().join("ch");
        save_dataset(&ch, &d2, Dtype::F64, 0).unwrap();
        assert_eq!(load_dataset(&d2.join(MANIFEST_NAME)).unwrap().0, ch);
    }

    #[test]
    fn checkpoint_round_trip_and_magic() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_vortex_street(&VortexStreetConfig { n: 16, n_snapshots: 6, ..Default::default() }).unwrap();
        let spec = ModelSpec { grid: vec![16, 16], width: 4, fourier_modes: 3, compression_ratio: 2, ..Default::default() };
        let cfg = TrainConfig { epochs: 2, batch_size: 2, ..Default::default() };
        let mut t = Trainer::new(Model::new(spec).unwrap(), &ds, cfg.clone()).unwrap();
        t.run_epoch().unwrap();
        let ck = Checkpoint::new(t.model(), &cfg, t.state(), Some(0.5));
        let p = dir.path().join("m.ckpt");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.spec, ck.spec);
        assert_eq!(back.state.adam, ck.state.adam);
        assert_eq!(back.state.history, ck.state.history);
        assert_eq!(back.state.rng_word_pos, ck.state.rng_word_pos);
        assert_eq!(back.test_mse, Some(0.5));
        for (a, b) in back.state.params.iter().zip(&ck.state.params) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[..4].copy_from_slice(b"DIAF");
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn export_csv_and_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let f = GridField::unit(Tensor::new(vec![2, 2], vec![0.1, 1.0 / 3.0, -2.5e-7, 4.0]).unwrap(), 2).unwrap();
        let p = dir.path().join("f.csv");
        export_field(&f, &p, ExportFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "x,y,value");
        let parsed: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
        assert_eq!(parsed, f.values().to_vec());

        let c = GridField::unit(Tensor::full(&[3, 5], 0.7), 2).unwrap();
        let p = dir.path().join("c.pgm");
        export_field(&c, &p, ExportFormat::Pgm).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P5\n3 5\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 15);
        assert!(px.iter().all(|&g| g == px[0]));
        assert!(export_field(&c, &dir.path().join("no/such/dir/c.pgm"), ExportFormat::Pgm).is_err());
    }

    #[test]
    fn run_config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rc = RunConfig { pde: Some(PdeConfig::ppe()), ..Default::default() };
        let p = dir.path().join("run.json");
        rc.save(&p).unwrap();
        let back = RunConfig::load(&p).unwrap();
        assert_eq!(back, rc);
        assert_eq!(back.model_spec().pde, Some(PdeConfig::ppe()));
        let partial: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(partial.train.epochs, 3);
        assert_eq!(partial.train.batch_size, TrainConfig::default().batch_size);
    }
}
