//! Scene files and dataset manifests.
//!
//! ```text
//! magic       8 bytes  "EBM3DSCN"
//! version     u32
//! id          u64
//! W, L, C     u32 each
//! res         f64
//! origin      2 × f64
//! grid        W·L·C × f64, featuregrid layout
//! n_gt        u32, then per record: 7 × f64 box, u8 has_meta
//!             [, f64 height_px, u8 occlusion, f64 truncation]
//! n_det       u32, then per record: 7 × f64 box, f64 score
//! ```
//!
//! Little-endian throughout. A dataset directory holds one `scene_<id>.bin`
//! per scene and a plain-text `manifest.txt` with `id split file` lines.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Scene, Split};
use crate::error::{Error, Result};
use crate::evalkit::{GroundTruth, GtMeta};
use crate::featuregrid::FeatureGrid;
use crate::geometry::Box3;
use crate::refine::Detection;

pub const SCENE_MAGIC: &[u8; 8] = b"EBM3DSCN";
pub const SCENE_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.txt";

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn boxed(&mut self, b: &Box3<f64>) {
        for v in b.to_array() {
            self.f64(v);
        }
    }
}

/// Serializes a scene to bytes.
pub fn write_scene(scene: &Scene) -> Vec<u8> {
    let g = &scene.grid;
    let mut w = Writer(Vec::with_capacity(64 + g.data().len() * 8));
    w.0.extend_from_slice(SCENE_MAGIC);
    w.0.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    w.u64(scene.id);
    w.u32(g.width());
    w.u32(g.length());
    w.u32(g.channels());
    w.f64(g.res);
    w.f64(g.origin[0]);
    w.f64(g.origin[1]);
    for v in g.data() {
        w.f64(*v);
    }
    w.u32(scene.gts.len());
    for gt in &scene.gts {
        w.boxed(&gt.bbox);
        match gt.meta {
            None => w.u8(0),
            Some(m) => {
                w.u8(1);
                w.f64(m.height_px);
                w.u8(m.occlusion);
                w.f64(m.truncation);
            }
        }
    }
    w.u32(scene.initial_dets.len());
    for d in &scene.initial_dets {
        w.boxed(&d.bbox);
        w.f64(d.score);
    }
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("scene file truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn boxed(&mut self) -> Result<Box3<f64>> {
        let mut a = [0.0; 7];
        for v in &mut a {
            *v = self.f64()?;
        }
        let b = Box3::from_array(a);
        b.validate().map_err(|e| Error::Format(format!("invalid box record: {e}")))?;
        Ok(b)
    }
}

/// Parses a scene written by [`write_scene`].
pub fn read_scene(bytes: &[u8]) -> Result<Scene> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != SCENE_MAGIC {
        return Err(Error::Format("bad scene magic".into()));
    }
    let version = r.u32()?;
    if version != SCENE_VERSION as usize {
        return Err(Error::Format(format!("unsupported scene version {version}")));
    }
    let id = r.u64()?;
    let (w, l, c) = (r.u32()?, r.u32()?, r.u32()?);
    let res = r.f64()?;
    let origin = [r.f64()?, r.f64()?];
    let n = w
        .checked_mul(l)
        .and_then(|v| v.checked_mul(c))
        .filter(|&n| n.saturating_mul(8) <= bytes.len())
        .ok_or_else(|| Error::Format(format!("grid {w}x{l}x{c} exceeds file size")))?;
    let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let grid = FeatureGrid::new(w, l, c, data, origin, res).map_err(|e| Error::Format(format!("scene {id}: {e}")))?;
    let n_gt = r.u32()?;
    let mut gts = Vec::with_capacity(n_gt.min(1 << 16));
    for _ in 0..n_gt {
        let bbox = r.boxed()?;
        let meta = match r.u8()? {
            0 => None,
            1 => {
                let (h, o, t) = (r.f64()?, r.u8()?, r.f64()?);
                Some(GtMeta::new(h, o, t).map_err(|e| Error::Format(e.to_string()))?)
            }
            f => return Err(Error::Format(format!("bad metadata flag {f}"))),
        };
        gts.push(GroundTruth { bbox, meta });
    }
    let n_det = r.u32()?;
    let mut initial_dets = Vec::with_capacity(n_det.min(1 << 16));
    for _ in 0..n_det {
        let bbox = r.boxed()?;
        let score = r.f64()?;
        initial_dets.push(Detection::new(bbox, score).map_err(|e| Error::Format(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after scene".into()));
    }
    Ok(Scene { id, grid, gts, initial_dets })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: u64,
    pub split: Split,
    pub file: String,
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("# id split file\n");
    for e in entries {
        out.push_str(&format!("{} {} {}\n", e.id, e.split.as_str(), e.file));
    }
    out
}

pub fn read_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: n + 1, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", f.len())));
        }
        let id = f[0].parse().map_err(|_| parse_err(format!("bad scene id {:?}", f[0])))?;
        let split = Split::parse(f[1]).map_err(|e| parse_err(e.to_string()))?;
        out.push(ManifestEntry { id, split, file: f[2].to_string() });
    }
    Ok(out)
}

pub fn scene_file_name(id: u64) -> String {
    format!("scene_{id:06}.bin")
}

/// Writes scene files and the manifest into `dir` (created if absent).
pub fn write_dataset(dir: &Path, scenes: impl IntoIterator<Item = Result<(Scene, Split)>>) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for item in scenes {
        let (scene, split) = item?;
        let file = scene_file_name(scene.id);
        let path = dir.join(&file);
        fs::write(&path, write_scene(&scene)).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry { id: scene.id, split, file });
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, write_manifest(&entries)).map_err(|e| Error::io(&path, e))?;
    Ok(entries)
}

/// A manifest entry resolved against its dataset directory.
#[derive(Debug, Clone)]
pub struct SceneFile {
    pub entry: ManifestEntry,
    pub path: PathBuf,
}

impl SceneFile {
    pub fn load(&self) -> Result<Scene> {
        let bytes = fs::read(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let scene = read_scene(&bytes)?;
        if scene.id != self.entry.id {
            return Err(Error::Format(format!(
                "{} holds scene {}, manifest says {}",
                self.path.display(),
                scene.id,
                self.entry.id
            )));
        }
        Ok(scene)
    }
}

/// Lists the scenes of a dataset directory without loading them.
pub fn read_dataset(dir: &Path) -> Result<Vec<SceneFile>> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(read_manifest(&text)?
        .into_iter()
        .map(|entry| SceneFile { path: dir.join(&entry.file), entry })
        .collect())
}
