//! Subcommand implementations. Each returns a human-readable summary; all
//! file outputs are deterministic under a fixed config when `timing = false`.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ebm3d::energynet::{load_checkpoint, save_checkpoint};
use ebm3d::evalkit::{self, ApResult, EvalMode, GroundTruth};
use ebm3d::kittiio;
use ebm3d::nce::{loss_csv, LossRecord, SceneSource, TrainExample, Trainer};
use ebm3d::refine::{refine_all_traced, trace_csv, RefineTrace};
use ebm3d::synthscene::{self, read_dataset, write_dataset, Scene, SceneFile, Split, SynthDataset};
use ebm3d::{iou_3d, Det, EnergyNet, Error, Net, Real, Result};

use crate::analysis::angle_scan;
use crate::config::{Precision, RunConfig};

/// Filesystem locations given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// KITTI result files with refined detections.
    pub dets: Option<PathBuf>,
    /// KITTI result files with baseline detections.
    pub baseline: Option<PathBuf>,
    /// KITTI label files used as ground truth.
    pub labels: Option<PathBuf>,
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required for this command")))
}

fn out_dir(paths: &Paths) -> Result<&Path> {
    let out = need(&paths.out, "out")?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn result_file_name(id: u64) -> String {
    format!("{id:06}.txt")
}

fn scenes_in(dir: &Path, split: Option<Split>) -> Result<Vec<SceneFile>> {
    let all = read_dataset(dir)?;
    if all.is_empty() {
        return Err(Error::Input(format!("dataset {} lists no scenes", dir.display())));
    }
    Ok(all.into_iter().filter(|f| split.is_none_or(|s| f.entry.split == s)).collect())
}

fn split_key(cfg: &RunConfig) -> Result<Option<Split>> {
    match cfg.raw("refine.split") {
        "all" => Ok(None),
        s => Split::parse(s).map(Some).map_err(|_| Error::Config(format!("refine.split = {s:?}: expected train, val or all"))),
    }
}

fn load_net(paths: &Paths) -> Result<Net> {
    load_checkpoint(need(&paths.checkpoint, "checkpoint")?)
}

pub fn cmd_synth_gen(cfg: &RunConfig, paths: &Paths) -> Result<String> {
    let out = need(&paths.out, "out")?;
    let synth = cfg.synth()?;
    let n = cfg.n_scenes()?;
    if n == 0 {
        return Err(Error::Config("empty dataset requested".into()));
    }
    let ds = match cfg.n_val()? {
        Some(v) => SynthDataset::with_split(synth, n, v)?,
        None => SynthDataset::new(synth, n)?,
    };
    let (mut boxes, mut iou_sum) = (0usize, 0.0);
    let scenes = (0..n).map(|id| {
        let s = ds.scene(id)?;
        boxes += s.gts.len();
        iou_sum += synthscene::mean_initial_iou(std::slice::from_ref(&s)) * s.gts.len() as f64;
        Ok((s, ds.split(id)))
    });
    let entries = write_dataset(out, scenes)?;
    write_file(&out.join("config.txt"), &cfg.render())?;
    let mean = if boxes == 0 { 0.0 } else { iou_sum / boxes as f64 };
    Ok(format!(
        "scenes={} train={} val={} boxes={} mean_initial_bev_iou={:.4}",
        entries.len(),
        entries.iter().filter(|e| e.split == Split::Train).count(),
        entries.iter().filter(|e| e.split == Split::Val).count(),
        boxes,
        mean
    ))
}

/// Training scenes read from disk on demand.
struct FileScenes(Vec<SceneFile>);

impl<T: Real> SceneSource<T> for FileScenes {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn example(&self, index: usize) -> Result<Cow<'_, TrainExample<T>>> {
        let f = self.0.get(index).ok_or_else(|| Error::Input(format!("scene index {index} out of range")))?;
        Ok(Cow::Owned(f.load()?.to_example()))
    }
}

fn train_typed<T: Real>(cfg: &RunConfig, paths: &Paths, data: &FileScenes, channels: usize, ckpt: &Path) -> Result<Vec<LossRecord>> {
    let dims = cfg.net_dims(channels)?;
    let mut net: EnergyNet<T> = match &paths.checkpoint {
        Some(p) => {
            let n: Net = load_checkpoint(p)?;
            if *n.dims() != dims {
                return Err(Error::Config(format!("checkpoint dims {:?} differ from config {dims:?}", n.dims())));
            }
            n.cast()
        }
        None => EnergyNet::init(dims, cfg.seed()?)?,
    };
    save_checkpoint(&net, ckpt)?;
    let tc = cfg.train()?;
    let mut trainer = Trainer::new(&net, tc.clone(), cfg.noise::<T>()?, SceneSource::<T>::len(data))?;
    for epoch in 0..tc.epochs {
        // keep the last good checkpoint on disk if this epoch fails
        let mut candidate = net.clone();
        trainer.epoch(&mut candidate, data, epoch)?;
        net = candidate;
        save_checkpoint(&net, ckpt)?;
        if let Some(last) = trainer.log.last() {
            log::info!("epoch {epoch} done, last J = {:.4}", last.loss);
        }
    }
    Ok(trainer.log)
}

pub fn cmd_train(cfg: &RunConfig, paths: &Paths) -> Result<String> {
    let dataset = need(&paths.dataset, "dataset")?;
    let out = out_dir(paths)?;
    let files = scenes_in(dataset, Some(Split::Train))?;
    if files.is_empty() {
        return Err(Error::Config("empty training dataset".into()));
    }
    let channels = files[0].load()?.grid.channels();
    let data = FileScenes(files);
    let ckpt = out.join("checkpoint.bin");
    let log = match cfg.precision()? {
        Precision::F32 => train_typed::<f32>(cfg, paths, &data, channels, &ckpt)?,
        Precision::F64 => train_typed::<f64>(cfg, paths, &data, channels, &ckpt)?,
    };
    write_file(&out.join("loss.csv"), &loss_csv(&log, &cfg.header("train"), cfg.timing()?))?;
    let tail = &log[log.len().saturating_sub(10)..];
    let j = if tail.is_empty() { f64::NAN } else { tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64 };
    let m = cfg.train()?.num_noise;
    Ok(format!(
        "steps={} final_J={j:.4} log(M+1)={:.4} checkpoint={}",
        log.len(),
        ((m + 1) as f64).ln(),
        ckpt.display()
    ))
}

/// Refined detections for one scene and their traces.
struct SceneRefinement {
    scene: Scene,
    refined: Vec<(Det, RefineTrace<f64>)>,
}

fn refine_scenes(cfg: &RunConfig, net: &Net, files: &[SceneFile]) -> Result<Vec<SceneRefinement>> {
    let rc = cfg.refine()?;
    files
        .iter()
        .map(|f| {
            let scene = f.load()?;
            let refined = refine_all_traced(net, &scene.grid, &scene.initial_dets, &rc)?;
            Ok(SceneRefinement { scene, refined })
        })
        .collect()
}

pub fn cmd_refine(cfg: &RunConfig, paths: &Paths) -> Result<String> {
    let net = load_net(paths)?;
    let files = scenes_in(need(&paths.dataset, "dataset")?, split_key(cfg)?)?;
    let out = out_dir(paths)?;
    let refined_dir = out.join("refined");
    fs::create_dir_all(&refined_dir).map_err(|e| Error::io(&refined_dir, e))?;
    let class = cfg.raw("eval.class").to_string();
    let results = refine_scenes(cfg, &net, &files)?;
    let (mut df, mut iou0, mut iou1, mut n) = (0.0, 0.0, 0.0, 0usize);
    for r in &results {
        let labels: Vec<_> = r.refined.iter().map(|(d, _)| kittiio::from_box3d(&d.bbox, &class, Some(d.score))).collect();
        write_file(&refined_dir.join(result_file_name(r.scene.id)), &kittiio::write_result_file(&labels)?)?;
        for ((d, tr), (init, gt)) in r.refined.iter().zip(r.scene.initial_dets.iter().zip(&r.scene.gts)) {
            df += tr.final_value() - tr.initial;
            iou0 += iou_3d(&init.bbox, &gt.bbox);
            iou1 += iou_3d(&d.bbox, &gt.bbox);
            n += 1;
        }
    }
    if cfg.get_bool("refine.trace")? {
        let traces: Vec<(u64, usize, &RefineTrace<f64>)> = results
            .iter()
            .flat_map(|r| r.refined.iter().enumerate().map(move |(i, (_, t))| (r.scene.id, i, t)))
            .collect();
        write_file(&out.join("traces.csv"), &trace_csv(&traces, &cfg.header("refine")))?;
    }
    let nf = n.max(1) as f64;
    Ok(format!(
        "scenes={} detections={n} mean_f_increase={:.6} mean_iou3d_initial={:.4} mean_iou3d_refined={:.4}",
        results.len(),
        df / nf,
        iou0 / nf,
        iou1 / nf
    ))
}

type ByScene<T> = BTreeMap<u64, Vec<T>>;

fn scene_id_of(path: &Path) -> Result<u64> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Input(format!("{}: file name is not a numeric scene id", path.display())))
}

fn read_kitti_dir(dir: &Path) -> Result<BTreeMap<u64, Vec<kittiio::KittiLabel>>> {
    let mut out = BTreeMap::new();
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let labels = kittiio::parse_label_file(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        out.insert(scene_id_of(&path)?, labels);
    }
    Ok(out)
}

fn read_dets_dir(dir: &Path, class: &str) -> Result<ByScene<Det>> {
    read_kitti_dir(dir)?
        .into_iter()
        .map(|(id, l)| Ok((id, kittiio::labels_to_dets(&l, class)?)))
        .collect()
}

fn check_same_ids<A, B>(gts: &ByScene<A>, dets: &ByScene<B>, what: &str) -> Result<()> {
    let missing: Vec<String> = gts.keys().filter(|k| !dets.contains_key(k)).map(|k| k.to_string()).collect();
    let extra: Vec<String> = dets.keys().filter(|k| !gts.contains_key(k)).map(|k| k.to_string()).collect();
    if missing.is_empty() && extra.is_empty() {
        return Ok(());
    }
    Err(Error::Input(format!(
        "{what} scene set mismatch: missing [{}], unknown [{}]",
        missing.join(" "),
        extra.join(" ")
    )))
}

fn eval_all(cfg: &RunConfig, dets: &ByScene<Det>, gts: &ByScene<GroundTruth>) -> Result<Vec<ApResult>> {
    evalkit::evaluate(dets, gts, &cfg.eval_modes()?, &cfg.thresholds()?, &cfg.difficulties()?)
}

pub fn cmd_eval(cfg: &RunConfig, paths: &Paths) -> Result<String> {
    let out = out_dir(paths)?;
    let class = cfg.raw("eval.class").to_string();
    let mut gts: ByScene<GroundTruth> = BTreeMap::new();
    let mut initial: ByScene<Det> = BTreeMap::new();
    let mut refined: Option<ByScene<Det>> = None;

    if let Some(labels) = &paths.labels {
        for (id, l) in read_kitti_dir(labels)? {
            gts.insert(id, kittiio::labels_to_gts(&l, &class)?);
        }
        let base = need(&paths.baseline, "baseline")?;
        initial = read_dets_dir(base, &class)?;
    } else {
        let files = scenes_in(need(&paths.dataset, "dataset")?, split_key(cfg)?)?;
        if paths.dets.is_none() && paths.checkpoint.is_some() {
            let net = load_net(paths)?;
            let mut r = BTreeMap::new();
            for s in refine_scenes(cfg, &net, &files)? {
                gts.insert(s.scene.id, s.scene.gts.clone());
                initial.insert(s.scene.id, s.scene.initial_dets.clone());
                r.insert(s.scene.id, s.refined.into_iter().map(|(d, _)| d).collect());
            }
            refined = Some(r);
        } else {
            for f in &files {
                let s = f.load()?;
                gts.insert(s.id, s.gts);
                initial.insert(s.id, s.initial_dets);
            }
        }
    }
    if let Some(d) = &paths.dets {
        refined = Some(read_dets_dir(d, &class)?);
    }
    check_same_ids(&gts, &initial, "baseline")?;
    let ap0 = eval_all(cfg, &initial, &gts)?;
    let header = cfg.header("eval");
    write_file(&out.join("pr_initial.csv"), &evalkit::results_csv(&ap0, &header))?;

    let mut lines = Vec::new();
    let mut table = String::from("# ");
    table.push_str(&header);
    table.push_str("\nmode,threshold,difficulty,ap_initial,ap_refined,relative_gain\n");
    match &refined {
        Some(r) => {
            check_same_ids(&gts, r, "refined")?;
            let ap1 = eval_all(cfg, r, &gts)?;
            write_file(&out.join("pr_refined.csv"), &evalkit::results_csv(&ap1, &header))?;
            for (a, b) in ap0.iter().zip(&ap1) {
                let gain = evalkit::relative_gain(a.ap, b.ap);
                table.push_str(&format!("{},{},{},{:?},{:?},{:?}\n", a.mode, a.threshold, a.difficulty, a.ap, b.ap, gain));
                lines.push(format!("{} @{} {}: {:.4} -> {:.4} ({:+.2}%)", a.mode, a.threshold, a.difficulty, a.ap, b.ap, 100.0 * gain));
            }
        }
        None => {
            for a in &ap0 {
                table.push_str(&format!("{},{},{},{:?},,\n", a.mode, a.threshold, a.difficulty, a.ap));
                lines.push(format!("{} @{} {}: {:.4}", a.mode, a.threshold, a.difficulty, a.ap));
            }
        }
    }
    write_file(&out.join("eval.csv"), &table)?;
    Ok(lines.join("\n"))
}

/// One row of the iteration sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub t: usize,
    /// 3D AP per configured threshold.
    pub aps: Vec<f64>,
    pub mean_ap: f64,
    /// Wall-clock seconds spent refining (scene loading excluded).
    pub seconds: f64,
    pub scenes: usize,
}

impl SweepRow {
    pub fn throughput(&self) -> f64 {
        if self.seconds > 0.0 {
            self.scenes as f64 / self.seconds
        } else {
            0.0
        }
    }
}

/// Refines `scenes` at every `T` and scores the result with 3D AP.
pub fn sweep_t(net: &Net, scenes: &[Scene], ts: &[usize], base: &ebm3d::RefineConfig, thresholds: &[f64]) -> Result<Vec<SweepRow>> {
    let gts: ByScene<GroundTruth> = scenes.iter().map(|s| (s.id, s.gts.clone())).collect();
    let mut rows = Vec::new();
    for &t in ts {
        let rc = ebm3d::RefineConfig { iterations: t, ..*base };
        let start = Instant::now();
        let mut dets = BTreeMap::new();
        for s in scenes {
            dets.insert(s.id, ebm3d::refine::refine_all(net, &s.grid, &s.initial_dets, &rc)?);
        }
        let seconds = start.elapsed().as_secs_f64();
        let aps: Vec<f64> = evalkit::evaluate(&dets, &gts, &[EvalMode::ThreeD], thresholds, &[evalkit::Difficulty::All])?
            .iter()
            .map(|r| r.ap)
            .collect();
        let mean_ap = aps.iter().sum::<f64>() / aps.len().max(1) as f64;
        rows.push(SweepRow { t, aps, mean_ap, seconds, scenes: scenes.len() });
    }
    Ok(rows)
}

pub fn cmd_sweep_t(cfg: &RunConfig, paths: &Paths) -> Result<String> {
    let net = load_net(paths)?;
    let files = scenes_in(need(&paths.dataset, "dataset")?, split_key(cfg)?)?;
    let out = out_dir(paths)?;
    let scenes = files.iter().map(SceneFile::load).collect::<Result<Vec<_>>>()?;
    let thresholds = cfg.thresholds()?;
    let rows = sweep_t(&net, &scenes, &cfg.get_list::<usize>("sweep.ts")?, &cfg.refine()?, &thresholds)?;
    let timing = cfg.timing()?;
    let mut text = format!("# {}\n# mean_ap averages 3D AP over the thresholds listed in the header\nT,mean_ap", cfg.header("sweep-T"));
    for t in &thresholds {
        text.push_str(&format!(",ap@{t}"));
    }
    text.push_str(",seconds,scenes_per_second\n");
    let mut summary = Vec::new();
    for r in &rows {
        let (secs, tput) = if timing { (r.seconds, r.throughput()) } else { (0.0, 0.0) };
        text.push_str(&format!("{},{:?}", r.t, r.mean_ap));
        for a in &r.aps {
            text.push_str(&format!(",{a:?}"));
        }
        text.push_str(&format!(",{secs:.6},{tput:.6}\n"));
        summary.push(format!("T={:>3} mean_ap={:.4} scenes/s={:.2}", r.t, r.mean_ap, r.throughput()));
    }
    write_file(&out.join("sweep_T.csv"), &text)?;
    Ok(summary.join("\n"))
}

pub fn cmd_angle_scan(cfg: &RunConfig, paths: &Paths) -> Result<String> {
    let net = load_net(paths)?;
    let dataset = need(&paths.dataset, "dataset")?;
    let out = out_dir(paths)?;
    let id: u64 = cfg.get("scan.scene")?;
    let idx: usize = cfg.get("scan.detection")?;
    let file = read_dataset(dataset)?
        .into_iter()
        .find(|f| f.entry.id == id)
        .ok_or_else(|| Error::Input(format!("scene {id} not in dataset")))?;
    let scene = file.load()?;
    let b = match cfg.raw("scan.source") {
        "det" => scene.initial_dets.get(idx).map(|d| d.bbox),
        "gt" => scene.gts.get(idx).map(|g| g.bbox),
        s => return Err(Error::Config(format!("scan.source = {s:?}: expected det or gt"))),
    }
    .ok_or_else(|| Error::Input(format!("scene {id} has no {} index {idx}", cfg.raw("scan.source"))))?;
    let scan = angle_scan(&net, &scene.grid, &b, cfg.get("scan.points")?)?;
    let mut text = format!("# {}\ndphi,f\n", cfg.header("angle-scan"));
    for (a, f) in &scan {
        text.push_str(&format!("{a:?},{f:?}\n"));
    }
    write_file(&out.join("angle_scan.csv"), &text)?;
    let peaks = crate::analysis::dominant_peaks(&scan[..scan.len() - 1].iter().map(|p| p.1).collect::<Vec<_>>(), 0.5);
    let at: Vec<String> = peaks.iter().map(|p| format!("{:.3}", scan[p.index].0)).collect();
    Ok(format!("points={} dominant_maxima_at=[{}]", scan.len(), at.join(" ")))
}
