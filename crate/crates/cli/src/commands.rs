//! One function per CLI verb. All files are written through a temporary file
//! in the destination directory and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use strokeseq::ensembles::cross_validate_ensembles;
use strokeseq::eval::{self, comparison_table, format_mean_std, FoldResult, ResultsFile, METRIC_NAMES};
use strokeseq::io;
use strokeseq::kinematics::extract_task_features;
use strokeseq::model::validate_recording;
use strokeseq::neural::{checkpoint, CellKind};
use strokeseq::pipeline::{cross_validate_recurrent, fold_windows, predict_all, subject_decisions, window_confusion, Dataset};
use strokeseq::synth::generate_cohort;
use strokeseq::tss::tss_grid_scan;

use crate::config::{ConfigError, ExperimentConfig};

/// Where every artifact lives under the output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }
    pub fn subjects(&self) -> PathBuf {
        self.root.join("data/subjects.csv")
    }
    pub fn recordings(&self) -> PathBuf {
        self.root.join("data/recordings.csv")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features.csv")
    }
    pub fn surface(&self) -> PathBuf {
        self.root.join("tss_surface.csv")
    }
    pub fn results_dir(&self) -> PathBuf {
        self.root.join("results")
    }
    pub fn result(&self, name: &str) -> PathBuf {
        self.results_dir().join(format!("{name}.json"))
    }
    pub fn run_dir(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }
    pub fn log(&self, name: &str, fold: usize) -> PathBuf {
        self.root.join("logs").join(name).join(format!("fold{fold}.csv"))
    }
    pub fn evaluation(&self, name: &str) -> PathBuf {
        self.root.join("evaluations").join(format!("{name}.json"))
    }
    pub fn comparison(&self) -> PathBuf {
        self.root.join("comparison.csv")
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).with_context(|| format!("cannot open {} (run the earlier pipeline steps first)", path.display()))
}

pub fn load_dataset(layout: &Layout) -> Result<Dataset> {
    let subjects = io::read_subjects(open(&layout.subjects())?).with_context(|| layout.subjects().display().to_string())?;
    let features = io::read_features(open(&layout.features())?).with_context(|| layout.features().display().to_string())?;
    Ok(Dataset::new(subjects, features)?)
}

pub fn generate(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let (subjects, recordings) = generate_cohort(&cfg.generator)?;
    let mut buf = Vec::new();
    io::write_subjects(&mut buf, &subjects)?;
    write_atomic(&layout.subjects(), &buf)?;
    buf.clear();
    io::write_recordings(&mut buf, &recordings)?;
    write_atomic(&layout.recordings(), &buf)?;
    let ad = subjects.iter().filter(|s| s.label.is_ad()).count();
    let strokes: usize = recordings.iter().map(|r| r.strokes.len()).sum();
    let samples: usize = recordings.iter().map(|r| r.samples().count()).sum();
    println!(
        "generated {} subjects ({ad} AD, {} HC), {} recordings, {strokes} strokes, {samples} samples -> {}",
        subjects.len(),
        subjects.len() - ad,
        recordings.len(),
        layout.root.join("data").display()
    );
    Ok(())
}

pub fn extract(layout: &Layout) -> Result<()> {
    let recordings = io::read_recordings(open(&layout.recordings())?).with_context(|| layout.recordings().display().to_string())?;
    let mut problems = Vec::new();
    for r in &recordings {
        for v in validate_recording(r) {
            problems.push(format!("{} task {}: {v}", r.subject_id, r.task_id));
        }
    }
    if !problems.is_empty() {
        let shown = problems.iter().take(5).cloned().collect::<Vec<_>>().join("\n  ");
        return Err(DataError(format!("{} recording violations, first ones:\n  {shown}", problems.len())).into());
    }
    let tables = recordings
        .iter()
        .map(|r| extract_task_features(r).with_context(|| format!("{} task {}", r.subject_id, r.task_id)))
        .collect::<Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    io::write_features(&mut buf, &tables)?;
    write_atomic(&layout.features(), &buf)?;
    let strokes: usize = tables.iter().map(|t| t.rows.len()).sum();
    println!("extracted {strokes} stroke feature rows from {} recordings -> {}", tables.len(), layout.features().display());
    Ok(())
}

/// Data problems that are not library errors map to exit code 2.
#[derive(Debug)]
pub struct DataError(pub String);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

pub fn tss(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let features = io::read_features(open(&layout.features())?)?;
    let surface = tss_grid_scan(&features, &cfg.grid.ws, &cfg.grid.stride);
    write_atomic(&layout.surface(), surface.to_csv().as_bytes())?;
    println!("{:>6} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}", "ws", "stride", "D_s", "A", "R", "E", "TSS");
    for c in &surface.cells {
        println!("{:>6} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", c.window, c.stride, c.d_s, c.a, c.r, c.e, c.tss);
    }
    let b = surface.best();
    println!("argmax: ws={} stride={} tss={:.4}", b.window, b.stride, b.tss);
    Ok(())
}

/// What `evaluate` needs to rebuild a trained run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub model: String,
    pub ws: usize,
    pub stride: usize,
    pub seed_base: u64,
    pub folds: usize,
    pub val_fraction: f64,
}

pub fn run_name(cell: CellKind, hidden: usize, ws: usize, stride: usize) -> String {
    format!("{cell}-h{hidden}-ws{ws}-s{stride}")
}

pub struct TrainArgs {
    pub model: Option<CellKind>,
    pub hidden: Option<usize>,
    pub ws: Option<usize>,
    pub stride: Option<usize>,
}

pub fn train(cfg: &ExperimentConfig, layout: &Layout, args: &TrainArgs) -> Result<()> {
    let data = load_dataset(layout)?;
    let (ws, stride) = match (args.ws, args.stride) {
        (Some(w), Some(s)) => (w, s),
        (w, s) => {
            let surface = tss_grid_scan(&data.features, &cfg.grid.ws, &cfg.grid.stride);
            let b = surface.best();
            let chosen = (w.unwrap_or(b.window), s.unwrap_or(b.stride));
            println!("window from TSS argmax: ws={} stride={}", chosen.0, chosen.1);
            chosen
        }
    };
    let cells = args.model.map(|c| vec![c]).unwrap_or_else(|| cfg.model.cells.clone());
    let hiddens = args.hidden.map(|h| vec![h]).unwrap_or_else(|| cfg.model.hidden.clone());
    for &cell in &cells {
        for &hidden in &hiddens {
            let enc = cfg.model.encoder(cell, hidden, data.feature_dim());
            let name = run_name(cell, hidden, ws, stride);
            let mut run = cross_validate_recurrent(&data, &enc, &cfg.train, ws, stride, cfg.seed_base, cfg.jobs)?;
            run.results.model = format!("{cell}-h{hidden}");
            for (k, fold) in run.folds.iter().enumerate() {
                write_atomic(&layout.run_dir(&name).join(format!("fold{k}.ckpt")), &checkpoint::to_bytes(&fold.params))?;
                write_atomic(&layout.log(&name, k), fold.log.as_bytes())?;
            }
            let manifest = RunManifest {
                name: name.clone(),
                model: run.results.model.clone(),
                ws,
                stride,
                seed_base: cfg.seed_base,
                folds: cfg.train.folds,
                val_fraction: cfg.train.val_fraction,
            };
            write_atomic(&layout.run_dir(&name).join("run.json"), (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes())?;
            write_atomic(&layout.result(&name), run.results.to_json().as_bytes())?;
            print_report(&run.results);
            println!("-> {}", layout.result(&name).display());
        }
    }
    Ok(())
}

pub fn evaluate(layout: &Layout, run: &str) -> Result<()> {
    let dir = layout.run_dir(run);
    let manifest: RunManifest = serde_json::from_reader(open(&dir.join("run.json"))?)
        .with_context(|| format!("reading run manifest in {}", dir.display()))?;
    let data = load_dataset(layout)?;
    let assignments = eval::stratified_subject_folds(&data.subjects, manifest.folds, manifest.seed_base, manifest.val_fraction)?;
    let mut per_fold = Vec::new();
    for fold in &assignments {
        let params = checkpoint::load(&dir.join(format!("fold{}.ckpt", fold.fold)))
            .with_context(|| format!("fold {} checkpoint", fold.fold))?;
        let windows = fold_windows(&data, fold, manifest.ws, manifest.stride)?;
        let probs = predict_all(&windows.test, &params)?;
        let decisions = subject_decisions(&windows.test, &probs);
        let (ys, ds): (Vec<_>, Vec<_>) = decisions.iter().map(|(_, y, d)| (*y, *d)).unzip();
        per_fold.push(FoldResult {
            fold: fold.fold,
            seed: eval::fold_seed(manifest.seed_base, fold.fold),
            n_test_subjects: decisions.len(),
            metrics: eval::confusion_metrics(&ds, &ys),
            window: Some(eval::metrics_from_confusion(&window_confusion(&windows.test, &probs))),
        });
    }
    let results = ResultsFile::new(&manifest.model, "recurrent", Some(manifest.ws), Some(manifest.stride), manifest.seed_base, per_fold)?;
    write_atomic(&layout.evaluation(run), results.to_json().as_bytes())?;
    print_report(&results);
    if let Ok(text) = fs::read_to_string(layout.result(run)) {
        let trained = ResultsFile::from_json(&text)?;
        if trained.per_fold == results.per_fold {
            println!("checkpoints reproduce the training results");
        } else {
            log::warn!("evaluation differs from {}", layout.result(run).display());
        }
    }
    Ok(())
}

pub fn ensemble(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    let data = load_dataset(layout)?;
    let folds = cfg.train.folds_for(&data, cfg.seed_base)?;
    let results = cross_validate_ensembles(&data, &cfg.ensemble, &folds, cfg.seed_base, cfg.jobs)?;
    for r in &results {
        write_atomic(&layout.result(&r.model), r.to_json().as_bytes())?;
        print_report(r);
    }
    println!("-> {}", layout.results_dir().display());
    Ok(())
}

pub fn compare(layout: &Layout, files: &[PathBuf]) -> Result<()> {
    let files = if files.is_empty() {
        let mut v: Vec<PathBuf> = fs::read_dir(layout.results_dir())
            .with_context(|| format!("listing {}", layout.results_dir().display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        v.sort();
        v
    } else {
        files.to_vec()
    };
    if files.len() < 2 {
        return Err(ConfigError(format!("compare needs at least 2 results files, found {}", files.len())).into());
    }
    let results = files
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
            ResultsFile::from_json(&text).with_context(|| f.display().to_string())
        })
        .collect::<Result<Vec<_>>>()?;
    let table = comparison_table(&results, 2);
    write_atomic(&layout.comparison(), table.as_bytes())?;
    print!("{table}");
    let best = |family: &str| {
        results
            .iter()
            .filter(|r| r.family == family)
            .filter_map(|r| r.mean.accuracy.map(|a| (a, r)))
            .max_by(|a, b| a.0.total_cmp(&b.0))
    };
    if let (Some((ea, e)), Some((ra, r))) = (best("ensemble"), best("recurrent")) {
        println!(
            "ensemble advantage: {} minus {} = {:+.2} accuracy points",
            e.display_name(),
            r.display_name(),
            ea - ra
        );
    }
    Ok(())
}

pub fn print_report(r: &ResultsFile) {
    let grid = match (r.ws, r.stride) {
        (Some(w), Some(s)) => format!(" ws={w} stride={s}"),
        _ => String::new(),
    };
    println!("{} ({}){grid} seed_base={}", r.model, r.family, r.seed_base);
    println!("  {:>4} {:>6} {:>4} {:>9} {:>11} {:>11} {:>7}", "fold", "seed", "n", "accuracy", "sensitivity", "specificity", "f1");
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into());
    for f in &r.per_fold {
        let m = f.metrics.values();
        println!(
            "  {:>4} {:>6} {:>4} {:>9} {:>11} {:>11} {:>7}",
            f.fold,
            f.seed,
            f.n_test_subjects,
            cell(m[0]),
            cell(m[1]),
            cell(m[2]),
            cell(m[3])
        );
    }
    let summary: Vec<String> = (0..4)
        .map(|k| format!("{} {}", METRIC_NAMES[k], format_mean_std(r.mean.values()[k], r.std.values()[k], 2)))
        .collect();
    println!("  mean (std): {}", summary.join(", "));
}

pub fn report(file: &Path, json: bool) -> Result<()> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let r = ResultsFile::from_json(&text).with_context(|| file.display().to_string())?;
    if json {
        print!("{}", r.to_json());
    } else {
        print_report(&r);
    }
    Ok(())
}
