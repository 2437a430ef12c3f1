use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hclnet::data::{generate_dataset, load_split, save_split, write_pgm, write_ppm};
use hclnet::metrics::{evaluate, extract_bbox, write_records, BBox};
use hclnet::model::{init_model, load_checkpoint, save_checkpoint, train_with, GuidanceMode, HclLocalizer, ModelParams};
use hclnet::{FusionStrategy, MetricsReport, Sample, Tensor};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const TRAIN_LOG_HEADER: &str = "epoch,loss,acc_a,acc_b";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Files a run writes under its output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.data().join("train")
    }

    pub fn test_dir(&self) -> PathBuf {
        self.data().join("test")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join(CHECKPOINT_FILE)
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join(TRAIN_LOG_FILE)
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join(format!("{command}.manifest"))
    }

    pub fn records(&self, label: &str) -> PathBuf {
        self.root.join("eval").join(format!("{label}.csv"))
    }

    pub fn visualization(&self, sample: &str) -> PathBuf {
        self.root.join("visualize").join(sample)
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::Data(format!("writing output: {e}"))
}

fn write_manifest(config: &RunConfig, command: &str) -> CliResult<()> {
    let layout = Layout::new(&config.out);
    create_dir(&layout.root)?;
    let path = layout.manifest(command);
    fs::write(&path, config.to_file_string()).map_err(|e| io_err(&path, e))
}

fn load_dir(dir: &Path) -> CliResult<Vec<Sample>> {
    if !dir.is_dir() {
        return Err(CliError::Data(format!(
            "dataset directory {} does not exist; run gen-data first",
            dir.display()
        )));
    }
    Ok(load_split(dir)?)
}

fn check_image_size(config: &RunConfig, samples: &[Sample]) -> CliResult<()> {
    let want = [3, config.data.height, config.data.width];
    match samples.iter().find(|s| s.image.shape() != want) {
        Some(s) => Err(CliError::Data(format!(
            "sample {} has shape {:?}, config expects {:?}",
            s.id,
            s.image.shape(),
            want
        ))),
        None => Ok(()),
    }
}

/// Writes both splits and the manifest. Returns the data directory.
pub fn gen_data(config: &RunConfig, out: &mut dyn Write) -> CliResult<PathBuf> {
    config.validate()?;
    let layout = Layout::new(&config.out);
    let (train, test) = generate_dataset(&config.dataset())?;
    for (dir, samples) in [(layout.train_dir(), &train), (layout.test_dir(), &test)] {
        create_dir(&dir)?;
        save_split(samples, &dir)?;
    }
    write_manifest(config, "gen-data")?;
    writeln!(out, "train_samples={}", train.len()).map_err(out_err)?;
    writeln!(out, "test_samples={}", test.len()).map_err(out_err)?;
    writeln!(out, "data_dir={}", layout.data().display()).map_err(out_err)?;
    Ok(layout.data())
}

/// Trains on the generated train split; writes the checkpoint, the epoch log
/// and the manifest.
pub fn train(config: &RunConfig, out: &mut dyn Write) -> CliResult<ModelParams> {
    config.validate()?;
    let layout = Layout::new(&config.out);
    let samples = load_dir(&layout.train_dir())?;
    check_image_size(config, &samples)?;
    let model_config = config.model();
    let train_config = config.train_config()?;
    let mut params = init_model(&model_config)?;

    let mut log = format!("{TRAIN_LOG_HEADER}\n");
    let mut failure = None;
    let result = train_with(&mut params, &model_config, &samples, &train_config, |s| {
        let line = format!("{},{},{},{}", s.epoch, s.loss, s.accuracy_a, s.accuracy_b);
        log.push_str(&line);
        log.push('\n');
        if let Err(e) = writeln!(
            out,
            "epoch={} loss={:.6} acc_a={:.4} acc_b={:.4}",
            s.epoch, s.loss, s.accuracy_a, s.accuracy_b
        ) {
            failure.get_or_insert(e);
        }
    });
    let path = layout.train_log();
    fs::write(&path, &log).map_err(|e| io_err(&path, e))?;
    result?;
    if let Some(e) = failure {
        return Err(out_err(e));
    }
    save_checkpoint(&params, &layout.checkpoint())?;
    write_manifest(config, "train")?;
    writeln!(out, "checkpoint={}", layout.checkpoint().display()).map_err(out_err)?;
    Ok(params)
}

/// One evaluated combination of guidance mode, fusion strategy and branch
/// selection.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRun {
    pub label: String,
    pub cam_mode: String,
    pub strategy: FusionStrategy,
    pub single_branch: bool,
    pub report: MetricsReport,
}

fn load_model(config: &RunConfig, checkpoint: &Path) -> CliResult<ModelParams> {
    if !checkpoint.is_file() {
        return Err(CliError::Data(format!(
            "checkpoint {} does not exist; run train first",
            checkpoint.display()
        )));
    }
    let params = load_checkpoint(checkpoint)?;
    params.check_against(&config.model())?;
    Ok(params)
}

fn localizer(config: &RunConfig, params: &ModelParams, guidance: GuidanceMode, strategy: FusionStrategy) -> HclLocalizer {
    HclLocalizer {
        params: params.clone(),
        config: config.model(),
        fusion: hclnet::FusionConfig {
            strategy,
            block_radius: config.eval.block_radius,
        },
        guidance,
        single_branch: config.eval.single_branch,
    }
}

fn run_label(cam_mode: &str, strategy: FusionStrategy, single_branch: bool) -> String {
    if single_branch {
        format!("{cam_mode}-branch_a")
    } else {
        format!("{cam_mode}-{strategy}")
    }
}

/// Evaluates the checkpoint on the test split, either with the configured
/// combination or over the full {ccam, threshold} × strategy grid. Prints
/// each report and writes its per-sample records.
pub fn eval(config: &RunConfig, checkpoint: &Path, grid: bool, out: &mut dyn Write) -> CliResult<Vec<EvalRun>> {
    config.validate()?;
    let layout = Layout::new(&config.out);
    let params = load_model(config, checkpoint)?;
    let samples = load_dir(&layout.test_dir())?;
    check_image_size(config, &samples)?;

    let combos: Vec<(String, FusionStrategy)> = if grid {
        ["ccam", "threshold"]
            .iter()
            .flat_map(|m| FusionStrategy::ALL.iter().map(move |&s| (m.to_string(), s)))
            .collect()
    } else {
        vec![(config.train.cam_mode.clone(), config.eval.strategy)]
    };
    let single_branch = config.eval.single_branch && !grid;

    let mut runs = Vec::with_capacity(combos.len());
    for (cam_mode, strategy) in combos {
        let guidance = GuidanceMode::parse(&cam_mode, config.train.erase_threshold)?;
        let mut loc = localizer(config, &params, guidance, strategy);
        loc.single_branch = single_branch;
        let evaluation = evaluate(&loc, &samples, config.eval.bbox_tau)?;
        let label = run_label(&cam_mode, strategy, single_branch);
        let path = layout.records(&label);
        create_dir(path.parent().expect("records live in a directory"))?;
        write_records(&evaluation.records, &path)?;
        writeln!(out, "run={label}").map_err(out_err)?;
        writeln!(out, "{}", evaluation.report).map_err(out_err)?;
        runs.push(EvalRun {
            label,
            cam_mode,
            strategy,
            single_branch,
            report: evaluation.report,
        });
    }
    write_manifest(config, "eval")?;
    Ok(runs)
}

pub const VISUALIZATION_FILES: [&str; 5] = ["cam_a.pgm", "ccam.pgm", "cam_b.pgm", "fused.pgm", "overlay.ppm"];

/// Paints the outline of `b` in `color` onto a `[3, H, W]` image.
pub fn draw_box(image: &mut [f32], height: usize, width: usize, b: &BBox, color: [f32; 3]) {
    let plane = height * width;
    let (x0, y0) = (b.x_min as usize, b.y_min as usize);
    let (x1, y1) = ((b.x_max as usize).min(width), (b.y_max as usize).min(height));
    if x0 >= x1 || y0 >= y1 {
        return;
    }
    let mut paint = |x: usize, y: usize| {
        for (ch, &c) in color.iter().enumerate() {
            image[ch * plane + y * width + x] = c;
        }
    };
    for x in x0..x1 {
        paint(x, y0);
        paint(x, y1 - 1);
    }
    for y in y0..y1 {
        paint(x0, y);
        paint(x1 - 1, y);
    }
}

/// Dumps the maps behind one test sample's prediction plus an overlay with
/// the predicted box in blue and the ground-truth box in red.
pub fn visualize(config: &RunConfig, checkpoint: &Path, sample_id: &str, out: &mut dyn Write) -> CliResult<PathBuf> {
    config.validate()?;
    let layout = Layout::new(&config.out);
    let params = load_model(config, checkpoint)?;
    let samples = load_dir(&layout.test_dir())?;
    let sample = samples
        .iter()
        .find(|s| s.id == sample_id)
        .ok_or_else(|| CliError::Data(format!("no test sample named `{sample_id}`")))?;
    check_image_size(config, std::slice::from_ref(sample))?;

    let loc = localizer(config, &params, config.guidance()?, config.eval.strategy);
    let explanation = loc.explain(&sample.image)?;
    let predicted = extract_bbox(&explanation.fused, config.eval.bbox_tau)?;

    let dir = layout.visualization(sample_id);
    create_dir(&dir)?;
    let maps = [
        &explanation.cam_a,
        &explanation.guidance,
        &explanation.cam_b,
        &explanation.fused,
    ];
    for (name, map) in VISUALIZATION_FILES.iter().zip(maps) {
        write_pgm(map, &dir.join(name))?;
    }
    let (h, w) = (config.data.height, config.data.width);
    let mut overlay = sample.image.data().to_vec();
    draw_box(&mut overlay, h, w, &sample.gt_box, [1.0, 0.0, 0.0]);
    draw_box(&mut overlay, h, w, &predicted, [0.0, 0.0, 1.0]);
    let overlay = Tensor::new(vec![3, h, w], overlay).map_err(CliError::from)?;
    write_ppm(&overlay, &dir.join(VISUALIZATION_FILES[4]))?;
    write_manifest(config, "visualize")?;

    writeln!(out, "sample={sample_id}").map_err(out_err)?;
    writeln!(out, "label={}", sample.label).map_err(out_err)?;
    writeln!(out, "predicted={}", explanation.class).map_err(out_err)?;
    writeln!(out, "predicted_box={predicted}").map_err(out_err)?;
    writeln!(out, "gt_box={}", sample.gt_box).map_err(out_err)?;
    writeln!(out, "dir={}", dir.display()).map_err(out_err)?;
    Ok(dir)
}
