//! The five pipeline commands. Each returns a JSON summary for standard
//! output; diagnostics go to standard error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dcepk_core::aif::{read_plasma_csv, write_curve_csv};
use dcepk_core::fitting::{fit_volume, status, FitConfig, FitMethod};
use dcepk_core::metrics::{masked_max, psnr, region_stats, ssim, RegionSpec};
use dcepk_core::phantom::{generate_phantom, PhantomConfig};
use dcepk_core::{AcqParams, AuxMaps, DceSeries, PkMap, PlasmaCurve, TkModel};
use dcepk_nn::autodiff::Checkpoint;
use dcepk_nn::training::{infer_from_checkpoint, scale_pk, train_in_dir, Dataset, Subject, TrainConfig, TrainMode};
use ndarray::{Array2, Array3};
use serde_json::{json, Value};

use crate::error::{from_nn, CliError, Result};
use crate::svg::{evaluation_figure, AifOverlay, MapPanel};
use crate::volume::{mask_to_f64, read_volume, write_volume, Dtype, Sidecar};

pub const SERIES_FILE: &str = "series.dcev";
pub const PK_FILE: &str = "pk.dcev";
pub const T1_FILE: &str = "t1.dcev";
pub const S0_FILE: &str = "s0.dcev";
pub const MASK_FILE: &str = "mask.dcev";
pub const LABELS_FILE: &str = "labels.dcev";
pub const STATUS_FILE: &str = "status.dcev";
pub const AIF_FILE: &str = "aif.csv";
pub const ESTIMATED_AIF_FILE: &str = "aif_estimated.csv";
pub const SIMULATION_FILE: &str = "simulation.json";

pub const PK_UNITS: &str = "ktrans 1/min; vp, ve fraction";

/// Non-finite PSNR is written as this token.
pub const INF_SENTINEL: &str = "inf";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 64×64 extended Tofts phantom, 65 frames.
    Tumor,
    /// 64×64 Patlak phantom, 60 frames.
    LowLeakage,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found"))))
    }
}

fn write_pk(path: &Path, pk: &PkMap, extra: Value) -> Result<()> {
    let sidecar = Sidecar::new(Dtype::F32, PK_UNITS).with_model(pk.model()).with_extra(extra);
    write_volume(path, &pk.to_stack().into_dyn(), &sidecar)
}

fn write_curve(path: &Path, curve: &PlasmaCurve) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_curve_csv(f, curve.time_seconds(), curve.values_mm()).map_err(|e| CliError::io(path, e))
}

pub fn read_curve(path: &Path) -> Result<PlasmaCurve> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_plasma_csv(f).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn read_series(path: &Path) -> Result<DceSeries> {
    let v = read_volume(path)?;
    let acq = v.sidecar.acq.ok_or_else(|| CliError::config(format!("{}: sidecar has no acquisition", path.display())))?;
    Ok(DceSeries::new(v.into_3d(&path.display().to_string())?, acq)?)
}

pub fn read_map(path: &Path) -> Result<Array2<f64>> {
    read_volume(path)?.into_2d(&path.display().to_string())
}

pub fn read_mask(path: &Path) -> Result<Array2<bool>> {
    Ok(read_map(path)?.mapv(|v| v != 0.0))
}

pub fn read_pk(path: &Path) -> Result<PkMap> {
    let v = read_volume(path)?;
    let model = v.sidecar.model.ok_or_else(|| CliError::config(format!("{}: sidecar has no model", path.display())))?;
    Ok(PkMap::from_stack(model, &v.into_3d(&path.display().to_string())?)?)
}

fn check_dims(what: &str, found: (usize, usize), expected: (usize, usize)) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(CliError::config(format!("{what} is {found:?}, expected {expected:?}")))
    }
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    /// Phantom configuration JSON; the preset is used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tumor")]
    pub preset: Preset,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Value> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str::<PhantomConfig>(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        }
        None => match args.preset {
            Preset::Tumor => PhantomConfig::tumor_like(0),
            Preset::LowLeakage => PhantomConfig::low_leakage(0),
        },
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let phantom = generate_phantom(&cfg)?;
    let out = &args.out;
    create_dir(out)?;
    let acq = *phantom.series.acq();
    let model = cfg.model;
    write_volume(
        &out.join(SERIES_FILE),
        &phantom.series.data().clone().into_dyn(),
        &Sidecar::new(Dtype::F64, "a.u.").with_acq(acq).with_model(model),
    )?;
    write_pk(&out.join(PK_FILE), &phantom.pk, Value::Null)?;
    write_volume(&out.join(T1_FILE), &phantom.aux.t1_seconds().clone().into_dyn(), &Sidecar::new(Dtype::F64, "s"))?;
    write_volume(&out.join(S0_FILE), &phantom.aux.s0().clone().into_dyn(), &Sidecar::new(Dtype::F64, "a.u."))?;
    write_volume(&out.join(MASK_FILE), &mask_to_f64(phantom.aux.mask()), &Sidecar::new(Dtype::F32, "boolean"))?;
    write_volume(
        &out.join(LABELS_FILE),
        &phantom.labels.mapv(f64::from).into_dyn(),
        &Sidecar::new(Dtype::F32, "region label"),
    )?;
    write_curve(&out.join(AIF_FILE), &phantom.cp)?;
    let meta = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::config(e.to_string()))?;
    write_text(&out.join(SIMULATION_FILE), &(meta + "\n"))?;
    let (h, w) = phantom.series.dim();
    Ok(json!({
        "command": "simulate",
        "seed": cfg.seed,
        "model": model.as_str(),
        "dims": [acq.n_frames(), h, w],
    }))
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    #[arg(long, default_value = "lls")]
    pub method: FitMethod,
    #[arg(long)]
    pub model: TkModel,
    #[arg(long)]
    pub series: PathBuf,
    /// Plasma curve CSV (`time_seconds,concentration_mM`).
    #[arg(long)]
    pub aif: PathBuf,
    #[arg(long)]
    pub t1: PathBuf,
    #[arg(long)]
    pub s0: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_fit(args: &FitArgs) -> Result<Value> {
    let series = read_series(&args.series)?;
    let cp = read_curve(&args.aif)?;
    let t1 = read_map(&args.t1)?;
    let s0 = read_map(&args.s0)?;
    let mask = read_mask(&args.mask)?;
    let dim = series.dim();
    check_dims("T1 map", t1.dim(), dim)?;
    check_dims("S0 map", s0.dim(), dim)?;
    check_dims("mask", mask.dim(), dim)?;
    if cp.time_seconds() != series.acq().time_grid().as_slice() {
        return Err(CliError::config(format!("{}: AIF is not on the series time grid", args.aif.display())));
    }
    let aux = AuxMaps::new(t1, s0, mask)?;
    let cfg = FitConfig::new(args.method, args.model);
    let fit = fit_volume(&series, &cp, &aux, &cfg)?;

    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    let mut failed = Vec::new();
    for ((y, x), &code) in fit.status.indexed_iter() {
        if aux.mask()[[y, x]] {
            *counts.entry(code).or_default() += 1;
            if status::is_failure(code) {
                failed.push([y, x, code as usize]);
            }
        }
    }
    let extra = json!({
        "fit": {
            "method": args.method,
            "n_masked": fit.n_masked,
            "n_failed": fit.n_failed,
            "status_counts": counts.iter().map(|(c, n)| (c.to_string(), *n)).collect::<BTreeMap<_, _>>(),
            "failed_voxels": failed,
        }
    });
    create_dir(&args.out)?;
    write_pk(&args.out.join(PK_FILE), &fit.map, extra)?;
    write_volume(
        &args.out.join(STATUS_FILE),
        &fit.status.mapv(f64::from).into_dyn(),
        &Sidecar::new(Dtype::F32, "fit status bits"),
    )?;
    if fit.n_masked == 0 || 2 * fit.n_failed > fit.n_masked {
        return Err(CliError::FitFailure { failed: fit.n_failed, masked: fit.n_masked });
    }
    Ok(json!({
        "command": "fit",
        "method": args.method,
        "model": args.model.as_str(),
        "n_masked": fit.n_masked,
        "n_failed": fit.n_failed,
    }))
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Simulation output directories; repeat for several subjects.
    #[arg(long = "data", required = true)]
    pub data: Vec<PathBuf>,
    /// Training configuration JSON; defaults apply to absent fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<TrainMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from `latest.ckpt` in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many completed steps.
    #[arg(long)]
    pub stop_at_step: Option<usize>,
}

pub fn load_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Reads one simulation directory. Every mode draws PK patches and plasma
/// curves from the label files, so they are required.
fn load_subject(dir: &Path, mode: TrainMode) -> Result<(Subject, TkModel, AcqParams, Vec<f64>)> {
    let label_err = |path: PathBuf| {
        let mode = serde_json::to_value(mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        CliError::config(format!("missing label input {} required by mode {mode}", path.display()))
    };
    let series_path = dir.join(SERIES_FILE);
    require(&series_path, "series volume")?;
    let series = read_series(&series_path)?;
    let t1 = read_map(&dir.join(T1_FILE))?;
    let mask = read_mask(&dir.join(MASK_FILE))?;
    let (pk_path, aif_path) = (dir.join(PK_FILE), dir.join(AIF_FILE));
    for p in [&pk_path, &aif_path] {
        if !p.exists() {
            return Err(label_err(p.clone()));
        }
    }
    let pk = read_pk(&pk_path)?;
    let cp = read_curve(&aif_path)?;
    check_dims("PK map", pk.dim(), series.dim())?;
    if cp.len() != series.acq().n_frames() {
        return Err(CliError::config(format!("{}: AIF length differs from the series", aif_path.display())));
    }
    let model = pk.model();
    let mut subject = Subject::from_series(&series, t1, mask.clone()).map_err(|e| from_nn(e, dir))?;
    let mut scaled: Array3<f64> = scale_pk(&pk.to_stack(), model);
    for mut plane in scaled.outer_iter_mut() {
        plane.zip_mut_with(&mask, |v, &m| *v = if m { *v } else { 0.0 });
    }
    subject.pk_scaled = Some(scaled);
    subject.cp_mm = Some(cp.values_mm().to_vec());
    Ok((subject, model, *series.acq(), cp.values_mm().to_vec()))
}

pub fn cmd_train(args: &TrainArgs) -> Result<Value> {
    let cfg = load_train_config(args)?;
    let mut subjects = Vec::new();
    let mut pool = Vec::new();
    let mut setup: Option<(TkModel, AcqParams)> = None;
    for dir in &args.data {
        let (subject, model, acq, cp) = load_subject(dir, cfg.mode)?;
        match setup {
            Some(s) if s != (model, acq) => {
                return Err(CliError::config(format!("{} differs in model or protocol", dir.display())))
            }
            _ => setup = Some((model, acq)),
        }
        subjects.push(subject);
        pool.push(cp);
    }
    let (model, acq) = setup.ok_or_else(|| CliError::config("no training data"))?;
    let dataset = Dataset::new(model, acq, subjects, pool).map_err(|e| from_nn(e, &args.out))?;
    create_dir(&args.out)?;
    eprintln!("training {} subjects, {} steps", dataset.subjects.len(), cfg.total_steps());
    let outcome =
        train_in_dir(cfg.clone(), &dataset, &args.out, args.resume, args.stop_at_step).map_err(|e| from_nn(e, &args.out))?;
    Ok(json!({
        "command": "train",
        "mode": cfg.mode,
        "step": outcome.trainer.step(),
        "finished": outcome.trainer.is_finished(),
        "last_generator_total": outcome.history.last().map(|r| r.generator_total),
    }))
}

#[derive(Args, Debug, Clone)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_infer(args: &InferArgs) -> Result<Value> {
    let series = read_series(&args.series)?;
    let mask = read_mask(&args.mask)?;
    check_dims("mask", mask.dim(), series.dim())?;
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(|e| from_nn(e, &args.checkpoint))?;
    let inf = infer_from_checkpoint(&ckpt, &series, &mask).map_err(|e| from_nn(e, &args.checkpoint))?;
    create_dir(&args.out)?;
    write_pk(&args.out.join(PK_FILE), &inf.pk, Value::Null)?;
    write_curve(&args.out.join(ESTIMATED_AIF_FILE), &inf.cp)?;
    Ok(json!({
        "command": "infer",
        "model": inf.pk.model().as_str(),
        "n_frames": inf.cp.len(),
    }))
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Integer label raster; region means are reported for labels > 0.
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Metrics CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// SVG figure path.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// True plasma curve for the AIF overlay.
    #[arg(long, requires = "aif_est")]
    pub aif_true: Option<PathBuf>,
    /// Estimated plasma curve for the AIF overlay.
    #[arg(long, requires = "aif_true")]
    pub aif_est: Option<PathBuf>,
}

/// One metrics CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub parameter: String,
    pub metric: String,
    pub value: f64,
    pub region_id: Option<i32>,
}

pub fn format_value(v: f64) -> String {
    if v == f64::INFINITY {
        INF_SENTINEL.to_string()
    } else {
        format!("{v:?}")
    }
}

pub fn evaluate_maps(
    pred: &PkMap,
    reference: &PkMap,
    mask: &Array2<bool>,
    regions: Option<&Array2<i32>>,
) -> Result<Vec<MetricRow>> {
    if pred.model() != reference.model() {
        return Err(CliError::config(format!("prediction is {}, reference is {}", pred.model(), reference.model())));
    }
    check_dims("prediction", pred.dim(), reference.dim())?;
    check_dims("mask", mask.dim(), reference.dim())?;
    let names = reference.model().param_names();
    let mut rows = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let range = masked_max(reference.param(i), Some(mask))?;
        for (metric, value) in [
            ("psnr", psnr(pred.param(i), reference.param(i), range, Some(mask))?),
            ("ssim", ssim(pred.param(i), reference.param(i), range, Some(mask))?),
        ] {
            rows.push(MetricRow { parameter: name.to_string(), metric: metric.into(), value, region_id: None });
        }
    }
    if let Some(labels) = regions {
        check_dims("region raster", labels.dim(), reference.dim())?;
        let spec = RegionSpec::all_positive(labels.clone());
        for (which, map) in [("mean_pred", pred), ("mean_reference", reference)] {
            for r in region_stats(map, &spec)? {
                for name in names {
                    rows.push(MetricRow {
                        parameter: name.to_string(),
                        metric: which.into(),
                        value: r.means[*name],
                        region_id: Some(r.region_id),
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e.into()))?;
    let mut put = |rec: [&str; 4]| w.write_record(rec).map_err(|e| CliError::io(path, e.into()));
    put(["parameter", "metric", "value", "region_id"])?;
    for r in rows {
        let region = r.region_id.map(|id| id.to_string()).unwrap_or_default();
        put([&r.parameter, &r.metric, &format_value(r.value), &region])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Value> {
    let pred = read_pk(&args.pred)?;
    let reference = read_pk(&args.reference)?;
    let mask = read_mask(&args.mask)?;
    let labels = match &args.regions {
        Some(p) => Some(read_map(p)?.mapv(|v| v.round() as i32)),
        None => None,
    };
    let rows = evaluate_maps(&pred, &reference, &mask, labels.as_ref())?;
    write_metrics_csv(&args.out, &rows)?;

    if let Some(plot) = &args.plot {
        let names = reference.model().param_names();
        let panels: Vec<MapPanel<'_>> = (0..names.len())
            .map(|i| MapPanel { name: names[i], pred: pred.param(i), reference: reference.param(i), mask: Some(&mask) })
            .collect();
        let curves = match (&args.aif_true, &args.aif_est) {
            (Some(t), Some(e)) => Some((read_curve(t)?, read_curve(e)?)),
            _ => None,
        };
        if let Some((t, e)) = &curves {
            if t.time_seconds() != e.time_seconds() {
                return Err(CliError::config("AIF curves are on different time grids"));
            }
        }
        let overlay = curves.as_ref().map(|(t, e)| AifOverlay {
            time_seconds: t.time_seconds(),
            truth_mm: t.values_mm(),
            estimate_mm: e.values_mm(),
        });
        write_text(plot, &evaluation_figure(&panels, overlay.as_ref()))?;
    }

    let summary: BTreeMap<String, String> = rows
        .iter()
        .filter(|r| r.region_id.is_none())
        .map(|r| (format!("{}_{}", r.parameter, r.metric), format_value(r.value)))
        .collect();
    Ok(json!({ "command": "evaluate", "rows": rows.len(), "metrics": summary }))
}
