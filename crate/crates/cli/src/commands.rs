//! The four subcommands. Each writes the resolved `config.txt` next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use srn::evaluation::{image_counts, report_from_counts, thresholds};
use srn::image::{Image, ResponseMap};
use srn::model::{forward_image, ParamStore};
use srn::postprocess::nms_with_radius;
use srn::supervision::predict as predict_map;
use srn::synth::pnm::{read_image, read_mask, write_image};
use srn::synth::{make_benchmark, Manifest};
use srn::trainer::{train as run_training, write_checkpoint, CheckpointSink};
use srn::{RunConfig, SrnError};

use crate::{resolve_config, ConfigArg, Failure};

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn prepare_dir(out: &Path, rc: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(out)
        .map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;
    fs::write(out.join("config.txt"), rc.to_text())
        .map_err(|e| runtime(format!("cannot write to {}: {e}", out.display())))
}

pub fn gen(rc: &RunConfig, out: &Path) -> Result<(), Failure> {
    rc.data
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    prepare_dir(out, rc)?;
    let paths = make_benchmark(&rc.data, out).map_err(runtime)?;
    println!("{}", paths.train.display());
    println!("{}", paths.test.display());
    Ok(())
}

pub fn train(rc: &RunConfig, data: &Path, out: &Path) -> Result<(), Failure> {
    rc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let samples = Manifest::read(data)
        .and_then(|m| m.load_samples())
        .map_err(runtime)?;
    prepare_dir(out, rc)?;
    let sink = CheckpointSink {
        dir: Some(out.to_path_buf()),
    };
    let (params, trace) =
        run_training(&samples, &rc.model, &rc.loss, &rc.train, &sink).map_err(runtime)?;
    fs::write(out.join("loss.csv"), trace.to_csv()).map_err(runtime)?;
    let ckpt = write_checkpoint(
        out,
        "final",
        &params,
        &rc.model,
        &rc.loss,
        &rc.train,
        rc.train.max_iters,
    )
    .map_err(runtime)?;
    if let Some(last) = trace.records.last() {
        println!("iter={} loss={:.6}", last.iter, last.total);
    }
    println!("{}", ckpt.display());
    Ok(())
}

/// Model lines of a checkpoint sidecar, as `(dotted key, value)`.
fn sidecar_model_lines(checkpoint: &Path) -> Result<Vec<(String, String)>, Failure> {
    let path = checkpoint.with_extension("txt");
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(runtime(format!("cannot read {}: {e}", path.display()))),
    };
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .filter(|(k, _)| k.starts_with("model."))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

fn image_list(input: &Path) -> Result<Vec<PathBuf>, Failure> {
    if input.extension().is_some_and(|e| e == "txt") {
        let manifest = Manifest::read(input).map_err(runtime)?;
        Ok(manifest.entries.into_iter().map(|(img, _)| img).collect())
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

fn stem(path: &Path) -> Result<String, Failure> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| runtime(format!("{} has no file name", path.display())))
}

fn response_image(map: &ResponseMap) -> Image {
    let mut img = Image::new(1, map.width, map.height, map.data.clone()).expect("matching sizes");
    img.quantize();
    img
}

pub fn predict(
    config: &Option<PathBuf>,
    overrides: &[(String, String)],
    checkpoint: &Path,
    input: &Path,
    out: &Path,
) -> Result<(), Failure> {
    // file config, then the checkpoint's own model section, then flags
    let mut layered = sidecar_model_lines(checkpoint)?;
    layered.extend_from_slice(overrides);
    let rc = resolve_config(
        &ConfigArg {
            config: config.clone(),
        },
        &layered,
    )?;
    rc.model
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let params = ParamStore::load(checkpoint, &rc.model).map_err(runtime)?;
    let images = image_list(input)?;
    prepare_dir(out, &rc)?;
    let results: Vec<(PathBuf, String)> = images
        .par_iter()
        .map(|path| {
            let image = read_image(path).map_err(runtime)?;
            let fwd = forward_image(&image.to_tensor(), &params, &rc.model).map_err(runtime)?;
            let trace = fwd.trace(&params).map_err(runtime)?;
            let soft = ResponseMap::from_tensor(&predict_map(&trace).map_err(runtime)?)
                .map_err(runtime)?;
            let thin = nms_with_radius(&soft, rc.eval.nms_radius).map_err(runtime)?;
            let name = stem(path)?;
            write_image(&out.join(format!("{name}.pgm")), &response_image(&soft))
                .map_err(runtime)?;
            write_image(&out.join(format!("{name}_nms.pgm")), &response_image(&thin))
                .map_err(runtime)?;
            Ok((path.clone(), name))
        })
        .collect::<Result<_, Failure>>()?;
    for (path, name) in results {
        println!("{} -> {name}.pgm", path.display());
    }
    Ok(())
}

fn load_response(path: &Path) -> Result<ResponseMap, SrnError> {
    let img = read_image(path)?;
    if img.channels != 1 {
        return Err(SrnError::Input(format!(
            "{} is not a single-channel response map",
            path.display()
        )));
    }
    ResponseMap::new(img.width, img.height, img.data)
}

pub fn eval(
    rc: &RunConfig,
    predictions: &Path,
    manifest: &Path,
    out: &Path,
    svg: bool,
) -> Result<(), Failure> {
    rc.eval
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let manifest = Manifest::read(manifest).map_err(runtime)?;
    if manifest.is_empty() {
        return Err(runtime("manifest lists no samples"));
    }
    let mut pairs = Vec::with_capacity(manifest.len());
    for (img, mask) in &manifest.entries {
        let pred = predictions.join(format!("{}.pgm", stem(img)?));
        if !pred.is_file() {
            return Err(runtime(format!(
                "missing prediction {} for {}",
                pred.display(),
                img.display()
            )));
        }
        pairs.push((pred, mask.clone()));
    }
    let ts = thresholds(rc.eval.thresholds);
    let per_image = pairs
        .par_iter()
        .map(|(pred, mask)| {
            let response = load_response(pred)?;
            let gt = read_mask(mask)?;
            if (response.width, response.height) != (gt.width, gt.height) {
                return Err(SrnError::Shape(format!(
                    "{} does not match {}",
                    pred.display(),
                    mask.display()
                )));
            }
            let thin = nms_with_radius(&response, rc.eval.nms_radius)?;
            Ok((
                image_counts(&thin, &gt, &ts, rc.eval.tolerance(gt.width, gt.height))?,
                gt.width,
                gt.height,
            ))
        })
        .collect::<Result<Vec<_>, SrnError>>()
        .map_err(runtime)?;
    let (_, w, h) = per_image[0];
    let counts: Vec<_> = per_image.into_iter().map(|(c, _, _)| c).collect();
    let report =
        report_from_counts(&counts, &ts, rc.eval.tolerance(w, h), &rc.eval).map_err(runtime)?;

    prepare_dir(out, rc)?;
    let write = |name: &str, text: String| fs::write(out.join(name), text).map_err(runtime);
    write("pr.csv", report.to_csv())?;
    write("summary.txt", format!("{}\n", report.summary()))?;
    write("settings.txt", report.settings_text())?;
    if svg {
        write("pr.svg", report.to_svg())?;
    }
    println!("{}", report.summary());
    Ok(())
}
