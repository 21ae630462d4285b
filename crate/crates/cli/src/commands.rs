//! The five subcommands. Each one reads its inputs, runs the corresponding
//! library pipeline, writes every artifact under the output directory through
//! the atomic writers, and finishes with a `run.toml` naming what it produced.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crossview_core::error::{Error, Result};
use crossview_core::eval::MetricReport;
use crossview_core::geometry::CameraView;
use crossview_core::grid::{BinaryMask, ProbMap};
use crossview_core::io;
use crossview_core::losses::{binarize, LossWeights};
use crossview_core::model::{forward, TrainConfig, Trainer};
use crossview_core::rectification::reparam_coeffs;
use crossview_core::synth::{make_dataset, make_dataset_with_labels, Dataset, Rig, Scene};
use crossview_core::transfer::{
    belief_transfer_ray, belief_transfer_rectified, lower_bound, upper_bound, BoundPair,
    DepthSampling, VoxelGrid,
};

use crate::dataset;
use crate::{
    BoundsArgs, EvalArgs, EvalViews, GenSceneArgs, Regime, RigArg, TrainArgs, TransferArgs,
};

/// A verification or comparison that ran to completion and failed its
/// numeric tolerance; separated from [`Error`] so `main` can exit 3 without
/// inventing a library error variant for it.
pub enum CmdError {
    Core(Error),
    Numeric(String),
}

impl From<Error> for CmdError {
    fn from(err: Error) -> CmdError {
        CmdError::Core(err)
    }
}

pub type CmdResult = std::result::Result<(), CmdError>;

#[derive(Serialize)]
struct RunManifest {
    command: String,
    params: BTreeMap<String, String>,
    outputs: Vec<String>,
}

fn write_run_manifest(
    dir: &Path,
    command: &str,
    params: BTreeMap<String, String>,
    outputs: Vec<String>,
) -> Result<()> {
    let manifest = RunManifest {
        command: command.into(),
        params,
        outputs,
    };
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::Format {
        path: dir.join("run.toml").display().to_string(),
        msg: format!("cannot encode run manifest: {e}"),
    })?;
    io::write_text_atomic(dir.join("run.toml"), &text)
}

fn param(params: &mut BTreeMap<String, String>, key: &str, value: impl ToString) {
    params.insert(key.into(), value.to_string());
}

// ---------------------------------------------------------------------------
// gen-scene
// ---------------------------------------------------------------------------

pub fn gen_scene(args: &GenSceneArgs) -> CmdResult {
    let scene = Scene::default_two_body(args.scene_seed);
    let mut rig = Rig::ring(args.cameras, args.radius, args.heatmap);
    rig.kind = args.rig.into();

    let (dataset, eta) = match &args.labels {
        Some(labels) => {
            let d = make_dataset_with_labels(&scene, &rig, labels, args.noise)?;
            (d, labels.len() as f64 / args.cameras as f64)
        }
        None => (
            make_dataset(&scene, &rig, args.eta, args.noise, args.seed)?,
            args.eta,
        ),
    };

    io::save_scene(args.out.join("scene.toml"), &scene)?;
    io::save_rig(args.out.join("rig.toml"), &rig)?;
    dataset::save_dataset(&args.out, &dataset, args.seed, eta, args.noise)?;

    let labeled = dataset.labeled_indices();
    println!(
        "wrote {} views to {} ({} labeled: {:?})",
        dataset.views.len(),
        args.out.display(),
        labeled.len(),
        labeled
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// transfer
// ---------------------------------------------------------------------------

fn check_view_index(i: usize, count: usize) -> Result<()> {
    if i >= count {
        return Err(Error::BadConfig(format!(
            "view index {i} out of range, dataset has {count} views"
        )));
    }
    Ok(())
}

/// Builds the rectified pairing for `sources` against `target`, and when that
/// fails for geometric reasons, probes the sources one by one so the error
/// message can name the offending pair.
fn pairing_naming_pairs<'a>(
    target_cam: &CameraView,
    source_cams: &[&'a CameraView],
    target_idx: usize,
    source_idx: &[usize],
) -> Result<crossview_core::rectification::RectifiedPairing> {
    match reparam_coeffs(target_cam, source_cams) {
        Ok(pairing) => Ok(pairing),
        Err(err @ Error::DegenerateRectification) => {
            for (cam, &idx) in source_cams.iter().zip(source_idx) {
                if reparam_coeffs(target_cam, &[cam]).is_err() {
                    eprintln!(
                        "rectification degenerate between target view {target_idx} \
                         and source view {idx}"
                    );
                }
            }
            Err(err)
        }
        Err(err) => Err(err),
    }
}

fn blurred_truth(dataset: &Dataset, view: usize, passes: usize) -> ProbMap {
    ProbMap::from(&dataset.eval_truth[view]).box_blur(passes)
}

pub fn transfer(args: &TransferArgs) -> CmdResult {
    let data = dataset::load_dataset(&args.data)?;
    let n = data.views.len();
    check_view_index(args.target, n)?;
    let sources: Vec<usize> = match &args.sources {
        Some(list) => list.clone(),
        None => (0..n).filter(|&i| i != args.target).collect(),
    };
    if sources.is_empty() {
        return Err(Error::NoSources.into());
    }
    for &s in &sources {
        check_view_index(s, n)?;
        if s == args.target {
            return Err(Error::BadConfig(format!(
                "view {s} cannot be both source and target"
            ))
            .into());
        }
    }

    let beliefs: Vec<ProbMap> = sources
        .iter()
        .map(|&s| blurred_truth(&data, s, args.blur))
        .collect();
    let source_cams: Vec<&CameraView> = sources.iter().map(|&s| &data.views[s].camera).collect();
    let pairs: Vec<(&ProbMap, &CameraView)> = beliefs
        .iter()
        .zip(&source_cams)
        .map(|(b, &c)| (b, c))
        .collect();
    let target_cam = &data.views[args.target].camera;

    let pairing = pairing_naming_pairs(target_cam, &source_cams, args.target, &sources)?;
    let (map, _) = belief_transfer_rectified(&pairs, target_cam, &pairing)?;

    let pm_name = format!("transfer_v{:02}.pm", args.target);
    let pgm_name = format!("transfer_v{:02}.pgm", args.target);
    io::save_probmap(args.out.join(&pm_name), &map)?;
    io::save_probmap_pgm(args.out.join(&pgm_name), &map)?;
    let mut outputs = vec![pm_name, pgm_name];

    let mut params = BTreeMap::new();
    param(&mut params, "data", args.data.display());
    param(&mut params, "target", args.target);
    param(&mut params, "sources", format!("{sources:?}"));
    param(&mut params, "blur", args.blur);

    if args.verify {
        // Compare the row-scan result against the direct ray sweep at random
        // pixels; the two compute the same quantity along different paths, so
        // any disagreement beyond resampling tolerance is a bug.
        let distance = (target_cam.center() - data.bound_center).norm();
        let sweep = DepthSampling::around(distance, data.bound_radius, args.verify_depths)?;
        let out_size = target_cam.crop().out_size;
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let mut linf = 0.0f64;
        for _ in 0..args.samples {
            let x = rng.gen_range(0..out_size);
            let y = rng.gen_range(0..out_size);
            let oracle = belief_transfer_ray(
                &pairs,
                target_cam,
                &Vector2::new(x as f64, y as f64),
                &sweep,
            )?;
            linf = linf.max((map.get(x, y) - oracle).abs());
        }
        io::write_csv(
            args.out.join("verify.csv"),
            "samples,linf,tolerance",
            &[vec![
                args.samples.to_string(),
                format!("{linf:.6}"),
                format!("{:.6}", args.tolerance),
            ]],
        )?;
        outputs.push("verify.csv".into());
        println!(
            "verify: L-inf {linf:.6} over {} samples (tolerance {:.3})",
            args.samples, args.tolerance
        );
        param(&mut params, "samples", args.samples);
        param(&mut params, "verify_depths", args.verify_depths);
        if linf > args.tolerance {
            write_run_manifest(&args.out, "transfer", params, outputs)?;
            return Err(CmdError::Numeric(format!(
                "row-scan transfer disagrees with the ray sweep: \
                 L-inf {linf:.6} > {:.3}",
                args.tolerance
            )));
        }
    }

    println!(
        "transferred {} source views into view {} -> {}",
        sources.len(),
        args.target,
        args.out.join(outputs[0].as_str()).display()
    );
    write_run_manifest(&args.out, "transfer", params, outputs)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// bounds
// ---------------------------------------------------------------------------

pub fn bounds(args: &BoundsArgs) -> CmdResult {
    let data = dataset::load_dataset(&args.data)?;
    let n = data.views.len();
    let target = args.target.unwrap_or(n - 1);
    check_view_index(target, n)?;
    let pool: Vec<usize> = (0..n).filter(|&i| i != target).collect();
    for &count in &args.counts {
        if count < 2 {
            return Err(Error::TooFewCameras(count).into());
        }
        if count > pool.len() {
            return Err(Error::BadConfig(format!(
                "count {count} exceeds the {} views available as sources",
                pool.len()
            ))
            .into());
        }
    }

    let target_cam = &data.views[target].camera;
    let grid = VoxelGrid::around(data.bound_center, data.bound_radius * 1.1, args.grid)?;
    let mut rows = Vec::with_capacity(args.counts.len());
    let mut outputs = Vec::new();
    for &count in &args.counts {
        // Prefix subsets nest, which is what makes the gap column monotone:
        // every view added can only cut the upper bound down and force more
        // of the lower bound up.
        let chosen = &pool[..count];
        let cams: Vec<&CameraView> = chosen.iter().map(|&i| &data.views[i].camera).collect();
        let beliefs: Vec<ProbMap> = chosen
            .iter()
            .map(|&i| blurred_truth(&data, i, args.blur))
            .collect();
        let pairs: Vec<(&ProbMap, &CameraView)> =
            beliefs.iter().zip(&cams).map(|(b, &c)| (b, c)).collect();
        let masks: Vec<(&BinaryMask, &CameraView)> = chosen
            .iter()
            .zip(&cams)
            .map(|(&i, &c)| (&data.eval_truth[i], c))
            .collect();

        let pairing = pairing_naming_pairs(target_cam, &cams, target, chosen)?;
        let upper = upper_bound(&pairs, target_cam, &pairing)?;
        let lower = lower_bound(&masks, target_cam, &grid)?;
        let pair = BoundPair::new(upper, ProbMap::from(&lower))?;
        let (gap_mean, gap_max) = crossview_core::eval::bound_gap_stats(&pair);
        rows.push(vec![
            count.to_string(),
            format!("{gap_mean:.6}"),
            format!("{gap_max:.6}"),
        ]);
        println!("count {count:3}: mean gap {gap_mean:.6}, max gap {gap_max:.6}");

        let upper_pm = format!("upper_c{count:02}.pm");
        let upper_pgm = format!("upper_c{count:02}.pgm");
        let lower_pbm = format!("lower_c{count:02}.pbm");
        io::save_probmap(args.out.join(&upper_pm), pair.upper())?;
        io::save_probmap_pgm(args.out.join(&upper_pgm), pair.upper())?;
        io::save_mask(args.out.join(&lower_pbm), &lower)?;
        outputs.extend([upper_pm, upper_pgm, lower_pbm]);
    }
    io::write_csv(args.out.join("gaps.csv"), "labeled_count,gap_mean,gap_max", &rows)?;
    outputs.push("gaps.csv".into());

    let mut params = BTreeMap::new();
    param(&mut params, "data", args.data.display());
    param(&mut params, "target", target);
    param(&mut params, "counts", format!("{:?}", args.counts));
    param(&mut params, "grid", args.grid);
    param(&mut params, "blur", args.blur);
    write_run_manifest(&args.out, "bounds", params, outputs)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

impl Regime {
    /// Table-row defaults; explicit `--lambda-s` / `--lambda-p` override them.
    fn weights(self) -> (f64, f64) {
        match self {
            Regime::NoAug => (0.0, 0.0),
            Regime::Prior => (0.0, 0.1),
            Regime::Cross => (1.0, 0.1),
        }
    }
}

pub fn train(args: &TrainArgs) -> CmdResult {
    let data = dataset::load_dataset(&args.data)?;
    let (default_s, default_p) = args.regime.weights();
    let weights = LossWeights::new(
        args.lambda_s.unwrap_or(default_s),
        args.lambda_p.unwrap_or(default_p),
    )?;
    let config = TrainConfig {
        steps: args.steps,
        warmup_steps: args.warmup,
        lr: args.lr,
        weights,
        seed: args.seed,
        eval_every: args.eval_every,
        supervised_interleave: args.interleave,
        depth_count: args.depths,
    };

    let mut trainer = match &args.resume {
        Some(path) => Trainer::resume(&data, config, io::load_checkpoint(path)?)?,
        None => Trainer::new(&data, config)?,
    };

    let mut outputs = Vec::new();
    if args.snapshot_every == 0 {
        trainer.run(None)?;
    } else {
        // Pause at snapshot boundaries to dump progress predictions. Pauses
        // do not disturb the run: the trained result is bit-identical to an
        // uninterrupted one.
        loop {
            let step = trainer.state().step;
            let next = (step / args.snapshot_every + 1) * args.snapshot_every;
            let reached = next.min(args.steps);
            trainer.run(Some(reached - step))?;
            let at = trainer.state().step;
            if at % args.snapshot_every == 0 {
                for i in data.unlabeled_indices() {
                    let pred = forward(&data.views[i].features, &trainer.state().weights)?;
                    let name = format!("pred_s{at:05}_v{i:02}.pgm");
                    io::save_probmap_pgm(args.out.join(&name), &pred)?;
                    outputs.push(name);
                }
            }
            if at >= args.steps {
                break;
            }
        }
    }

    io::save_checkpoint(args.out.join("checkpoint.ckpt"), trainer.state())?;
    let rows: Vec<Vec<String>> = trainer
        .state()
        .history
        .iter()
        .map(|p| {
            vec![
                p.step.to_string(),
                format!("{:.6}", p.mean_iou),
                format!("{:.6}", p.pixel_accuracy),
            ]
        })
        .collect();
    io::write_csv(args.out.join("metrics.csv"), "step,mean_iou,pixel_accuracy", &rows)?;
    outputs.extend(["checkpoint.ckpt".into(), "metrics.csv".into()]);

    if let Some(last) = trainer.state().history.last() {
        println!(
            "finished step {}: unlabeled mean IoU {:.4}, pixel accuracy {:.4}",
            last.step, last.mean_iou, last.pixel_accuracy
        );
    }

    let mut params = BTreeMap::new();
    param(&mut params, "data", args.data.display());
    param(&mut params, "regime", format!("{:?}", args.regime).to_lowercase());
    param(&mut params, "lambda_s", weights.lambda_s);
    param(&mut params, "lambda_p", weights.lambda_p);
    param(&mut params, "steps", args.steps);
    param(&mut params, "warmup", args.warmup);
    param(&mut params, "lr", args.lr);
    param(&mut params, "seed", args.seed);
    if let Some(path) = &args.resume {
        param(&mut params, "resume", path.display());
    }
    write_run_manifest(&args.out, "train", params, outputs)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn eval(args: &EvalArgs) -> CmdResult {
    let data = dataset::load_dataset(&args.data)?;
    let views: Vec<usize> = match args.views {
        EvalViews::Unlabeled => data.unlabeled_indices(),
        EvalViews::Labeled => {
            eprintln!(
                "warning: evaluation is defined on unlabeled views; \
                 --views labeled scores the training views instead"
            );
            data.labeled_indices()
        }
        EvalViews::All => (0..data.views.len()).collect(),
    };
    if views.is_empty() {
        return Err(Error::BadConfig("no views match the --views selection".into()).into());
    }

    let mut report_rows = Vec::new();
    let mut outputs = Vec::new();
    let mut summary = format!(
        "evaluation over {} {} views:\n",
        views.len(),
        match args.views {
            EvalViews::Unlabeled => "unlabeled",
            EvalViews::Labeled => "labeled",
            EvalViews::All => "",
        }
        .trim()
    );
    for path in &args.checkpoints {
        let state = io::load_checkpoint(path)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let mut per_view = Vec::with_capacity(views.len());
        for &i in &views {
            let pred = forward(&data.views[i].features, &state.weights)?;
            let mask = binarize(&pred, 0.5)?;
            let iou = crossview_core::eval::iou(&mask, &data.eval_truth[i])?;
            let acc = crossview_core::eval::pixel_accuracy(&mask, &data.eval_truth[i])?;
            per_view.push((i, iou, acc));
        }
        let report = MetricReport::from_views(per_view, 0.0);

        let per_view_name = format!("eval_{label}.csv");
        let rows: Vec<Vec<String>> = report
            .per_view
            .iter()
            .map(|(i, iou, acc)| {
                vec![i.to_string(), format!("{iou:.6}"), format!("{acc:.6}")]
            })
            .collect();
        io::write_csv(args.out.join(&per_view_name), "view,iou,pixel_accuracy", &rows)?;
        outputs.push(per_view_name);

        report_rows.push(vec![
            label.clone(),
            format!("{:.6}", report.mean_iou),
            format!("{:.6}", report.pixel_accuracy),
        ]);
        let _ = writeln!(
            summary,
            "  {label:12} mean IoU {:.4}  pixel accuracy {:.4}",
            report.mean_iou, report.pixel_accuracy
        );
    }
    io::write_csv(
        args.out.join("report.csv"),
        "checkpoint,mean_iou,pixel_accuracy",
        &report_rows,
    )?;
    outputs.push("report.csv".into());
    print!("{summary}");
    io::write_text_atomic(args.out.join("summary.txt"), &summary)?;
    outputs.push("summary.txt".into());

    let mut params = BTreeMap::new();
    param(&mut params, "data", args.data.display());
    param(
        &mut params,
        "checkpoints",
        args.checkpoints
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(";"),
    );
    write_run_manifest(&args.out, "eval", params, outputs)?;
    Ok(())
}

impl From<RigArg> for crossview_core::synth::RigKind {
    fn from(arg: RigArg) -> Self {
        use crossview_core::synth::RigKind;
        match arg {
            RigArg::Ring => RigKind::Ring,
            RigArg::Dome => RigKind::Dome,
            RigArg::TwoLayer => RigKind::TwoLayer,
        }
    }
}
