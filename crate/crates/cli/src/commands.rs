use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use rigpose::camera::CameraRig;
use rigpose::evaluation::{self, ConfigurationMask, EvaluationError, EvaluationReport, TrialMetrics};
use rigpose::extrinsic::{self, PriorConfig};
use rigpose::field::{CalibrationField, ImageCorrespondences};
use rigpose::geometry::RigidTransform;
use rigpose::gpnp::{self, GpnpConfig};
use rigpose::intrinsic;
use rigpose::io::{
    read_json, write_json, write_text, CorrespondenceFile, FieldFile, FramePose, IntrinsicsFile, PoseFile, ReportFile, RigFile, TruthFile,
    SCHEMA_VERSION,
};
use rigpose::simulator::{self, FieldSpec, FlightScenario, MarkerLayout, NoiseModel, RigPreset, SimulationError};

use crate::{
    AblateArgs, CalibrateExtrinsicsArgs, CalibrateIntrinsicsArgs, CliError, Command, EvaluateArgs, Layout, Preset, SimulateCommand,
    SimulateExtrinsicsArgs, SimulateFlightArgs, SimulateIntrinsicsArgs, SolveArgs, SolvePoseArgs,
};

/// Marker ids of flight trial `i` start at `i * MARKER_STRIDE` in the merged field.
const MARKER_STRIDE: usize = 100_000;

/// Camera configurations compared when none are given.
const DEFAULT_MASKS: [&str; 5] = ["0", "01", "012", "1234", "01234"];

pub(crate) fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { kind } => match kind {
            SimulateCommand::Flight(a) => simulate_flight(&a),
            SimulateCommand::Intrinsics(a) => simulate_intrinsics(&a),
            SimulateCommand::Extrinsics(a) => simulate_extrinsics(&a),
        },
        Command::CalibrateIntrinsics(a) => calibrate_intrinsics(&a),
        Command::CalibrateExtrinsics(a) => calibrate_extrinsics(&a),
        Command::SolvePose(a) => solve_pose(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::AblateCameras(a) => ablate_cameras(&a),
    }
}

fn preset(p: Preset) -> RigPreset {
    match p {
        Preset::Dmais => RigPreset::dmais(),
        Preset::Nominal => RigPreset::dmais_nominal(),
    }
}

fn load_rig(path: &Path) -> Result<CameraRig<f64>, CliError> {
    read_json::<RigFile>(path)?.to_rig().map_err(|m| CliError::invalid(path, m))
}

fn load_field(path: &Path) -> Result<CalibrationField, CliError> {
    read_json::<FieldFile>(path)?.to_field().map_err(|m| CliError::invalid(path, m))
}

fn noise(sigma: f64) -> Result<NoiseModel, CliError> {
    let model = NoiseModel::gaussian(sigma);
    model.validate()?;
    Ok(model)
}

fn simulate_flight(a: &SimulateFlightArgs) -> Result<(), CliError> {
    let rig = simulator::make_dmais_rig(&preset(a.preset))?;
    let layout = match a.layout {
        Layout::Grid => MarkerLayout::Grid { spacing: a.spacing, relief: a.relief },
        Layout::PerCamera => MarkerLayout::PerCamera { count: a.count, relief: a.relief },
    };
    if a.trials == 0 || a.trials > u32::MAX as usize / MARKER_STRIDE {
        return Err(SimulationError::InvalidParameters(format!("trial count must be in 1..={}", u32::MAX as usize / MARKER_STRIDE)).into());
    }
    let scenario = FlightScenario {
        altitude: a.altitude,
        layout,
        noise: noise(a.sigma)?,
        trials: a.trials,
        seed: a.common.seed,
        ..Default::default()
    };
    scenario.validate()?;
    let trials = (0..a.trials).into_par_iter().map(|i| scenario.trial(&rig, i)).collect::<Result<Vec<_>, _>>()?;

    let mut markers = Vec::new();
    let mut images = Vec::new();
    let mut truth = BTreeMap::new();
    for t in &trials {
        if t.field.len() >= MARKER_STRIDE {
            return Err(SimulationError::InvalidParameters(format!("trial {} has more than {MARKER_STRIDE} markers", t.index)).into());
        }
        let offset = (t.index * MARKER_STRIDE) as u32;
        markers.extend(t.field.iter().map(|(id, p)| (offset + id, *p)));
        for img in &t.images {
            let mut img = img.clone();
            img.frame = Some(t.index);
            img.points.iter_mut().for_each(|p| p.marker_id += offset);
            images.push(img);
        }
        truth.insert(t.index, (&t.pose).into());
    }
    let field = CalibrationField::new(markers).map_err(|e| SimulationError::InvalidParameters(e.to_string()))?;
    let seed = Some(a.common.seed);
    write_json(&a.out_dir.join("rig.json"), &RigFile::new(&rig, seed))?;
    write_json(&a.out_dir.join("field.json"), &FieldFile::new(&field, seed))?;
    write_json(&a.out_dir.join("correspondences.json"), &CorrespondenceFile::new(&images, seed))?;
    write_json(&a.out_dir.join("truth.json"), &TruthFile { schema_version: SCHEMA_VERSION, seed, poses: truth })?;
    Ok(())
}

fn simulate_intrinsics(a: &SimulateIntrinsicsArgs) -> Result<(), CliError> {
    let rig = simulator::make_dmais_rig(&preset(a.preset))?;
    let intr = rig.camera(a.camera).map_err(|e| SimulationError::InvalidParameters(e.to_string()))?.intrinsics;
    let noise = noise(a.sigma)?;
    let mut rng = simulator::seeded_rng(a.common.seed);
    let field = simulator::make_field(&FieldSpec::default(), &mut rng)?;
    let calib = simulator::simulate_calibration_images(&intr, a.camera, &field, a.images, a.points, &noise, &mut rng)?;
    let seed = Some(a.common.seed);
    write_json(&a.out_dir.join("field.json"), &FieldFile::new(&field, seed))?;
    write_json(&a.out_dir.join("correspondences.json"), &CorrespondenceFile::new(&calib.images, seed))?;
    if a.eval_images > 0 {
        let held_out = simulator::simulate_calibration_images(&intr, a.camera, &field, a.eval_images, a.points, &noise, &mut rng)?;
        write_json(&a.out_dir.join("evaluation.json"), &CorrespondenceFile::new(&held_out.images, seed))?;
    }
    let truth = IntrinsicsFile {
        schema_version: SCHEMA_VERSION,
        seed,
        camera: a.camera,
        intrinsics: (&intr).into(),
        poses: calib.poses.iter().map(Into::into).collect(),
        rms_calibration: 0.0,
        rms_evaluation: None,
        focal_std: None,
    };
    write_json(&a.out_dir.join("intrinsics-truth.json"), &truth)?;
    Ok(())
}

fn simulate_extrinsics(a: &SimulateExtrinsicsArgs) -> Result<(), CliError> {
    let rig = simulator::make_dmais_rig(&preset(a.preset))?;
    let noise = noise(a.sigma)?;
    let mut rng = simulator::seeded_rng(a.common.seed);
    let field = simulator::make_field(&FieldSpec::default(), &mut rng)?;
    let sim = simulator::simulate_rotation_sessions(&rig, &field, a.sessions, a.perturbation, &noise, &mut rng)?;
    let images: Vec<ImageCorrespondences> = sim.sessions.iter().flat_map(|s| s.images.iter().cloned()).collect();
    let poses = sim.rig_poses.iter().enumerate().map(|(j, p)| (j, p.into())).collect();
    let seed = Some(a.common.seed);
    write_json(&a.out_dir.join("rig.json"), &RigFile::new(&rig, seed))?;
    write_json(&a.out_dir.join("field.json"), &FieldFile::new(&field, seed))?;
    write_json(&a.out_dir.join("correspondences.json"), &CorrespondenceFile::new(&images, seed))?;
    write_json(&a.out_dir.join("truth.json"), &TruthFile { schema_version: SCHEMA_VERSION, seed, poses })?;
    Ok(())
}

/// Images of one camera: the requested one, or the only one present.
fn single_camera(
    path: &Path,
    mut images: Vec<ImageCorrespondences>,
    camera: Option<usize>,
) -> Result<(usize, Vec<ImageCorrespondences>), CliError> {
    let camera = match camera {
        Some(c) => c,
        None => {
            let c = images.first().map_or(0, |i| i.camera);
            if images.iter().any(|i| i.camera != c) {
                return Err(CliError::invalid(path, "images come from several cameras; select one with --camera"));
            }
            c
        }
    };
    images.retain(|i| i.camera == camera);
    Ok((camera, images))
}

fn calibrate_intrinsics(a: &CalibrateIntrinsicsArgs) -> Result<(), CliError> {
    let field = load_field(&a.field)?;
    let (camera, images) = single_camera(&a.obs, read_json::<CorrespondenceFile>(&a.obs)?.images(), a.camera)?;
    let (initial, consensus) = intrinsic::initialize_intrinsics(&field, &images, a.width, a.height)?;
    let solution = intrinsic::refine_intrinsics(&field, &images, &initial)?;
    let rms_evaluation = match &a.eval_obs {
        Some(path) => {
            let (_, held_out) = single_camera(path, read_json::<CorrespondenceFile>(path)?.images(), Some(camera))?;
            Some(intrinsic::evaluation_rms(&field, &held_out, &solution.intrinsics)?)
        }
        None => None,
    };
    let file = IntrinsicsFile {
        schema_version: SCHEMA_VERSION,
        seed: Some(a.common.seed),
        camera,
        intrinsics: (&solution.intrinsics).into(),
        poses: solution.poses.iter().map(Into::into).collect(),
        rms_calibration: solution.rms,
        rms_evaluation,
        focal_std: Some(consensus.std),
    };
    write_json(&a.out, &file)?;
    Ok(())
}

fn calibrate_extrinsics(a: &CalibrateExtrinsicsArgs) -> Result<(), CliError> {
    let mut rig = load_rig(&a.rig)?;
    let field = load_field(&a.field)?;
    let sessions = read_json::<CorrespondenceFile>(&a.obs)?.sessions().map_err(|m| CliError::invalid(&a.obs, m))?;
    let prior = if a.no_prior {
        PriorConfig::disabled()
    } else if a.prior_sigma > 0.0 && a.prior_sigma.is_finite() {
        PriorConfig { enabled: true, sigma: a.prior_sigma }
    } else {
        return Err(CliError::Invalid { path: "--prior-sigma".into(), message: "must be positive".into() });
    };
    let intrinsics: Vec<_> = rig.cameras.iter().map(|c| c.intrinsics).collect();
    let solution = extrinsic::calibrate_extrinsics(&field, &sessions, &intrinsics, rig.reference, &prior)?;
    for (camera, extrinsic) in rig.cameras.iter_mut().zip(&solution.extrinsics) {
        camera.extrinsic = *extrinsic;
    }
    let mut file = RigFile::new(&rig, Some(a.common.seed));
    file.rms = Some(solution.rms);
    write_json(&a.out, &file)?;
    Ok(())
}

fn mask_or_all(mask: &Option<ConfigurationMask>, rig: &CameraRig<f64>) -> Result<ConfigurationMask, CliError> {
    let mask = mask.clone().unwrap_or_else(|| ConfigurationMask::all(rig.len()));
    mask.check(rig)?;
    Ok(mask)
}

fn gpnp_config(s: &SolveArgs) -> GpnpConfig {
    GpnpConfig { backend: s.backend.into(), refine: !s.no_refine, ..Default::default() }
}

/// Applies `f` to every frame in order; frames run in parallel unless their
/// runtime is being measured.
fn per_frame<T: Send, F>(frames: &BTreeMap<usize, Vec<ImageCorrespondences>>, timing: bool, f: F) -> Result<Vec<T>, CliError>
where
    F: Fn(usize, &[ImageCorrespondences]) -> Result<T, CliError> + Sync,
{
    if timing {
        frames.iter().map(|(&frame, images)| f(frame, images)).collect()
    } else {
        frames.par_iter().map(|(&frame, images)| f(frame, images)).collect()
    }
}

fn solve_pose(a: &SolvePoseArgs) -> Result<(), CliError> {
    let rig = load_rig(&a.rig)?;
    let field = load_field(&a.field)?;
    let frames = read_json::<CorrespondenceFile>(&a.obs)?.frames();
    let mask = mask_or_all(&a.mask, &rig)?;
    let config = gpnp_config(&a.solve);
    let poses = per_frame(&frames, a.solve.timing, |frame, images| {
        let obs = evaluation::observations(&rig, &field, images, &mask)?;
        let start = Instant::now();
        let result = gpnp::solve_pose(&obs, &config).map_err(|source| CliError::Pose { frame, source })?;
        let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
        let pose = result.best.pose();
        let c = pose.center();
        Ok(FramePose {
            frame,
            pose: (&pose).into(),
            position: [c.x, c.y, c.z],
            cost: result.best.cost,
            points: obs.len(),
            candidates: result.candidates.iter().map(Into::into).collect(),
            runtime_ms: a.solve.timing.then_some(runtime_ms),
        })
    })?;
    write_json(&a.out, &PoseFile { schema_version: SCHEMA_VERSION, seed: Some(a.common.seed), poses })?;
    Ok(())
}

fn write_report(out: &Path, csv: Option<&Path>, seed: u64, reports: Vec<EvaluationReport>) -> Result<(), CliError> {
    let file = ReportFile { schema_version: SCHEMA_VERSION, seed: Some(seed), reports };
    write_json(out, &file)?;
    if let Some(path) = csv {
        write_text(path, &file.to_csv())?;
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let rig = load_rig(&a.rig)?;
    let field = load_field(&a.field)?;
    let frames = read_json::<CorrespondenceFile>(&a.obs)?.frames();
    let poses = read_json::<PoseFile>(&a.poses)?.poses;
    let truth = read_json::<TruthFile>(&a.truth)?.poses;
    let mask = mask_or_all(&a.mask, &rig)?;
    if poses.len() != truth.len() {
        return Err(EvaluationError::LengthMismatch { estimated: poses.len(), reference: truth.len() }.into());
    }
    let (mut estimated, mut reference, mut reprojection, mut runtime) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for fp in &poses {
        let truth_pose =
            truth.get(&fp.frame).ok_or_else(|| CliError::invalid(&a.truth, format!("no reference pose for frame {}", fp.frame)))?;
        let images = frames.get(&fp.frame).ok_or_else(|| CliError::invalid(&a.obs, format!("no images for frame {}", fp.frame)))?;
        let pose = RigidTransform::from(&fp.pose);
        reprojection.push(evaluation::reprojection_rms(&rig, &field, images, &mask, &pose)?);
        estimated.push(pose);
        reference.push(RigidTransform::from(truth_pose));
        runtime.push(fp.runtime_ms.unwrap_or(0.0));
    }
    let resolution = evaluation::angular_resolution(evaluation::mean_focal(&rig, &mask));
    let mut report = evaluation::evaluate(&estimated, &reference, &reprojection, &runtime, resolution, &mask)?;
    for (t, fp) in report.trials.iter_mut().zip(&poses) {
        t.trial = fp.frame;
        t.points = fp.points;
    }
    write_report(&a.out, a.csv.as_deref(), a.common.seed, vec![report])
}

fn ablate_cameras(a: &AblateArgs) -> Result<(), CliError> {
    let rig = load_rig(&a.rig)?;
    let field = load_field(&a.field)?;
    let frames = read_json::<CorrespondenceFile>(&a.obs)?.frames();
    let truth = read_json::<TruthFile>(&a.truth)?.poses;
    let masks = if a.masks.is_empty() {
        DEFAULT_MASKS.iter().map(|m| m.parse().expect("default masks are valid")).collect()
    } else {
        a.masks.clone()
    };
    let config = gpnp_config(&a.solve);
    let mut reports = Vec::with_capacity(masks.len());
    for mask in &masks {
        mask.check(&rig)?;
        let trials: Vec<TrialMetrics> = per_frame(&frames, a.solve.timing, |frame, images| {
            let reference = truth.get(&frame).ok_or_else(|| CliError::invalid(&a.truth, format!("no reference pose for frame {frame}")))?;
            let (mut metrics, _) = evaluation::score_trial(&rig, &field, images, &reference.into(), mask, &config, frame)
                .map_err(|e| EvaluationError::Trial { trial: frame, source: Box::new(e) })?;
            if !a.solve.timing {
                metrics.runtime_ms = 0.0;
            }
            Ok(metrics)
        })?;
        let resolution = evaluation::angular_resolution(evaluation::mean_focal(&rig, mask));
        reports.push(EvaluationReport::from_trials(mask, resolution, trials));
    }
    write_report(&a.out, a.csv.as_deref(), a.common.seed, reports)
}
