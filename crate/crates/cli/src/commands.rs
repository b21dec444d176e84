use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use panosphere::mask::{build_mask, build_mask_brute_force};
use panosphere::metrics::{psnr, read_imgf, rotation_error, ssim, translation_error, IMGF_MAGIC};
use panosphere::panodit::{
    encode_condition, forward_block, global_branch, grad_check, pool_condition, read_pwxb, write_pwxb, GradCheckOptions,
};
use panosphere::plucker::{build_plucker_field, read_plkf, write_plkf};
use panosphere::route::{sample_route, Heading, SampleConfig, SplitMix64};
use panosphere::{
    BiasMode, BlockConfig, BlockWeights, ErpGrid, EulerAngles, ExplorationRoute, ImageFrame, Matrix,
    PinholeIntrinsics, PixelRange, PoseSequence, RayModel, SphereMask, TokenGrid, WalkableScene,
};
use serde_json::{json, Value};

use crate::{
    CameraModel, Cli, CliError, CliResult, Command, DemoForwardArgs, EvalImageArgs, EvalPoseArgs, GridArgs,
    HeadingMode, ImageMetric, MakeMaskArgs, MaskFormat, PluckerArgs, RangeArg, SampleRouteArgs,
};

const VERIFY_MAX_TOKENS: usize = 512;
const GRAD_TOLERANCE: f64 = 1e-5;

/// Runs the selected command and returns its parameter snapshot.
pub fn dispatch(cli: &Cli) -> CliResult<Value> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::SampleRoute(a) => sample_route_cmd(a, cli.seed, out),
        Command::MakeMask(a) => make_mask(a, out),
        Command::Plucker(a) => plucker(a, out),
        Command::DemoForward(a) => demo_forward(a, cli.seed, out),
        Command::EvalPose(a) => eval_pose(a, out),
        Command::EvalImage(a) => eval_image(a, out),
        Command::Replay(_) => unreachable!("replay is resolved before dispatch"),
    }
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| data_err(path, e))
}

fn read_route(path: &Path) -> CliResult<ExplorationRoute> {
    ExplorationRoute::read_jsonl(open(path)?).map_err(|e| data_err(path, e))
}

/// Writes binary output to `out`; binary formats have no stdout fallback.
fn write_file(
    out: Option<&Path>,
    what: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> panosphere::Result<()>,
) -> CliResult<()> {
    let path = out.ok_or_else(|| CliError::Usage(format!("{what} output needs --out")))?;
    let mut w = BufWriter::new(File::create(path).map_err(|e| data_err(path, e))?);
    f(&mut w).map_err(|e| data_err(path, e))?;
    w.flush().map_err(|e| data_err(path, e))
}

/// Text report: to `out` if given, stdout otherwise.
fn emit_text(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| data_err(p, e)),
        None => {
            say(text);
            Ok(())
        }
    }
}

/// Stdout writes; a closed pipe is not an error.
fn say_bytes(bytes: &[u8]) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(bytes).and_then(|_| out.flush());
}

fn say(text: &str) {
    say_bytes(text.as_bytes());
}

fn token_grid(g: &GridArgs) -> CliResult<TokenGrid> {
    let source = ErpGrid::new(g.width, g.height).map_err(|e| CliError::Usage(e.to_string()))?;
    TokenGrid::new(g.frames, g.rows, g.cols, source).map_err(|e| CliError::Usage(e.to_string()))
}

fn sample_route_cmd(a: &SampleRouteArgs, seed: u64, out: Option<&Path>) -> CliResult<Value> {
    let text = std::fs::read_to_string(&a.scene).map_err(|e| data_err(&a.scene, e))?;
    let scene = WalkableScene::from_json(&text).map_err(|e| data_err(&a.scene, e))?;
    let heading = match a.heading {
        HeadingMode::Tangent => Heading::Tangent,
        HeadingMode::Fixed => Heading::Fixed(EulerAngles::new(a.yaw, a.pitch, a.roll)),
    };
    let config = SampleConfig {
        seed,
        min_length: a.min_length,
        max_attempts: a.max_attempts,
        stride: a.stride,
        heading,
        ..SampleConfig::default()
    };
    let sampled = sample_route(&scene, &config)?;
    eprintln!("{}", sampled.stats);
    let mut buf = Vec::new();
    sampled.route.write_jsonl(&mut buf)?;
    match out {
        Some(p) => std::fs::write(p, &buf).map_err(|e| data_err(p, e))?,
        None => say_bytes(&buf),
    }
    eprintln!("frames {} length {:.6}", sampled.route.frames.len(), sampled.route.length());
    Ok(json!({
        "min_length": a.min_length,
        "stride": a.stride,
        "heading": config.heading,
        "max_attempts": a.max_attempts,
        "smoothing": config.smoothing,
    }))
}

/// Orientations of `frames` evenly spaced route frames, relative to the first.
fn frame_orientations(route: &ExplorationRoute, frames: usize) -> CliResult<Vec<EulerAngles<f64>>> {
    let have = route.frames.len();
    if have < frames {
        return Err(CliError::Data(format!("route has {have} frames, mask needs {frames}")));
    }
    let picks: Vec<usize> = if frames == 1 {
        vec![0]
    } else {
        (0..frames).map(|f| f * (have - 1) / (frames - 1)).collect()
    };
    let r0 = route.frames[picks[0]].orientation.to_rotation().transpose();
    Ok(picks
        .into_iter()
        .map(|i| r0.mul(&route.frames[i].orientation.to_rotation()).to_euler())
        .collect())
}

fn make_mask(a: &MakeMaskArgs, out: Option<&Path>) -> CliResult<Value> {
    let grid = token_grid(&a.grid)?;
    if a.verify && grid.len() > VERIFY_MAX_TOKENS {
        return Err(CliError::Usage(format!(
            "--verify supports at most {VERIFY_MAX_TOKENS} tokens, grid has {}",
            grid.len()
        )));
    }
    let route = read_route(&a.route)?;
    let orientations = frame_orientations(&route, a.grid.frames)?;
    let mask = build_mask(&grid, &orientations, a.grid.tau)?;
    match a.format {
        MaskFormat::Spam => write_file(out, "mask", |w| mask.write_spam(w))?,
        MaskFormat::Json => {
            let text = mask.to_json()?;
            write_file(out, "mask", |w| Ok(w.write_all(text.as_bytes())?))?;
        }
    }
    say(&format!("tokens {}\ndensity {:.6}\n", mask.n(), mask.density()));
    if a.verify {
        let path = out.expect("checked by write_file");
        let written = match a.format {
            MaskFormat::Spam => SphereMask::read_spam(&mut open(path)?),
            MaskFormat::Json => {
                SphereMask::from_json(&std::fs::read_to_string(path).map_err(|e| data_err(path, e))?)
            }
        }
        .map_err(|e| data_err(path, e))?;
        let oracle = build_mask_brute_force(&grid, &orientations, a.grid.tau)?;
        if written != oracle {
            return Err(CliError::Data(format!(
                "verify FAIL: written mask has {} pairs, brute force has {}",
                written.pair_count(),
                oracle.pair_count()
            )));
        }
        say("verify PASS\n");
    }
    Ok(json!({
        "frames": a.grid.frames,
        "rows": a.grid.rows,
        "cols": a.grid.cols,
        "width": a.grid.width,
        "height": a.grid.height,
        "tau": a.grid.tau,
        "format": format!("{:?}", a.format).to_lowercase(),
        "verify": a.verify,
    }))
}

fn plucker(a: &PluckerArgs, out: Option<&Path>) -> CliResult<Value> {
    let grid = ErpGrid::new(a.width, a.height).map_err(|e| CliError::Usage(e.to_string()))?;
    let model = match a.model {
        CameraModel::Erp => RayModel::Erp,
        CameraModel::Pinhole => {
            let (Some(fx), Some(fy), Some(cx), Some(cy)) = (a.fx, a.fy, a.cx, a.cy) else {
                return Err(CliError::Usage("--model pinhole requires --fx, --fy, --cx and --cy".into()));
            };
            let intrinsics = PinholeIntrinsics::new(fx, fy, cx, cy).map_err(|e| CliError::Usage(e.to_string()))?;
            RayModel::Pinhole { intrinsics, literal_translation: a.literal_translation }
        }
    };
    let route = read_route(&a.route)?;
    let field = build_plucker_field(&route.frames, grid, &model)?;
    write_file(out, "field", |w| write_plkf(&field, w))?;
    let report: String = (0..field.frames())
        .map(|t| format!("frame {t} max|m.d| {:.3e}\n", field.max_moment_dot_direction(t)))
        .collect();
    say(&report);
    Ok(json!({
        "width": a.width,
        "height": a.height,
        "model": format!("{:?}", a.model).to_lowercase(),
        "intrinsics": [a.fx, a.fy, a.cx, a.cy],
        "literal_translation": a.literal_translation,
    }))
}

fn random_tokens(n: usize, d: usize, seed: u64) -> Matrix<f64> {
    let mut rng = SplitMix64::new(seed);
    Matrix::from_fn(n, d, |_, _| rng.next_gaussian())
}

fn demo_forward(a: &DemoForwardArgs, seed: u64, out: Option<&Path>) -> CliResult<Value> {
    let (config, weights) = match &a.weights {
        Some(path) => read_pwxb(&mut open(path)?).map_err(|e| data_err(path, e))?,
        None => {
            let mut config = BlockConfig::new(a.d_model, a.heads, token_grid(&a.grid)?, a.grid.tau)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            if a.additive_bias {
                config.bias_mode = BiasMode::Additive;
            }
            let weights = BlockWeights::init(&config, seed)?;
            (config, weights)
        }
    };
    let mask = SphereMask::read_spam(&mut open(&a.mask)?).map_err(|e| data_err(&a.mask, e))?;
    let field = read_plkf(&mut open(&a.field)?).map_err(|e| data_err(&a.field, e))?.cast::<f64>();
    let pooled = pool_condition(&field, &config)?;
    let x = random_tokens(config.tokens(), config.d_model, seed ^ 0x746f_6b65_6e73);

    let start = Instant::now();
    let condition = encode_condition(&field, &config, &weights)?;
    let y = forward_block(&x, &condition, &mask, &weights, &config)?;
    let forward_time = start.elapsed();
    let global = global_branch(&x, &weights, &config)?;
    let zero_init = weights.zero_linears_are_zero() && y.max_abs_diff(&global) == 0.0;

    let options = GradCheckOptions { max_entries_per_param: Some(a.grad_entries), ..GradCheckOptions::default() };
    let start = Instant::now();
    let report = grad_check(&weights, &config, &x, &pooled, &mask, &options)?;
    let grad_time = start.elapsed();

    if let Some(path) = &a.save_weights {
        write_file(Some(path), "weights", |w| write_pwxb(&config, &weights, w))?;
    }

    let worst = report.worst.map_or_else(|| "none".to_string(), |(id, i)| format!("{}[{i}]", id.name()));
    let mut text = String::new();
    text += &format!("tokens {} d_model {} heads {}\n", config.tokens(), config.d_model, config.heads);
    text += &format!("mask density {:.6}\n", mask.density());
    text += &format!("output sum_squares {:.12e}\n", y.sum_squares());
    text += &format!("zero-init {}\n", if zero_init { "PASS" } else { "FAIL" });
    text += &format!(
        "grad-check {} max_rel_error {:.3e} entries {} worst {}\n",
        if report.max_rel_error < GRAD_TOLERANCE { "PASS" } else { "FAIL" },
        report.max_rel_error,
        report.entries_checked,
        worst
    );
    text += &format!("frozen-grads-zero {}\n", if report.frozen_grads_zero { "PASS" } else { "FAIL" });
    emit_text(out, &text)?;
    eprintln!("forward {:.3} ms, grad-check {:.3} ms", forward_time.as_secs_f64() * 1e3, grad_time.as_secs_f64() * 1e3);

    Ok(json!({
        "config": config,
        "grad_entries": a.grad_entries,
        "weights_source": if a.weights.is_some() { "file" } else { "init" },
        "save_weights": a.save_weights,
    }))
}

fn eval_pose(a: &EvalPoseArgs, out: Option<&Path>) -> CliResult<Value> {
    let gt = read_route(&a.gt)?;
    let est = read_route(&a.est)?;
    if gt.frames.len() != est.frames.len() {
        return Err(CliError::Data(format!(
            "length mismatch: gt has {} frames, est has {}",
            gt.frames.len(),
            est.frames.len()
        )));
    }
    let (gt, est) = (PoseSequence::from_route(&gt), PoseSequence::from_route(&est));
    let r = rotation_error(&gt, &est)?;
    let t = translation_error(&gt, &est, a.normalize_translation)?;
    emit_text(out, &format!("R_err {r:.9}\nT_err {t:.9}\n"))?;
    Ok(json!({ "normalize_translation": a.normalize_translation }))
}

fn read_image(path: &Path, range: RangeArg) -> CliResult<ImageFrame<f64>> {
    let mut magic = [0u8; 4];
    let is_imgf = open(path)?.read_exact(&mut magic).is_ok() && &magic == IMGF_MAGIC;
    if is_imgf {
        let range = match range {
            RangeArg::Unit => PixelRange::Unit,
            RangeArg::Byte => PixelRange::Byte,
        };
        return read_imgf(&mut open(path)?, range).map_err(|e| data_err(path, e));
    }
    let img = image::open(path).map_err(|e| data_err(path, e))?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(f64::from).collect();
    ImageFrame::new(h, w, 3, data, PixelRange::Byte).map_err(|e| data_err(path, e))
}

fn eval_image(a: &EvalImageArgs, out: Option<&Path>) -> CliResult<Value> {
    let x = read_image(&a.a, a.range)?;
    let y = read_image(&a.b, a.range)?;
    let mut text = String::new();
    if matches!(a.metric, ImageMetric::Psnr | ImageMetric::Both) {
        let p = psnr(&x, &y)?;
        if p.is_infinite() {
            text += "PSNR inf\n";
        } else {
            text += &format!("PSNR {p:.6}\n");
        }
    }
    if matches!(a.metric, ImageMetric::Ssim | ImageMetric::Both) {
        text += &format!("SSIM {:.6}\n", ssim(&x, &y)?);
    }
    emit_text(out, &text)?;
    Ok(json!({
        "metric": format!("{:?}", a.metric).to_lowercase(),
        "range": format!("{:?}", a.range).to_lowercase(),
    }))
}
