use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use estn::attribution::{lam, render_heatmap, Region, DEFAULT_SIGMA};
use estn::check::run_checks;
use estn::config::parse_kv;
use estn::imaging::{bicubic_resize, load_image, save_image, to_rgb8};
use estn::metrics::{psnr, psnr_capped, ssim, to_255, SsimMode};
use estn::network::param_breakdown;
use estn::tensor::fault::{self, Fault};
use estn::tensor::{expect_image, Tensor};
use estn::training::{image_files, load_pairs, train_loop, TrainConfig, TrainPair};
use estn::weights::{load_weights, read_config, save_weights};
use estn::{estimate_flops, Error, EstnWeights, ModelConfig};

const EXIT_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "estn", version, about = "Lightweight transformer super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the images of a directory.
    Train(TrainArgs),
    /// Super-resolve one image.
    Infer(InferArgs),
    /// PSNR/SSIM on the luma channel against HR images.
    Eval(EvalArgs),
    /// Local attribution map for a rectangle of the output.
    Lam(LamArgs),
    /// Parameter count and FLOP estimate.
    Inspect(InspectArgs),
    /// Run the built-in invariant suite.
    Check(CheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` file with model and training keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of HR training images.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints, loss.csv and weights.bin.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    weights: PathBuf,
    /// LR image (png or ppm).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SsimArg {
    Global,
    Windowed,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of HR reference images.
    #[arg(long)]
    data: PathBuf,
    /// Directory of SR images named like their HR references.
    #[arg(long, conflicts_with_all = ["weights", "bicubic"])]
    sr: Option<PathBuf>,
    /// Produce SR images with this model from bicubic-degraded HR.
    #[arg(long, conflicts_with = "bicubic")]
    weights: Option<PathBuf>,
    /// Use bicubic down- and upsampling as the SR method.
    #[arg(long)]
    bicubic: bool,
    /// Scale for `--bicubic` and the default border.
    #[arg(long)]
    scale: Option<usize>,
    /// Pixels dropped on every side; defaults to the scale.
    #[arg(long)]
    border: Option<usize>,
    #[arg(long, value_enum, default_value = "windowed")]
    ssim: SsimArg,
    /// CSV report path; the report is always printed.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LamArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Output rectangle `x,y,w,h` in SR pixels.
    #[arg(long)]
    region: Region,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    /// Heatmap image; the raw grid goes next to it as .csv and the run
    /// summary as .json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long, conflicts_with = "weights")]
    config: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// Run only checks whose name contains this text.
    #[arg(long)]
    filter: Option<String>,
    /// Inject a known defect to confirm the suite catches it.
    #[arg(long)]
    sabotage: Option<String>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(Exit(code, _)) = cause.downcast_ref::<Exit>() {
            return *code;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NumericalAbort { .. } | Error::NonFinite { .. } => EXIT_NUMERIC,
                Error::Data(_) | Error::Io { .. } | Error::Image { .. } | Error::Shape { .. } => EXIT_DATA,
                _ => EXIT_CONFIG,
            };
        }
    }
    EXIT_CONFIG
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("ESTN_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Exit(EXIT_CONFIG, format!("ESTN_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Model and training settings from an optional file. Unknown keys fail.
fn load_run_config(path: Option<&Path>) -> anyhow::Result<(ModelConfig, TrainConfig)> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Exit(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
        for (k, v) in parse_kv(&text)? {
            if !model.set(&k, &v)? && !train.set(&k, &v)? {
                bail!(Error::Config(format!("{}: unknown key `{k}`", path.display())));
            }
        }
    }
    Ok((model, train))
}

fn require_dir(path: &Path) -> anyhow::Result<()> {
    if !path.is_dir() {
        bail!(Error::Data(format!("{} is not a directory", path.display())));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!(Error::Data(format!("{what} {} not found", path.display())));
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let (mut model_cfg, mut train_cfg) = load_run_config(a.config.as_deref())?;
    if let Some(s) = a.scale {
        model_cfg.scale = s;
    }
    if let Some(s) = a.seed {
        train_cfg.seed = s;
    }
    if let Some(n) = a.iters {
        train_cfg.iterations = n;
    }
    model_cfg.validate()?;
    train_cfg.validate()?;
    require_dir(&a.data)?;
    image_files(&a.data)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;

    let pairs = load_pairs(&a.data, model_cfg.scale)?;
    let mut model = EstnWeights::<f32>::build(&model_cfg, train_cfg.seed)?;
    println!(
        "training {} parameters on {} image(s) for {} iterations",
        model.count_params(),
        pairs.len(),
        train_cfg.iterations
    );
    let every = (train_cfg.iterations / 20).max(1);
    let out = train_loop(&mut model, &pairs, &train_cfg, Some(&a.out), |r| {
        if r.iteration % every == 0 || r.iteration + 1 == train_cfg.iterations {
            println!("iter {:>6}  lr {:.3e}  loss {:.6e}", r.iteration, r.lr, r.loss);
        }
    })?;
    save_weights(&model, &a.out.join("weights.bin"))?;
    if let (Some(first), Some(last)) = (out.records.first(), out.records.last()) {
        println!("loss {:.6e} -> {:.6e} ({:.2}% of initial)", first.loss, last.loss, 100.0 * last.loss / first.loss);
    }
    println!("wrote {} checkpoint(s) and weights.bin to {}", out.checkpoints.len(), a.out.display());
    Ok(())
}

fn cmd_infer(a: InferArgs) -> anyhow::Result<()> {
    require_file(&a.weights, "weights")?;
    require_file(&a.input, "input")?;
    let lr = load_image(&a.input)?;
    let model = load_weights(&a.weights)?;
    let sr = model.infer(&lr)?;
    save_image(&a.out, &sr)?;
    println!("{}x{} -> {}x{} written to {}", lr.shape()[2], lr.shape()[1], sr.shape()[2], sr.shape()[1], a.out.display());
    Ok(())
}

/// Rounds to 8-bit levels the way a saved image would be.
fn quantise(img: &Tensor<f32>) -> anyhow::Result<Tensor<f64>> {
    let rgb = to_rgb8(img)?;
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Ok(Tensor::from_fn(vec![3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f64
    }))
}

enum SrSource {
    Dir(PathBuf),
    Model(Box<EstnWeights<f32>>),
    Bicubic(usize),
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    require_dir(&a.data)?;
    let hr_files = image_files(&a.data)?;
    let source = match (&a.sr, &a.weights, a.bicubic) {
        (Some(dir), None, false) => {
            require_dir(dir)?;
            let names = |files: &[PathBuf]| -> Vec<std::ffi::OsString> {
                files.iter().filter_map(|p| p.file_name().map(|n| n.to_os_string())).collect()
            };
            let (hn, sn) = (names(&hr_files), names(&image_files(dir)?));
            if hn != sn {
                let missing: Vec<_> = hn.iter().filter(|n| !sn.contains(n)).chain(sn.iter().filter(|n| !hn.contains(n))).collect();
                bail!(Error::Data(format!("unpaired files between HR and SR directories: {missing:?}")));
            }
            SrSource::Dir(dir.clone())
        }
        (None, Some(w), false) => {
            require_file(w, "weights")?;
            SrSource::Model(Box::new(load_weights(w)?))
        }
        (None, None, true) => SrSource::Bicubic(a.scale.unwrap_or(4)),
        _ => bail!(Exit(EXIT_CONFIG, "choose one of --sr, --weights or --bicubic".into())),
    };
    let scale = match &source {
        SrSource::Dir(_) => a.scale.unwrap_or(0),
        SrSource::Model(m) => m.config.scale,
        SrSource::Bicubic(s) => *s,
    };
    if scale == 0 && !matches!(source, SrSource::Dir(_)) {
        bail!(Error::Config("scale must be at least 1".into()));
    }
    let border = a.border.unwrap_or(scale);
    let mode = match a.ssim {
        SsimArg::Global => SsimMode::Global,
        SsimArg::Windowed => SsimMode::Windowed,
    };

    let mut csv = String::from("image,psnr_db,ssim\n");
    let (mut sum_p, mut sum_s) = (0.0, 0.0);
    for path in &hr_files {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let hr_full = load_image(path)?;
        let (hr, sr) = match &source {
            SrSource::Dir(dir) => (hr_full, load_image(&dir.join(&name))?),
            SrSource::Model(m) => {
                let pair = TrainPair::from_hr(&hr_full, scale)?;
                let sr = m.infer(&pair.lr)?;
                (pair.hr, sr)
            }
            SrSource::Bicubic(s) => {
                let pair = TrainPair::from_hr(&hr_full, *s)?;
                (pair.hr, bicubic_resize(&pair.lr, *s as f64)?)
            }
        };
        if sr.shape() != hr.shape() {
            bail!(Error::Data(format!("{name}: SR {:?} vs HR {:?}", sr.shape(), hr.shape())));
        }
        let (sr8, hr8) = (quantise(&sr)?, to_255(&hr));
        let p = psnr_capped(psnr(&sr8, &hr8, border)?);
        let s = ssim(&sr8, &hr8, border, mode)?;
        sum_p += p;
        sum_s += s;
        csv.push_str(&format!("{name},{p:.6},{s:.6}\n"));
    }
    let n = hr_files.len() as f64;
    csv.push_str(&format!("mean,{:.6},{:.6}\n", sum_p / n, sum_s / n));
    print!("{csv}");
    if let Some(out) = &a.out {
        estn::weights::write_atomic(out, csv.as_bytes())?;
    }
    Ok(())
}

fn cmd_lam(a: LamArgs) -> anyhow::Result<()> {
    require_file(&a.weights, "weights")?;
    require_file(&a.input, "input")?;
    if a.steps == 0 || !(a.sigma >= 0.0) {
        bail!(Error::Config("steps must be at least 1 and sigma non-negative".into()));
    }
    let cfg = read_config(&a.weights)?;
    let lr = load_image(&a.input)?;
    expect_image(lr.shape())?;
    a.region.check(lr.shape()[1] * cfg.scale, lr.shape()[2] * cfg.scale)?;
    let model = load_weights(&a.weights)?.cast::<f64>();
    let map = lam(&model, &lr, a.region, a.steps, a.sigma)?;
    let csv = render_heatmap(&map, &a.out)?;
    let residual = map.completeness_residual();
    let meta = json!({
        "region": a.region.to_string(),
        "steps": map.steps,
        "sigma": map.sigma,
        "attribution_sum": map.total(),
        "readout_input": map.readout_input,
        "readout_baseline": map.readout_baseline,
        "completeness_residual": residual,
    });
    let meta_path = a.out.with_extension("json");
    estn::weights::write_atomic(&meta_path, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    println!("region {}  steps {}  sigma {}", a.region, map.steps, map.sigma);
    println!("attribution sum {:.6e}, readout difference {:.6e}", map.total(), map.readout_input - map.readout_baseline);
    println!("completeness residual {residual:.6e}");
    println!("wrote {}, {} and {}", a.out.display(), csv.display(), meta_path.display());
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> anyhow::Result<()> {
    let mut cfg = match (&a.config, &a.weights) {
        (Some(c), None) => load_run_config(Some(c))?.0,
        (None, Some(w)) => read_config(w)?,
        _ => ModelConfig::default(),
    };
    if let Some(s) = a.scale {
        cfg.scale = s;
    }
    cfg.validate()?;
    let params = param_breakdown(&cfg);
    let total: usize = params.iter().map(|p| p.1).sum();
    let flops = estimate_flops(&cfg, (1280, 720));
    if a.json {
        let report = json!({
            "scale": cfg.scale,
            "params": total,
            "params_breakdown": params.iter().map(|(k, v)| (k.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
            "flops_output": [1280, 720],
            "flops": flops.total(),
            "flops_breakdown": flops.parts.iter().map(|(k, v)| (k.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
        });
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!("scale x{}", cfg.scale);
    println!("params {total}");
    for (k, v) in &params {
        println!("  {k:<10} {v}");
    }
    println!("flops at 1280x720 output {:.3} G", flops.total() / 1e9);
    for (k, v) in &flops.parts {
        println!("  {k:<10} {:.3} G", v / 1e9);
    }
    Ok(())
}

fn cmd_check(a: CheckArgs) -> anyhow::Result<()> {
    if let Some(s) = &a.sabotage {
        let f: Fault = s.parse()?;
        fault::inject(f, true);
        println!("sabotage active: {s}");
    }
    let results = run_checks(a.filter.as_deref());
    if results.is_empty() {
        bail!(Exit(EXIT_CONFIG, format!("no checks match `{}`", a.filter.unwrap_or_default())));
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name.clone()).collect();
    for r in &results {
        println!("{} {:<34} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    println!("{} passed, {} failed", results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        return Err(anyhow!(Exit(EXIT_CHECK, format!("failed checks: {}", failed.join(", ")))));
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Lam(a) => cmd_lam(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Check(a) => cmd_check(a).context("self-check"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
