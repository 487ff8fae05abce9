//! Command-line driver: dataset synthesis, training, evaluation, the
//! sense/reconstruct round trip and the sparsity oracle.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sembcs::io::results::ExperimentResult;
use sembcs::io::{checkpoint::Checkpoint, config, measurements, ppm, results};
use sembcs::oracle::{self, SparsityReport};
use sembcs::synth::{self, SynthConfig};
use sembcs::{
    evaluate, psnr, train, train_calibrated, train_fixbcs, AnyModel, BcsModel, Dataset, Error,
    ImageTensor, ModelKind, RunConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "sembcs",
    version,
    about = "Semantic-aware block compressed sensing"
)]
struct Cli {
    /// Run configuration (key = value text); defaults to the desk preset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Model checkpoint to read (or, for `train`/`calibrate`, to write).
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "F")]
    gamma: Option<f64>,
    #[arg(long = "target-navg", global = true, value_name = "F")]
    target_navg: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on DATA/{train,val,test}.
    Train(DataArgs),
    /// Per-image PSNR and measurement usage of a checkpoint on a directory of images.
    Eval(EvalArgs),
    /// Encode one image into per-block measurements.
    Sense(InputArgs),
    /// Decode a measurement file back to an image.
    Reconstruct(ReconArgs),
    /// Oracle sparsity levels per block, optionally against a model's allocation.
    Sparsity(SparsityArgs),
    /// Search gamma for a target average measurement count, then train.
    Calibrate(DataArgs),
    /// Write a synthetic dataset with flat and textured blocks.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Directory with `train`, `val` and `test` subdirectories of P6 images.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Compare against same-named images in DIR instead of running a model.
    #[arg(long, value_name = "DIR")]
    recon: Option<PathBuf>,
    /// Also write the rate-distortion point here.
    #[arg(long, value_name = "PATH")]
    curve: Option<PathBuf>,
    /// Also write per-block popcounts here.
    #[arg(long, value_name = "PATH")]
    blocks: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InputArgs {
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct ReconArgs {
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Also write the unquantized reconstruction as text.
    #[arg(long, value_name = "PATH")]
    values: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SparsityArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Coefficient magnitude threshold on the [0,255] scale.
    #[arg(long, default_value_t = oracle::DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Fraction of blocks left flat.
    #[arg(long = "blocks-sparse", default_value_t = 0.5)]
    blocks_sparse: f64,
    #[arg(long, default_value_t = 64)]
    train: usize,
    #[arg(long, default_value_t = 8)]
    val: usize,
    #[arg(long, default_value_t = 16)]
    test: usize,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
    /// Finished, but a numeric target was missed.
    Numeric(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Runs one command; `argv[0]` is the program name. Returns the exit code.
pub fn run_cli<S: AsRef<str>>(argv: &[S]) -> i32 {
    let cli = match Cli::try_parse_from(argv.iter().map(|s| s.as_ref())) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(CliError::Numeric(m)) => {
            eprintln!("error: {m}");
            EXIT_NUMERIC
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) | Error::Undefined(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            }
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => config::load(p)?,
        None => RunConfig::desk(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(g) = cli.gamma {
        cfg.gamma = g;
    }
    if let Some(t) = cli.target_navg {
        cfg.target_n_avg = Some(t);
    }
    let g = &cli;
    match &cli.command {
        Command::Train(a) => cmd_train(g, cfg, a, false),
        Command::Calibrate(a) => cmd_train(g, cfg, a, true),
        Command::Eval(a) => cmd_eval(g, &cfg, a),
        Command::Sense(a) => cmd_sense(g, a),
        Command::Reconstruct(a) => cmd_reconstruct(g, a),
        Command::Sparsity(a) => cmd_sparsity(g, &cfg, a),
        Command::Synth(a) => cmd_synth(g, &cfg, a),
    }
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("this command needs --{flag}")))
}

fn load_model(g: &Cli) -> CliResult<(Checkpoint, AnyModel)> {
    let ck = Checkpoint::load(need(&g.checkpoint, "checkpoint")?)?;
    let model = ck.build()?;
    Ok((ck, model))
}

fn load_split(dir: &Path, cfg: &RunConfig) -> CliResult<Dataset> {
    let split = |name: &str| ppm::load_dir(dir.join(name), cfg.height, cfg.width);
    Ok(Dataset {
        train: split("train")?,
        val: split("val")?,
        test: split("test")?,
    })
}

fn file_names(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    Ok(ppm::list_images(dir)?
        .into_iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            (name, p)
        })
        .collect())
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => results::write_csv(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_train(g: &Cli, cfg: RunConfig, a: &DataArgs, calibrate: bool) -> CliResult<()> {
    let out = g.checkpoint.as_ref().or(g.out.as_ref()).ok_or_else(|| {
        CliError::Usage("training needs --checkpoint (or --out) for the result".into())
    })?;
    cfg.validate()?;
    let data = load_split(&a.data, &cfg)?;
    let mut missed = None;
    let (ck, report) = match (cfg.model, cfg.target_n_avg) {
        (ModelKind::FixBcs, _) => {
            if calibrate {
                return Err(CliError::Usage(
                    "calibrate applies to sembcs models only".into(),
                ));
            }
            let n = cfg.fix_n_avg.ok_or_else(|| {
                CliError::Usage("fixbcs training needs fix_n_avg in the config".into())
            })?;
            let (m, r) = train_fixbcs(&data, &cfg, n)?;
            (
                Checkpoint::from_model(&m, &cfg, r.best().epoch, Vec::new()),
                r,
            )
        }
        (ModelKind::SemBcs, None) if !calibrate => {
            let (m, r) = train(&data, &cfg)?;
            (
                Checkpoint::from_model(&m, &cfg, r.best().epoch, Vec::new()),
                r,
            )
        }
        (ModelKind::SemBcs, target) => {
            let target =
                target.ok_or_else(|| CliError::Usage("calibrate needs --target-navg".into()))?;
            let (m, r, cal) = train_calibrated(&data, &cfg, target, cfg.navg_tolerance)?;
            for p in &cal.probes {
                eprintln!(
                    "probe gamma {:.5} n_avg {:.3} val psnr {:.3}",
                    p.gamma, p.n_avg, p.val_psnr
                );
            }
            println!("gamma {}", cal.gamma);
            if !cal.within_tolerance {
                missed = Some(format!(
                    "no probe reached n_avg {target} within {}; kept the nearest",
                    cfg.navg_tolerance
                ));
            }
            let cfg = RunConfig {
                gamma: r.gamma,
                ..cfg.clone()
            };
            (
                Checkpoint::from_model(&m, &cfg, r.best().epoch, Vec::new()),
                r,
            )
        }
    };
    let best = report.best();
    let ck = Checkpoint {
        metrics: vec![
            ("val_psnr".into(), best.val_psnr),
            ("val_n_avg".into(), best.val_n_avg),
            ("val_r_avg".into(), best.val_r_avg),
        ],
        ..ck
    };
    ck.save(out)?;
    println!(
        "epoch {} val psnr {:.3} n_avg {:.3} r_avg {:.4}",
        best.epoch, best.val_psnr, best.val_n_avg, best.val_r_avg
    );
    match missed {
        Some(m) => Err(CliError::Numeric(m)),
        None => Ok(()),
    }
}

fn load_images(
    dir: &Path,
    cfg_h: usize,
    cfg_w: usize,
) -> CliResult<(Vec<String>, Vec<ImageTensor>)> {
    let mut names = Vec::new();
    let mut images = Vec::new();
    for (n, p) in file_names(dir)? {
        images.push(ppm::fit_image(&ppm::load_image(&p)?, cfg_h, cfg_w)?);
        names.push(n);
    }
    if images.is_empty() {
        return Err(CliError::Core(Error::InvalidArgument(format!(
            "no .ppm images in {}",
            dir.display()
        ))));
    }
    Ok((names, images))
}

fn cmd_eval(g: &Cli, cfg: &RunConfig, a: &EvalArgs) -> CliResult<()> {
    let result = match &a.recon {
        Some(rdir) => {
            let mut names = Vec::new();
            let mut psnrs = Vec::new();
            for (n, p) in file_names(&a.data)? {
                let orig = ppm::load_image(&p)?;
                let rec = ppm::load_image(rdir.join(&n))?;
                psnrs.push(psnr(&orig, &rec, 1.0)?);
                names.push(n);
            }
            let d = cfg.geometry()?.block_dim();
            let r = ExperimentResult {
                method: "stub".into(),
                gamma: None,
                n_b: d,
                block_dim: d,
                images: names,
                psnr: psnrs,
                popcounts: Vec::new(),
                n_avg: d as f64,
                r_avg: 1.0,
                sparsity: None,
            };
            r.check()?;
            r
        }
        None => {
            let (ck, model) = load_model(g)?;
            let c = &ck.config;
            let (names, images) = load_images(&a.data, c.height, c.width)?;
            let stats = evaluate(&model, &images)?;
            let gamma = (model.kind() == ModelKind::SemBcs).then_some(c.gamma);
            let d = c.geometry()?.block_dim();
            ExperimentResult::from_eval(
                model.kind().name(),
                gamma,
                model.base_measurements(),
                d,
                names,
                &stats,
            )?
        }
    };
    emit(&g.out, &result.image_csv())?;
    let curve = results::emit_curve(std::slice::from_ref(&result));
    if let Some(p) = &a.curve {
        results::write_csv(p, &curve)?;
    }
    if let (Some(p), Some(csv)) = (&a.blocks, result.block_csv()) {
        results::write_csv(p, &csv)?;
    }
    eprint!("{curve}");
    Ok(())
}

fn sem_model(g: &Cli) -> CliResult<sembcs::SemBcs> {
    match load_model(g)? {
        (_, AnyModel::Sem(m)) => Ok(m),
        (_, AnyModel::Fix(_)) => Err(CliError::Core(Error::InvalidArgument(
            "sense/reconstruct need a sembcs checkpoint".into(),
        ))),
    }
}

fn cmd_sense(g: &Cli, a: &InputArgs) -> CliResult<()> {
    let out = need(&g.out, "out")?;
    let model = sem_model(g)?;
    let geom = model.config().geometry;
    let image = ppm::fit_image(&ppm::load_image(&a.input)?, geom.height(), geom.width())?;
    let set = model.encode(&image)?;
    measurements::save(out, &set)?;
    println!(
        "{} blocks, {} measurements, n_avg {:.3}",
        set.blocks.len(),
        set.total_measurements(),
        set.total_measurements() as f64 / set.blocks.len() as f64
    );
    Ok(())
}

/// `shape H W 3` followed by one value per line, in shortest round-trip form.
pub fn values_text(image: &ImageTensor) -> String {
    let mut out = String::from("shape");
    for d in image.shape() {
        write!(out, " {d}").expect("write to String");
    }
    out.push('\n');
    for v in image.data() {
        writeln!(out, "{v:e}").expect("write to String");
    }
    out
}

fn cmd_reconstruct(g: &Cli, a: &ReconArgs) -> CliResult<()> {
    let out = need(&g.out, "out")?;
    let model = sem_model(g)?;
    let set = measurements::load(&a.input)?;
    let decoded = model.decode(&set)?;
    ppm::save_image(out, &decoded.image)?;
    if let Some(p) = &a.values {
        std::fs::write(p, values_text(&decoded.image)).map_err(Error::from)?;
    }
    Ok(())
}

fn cmd_sparsity(g: &Cli, cfg: &RunConfig, a: &SparsityArgs) -> CliResult<()> {
    let model = match &g.checkpoint {
        Some(_) => Some(load_model(g)?),
        None => None,
    };
    let c = model.as_ref().map_or(cfg, |(ck, _)| &ck.config);
    let geom = c.geometry()?;
    let dict = oracle::build_dct_dictionary(geom.block())?;
    let (names, images) = load_images(&a.data, c.height, c.width)?;
    let mut report = SparsityReport::default();
    let mut csv = String::from("image,block,sparsity");
    if model.is_some() {
        csv.push_str(",popcount");
    }
    csv.push('\n');
    for (name, img) in names.iter().zip(&images) {
        let levels = oracle::block_sparsity_levels(img, &geom, &dict, a.threshold)?;
        let counts = match &model {
            Some((_, m)) => match m.reconstruct(img)?.1 {
                Some(mask) => Some(mask.popcounts()),
                None => {
                    return Err(CliError::Core(Error::InvalidArgument(
                        "allocation correlation needs a sembcs checkpoint".into(),
                    )))
                }
            },
            None => None,
        };
        for (k, l) in levels.iter().enumerate() {
            write!(csv, "{name},{k},{l}").expect("write to String");
            if let Some(c) = &counts {
                write!(csv, ",{}", c[k]).expect("write to String");
            }
            csv.push('\n');
        }
        report.levels.extend(&levels);
        if let Some(c) = counts {
            report.counts.extend(c);
        }
    }
    emit(&g.out, &csv)?;
    let mean = report.levels.iter().sum::<usize>() as f64 / report.levels.len() as f64;
    eprintln!("blocks {} mean sparsity {mean:.3}", report.levels.len());
    if model.is_some() {
        let rho = oracle::allocation_correlation(&report)?;
        println!("spearman {rho}");
    }
    Ok(())
}

fn cmd_synth(g: &Cli, cfg: &RunConfig, a: &SynthArgs) -> CliResult<()> {
    let out = need(&g.out, "out")?;
    let sc = SynthConfig {
        height: cfg.height,
        width: cfg.width,
        block: cfg.block,
        sparse_fraction: a.blocks_sparse,
        ..SynthConfig::default()
    };
    for (i, (split, count)) in [("train", a.train), ("val", a.val), ("test", a.test)]
        .into_iter()
        .enumerate()
    {
        if count == 0 {
            continue;
        }
        let dir = out.join(split);
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        let images = synth::generate(&sc, count, cfg.seed.wrapping_mul(3).wrapping_add(i as u64))?;
        let mut labels = String::from("image,block,textured\n");
        for (k, s) in images.iter().enumerate() {
            let name = format!("img_{k:04}.ppm");
            ppm::save_image(dir.join(&name), &s.image)?;
            for (b, t) in s.textured.iter().enumerate() {
                writeln!(labels, "{name},{b},{}", *t as u8).expect("write to String");
            }
        }
        std::fs::write(dir.join("textured.csv"), labels).map_err(Error::from)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
