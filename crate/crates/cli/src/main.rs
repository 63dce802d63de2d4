//! Command-line front end: train, evaluate, ablate, run the reference
//! solver and export fields.

use clap::{Args, Parser, Subcommand, ValueEnum};
use lpbf_pinn::config::{ablation_suite, apply_arm, RunConfig, ABLATION_ARMS, DESK_OVERRIDES};
use lpbf_pinn::model::{NetworkParams, Normalizer, Surrogate};
use lpbf_pinn::oracle::{self, fdm_solve, Evaluation, Grid, TemperatureField};
use lpbf_pinn::physics::{MaterialLibrary, MaterialProps};
use lpbf_pinn::train::{train, Observer, RecordWriter, TrainOutcome, TrainRecord};
use lpbf_pinn::{Error, Result};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lpbf-pinn", version, about = "Parametric PINN surrogate for LPBF thermal fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its checkpoint and loss history
    Train(RunArgs),
    /// Score a trained run against the finite-difference reference
    Eval(EvalArgs),
    /// Train and score a set of ablation arms over several seeds
    Ablate(AblateArgs),
    /// Solve the reference problem for one alloy and write probes and fields
    Oracle(OracleArgs),
    /// Write model-predicted fields on the reference grid
    Export(ExportArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML configuration; may be partial
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// output scaling mode, e.g. physics-guided or softplus-only
    #[arg(long)]
    scaling: Option<String>,
    /// network architecture, e.g. decoupled or p-pinn
    #[arg(long)]
    architecture: Option<String>,
    /// output directory (defaults to $LPBF_PINN_OUT, then the configured one)
    #[arg(long, env = "LPBF_PINN_OUT")]
    out: Option<PathBuf>,
    /// dotted-key override, e.g. --set optimizer.lr_adam=1e-3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Paper,
    Desk,
}

#[derive(Args)]
struct EvalArgs {
    /// directory written by `train`
    run: PathBuf,
    /// alloy names; defaults to the configured evaluation set
    #[arg(long = "material")]
    materials: Vec<String>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// named group of arms: scaling, kappa, optimizer or architecture
    #[arg(long, conflicts_with = "arms")]
    suite: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "physics-guided,softplus-only,monolithic,adam-only")]
    arms: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "Ti-6Al-4V")]
    material: String,
    /// write full fields as VTK instead of CSV
    #[arg(long)]
    vtk: bool,
}

#[derive(Args)]
struct ExportArgs {
    run: PathBuf,
    #[arg(long, default_value = "Ti-6Al-4V")]
    material: String,
    /// snapshot times in seconds; defaults to the configured ones
    #[arg(long = "time", value_delimiter = ',')]
    times: Vec<f64>,
    #[arg(long)]
    vtk: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Export(a) => cmd_export(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match args.profile {
        Some(ProfileArg::Desk) => RunConfig::desk(),
        _ => RunConfig::default(),
    };
    if let Some(path) = &args.config {
        cfg.overlay_file(path)?;
    }
    if let Some(ProfileArg::Desk) = args.profile {
        cfg.apply_overrides(&DESK_OVERRIDES[..1])?;
    }
    if let Some(ProfileArg::Paper) = args.profile {
        cfg.apply_overrides(&["sampling.profile=\"paper\""])?;
    }
    if let Some(v) = &args.scaling {
        cfg.apply_overrides(&[format!("network.scaling=\"{v}\"")])?;
    }
    if let Some(v) = &args.architecture {
        cfg.apply_overrides(&[format!("network.architecture=\"{v}\"")])?;
    }
    cfg.apply_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.sampling.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Progress<W: Write> {
    history: RecordWriter<W>,
    every: usize,
    reference: Option<(MaterialProps, Vec<TemperatureField>)>,
    eval_every: usize,
}

impl<W: Write> Observer for Progress<W> {
    fn evaluate(&mut self, epoch: usize, model: &Surrogate) -> Result<Option<f64>> {
        match &self.reference {
            Some((m, r)) if self.eval_every > 0 && (epoch + 1) % self.eval_every == 0 => {
                oracle::surrogate_l2(model, m, r).map(Some)
            }
            _ => Ok(None),
        }
    }

    fn record(&mut self, r: &TrainRecord, _params: &NetworkParams) -> Result<()> {
        self.history.write(r)?;
        if self.every > 0 && (r.epoch % self.every == 0 || r.rel_l2.is_some()) {
            eprintln!(
                "epoch {:5} {:10} total {:.4e} pde {:.3e} bc {:.3e} ic {:.3e}{} {:.1}s",
                r.epoch,
                r.phase.name(),
                r.total,
                r.l_pde,
                r.l_bc,
                r.l_ic,
                r.rel_l2.map(|v| format!(" L2 {v:.2}%")).unwrap_or_default(),
                r.wall_time
            );
        }
        Ok(())
    }
}

fn material(name: &str) -> Result<MaterialProps> {
    MaterialLibrary::default().get(name)
}

fn reference(cfg: &RunConfig, m: &MaterialProps) -> Result<Vec<TemperatureField>> {
    let mut prob = oracle::FdmProblem::bare_plate(&cfg.process, *m, cfg.evaluation.grid_spacing);
    prob.output_interval = cfg.evaluation.output_interval;
    oracle::solve(&prob)
}

fn run_training(cfg: &RunConfig, dir: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let reference = match cfg.evaluation.materials.first() {
        Some(name) if cfg.evaluation.eval_every > 0 => {
            let m = material(name)?;
            Some((m, reference(cfg, &m)?))
        }
        _ => None,
    };
    let mut obs = Progress {
        history: RecordWriter::new(BufWriter::new(File::create(dir.join("history.csv"))?))?,
        every: 100,
        reference,
        eval_every: cfg.evaluation.eval_every,
    };
    let out = train(cfg, &mut obs)?;
    out.params().save(&dir.join("params.bin"))?;
    let last = out.records.last();
    let manifest = format!(
        "version = \"{}\"\nseed = {}\narchitecture = \"{}\"\nscaling = \"{}\"\nprofile = \"{}\"\nepochs = {}\nparameters = {}\nresamples = {}\nfinal_total = {}\nwall_time = {}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.sampling.seed,
        cfg.network.architecture.name(),
        cfg.network.scaling.name(),
        cfg.sampling.profile.name(),
        out.records.len(),
        out.params().param_count(),
        out.resamples,
        last.map(|r| r.total).unwrap_or(f64::NAN),
        last.map(|r| r.wall_time).unwrap_or(0.0),
    );
    fs::write(dir.join("manifest.toml"), manifest)?;
    Ok(out)
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let cfg = resolve(args)?;
    let dir = cfg.output_dir.clone();
    let out = run_training(&cfg, &dir)?;
    let last = out.records.last().expect("at least one epoch");
    println!(
        "trained {} epochs in {:.1}s, final total loss {:.4e}, written to {}",
        out.records.len(),
        last.wall_time,
        last.total,
        dir.display()
    );
    Ok(())
}

fn load_run(dir: &Path) -> Result<(RunConfig, Surrogate)> {
    let cfg = RunConfig::load(&dir.join("config.toml"))?;
    let params = NetworkParams::load(&dir.join("params.bin"))?;
    if params.architecture != cfg.network.architecture {
        return Err(Error::Config("checkpoint architecture differs from config.toml".into()));
    }
    let model = Surrogate {
        params,
        normalizer: Normalizer::new(&cfg.process, &cfg.materials),
        scaling: cfg.network.scaling_config(),
        process: cfg.process.clone(),
    };
    Ok((cfg, model))
}

fn score(cfg: &RunConfig, model: &Surrogate, name: &str) -> Result<Evaluation> {
    let m = material(name)?;
    oracle::evaluate(model, &m, &reference(cfg, &m)?, &cfg.evaluation.probes)
}

const METRICS_HEADER: &str = "material,rel_l2,peak_model,peak_reference,probe_peak_time_model,probe_peak_time_reference";

fn metrics_row(name: &str, e: &Evaluation) -> String {
    let (pm, pr) = e
        .probes
        .first()
        .map(|(a, b)| (a.peak_time(), b.peak_time()))
        .unwrap_or((f64::NAN, f64::NAN));
    format!("{name},{},{},{},{pm},{pr}", e.rel_l2, e.peak_model, e.peak_reference)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (cfg, model) = load_run(&args.run)?;
    let names = if args.materials.is_empty() {
        cfg.evaluation.materials.clone()
    } else {
        args.materials.clone()
    };
    let mut w = BufWriter::new(File::create(args.run.join("metrics.csv"))?);
    writeln!(w, "{METRICS_HEADER},out_of_distribution")?;
    for name in &names {
        let m = material(name)?;
        let ood = !cfg.materials.contains(&m);
        let fields = reference(&cfg, &m)?;
        let e = oracle::evaluate(&model, &m, &fields, &cfg.evaluation.probes)?;
        println!(
            "{name:12} relative L2 {:6.2}%  peak {:7.1} K (reference {:7.1} K){}",
            e.rel_l2,
            e.peak_model,
            e.peak_reference,
            if ood { "  [outside training material space]" } else { "" }
        );
        writeln!(w, "{},{ood}", metrics_row(name, &e))?;
        for (i, (pm, pr)) in e.probes.iter().enumerate() {
            pm.write_csv(File::create(args.run.join(format!("probe{i}-{name}-model.csv")))?)?;
            pr.write_csv(File::create(args.run.join(format!("probe{i}-{name}-reference.csv")))?)?;
        }
        for t in &cfg.evaluation.snapshot_times {
            if let Some(f) = nearest(&fields, *t) {
                write_field(f, &args.run, &format!("reference-{name}"), false)?;
                let predicted = TemperatureField {
                    values: model.temperatures(&f.points(), &m)?,
                    ..f.clone()
                };
                write_field(&predicted, &args.run, &format!("model-{name}"), false)?;
            }
        }
    }
    Ok(())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Trains one arm at one seed and scores it on every evaluation alloy.
fn ablate_one(base: &RunConfig, root: &Path, arm: &str, seed: u64) -> Result<(f64, Vec<(String, Evaluation)>)> {
    let mut cfg = base.clone();
    apply_arm(&mut cfg, arm)?;
    cfg.sampling.seed = seed;
    cfg.output_dir = root.join(arm).join(format!("seed-{seed}"));
    cfg.validate()?;
    let out = run_training(&cfg, &cfg.output_dir)?;
    let total = out.records.last().map(|r| r.total).unwrap_or(f64::NAN);
    let mut scores = Vec::new();
    for name in &cfg.evaluation.materials {
        scores.push((name.clone(), score(&cfg, &out.surrogate, name)?));
    }
    Ok((total, scores))
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let base = resolve(&args.run)?;
    let arms: Vec<String> = match &args.suite {
        Some(name) => ablation_suite(name)?.iter().map(|a| a.to_string()).collect(),
        None => args.arms.clone(),
    };
    for arm in &arms {
        apply_arm(&mut base.clone(), arm).map_err(|_| {
            Error::Config(format!("unknown ablation arm `{arm}`; known: {}, kappa-<value>", ABLATION_ARMS.join(", ")))
        })?;
    }
    let root = base.output_dir.clone();
    fs::create_dir_all(&root)?;
    let mut w = BufWriter::new(File::create(root.join("ablation.csv"))?);
    writeln!(w, "arm,seed,final_total,{METRICS_HEADER}")?;
    let mut summary = BufWriter::new(File::create(root.join("summary.csv"))?);
    writeln!(summary, "arm,runs,failed,rel_l2_mean,rel_l2_std,final_total_mean,final_total_std")?;
    let mut failures = 0;
    for arm in &arms {
        let (mut l2, mut totals, mut failed) = (Vec::new(), Vec::new(), 0);
        for &seed in &args.seeds {
            match ablate_one(&base, &root, arm, seed) {
                Ok((total, scores)) => {
                    totals.push(total);
                    for (name, e) in &scores {
                        writeln!(w, "{arm},{seed},{total},{}", metrics_row(name, e))?;
                        l2.push(e.rel_l2);
                    }
                }
                Err(e) => {
                    eprintln!("{arm} seed {seed} failed: {e}");
                    failed += 1;
                }
            }
            w.flush()?;
        }
        failures += failed;
        let (lm, ls) = mean_std(&l2);
        let (tm, ts) = mean_std(&totals);
        writeln!(summary, "{arm},{},{failed},{lm},{ls},{tm},{ts}", totals.len())?;
        println!("{arm:16} relative L2 {lm:6.2} ± {ls:5.2}%  final loss {tm:.3e}  ({failed} failed)");
    }
    summary.flush()?;
    if failures > 0 {
        return Err(Error::Config(format!("{failures} ablation run(s) failed")));
    }
    Ok(())
}

fn write_field(f: &TemperatureField, dir: &Path, stem: &str, vtk: bool) -> Result<()> {
    let ext = if vtk { "vtk" } else { "csv" };
    let w = BufWriter::new(File::create(dir.join(format!("{stem}-t{:.2}.{ext}", f.time)))?);
    if vtk {
        oracle::write_field_vtk(f, w)
    } else {
        oracle::write_field_csv(f, w)
    }
}

fn nearest(fields: &[TemperatureField], t: f64) -> Option<&TemperatureField> {
    fields
        .iter()
        .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let cfg = resolve(&args.run)?;
    let m = material(&args.material)?;
    let fields = fdm_solve(&cfg.process, &m, cfg.evaluation.grid_spacing, cfg.process.t_end)?;
    let dir = cfg.output_dir.join(format!("oracle-{}", args.material));
    fs::create_dir_all(&dir)?;
    for (i, loc) in cfg.evaluation.probes.iter().enumerate() {
        oracle::probe(&fields, *loc)?.write_csv(File::create(dir.join(format!("probe{i}.csv")))?)?;
    }
    for t in &cfg.evaluation.snapshot_times {
        if let Some(f) = nearest(&fields, *t) {
            write_field(f, &dir, "reference", args.vtk)?;
        }
    }
    let peak = fields.iter().map(|f| f.max()).fold(f64::NEG_INFINITY, f64::max);
    println!("{}: peak {:.1} K, {} snapshots, written to {}", args.material, peak, fields.len(), dir.display());
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    let (cfg, model) = load_run(&args.run)?;
    let m = material(&args.material)?;
    let grid = Grid::covering(cfg.process.domain, cfg.evaluation.grid_spacing);
    let times = if args.times.is_empty() {
        cfg.evaluation.snapshot_times.clone()
    } else {
        args.times.clone()
    };
    for t in times {
        if !(0.0..=cfg.process.t_end).contains(&t) {
            return Err(Error::Config(format!("time {t} s lies outside [0, {}]", cfg.process.t_end)));
        }
        let mut f = TemperatureField {
            grid,
            time: t,
            values: Vec::new(),
            material: m,
        };
        f.values = model.temperatures(&f.points(), &m)?;
        write_field(&f, &args.run, &format!("model-{}", args.material), args.vtk)?;
    }
    Ok(())
}
