use std::path::{Path, PathBuf};
use std::time::Instant;

use flowcast_core::checkpoint::{load_field, save_field};
use flowcast_core::dataset::{atomic_write, fmt_f64, pooled_stats};
use flowcast_core::dynamics::{
    gen_blob_dataset, gen_pp_dataset, BlobConfig, InitSampler, LvParams, ORACLE_DT,
};
use flowcast_core::ensemble::state_hash;
use flowcast_core::flow::{train_forecast_flow, train_gaussify_flow};
use flowcast_core::integrate::{bench_integration, propagate_ensemble, CostProblem, DEFAULT_STEPS};
use flowcast_core::metrics::{compare, mean_score, std_score};
use flowcast_core::perturb::{gen_perturbed_ensemble, DEFAULT_MEMBERS, DEFAULT_SIGMA};
use flowcast_core::{
    CostReport, Dataset, Dims, Ensemble, EnsembleMeta, Error, FieldKind, MetricsReport, NoiseFamily,
    NoiseSpec, Result, Scheme, State, TrainConfig, VelocityField,
};
use ndarray::Array1;

use crate::config::{RunConfig, Widths};
use crate::plot;
use crate::{
    BenchArgs, Cli, Command, ForecastArgs, GenDataArgs, Generator, MetricsArgs, NoiseArgs,
    PerturbArgs, SourceArgs, TrainArgs,
};

pub const ODE_SWEEP: [usize; 4] = [1, 10, 100, 1000];
pub const SDE_SWEEP: [usize; 3] = [10, 100, 1000];

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::GenData(a) => gen_data(&cfg, a),
        Command::Train(a) => train(&cfg, a),
        Command::Forecast(a) => forecast(&cfg, a),
        Command::Perturb(a) => perturb(&cfg, a),
        Command::Metrics(a) => metrics(&cfg, a),
        Command::Bench(a) => bench(&cfg, a),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{what} '{}' does not exist", path.display())))
    }
}

fn required_path(cfg: &RunConfig, flag: Option<PathBuf>, key: &str, what: &str) -> Result<PathBuf> {
    let p = cfg
        .path(flag, key)?
        .ok_or_else(|| Error::Usage(format!("no {what} given (--{} or '{key}' in the config)", key.replace('_', "-"))))?;
    require_file(&p, what)?;
    Ok(p)
}

fn load_kind(path: &Path, kind: FieldKind) -> Result<VelocityField> {
    let field = load_field(path)
        .map_err(|e| Error::Usage(format!("cannot load checkpoint '{}': {e}", path.display())))?;
    field.require(kind)?;
    Ok(field)
}

fn gen_data(cfg: &RunConfig, a: GenDataArgs) -> Result<()> {
    let out = cfg.output(a.out)?;
    let seed = cfg.seed(a.seed)?;
    let n = cfg.pick(a.n, "n", 1000usize)?;
    let ds = match a.generator {
        Generator::PpGaussian | Generator::PpUniformY2 => {
            let sampler = if a.generator == Generator::PpGaussian {
                InitSampler::paper_gaussian()
            } else {
                InitSampler::FixedY1UniformY2 {
                    lo: cfg.pick(a.lo, "lo", 0.1)?,
                    hi: cfg.pick(a.hi, "hi", 1.0)?,
                }
            };
            let horizon = cfg.pick(a.horizon, "horizon", 200.0)?;
            let dt = cfg.pick(a.dt, "dt", ORACLE_DT)?;
            if !(horizon > 0.0 && dt > 0.0) {
                return Err(Error::Config("horizon and dt must be positive".into()));
            }
            gen_pp_dataset(n, horizon, &sampler, &LvParams::default(), seed, dt)?
        }
        Generator::Blob => {
            let size = cfg.pick(a.size, "size", 16usize)?;
            let mut bc = BlobConfig::new(size, size, cfg.pick(a.jitter, "jitter", 0.1)?);
            bc.horizon = cfg.pick(a.horizon, "horizon", bc.horizon)?;
            gen_blob_dataset(n, &bc, seed)?
        }
    };
    if n == 0 {
        eprintln!("warning: writing an empty dataset");
    }
    ds.write(&out)?;
    if let Some(csv) = a.csv {
        if ds.dims.is_grid() {
            return Err(Error::Usage("CSV export is only available for vector states".into()));
        }
        atomic_write(&cfg.output(csv)?, ds.to_csv().as_bytes())?;
    }
    println!("wrote {}", out.display());
    println!("pairs        {}", ds.len());
    println!("dims         {}", ds.dims);
    println!("horizon      {}", fmt_f64(ds.horizon));
    if !ds.is_empty() {
        let (pm, ps) = ds.pooled_target_stats();
        let (sm, ss) = pooled_stats(ds.sources());
        println!("initial      mean {sm:.4}  sd {ss:.4}");
        println!("final        mean {pm:.4}  sd {ps:.4}");
    }
    Ok(())
}

fn train(cfg: &RunConfig, a: TrainArgs) -> Result<()> {
    let data = required_path(cfg, a.data, "data", "dataset")?;
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        lr: cfg.pick(a.lr, "lr", defaults.lr)?,
        batch_size: cfg.pick(a.batch, "batch", defaults.batch_size)?,
        epochs: cfg.pick(a.epochs, "epochs", defaults.epochs)?,
        seed: cfg.seed(a.seed)?,
        hidden: cfg.pick(a.hidden, "hidden", Widths(defaults.hidden.clone()))?.0,
        activation: cfg.pick(a.activation, "activation", defaults.activation)?,
    };
    tc.validate()?;
    let out = cfg.output(a.out)?;
    let log = match a.log {
        Some(p) => cfg.output(p)?,
        None => {
            let mut s = out.clone().into_os_string();
            s.push(".log");
            PathBuf::from(s)
        }
    };
    let ds = Dataset::read(&data)?;
    let started = Instant::now();
    let (field, report) = match a.mode {
        FieldKind::Forecast => train_forecast_flow(&ds, &tc)?,
        FieldKind::Gaussify => train_gaussify_flow(&ds, &tc)?,
    };
    save_field(&field, &out)?;
    atomic_write(&log, report.to_log().as_bytes())?;
    println!(
        "trained {} field on {} pairs: {} epochs, final loss {:.6e} ({:.1}s)",
        a.mode.name(),
        ds.len(),
        tc.epochs,
        report.final_loss(),
        started.elapsed().as_secs_f64()
    );
    println!("wrote {} and {}", out.display(), log.display());
    Ok(())
}

/// The single state to perturb.
fn source_state(cfg: &RunConfig, s: &SourceArgs) -> Result<(State, Option<Dims>)> {
    if let Some(c) = &s.state {
        return Ok((Array1::from(c.0.clone()), None));
    }
    let input = required_path(cfg, s.input.clone(), "data", "input file")?;
    let e = Ensemble::read_sources(&input)?;
    let state = e.members().get(s.index).cloned().ok_or_else(|| {
        Error::Usage(format!("index {} out of range for {} states", s.index, e.len()))
    })?;
    Ok((state, Some(e.dims())))
}

fn noise_spec(cfg: &RunConfig, n: &NoiseArgs, seed: u64) -> Result<(NoiseSpec, usize)> {
    let family = cfg.pick(n.noise, "noise", NoiseFamily::Normal)?;
    let sigma = cfg.pick(n.sigma, "sigma", DEFAULT_SIGMA)?;
    let members = cfg.pick(n.members, "members", DEFAULT_MEMBERS)?;
    if members == 0 {
        return Err(Error::Usage("--members must be at least 1".into()));
    }
    Ok((NoiseSpec::new(family, sigma, seed)?, members))
}

fn perturbed(
    cfg: &RunConfig,
    gaussify: &VelocityField,
    source: &SourceArgs,
    noise: &NoiseArgs,
    steps: usize,
    seed: u64,
) -> Result<Ensemble> {
    let (q0, dims) = source_state(cfg, source)?;
    if q0.len() != gaussify.state_dim() {
        return Err(Error::Usage(format!(
            "state has {} components but the gaussify field expects {}",
            q0.len(),
            gaussify.state_dim()
        )));
    }
    let (spec, m) = noise_spec(cfg, noise, seed)?;
    let e = gen_perturbed_ensemble(gaussify, &q0, &spec, m, steps)?;
    match dims {
        Some(d) => e.reshaped(d),
        None => Ok(e),
    }
}

fn write_outputs(cfg: &RunConfig, e: &Ensemble, out: PathBuf, csv: Option<PathBuf>) -> Result<()> {
    let out = cfg.output(out)?;
    e.write(&out)?;
    if let Some(csv) = csv {
        atomic_write(&cfg.output(csv)?, plot::ensemble_csv(e).as_bytes())?;
    }
    println!("wrote {} ({} members of {})", out.display(), e.len(), e.dims());
    println!("mean score {:.6e}  std score {:.6e}", mean_score(e), std_score(e));
    Ok(())
}

fn forecast(cfg: &RunConfig, a: ForecastArgs) -> Result<()> {
    let model_path = required_path(cfg, a.model, "model", "forecast checkpoint")?;
    let field = load_kind(&model_path, FieldKind::Forecast)?;
    let steps = cfg.pick(a.steps, "steps", DEFAULT_STEPS)?;
    let seed = cfg.seed(a.seed)?;

    let e0 = match cfg.path(a.perturb, "perturb_model")? {
        Some(p) => {
            require_file(&p, "gaussify checkpoint")?;
            let gaussify = load_kind(&p, FieldKind::Gaussify)?;
            perturbed(cfg, &gaussify, &a.source, &a.noise, steps, seed)?
        }
        None => {
            if a.noise.sigma.is_some() || a.noise.members.is_some() || a.noise.noise.is_some() {
                return Err(Error::Usage("--sigma/--members/--noise need --perturb".into()));
            }
            match &a.source.state {
                Some(c) => Ensemble::new(
                    Dims::vector(c.0.len()),
                    vec![Array1::from(c.0.clone())],
                    EnsembleMeta::new("state"),
                )?,
                None => {
                    let input = required_path(cfg, a.source.input.clone(), "data", "input file")?;
                    Ensemble::read_sources(&input)?
                }
            }
        }
    };
    if e0.dims().len() != field.state_dim() {
        return Err(Error::Usage(format!(
            "states have {} components but the forecast field expects {}",
            e0.dims().len(),
            field.state_dim()
        )));
    }
    let e1 = propagate_ensemble(&field, &e0, steps)?;
    if let Some(svg) = a.svg {
        if e1.dims().is_grid() {
            return Err(Error::Usage("SVG scatter needs vector states".into()));
        }
        let doc = plot::scatter_svg(&[("initial", &e0), ("forecast", &e1)]);
        atomic_write(&cfg.output(svg)?, doc.as_bytes())?;
    }
    write_outputs(cfg, &e1, a.out, a.csv)
}

fn perturb(cfg: &RunConfig, a: PerturbArgs) -> Result<()> {
    let model_path = required_path(cfg, a.model, "model", "gaussify checkpoint")?;
    let field = load_kind(&model_path, FieldKind::Gaussify)?;
    let steps = cfg.pick(a.steps, "steps", DEFAULT_STEPS)?;
    let seed = cfg.seed(a.seed)?;
    let e = perturbed(cfg, &field, &a.source, &a.noise, steps, seed)?;
    if let Some(src) = e.origins().map(|o| &o[0]) {
        println!("source state hash {}", state_hash(src));
    }
    write_outputs(cfg, &e, a.out, a.csv)
}

fn metrics(cfg: &RunConfig, a: MetricsArgs) -> Result<()> {
    require_file(&a.pred, "prediction file")?;
    require_file(&a.truth, "reference file")?;
    let pred = Ensemble::read(&a.pred)?;
    let truth = Ensemble::read(&a.truth)?;
    if pred.dims() != truth.dims() {
        return Err(Error::Usage(format!(
            "prediction is {} but reference is {}",
            pred.dims(),
            truth.dims()
        )));
    }
    let range = cfg.pick(a.range, "range", 1.0)?;
    let report = compare(&pred, &truth, range)?;
    let method = a.method.unwrap_or_else(|| {
        a.pred
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "pred".into())
    });
    let row = report.csv_row(&method);
    println!("{report}");
    println!("{}", MetricsReport::CSV_HEADER);
    println!("{row}");
    if let Some(out) = a.out {
        let text = format!("{}\n{row}\n", MetricsReport::CSV_HEADER);
        atomic_write(&cfg.output(out)?, text.as_bytes())?;
    }
    Ok(())
}

/// Enough repetitions that short solves are still measurable.
fn repeats(n: usize) -> usize {
    (20_000 / n).max(20)
}

pub fn bench_rows(seed: u64) -> Result<Vec<CostReport>> {
    let problem = CostProblem {
        seed,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for (scheme, sweep) in [
        (Scheme::OdeEuler, &ODE_SWEEP[..]),
        (Scheme::SdeEulerMaruyama, &SDE_SWEEP[..]),
    ] {
        for &n in sweep {
            let reps = repeats(n);
            let start = Instant::now();
            let mut last = None;
            for _ in 0..reps {
                last = Some(bench_integration(scheme, n, &problem)?);
            }
            let mut report = last.expect("at least one repetition");
            report.wall_time = start.elapsed().as_secs_f64() / reps as f64;
            rows.push(report);
        }
    }
    Ok(rows)
}

fn bench(cfg: &RunConfig, a: BenchArgs) -> Result<()> {
    let rows = bench_rows(cfg.seed(a.seed)?)?;
    let mut text = format!("{}\n", CostReport::CSV_HEADER);
    for r in &rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    print!("{text}");
    if let Some(out) = a.out {
        atomic_write(&cfg.output(out)?, text.as_bytes())?;
    }
    Ok(())
}
