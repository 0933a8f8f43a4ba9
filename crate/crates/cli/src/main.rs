use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gazebot_cli::pipeline::{generate_demos, lint_results, parse_log, segment, write_run};
use gazebot_cli::report::{report_segments, trace_csv};
use gazebot_cli::{run_pipeline, ResultTable, RunConfig};
use gazebot_core::dataset::{self, load_annotation, save, save_annotation, Demonstration, SegmentAnnotation};
use gazebot_core::policy::{train, Preset, TrainingData};
use gazebot_core::simenv::Condition;

#[derive(Parser)]
#[command(name = "gazebot", version, about = "Gaze-centered imitation pipeline harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted expert demonstrations.
    GenDemos {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "ID")]
        condition: String,
        /// Task and noise settings; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gaze_noise: Option<f64>,
        #[arg(long)]
        render_noise: Option<f64>,
    },
    /// Segment a dataset and write annotations plus predictivity traces.
    Segment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one preset on a segmented dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the full pipeline and write results.csv and trials.log.
    Eval {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        demos: Option<usize>,
        #[arg(long = "preset")]
        presets: Vec<String>,
        #[arg(long = "condition")]
        conditions: Vec<String>,
    },
    /// Check dataset invariants and/or a run's table against its trial log.
    Lint {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Compare detected bottlenecks with generator ground truth.
    Report {
        #[arg(long)]
        data: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn ann_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.ann"))
}

fn load_dataset(dir: &Path) -> Result<Vec<(String, Demonstration)>> {
    dataset::load_dir(dir).with_context(|| format!("loading demonstrations from {}", dir.display()))
}

/// Stored annotations, or `None` when any demo lacks one.
fn load_annotations(dir: &Path, demos: &[(String, Demonstration)]) -> Result<Option<Vec<SegmentAnnotation>>> {
    let mut out = Vec::new();
    for (name, demo) in demos {
        let p = ann_path(dir, name);
        if !p.exists() {
            return Ok(None);
        }
        let (ann, last) = load_annotation(&p).with_context(|| format!("loading {}", p.display()))?;
        if last != demo.last_step() {
            bail!("{} was written for a different demonstration", p.display());
        }
        out.push(ann);
    }
    Ok(Some(out))
}

fn gen_demos(
    out: &Path,
    count: u64,
    seed: u64,
    condition: &str,
    mut cfg: RunConfig,
    gaze_noise: Option<f64>,
    render_noise: Option<f64>,
) -> Result<()> {
    let condition = Condition::parse(condition).with_context(|| format!("unknown condition `{condition}`"))?;
    if let Some(g) = gaze_noise {
        cfg.gaze_noise = g;
    }
    if let Some(r) = render_noise {
        cfg.render_noise = r;
    }
    cfg.validate()?;
    let spec = cfg.scenario()?;
    let demos = generate_demos(&spec, condition, &cfg.expert(), seed..seed + count)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (demo, s) in demos.iter().zip(seed..) {
        save(demo, &out.join(format!("demo-{s:06}.demo"))).with_context(|| format!("writing demo {s}"))?;
    }
    println!("wrote {} demonstrations to {}", demos.len(), out.display());
    Ok(())
}

fn segment_cmd(data: &Path, cfg: &RunConfig) -> Result<()> {
    let demos = load_dataset(data)?;
    let plain: Vec<Demonstration> = demos.iter().map(|(_, d)| d.clone()).collect();
    let segs = segment(&plain, &cfg.segmentation())?;
    for ((name, demo), seg) in demos.iter().zip(&segs) {
        save_annotation(&seg.annotation, demo.last_step(), &ann_path(data, name))?;
        std::fs::write(data.join(format!("{name}.trace.csv")), trace_csv(seg)?)?;
    }
    println!("segmented {} demonstrations", demos.len());
    Ok(())
}

fn train_cmd(data: &Path, preset: &str, out: &Path, cfg: &RunConfig) -> Result<()> {
    let preset = Preset::parse(preset)?;
    let demos = load_dataset(data)?;
    let anns = load_annotations(data, &demos)?
        .with_context(|| format!("{} has unsegmented demonstrations; run `segment` first", data.display()))?;
    let plain: Vec<Demonstration> = demos.into_iter().map(|(_, d)| d).collect();
    let spec = cfg.scenario()?;
    let policy =
        train(preset, &cfg.policy_params(), &TrainingData { demos: &plain, annotations: &anns, camera: &spec.camera })
            .with_context(|| format!("stage train failed (preset {preset})"))?;
    policy.save(out)?;
    println!("wrote {preset} policy to {}", out.display());
    Ok(())
}

fn lint_cmd(data: Option<&Path>, run: Option<&Path>) -> Result<bool> {
    if data.is_none() && run.is_none() {
        bail!("lint needs --data and/or --run");
    }
    let mut clean = true;
    if let Some(dir) = data {
        let demos = load_dataset(dir)?;
        for (name, demo) in &demos {
            let mut issues = dataset::lint(demo);
            let p = ann_path(dir, name);
            if p.exists() {
                match load_annotation(&p) {
                    Ok((ann, _)) => issues.extend(dataset::lint_annotation(demo, &ann)),
                    Err(e) => eprintln!("{name}: annotation: {e}"),
                }
            }
            for i in &issues {
                eprintln!("{name}: {i}");
            }
            clean &= issues.is_empty();
        }
        println!("linted {} demonstrations", demos.len());
    }
    if let Some(dir) = run {
        let table = ResultTable::from_csv(&std::fs::read(dir.join("results.csv")).context("reading results.csv")?)?;
        let trials = parse_log(&std::fs::read_to_string(dir.join("trials.log")).context("reading trials.log")?)?;
        let issues = lint_results(&table, &trials);
        for i in &issues {
            eprintln!("results: {i}");
        }
        clean &= issues.is_empty();
        println!("checked {} table rows against {} trials", table.rows.len(), trials.len());
    }
    Ok(clean)
}

fn report_cmd(data: &Path, out: Option<&Path>) -> Result<()> {
    let demos = load_dataset(data)?;
    let anns = match load_annotations(data, &demos)? {
        Some(a) => a,
        None => {
            let plain: Vec<Demonstration> = demos.iter().map(|(_, d)| d.clone()).collect();
            segment(&plain, &RunConfig::default().segmentation())?.into_iter().map(|s| s.annotation).collect()
        }
    };
    let items: Vec<_> = demos.iter().zip(&anns).map(|((n, d), a)| (n.as_str(), d, a)).collect();
    let report = report_segments(&items);
    let csv = report.to_csv()?;
    match out {
        Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{}", String::from_utf8(csv)?),
    }
    eprint!("{}", report.summary());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenDemos { out, count, seed, condition, config, gaze_noise, render_noise } => {
            gen_demos(&out, count, seed, &condition, load_config(config.as_deref())?, gaze_noise, render_noise)?
        }
        Command::Segment { data, config } => segment_cmd(&data, &load_config(config.as_deref())?)?,
        Command::Train { data, preset, out, config } => {
            train_cmd(&data, &preset, &out, &load_config(config.as_deref())?)?
        }
        Command::Eval { seed, config, out, trials, demos, presets, conditions } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.seed = seed;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(d) = demos {
                cfg.demos = d;
            }
            if !presets.is_empty() {
                cfg.presets = presets;
            }
            if !conditions.is_empty() {
                cfg.conditions = conditions;
            }
            let output = run_pipeline(&cfg)?;
            write_run(&cfg.out_dir, &output)?;
            print!("{}", String::from_utf8(output.table.to_csv()?)?);
        }
        Command::Lint { data, run } => return lint_cmd(data.as_deref(), run.as_deref()),
        Command::Report { data, out } => report_cmd(&data, out.as_deref())?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
