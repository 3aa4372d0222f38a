use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use vtr_core::map_ops::ClusterConfig;
use vtr_core::runner::compress::run_compress;
use vtr_core::runner::eval::{format_table, path_chamfer, summarize};
use vtr_core::runner::io::{
    read_attachments, read_matches, read_metrics, read_trajectory, sidecar, write_rows, write_run,
    MapBundle, Metrics, ATTACHMENTS_FILE, MAP_FILE, MATCHES_FILE, METRICS_FILE, TRAJECTORY_FILE,
};
use vtr_core::runner::plot::{map_svg, matches_svg, trajectories_svg};
use vtr_core::runner::repeat::{run_repeat, RepeatOptions};
use vtr_core::runner::teach::run_teach;
use vtr_core::runner::Scenario;
use vtr_core::sim::CameraRig;

/// Visual teach and repeat on a simulated robot.
#[derive(Debug, Parser)]
#[command(name = "vtr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Drive the scenario's teach route and build a map.
    Teach {
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Cluster redundant keyframes of a map.
    Compress {
        map: PathBuf,
        /// Clustering similarity threshold.
        #[arg(long)]
        tau: Option<f64>,
        /// Scenario supplying camera intrinsics and clustering settings.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Repeat the taught route.
    Repeat {
        map: PathBuf,
        scenario: PathBuf,
        #[arg(long)]
        single_goal: bool,
        #[arg(long)]
        no_expansion: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Summarize repeat output directories.
    Eval {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the summary as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Render SVG figures for a teach or repeat output directory.
    Plot { dir: PathBuf },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VTR_LOG", "info")).init();
    match Cli::parse().command {
        Command::Teach { scenario, out } => teach(&scenario, &out),
        Command::Compress {
            map,
            tau,
            scenario,
            out,
        } => compress(&map, tau, scenario.as_deref(), &out),
        Command::Repeat {
            map,
            scenario,
            single_goal,
            no_expansion,
            seed,
            out,
        } => repeat(
            &map,
            &scenario,
            RepeatOptions {
                single_goal,
                no_expansion,
                seed,
            },
            &out,
        ),
        Command::Eval { dirs, csv } => eval(&dirs, csv.as_deref()),
        Command::Plot { dir } => plot(&dir),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    Scenario::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_map(path: &Path) -> Result<MapBundle> {
    MapBundle::load(path).with_context(|| format!("loading map {}", path.display()))
}

fn teach(scenario: &Path, out: &Path) -> Result<()> {
    let s = load_scenario(scenario)?;
    let t = run_teach(&s)?;
    let bundle = MapBundle {
        map: t.map,
        vocab: t.vocab,
        teach_path: t.path,
        keyframes: t.keyframes,
    };
    let path = out.join(MAP_FILE);
    bundle.save(&path)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn compress(map: &Path, tau: Option<f64>, scenario: Option<&Path>, out: &Path) -> Result<()> {
    let mut bundle = load_map(map)?;
    let (intrinsics, mut cfg) = match scenario {
        Some(p) => {
            let s = load_scenario(p)?;
            (s.rig()?.camera.intrinsics, s.cluster)
        }
        None => (CameraRig::default().intrinsics, ClusterConfig::default()),
    };
    if let Some(t) = tau {
        cfg.tau_cluster = t;
    }
    let report = run_compress(&mut bundle.map, &bundle.vocab, &intrinsics, &cfg)?;
    bundle.save(out)?;
    let text = report.to_text();
    fs::write(sidecar(out, "report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn repeat(map: &Path, scenario: &Path, opts: RepeatOptions, out: &Path) -> Result<()> {
    let s = load_scenario(scenario)?;
    let bundle = load_map(map)?;
    let seed = opts.seed.unwrap_or(s.repeat.seed);
    let (single_goal, expansion) = (opts.single_goal, !opts.no_expansion);
    let (mut report, expanded) = run_repeat(
        &s,
        bundle.map.clone(),
        &bundle.vocab,
        bundle.teach_end(),
        opts,
    )?;
    report.chamfer_distance = path_chamfer(&bundle.teach_path, &report.path);
    let metrics = Metrics::from_report(&s.name, seed, single_goal, expansion, &report);
    write_run(out, &report, &metrics)?;
    MapBundle {
        map: expanded,
        ..bundle
    }
    .save(&out.join(MAP_FILE))?;
    println!(
        "{}: {} end-point distance {:.3} m, success {}",
        s.name, metrics.termination, metrics.end_point_distance, metrics.success
    );
    Ok(())
}

fn eval(dirs: &[PathBuf], csv: Option<&Path>) -> Result<()> {
    let mut rows = Vec::new();
    for d in dirs {
        let p = d.join(METRICS_FILE);
        rows.extend(read_metrics(&p).with_context(|| format!("reading {}", p.display()))?);
    }
    if rows.is_empty() {
        bail!("no metrics found");
    }
    let summary = summarize(&rows);
    print!("{}", format_table(&summary));
    if let Some(path) = csv {
        write_rows(path, summary.iter())?;
    }
    Ok(())
}

fn plot(dir: &Path) -> Result<()> {
    let bundle = load_map(&dir.join(MAP_FILE))?;
    let alive: Vec<u64> = bundle.map.alive_ids().collect();
    let traj = dir.join(TRAJECTORY_FILE);
    let repeat = if traj.exists() {
        read_trajectory(&traj)?
    } else {
        Vec::new()
    };
    let matches_path = dir.join(MATCHES_FILE);
    let matches = if matches_path.exists() {
        read_matches(&matches_path)?
    } else {
        Vec::new()
    };
    let att_path = dir.join(ATTACHMENTS_FILE);
    let attachments = if att_path.exists() {
        read_attachments(&att_path)?
    } else {
        Vec::new()
    };

    let runs: Vec<(&str, &[_])> = if repeat.is_empty() {
        vec![]
    } else {
        vec![("repeat", &repeat[..])]
    };
    fs::write(
        dir.join("trajectories.svg"),
        trajectories_svg(&bundle.teach_path, &runs),
    )?;
    fs::write(
        dir.join("matches.svg"),
        matches_svg(&bundle.teach_path, &repeat, &matches, &bundle.keyframes),
    )?;
    fs::write(
        dir.join("map.svg"),
        map_svg(&bundle.keyframes, &alive, &attachments),
    )?;
    info!("wrote plots to {}", dir.display());
    Ok(())
}
