use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use segtrack_core::bridge::{serve, BridgeBackend};
use segtrack_core::engine::{render_trace, run_sequence, Components};
use segtrack_core::io::{
    detection_rows, ground_truth_rows, predictions_from_results, read_detections,
    read_ground_truth, read_predictions, render_rows, result_rows,
};
use segtrack_core::mask::ImageGrid;
use segtrack_core::metrics::{evaluate, EvalReport};
use segtrack_core::synthetic::{run_scenario, Scenario, SimParams, SyntheticBackend};
use segtrack_core::trajectory::{Detection, TrackerConfig};

#[derive(Parser)]
#[command(name = "segtrack", version, about = "Tracking-by-segmentation control plane")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a detection file with the synthetic model or an external bridge.
    Track(TrackArgs),
    /// Generate a scenario's ground truth and detections, track, and evaluate.
    Simulate(SimulateArgs),
    /// Score a result file against ground truth.
    Evaluate(EvaluateArgs),
    /// Compare pipeline variants on one or more scenarios.
    Ablate(AblateArgs),
    /// Serve the synthetic model over the bridge protocol on stdin/stdout.
    #[command(hide = true)]
    ServeSynthetic(ServeArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TrackerConfig JSON; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// SimParams JSON for the synthetic world.
    #[arg(long)]
    sim_config: Option<PathBuf>,
    /// Overrides the SimParams seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn tracker(&self) -> Result<TrackerConfig> {
        match &self.config {
            Some(path) => {
                let text = read_text(path)?;
                TrackerConfig::from_json(&text).with_context(|| format!("bad config {}", path.display()))
            }
            None => Ok(TrackerConfig::default()),
        }
    }

    fn sim(&self) -> Result<SimParams> {
        let mut params = match &self.sim_config {
            Some(path) => serde_json::from_str(&read_text(path)?)
                .with_context(|| format!("bad sim config {}", path.display()))?,
            None => SimParams::default(),
        };
        if let Some(seed) = self.seed {
            params.seed = seed;
        }
        Ok(params)
    }
}

#[derive(Args, Clone, Copy)]
struct Toggles {
    /// Disable detector-driven addition after the first frame with objects.
    #[arg(long)]
    no_add: bool,
    /// Disable cross-object occlusion arbitration.
    #[arg(long)]
    no_coi: bool,
    /// Disable quality reconstruction.
    #[arg(long)]
    no_qr: bool,
}

impl Toggles {
    fn any(&self) -> bool {
        self.no_add || self.no_coi || self.no_qr
    }

    fn components(&self) -> Components {
        Components { add: !self.no_add, coi: !self.no_coi, qr: !self.no_qr }
    }
}

#[derive(Args)]
struct TrackArgs {
    /// Detection CSV (frame,id,x,y,w,h,conf,class,vis).
    #[arg(long)]
    detections: PathBuf,
    /// Synthetic model following this scenario's world.
    #[arg(long, conflicts_with = "bridge")]
    scenario: Option<Scenario>,
    /// Image size as WxH; required with a bridge.
    #[arg(long)]
    grid: Option<ImageGrid>,
    /// Number of frames; defaults to the scenario length or the last detection frame.
    #[arg(long)]
    frames: Option<u32>,
    /// Result CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON-lines lifecycle trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    toggles: Toggles,
    /// Bridge command line, after `--`.
    #[arg(last = true)]
    bridge: Vec<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: Scenario,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    toggles: Toggles,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    results: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AblateArgs {
    /// Scenario to run; repeat for several.
    #[arg(long, required = true)]
    scenario: Vec<Scenario>,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Independent runs to execute concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Adds a row for this toggle combination.
    #[command(flatten)]
    toggles: Toggles,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    scenario: Scenario,
    #[command(flatten)]
    cfg: ConfigArgs,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Track(args) => track(args),
        Command::Simulate(args) => simulate(args),
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Ablate(args) => ablate(args),
        Command::ServeSynthetic(args) => serve_synthetic(args),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn track(args: TrackArgs) -> Result<()> {
    let cfg = args.cfg.tracker()?;
    let components = args.toggles.components();
    let output = match (args.scenario, args.bridge.split_first()) {
        (Some(scenario), None) => {
            let script = scenario.script();
            let params = args.cfg.sim()?;
            params.validate(&cfg)?;
            let grid = args.grid.unwrap_or(script.grid);
            if grid != script.grid {
                bail!("--grid {grid} disagrees with scenario grid {}", script.grid);
            }
            let dets = read_detections(&args.detections, Some(grid))?;
            let frames = args.frames.unwrap_or(script.frames);
            let backend = SyntheticBackend::new(script, params)?;
            run_sequence(frames, &dets, backend, grid, &cfg, components)?
        }
        (None, Some((program, rest))) => {
            let grid = args.grid.context("--grid is required with a bridge")?;
            let dets = read_detections(&args.detections, Some(grid))?;
            let frames = frame_count(args.frames, &dets);
            let mut client = BridgeBackend::spawn(program, rest, grid)
                .with_context(|| format!("cannot start bridge {program}"))?;
            let output = run_sequence(frames, &dets, &mut client, grid, &cfg, components)?;
            client.shutdown()?;
            output
        }
        (None, None) => bail!("need --scenario or a bridge command after `--`"),
        (Some(_), Some(_)) => bail!("--scenario and a bridge command are exclusive"),
    };
    write_text(&args.out, &render_rows(&result_rows(&output.results)))?;
    if let Some(path) = &args.trace {
        write_text(path, &render_trace(&output.trace))?;
    }
    Ok(())
}

fn frame_count(frames: Option<u32>, dets: &BTreeMap<u32, Vec<Detection>>) -> u32 {
    frames.unwrap_or_else(|| dets.keys().next_back().copied().unwrap_or(0))
}

const REPORT_THRESHOLDS: [f64; 2] = [0.5, 0.4];

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = args.cfg.tracker()?;
    let params = args.cfg.sim()?;
    let components = args.toggles.components();
    let script = args.scenario.script();
    let run = run_scenario(&script, &params, &cfg, components)?;

    let out = &args.out;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let gt_rows: Vec<_> = run.ground_truth.iter().map(|(g, _)| *g).collect();
    let vis: BTreeMap<(u32, i64), f64> =
        run.ground_truth.iter().map(|(g, v)| ((g.frame, g.id), *v)).collect();
    write_text(
        &out.join("gt.csv"),
        &render_rows(&ground_truth_rows(&gt_rows, |g| vis[&(g.frame, g.id)])),
    )?;
    write_text(&out.join("detections.csv"), &render_rows(&detection_rows(&run.detections)))?;
    write_text(&out.join("results.csv"), &render_rows(&result_rows(&run.output.results)))?;
    write_text(&out.join("trace.jsonl"), &render_trace(&run.output.trace))?;

    let pred = predictions_from_results(&run.output.results);
    let reports = REPORT_THRESHOLDS
        .iter()
        .map(|&thr| evaluate(&gt_rows, &pred, thr))
        .collect::<Result<Vec<EvalReport>, _>>()?;
    let report = json!({
        "scenario": args.scenario.to_string(),
        "variant": components.label(),
        "reports": reports,
    });
    write_text(&out.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    let text: String = reports.iter().map(|r| r.to_table()).collect::<Vec<_>>().join("\n");
    write_text(&out.join("report.txt"), &text)?;
    let echo = json!({
        "scenario": args.scenario.to_string(),
        "components": components,
        "tracker": cfg,
        "sim": params,
    });
    write_text(&out.join("config.json"), &(serde_json::to_string_pretty(&echo)? + "\n"))?;
    print!("{}", reports[0].to_table());
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let gt = read_ground_truth(&args.gt)?;
    let pred = read_predictions(&args.results)?;
    let report = evaluate(&gt, &pred, args.iou)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

/// Variants in the order of the component ablation table.
const ABLATION_ROWS: [Components; 5] = [
    Components { add: false, coi: false, qr: false },
    Components { add: true, coi: false, qr: false },
    Components { add: true, coi: false, qr: true },
    Components { add: true, coi: true, qr: false },
    Components { add: true, coi: true, qr: true },
];

fn ablate(args: AblateArgs) -> Result<()> {
    let cfg = args.cfg.tracker()?;
    let params = args.cfg.sim()?;
    let mut variants = ABLATION_ROWS.to_vec();
    if args.toggles.any() && !variants.contains(&args.toggles.components()) {
        variants.push(args.toggles.components());
    }
    let runs: Vec<(Scenario, Components)> = args
        .scenario
        .iter()
        .flat_map(|&s| variants.iter().map(move |&c| (s, c)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs.max(1)).build()?;
    let reports: Vec<Result<EvalReport>> = pool.install(|| {
        runs.par_iter()
            .map(|&(scenario, components)| {
                let run = run_scenario(&scenario.script(), &params, &cfg, components)?;
                let pred = predictions_from_results(&run.output.results);
                Ok(evaluate(&run.gt_entries(), &pred, args.iou)?)
            })
            .collect()
    });

    let mark = |on: bool| if on { "x" } else { "" };
    println!(
        "{:<8} {:>3} {:>3} {:>3}  {:>7} {:>7} {:>5} {:>5} {:>5}",
        "scenario", "Add", "CoI", "Q-R", "MOTA", "IDF1", "IDSW", "FP", "FN"
    );
    for ((scenario, c), report) in runs.iter().zip(reports) {
        let r = report.with_context(|| format!("{scenario} {}", c.label()))?;
        println!(
            "{:<8} {:>3} {:>3} {:>3}  {:>7.4} {:>7.4} {:>5} {:>5} {:>5}",
            scenario.to_string(),
            mark(c.add),
            mark(c.coi),
            mark(c.qr),
            r.mota,
            r.idf1,
            r.idsw,
            r.fp,
            r.fn_
        );
    }
    Ok(())
}

fn serve_synthetic(args: ServeArgs) -> Result<()> {
    let backend = SyntheticBackend::new(args.scenario.script(), args.cfg.sim()?)?;
    let stdin = io::stdin().lock();
    let stdout = BufWriter::new(io::stdout().lock());
    serve(backend, stdin, stdout)?;
    Ok(())
}
