//! Command-line surface: `simulate | rollout | train | metrics | compare`.
//!
//! Every command is deterministic under a fixed `--seed`; output files carry
//! the manifest hash in a header comment (CSV) or a header record (JSONL).
//! Exit codes: 0 success, 2 validation error, 3 runtime error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{OthersParadigm, PredictorParams};
use crate::metrics::{self, MetricReport};
use crate::optimization::{self, TrainState};
use crate::policy::{self, LatticePolicy, ScoringParams};
use crate::rollout::{
    branch_dispersion, forward_simulate, run_real_episode, ActorState, ParadigmConfig,
    RolloutBranch, SimContext, TrackingBaseline, WorldState,
};
use crate::selection::CenterParadigm;
use crate::world::{self, AgentState, Scenario, SimConfig, WorldError};

#[derive(Parser)]
#[command(name = "forsim", version, about = "Deterministic multi-agent traffic forward simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run the real-time closed loop and write the realized episode.
    Simulate(RunArgs),
    /// Forward-simulate every candidate branch from the initial state.
    Rollout(RunArgs),
    /// Closed-loop fine-tuning of the scoring policy and predictor.
    Train(RunArgs),
    /// Metric suite over a stored episode.
    Metrics(RunArgs),
    /// Paradigm-ablation matrix over the scenario set.
    Compare(RunArgs),
}

#[derive(Args, Clone)]
pub struct RunArgs {
    /// Scenario file; repeat for a suite.
    #[arg(long = "scenario")]
    pub scenarios: Vec<PathBuf>,
    /// Simulation config JSON overriding the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "trajectory-aligned")]
    pub center_paradigm: String,
    #[arg(long, default_value = "stepwise-prediction")]
    pub others_paradigm: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Outer training iterations (train only; overrides config).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Episode JSONL input (metrics only).
    #[arg(long)]
    pub episode: Option<PathBuf>,
    /// Checkpoint JSON to resume from or take parameters from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// Everything that determines a run, hashed into output headers.
#[derive(Serialize, Clone)]
pub struct RunManifest {
    pub command: String,
    pub scenarios: Vec<String>,
    pub config: Option<String>,
    pub center_paradigm: String,
    pub others_paradigm: String,
    pub seed: u64,
    pub iterations: Option<usize>,
    pub episode: Option<String>,
    pub checkpoint: Option<String>,
}

impl RunManifest {
    fn new(command: &str, args: &RunArgs) -> Self {
        RunManifest {
            command: command.to_string(),
            scenarios: args.scenarios.iter().map(|p| p.display().to_string()).collect(),
            config: args.config.as_ref().map(|p| p.display().to_string()),
            center_paradigm: args.center_paradigm.clone(),
            others_paradigm: args.others_paradigm.clone(),
            seed: args.seed,
            iterations: args.iterations,
            episode: args.episode.as_ref().map(|p| p.display().to_string()),
            checkpoint: args.checkpoint.as_ref().map(|p| p.display().to_string()),
        }
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("manifest serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<WorldError> for CliError {
    fn from(e: WorldError) -> Self {
        match e {
            WorldError::Io(io) => CliError::Runtime(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Parse argv and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Simulate(args) => dispatch("simulate", args, cmd_simulate),
        Command::Rollout(args) => dispatch("rollout", args, cmd_rollout),
        Command::Train(args) => dispatch("train", args, cmd_train),
        Command::Metrics(args) => dispatch("metrics", args, cmd_metrics),
        Command::Compare(args) => dispatch("compare", args, cmd_compare),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("forsim: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(
    name: &str,
    args: &RunArgs,
    f: fn(&RunArgs, &RunManifest, &Loaded) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let manifest = RunManifest::new(name, args);
    let loaded = load_inputs(name, args)?;
    std::fs::create_dir_all(&args.out)?;
    f(args, &manifest, &loaded)
}

/// Inputs resolved and validated before a command runs.
struct Loaded {
    scenarios: Vec<Scenario>,
    cfg: SimConfig,
    paradigms: ParadigmConfig,
    scoring: ScoringParams,
    predictor: PredictorParams,
    start_iteration: usize,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    policy_theta: Vec<f64>,
    predictor_w: Vec<f64>,
    iteration: usize,
}

fn load_inputs(_command: &str, args: &RunArgs) -> Result<Loaded, CliError> {
    if args.scenarios.is_empty() {
        return Err(CliError::Validation("at least one --scenario is required".into()));
    }
    for p in &args.scenarios {
        if !p.exists() {
            return Err(CliError::Validation(format!(
                "scenario file not found: {}",
                p.display()
            )));
        }
    }
    let center = CenterParadigm::parse(&args.center_paradigm).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown center paradigm `{}` (expected max-likelihood | mode-consistent | trajectory-aligned)",
            args.center_paradigm
        ))
    })?;
    let others = OthersParadigm::parse(&args.others_paradigm).ok_or_else(|| {
        CliError::Validation(format!(
            "unknown others paradigm `{}` (expected constant-action | single-prediction | stepwise-prediction)",
            args.others_paradigm
        ))
    })?;
    let mut cfg = match &args.config {
        Some(path) => SimConfig::from_json_file(path)?,
        None => SimConfig::default(),
    };
    if let Some(iters) = args.iterations {
        cfg.iterations = iters;
    }
    let scenarios: Vec<Scenario> = args
        .scenarios
        .iter()
        .map(|p| world::load_scenario(p))
        .collect::<Result<_, _>>()?;
    // The effective horizon never exceeds the shortest scenario's horizon.
    if let Some(h) = scenarios.iter().map(|s| s.horizon).min() {
        cfg.horizon = cfg.horizon.min(h);
    }
    if cfg.t_f > cfg.horizon {
        cfg.t_f = (cfg.horizon / 2).max(1);
    }
    let (scoring, predictor, start_iteration) = match &args.checkpoint {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let ck: Checkpoint = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("checkpoint parse error: {e}")))?;
            let scoring = ScoringParams::from_vec(&ck.policy_theta).ok_or_else(|| {
                CliError::Validation("checkpoint policy_theta has the wrong dimension".into())
            })?;
            let predictor = PredictorParams::from_flat(cfg.horizon, cfg.history_len, ck.predictor_w)
                .ok_or_else(|| {
                    CliError::Validation(
                        "checkpoint predictor_w does not match the configured horizon/history".into(),
                    )
                })?;
            (scoring, predictor, ck.iteration)
        }
        None => (
            ScoringParams::default_cruise(),
            PredictorParams::for_config(&cfg),
            0,
        ),
    };
    Ok(Loaded {
        scenarios,
        cfg,
        paradigms: ParadigmConfig { center, others },
        scoring,
        predictor,
        start_iteration,
    })
}

// ---------------------------------------------------------------------------
// Serialization records
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct EpisodeRecord {
    t: usize,
    center: AgentState,
    others: Vec<AgentState>,
}

#[derive(Serialize)]
struct JsonlHeader<'a> {
    manifest_hash: &'a str,
}

#[derive(Serialize)]
struct BranchRecord {
    seed_index: [usize; 2],
    selected: Vec<[usize; 2]>,
    failed: Option<String>,
    branch_return: f64,
    predictor_calls: usize,
    states: Vec<EpisodeRecord>,
}

fn episode_records(states: &[WorldState]) -> Vec<EpisodeRecord> {
    states
        .iter()
        .map(|w| EpisodeRecord {
            t: w.step,
            center: w.center.state,
            others: w.others.iter().map(|o| o.state).collect(),
        })
        .collect()
}

fn write_csv(path: &Path, hash: &str, header: &str, rows: &[String]) -> Result<(), CliError> {
    let mut text = format!("# manifest_hash={hash}\n{header}\n");
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_jsonl(path: &Path, hash: &str, lines: &[String]) -> Result<(), CliError> {
    let mut text = serde_json::to_string(&JsonlHeader { manifest_hash: hash })
        .expect("header serializes");
    text.push('\n');
    for line in lines {
        text.push_str(line);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_simulate(args: &RunArgs, manifest: &RunManifest, loaded: &Loaded) -> Result<(), CliError> {
    let hash = manifest.hash();
    let mut metric_rows = Vec::new();
    for (idx, scenario) in loaded.scenarios.iter().enumerate() {
        let episode = run_real_episode(scenario, &loaded.scoring, &loaded.cfg);
        let lines: Vec<String> = episode_records(&episode)
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes"))
            .collect();
        write_jsonl(&args.out.join(format!("episode-{idx:02}.jsonl")), &hash, &lines)?;
        let report = metrics::episode_metrics(&episode, &scenario.map, &loaded.cfg)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        metric_rows.push(format!("{idx},{}", report.csv_row()));
    }
    write_csv(
        &args.out.join("metrics.csv"),
        &hash,
        &format!("scenario,{}", MetricReport::csv_header()),
        &metric_rows,
    )
}

fn evaluated_branches(
    loaded: &Loaded,
    scenario: &Scenario,
    paradigms: ParadigmConfig,
    seed: u64,
) -> Result<Vec<RolloutBranch>, CliError> {
    let lattice = LatticePolicy::default();
    let ctx = SimContext {
        map: &scenario.map,
        lattice: &lattice,
        scoring: &loaded.scoring,
        predictor: &loaded.predictor,
        cfg: &loaded.cfg,
    };
    let world = WorldState::from_scenario(scenario, &loaded.cfg);
    let cands = policy::generate_candidates(
        &world,
        &scenario.map,
        &lattice,
        &loaded.scoring,
        &loaded.cfg,
        None,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut branches = forward_simulate(&ctx, &world, &cands, paradigms, seed);
    let _ = optimization::evaluate_branches(&mut branches, &scenario.map, &loaded.cfg);
    Ok(branches)
}

fn cmd_rollout(args: &RunArgs, manifest: &RunManifest, loaded: &Loaded) -> Result<(), CliError> {
    let hash = manifest.hash();
    let mut lines = Vec::new();
    let mut metric_rows = Vec::new();
    for (idx, scenario) in loaded.scenarios.iter().enumerate() {
        let branches = evaluated_branches(loaded, scenario, loaded.paradigms, args.seed)?;
        for branch in &branches {
            let record = BranchRecord {
                seed_index: [branch.seed_index.0, branch.seed_index.1],
                selected: branch.selected.iter().map(|(i, j)| [*i, *j]).collect(),
                failed: branch.failed.clone(),
                branch_return: optimization::branch_return(branch, &scenario.map, &loaded.cfg),
                predictor_calls: branch.predictor_calls,
                states: episode_records(&branch.states),
            };
            lines.push(serde_json::to_string(&record).expect("branch serializes"));
            match metrics::episode_metrics(&branch.states, &scenario.map, &loaded.cfg) {
                Ok(report) => metric_rows.push(format!(
                    "{idx},{}-{},{}",
                    branch.seed_index.0,
                    branch.seed_index.1,
                    report.csv_row()
                )),
                Err(e) => {
                    return Err(CliError::Runtime(format!(
                        "branch metrics failed: {e}"
                    )))
                }
            }
        }
    }
    write_jsonl(&args.out.join("branches.jsonl"), &hash, &lines)?;
    write_csv(
        &args.out.join("metrics.csv"),
        &hash,
        &format!("scenario,branch,{}", MetricReport::csv_header()),
        &metric_rows,
    )
}

fn cmd_train(args: &RunArgs, manifest: &RunManifest, loaded: &Loaded) -> Result<(), CliError> {
    let hash = manifest.hash();
    let init = TrainState {
        scoring: if args.checkpoint.is_some() {
            loaded.scoring
        } else {
            ScoringParams::zeros()
        },
        predictor: loaded.predictor.clone(),
        iteration: loaded.start_iteration,
    };
    let (state, log) = optimization::train(
        &loaded.scenarios,
        &loaded.cfg,
        loaded.paradigms,
        args.seed,
        init,
    );
    let checkpoint = Checkpoint {
        policy_theta: state.scoring.to_vec(),
        predictor_w: state.predictor.weights().to_vec(),
        iteration: state.iteration,
    };
    let text = serde_json::to_string_pretty(&checkpoint).expect("checkpoint serializes");
    std::fs::write(args.out.join("checkpoint.json"), text)?;
    let rows: Vec<String> = log
        .csv_rows()
        .lines()
        .map(|l| l.to_string())
        .collect();
    write_csv(
        &args.out.join("train_log.csv"),
        &hash,
        optimization::TrainingLog::csv_header(),
        &rows,
    )
}

fn cmd_metrics(args: &RunArgs, manifest: &RunManifest, loaded: &Loaded) -> Result<(), CliError> {
    let hash = manifest.hash();
    let episode_path = args
        .episode
        .as_ref()
        .ok_or_else(|| CliError::Validation("--episode is required for `metrics`".into()))?;
    if loaded.scenarios.is_empty() {
        return Err(CliError::Validation(
            "`metrics` needs --scenario for the map and agent geometry".into(),
        ));
    }
    let scenario = &loaded.scenarios[0];
    let text = std::fs::read_to_string(episode_path)?;
    let mut states = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if lineno == 0 && line.contains("manifest_hash") {
            continue;
        }
        let record: EpisodeRecord = serde_json::from_str(line).map_err(|e| {
            CliError::Validation(format!("episode line {} parse error: {e}", lineno + 1))
        })?;
        let others = record
            .others
            .iter()
            .enumerate()
            .map(|(k, s)| ActorState {
                state: *s,
                geometry: scenario
                    .other_agents
                    .get(k)
                    .map(|a| a.geometry)
                    .unwrap_or_default(),
                last_control: crate::dynamics::ControlInput::zero(),
            })
            .collect();
        states.push(WorldState {
            center: ActorState {
                state: record.center,
                geometry: scenario.center_agent.geometry,
                last_control: crate::dynamics::ControlInput::zero(),
            },
            others,
            step: record.t,
            histories: Vec::new(),
        });
    }
    let report = metrics::episode_metrics(&states, &scenario.map, &loaded.cfg)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    write_csv(
        &args.out.join("metrics.csv"),
        &hash,
        MetricReport::csv_header(),
        &[report.csv_row()],
    )
}

/// Matrix cells emitted by `compare`, in output order: the two tracking
/// baselines (constant-action others), then the 3x3 paradigm grid.
fn compare_cells() -> Vec<(String, Option<TrackingBaseline>, ParadigmConfig)> {
    let mut cells = Vec::new();
    for baseline in [TrackingBaseline::PerfectTracking, TrackingBaseline::TrajectoryTracking] {
        cells.push((
            baseline.tag().to_string(),
            Some(baseline),
            ParadigmConfig {
                center: CenterParadigm::TrajectoryAligned,
                others: OthersParadigm::ConstantAction,
            },
        ));
    }
    for center in [
        CenterParadigm::MaxLikelihood,
        CenterParadigm::ModeConsistent,
        CenterParadigm::TrajectoryAligned,
    ] {
        for others in [
            OthersParadigm::ConstantAction,
            OthersParadigm::SinglePrediction,
            OthersParadigm::StepwisePrediction,
        ] {
            cells.push((
                center.tag().to_string(),
                None,
                ParadigmConfig { center, others },
            ));
        }
    }
    cells
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return f64::INFINITY;
    }
    finite.iter().sum::<f64>() / finite.len() as f64
}

/// One aggregated row of the comparison matrix.
struct CompareRow {
    center: String,
    others: String,
    report_means: Vec<f64>,
    orr_all: f64,
    dispersion: f64,
}

/// Run the paradigm matrix over the loaded scenarios: per cell, forward
/// simulate every scenario and average branch-episode metrics.
fn compare_matrix(loaded: &Loaded, seed: u64) -> Result<Vec<CompareRow>, CliError> {
    let lattice = LatticePolicy::default();
    let mut rows = Vec::new();
    for (cell_name, baseline, paradigms) in compare_cells() {
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); 9];
        let mut orr_all = Vec::new();
        let mut dispersions = Vec::new();
        for scenario in &loaded.scenarios {
            let ctx = SimContext {
                map: &scenario.map,
                lattice: &lattice,
                scoring: &loaded.scoring,
                predictor: &loaded.predictor,
                cfg: &loaded.cfg,
            };
            let world = WorldState::from_scenario(scenario, &loaded.cfg);
            let cands = policy::generate_candidates(
                &world,
                &scenario.map,
                &lattice,
                &loaded.scoring,
                &loaded.cfg,
                None,
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            let branches = match baseline {
                Some(b) => crate::rollout::simulate_tracking(&ctx, &world, &cands, b),
                None => forward_simulate(&ctx, &world, &cands, paradigms, seed),
            };
            if let Ok(d) = branch_dispersion(&branches) {
                dispersions.push(d);
            }
            for branch in &branches {
                if let Ok(report) = metrics::episode_metrics(&branch.states, &scenario.map, &loaded.cfg)
                {
                    for (col, v) in [
                        report.s_sw,
                        report.s_wd,
                        report.a_sw,
                        report.cpk,
                        report.rp,
                        report.ttc_2d,
                        report.act,
                        report.orr,
                        report.uc,
                    ]
                    .into_iter()
                    .enumerate()
                    {
                        columns[col].push(v);
                    }
                }
                orr_all.push(metrics::offroad_rate_all_agents(&branch.states, &scenario.map));
            }
        }
        rows.push(CompareRow {
            center: cell_name,
            others: match baseline {
                Some(_) => OthersParadigm::ConstantAction.tag().to_string(),
                None => paradigms.others.tag().to_string(),
            },
            report_means: columns.iter().map(|c| mean(c)).collect(),
            orr_all: mean(&orr_all),
            dispersion: mean(&dispersions),
        });
    }
    Ok(rows)
}

fn cmd_compare(args: &RunArgs, manifest: &RunManifest, loaded: &Loaded) -> Result<(), CliError> {
    let hash = manifest.hash();
    let rows = compare_matrix(loaded, args.seed)?;
    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            let mut line = format!("{},{}", r.center, r.others);
            for v in &r.report_means {
                let _ = write!(line, ",{v}");
            }
            let _ = write!(line, ",{},{}", r.orr_all, r.dispersion);
            line
        })
        .collect();
    write_csv(
        &args.out.join("compare.csv"),
        &hash,
        &format!("center,others,{},orr_all,dispersion", MetricReport::csv_header()),
        &csv_rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn args_with(scenarios: Vec<PathBuf>, out: PathBuf) -> RunArgs {
        RunArgs {
            scenarios,
            config: None,
            center_paradigm: "trajectory-aligned".into(),
            others_paradigm: "stepwise-prediction".into(),
            seed: 0,
            out,
            iterations: None,
            episode: None,
            checkpoint: None,
        }
    }

    fn fixture_path(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
    }

    #[test]
    fn missing_scenario_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let args = args_with(vec![PathBuf::from("/nope/missing.json")], dir.path().into());
        let err = load_inputs("rollout", &args).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.message().contains("/nope/missing.json"));
    }

    #[test]
    fn bad_paradigm_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut args = args_with(vec![fixture_path("lead-brake.json")], dir.path().into());
        args.center_paradigm = "greedy".into();
        let err = load_inputs("rollout", &args).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn manifest_hash_is_stable_and_input_sensitive() {
        let args = args_with(vec![fixture_path("lead-brake.json")], PathBuf::from("out"));
        let a = RunManifest::new("rollout", &args).hash();
        let b = RunManifest::new("rollout", &args).hash();
        assert_eq!(a, b);
        let mut args2 = args.clone();
        args2.seed = 1;
        assert_ne!(a, RunManifest::new("rollout", &args2).hash());
    }

    #[test]
    fn rollout_writes_outputs_and_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        for out in [&out_a, &out_b] {
            let args = args_with(vec![fixture_path("multimodal.json")], out.clone());
            let manifest = RunManifest::new("rollout", &args);
            let loaded = load_inputs("rollout", &args).unwrap();
            std::fs::create_dir_all(out).unwrap();
            cmd_rollout(&args, &manifest, &loaded).unwrap();
        }
        for file in ["branches.jsonl", "metrics.csv"] {
            let a = std::fs::read(out_a.join(file)).unwrap();
            let b = std::fs::read(out_b.join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
        }
    }

    #[test]
    fn metrics_round_trip_through_episode_file() {
        let dir = tempfile::tempdir().unwrap();
        let scenario_path = fixture_path("lead-brake.json");
        let sim_out = dir.path().join("sim");
        let args = args_with(vec![scenario_path.clone()], sim_out.clone());
        let manifest = RunManifest::new("simulate", &args);
        let loaded = load_inputs("simulate", &args).unwrap();
        std::fs::create_dir_all(&sim_out).unwrap();
        cmd_simulate(&args, &manifest, &loaded).unwrap();

        let met_out = dir.path().join("met");
        let mut margs = args_with(vec![scenario_path], met_out.clone());
        margs.episode = Some(sim_out.join("episode-00.jsonl"));
        let mmanifest = RunManifest::new("metrics", &margs);
        let mloaded = load_inputs("metrics", &margs).unwrap();
        std::fs::create_dir_all(&met_out).unwrap();
        cmd_metrics(&margs, &mmanifest, &mloaded).unwrap();
        let text = std::fs::read_to_string(met_out.join("metrics.csv")).unwrap();
        assert!(text.starts_with("# manifest_hash="));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn compare_emits_eleven_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut args = args_with(vec![fixture_path("multimodal.json")], dir.path().join("cmp"));
        args.seed = 3;
        let manifest = RunManifest::new("compare", &args);
        let loaded = load_inputs("compare", &args).unwrap();
        std::fs::create_dir_all(&args.out).unwrap();
        cmd_compare(&args, &manifest, &loaded).unwrap();
        let text = std::fs::read_to_string(args.out.join("compare.csv")).unwrap();
        let data_rows: Vec<&str> = text.lines().skip(2).collect();
        assert_eq!(data_rows.len(), 11);
        for row in data_rows {
            assert_eq!(row.split(',').count(), 13, "row schema: {row}");
        }
    }

    #[test]
    fn train_writes_checkpoint_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let out1 = dir.path().join("t1");
        let mut args = args_with(vec![fixture_path("bandit.json")], out1.clone());
        args.iterations = Some(2);
        let manifest = RunManifest::new("train", &args);
        let loaded = load_inputs("train", &args).unwrap();
        std::fs::create_dir_all(&out1).unwrap();
        cmd_train(&args, &manifest, &loaded).unwrap();
        let ck: Checkpoint =
            serde_json::from_str(&std::fs::read_to_string(out1.join("checkpoint.json")).unwrap())
                .unwrap();
        assert_eq!(ck.iteration, 2);

        // Resume continues the iteration counter.
        let out2 = dir.path().join("t2");
        let mut args2 = args_with(vec![fixture_path("bandit.json")], out2.clone());
        args2.iterations = Some(1);
        args2.checkpoint = Some(out1.join("checkpoint.json"));
        let manifest2 = RunManifest::new("train", &args2);
        let loaded2 = load_inputs("train", &args2).unwrap();
        std::fs::create_dir_all(&out2).unwrap();
        cmd_train(&args2, &manifest2, &loaded2).unwrap();
        let ck2: Checkpoint =
            serde_json::from_str(&std::fs::read_to_string(out2.join("checkpoint.json")).unwrap())
                .unwrap();
        assert_eq!(ck2.iteration, 3);
    }

    #[test]
    fn zero_iteration_train_keeps_initial_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t0");
        let mut args = args_with(vec![fixture_path("bandit.json")], out.clone());
        args.iterations = Some(0);
        let manifest = RunManifest::new("train", &args);
        let loaded = load_inputs("train", &args).unwrap();
        std::fs::create_dir_all(&out).unwrap();
        cmd_train(&args, &manifest, &loaded).unwrap();
        let ck: Checkpoint =
            serde_json::from_str(&std::fs::read_to_string(out.join("checkpoint.json")).unwrap())
                .unwrap();
        assert_eq!(ck.iteration, 0);
        assert_eq!(ck.policy_theta, ScoringParams::zeros().to_vec());
    }
}
