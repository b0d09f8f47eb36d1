//! The five subcommands. Each returns every output file in memory so that
//! callers decide where (and whether) to write them.

use std::path::{Path, PathBuf};

use serde::Serialize;

use perfcrd_core::game::GameParams;
use perfcrd_core::grad::{self, FdReport, FrozenTargetCe, Quantity, RolloutObjective};
use perfcrd_core::prophecy::{self, mask_to_string, Attainability, ProphecyReport, ProphecySummary, SuccessConditionCheck};
use perfcrd_core::rollout::{self, Metrics, Mode, RolloutConfig};
use perfcrd_core::training::{self, HistoryRow, ParetoPoint, RunKind, SweepPlan, TrainObjective};

use crate::config::{ExperimentConfig, GradcheckSpec, PredictorSpec};
use crate::error::CliError;
use crate::output::{csv_table, Outputs, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Train,
    Sweep,
    Gradcheck,
    Rollout,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Train => "train",
            Command::Sweep => "sweep",
            Command::Gradcheck => "gradcheck",
            Command::Rollout => "rollout",
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub seed: Option<u64>,
    /// Lift the enumeration cap.
    pub force: bool,
    /// Directory that relative checkpoint paths resolve against.
    pub base_dir: PathBuf,
}

/// Files produced, and the error that stopped the command if any. Files
/// are present even on failure when partial results exist.
#[derive(Debug)]
pub struct RunResult {
    pub outputs: Outputs,
    pub error: Option<CliError>,
}

impl RunResult {
    fn ok(outputs: Outputs) -> Self {
        Self { outputs, error: None }
    }

    pub fn into_result(self) -> Result<Outputs, CliError> {
        match self.error {
            None => Ok(self.outputs),
            Some(e) => Err(e),
        }
    }
}

pub fn run(cmd: Command, cfg: &ExperimentConfig, opts: &Options) -> RunResult {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let prov = Provenance::new(cmd.name(), cfg.hash(), cfg.seed);
    let res = match cmd {
        Command::Analyze => analyze(&cfg, opts, &prov).map(RunResult::ok),
        Command::Train => train(&cfg, opts, &prov),
        Command::Sweep => sweep(&cfg, opts, &prov).map(RunResult::ok),
        Command::Gradcheck => gradcheck(&cfg, opts, &prov),
        Command::Rollout => rollout_cmd(&cfg, opts, &prov).map(RunResult::ok),
    };
    res.unwrap_or_else(|e| RunResult { outputs: Outputs::default(), error: Some(e) })
}

fn bits(mask: u64, n: usize) -> String {
    mask_to_string(mask, n)
}

fn f(v: f64) -> String {
    v.to_string()
}

#[derive(Debug, Serialize)]
struct GraphInfo {
    nodes: usize,
    edges: usize,
    mean_degree: f64,
}

#[derive(Debug, Serialize)]
struct PredictionInfo {
    prediction: String,
    induced: String,
    self_fulfilling: bool,
    full_success: bool,
    welfare: f64,
    accuracy: f64,
}

impl PredictionInfo {
    fn from(r: &ProphecyReport, n: usize) -> Self {
        Self {
            prediction: bits(r.prediction, n),
            induced: bits(r.induced, n),
            self_fulfilling: r.self_fulfilling,
            full_success: r.full_success,
            welfare: r.welfare,
            accuracy: r.accuracy,
        }
    }
}

#[derive(Debug, Serialize)]
struct AttainabilityInfo {
    attainable: bool,
    witness: Option<String>,
    checked: u64,
}

#[derive(Debug, Serialize)]
struct SuccessConditionInfo {
    condition: Option<&'static str>,
    witness: Option<String>,
    verified: bool,
}

#[derive(Debug, Serialize)]
struct AnalysisSummary {
    graph: GraphInfo,
    game: GameParams,
    counts: ProphecySummary,
    self_fulfilling: Vec<String>,
    best_prediction: Option<PredictionInfo>,
    best_self_fulfilling: Option<PredictionInfo>,
    /// No self-fulfilling prediction reaches the best attainable welfare.
    tradeoff: bool,
    full_success: AttainabilityInfo,
    full_success_self_fulfilling: bool,
    success_condition: SuccessConditionInfo,
    hub_condition: bool,
    hubs: Vec<usize>,
}

fn analyze(cfg: &ExperimentConfig, opts: &Options, prov: &Provenance) -> Result<Outputs, CliError> {
    let g = cfg.graph()?;
    let n = g.node_count();
    let spec = cfg.analysis.clone().unwrap_or_default();
    let cap = if opts.force { prophecy::MAX_NODES } else { spec.cap };
    let reports = prophecy::enumerate_prophecies(&g, &cfg.game, cap).map_err(|e| match e {
        perfcrd_core::Error::CapExceeded { nodes, cap } => {
            CliError::Config(format!("graph has {nodes} nodes, above the enumeration cap of {cap}; pass --force to override"))
        }
        other => other.into(),
    })?;
    let counts = prophecy::summarize(&reports);
    let best_any = prophecy::best_of(&reports, n, false);
    let best_sf = prophecy::best_of(&reports, n, true);
    let attain: Attainability = prophecy::full_success_attainable(&g, &cfg.game, cap)?;
    let t1: SuccessConditionCheck = prophecy::check_success_condition(&g, &cfg.game)?;
    let tradeoff = match (&best_any, &best_sf) {
        (Some(a), Some(s)) => s.welfare < a.welfare,
        _ => true,
    };
    let summary = AnalysisSummary {
        graph: GraphInfo { nodes: n, edges: g.edge_count(), mean_degree: g.mean_degree() },
        game: cfg.game,
        counts,
        self_fulfilling: reports.iter().filter(|r| r.self_fulfilling).map(|r| bits(r.prediction, n)).collect(),
        best_prediction: best_any.as_ref().map(|r| PredictionInfo::from(r, n)),
        best_self_fulfilling: best_sf.as_ref().map(|r| PredictionInfo::from(r, n)),
        tradeoff,
        full_success: AttainabilityInfo {
            attainable: attain.attainable,
            witness: attain.witness.map(|w| bits(w, n)),
            checked: attain.checked,
        },
        full_success_self_fulfilling: counts.self_fulfilling_full_success > 0,
        success_condition: SuccessConditionInfo {
            condition: t1.condition.map(|c| c.name()),
            witness: t1.witness.map(|w| bits(w, n)),
            verified: t1.verified,
        },
        hub_condition: prophecy::check_hub_condition(&g, cfg.game.threshold),
        hubs: g.unattainability_hubs(),
    };
    let mut out = Outputs::default();
    if spec.table {
        let rows = reports.iter().map(|r| {
            vec![
                bits(r.prediction, n),
                bits(r.induced, n),
                u8::from(r.self_fulfilling).to_string(),
                u8::from(r.is_nash).to_string(),
                u8::from(r.indifferent).to_string(),
                u8::from(r.full_success).to_string(),
                f(r.welfare),
                f(r.accuracy),
            ]
        });
        let header = ["prediction", "induced", "self_fulfilling", "strict_nash", "indifferent", "full_success", "welfare", "accuracy"];
        out.csv("prophecies.csv", prov, &csv_table(&header, rows));
    }
    out.json("summary.json", prov, &summary);
    Ok(out)
}

fn metrics_fields(m: Option<&Metrics>) -> Vec<String> {
    match m {
        Some(m) => vec![
            f(m.accuracy),
            f(m.welfare),
            f(m.welfare_normalized),
            f(m.success_fraction),
            f(m.cooperation_fraction),
            f(m.mean_log_likelihood),
        ],
        None => vec![String::new(); 6],
    }
}

const METRIC_COLUMNS: [&str; 6] =
    ["accuracy", "welfare", "welfare_normalized", "success_fraction", "cooperation_fraction", "mean_log_likelihood"];

fn history_csv(history: &[HistoryRow]) -> String {
    let mut header = vec!["epoch", "loss", "soft_ce", "soft_welfare"];
    header.extend(METRIC_COLUMNS);
    let rows = history.iter().map(|r| {
        let mut row = vec![r.epoch.to_string(), f(r.loss), f(r.soft_ce), f(r.soft_welfare)];
        row.extend(metrics_fields(r.eval.as_ref()));
        row
    });
    csv_table(&header, rows)
}

fn predictor_spec(cfg: &ExperimentConfig) -> Result<&PredictorSpec, CliError> {
    cfg.predictor()
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    architecture: String,
    objective: &'static str,
    lambda: f64,
    epochs: usize,
    parameters: usize,
    final_metrics: Metrics,
}

fn train(cfg: &ExperimentConfig, opts: &Options, prov: &Provenance) -> Result<RunResult, CliError> {
    let g = cfg.graph()?;
    let tc = cfg.train()?;
    let model = predictor_spec(cfg)?.build(&g, cfg.seed, &opts.base_dir)?;
    let (history, result) = training::train_partial(&cfg.game, &model, &cfg.agents, &tc);
    let mut out = Outputs::default();
    out.csv("history.csv", prov, &history_csv(&history));
    let outcome = match result {
        Ok(o) => o,
        Err(e) => return Ok(RunResult { outputs: out, error: Some(e.into()) }),
    };
    out.json("checkpoint.json", prov, &outcome.model.checkpoint());
    let trace = rollout::run_hard(&cfg.game, &outcome.model, &RolloutConfig { mode: Mode::Hard, ..cfg.agents })?;
    out.csv("trace.csv", prov, &trace.to_csv());
    let summary = TrainSummary {
        architecture: outcome.model.architecture.to_string(),
        objective: tc.objective.name(),
        lambda: tc.lambda,
        epochs: tc.epochs,
        parameters: outcome.model.params.len(),
        final_metrics: outcome.final_metrics,
    };
    out.json("summary.json", prov, &summary);
    Ok(RunResult::ok(out))
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    runs: usize,
    points: Vec<ParetoPoint>,
    /// Indices into `points` of the non-dominated set, by ascending accuracy.
    front: Vec<usize>,
}

fn run_label(run: RunKind) -> (&'static str, String) {
    match run {
        RunKind::Lambda { lambda } => ("lambda", f(lambda)),
        RunKind::Mgda => ("mgda", String::new()),
    }
}

fn sweep(cfg: &ExperimentConfig, _opts: &Options, prov: &Provenance) -> Result<Outputs, CliError> {
    let g = cfg.graph()?;
    let spec = cfg.sweep.clone().ok_or_else(|| CliError::Config("config has no `sweep` section".into()))?;
    let pred = predictor_spec(cfg)?;
    let plan = SweepPlan {
        architecture: pred.architecture,
        shape: pred.shape(g.node_count()),
        lambdas: spec.lambdas,
        seeds: spec.seeds,
        mgda_runs: spec.mgda_runs,
        master_seed: cfg.seed,
    };
    let template = cfg.train_or(TrainObjective::MultiScalarized);
    let results = training::pareto_sweep(&cfg.game, &g, &cfg.agents, &template, &plan)?;
    let mut out = Outputs::default();
    let mut points = Vec::with_capacity(results.len());
    for (k, (mut p, model)) in results.into_iter().enumerate() {
        let path = format!("checkpoints/run-{k:03}.json");
        out.json(&path, prov, &model.checkpoint());
        p.checkpoint = Some(path);
        points.push(p);
    }
    let rows = points.iter().map(|p| {
        let (kind, lambda) = run_label(p.run);
        vec![
            kind.to_string(),
            lambda,
            p.seed_index.to_string(),
            p.seed.to_string(),
            f(p.accuracy),
            f(p.welfare),
            f(p.welfare_normalized),
            f(p.success_fraction),
            u8::from(p.dominated).to_string(),
        ]
    });
    let header = ["run", "lambda", "seed_index", "seed", "accuracy", "welfare", "welfare_normalized", "success_fraction", "dominated"];
    out.csv("pareto.csv", prov, &csv_table(&header, rows));
    let mut front: Vec<usize> = (0..points.len()).filter(|&k| !points[k].dominated).collect();
    front.sort_by(|&a, &b| points[a].accuracy.total_cmp(&points[b].accuracy).then(a.cmp(&b)));
    let summary = SweepSummary { runs: points.len(), points, front };
    out.json("pareto.json", prov, &summary);
    Ok(out)
}

#[derive(Debug, Serialize)]
struct QuantityCheck {
    quantity: String,
    passed: bool,
    max_abs_error: f64,
    max_rel_error: f64,
    failing: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct GradcheckSummary {
    passed: bool,
    parameters: usize,
    step: f64,
    tolerance: f64,
    temp: f64,
    horizon: usize,
    checks: Vec<QuantityCheck>,
    decomposition_identity_error: f64,
    identity_tolerance: f64,
}

fn parse_quantity(name: &str) -> Result<Quantity, CliError> {
    [Quantity::Ce, Quantity::CeThroughTargets, Quantity::Uc, Quantity::Upop]
        .into_iter()
        .find(|q| q.name() == name)
        .ok_or_else(|| CliError::Config(format!("unknown gradcheck quantity `{name}`")))
}

fn gradcheck(cfg: &ExperimentConfig, opts: &Options, prov: &Provenance) -> Result<RunResult, CliError> {
    let g = cfg.graph()?;
    let spec: GradcheckSpec = cfg.gradcheck.clone().unwrap_or_default();
    let model = predictor_spec(cfg)?.build(&g, cfg.seed, &opts.base_dir)?;
    if !model.is_trainable() {
        return Err(CliError::Config("gradcheck needs a trainable predictor".into()));
    }
    let temp = spec.temp.unwrap_or_else(|| cfg.train_or(TrainObjective::AccuracyCe).temp);
    let soft = RolloutConfig { mode: Mode::Soft, temp, ..cfg.agents };
    let fault = spec.fault.as_ref().map(|f| f.resolve()).transpose()?;
    let mut checks = Vec::new();
    for name in &spec.quantities {
        let q = parse_quantity(name)?;
        let obj = RolloutObjective::new(cfg.game, &model, soft, q)?;
        // Detached cross-entropy is checked as the derivative of the loss
        // with targets frozen at the current parameters.
        let report: FdReport = if q == Quantity::Ce {
            let frozen = FrozenTargetCe::new(obj, &model.params)?;
            grad::finite_diff_check(&frozen, &model.params, spec.step, spec.tolerance, fault)?
        } else {
            grad::finite_diff_check(&obj, &model.params, spec.step, spec.tolerance, fault)?
        };
        checks.push(QuantityCheck {
            quantity: name.clone(),
            passed: report.passed(),
            max_abs_error: report.max_abs_error,
            max_rel_error: report.max_rel_error,
            failing: report.failing,
        });
    }
    let decomposition = grad::decompose_uc_gradient(&cfg.game, &model, &soft, &model.params)?;
    let identity = decomposition.identity_error();
    let passed = checks.iter().all(|c| c.passed) && identity <= spec.identity_tolerance;
    let mut out = Outputs::default();
    let rows = checks.iter().map(|c| {
        vec![c.quantity.clone(), f(c.max_abs_error), f(c.max_rel_error), c.failing.len().to_string(), u8::from(c.passed).to_string()]
    });
    out.csv("gradcheck.csv", prov, &csv_table(&["quantity", "max_abs_error", "max_rel_error", "failing", "passed"], rows));
    out.csv("decomposition.csv", prov, &decomposition.to_csv());
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| {
            let coords: Vec<String> = c.failing.iter().take(10).map(|k| k.to_string()).collect();
            let more = if c.failing.len() > 10 { ", ..." } else { "" };
            format!("{} at coordinates [{}{more}]", c.quantity, coords.join(", "))
        })
        .collect();
    let summary = GradcheckSummary {
        passed,
        parameters: model.params.len(),
        step: spec.step,
        tolerance: spec.tolerance,
        temp,
        horizon: cfg.agents.horizon,
        checks,
        decomposition_identity_error: identity,
        identity_tolerance: spec.identity_tolerance,
    };
    out.json("gradcheck.json", prov, &summary);
    if passed {
        return Ok(RunResult::ok(out));
    }
    let mut why = failed;
    if identity > spec.identity_tolerance {
        why.push(format!("decomposition identity error {identity:e}"));
    }
    Ok(RunResult { outputs: out, error: Some(CliError::Numeric(format!("gradient check failed: {}", why.join("; ")))) })
}

fn rollout_cmd(cfg: &ExperimentConfig, opts: &Options, prov: &Provenance) -> Result<Outputs, CliError> {
    let g = cfg.graph()?;
    let model = predictor_spec(cfg)?.build(&g, cfg.seed, &opts.base_dir)?;
    let trace = rollout::run(&cfg.game, &model, &cfg.agents)?;
    let mut out = Outputs::default();
    out.csv("trace.csv", prov, &trace.to_csv());
    #[derive(Serialize)]
    struct RolloutSummary {
        mode: Mode,
        steps: usize,
        metrics: Option<Metrics>,
    }
    let metrics = match trace.mode {
        Mode::Hard => Some(rollout::metrics(&trace, &cfg.game)?),
        Mode::Soft => None,
    };
    out.json("metrics.json", prov, &RolloutSummary { mode: trace.mode, steps: trace.horizon(), metrics });
    Ok(out)
}

/// Default output directory for a config file and command.
pub fn default_out_dir(config_path: &Path, cfg: &ExperimentConfig, cmd: Command) -> PathBuf {
    let stem = if cfg.name.is_empty() {
        config_path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
    } else {
        cfg.name.clone()
    };
    PathBuf::from("out").join(stem).join(cmd.name())
}
