//! Command-line driver for every pipeline stage. The binary only parses
//! arguments and calls [`run`]; everything else lives here so the
//! subcommands can be exercised from tests.

mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hfdrive::agents::LearnedController;
use hfdrive::feedback::{read_channels, synthesize_episode, write_channels, AlignedFeatures, PhysioParams};
use hfdrive::llm::{AdapterConfig, LlmAdapter};
use hfdrive::pipeline::{clone_reference, reward_from_rollouts, KlBudget, PreferenceData, ReferenceConfig, RewardDataConfig};
use hfdrive::policy::{
    collect_rollouts, evaluate, kl_exact, optimize, rollout_seeds, DrivingEnv, EvalConfig, EvalReport, Policy,
    ReferencePolicy, TrainingConfig,
};
use hfdrive::reward::{
    fit_reward, make_pairs, read_pairs, read_segments, score_stress, slice_agent_segments, write_pairs,
    write_segments, FeatureMap, RewardModel, StressScore,
};
use hfdrive::scenario::{load_scenario, standard, standard_suite, InstanceOptions, Scenario, STANDARD_NAMES};
use hfdrive::sim::{ActionBins, AgentId, EpisodeLog, SensorConfig};
use hfdrive_gateway::{GatewayConfig, SessionStatus};
use serde::{Deserialize, Serialize};

pub use render::{render_stream, render_summary};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const RUN_FORMAT_VERSION: u32 = 1;

pub const SEGMENTS_FILE: &str = "segments.ndjson";
pub const STRESS_FILE: &str = "stress.tsv";
pub const PAIRS_FILE: &str = "pairs.tsv";
pub const POLICY_FILE: &str = "policy.json";
pub const REFERENCE_FILE: &str = "reference.json";
pub const TRACE_FILE: &str = "trace.ndjson";
pub const RUN_FILE: &str = "run.toml";

#[derive(Debug, Parser)]
#[command(name = "hfdrive", version, about = "Human-feedback driving: simulate, label, fit rewards, train and evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags every subcommand takes.
#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML run config; see `RunConfig` for the sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode and write its log.
    Sim {
        #[command(flatten)]
        common: Common,
        /// Standard scenario name or scenario file.
        #[arg(long)]
        scenario: String,
        /// Drive the ego with a learned policy instead of its scripted binding.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        greedy: bool,
    },
    /// Synthesize physiology and vehicle channels from an episode's events.
    SynthFeedback {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: PathBuf,
        /// Defaults to the ego.
        #[arg(long)]
        agent: Option<u32>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Slice logs into segments, score their stress and pair them.
    Segment {
        #[command(flatten)]
        common: Common,
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        /// Feedback directories, one per log in the same order.
        #[arg(long = "feedback")]
        feedback: Vec<PathBuf>,
        /// Scenario files for logs whose scenario is not a standard one.
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        #[arg(long)]
        segment_len: Option<usize>,
    },
    /// Fit a Bradley-Terry reward model.
    TrainReward {
        #[command(flatten)]
        common: Common,
        /// Output of `segment`; without it, reference rollouts are sampled and labelled.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        /// Behavior-cloned from the scripted drivers when absent.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// KL-regularized policy optimization against a reward model.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reward: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        #[arg(long, allow_negative_numbers = true)]
        beta: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate a policy over scenarios and seeds.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
        /// KL is measured against this policy; defaults to the evaluated one.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        reward: PathBuf,
        /// Scenario names, files or directories of `.toml` files.
        #[arg(long = "scenarios", alias = "scenario")]
        scenarios: Vec<String>,
        /// `a..b` (inclusive), a comma list, or one seed.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        greedy: bool,
    },
    /// Start the gateway; runs until interrupted.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "HFDRIVE_BIND", default_value = "127.0.0.1:8750")]
        bind: std::net::SocketAddr,
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        #[arg(long)]
        tick_rate: Option<f64>,
        #[arg(long)]
        snapshot_rate: Option<f64>,
    },
    /// Summarize or stream a log, or re-simulate a recorded session.
    Replay {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "session", required_unless_present = "session")]
        log: Option<PathBuf>,
        /// Session directory written by the gateway.
        #[arg(long)]
        session: Option<PathBuf>,
        /// One line per tick instead of a summary.
        #[arg(long)]
        stream: bool,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackSection {
    pub physio: PhysioParams,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub tick_rate: f64,
    pub snapshot_rate: f64,
    pub data_dir: PathBuf,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            tick_rate: 20.0,
            snapshot_rate: 20.0,
            data_dir: PathBuf::from("sessions"),
        }
    }
}

/// Every section is optional; subcommands read the ones they need.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub reference: ReferenceConfig,
    pub reward: RewardDataConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub feedback: FeedbackSection,
    pub llm: AdapterConfig,
    pub gateway: GatewaySection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

/// What `train-policy` records next to the policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub seed: u64,
    pub scenarios: Vec<String>,
    pub reward_model: String,
    pub reference: String,
    pub kl_budget: KlBudget,
    /// Exact KL of the trained policy over the reference's first-iteration states.
    pub final_kl_exact: f64,
    pub final_objective: f64,
    pub training: TrainingConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub format_version: u32,
    pub policy: String,
    pub reference: String,
    pub seeds: Vec<u64>,
    #[serde(flatten)]
    pub report: EvalReport,
}

fn need_seed(c: &Common, cmd: &str) -> Result<u64> {
    c.seed.ok_or_else(|| anyhow!("{cmd} needs --seed"))
}

fn need_out<'a>(c: &'a Common, cmd: &str) -> Result<&'a Path> {
    c.out.as_deref().ok_or_else(|| anyhow!("{cmd} needs --out"))
}

/// Names, files and directories of `.toml` files; the standard suite when empty.
pub fn resolve_scenarios(items: &[String]) -> Result<Vec<Scenario>> {
    if items.is_empty() {
        return Ok(standard_suite());
    }
    let mut out = Vec::new();
    for item in items {
        let p = Path::new(item);
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "toml"))
                .collect();
            files.sort();
            if files.is_empty() {
                bail!("no .toml scenarios in {}", p.display());
            }
            for f in files {
                out.push(load_scenario(&f).with_context(|| format!("loading {}", f.display()))?);
            }
        } else if p.is_file() {
            out.push(load_scenario(p).with_context(|| format!("loading {}", p.display()))?);
        } else if STANDARD_NAMES.contains(&item.as_str()) {
            out.push(standard(item)?);
        } else {
            bail!(
                "{item} is not a scenario file, a directory or a standard scenario ({})",
                STANDARD_NAMES.join(", ")
            );
        }
    }
    Ok(out)
}

/// Inclusive `a..b`, a comma list, or a single seed.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().with_context(|| format!("bad seed range {text:?}"))?;
        let b: u64 = b.trim().trim_start_matches('=').parse().with_context(|| format!("bad seed range {text:?}"))?;
        if b < a {
            bail!("seed range {text:?} is empty");
        }
        return Ok((a..=b).collect());
    }
    let seeds = text
        .split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

/// A trained policy file or a reference policy file.
pub fn load_policy(path: &Path) -> Result<Policy> {
    if let Ok(p) = Policy::load(path) {
        return Ok(p);
    }
    ReferencePolicy::load(path)
        .map(|r| r.policy().clone())
        .map_err(|e| anyhow!("{} is neither a policy nor a reference policy: {e}", path.display()))
}

fn load_log(path: &Path) -> Result<EpisodeLog> {
    EpisodeLog::load(path).with_context(|| format!("reading episode log {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn scenario_for(log: &EpisodeLog, extra: &[Scenario]) -> Result<Scenario> {
    if let Some(s) = extra.iter().find(|s| s.name() == log.header.scenario) {
        return Ok(s.clone());
    }
    if STANDARD_NAMES.contains(&log.header.scenario.as_str()) {
        return Ok(standard(&log.header.scenario)?);
    }
    bail!(
        "episode {} comes from scenario {:?}; pass its file with --scenario",
        log.header.episode_id,
        log.header.scenario
    )
}

fn sensor_of(scenarios: &[Scenario]) -> SensorConfig {
    scenarios.first().map(|s| s.spec.world.sensor.clone()).unwrap_or_default()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sim {
            common,
            scenario,
            policy,
            greedy,
        } => sim(&common, &scenario, policy.as_deref(), greedy),
        Command::SynthFeedback {
            common,
            log,
            agent,
            noise,
        } => synth_feedback(&common, &log, agent, noise),
        Command::Segment {
            common,
            logs,
            feedback,
            scenarios,
            segment_len,
        } => segment(&common, &logs, &feedback, &scenarios, segment_len),
        Command::TrainReward {
            common,
            data,
            scenarios,
            reference,
        } => train_reward(&common, data.as_deref(), &scenarios, reference.as_deref()),
        Command::TrainPolicy {
            common,
            reward,
            reference,
            scenarios,
            beta,
            iterations,
        } => train_policy(&common, &reward, reference.as_deref(), &scenarios, beta, iterations),
        Command::Eval {
            common,
            policy,
            reference,
            reward,
            scenarios,
            seeds,
            workers,
            greedy,
        } => eval(&common, &policy, reference.as_deref(), &reward, &scenarios, seeds.as_deref(), workers, greedy),
        Command::Serve {
            common,
            bind,
            scenarios,
            tick_rate,
            snapshot_rate,
        } => serve(&common, bind, &scenarios, tick_rate, snapshot_rate),
        Command::Replay {
            common,
            log,
            session,
            stream,
        } => replay(&common, log.as_deref(), session.as_deref(), stream),
    }
}

fn sim(common: &Common, scenario: &str, policy: Option<&Path>, greedy: bool) -> Result<()> {
    let seed = need_seed(common, "sim")?;
    let out = need_out(common, "sim")?;
    let cfg = RunConfig::load(common.config.as_deref())?;
    let sc = resolve_scenarios(&[scenario.to_string()])?.remove(0);
    let policy = policy.map(load_policy).transpose()?;
    let mut opts = InstanceOptions::new(seed);
    opts.adapter = Arc::new(LlmAdapter::from_config(cfg.llm)?);
    if let Some(p) = policy {
        opts.ego = Some(Box::new(LearnedController::new(Arc::new(p), seed, greedy)));
    }
    let log = sc.instantiate(opts)?.run()?;
    log.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{}: {} ticks, {:?}, wrote {}",
        log.header.episode_id,
        log.ticks.len(),
        log.footer.termination,
        out.display()
    );
    Ok(())
}

fn synth_feedback(common: &Common, log: &Path, agent: Option<u32>, noise: Option<f64>) -> Result<()> {
    let seed = need_seed(common, "synth-feedback")?;
    let out = need_out(common, "synth-feedback")?;
    let cfg = RunConfig::load(common.config.as_deref())?;
    let noise = noise.unwrap_or(cfg.feedback.noise);
    if !(noise >= 0.0 && noise.is_finite()) {
        bail!("--noise {noise} must be finite and >= 0");
    }
    let log = load_log(log)?;
    let agent = match agent {
        Some(a) => AgentId(a),
        None => log.ego().ok_or_else(|| anyhow!("log has no ego; pass --agent"))?,
    };
    let channels = synthesize_episode(&log, agent, &cfg.feedback.physio, seed, noise)?;
    create_dir(out)?;
    write_channels(out, &channels)?;
    for (m, buf) in &channels.channels {
        println!("{:<16} {:>7} samples", m.name(), buf.len());
    }
    Ok(())
}

fn segment(
    common: &Common,
    logs: &[PathBuf],
    feedback: &[PathBuf],
    scenario_files: &[String],
    segment_len: Option<usize>,
) -> Result<()> {
    let seed = need_seed(common, "segment")?;
    let out = need_out(common, "segment")?;
    let cfg = RunConfig::load(common.config.as_deref())?;
    if !feedback.is_empty() && feedback.len() != logs.len() {
        bail!("{} --feedback directories for {} logs; give one per log or none", feedback.len(), logs.len());
    }
    if segment_len == Some(0) {
        bail!("--segment-len must be >= 1");
    }
    let extra = if scenario_files.is_empty() { Vec::new() } else { resolve_scenarios(scenario_files)? };
    let mut segments = Vec::new();
    let mut scores: Vec<StressScore> = Vec::new();
    for (i, path) in logs.iter().enumerate() {
        let log = load_log(path)?;
        let sc = scenario_for(&log, &extra)?;
        let ego = log.ego().ok_or_else(|| anyhow!("{} has no ego", path.display()))?;
        let features: Vec<AlignedFeatures> = match feedback.get(i) {
            Some(dir) => {
                let ch = read_channels(dir).with_context(|| format!("reading feedback {}", dir.display()))?;
                hfdrive::feedback::align_ticks(&ch, log.header.dt, log.ticks.len())
            }
            None => Vec::new(),
        };
        let segs = slice_agent_segments(&log, ego, &features, segment_len.unwrap_or(sc.spec.segment_len));
        scores.extend(segs.iter().map(|s| score_stress(s, &sc.spec.stress)));
        segments.extend(segs);
    }
    let pairs = make_pairs(&scores, &cfg.reward.pairing, seed);
    create_dir(out)?;
    write_segments(&out.join(SEGMENTS_FILE), &segments)?;
    write_stress(&out.join(STRESS_FILE), &scores)?;
    write_pairs(&out.join(PAIRS_FILE), &pairs)?;
    println!("{} segments, {} pairs, wrote {}", segments.len(), pairs.len(), out.display());
    Ok(())
}

fn write_stress(path: &Path, scores: &[StressScore]) -> Result<()> {
    let mut text = String::from("# format_version=1\n# segment\tstress\tevent_term\tphysiology_term\trating_term\n");
    for s in scores {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            s.segment, s.stress, s.event_term, s.physiology_term, s.rating_term
        ));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn reference_policy(path: Option<&Path>, scenarios: &[Scenario], cfg: &ReferenceConfig) -> Result<(ReferencePolicy, bool)> {
    match path {
        Some(p) => Ok((
            ReferencePolicy::load(p).with_context(|| format!("loading reference {}", p.display()))?,
            false,
        )),
        None => {
            let (r, report) = clone_reference(scenarios, cfg)?;
            log::info!(
                "cloned reference: loss {:.4}, train accuracy {:.3}",
                report.final_loss,
                report.train_accuracy
            );
            Ok((r, true))
        }
    }
}

fn train_reward(common: &Common, data: Option<&Path>, scenario_items: &[String], reference: Option<&Path>) -> Result<()> {
    let seed = need_seed(common, "train-reward")?;
    let out = need_out(common, "train-reward")?;
    let cfg = RunConfig::load(common.config.as_deref())?;
    let scenarios = resolve_scenarios(scenario_items)?;
    let mut fit = cfg.reward.fit.clone();
    fit.seed = seed;
    let (model, report) = match data {
        Some(dir) => {
            let segments = read_segments(&dir.join(SEGMENTS_FILE))?;
            let pairs = read_pairs(&dir.join(PAIRS_FILE))?;
            let fmap = FeatureMap::new(sensor_of(&scenarios), ActionBins::default(), cfg.reward.include_feedback);
            fit_reward(&pairs, &segments, fmap, &fit)?
        }
        None => {
            let (r, _) = reference_policy(reference, &scenarios, &cfg.reference)?;
            let mut rcfg = cfg.reward.clone();
            rcfg.fit = fit;
            let (model, report, PreferenceData { pairs, .. }) = reward_from_rollouts(&scenarios, r.policy(), &rcfg, seed)?;
            log::info!("{} synthetic pairs", pairs.len());
            (Arc::unwrap_or_clone(model), report)
        }
    };
    model.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "fitted on {} pairs ({} ties): loss {:.4} -> {:.4}, wrote {}",
        report.pairs_used,
        report.ties,
        report.loss_trace.first().copied().unwrap_or(report.final_loss),
        report.final_loss,
        out.display()
    );
    Ok(())
}

fn train_policy(
    common: &Common,
    reward: &Path,
    reference: Option<&Path>,
    scenario_items: &[String],
    beta: Option<f64>,
    iterations: Option<usize>,
) -> Result<()> {
    let seed = need_seed(common, "train-policy")?;
    let out = need_out(common, "train-policy")?;
    let cfg = RunConfig::load(common.config.as_deref())?;
    let mut training = cfg.training.clone();
    training.seed = seed;
    if let Some(b) = beta {
        training.beta = b;
    }
    if let Some(n) = iterations {
        training.iterations = n;
    }
    // reject a bad config before any expensive work
    training.validate().map_err(|e| anyhow!("β (beta) constraint violated: {e}"))?;
    let scenarios = resolve_scenarios(scenario_items)?;
    let model = Arc::new(RewardModel::load(reward).with_context(|| format!("loading reward model {}", reward.display()))?);
    let (sft, cloned) = reference_policy(reference, &scenarios, &cfg.reference)?;
    let env = DrivingEnv::new(scenarios.clone(), model)?;

    let first = collect_rollouts(&env, sft.policy(), sft.policy(), &rollout_seeds(seed, 0, training.rollouts), training.horizon)?;
    let budget = KlBudget::from_rewards(first.iter().flat_map(|b| b.steps.iter().map(|s| s.reward)), training.beta);
    let states: Vec<Vec<f64>> = first.iter().flat_map(|b| b.steps.iter().map(|s| s.x.clone())).collect();

    let outcome = optimize(&sft, &env, &training)?;
    let final_kl = kl_exact(&outcome.policy, sft.policy(), &states);
    create_dir(out)?;
    outcome.policy.save(&out.join(POLICY_FILE))?;
    if cloned {
        sft.save(&out.join(REFERENCE_FILE))?;
    }
    let trace: String = outcome
        .trace
        .iter()
        .map(|t| serde_json::to_string(t).expect("trace serializes") + "\n")
        .collect();
    fs::write(out.join(TRACE_FILE), trace)?;
    let record = RunRecord {
        format_version: RUN_FORMAT_VERSION,
        seed,
        scenarios: scenarios.iter().map(|s| s.name().to_string()).collect(),
        reward_model: reward.display().to_string(),
        reference: reference.map_or_else(|| REFERENCE_FILE.to_string(), |p| p.display().to_string()),
        kl_budget: budget,
        final_kl_exact: final_kl,
        final_objective: outcome.trace.last().map_or(0.0, |t| t.estimate.combined),
        training,
    };
    fs::write(out.join(RUN_FILE), toml::to_string(&record)?)?;
    for t in &outcome.trace {
        println!(
            "iter {:>3}  objective {:>9.4}  reward {:>9.4}  kl {:>8.5}  collisions {}",
            t.iteration, t.estimate.combined, t.estimate.reward_term, t.estimate.kl_term, t.collisions
        );
    }
    println!("kl_exact {final_kl:.5} (budget {:.5}), wrote {}", budget.budget, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    common: &Common,
    policy_path: &Path,
    reference: Option<&Path>,
    reward: &Path,
    scenario_items: &[String],
    seeds: Option<&str>,
    workers: Option<usize>,
    greedy: bool,
) -> Result<()> {
    let out = need_out(common, "eval")?;
    let seeds = match (seeds, common.seed) {
        (Some(s), _) => parse_seeds(s)?,
        (None, Some(s)) => vec![s],
        (None, None) => bail!("eval needs --seeds or --seed"),
    };
    if workers == Some(0) {
        bail!("--workers must be >= 1");
    }
    let cfg = RunConfig::load(common.config.as_deref())?;
    let mut ecfg = cfg.eval.clone();
    ecfg.greedy |= greedy;
    let scenarios = resolve_scenarios(scenario_items)?;
    let policy = load_policy(policy_path)?;
    let sft = match reference {
        Some(p) => load_policy(p)?,
        None => policy.clone(),
    };
    let model = RewardModel::load(reward).with_context(|| format!("loading reward model {}", reward.display()))?;
    let go = || evaluate(&policy, &sft, &scenarios, &seeds, &model, &ecfg);
    let report = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(go)?,
        None => go()?,
    };
    let file = EvalFile {
        format_version: REPORT_FORMAT_VERSION,
        policy: policy_path.display().to_string(),
        reference: reference.unwrap_or(policy_path).display().to_string(),
        seeds,
        report,
    };
    fs::write(out, serde_json::to_string_pretty(&file)? + "\n").with_context(|| format!("writing {}", out.display()))?;
    println!("{:<22} {:>5} {:>10} {:>9} {:>8} {:>9}", "scenario", "eps", "reward", "collide", "safety", "kl");
    for m in file.report.per_scenario.iter().chain([&file.report.aggregate]) {
        println!(
            "{:<22} {:>5} {:>10.4} {:>9.3} {:>8.3} {:>9.5}",
            m.scenario, m.episodes, m.mean_reward, m.collision_rate, m.safety_events, m.kl_exact
        );
    }
    Ok(())
}

fn serve(
    common: &Common,
    bind: std::net::SocketAddr,
    scenario_items: &[String],
    tick_rate: Option<f64>,
    snapshot_rate: Option<f64>,
) -> Result<()> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let data_dir = std::env::var_os("HFDRIVE_DATA_DIR")
        .map(PathBuf::from)
        .or_else(|| common.out.clone())
        .unwrap_or(cfg.gateway.data_dir.clone());
    let mut gcfg = GatewayConfig::new(data_dir);
    gcfg.bind = bind;
    gcfg.tick_rate = tick_rate.unwrap_or(cfg.gateway.tick_rate);
    gcfg.snapshot_rate = snapshot_rate.unwrap_or(cfg.gateway.snapshot_rate);
    gcfg.catalog = resolve_scenarios(scenario_items)?;
    gcfg.adapter = Arc::new(LlmAdapter::from_config(cfg.llm)?);
    gcfg.default_seed = common.seed.unwrap_or(0);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let handle = hfdrive_gateway::serve(gcfg).await?;
        println!("gateway listening on {}", handle.addr);
        tokio::signal::ctrl_c().await?;
        println!("shutting down");
        handle.shutdown().await;
        Ok(())
    })
}

fn replay(common: &Common, log: Option<&Path>, session: Option<&Path>, stream: bool) -> Result<()> {
    let (text, ok) = match (log, session) {
        (Some(path), _) => {
            let log = load_log(path)?;
            (if stream { render_stream(&log) } else { render_summary(&log) }, true)
        }
        (None, Some(dir)) => {
            let r = hfdrive_gateway::replay_session(dir)?;
            let mut text = if stream { render_stream(&r.replayed) } else { render_summary(&r.replayed) };
            let status = match r.record.status {
                SessionStatus::Finished => "finished",
                SessionStatus::Closed => "closed",
                SessionStatus::Disconnected => "disconnected",
            };
            text.push_str(&format!(
                "session {} ({status}), participant {}: replay {}\n",
                r.record.id,
                r.record.participant,
                if r.matches() { "matches the recording" } else { "DIVERGES from the recording" }
            ));
            (text, r.matches())
        }
        (None, None) => bail!("replay needs --log or --session"),
    };
    match &common.out {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    if !ok {
        bail!("replayed session diverges from its log");
    }
    Ok(())
}
