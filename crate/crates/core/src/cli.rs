//! Command implementations behind the `dashgame` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{closed_form_identical_2user, foc_coefficients, solve_equilibrium, EquilibriumResult};
use crate::metrics::{summarize_scenario, QoeMetricParams, ScenarioSummary, SwitchMode};
use crate::model::{BufferView, GameParams, VideoQualityModel};
use crate::netsim::{
    calibrate_nu, make_profile, run_scenario, PolicyKind, ProfileKind, ProfileSchedule, Scenario, SessionTrace,
};
use crate::stability::{self, StabilityReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const PRESETS: &[(&str, &str)] = &[
    ("case1-fixed", include_str!("../presets/case1-fixed.json")),
    ("case1-literal", include_str!("../presets/case1-literal.json")),
    ("case1-buffer-sweep", include_str!("../presets/case1-buffer-sweep.json")),
    ("case2-persistent", include_str!("../presets/case2-persistent.json")),
    ("case2-staged", include_str!("../presets/case2-staged.json")),
    ("case2-short", include_str!("../presets/case2-short.json")),
    ("case3", include_str!("../presets/case3.json")),
    ("case4-fixed", include_str!("../presets/case4-fixed.json")),
    ("case4-persistent", include_str!("../presets/case4-persistent.json")),
    ("case4-staged", include_str!("../presets/case4-staged.json")),
    ("case4-short", include_str!("../presets/case4-short.json")),
    ("realistic-6user", include_str!("../presets/realistic-6user.json")),
];

/// Short names accepted in addition to the file names.
const ALIASES: &[(&str, &str)] = &[("case1", "case1-fixed"), ("case2", "case2-persistent"), ("case4", "case4-fixed")];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset_source(name: &str) -> Option<&'static str> {
    let name = ALIASES.iter().find(|(a, _)| *a == name).map(|(_, n)| *n).unwrap_or(name);
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load_preset(name: &str) -> Result<Scenario> {
    let src = preset_source(name)
        .ok_or_else(|| Error::validation("preset", format!("unknown preset `{name}`; known: {}", preset_names().join(", "))))?;
    Scenario::from_json(src)
}

#[derive(Debug, Parser)]
#[command(name = "dashgame", version, about = "Game-theoretic multi-user DASH rate adaptation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write traces, a summary and a manifest.
    Simulate(SimulateArgs),
    /// Solve the static equilibrium.
    Equilibrium(GameArgs),
    /// Local stability of the update map at the equilibrium.
    Stability(StabilityArgs),
    /// Run the cross product of parameter overrides.
    Sweep(SweepArgs),
    /// List the bundled presets.
    Presets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Continuous,
    Quantized,
}

#[derive(Debug, Clone, Args, Default)]
pub struct ScenarioSource {
    /// Bundled scenario name.
    #[arg(long, conflicts_with = "scenario")]
    pub preset: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Replace `nu` by the calibrated value.
    #[arg(long)]
    pub calibrate_nu: bool,
    /// Number of segments per user.
    #[arg(long)]
    pub segments: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    /// Re-run the scenario snapshot stored in a manifest.
    #[arg(long, conflicts_with_all = ["preset", "scenario"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Learning rate for every user.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Policy for every user: game, qf or bf.
    #[arg(long)]
    pub policy: Option<String>,
    /// Server profile kind, generated around the scenario's initial bandwidth.
    #[arg(long)]
    pub profile: Option<String>,
    /// Reference buffer for every user, seconds.
    #[arg(long)]
    pub b_ref: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, value_delimiter = ',')]
    pub theta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub policy: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub b_ref: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub profile: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GameArgs {
    /// Quality scale per user; a single value is shared by all users.
    #[arg(long, value_delimiter = ',', default_value = "2.15")]
    pub alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.0827")]
    pub beta: Vec<f64>,
    /// Number of users when alpha and beta are single values.
    #[arg(long, default_value_t = 2)]
    pub users: usize,
    #[arg(long, default_value_t = 0.003)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.0041, allow_negative_numbers = true)]
    pub nu: f64,
    #[arg(long)]
    pub calibrate_nu: bool,
    #[arg(long, default_value_t = 0.1)]
    pub p: f64,
    #[arg(long, default_value_t = 2.0)]
    pub segment_duration: f64,
    #[arg(long, default_value_t = 6.0)]
    pub bandwidth: f64,
    #[arg(long, default_value_t = 15.0)]
    pub b_ref: f64,
    /// Buffer level per user; defaults to the reference.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub b_curr: Vec<f64>,
    #[arg(long, default_value_t = 100.0)]
    pub r_max: f64,
}

#[derive(Debug, Clone, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub game: GameArgs,
    /// Learning rates to evaluate; with two or more the flip point is searched.
    #[arg(long, value_delimiter = ',', default_value = "50", allow_negative_numbers = true)]
    pub theta: Vec<f64>,
    /// Evaluation point; defaults to the equilibrium.
    #[arg(long, value_delimiter = ',')]
    pub rates: Vec<f64>,
}

/// Everything needed to repeat a simulate run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario_path: Option<String>,
    pub preset: Option<String>,
    pub scenario: Scenario,
    pub seed: u64,
    pub mode: Mode,
    pub tool_version: String,
    pub output_dir: String,
    pub traces: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::validation("manifest", e.to_string()))?;
        m.scenario.validate()?;
        Ok(m)
    }
}

fn resolve_source(src: &ScenarioSource) -> Result<(Scenario, Option<String>, Option<String>)> {
    match (&src.preset, &src.scenario) {
        (Some(p), None) => Ok((load_preset(p)?, Some(p.clone()), None)),
        (None, Some(path)) => {
            let s = Scenario::from_path(path)?;
            Ok((s, None, Some(path.display().to_string())))
        }
        (None, None) => Err(Error::validation("scenario", "pass --preset NAME or --scenario FILE")),
        (Some(_), Some(_)) => Err(Error::validation("scenario", "--preset and --scenario are exclusive")),
    }
}

fn apply_overrides(s: &mut Scenario, o: &Overrides) -> Result<()> {
    if let Some(seed) = o.seed {
        s.sim.seed = seed;
    }
    if let Some(mode) = o.mode {
        s.sim.quantize = mode == Mode::Quantized;
    }
    if o.calibrate_nu {
        s.game.calibrate_nu = true;
    }
    if let Some(n) = o.segments {
        s.sim.total_segments = n;
    }
    Ok(())
}

/// Replace the server profile with a generated one of `kind` around the initial bandwidth.
pub fn set_profile(s: &mut Scenario, kind: &str) -> Result<()> {
    let kind: ProfileKind = kind.parse()?;
    let base = s.server.profile()?.at(0.0);
    let profile = make_profile(kind, base, &ProfileSchedule::default())?;
    s.server.kind = kind;
    s.server.base = Some(base);
    s.server.breakpoints = Some(profile.breakpoints);
    s.server.schedule = None;
    Ok(())
}

fn set_b_ref(s: &mut Scenario, b_ref: f64) {
    for u in &mut s.users {
        u.b_ref = b_ref;
    }
}

fn mode_of(s: &Scenario) -> Mode {
    if s.sim.quantize {
        Mode::Quantized
    } else {
        Mode::Continuous
    }
}

fn switch_mode(mode: Mode) -> SwitchMode {
    match mode {
        Mode::Quantized => SwitchMode::Quantized,
        Mode::Continuous => SwitchMode::default(),
    }
}

pub fn trace_file_name(user: usize) -> String {
    format!("trace_user{user}.csv")
}

/// Run a scenario, write its outputs to `out` and summarize.
pub fn run_and_write(scenario: &Scenario, out: &Path) -> Result<(Vec<SessionTrace>, ScenarioSummary, Vec<String>)> {
    let traces = run_scenario(scenario)?;
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for tr in &traces {
        let name = trace_file_name(tr.user_id);
        let f = std::fs::File::create(out.join(&name))?;
        tr.write_csv(std::io::BufWriter::new(f))?;
        files.push(name);
    }
    let b_refs: Vec<f64> = scenario.users.iter().map(|u| u.b_ref).collect();
    let summary = summarize_scenario(
        &scenario.name,
        &traces,
        &b_refs,
        switch_mode(mode_of(scenario)),
        QoeMetricParams::default(),
    )?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    write_summary_csv(&out.join("summary.csv"), &[(Vec::new(), summary.clone())])?;
    Ok((traces, summary, files))
}

const STAT_COLUMNS: &[&str] = &[
    "user_id",
    "policy",
    "avg_rate",
    "rate_stddev",
    "switch_count",
    "avg_switch_amplitude",
    "avg_quality",
    "quality_stddev",
    "stall_count",
    "stall_total",
    "avg_buffer",
    "qoe1",
    "qoe2",
];

/// Flat table: optional leading key columns, then one row per user.
fn write_summary_csv(path: &Path, rows: &[(Vec<(String, String)>, ScenarioSummary)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let keys: Vec<String> = rows
        .first()
        .map(|(k, _)| k.iter().map(|(name, _)| name.clone()).collect())
        .unwrap_or_default();
    let mut header: Vec<String> = keys.clone();
    header.extend(STAT_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (key, summary) in rows {
        for u in &summary.users {
            let mut rec: Vec<String> = key.iter().map(|(_, v)| v.clone()).collect();
            let s = &u.stats;
            rec.extend([
                u.user_id.to_string(),
                u.policy.clone(),
                s.avg_rate.to_string(),
                s.rate_stddev.to_string(),
                s.switch_count.to_string(),
                s.avg_switch_amplitude.to_string(),
                s.avg_quality.to_string(),
                s.quality_stddev.to_string(),
                s.stall_count.to_string(),
                s.stall_total.to_string(),
                s.avg_buffer.to_string(),
                u.qoe1.to_string(),
                u.qoe2.to_string(),
            ]);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateOutcome {
    pub out: PathBuf,
    pub manifest: RunManifest,
    pub summary: ScenarioSummary,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulateOutcome> {
    let (mut scenario, preset, path, default_out) = match &args.manifest {
        Some(m) => {
            let m = RunManifest::load(m)?;
            let out = PathBuf::from(&m.output_dir);
            (m.scenario, m.preset, m.scenario_path, out)
        }
        None => {
            let (s, preset, path) = resolve_source(&args.source)?;
            let out = PathBuf::from("runs").join(if s.name.is_empty() { "scenario" } else { &s.name });
            (s, preset, path, out)
        }
    };
    apply_overrides(&mut scenario, &args.overrides)?;
    if let Some(theta) = args.theta {
        scenario.set_theta(theta);
    }
    if let Some(policy) = &args.policy {
        scenario.set_policy(policy.parse()?);
    }
    if let Some(kind) = &args.profile {
        set_profile(&mut scenario, kind)?;
    }
    if let Some(b) = args.b_ref {
        set_b_ref(&mut scenario, b);
    }
    scenario.validate()?;
    let out = args.out.clone().unwrap_or(default_out);
    let (_, summary, traces) = run_and_write(&scenario, &out)?;
    let manifest = RunManifest {
        scenario_path: path,
        preset,
        seed: scenario.sim.seed,
        mode: mode_of(&scenario),
        scenario,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        output_dir: out.display().to_string(),
        traces,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(SimulateOutcome { out, manifest, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub run: usize,
    pub theta: Option<f64>,
    pub policy: Option<String>,
    pub b_ref: Option<f64>,
    pub profile: Option<String>,
    pub summary: ScenarioSummary,
}

fn grid<T: Clone>(v: &[T]) -> Vec<Option<T>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().cloned().map(Some).collect()
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepRow>> {
    if args.theta.is_empty() && args.policy.is_empty() && args.b_ref.is_empty() && args.profile.is_empty() {
        return Err(Error::validation("grid", "empty parameter grid: pass --theta, --policy, --b-ref or --profile"));
    }
    let (mut base, _, _) = resolve_source(&args.source)?;
    apply_overrides(&mut base, &args.overrides)?;
    let mut runs = Vec::new();
    for theta in grid(&args.theta) {
        for policy in grid(&args.policy) {
            for b_ref in grid(&args.b_ref) {
                for profile in grid(&args.profile) {
                    let mut s = base.clone();
                    if let Some(t) = theta {
                        s.set_theta(t);
                    }
                    if let Some(p) = &policy {
                        s.set_policy(p.parse::<PolicyKind>()?);
                    }
                    if let Some(b) = b_ref {
                        set_b_ref(&mut s, b);
                    }
                    if let Some(k) = &profile {
                        set_profile(&mut s, k)?;
                    }
                    s.validate()?;
                    runs.push((runs.len(), theta, policy.clone(), b_ref, profile.clone(), s));
                }
            }
        }
    }
    let rows = runs
        .into_par_iter()
        .map(|(run, theta, policy, b_ref, profile, s)| {
            let dir = args.out.join(format!("run_{run:03}"));
            let (_, summary, _) = run_and_write(&s, &dir)?;
            Ok(SweepRow {
                run,
                theta,
                policy,
                b_ref,
                profile,
                summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    let table: Vec<(Vec<(String, String)>, ScenarioSummary)> = rows
        .iter()
        .map(|r| {
            (
                vec![
                    ("run".to_string(), r.run.to_string()),
                    ("theta".to_string(), opt(r.theta.map(|t| t.to_string()))),
                    ("sweep_policy".to_string(), opt(r.policy.clone())),
                    ("b_ref".to_string(), opt(r.b_ref.map(|b| b.to_string()))),
                    ("profile".to_string(), opt(r.profile.clone())),
                ],
                r.summary.clone(),
            )
        })
        .collect();
    std::fs::create_dir_all(&args.out)?;
    write_summary_csv(&args.out.join("sweep.csv"), &table)?;
    Ok(rows)
}

struct GameSetup {
    params: GameParams,
    models: Vec<VideoQualityModel>,
    bufs: Vec<BufferView>,
    bandwidth: f64,
}

impl GameSetup {
    fn identical(&self) -> bool {
        self.models.len() == 2
            && self.models[0].alpha == self.models[1].alpha
            && self.models[0].beta == self.models[1].beta
            && self.bufs.iter().all(|b| b.b_curr == b.b_ref)
            && self.bufs[0].b_ref == self.bufs[1].b_ref
    }
}

fn game_setup(a: &GameArgs) -> Result<GameSetup> {
    let n = a.alpha.len().max(a.beta.len()).max(if a.alpha.len() <= 1 && a.beta.len() <= 1 { a.users } else { 1 });
    if n == 0 {
        return Err(Error::validation("users", "must be at least 1"));
    }
    let pick = |v: &[f64], name: &str, i: usize| -> Result<f64> {
        match v.len() {
            1 => Ok(v[0]),
            len if len == n => Ok(v[i]),
            len => Err(Error::validation(name, format!("expected 1 or {n} values, got {len}"))),
        }
    };
    let mut models = Vec::with_capacity(n);
    for i in 0..n {
        models.push(VideoQualityModel::new(pick(&a.alpha, "alpha", i)?, pick(&a.beta, "beta", i)?, vec![1.0])?);
    }
    let nu = if a.calibrate_nu {
        let mut total = 0.0;
        for m in &models {
            total += calibrate_nu(a.mu, a.segment_duration, m, a.bandwidth, n)?;
        }
        total / n as f64
    } else {
        a.nu
    };
    let params = GameParams::new(a.mu, nu, a.p, a.segment_duration)?;
    let mut bufs = Vec::with_capacity(n);
    for i in 0..n {
        let b_curr = if a.b_curr.is_empty() { a.b_ref } else { pick(&a.b_curr, "b_curr", i)? };
        bufs.push(BufferView::new(b_curr, a.b_ref, 0.0)?);
    }
    if !(a.bandwidth > 0.0) {
        return Err(Error::validation("bandwidth", format!("must be > 0, got {}", a.bandwidth)));
    }
    if !(a.r_max > 0.0) {
        return Err(Error::validation("r_max", format!("must be > 0, got {}", a.r_max)));
    }
    Ok(GameSetup {
        params,
        models,
        bufs,
        bandwidth: a.bandwidth,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumOutput {
    pub nu: f64,
    #[serde(flatten)]
    pub result: EquilibriumResult,
    /// Two identical users only.
    pub closed_form: Option<f64>,
    pub closed_form_gap: Option<f64>,
}

pub fn cmd_equilibrium(a: &GameArgs) -> Result<EquilibriumOutput> {
    let g = game_setup(a)?;
    let result = solve_equilibrium(&g.params, &g.models, &g.bufs, g.bandwidth, a.r_max)?;
    if !result.converged {
        return Err(Error::Domain(format!(
            "equilibrium solver stopped at residual {:e} after {} iterations",
            result.residual, result.iterations
        )));
    }
    let closed_form = if g.identical() {
        let z = foc_coefficients(&g.params, &g.models[0], &g.bufs[0], g.bandwidth)?;
        Some(closed_form_identical_2user(&z, g.models[0].beta))
    } else {
        None
    };
    Ok(EquilibriumOutput {
        nu: g.params.nu,
        closed_form_gap: closed_form.map(|c| (c - result.rates[0]).abs()),
        closed_form,
        result,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRow {
    pub theta: f64,
    #[serde(flatten)]
    pub report: StabilityReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityOutput {
    pub nu: f64,
    pub rates: Vec<f64>,
    pub method: String,
    pub rows: Vec<StabilityRow>,
    /// Learning rate where the verdict flips, when the requested range brackets one.
    pub boundary_theta: Option<f64>,
}

pub fn cmd_stability(a: &StabilityArgs) -> Result<StabilityOutput> {
    let g = game_setup(&a.game)?;
    let n = g.models.len();
    if a.theta.is_empty() {
        return Err(Error::validation("theta", "at least one value is required"));
    }
    for (i, &t) in a.theta.iter().enumerate() {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::validation(format!("theta[{i}]"), format!("must be >= 0, got {t}")));
        }
    }
    let rates = if a.rates.is_empty() {
        let eq = solve_equilibrium(&g.params, &g.models, &g.bufs, g.bandwidth, a.game.r_max)?;
        eq.rates
    } else if a.rates.len() == n {
        a.rates.clone()
    } else {
        return Err(Error::validation("rates", format!("expected {n} values, got {}", a.rates.len())));
    };
    let report_at = |theta: f64| -> Result<StabilityReport> {
        let thetas = vec![theta; n];
        let mut report = stability::analyze(&g.params, &g.models, &g.bufs, g.bandwidth, &rates, &thetas)?;
        if g.identical() && (rates[0] - rates[1]).abs() <= 1e-9 * rates[0].abs().max(1.0) {
            report.closed_form = Some(stability::closed_form_conditions(
                &g.params,
                &g.models[0],
                theta,
                0.5 * (rates[0] + rates[1]),
                g.bandwidth,
            )?);
        }
        Ok(report)
    };
    let rows = a
        .theta
        .iter()
        .map(|&theta| Ok(StabilityRow { theta, report: report_at(theta)? }))
        .collect::<Result<Vec<_>>>()?;
    let boundary_theta = if a.theta.len() >= 2 {
        let lo = a.theta.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        stability::stability_boundary_theta(|t| report_at(t).map(|r| r.spectral_radius), lo.max(1e-12), hi)?
    } else {
        None
    };
    Ok(StabilityOutput {
        nu: g.params.nu,
        rates,
        method: if n == 2 { "analytic jacobian" } else { "numeric jacobian (central differences)" }.to_string(),
        rows,
        boundary_theta,
    })
}

#[derive(Debug, Serialize)]
struct ErrorDoc<'a> {
    error: ErrorBody<'a>,
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    message: String,
}

/// Exit code and machine-readable description of a failure.
pub fn error_report(e: &Error) -> (i32, String) {
    let (code, kind, field) = match e {
        Error::Validation { field, .. } => (EXIT_VALIDATION, "validation", Some(field.as_str())),
        Error::Json(_) => (EXIT_VALIDATION, "validation", None),
        Error::Io(_) => (EXIT_RUNTIME, "io", None),
        Error::Simulation { .. } => (EXIT_RUNTIME, "simulation", None),
        _ => (EXIT_RUNTIME, "runtime", None),
    };
    let doc = ErrorDoc {
        error: ErrorBody {
            kind,
            field,
            message: e.to_string(),
        },
    };
    (code, serde_json::to_string(&doc).expect("error document serializes"))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => {
            let o = cmd_simulate(a)?;
            print_json(&serde_json::json!({
                "out": o.out,
                "traces": o.manifest.traces,
                "summary": o.summary,
            }))
        }
        Command::Equilibrium(a) => print_json(&cmd_equilibrium(a)?),
        Command::Stability(a) => print_json(&cmd_stability(a)?),
        Command::Sweep(a) => {
            let rows = cmd_sweep(a)?;
            print_json(&serde_json::json!({
                "table": a.out.join("sweep.csv"),
                "runs": rows.len(),
            }))
        }
        Command::Presets => {
            for name in preset_names() {
                let s = load_preset(name)?;
                println!("{name:20} {}", s.description);
            }
            Ok(())
        }
    }
}

/// Parse `args`, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let (code, doc) = error_report(&e);
            eprintln!("{doc}");
            code
        }
    }
}
