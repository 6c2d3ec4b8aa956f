//! Command-line interface: argument parsing, config-file merging, and the
//! per-subcommand output renderers.
//!
//! Every setting resolves as command line over config file over built-in
//! default. CSV floats are printed with [`fmt12`] (12 significant digits,
//! scientific) so repeated runs byte-compare; JSON uses the shortest
//! round-trip float form; text output favors readability.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dp::{self, TruncationConfig};
use crate::error::{Error, Result};
use crate::model::{Action, ModelParams};
use crate::sim::{self, SimConfig, SimSummary};
use crate::steady_state::{self, AsymptoticCost};

/// Column set of the sweep table. Evaluate and search emit the same schema
/// so a single-threshold run is one row of a sweep.
pub const SWEEP_CSV_HEADER: &str =
    "m,j_closed,j_oracle,branch,sim_mean,sim_ci_lo,sim_ci_hi,reps,slots,seed";

/// Twelve significant digits, scientific: the CSV float format.
pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

#[derive(Debug, Parser)]
#[command(
    name = "platoon-dispatch",
    version,
    about = "Threshold dispatching for truck platoons: exact analysis, value iteration, simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Long-run average cost of one threshold: closed form and balance-equation cross-check
    Evaluate(RawOpts),
    /// Smallest threshold minimizing the long-run average cost
    Search(RawOpts),
    /// Value iteration: threshold structure, convexity, decision gaps
    Dp(RawOpts),
    /// Replicated seeded simulation of one threshold
    Simulate(RawOpts),
    /// Average cost across thresholds 0..=m-max
    Sweep(RawOpts),
}

/// Flags shared by every subcommand; commands ignore flags they have no use
/// for. All are optional here so the config file can fill gaps.
#[derive(Debug, Clone, Default, Args)]
pub struct RawOpts {
    /// Per-slot truck arrival probability, in (0, 1)
    #[arg(long)]
    pub p: Option<f64>,

    /// Per-slot platoon passing probability, in (0, 1)
    #[arg(long)]
    pub q: Option<f64>,

    /// Premium for dispatching a truck solo, >= 0
    #[arg(long)]
    pub kappa: Option<f64>,

    /// Discount factor for value iteration, in (0, 1) [default: 0.99]
    #[arg(long)]
    pub beta: Option<f64>,

    /// Threshold to evaluate or simulate
    #[arg(long)]
    pub m: Option<usize>,

    /// Largest threshold considered [default: 200 for search, 10 for sweep]
    #[arg(long)]
    pub m_max: Option<usize>,

    /// Run value iteration for this many stages instead of to convergence
    #[arg(long)]
    pub horizon: Option<usize>,

    /// Queue truncation for value iteration [default: 200]
    #[arg(long)]
    pub x_max: Option<usize>,

    /// Suboptimality tolerance for the discounted solve [default: 1e-6]
    #[arg(long)]
    pub tol: Option<f64>,

    /// Measured slots per simulation replication [default: 1000000]
    #[arg(long)]
    pub slots: Option<u64>,

    /// Simulation replications [default: 30]
    #[arg(long)]
    pub reps: Option<usize>,

    /// Base seed; replication seeds derive from it [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Confidence level for simulation intervals, in (0, 1) [default: 0.99]
    #[arg(long)]
    pub confidence: Option<f64>,

    /// Attach simulated estimates to analytic output
    #[arg(long)]
    pub simulate: bool,

    /// Write output to this file instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Output format [default: text]
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,

    /// TOML file supplying any of the above keys (kebab-case, e.g. x-max)
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Csv,
    Json,
}

/// Config-file counterpart of [`RawOpts`]. Keys match the flag names;
/// underscores are accepted as aliases for the dashed forms.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    p: Option<f64>,
    q: Option<f64>,
    kappa: Option<f64>,
    beta: Option<f64>,
    m: Option<usize>,
    #[serde(alias = "m_max")]
    m_max: Option<usize>,
    horizon: Option<usize>,
    #[serde(alias = "x_max")]
    x_max: Option<usize>,
    tol: Option<f64>,
    slots: Option<u64>,
    reps: Option<usize>,
    seed: Option<u64>,
    confidence: Option<f64>,
    simulate: Option<bool>,
    format: Option<String>,
}

fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| Error::BadInput(format!("config {}: {e}", path.display())))
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct Settings {
    pub p: f64,
    pub q: f64,
    pub kappa: f64,
    pub beta: f64,
    pub m: Option<usize>,
    pub m_max: Option<usize>,
    pub horizon: Option<usize>,
    pub x_max: usize,
    pub tol: f64,
    pub slots: u64,
    pub reps: usize,
    pub seed: u64,
    pub confidence: f64,
    pub simulate: bool,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
}

fn missing(flag: &str) -> Error {
    Error::BadInput(format!(
        "missing required parameter {flag}; pass it on the command line or in the config file"
    ))
}

/// Merges command line, config file, and defaults into [`Settings`].
pub fn resolve(raw: &RawOpts) -> Result<Settings> {
    let file = match &raw.config {
        Some(path) => load_config(path)?,
        None => ConfigFile::default(),
    };
    let format = match raw.format {
        Some(f) => f,
        None => match &file.format {
            Some(name) => <OutputFormat as ValueEnum>::from_str(name, true)
                .map_err(|_| Error::BadInput(format!("config format: unknown value {name:?}")))?,
            None => OutputFormat::Text,
        },
    };
    let s = Settings {
        p: raw.p.or(file.p).ok_or_else(|| missing("--p"))?,
        q: raw.q.or(file.q).ok_or_else(|| missing("--q"))?,
        kappa: raw.kappa.or(file.kappa).ok_or_else(|| missing("--kappa"))?,
        beta: raw.beta.or(file.beta).unwrap_or(0.99),
        m: raw.m.or(file.m),
        m_max: raw.m_max.or(file.m_max),
        horizon: raw.horizon.or(file.horizon),
        x_max: raw.x_max.or(file.x_max).unwrap_or(200),
        tol: raw.tol.or(file.tol).unwrap_or(1e-6),
        slots: raw.slots.or(file.slots).unwrap_or(1_000_000),
        reps: raw.reps.or(file.reps).unwrap_or(30),
        seed: raw.seed.or(file.seed).unwrap_or(42),
        confidence: raw.confidence.or(file.confidence).unwrap_or(0.99),
        simulate: raw.simulate || file.simulate.unwrap_or(false),
        format,
        out: raw.out.clone(),
    };
    if s.x_max < 2 {
        return Err(Error::BadInput(format!(
            "--x-max must be at least 2, got {}",
            s.x_max
        )));
    }
    if !(s.tol.is_finite() && s.tol > 0.0) {
        return Err(Error::BadInput(format!(
            "--tol must be a positive finite number, got {}",
            s.tol
        )));
    }
    if s.horizon == Some(0) {
        return Err(Error::BadInput("--horizon must be at least 1".into()));
    }
    if s.m_max == Some(0) {
        return Err(Error::BadInput("--m-max must be at least 1".into()));
    }
    Ok(s)
}

impl Settings {
    fn model(&self) -> Result<ModelParams> {
        ModelParams::new(self.p, self.q, self.kappa, self.beta)
    }

    fn require_m(&self) -> Result<usize> {
        self.m.ok_or_else(|| missing("--m"))
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            replications: self.reps,
            slots: self.slots,
            warmup: 0,
            base_seed: self.seed,
            confidence: self.confidence,
        }
    }
}

fn write_payload(settings: &Settings, payload: &str) -> Result<()> {
    match &settings.out {
        Some(path) => std::fs::write(path, payload)?,
        None => print!("{payload}"),
    }
    Ok(())
}

/// Parses the process arguments, runs the command, and writes its output.
pub fn run(cli: Cli) -> Result<()> {
    let raw = match &cli.command {
        Command::Evaluate(o)
        | Command::Search(o)
        | Command::Dp(o)
        | Command::Simulate(o)
        | Command::Sweep(o) => o,
    };
    let settings = resolve(raw)?;
    let output = match &cli.command {
        Command::Evaluate(_) => evaluate_report(&settings)?,
        Command::Search(_) => match search_report(&settings) {
            // The cost curve evaluated so far still gets written, so a
            // too-small cap leaves the caller something to inspect.
            Err(Error::SearchCapExceeded { cap, curve }) => {
                let partial = partial_curve_output(&settings, cap, &curve)?;
                write_payload(&settings, &partial)?;
                return Err(Error::SearchCapExceeded { cap, curve });
            }
            other => other?,
        },
        Command::Dp(_) => dp_report(&settings)?,
        Command::Simulate(_) => simulate_report(&settings)?,
        Command::Sweep(_) => sweep_report(&settings)?,
    };
    write_payload(&settings, &output)
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::BadInput(format!("json encoding: {e}")))
}

fn action_label(a: Action) -> &'static str {
    match a {
        Action::Hold => "hold",
        Action::Dispatch => "dispatch",
    }
}

/// Simulation fields shared by the JSON reports.
#[derive(Debug, Serialize)]
struct SimBlock {
    mean: f64,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    confidence: f64,
    reps: usize,
    slots: u64,
    seed: u64,
    max_queue: usize,
}

impl SimBlock {
    fn new(summary: &SimSummary, s: &Settings) -> Self {
        let (ci_lo, ci_hi) = match summary.ci_bounds() {
            Some((lo, hi)) => (Some(lo), Some(hi)),
            None => (None, None),
        };
        SimBlock {
            mean: summary.grand_mean,
            ci_lo,
            ci_hi,
            confidence: s.confidence,
            reps: s.reps,
            slots: s.slots,
            seed: s.seed,
            max_queue: summary.max_queue,
        }
    }
}

fn sim_text_lines(lines: &mut Vec<String>, summary: &SimSummary, s: &Settings) {
    lines.push(format!(
        "simulated mean cost = {} ({} replications x {} slots, seed {})",
        summary.grand_mean, s.reps, s.slots, s.seed
    ));
    match summary.ci_bounds() {
        Some((lo, hi)) => lines.push(format!(
            "confidence {} interval [{lo}, {hi}]",
            s.confidence
        )),
        None => lines.push("interval: none (single replication)".into()),
    }
}

/// One row in the sweep schema. `sim` fills the trailing six columns.
fn sweep_csv_row(
    m: usize,
    j_closed: f64,
    j_oracle: f64,
    branch: &str,
    sim: Option<&SimSummary>,
    s: &Settings,
) -> String {
    match sim {
        Some(summary) => {
            let (lo, hi) = match summary.ci_bounds() {
                Some((lo, hi)) => (fmt12(lo), fmt12(hi)),
                None => (String::new(), String::new()),
            };
            format!(
                "{m},{},{},{branch},{},{lo},{hi},{},{},{}",
                fmt12(j_closed),
                fmt12(j_oracle),
                fmt12(summary.grand_mean),
                s.reps,
                s.slots,
                s.seed
            )
        }
        None => format!("{m},{},{},{branch},,,,,,", fmt12(j_closed), fmt12(j_oracle)),
    }
}

#[derive(Debug, Serialize)]
struct EvaluateReport {
    p: f64,
    q: f64,
    kappa: f64,
    m: usize,
    j_closed: f64,
    j_oracle: f64,
    branch: &'static str,
    /// Known overshoot of the p = q closed form against the exact cost.
    closed_form_discrepancy: Option<f64>,
    /// Stationary queue distribution f(0..=m) under the threshold policy.
    stationary: Vec<f64>,
    simulation: Option<SimBlock>,
}

fn evaluate_report(s: &Settings) -> Result<String> {
    let params = s.model()?;
    let m = s.require_m()?;
    let (j_closed, branch) = steady_state::average_cost_closed_form(&params, m);
    let j_oracle = steady_state::average_cost_oracle(&params, m)?;
    let discrepancy = steady_state::closed_form_discrepancy(&params, m);
    let stationary = steady_state::stationary_closed_form(&params, m);
    let summary = if s.simulate {
        Some(sim::simulate_replications(&params, m, &s.sim_config())?)
    } else {
        None
    };
    match s.format {
        OutputFormat::Csv => Ok(format!(
            "{SWEEP_CSV_HEADER}\n{}\n",
            sweep_csv_row(m, j_closed, j_oracle, branch.label(), summary.as_ref(), s)
        )),
        OutputFormat::Json => to_json(&EvaluateReport {
            p: s.p,
            q: s.q,
            kappa: s.kappa,
            m,
            j_closed,
            j_oracle,
            branch: branch.label(),
            closed_form_discrepancy: discrepancy,
            stationary: stationary.clone(),
            simulation: summary.as_ref().map(|sum| SimBlock::new(sum, s)),
        }),
        OutputFormat::Text => {
            let dist = stationary
                .iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(", ");
            let mut lines = vec![
                format!("threshold m = {m}: p = {}, q = {}, kappa = {}", s.p, s.q, s.kappa),
                format!("closed-form average cost = {j_closed} (branch {})", branch.label()),
                format!("balance-equation cross-check = {j_oracle}"),
                format!("stationary queue distribution f(0..={m}) = [{dist}]"),
            ];
            if let Some(d) = discrepancy {
                lines.push(format!(
                    "note: the p = q closed form overshoots the exact cost by p(1-p)/(m+1) = {d}"
                ));
            }
            if let Some(sum) = &summary {
                sim_text_lines(&mut lines, sum, s);
            }
            Ok(lines.join("\n") + "\n")
        }
    }
}

#[derive(Debug, Serialize)]
struct SearchReport {
    p: f64,
    q: f64,
    kappa: f64,
    m_max: usize,
    m_star: usize,
    j_star_closed: f64,
    j_star_oracle: f64,
    branch: &'static str,
    /// Average cost at thresholds 0..curve.len(), oracle route.
    curve: Vec<f64>,
    diverges: bool,
    asymptote: Option<f64>,
    simulation: Option<SimBlock>,
}

fn search_report(s: &Settings) -> Result<String> {
    let params = s.model()?;
    let cap = s.m_max.unwrap_or(200);
    let found = steady_state::find_optimal_threshold(&params, cap)?;
    let m_star = found.m_star;
    let (j_closed, branch) = steady_state::average_cost_closed_form(&params, m_star);
    let j_oracle = found.curve[m_star];
    let (diverges, asymptote) = match steady_state::asymptotic_limit(&params) {
        AsymptoticCost::Diverges => (true, None),
        AsymptoticCost::ConvergesTo(v) => (false, Some(v)),
    };
    let summary = if s.simulate {
        Some(sim::simulate_replications(&params, m_star, &s.sim_config())?)
    } else {
        None
    };
    match s.format {
        OutputFormat::Csv => {
            let mut out = String::from(SWEEP_CSV_HEADER);
            out.push('\n');
            for (m, &j) in found.curve.iter().enumerate() {
                let (jc, br) = steady_state::average_cost_closed_form(&params, m);
                let sim_here = if m == m_star { summary.as_ref() } else { None };
                out.push_str(&sweep_csv_row(m, jc, j, br.label(), sim_here, s));
                out.push('\n');
            }
            Ok(out)
        }
        OutputFormat::Json => to_json(&SearchReport {
            p: s.p,
            q: s.q,
            kappa: s.kappa,
            m_max: cap,
            m_star,
            j_star_closed: j_closed,
            j_star_oracle: j_oracle,
            branch: branch.label(),
            curve: found.curve.clone(),
            diverges,
            asymptote,
            simulation: summary.as_ref().map(|sum| SimBlock::new(sum, s)),
        }),
        OutputFormat::Text => {
            let mut lines = vec![
                format!(
                    "p = {}, q = {}, kappa = {}, search cap m <= {cap}",
                    s.p, s.q, s.kappa
                ),
                format!("optimal threshold m* = {m_star}"),
                format!(
                    "average cost at m*: closed form {j_closed} (branch {}), balance equations {j_oracle}",
                    branch.label()
                ),
            ];
            let curve = found
                .curve
                .iter()
                .enumerate()
                .map(|(m, j)| format!("J({m}) = {j}"))
                .collect::<Vec<_>>()
                .join(", ");
            lines.push(format!("cost curve: {curve}"));
            lines.push(match asymptote {
                Some(v) => format!("limit as m grows: {v}"),
                None => "limit as m grows: none (p >= q, cost grows without bound)".into(),
            });
            if let Some(sum) = &summary {
                sim_text_lines(&mut lines, sum, s);
            }
            Ok(lines.join("\n") + "\n")
        }
    }
}

#[derive(Debug, Serialize)]
struct PartialSearchReport {
    p: f64,
    q: f64,
    kappa: f64,
    m_max: usize,
    cap_exceeded: bool,
    /// Average cost at thresholds 0..curve.len(), oracle route.
    curve: Vec<f64>,
}

/// Rendered when the search exhausts its cap: the curve evaluated so far,
/// in the requested format.
fn partial_curve_output(s: &Settings, cap: usize, curve: &[f64]) -> Result<String> {
    let params = s.model()?;
    match s.format {
        OutputFormat::Csv => {
            let mut out = String::from(SWEEP_CSV_HEADER);
            out.push('\n');
            for (m, &j) in curve.iter().enumerate() {
                let (jc, br) = steady_state::average_cost_closed_form(&params, m);
                out.push_str(&sweep_csv_row(m, jc, j, br.label(), None, s));
                out.push('\n');
            }
            Ok(out)
        }
        OutputFormat::Json => to_json(&PartialSearchReport {
            p: s.p,
            q: s.q,
            kappa: s.kappa,
            m_max: cap,
            cap_exceeded: true,
            curve: curve.to_vec(),
        }),
        OutputFormat::Text => {
            let listed = curve
                .iter()
                .enumerate()
                .map(|(m, j)| format!("J({m}) = {j}"))
                .collect::<Vec<_>>()
                .join(", ");
            Ok(format!(
                "p = {}, q = {}, kappa = {}, search cap m <= {cap}\nno optimum found within the cap; partial cost curve: {listed}\n",
                s.p, s.q, s.kappa
            ))
        }
    }
}

#[derive(Debug, Serialize)]
struct GapSample {
    x: usize,
    gap: f64,
    holds: bool,
}

#[derive(Debug, Serialize)]
struct DpReport {
    p: f64,
    q: f64,
    kappa: f64,
    beta: f64,
    x_max: usize,
    tol: Option<f64>,
    horizon: Option<usize>,
    sweeps: usize,
    residual: Option<f64>,
    reliable: Option<bool>,
    threshold: usize,
    /// True when no dispatch appears below the cap, so no finite threshold
    /// is certified within the truncated range.
    threshold_is_cap: bool,
    convex: bool,
    min_second_difference: f64,
    gap_cut: f64,
    gaps: Vec<GapSample>,
    values_head: Vec<f64>,
    m_star_average_cost: Option<usize>,
    agrees: Option<bool>,
}

fn dp_report(s: &Settings) -> Result<String> {
    let params = s.model()?;
    let trunc = TruncationConfig::new(s.x_max);

    let (values, policy, sweeps, residual, reliable) = match s.horizon {
        Some(n) => {
            let mut solve = dp::value_iterate_finite(&params, &trunc, n);
            let values = solve.tables.pop().expect("horizon >= 1 produces a table");
            let policy = solve.policies.pop().expect("horizon >= 1 produces a policy");
            (values, policy, n, None, Some(solve.reliable))
        }
        None => {
            let solve = dp::value_iterate_discounted(&params, &trunc, s.tol)?;
            (
                solve.values,
                solve.policy,
                solve.sweeps,
                Some(solve.residual),
                Some(solve.reliable),
            )
        }
    };

    let threshold = dp::extract_threshold(&policy)?;
    let threshold_is_cap = threshold == s.x_max;
    let vals = values.values();
    let conv = dp::check_convexity(&vals[..vals.len() - 1]);
    let cut = (s.kappa - 1.0) / s.beta;
    let gaps: Vec<GapSample> = (1..=8.min(s.x_max - 1))
        .map(|x| {
            let gap = dp::q_difference(&values, x, &params)?;
            Ok(GapSample {
                x,
                gap,
                holds: gap <= cut,
            })
        })
        .collect::<Result<_>>()?;
    let m_star = steady_state::find_optimal_threshold(&params, s.m_max.unwrap_or(200))
        .ok()
        .map(|f| f.m_star);
    let agrees = m_star.map(|m| !threshold_is_cap && m == threshold);

    match s.format {
        OutputFormat::Csv => {
            let mut out = String::from("x,j,gap,action_platoon,action_no_platoon\n");
            for x in 0..=s.x_max {
                let gap = if x >= 1 && x + 1 <= s.x_max {
                    fmt12(vals[x] - vals[x - 1])
                } else {
                    String::new()
                };
                out.push_str(&format!(
                    "{x},{},{gap},{},{}\n",
                    fmt12(vals[x]),
                    action_label(policy.platoon_action(x)),
                    action_label(policy.no_platoon_action(x)),
                ));
            }
            Ok(out)
        }
        OutputFormat::Json => to_json(&DpReport {
            p: s.p,
            q: s.q,
            kappa: s.kappa,
            beta: s.beta,
            x_max: s.x_max,
            tol: s.horizon.is_none().then_some(s.tol),
            horizon: s.horizon,
            sweeps,
            residual,
            reliable,
            threshold,
            threshold_is_cap,
            convex: conv.convex,
            min_second_difference: conv.min_second_difference,
            gap_cut: cut,
            gaps,
            values_head: vals[..=10.min(s.x_max)].to_vec(),
            m_star_average_cost: m_star,
            agrees,
        }),
        OutputFormat::Text => {
            let mut lines = vec![format!(
                "p = {}, q = {}, kappa = {}, beta = {}",
                s.p, s.q, s.kappa, s.beta
            )];
            match s.horizon {
                Some(n) => lines.push(format!(
                    "finite-horizon value iteration: {n} stages, x_max = {}",
                    s.x_max
                )),
                None => {
                    lines.push(format!(
                        "discounted value iteration: x_max = {}, tol = {}",
                        s.x_max, s.tol
                    ));
                    lines.push(format!(
                        "converged in {sweeps} sweeps, final residual {}",
                        residual.expect("discounted path has a residual")
                    ));
                }
            }
            if threshold_is_cap {
                lines.push(format!(
                    "no dispatch below the cap: no finite threshold certified within x_max = {}",
                    s.x_max
                ));
            } else {
                lines.push(format!("no-platoon dispatch threshold m = {threshold}"));
            }
            match reliable {
                Some(true) => {
                    lines.push("threshold is reliable: hold region clears the truncation margin".into())
                }
                Some(false) => lines.push(
                    "threshold is UNRELIABLE: hold region reaches the truncation margin; rerun with a larger --x-max"
                        .into(),
                ),
                None => {}
            }
            lines.push(if conv.convex {
                format!(
                    "value table convex below the cap (min second difference {} at x = {})",
                    conv.min_second_difference, conv.argmin
                )
            } else {
                format!(
                    "value table NOT convex below the cap: second difference {} at x = {}",
                    conv.min_second_difference, conv.argmin
                )
            });
            lines.push(format!("decision gap J(x) - J(x-1) vs cut (kappa - 1)/beta = {cut}:"));
            for g in &gaps {
                lines.push(format!(
                    "  x = {}: gap = {} -> {}",
                    g.x,
                    g.gap,
                    if g.holds { "hold" } else { "dispatch" }
                ));
            }
            lines.push(match (m_star, agrees) {
                (Some(m), Some(true)) => {
                    format!("average-cost search optimum m* = {m}: agrees with the discounted threshold")
                }
                (Some(m), _) => format!(
                    "average-cost search optimum m* = {m}: differs from this solve's threshold"
                ),
                (None, _) => "average-cost search did not settle within its cap".into(),
            });
            Ok(lines.join("\n") + "\n")
        }
    }
}

#[derive(Debug, Serialize)]
struct ReplicationRow {
    index: usize,
    seed: u64,
    mean_cost: f64,
    final_queue: usize,
}

#[derive(Debug, Serialize)]
struct SimulateReport {
    p: f64,
    q: f64,
    kappa: f64,
    m: usize,
    reps: usize,
    slots: u64,
    seed: u64,
    confidence: f64,
    grand_mean: f64,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    max_queue: usize,
    replications: Vec<ReplicationRow>,
}

fn simulate_report(s: &Settings) -> Result<String> {
    let params = s.model()?;
    let m = s.require_m()?;
    let summary = sim::simulate_replications(&params, m, &s.sim_config())?;
    let rows: Vec<ReplicationRow> = summary
        .per_replication_means
        .iter()
        .zip(&summary.final_queue_lengths)
        .enumerate()
        .map(|(i, (&mean, &fin))| ReplicationRow {
            index: i,
            seed: sim::replication_seed(s.seed, i),
            mean_cost: mean,
            final_queue: fin,
        })
        .collect();
    match s.format {
        OutputFormat::Csv => {
            let mut out = String::from("replication,seed,mean_cost,final_queue,ci_lo,ci_hi\n");
            for row in &rows {
                out.push_str(&format!(
                    "{},{},{},{},,\n",
                    row.index,
                    row.seed,
                    fmt12(row.mean_cost),
                    row.final_queue
                ));
            }
            let (lo, hi) = match summary.ci_bounds() {
                Some((lo, hi)) => (fmt12(lo), fmt12(hi)),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "aggregate,,{},,{lo},{hi}\n",
                fmt12(summary.grand_mean)
            ));
            Ok(out)
        }
        OutputFormat::Json => {
            let (ci_lo, ci_hi) = match summary.ci_bounds() {
                Some((lo, hi)) => (Some(lo), Some(hi)),
                None => (None, None),
            };
            to_json(&SimulateReport {
                p: s.p,
                q: s.q,
                kappa: s.kappa,
                m,
                reps: s.reps,
                slots: s.slots,
                seed: s.seed,
                confidence: s.confidence,
                grand_mean: summary.grand_mean,
                ci_lo,
                ci_hi,
                max_queue: summary.max_queue,
                replications: rows,
            })
        }
        OutputFormat::Text => {
            let mut lines = vec![
                format!(
                    "p = {}, q = {}, kappa = {}, threshold m = {m}",
                    s.p, s.q, s.kappa
                ),
                format!(
                    "{} replications x {} slots, base seed {}",
                    s.reps, s.slots, s.seed
                ),
                format!("grand mean cost = {}", summary.grand_mean),
            ];
            match summary.ci_bounds() {
                Some((lo, hi)) => lines.push(format!(
                    "confidence {} interval [{lo}, {hi}]",
                    s.confidence
                )),
                None => lines.push("interval: none (single replication)".into()),
            }
            let (lo, hi) = summary
                .per_replication_means
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            lines.push(format!("replication means span [{lo}, {hi}]"));
            lines.push(format!("max queue observed = {}", summary.max_queue));
            Ok(lines.join("\n") + "\n")
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepRowJson {
    m: usize,
    j_closed: f64,
    j_oracle: f64,
    branch: &'static str,
    simulation: Option<SimBlock>,
}

#[derive(Debug, Serialize)]
struct SweepReport {
    p: f64,
    q: f64,
    kappa: f64,
    m_max: usize,
    /// Threshold with the smallest balance-equation cost in range.
    min_m: usize,
    rows: Vec<SweepRowJson>,
}

fn sweep_report(s: &Settings) -> Result<String> {
    let params = s.model()?;
    let cap = s.m_max.unwrap_or(10);
    let mut rows = Vec::with_capacity(cap + 1);
    for m in 0..=cap {
        let (j_closed, branch) = steady_state::average_cost_closed_form(&params, m);
        let j_oracle = steady_state::average_cost_oracle(&params, m)?;
        let summary = if s.simulate {
            Some(sim::simulate_replications(&params, m, &s.sim_config())?)
        } else {
            None
        };
        rows.push((m, j_closed, j_oracle, branch, summary));
    }
    let min_m = rows
        .iter()
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .expect("sweep range is nonempty")
        .0;
    match s.format {
        OutputFormat::Csv => {
            let mut out = String::from(SWEEP_CSV_HEADER);
            out.push('\n');
            for (m, j_closed, j_oracle, branch, summary) in &rows {
                out.push_str(&sweep_csv_row(
                    *m,
                    *j_closed,
                    *j_oracle,
                    branch.label(),
                    summary.as_ref(),
                    s,
                ));
                out.push('\n');
            }
            Ok(out)
        }
        OutputFormat::Json => to_json(&SweepReport {
            p: s.p,
            q: s.q,
            kappa: s.kappa,
            m_max: cap,
            min_m,
            rows: rows
                .iter()
                .map(|(m, j_closed, j_oracle, branch, summary)| SweepRowJson {
                    m: *m,
                    j_closed: *j_closed,
                    j_oracle: *j_oracle,
                    branch: branch.label(),
                    simulation: summary.as_ref().map(|sum| SimBlock::new(sum, s)),
                })
                .collect(),
        }),
        OutputFormat::Text => {
            let mut lines = vec![format!(
                "p = {}, q = {}, kappa = {}, thresholds 0..={cap}",
                s.p, s.q, s.kappa
            )];
            for (m, j_closed, j_oracle, branch, summary) in &rows {
                let marker = if *m == min_m { "  <- minimum in range" } else { "" };
                let sim_note = match summary {
                    Some(sum) => match sum.ci_bounds() {
                        Some((lo, hi)) => format!(", simulated {} in [{lo}, {hi}]", sum.grand_mean),
                        None => format!(", simulated {}", sum.grand_mean),
                    },
                    None => String::new(),
                };
                lines.push(format!(
                    "m = {m}: J = {j_closed} (branch {}), cross-check {j_oracle}{sim_note}{marker}",
                    branch.label()
                ));
            }
            Ok(lines.join("\n") + "\n")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn base_raw() -> RawOpts {
        RawOpts {
            p: Some(0.5),
            q: Some(0.5),
            kappa: Some(10.0),
            ..RawOpts::default()
        }
    }

    #[test]
    fn fmt12_pins_twelve_significant_digits() {
        assert_eq!(fmt12(1.75), "1.75000000000e0");
        assert_eq!(fmt12(8.4 / 43.0), "1.95348837209e-1");
        assert_eq!(fmt12(0.0), "0.00000000000e0");
        assert_eq!(fmt12(2.5e-7), "2.50000000000e-7");
    }

    #[test]
    fn defaults_fill_unset_settings() {
        let s = resolve(&base_raw()).unwrap();
        assert_eq!(s.beta, 0.99);
        assert_eq!(s.x_max, 200);
        assert_eq!(s.tol, 1e-6);
        assert_eq!(s.slots, 1_000_000);
        assert_eq!(s.reps, 30);
        assert_eq!(s.seed, 42);
        assert_eq!(s.confidence, 0.99);
        assert_eq!(s.format, OutputFormat::Text);
        assert!(!s.simulate);
        assert!(s.m.is_none());
        assert!(s.m_max.is_none());
    }

    #[test]
    fn missing_required_parameter_is_an_input_error() {
        let raw = RawOpts {
            p: Some(0.5),
            q: Some(0.5),
            ..RawOpts::default()
        };
        let err = resolve(&raw).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("--kappa"), "got: {err}");
    }

    #[test]
    fn command_line_overrides_config_overrides_defaults() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            "p = 0.4\nq = 0.8\nkappa = 5.0\nseed = 7\nx-max = 300\nformat = \"csv\"\nsimulate = true"
        )
        .unwrap();
        let raw = RawOpts {
            kappa: Some(12.0),
            config: Some(file.path().to_path_buf()),
            ..RawOpts::default()
        };
        let s = resolve(&raw).unwrap();
        assert_eq!(s.p, 0.4, "config fills unset flags");
        assert_eq!(s.kappa, 12.0, "command line wins over config");
        assert_eq!(s.seed, 7);
        assert_eq!(s.x_max, 300);
        assert_eq!(s.format, OutputFormat::Csv);
        assert!(s.simulate);
        assert_eq!(s.tol, 1e-6, "defaults fill the rest");
    }

    #[test]
    fn config_accepts_underscore_aliases() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "p = 0.5\nq = 0.5\nkappa = 10.0\nm_max = 6\nx_max = 50").unwrap();
        let raw = RawOpts {
            config: Some(file.path().to_path_buf()),
            ..RawOpts::default()
        };
        let s = resolve(&raw).unwrap();
        assert_eq!(s.m_max, Some(6));
        assert_eq!(s.x_max, 50);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "p = 0.5\nq = 0.5\nkappa = 10.0\nslotss = 5").unwrap();
        let raw = RawOpts {
            config: Some(file.path().to_path_buf()),
            ..RawOpts::default()
        };
        let err = resolve(&raw).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("slotss"), "got: {err}");
    }

    #[test]
    fn missing_config_file_is_an_io_error() {
        let raw = RawOpts {
            config: Some(PathBuf::from("/nonexistent/platoon.toml")),
            ..base_raw()
        };
        let err = resolve(&raw).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn degenerate_settings_are_rejected() {
        for raw in [
            RawOpts {
                x_max: Some(1),
                ..base_raw()
            },
            RawOpts {
                tol: Some(0.0),
                ..base_raw()
            },
            RawOpts {
                tol: Some(f64::NAN),
                ..base_raw()
            },
            RawOpts {
                horizon: Some(0),
                ..base_raw()
            },
            RawOpts {
                m_max: Some(0),
                ..base_raw()
            },
        ] {
            let err = resolve(&raw).unwrap_err();
            assert_eq!(err.exit_code(), 2, "settings {raw:?} must be rejected");
        }
    }

    #[test]
    fn evaluate_csv_is_one_sweep_row() {
        let raw = RawOpts {
            m: Some(1),
            format: Some(OutputFormat::Csv),
            ..base_raw()
        };
        let s = resolve(&raw).unwrap();
        let out = evaluate_report(&s).unwrap();
        let expect = format!("{SWEEP_CSV_HEADER}\n1,1.75000000000e0,1.75000000000e0,m1,,,,,,\n");
        assert_eq!(out, expect);
    }

    #[test]
    fn evaluate_text_flags_the_known_closed_form_overshoot() {
        let raw = RawOpts {
            m: Some(3),
            ..base_raw()
        };
        let s = resolve(&raw).unwrap();
        let out = evaluate_report(&s).unwrap();
        assert!(
            out.contains("overshoots the exact cost by p(1-p)/(m+1) = 0.0625"),
            "got: {out}"
        );
    }

    #[test]
    fn evaluate_text_lists_the_stationary_distribution() {
        let raw = RawOpts {
            m: Some(1),
            ..base_raw()
        };
        let s = resolve(&raw).unwrap();
        let out = evaluate_report(&s).unwrap();
        assert!(
            out.contains("stationary queue distribution f(0..=1) = [0.5, 0.5]"),
            "got: {out}"
        );
    }

    #[test]
    fn evaluate_json_carries_the_stationary_distribution() {
        let raw = RawOpts {
            p: Some(0.4),
            q: Some(0.8),
            kappa: Some(5.0),
            m: Some(2),
            format: Some(OutputFormat::Json),
            ..RawOpts::default()
        };
        let s = resolve(&raw).unwrap();
        let out = evaluate_report(&s).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        let dist: Vec<f64> = v["stationary"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect();
        assert_eq!(dist.len(), 3);
        assert!((dist[0] - 36.0 / 43.0).abs() < 1e-12, "got f(0) = {}", dist[0]);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cap_exceeded_search_still_renders_the_partial_curve() {
        let raw = RawOpts {
            p: Some(0.45),
            q: Some(0.65),
            kappa: Some(20.0),
            m_max: Some(2),
            ..RawOpts::default()
        };
        let s = resolve(&raw).unwrap();
        let err = search_report(&s).unwrap_err();
        let Error::SearchCapExceeded { cap, curve } = err else {
            panic!("expected the cap-exceeded error, got {err}");
        };
        assert_eq!(cap, 2);
        assert_eq!(curve.len(), 4, "curve covers J(0)..=J(cap+1)");

        let text = partial_curve_output(&s, cap, &curve).unwrap();
        assert!(text.contains("partial cost curve"), "got: {text}");
        assert!(text.contains("J(3) = "), "got: {text}");

        let csv_settings = Settings {
            format: OutputFormat::Csv,
            ..s
        };
        let csv = partial_curve_output(&csv_settings, cap, &curve).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SWEEP_CSV_HEADER);
        assert_eq!(lines.len(), 5, "header plus one row per curve entry");
    }

    #[test]
    fn evaluate_requires_m() {
        let s = resolve(&base_raw()).unwrap();
        let err = evaluate_report(&s).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("--m"), "got: {err}");
    }

    #[test]
    fn search_text_reports_the_reference_optimum() {
        let raw = RawOpts {
            p: Some(0.4),
            q: Some(0.8),
            kappa: Some(5.0),
            ..RawOpts::default()
        };
        let s = resolve(&raw).unwrap();
        let out = search_report(&s).unwrap();
        assert!(out.contains("optimal threshold m* = 2"), "got: {out}");
        let limit_line = out
            .lines()
            .find(|l| l.starts_with("limit as m grows:"))
            .unwrap();
        let limit: f64 = limit_line.rsplit(' ').next().unwrap().parse().unwrap();
        assert!((limit - 0.2).abs() < 1e-12, "got: {limit_line}");
    }

    #[test]
    fn search_csv_has_one_row_per_curve_entry() {
        let raw = RawOpts {
            p: Some(0.4),
            q: Some(0.8),
            kappa: Some(5.0),
            format: Some(OutputFormat::Csv),
            ..RawOpts::default()
        };
        let s = resolve(&raw).unwrap();
        let out = search_report(&s).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], SWEEP_CSV_HEADER);
        // curve for m* = 2 spans J(0)..J(3)
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,"));
        assert!(lines[3].starts_with("2,"));
    }

    #[test]
    fn dp_json_matches_the_search_optimum() {
        let raw = RawOpts {
            p: Some(0.4),
            q: Some(0.8),
            kappa: Some(5.0),
            beta: Some(0.999),
            format: Some(OutputFormat::Json),
            ..RawOpts::default()
        };
        let s = resolve(&raw).unwrap();
        let out = dp_report(&s).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["threshold"], 2);
        assert_eq!(v["m_star_average_cost"], 2);
        assert_eq!(v["agrees"], true);
        assert_eq!(v["reliable"], true);
        assert_eq!(v["convex"], true);
        assert_eq!(v["threshold_is_cap"], false);
    }

    #[test]
    fn dp_csv_lists_every_state_with_actions() {
        let raw = RawOpts {
            x_max: Some(40),
            beta: Some(0.999),
            format: Some(OutputFormat::Csv),
            ..base_raw()
        };
        let s = resolve(&raw).unwrap();
        let out = dp_report(&s).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "x,j,gap,action_platoon,action_no_platoon");
        assert_eq!(lines.len(), 42);
        assert!(lines[1].starts_with("0,"));
        assert!(lines[1].ends_with(",hold,hold"), "got: {}", lines[1]);
        assert!(lines[2].ends_with(",dispatch,hold"), "got: {}", lines[2]);
        assert!(lines[3].ends_with(",dispatch,dispatch"), "got: {}", lines[3]);
    }

    #[test]
    fn dp_finite_horizon_reports_stage_count() {
        let raw = RawOpts {
            horizon: Some(3),
            x_max: Some(30),
            ..base_raw()
        };
        let s = resolve(&raw).unwrap();
        let out = dp_report(&s).unwrap();
        assert!(out.contains("finite-horizon value iteration: 3 stages"), "got: {out}");
        assert!(!out.contains("residual"), "finite path has no residual: {out}");
    }

    #[test]
    fn simulate_csv_ends_with_an_aggregate_row() {
        let raw = RawOpts {
            m: Some(1),
            reps: Some(3),
            slots: Some(1000),
            format: Some(OutputFormat::Csv),
            ..base_raw()
        };
        let s = resolve(&raw).unwrap();
        let out = simulate_report(&s).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "replication,seed,mean_cost,final_queue,ci_lo,ci_hi");
        assert_eq!(lines.len(), 5, "3 replications + header + aggregate");
        assert!(lines[4].starts_with("aggregate,"), "got: {}", lines[4]);
        let fields: Vec<&str> = lines[4].split(',').collect();
        assert_eq!(fields.len(), 6);
        assert!(!fields[4].is_empty() && !fields[5].is_empty(), "aggregate carries the interval");
    }

    #[test]
    fn sweep_csv_schema_is_pinned() {
        let raw = RawOpts {
            m_max: Some(3),
            format: Some(OutputFormat::Csv),
            ..base_raw()
        };
        let s = resolve(&raw).unwrap();
        let out = sweep_report(&s).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(
            lines[0],
            "m,j_closed,j_oracle,branch,sim_mean,sim_ci_lo,sim_ci_hi,reps,slots,seed"
        );
        assert_eq!(lines.len(), 5);
        for (i, line) in lines[1..].iter().enumerate() {
            assert!(line.starts_with(&format!("{i},")));
            assert_eq!(line.matches(',').count(), 9, "ten columns in {line:?}");
        }
        // without --simulate the trailing six columns stay empty
        assert!(lines[1].ends_with(",,,,,,"), "got: {}", lines[1]);
    }

    #[test]
    fn sweep_text_marks_the_minimum_and_simulated_rows_carry_intervals() {
        let raw = RawOpts {
            m_max: Some(2),
            reps: Some(4),
            slots: Some(2000),
            simulate: true,
            ..base_raw()
        };
        let s = resolve(&raw).unwrap();
        let out = sweep_report(&s).unwrap();
        assert!(out.contains("<- minimum in range"), "got: {out}");
        assert!(out.contains("simulated"), "got: {out}");
        let marked: Vec<&str> = out
            .lines()
            .filter(|l| l.contains("<- minimum in range"))
            .collect();
        assert_eq!(marked.len(), 1);
        assert!(marked[0].starts_with("m = 1:"), "got: {}", marked[0]);
    }
}
