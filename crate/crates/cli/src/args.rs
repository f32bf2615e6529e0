//! Command-line surface. Every subcommand's arguments double as its
//! parameter record: they serialize into the manifest and can be set from the
//! config file section named after the subcommand.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gmclab::estimate::experiments::RatioMode;
use gmclab::graph::{DeviationKind, FeasibilityId, ScaleConfig};
use gmclab::estimate::{GapCondition, MultipointTerm};
use gmclab::KernelFamily;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Parse an upper-case enum name, accepting lower case and dashes.
fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    let name = s.trim().to_ascii_uppercase().replace('-', "_");
    serde_json::from_value(serde_json::Value::String(name)).map_err(|_| format!("unknown value '{s}'"))
}

fn family(s: &str) -> Result<KernelFamily, String> {
    parse_enum(s)
}

fn ratio_mode(s: &str) -> Result<RatioMode, String> {
    parse_enum(s)
}

fn feasibility_id(s: &str) -> Result<FeasibilityId, String> {
    parse_enum(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Quick,
}

impl Profile {
    /// Trial count for a command whose desk count is `desk`.
    pub fn trials(self, desk: usize) -> usize {
        match self {
            Profile::Desk => desk,
            Profile::Quick => (desk / 10).max(gmclab::estimate::MIN_TRIALS.min(desk)),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gmclab", version, about = "Simulate chaos measures on log-correlated fields and run the checks")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Global {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "GMCLAB_THREADS")]
    pub threads: Option<usize>,
    /// Directory receiving CSV artifacts and manifests.
    #[arg(long, global = true, default_value = "gmclab-out")]
    pub out: PathBuf,
    /// TOML file with top-level globals and one table per subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(untagged)]
pub enum Command {
    /// Closed-form covariances against the area quadrature.
    KernelCheck(KernelCheckArgs),
    /// Draw fields on a grid; writes a binary dump.
    Sample(SampleArgs),
    /// Moment curves of the measure and their fitted exponents.
    GmcMoments(GmcMomentsArgs),
    /// Both sides of the scaling law and their KS comparison.
    ScalingLaw(ScalingLawArgs),
    /// Round trips, semigroup identity and the out-of-mass rule of the inverse.
    InverseCheck(InverseCheckArgs),
    /// Moments of ratios of inverse increments.
    RatioMoments(RatioArgs),
    /// Joint versus factorized multipoint moments.
    Multipoint(MultipointArgs),
    /// Independence bounds on random graphs and one simulated overlap graph.
    GraphIndependence(GraphArgs),
    /// Overlap probabilities across pairs of scales.
    OverlapDecay(OverlapArgs),
    /// Tail of a sum of Bernoulli indicators against the Chernoff bound.
    IndicatorTail(IndicatorArgs),
    /// Laplace transform of the mass of a short interval.
    Smallball(SmallBallArgs),
    /// Frequencies of mass and inverse deviations from Lebesgue per scale.
    LebesgueRate(LebesgueArgs),
    /// Whitney-square sums bounding the dilatation of the extension.
    Dilatation(DilatationArgs),
    /// Margins of the parameter inequalities in the intermittency.
    Feasibility(FeasibilityArgs),
    /// Print the multifractal exponent.
    Zeta(ZetaArgs),
    /// Run every acceptance criterion.
    VerifyAll(VerifyArgs),
    /// Replay a recorded run and compare digests.
    Run(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::KernelCheck(_) => "kernel-check",
            Command::Sample(_) => "sample",
            Command::GmcMoments(_) => "gmc-moments",
            Command::ScalingLaw(_) => "scaling-law",
            Command::InverseCheck(_) => "inverse-check",
            Command::RatioMoments(_) => "ratio-moments",
            Command::Multipoint(_) => "multipoint",
            Command::GraphIndependence(_) => "graph-independence",
            Command::OverlapDecay(_) => "overlap-decay",
            Command::IndicatorTail(_) => "indicator-tail",
            Command::Smallball(_) => "smallball",
            Command::LebesgueRate(_) => "lebesgue-rate",
            Command::Dilatation(_) => "dilatation",
            Command::Feasibility(_) => "feasibility",
            Command::Zeta(_) => "zeta",
            Command::VerifyAll(_) => "verify-all",
            Command::Run(_) => "run",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct KernelCheckArgs {
    #[arg(long, value_parser = family, default_value = "LINE_U")]
    pub family: KernelFamily,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Truncation of the second point for the circle kernel.
    #[arg(long)]
    pub r: Option<f64>,
    /// Two-column x,g CSV for the perturbed kernel.
    #[arg(long)]
    pub g_table: Option<PathBuf>,
    /// Distances checked, evenly spaced on [0, max_distance].
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    /// Defaults to 1.2 delta, or 0.5 for the circle.
    #[arg(long)]
    pub max_distance: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    pub quad_tol: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    #[arg(long, value_parser = family, default_value = "LINE_U")]
    pub family: KernelFamily,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Lower truncation; one cell width when omitted.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Two-column x,g CSV for the perturbed kernel.
    #[arg(long)]
    pub g_table: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub start: f64,
    #[arg(long, default_value_t = 2.0)]
    pub end: f64,
    #[arg(long, default_value_t = 256)]
    pub cells: usize,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MomentKind {
    /// `E[mass(0, t)^q]`.
    Mass,
    /// `E[mass(Q(a), Q(a) + t)^q]`.
    ShiftedMass,
    /// Moments of the sup over window starts of the window mass.
    SupModulus,
    InfModulus,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GmcMomentsArgs {
    #[arg(long, value_enum, default_value_t = MomentKind::Mass)]
    pub target: MomentKind,
    /// LINE_U or CIRCLE_H; the other targets use the line field.
    #[arg(long, value_parser = family, default_value = "LINE_U")]
    pub family: KernelFamily,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Exponents of the mass target.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.5, 2.0, 3.0])]
    pub q: Vec<f64>,
    /// Exponent of the shifted and modulus targets.
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    pub p: f64,
    /// Window lengths run over 2^-t_min .. 2^-t_max.
    #[arg(long, default_value_t = 3)]
    pub t_min: i32,
    #[arg(long, default_value_t = 9)]
    pub t_max: i32,
    /// Shift level of the shifted target.
    #[arg(long, default_value_t = 0.3)]
    pub a: f64,
    /// Window-start ranges of the modulus targets.
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 1.0])]
    pub l: Vec<f64>,
    /// Simulated length; the target's preset when omitted.
    #[arg(long)]
    pub extent: Option<f64>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScalingLawArgs {
    #[arg(long, value_parser = family, default_value = "LINE_U")]
    pub family: KernelFamily,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = -0.2, allow_hyphen_values = true)]
    pub a_start: f64,
    #[arg(long, default_value_t = 0.2, allow_hyphen_values = true)]
    pub a_end: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 256)]
    pub cells: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-1.0, 1.0, 2.0])]
    pub moments: Vec<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InverseCheckArgs {
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub extent: f64,
    #[arg(long, default_value_t = 256)]
    pub cells: usize,
    #[arg(long, default_value_t = 64)]
    pub probes: usize,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RatioArgs {
    #[arg(long, value_parser = ratio_mode, default_value = "EQUAL_LENGTH")]
    pub mode: RatioMode,
    /// 0.5 for equal length, 0.3 for the decreasing numerator.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 1.05)]
    pub p: f64,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub x_min: i32,
    #[arg(long, default_value_t = 8)]
    pub x_max: i32,
    #[arg(long)]
    pub extent: Option<f64>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MultipointArgs {
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.25])]
    pub heights: Vec<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub extent: f64,
    #[arg(long, default_value_t = 4096)]
    pub cells: usize,
    /// Ratio terms; config file only.
    #[arg(skip = default_terms())]
    pub terms: Vec<MultipointTerm>,
    #[arg(skip = default_gaps())]
    pub gaps: Vec<GapCondition>,
    #[arg(skip = vec![0])]
    pub gap_owner: Vec<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
}

fn default_terms() -> Vec<MultipointTerm> {
    gmclab::estimate::experiments::FactorizationConfig::default().terms
}

fn default_gaps() -> Vec<GapCondition> {
    gmclab::estimate::experiments::FactorizationConfig::default().gaps
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GraphArgs {
    /// Random graphs checked against the bounds.
    #[arg(long, default_value_t = 200)]
    pub graphs: usize,
    #[arg(long, default_value_t = 14)]
    pub max_vertices: usize,
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    #[arg(long, default_value_t = 4096)]
    pub cells: usize,
    /// Sequence parameters; config file only.
    #[arg(skip)]
    pub scales: ScaleConfig,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OverlapArgs {
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    #[arg(long, default_value_t = 4096)]
    pub cells: usize,
    /// Also estimate how often the overlap graph of the first N scales has small independence number.
    #[arg(long, value_delimiter = ',', default_values_t = [6usize, 7, 8, 9, 10, 11, 12])]
    pub sizes: Vec<usize>,
    #[arg(skip)]
    pub scales: ScaleConfig,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct IndicatorArgs {
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 40)]
    pub n: usize,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SmallBallArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [4.0, 16.0, 64.0, 256.0, 1024.0])]
    pub r: Vec<f64>,
    #[arg(long, default_value_t = 0.25)]
    pub t: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1024)]
    pub cells: usize,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LebesgueArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.25, 0.125, 0.0625])]
    pub heights: Vec<f64>,
    #[arg(long, default_value_t = 0.25)]
    pub a_start: f64,
    #[arg(long, default_value_t = 0.75)]
    pub a_end: f64,
    /// Level at which the inverse is compared with the identity.
    #[arg(long, default_value_t = 0.5)]
    pub x: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2])]
    pub deviations: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    pub extent: f64,
    #[arg(long, default_value_t = 2048)]
    pub cells: usize,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DilatationArgs {
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 8)]
    pub max_depth: u32,
    /// Extra dyadic depth of the subintervals inside a neighborhood.
    #[arg(long, default_value_t = gmclab::dilatation::DEFAULT_OFFSET)]
    pub offset: u32,
    #[arg(long, default_value_t = 4.0)]
    pub extent: f64,
    #[arg(long, default_value_t = 1 << 18)]
    pub cells: usize,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FeasibilityArgs {
    #[arg(long, value_parser = feasibility_id, default_value = "DECOUPLING_BETA")]
    pub id: FeasibilityId,
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.15, 0.17, 0.2, 0.25])]
    pub beta: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub eps_star: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub c_gap: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub r_a: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ZetaArgs {
    #[arg(long)]
    pub gamma: f64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// Criterion numbers to run; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<u32>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RunArgs {
    #[arg(long)]
    pub from_manifest: PathBuf,
}

/// Deviation kinds behind the two graph-sampling commands.
pub fn overlap_kinds(sizes: &[usize]) -> Vec<DeviationKind> {
    if sizes.is_empty() {
        vec![DeviationKind::OverlapDecay]
    } else {
        vec![DeviationKind::OverlapDecay, DeviationKind::AlphaSmall]
    }
}

impl Cli {
    pub fn command_names() -> Vec<String> {
        use clap::CommandFactory;
        Cli::command().get_subcommands().map(|c| c.get_name().to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_profile_keeps_the_trial_floor() {
        assert_eq!(Profile::Desk.trials(5000), 5000);
        assert_eq!(Profile::Quick.trials(5000), 500);
        assert_eq!(Profile::Quick.trials(200), 100);
        assert_eq!(Profile::Quick.trials(40), 40);
    }

    #[test]
    fn enum_values_accept_dashed_lowercase() {
        assert_eq!(family("cone-omega").unwrap(), KernelFamily::ConeOmega);
        assert!(family("cone_omeg").is_err());
    }

    #[test]
    fn every_subcommand_is_named() {
        let names = Cli::command_names();
        assert_eq!(names.len(), 17);
        assert!(names.iter().any(|n| n == "verify-all") && names.iter().any(|n| n == "run"));
    }
}
