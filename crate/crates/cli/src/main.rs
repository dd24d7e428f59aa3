//! `rcdcm`: characterize drivers, run DCM on RC nets, check against the
//! transient oracle.
//!
//! Every flag can also be set through an `RCDCM_*` environment variable.
//! Numeric values accept SPICE suffixes (`50p`, `1.2k`, `40f`).

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rcdcm::dcm::{Crossing, DcmConfig, MatchRule};
use rcdcm::driverlib::Direction;

#[derive(Debug, Parser)]
#[command(name = "rcdcm", version, about = "RC signal-line current response by dynamic capacitance matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build driver tables on a grid of fixed load capacitances.
    Characterize(CharacterizeArgs),
    /// Run DCM on each net and write waveform, trace and metrics files.
    Respond(RespondArgs),
    /// Run DCM and the transient oracle, then report the metric errors.
    Verify(VerifyArgs),
    /// Repeat the verification for several step counts.
    Sweep(SweepArgs),
    /// Generate the synthetic benchmark suite and write the error report.
    Suite(SuiteArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Thevenin,
    Mos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DirArg {
    Rising,
    Falling,
    Both,
}

impl DirArg {
    fn directions(self) -> Vec<Direction> {
        match self {
            DirArg::Rising => vec![Direction::Rising],
            DirArg::Falling => vec![Direction::Falling],
            DirArg::Both => vec![Direction::Rising, Direction::Falling],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OneDir {
    Rising,
    Falling,
}

impl From<OneDir> for Direction {
    fn from(d: OneDir) -> Self {
        match d {
            OneDir::Rising => Direction::Rising,
            OneDir::Falling => Direction::Falling,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CrossingArg {
    Incremental,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    Charge,
    Endpoint,
}

fn si(s: &str) -> Result<f64, String> {
    use rcdcm::netlist::{parse_value, ValueError};
    parse_value(s).map_err(|e| match e {
        ValueError::Malformed => format!("`{s}` is not a number"),
        ValueError::UnknownSuffix(x) => format!("unknown unit suffix `{x}`"),
    })
}

#[derive(Debug, Args)]
struct CharacterizeArgs {
    /// Driver name stored in the tables.
    #[arg(long, env = "RCDCM_DRIVER", default_value = "drv")]
    driver: String,
    #[arg(long, value_enum, env = "RCDCM_MODEL", default_value = "thevenin")]
    model: ModelKind,
    /// Thevenin source resistance, ohms.
    #[arg(long, env = "RCDCM_R_DRV", value_parser = si, default_value = "600")]
    r_drv: f64,
    /// MOS saturation current, amperes.
    #[arg(long, env = "RCDCM_I_SAT", value_parser = si, default_value = "1m")]
    i_sat: f64,
    #[arg(long, env = "RCDCM_V_KNEE", value_parser = si, default_value = "0.4")]
    v_knee: f64,
    /// Threshold as a fraction of the gate swing.
    #[arg(long, env = "RCDCM_V_TH", value_parser = si, default_value = "0.3")]
    v_th: f64,
    #[arg(long, env = "RCDCM_C_COUPLE", value_parser = si, default_value = "1f")]
    c_couple: f64,
    #[arg(long, env = "RCDCM_C_INT", value_parser = si, default_value = "1f")]
    c_int: f64,
    #[arg(long, env = "RCDCM_VDD", value_parser = si, default_value = "1.1")]
    vdd: f64,
    /// Input slews (10-90%), comma separated.
    #[arg(long, env = "RCDCM_SLEWS", value_parser = si, value_delimiter = ',', default_value = "50p")]
    slews: Vec<f64>,
    #[arg(long, value_enum, env = "RCDCM_DIRECTION", default_value = "rising")]
    direction: DirArg,
    /// Top of the default 22-point grid.
    #[arg(long, env = "RCDCM_C_MAX", value_parser = si, default_value = "100f", conflicts_with = "grid")]
    c_max: f64,
    /// Explicit ascending capacitance grid, comma separated.
    #[arg(long, env = "RCDCM_GRID", value_parser = si, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Initial simulation window; doubled until the slowest curve settles.
    #[arg(long, env = "RCDCM_WINDOW", value_parser = si, default_value = "400p")]
    window: f64,
    #[arg(long, env = "RCDCM_DT", value_parser = si, default_value = "0.2p")]
    dt: f64,
    #[arg(long, env = "RCDCM_OUT", default_value = "tables")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// RC netlist files; one net per file.
    #[arg(long = "netlist", env = "RCDCM_NETLIST", value_delimiter = ',', required = true)]
    netlists: Vec<PathBuf>,
    /// Driver output node, common to all nets.
    #[arg(long, env = "RCDCM_PORT")]
    port: String,
    /// Directory of table JSON files.
    #[arg(long, env = "RCDCM_TABLES")]
    tables: PathBuf,
    /// Driver to select; defaults to the only driver in the table set.
    #[arg(long, env = "RCDCM_DRIVER")]
    driver: Option<String>,
    /// Input slew; defaults to the first table's slew.
    #[arg(long, env = "RCDCM_SLEW", value_parser = si)]
    slew: Option<f64>,
    #[arg(long, value_enum, env = "RCDCM_DIRECTION", default_value = "rising")]
    direction: OneDir,
    /// Reduced model order.
    #[arg(long, env = "RCDCM_Q", default_value_t = 4)]
    q: usize,
    /// Voltage steps between 1% and 99% of vdd.
    #[arg(long = "n-steps", alias = "N", env = "RCDCM_N_STEPS", default_value_t = 100)]
    n_steps: usize,
    /// Relative match tolerance.
    #[arg(long, env = "RCDCM_TOL", default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, value_enum, env = "RCDCM_CROSSING", default_value = "absolute")]
    crossing: CrossingArg,
    #[arg(long, value_enum, env = "RCDCM_RULE", default_value = "charge")]
    rule: RuleArg,
    /// Worker threads across nets; 0 uses every core.
    #[arg(long, env = "RCDCM_JOBS", default_value_t = 0)]
    jobs: usize,
    #[arg(long, env = "RCDCM_OUT", default_value = "out")]
    out: PathBuf,
}

impl RunArgs {
    fn dcm(&self) -> DcmConfig {
        DcmConfig {
            n_steps: self.n_steps,
            tol: self.tol,
            crossing: match self.crossing {
                CrossingArg::Incremental => Crossing::Incremental,
                CrossingArg::Absolute => Crossing::Absolute,
            },
            rule: match self.rule {
                RuleArg::Charge => MatchRule::Charge,
                RuleArg::Endpoint => MatchRule::Endpoint,
            },
            ..DcmConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct RespondArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Oracle time step.
    #[arg(long, env = "RCDCM_ORACLE_DT", value_parser = si, default_value = "0.2p")]
    oracle_dt: f64,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Also report the single-capacitance comparator.
    #[arg(long, env = "RCDCM_BASELINE")]
    baseline: bool,
    /// Largest accepted relative error on avg, rms or peak.
    #[arg(long, env = "RCDCM_MAX_ERR", default_value_t = 0.05)]
    max_err: f64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Step counts to compare, comma separated.
    #[arg(long, env = "RCDCM_NS", value_delimiter = ',', default_value = "25,50,100")]
    ns: Vec<usize>,
}

#[derive(Debug, Args)]
struct SuiteArgs {
    #[arg(long, env = "RCDCM_SEED", default_value_t = 2024)]
    seed: u64,
    /// Net sizes (element counts), comma separated.
    #[arg(long, env = "RCDCM_SIZES", value_delimiter = ',', default_value = "10,200,2000")]
    sizes: Vec<usize>,
    #[arg(long, env = "RCDCM_Q", default_value_t = 4)]
    q: usize,
    #[arg(long = "n-steps", alias = "N", env = "RCDCM_N_STEPS", default_value_t = 100)]
    n_steps: usize,
    #[arg(long, env = "RCDCM_TOL", default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, value_enum, env = "RCDCM_CROSSING", default_value = "absolute")]
    crossing: CrossingArg,
    /// Step counts for the convergence table, comma separated.
    #[arg(long, env = "RCDCM_NS", value_delimiter = ',', default_value = "25,50,100")]
    ns: Vec<usize>,
    #[arg(long, env = "RCDCM_JOBS", default_value_t = 0)]
    jobs: usize,
    /// Fail when any DCM error exceeds this.
    #[arg(long, env = "RCDCM_MAX_ERR")]
    max_err: Option<f64>,
    #[arg(long, env = "RCDCM_OUT", default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Characterize(a) => commands::characterize(&a),
        Command::Respond(a) => commands::respond(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Suite(a) => commands::suite(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn suffixed_values_parse() {
        assert_eq!(si("50p").unwrap(), 50e-12);
        assert!(si("5x").is_err());
    }

    #[test]
    fn run_flags_map_onto_config() {
        let cli = Cli::try_parse_from([
            "rcdcm", "respond", "--netlist", "a.sp", "--port", "out", "--tables", "t", "--n-steps", "50",
            "--crossing", "incremental", "--tol", "0.01",
        ])
        .unwrap();
        let Command::Respond(a) = cli.command else { panic!() };
        let c = a.run.dcm();
        assert_eq!(c.n_steps, 50);
        assert_eq!(c.crossing, Crossing::Incremental);
        assert_eq!(c.tol, 0.01);
    }
}
