use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gridfreq::cli::{
    all_case_names, cmd_compare, cmd_oracle, cmd_run, cmd_verify, cmd_verify_many,
    parse_damping_side, parse_law, parse_mode, Overrides, RunReport,
};
use gridfreq::controller::Mode;
use gridfreq::simulate::{ControlLaw, DampingSide};
use gridfreq::Error;

#[derive(Parser)]
#[command(
    name = "gridfreq",
    version,
    about = "Load-side frequency control simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a case and write its trajectory.
    Run(CommonArgs),
    /// Check optimality and stability diagnostics (`all` verifies every bundled case).
    Verify(CommonArgs),
    /// Run several controllers on the same scenario.
    Compare(CommonArgs),
    /// Print the reference optimum of a small case as fixture JSON.
    Oracle {
        case: String,
        #[arg(long, default_value_t = 1e-3)]
        resolution: f64,
        #[arg(long = "thermal-limits")]
        thermal_limits: Option<bool>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Bundled case name or path to a case JSON file.
    case: String,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    h: Option<f64>,
    #[arg(long = "T", allow_hyphen_values = true)]
    t_end: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    kappa: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long = "thermal-limits")]
    thermal_limits: Option<bool>,
    #[arg(long, allow_hyphen_values = true)]
    k1: Option<f64>,
    /// Model that carries the damping error: controller (default) or plant.
    #[arg(long = "k1-side", value_parser = parse_damping_side)]
    k1_side: Option<DampingSide>,
    #[arg(long, allow_hyphen_values = true)]
    k2: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Comma-separated controllers: dppd, baseline, none.
    #[arg(long, value_delimiter = ',', value_parser = parse_law)]
    controllers: Vec<ControlLaw>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            scenario: self.scenario.clone(),
            h: self.h,
            t_end: self.t_end,
            kappa: self.kappa,
            mode: self.mode,
            thermal_limits: self.thermal_limits,
            k1: self.k1,
            k1_side: self.k1_side,
            k2: self.k2,
            seed: self.seed,
            svg: self.svg,
            out: self.out.clone(),
            jobs: self.jobs,
            controllers: self.controllers.clone(),
        }
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn print_report(r: &RunReport) {
    print!("{}", r.table());
    println!(
        "{}",
        serde_json::to_string_pretty(r).expect("report serializes")
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run(a) => match cmd_run(&a.case, &a.overrides()) {
            Ok(r) => {
                print_report(&r);
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Cmd::Compare(a) => match cmd_compare(&a.case, &a.overrides()) {
            Ok(r) => {
                print_report(&r);
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Cmd::Verify(a) => {
            let ov = a.overrides();
            let results = if a.case == "all" {
                cmd_verify_many(all_case_names(), &ov)
            } else {
                vec![cmd_verify(&a.case, &ov)]
            };
            let mut code = 0u8;
            for r in results {
                match r {
                    Ok(r) => {
                        print_report(&r);
                        if !r.passed() {
                            code = code.max(4);
                        }
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        code = code.max(e.exit_code() as u8);
                    }
                }
            }
            ExitCode::from(code)
        }
        Cmd::Oracle {
            case,
            resolution,
            thermal_limits,
        } => {
            let ov = Overrides {
                thermal_limits,
                ..Default::default()
            };
            match cmd_oracle(&case, resolution, &ov) {
                Ok(f) => {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&f).expect("fixture serializes")
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}
