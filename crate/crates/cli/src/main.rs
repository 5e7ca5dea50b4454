use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod bench;
mod calibrate;
mod curate;
mod generate;
mod io;
mod ood;
mod server;
mod study;

/// Exit status of a command that did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// Some samples failed for runtime reasons; outputs cover the rest.
    Partial,
}

#[derive(Parser, Debug)]
#[command(name = "segrel", version, about = "Reliability assessment for semantic segmentation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-class IoU and mIoU for every model and domain
    Bench(bench::BenchArgs),
    /// Fit temperature scaling and report ECE before and after
    Calibrate(calibrate::CalibrateArgs),
    /// Pixel-level OOD metrics from logits and OOD masks
    OodEval(ood::OodArgs),
    /// Correlate one metric between two domains across models
    Correlate(study::CorrelateArgs),
    /// PCC stability as a function of the number of images
    SubsampleStudy(study::SubsampleArgs),
    /// Fréchet distance between two embedding sets
    Fid(study::FidArgs),
    /// Emit control masks and prompts for shifted-domain generation
    PlanShift(generate::PlanShiftArgs),
    /// Sample inpainting boxes and objects for a dataset
    PlanInpaint(generate::PlanInpaintArgs),
    /// Execute inpainting plans against a generative service
    RunInpaint(generate::RunInpaintArgs),
    /// Curation backend: review server and verdict export
    Curate(curate::CurateArgs),
    /// Serve the deterministic mock generative service over HTTP
    MockService(MockServiceArgs),
}

#[derive(Args, Debug)]
struct MockServiceArgs {
    #[arg(long, default_value = "127.0.0.1:0")]
    addr: String,
    /// `/inpaint` returns its input unchanged
    #[arg(long)]
    identity: bool,
    /// Answer the first N requests with 503 (retry testing)
    #[arg(long, default_value_t = 0, hide = true)]
    fail_first: usize,
}

/// Arguments shared by commands that talk to the generative service.
#[derive(Args, Debug, Clone)]
pub struct ServiceArgs {
    /// Service base URL, or `mock`. SEGREL_SERVICE_URL takes precedence.
    #[arg(long, default_value = "mock")]
    pub service: String,
    /// Per-request timeout in seconds
    #[arg(long, default_value_t = 300)]
    pub timeout_secs: u64,
    /// Base backoff delay; retries wait 1x, 2x and 4x this
    #[arg(long, default_value_t = 500)]
    pub retry_base_ms: u64,
}

impl ServiceArgs {
    pub fn resolved(&self) -> String {
        match std::env::var("SEGREL_SERVICE_URL") {
            Ok(v) if !v.trim().is_empty() => v.trim().to_string(),
            _ => self.service.clone(),
        }
    }

    pub fn connect(&self) -> Box<dyn segrel_core::genplan::GenerativeService> {
        use segrel_core::genplan::{HttpServiceClient, MockService, RetryPolicy};
        let target = self.resolved();
        if target == "mock" {
            return Box::new(MockService::default());
        }
        let policy = RetryPolicy {
            retries: 3,
            base_delay: std::time::Duration::from_millis(self.retry_base_ms),
        };
        Box::new(HttpServiceClient::new(
            &target,
            std::time::Duration::from_secs(self.timeout_secs),
            policy,
        ))
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Bench(a) => bench::run(&a),
        Command::Calibrate(a) => calibrate::run(&a),
        Command::OodEval(a) => ood::run(&a),
        Command::Correlate(a) => study::correlate(&a),
        Command::SubsampleStudy(a) => study::subsample(&a),
        Command::Fid(a) => study::fid(&a),
        Command::PlanShift(a) => generate::plan_shift(&a),
        Command::PlanInpaint(a) => generate::plan_inpaint(&a),
        Command::RunInpaint(a) => generate::run_inpaint(&a),
        Command::Curate(a) => curate::run(&a),
        Command::MockService(a) => server::serve_mock(&a.addr, a.identity, a.fail_first),
    }
}

/// 2 for bad input, 1 for anything else.
fn failure_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.downcast_ref::<io::InputError>().is_some()) {
        return 2;
    }
    match err.chain().find_map(|e| e.downcast_ref::<segrel_core::Error>()) {
        Some(e) if e.is_validation() => 2,
        Some(segrel_core::Error::Io { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure_code(&e))
        }
    }
}
