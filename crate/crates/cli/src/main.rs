//! `lidarc`: encode, decode, evaluate and stream LiDAR range-image frames.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 corrupt data. Log verbosity
//! follows `RUST_LOG` (default `warn`).

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lidar_codec::CompressionLevel;

mod codec;
mod error;
mod eval;
mod stream;

use error::CliError;

#[derive(Parser)]
#[command(name = "lidarc", version, about = "Range-image LiDAR point cloud codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a cloud file, or every cloud in a directory, to `.rcpcc`.
    Encode(EncodeArgs),
    /// Decompress an `.rcpcc` file to `.bin` or `.xyz` clouds.
    Decode(DecodeArgs),
    /// Rate and error of each configuration over a dataset, as CSV.
    Bench(BenchArgs),
    /// Fitted-point MAE of the plane and surface models per threshold, as CSV.
    Ablate(AblateArgs),
    /// Send encoded frames to a receiver over TCP.
    StreamSend(StreamSendArgs),
    /// Receive and decode frames from a sender.
    StreamRecv(StreamRecvArgs),
    /// Replay a bandwidth trace with and without the level controller.
    Simulate(SimulateArgs),
    /// Join enqueue and decode time logs into per-frame latencies.
    Latency(LatencyArgs),
    /// Write synthetic street scans as KITTI `.bin` files.
    Synth(SynthArgs),
}

/// Compression settings: a ladder level or explicit parameters.
#[derive(Args, Clone, Copy)]
pub struct LevelArgs {
    /// Ladder level, 0 (finest) to 5 (coarsest).
    #[arg(long, conflicts_with = "params")]
    pub level: Option<usize>,
    /// Explicit `Δθ,Δφ,Δr,q_step` with angles in degrees and Δr, q_step in meters.
    #[arg(long, allow_hyphen_values = true)]
    pub params: Option<CompressionLevel>,
}

#[derive(Args)]
pub struct EncodeArgs {
    /// `.bin`/`.xyz` file or a directory of them.
    pub input: PathBuf,
    #[command(flatten)]
    pub level: LevelArgs,
    /// Output file, or output directory for directory input.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Decode again and report the errors.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum CloudFormat {
    Bin,
    Xyz,
}

#[derive(Args)]
pub struct DecodeArgs {
    pub input: PathBuf,
    /// Output file for a single frame, otherwise a directory.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Format when writing into a directory.
    #[arg(long, value_enum, default_value = "bin")]
    pub format: CloudFormat,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Directory of `.bin`/`.xyz` frames.
    pub dataset: PathBuf,
    /// Configurations to run; repeatable. Defaults to the ladder.
    #[arg(long, allow_hyphen_values = true)]
    pub params: Vec<CompressionLevel>,
    /// Run the q_step sweep {0, 0.1, 0.4, 1.0} at (0.5, 0.5, 0.3).
    #[arg(long, conflicts_with = "params")]
    pub sweep: bool,
    /// Use at most this many frames.
    #[arg(long)]
    pub frames: Option<usize>,
    /// CSV destination; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Plane,
    Surface,
    Both,
}

#[derive(Args)]
pub struct AblateArgs {
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub model: ModelChoice,
    /// Fit thresholds Δr in meters.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5")]
    pub thresholds: Vec<f64>,
    /// Horizontal and vertical resolution in degrees.
    #[arg(long, default_value_t = 0.5)]
    pub resolution: f64,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct StreamSendArgs {
    /// Receiver address, e.g. 127.0.0.1:7878.
    #[arg(long)]
    pub connect: SocketAddr,
    /// Directory of frames, cycled as needed.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub fps: f64,
    /// Number of frames to send; defaults to the dataset size.
    #[arg(long)]
    pub frames: Option<u64>,
    /// Starting level (the fixed level with --no-strategy).
    #[arg(long, default_value_t = 0)]
    pub level: usize,
    #[arg(long)]
    pub no_strategy: bool,
    /// Session CSV (frame,level,queue,bytes,timestamp).
    #[arg(long)]
    pub session_log: Option<PathBuf>,
    /// Enqueue times as frame,time_us.
    #[arg(long)]
    pub enqueue_log: Option<PathBuf>,
}

#[derive(Args)]
pub struct StreamRecvArgs {
    /// Address to listen on.
    #[arg(long)]
    pub listen: SocketAddr,
    /// Write decoded frames here.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bin")]
    pub format: CloudFormat,
    /// Decode-complete times as frame,time_us.
    #[arg(long)]
    pub decode_log: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Trace CSV (time_s,rate_bytes_per_s); the built-in drop-and-recover
    /// trace when omitted.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Directory of frames.
    #[arg(long, required_unless_present = "synthetic")]
    pub dataset: Option<PathBuf>,
    /// Use this many generated frames instead of a dataset.
    #[arg(long, conflicts_with = "dataset")]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 300.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0.01)]
    pub tick: f64,
    /// Queue weight in the session score.
    #[arg(long, default_value_t = 0.5)]
    pub mu: f64,
    /// Only run the fixed-level session.
    #[arg(long)]
    pub no_strategy: bool,
    /// Directory for session CSVs.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct LatencyArgs {
    #[arg(long)]
    pub enqueue: PathBuf,
    #[arg(long)]
    pub decode: PathBuf,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Encode(a) => codec::encode(&a),
        Command::Decode(a) => codec::decode(&a),
        Command::Bench(a) => eval::bench(&a),
        Command::Ablate(a) => eval::ablate(&a),
        Command::Synth(a) => eval::synth(&a),
        Command::StreamSend(a) => stream::send(&a),
        Command::StreamRecv(a) => stream::recv(&a),
        Command::Simulate(a) => stream::simulate(&a),
        Command::Latency(a) => stream::latency(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lidarc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
