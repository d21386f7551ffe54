use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod run;

use run::Failure;

#[derive(Parser)]
#[command(name = "bip", version, about = "Provision and audit non-colliding virtual identities")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "BIP_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Size, norm audit and sampled pairwise cosines of a gallery.
    GalleryStats(GalleryStatsArgs),
    /// Principal components and spectrum of a gallery.
    Pca(PcaArgs),
    /// Cap volume, GV reference and minimum separation per threshold.
    Capacity(CapacityArgs),
    /// Allocate virtual identities against a gallery.
    Provision(ProvisionArgs),
    /// Exact Non-Collision and Inter-Sep of a virtual set.
    Verify(VerifyArgs),
    /// Collision rate against growing prefixes of a held-out gallery.
    StressTest(StressArgs),
    /// Virtual rows that collide with newly enrolled identities.
    RevokeCheck(RevokeArgs),
    /// Pair-verification protocols (R-R, V-V, R-V).
    Pairs(PairsArgs),
    /// Synthetic von Mises-Fisher gallery.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct GalleryStatsArgs {
    pub gallery: PathBuf,
    /// Rows sampled for the pairwise cosine summary.
    #[arg(long, default_value_t = 2000)]
    pub sample: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.391)]
    pub tau: f64,
    /// Skip the unit-norm check on load.
    #[arg(long)]
    pub no_validate: bool,
    /// Output prefix (default: the gallery path).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PcaArgs {
    pub gallery: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Use the second-moment matrix instead of the covariance.
    #[arg(long)]
    pub uncentered: bool,
}

#[derive(Args)]
pub struct CapacityArgs {
    /// Thresholds; defaults to the six IJB-B operating points.
    #[arg(long, value_delimiter = ',')]
    pub tau: Vec<f64>,
    #[arg(long, default_value_t = 269)]
    pub dim: usize,
    /// Safety buffer; needs a single --tau.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ProvisionArgs {
    pub gallery: PathBuf,
    #[arg(short, long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON allocator config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reuse a fitted PCA (prefix written by `bip pca`).
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, conflicts_with_all = ["alpha_min", "alpha_max"])]
    pub alpha: Option<f64>,
    #[arg(long, requires = "alpha_max")]
    pub alpha_min: Option<f64>,
    #[arg(long, requires = "alpha_min")]
    pub alpha_max: Option<f64>,
    #[arg(long = "k")]
    pub k_neighbors: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_attempts_per_candidate: Option<u32>,
    #[arg(long)]
    pub max_total_attempts: Option<u64>,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Virtual set prefix, or a bare embedding file.
    pub virtual_set: PathBuf,
    pub gallery: PathBuf,
    /// Defaults to the provisioning threshold, else 0.391.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Offenders listed per kind.
    #[arg(long, default_value_t = 100)]
    pub max_report: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct StressArgs {
    pub virtual_set: PathBuf,
    pub heldout: PathBuf,
    #[arg(long, default_value_t = 0.391)]
    pub tau: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RevokeArgs {
    pub virtual_set: PathBuf,
    pub delta_gallery: PathBuf,
    #[arg(long, default_value_t = 0.391)]
    pub tau: f64,
    /// Lower edge of the monitoring zone [tau_safe, tau).
    #[arg(long)]
    pub tau_safe: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PairsArgs {
    /// Embeddings for the first index of each pair.
    #[arg(long)]
    pub a: PathBuf,
    /// Embeddings for the second index (default: same as --a).
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value = "R-R")]
    pub protocol: String,
    /// Per-fold calibration at this TAR.
    #[arg(long, conflicts_with = "threshold")]
    pub tar: Option<f64>,
    /// Fixed decision threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SynthArgs {
    /// JSON config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub n_clusters: Option<usize>,
    #[arg(long)]
    pub per_cluster: Option<usize>,
    #[arg(long)]
    pub concentration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Writes `<out>.bipe`.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::GalleryStats(a) => commands::gallery_stats(a),
        Command::Pca(a) => commands::pca(a),
        Command::Capacity(a) => commands::capacity(a),
        Command::Provision(a) => commands::provision(a),
        Command::Verify(a) => commands::verify(a),
        Command::StressTest(a) => commands::stress(a),
        Command::RevokeCheck(a) => commands::revoke_check(a),
        Command::Pairs(a) => commands::pairs(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Findings(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
