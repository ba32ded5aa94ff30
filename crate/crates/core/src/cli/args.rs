use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Linear connections on coordinate charts: invariants, transport, and
/// normal frames and coordinates.
#[derive(Debug, Parser)]
#[command(name = "normframe", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Built-in catalog entry.
    #[arg(long, global = true, conflicts_with = "file")]
    pub catalog: Option<String>,
    /// Chart definition file (JSON).
    #[arg(long, global = true)]
    pub file: Option<PathBuf>,
    /// Normality tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Integration steps (per leg for grid constructions).
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Grid nodes per axis.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Emit the full report as JSON.
    #[arg(long, global = true, conflicts_with = "csv")]
    pub json: bool,
    /// Emit sampled tables as CSV.
    #[arg(long, global = true)]
    pub csv: bool,
    /// Seed for sample selection; 0 keeps the plain low-discrepancy sequence.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Run grid work on the calling thread only.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
#[group(id = "at_point")]
pub struct Point {
    /// Point in chart coordinates.
    #[arg(long, num_args = 1.., required = true, allow_negative_numbers = true)]
    pub at: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PathSel {
    /// Named path of the catalog entry.
    #[arg(long, conflicts_with = "expr", required_unless_present = "expr")]
    pub path: Option<String>,
    /// Path components in `t`; write a leading minus as `0-t` or ` -t`.
    #[arg(long, num_args = 1.., requires = "t_range")]
    pub expr: Vec<String>,
    #[arg(long, num_args = 2, allow_negative_numbers = true, value_names = ["A", "B"])]
    pub t_range: Vec<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Connection coefficients at a point.
    Christoffel(Point),
    /// Torsion tensor at a point.
    Torsion(Point),
    /// Curvature tensor `R[i][k][j][l]` at a point.
    Curvature(Point),
    /// Geodesic from a point with an initial velocity.
    Geodesic {
        #[command(flatten)]
        point: Point,
        #[arg(long, num_args = 1.., required = true, allow_negative_numbers = true)]
        velocity: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
        /// Rows of the sampled table.
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Parallel transport of a vector along a path.
    Transport {
        #[command(flatten)]
        path: PathSel,
        #[arg(long, num_args = 1.., required = true, allow_negative_numbers = true)]
        vector: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Holonomy around a closed path.
    Holonomy {
        #[command(flatten)]
        path: PathSel,
    },
    /// Normal frames and coordinates.
    #[command(subcommand)]
    Normal(NormalCmd),
    /// Linear transports along paths.
    #[command(subcommand)]
    Bundle(BundleCmd),
    /// Re-check a frame from a saved JSON report.
    Verify {
        /// Report written by `normal open|patch|path --json`.
        input: PathBuf,
    },
    /// The built-in catalog.
    #[command(subcommand)]
    Catalog(CatalogCmd),
}

#[derive(Debug, Subcommand)]
pub enum NormalCmd {
    /// Frame (and with --coords, coordinates) normal at a point.
    Point {
        #[command(flatten)]
        point: Point,
        #[arg(long)]
        coords: bool,
    },
    /// Frame normal along a path.
    Path {
        #[command(flatten)]
        path: PathSel,
        /// Verification samples.
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Frame (and with --coords, coordinates) normal on an open box.
    Open {
        #[arg(long, num_args = 1.., allow_negative_numbers = true)]
        lower: Vec<f64>,
        #[arg(long, num_args = 1.., allow_negative_numbers = true)]
        upper: Vec<f64>,
        #[arg(long, num_args = 1.., allow_negative_numbers = true)]
        base: Vec<f64>,
        #[arg(long)]
        coords: bool,
    },
    /// Frame normal along a named patch.
    Patch {
        #[arg(long)]
        patch: String,
        /// Base point in patch parameters; the box centre by default.
        #[arg(long, num_args = 1.., allow_negative_numbers = true)]
        base: Vec<f64>,
    },
    /// Fermi coordinates along a geodesic.
    Fermi {
        #[command(flatten)]
        path: PathSel,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        /// Also report the coefficients at this transverse distance.
        #[arg(long)]
        offset: Option<f64>,
    },
    /// Riemannian normal coordinates at a point.
    Riemann {
        #[command(flatten)]
        point: Point,
        #[arg(long)]
        radius: Option<f64>,
        /// Direction of the metric-expansion slope fit; all ones by default.
        #[arg(long, num_args = 1.., allow_negative_numbers = true)]
        direction: Vec<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum BundleCmd {
    /// Apply `L_{s→t}` of a named generator.
    Transport {
        #[arg(long)]
        generator: String,
        #[arg(long, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, allow_negative_numbers = true)]
        to: f64,
        #[arg(long, num_args = 1.., required = true, allow_negative_numbers = true)]
        vector: Vec<f64>,
    },
    /// Coefficients `F⁻¹Ḟ` of the derivation and the reconstruction check.
    Derivation {
        #[arg(long)]
        generator: String,
        #[arg(long, allow_negative_numbers = true)]
        at_t: f64,
    },
    /// Normal frame of a transport and its defect on random parameter pairs.
    Normal {
        #[arg(long)]
        generator: String,
        #[arg(long, default_value_t = 50)]
        pairs: usize,
    },
    /// Autoparallel of a tangent transport, compared with the geodesic.
    Autoparallel {
        #[command(flatten)]
        point: Point,
        #[arg(long, num_args = 1.., required = true, allow_negative_numbers = true)]
        velocity: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
        /// Named tangent transport; the connection by default.
        #[arg(long)]
        transport: Option<String>,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Linearity of tangent-transport coefficients in the tangent vector.
    Linearity {
        #[arg(long)]
        transport: Option<String>,
        /// Also require the extracted 3-index coefficients to vanish.
        #[arg(long)]
        strict: bool,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum CatalogCmd {
    List,
    Show {
        id: String,
    },
    /// Re-derive every entry's documented facts.
    VerifyAll,
    /// Print the JSON Schema of definition files.
    Schema,
}
