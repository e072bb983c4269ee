mod commands;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] panda_core::Error),
    #[error("{}: {1}", .0.display())]
    Io(PathBuf, std::io::Error),
    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error("audit failed: {0}")]
    AuditFailed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use panda_core::Error as E;
        match self {
            CliError::AuditFailed(_) => 3,
            CliError::Core(
                E::Integrity(_)
                | E::Constraint(_)
                | E::Consistency(_)
                | E::VersionMismatch { .. }
                | E::MalformedLog(_)
                | E::Protocol(_),
            ) => 2,
            _ => 1,
        }
    }

    fn hint(&self) -> Option<&'static str> {
        match self {
            CliError::Core(panda_core::Error::VersionMismatch { .. }) => {
                Some("the store holds a different layout than the metadata; re-run `panda bin --rebin` or restore the matching metadata directory")
            }
            CliError::Core(panda_core::Error::BestMatchTooWide { .. }) => {
                Some("use `--strategy least`, or `--allow-full-scan` to fetch everything")
            }
            _ => None,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "panda", version, about = "Query binning over partitioned sensitive data")]
struct Cli {
    /// Owner metadata directory.
    #[arg(long, global = true, default_value = ".panda")]
    meta: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct IngestFlags {
    /// 0/1 column marking sensitive rows.
    #[arg(long, conflicts_with = "predicate")]
    pub sensitive_column: Option<String>,
    /// Rows matching e.g. `Dept=Defense` or `qty>40` are sensitive.
    #[arg(long)]
    pub predicate: Option<String>,
    /// Column holding tuple ids.
    #[arg(long)]
    pub id_column: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic Orders/LineItem CSVs.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        lineitems: usize,
        /// Percentage of sensitive orders.
        #[arg(long, default_value_t = 20.0)]
        sensitivity: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Create a fresh owner key file.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a CSV as a partitioned relation.
    Ingest {
        #[arg(long)]
        name: String,
        #[arg(long)]
        csv: PathBuf,
        /// Search attribute.
        #[arg(long)]
        attr: String,
        #[command(flatten)]
        flags: IngestFlags,
    },
    /// Build (or rebuild) the bin layout of a relation attribute.
    Bin {
        #[arg(long)]
        table: String,
        #[arg(long)]
        attr: Option<String>,
        #[arg(long, default_value = "base")]
        mode: String,
        /// Frequently queried values, for `--mode workload`.
        #[arg(long, value_delimiter = ',')]
        frequent: Vec<String>,
        #[arg(long, conflicts_with = "identity")]
        seed: Option<u64>,
        /// Keep values in input order instead of shuffling.
        #[arg(long)]
        identity: bool,
        /// Exhaustive balancing in multiplicity mode (small inputs only).
        #[arg(long)]
        exact: bool,
        /// Replace an outsourced layout.
        #[arg(long)]
        rebin: bool,
    },
    /// Encrypt and upload every ingested relation.
    Outsource {
        #[arg(long)]
        key_file: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
    /// Binned selection.
    Query {
        #[arg(long)]
        table: String,
        #[arg(long)]
        attr: Option<String>,
        #[arg(long, required_unless_present = "sweep")]
        value: Option<String>,
        /// Query every value of the layout once.
        #[arg(long)]
        sweep: bool,
        /// Include the adversarial view of these queries.
        #[arg(long)]
        show_av: bool,
        #[arg(long)]
        key_file: Option<PathBuf>,
    },
    /// Binned range query.
    Range {
        #[arg(long)]
        table: String,
        #[arg(long)]
        attr: String,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, default_value = "least")]
        strategy: String,
        /// Plan without additional nodes.
        #[arg(long)]
        no_additional: bool,
        #[arg(long)]
        allow_full_scan: bool,
        /// Order the domain numerically when the tree is first built.
        #[arg(long)]
        numeric: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        key_file: Option<PathBuf>,
    },
    /// Parent/child equi-join.
    Join {
        #[arg(long)]
        parent: String,
        #[arg(long)]
        child: String,
        /// Join attribute of the parent.
        #[arg(long)]
        key: String,
        /// Join attribute of the child, if named differently.
        #[arg(long)]
        child_key: Option<String>,
        #[arg(long)]
        select: Option<String>,
        /// Also run a binned selection on the parent for `--select`.
        #[arg(long, requires = "select")]
        fresh_fetch: bool,
        /// Allow joins that are not parent-key to foreign-key.
        #[arg(long)]
        general: bool,
        #[arg(long)]
        key_file: Option<PathBuf>,
    },
    /// Append rows to an outsourced relation.
    Insert {
        #[arg(long)]
        table: String,
        #[arg(long)]
        csv: PathBuf,
        #[command(flatten)]
        flags: IngestFlags,
        #[arg(long)]
        key_file: Option<PathBuf>,
    },
    /// Check the adversarial view of a store.
    Audit {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "bipartite,size,skew,allocation")]
        checks: Vec<String>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Model size for the allocation check (a perfect square <= 9).
        #[arg(long, default_value_t = 9)]
        allocation_n: usize,
    },
    /// Layout sizes, padding and re-binning advice.
    Stats {
        #[arg(long, default_value_t = 1.5)]
        threshold: f64,
    },
}

/// Prints a report; a closed pipe is not an error.
pub fn emit(v: &serde_json::Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).expect("report serialises");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli.meta, cli.cmd) {
        Ok(out) => {
            emit(&out);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(h) = e.hint() {
                eprintln!("hint: {h}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
