//! Command-line front end.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::Parser;
use thiserror::Error;

use crate::builtins::FoldOptions;
use crate::diag::Severity;
use crate::pipeline::{decompile_listing, render_file, Options, PipelineError};

#[derive(Debug, Parser)]
#[command(name = "gcn2cl", version, about = "Decompile AMD GCN disassembly (CLRX syntax) to OpenCL C")]
pub struct Args {
    /// Input listing.
    pub input: PathBuf,
    /// Output path; defaults to the input path with a `.cl` extension.
    #[arg(short = 'o', long = "output")]
    pub output: Option<PathBuf>,
    /// Only decompile this kernel.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Print the control-flow graph of each kernel (DOT) to stdout.
    #[arg(long)]
    pub dump_cfg: bool,
    /// Print the region graph before every merge and the final region tree.
    #[arg(long)]
    pub dump_regions: bool,
    /// Render work-group-size constants next to `get_group_id` as
    /// `get_local_size`.
    #[arg(long)]
    pub fold_local_size: bool,
    /// File of `view:offset = builtin` lines amending the kernarg table.
    #[arg(long, value_name = "FILE")]
    pub abi_override: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: cannot write output: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Pipeline { path: PathBuf, source: PipelineError },
}

/// Result of a successful run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub output: PathBuf,
    pub kernels: usize,
    pub fallback_blocks: usize,
    pub warnings: usize,
}

pub fn default_output(input: &Path) -> PathBuf {
    input.with_extension("cl")
}

/// Writes `text` to `path` through a temporary file in the same directory,
/// so that a failed run never leaves a partial file behind.
pub fn write_atomically(path: &Path, text: &str) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(text.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Runs the decompiler. Diagnostics go to `diag_out`, dumps to `dump_out`.
pub fn run(args: &Args, dump_out: &mut dyn Write, diag_out: &mut dyn Write) -> Result<Summary, CliError> {
    let input = &args.input;
    let read = |path: &Path| {
        fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })
    };
    let text = read(input)?;
    let abi_override = match &args.abi_override {
        Some(p) => Some(read(p)?),
        None => None,
    };
    let opts = Options {
        fold: FoldOptions {
            fold_local_size: args.fold_local_size,
        },
        abi_override,
        kernel: args.kernel.clone(),
        trace_regions: args.dump_regions,
    };
    let kernels = decompile_listing(&text, &opts).map_err(|source| CliError::Pipeline {
        path: input.clone(),
        source,
    })?;
    let file = input.display().to_string();
    let mut warnings = 0;
    for k in &kernels {
        for d in &k.diags {
            if d.severity >= Severity::Warning {
                warnings += 1;
            }
            let _ = writeln!(diag_out, "{}", d.render(&file));
        }
        if args.dump_cfg {
            let _ = write!(dump_out, "{}", k.cfg.to_dot(&k.name));
        }
        if args.dump_regions {
            for dot in &k.region_dots {
                let _ = write!(dump_out, "{dot}");
            }
            match k.reduction.root() {
                Some(root) => {
                    let _ = write!(dump_out, "// region tree of {}\n{}", k.name, root.dump());
                }
                None => {
                    let _ = writeln!(dump_out, "// {}: region graph not fully reduced", k.name);
                }
            }
        }
    }
    let output = args.output.clone().unwrap_or_else(|| default_output(input));
    write_atomically(&output, &render_file(&kernels)).map_err(|source| CliError::Write {
        path: output.clone(),
        source,
    })?;
    Ok(Summary {
        output,
        kernels: kernels.len(),
        fallback_blocks: kernels.iter().map(|k| k.fallback_count()).sum(),
        warnings,
    })
}
