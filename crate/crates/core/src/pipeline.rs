//! End-to-end decompilation of a listing.

use thiserror::Error;

use crate::abi::{AbiError, AbiMap};
use crate::asm::{
    parse_config, parse_program, split_kernels, ConfigError, FormatError, Instruction,
    KernelConfig, KernelSection,
};
use crate::builtins::FoldOptions;
use crate::cfg::{build_cfg, normalize, Cfg, CfgError};
use crate::codegen::emit_kernel;
use crate::diag::Diagnostic;
use crate::lower::{lower_kernel, ExecModel, Lowered, Stmt};
use crate::structure::{reduce, reduce_traced, Reduction, RegionGraph};
use crate::sym::{Statement, SymCtx};

#[derive(Clone, Debug, Default)]
pub struct Options {
    pub fold: FoldOptions,
    /// `view:offset = target` lines applied to every kernel's ABI table.
    pub abi_override: Option<String>,
    /// Only decompile the kernel with this name.
    pub kernel: Option<String>,
    /// Record DOT snapshots of the region graph before every merge.
    pub trace_regions: bool,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("kernel `{kernel}`: {source}")]
    Config { kernel: String, source: ConfigError },
    #[error("kernel `{kernel}`: {source}")]
    Abi { kernel: String, source: AbiError },
    #[error("kernel `{kernel}`: {source}")]
    Cfg { kernel: String, source: CfgError },
    #[error("no kernels found")]
    NoKernels,
    #[error("kernel `{0}` not found")]
    KernelNotFound(String),
}

/// Everything produced for one kernel.
#[derive(Clone, Debug)]
pub struct Decompiled {
    pub name: String,
    pub config: KernelConfig,
    pub abi: AbiMap,
    /// The instruction stream as written.
    pub original: Vec<Instruction>,
    /// The stream the emitted code was lowered from.
    pub lowered_from: Vec<Instruction>,
    pub cfg: Cfg,
    pub reduction: Reduction,
    pub model: ExecModel,
    pub lowered: Lowered,
    pub source: String,
    pub diags: Vec<Diagnostic>,
    /// DOT snapshots, filled when [`Options::trace_regions`] is set.
    pub region_dots: Vec<String>,
}

impl Decompiled {
    /// Number of inline-assembly blocks in the output.
    pub fn fallback_count(&self) -> usize {
        fn count(stmts: &[Stmt]) -> usize {
            stmts
                .iter()
                .map(|s| match s {
                    Stmt::Simple(Statement::RawAsm { .. }) => 1,
                    Stmt::If { then_, else_, .. } => count(then_) + count(else_),
                    _ => 0,
                })
                .sum()
        }
        count(&self.lowered.body)
    }
}

fn reduce_cfg(cfg: &Cfg, name: &str, trace: bool) -> (Reduction, Vec<String>) {
    let g = RegionGraph::from_cfg(cfg);
    if trace {
        reduce_traced(g, name)
    } else {
        (reduce(g), Vec::new())
    }
}

/// Decompiles one kernel section.
pub fn decompile_section(section: &KernelSection, opts: &Options) -> Result<Decompiled, PipelineError> {
    let name = section.name.clone();
    let config = parse_config(&section.config_lines).map_err(|source| PipelineError::Config {
        kernel: name.clone(),
        source,
    })?;
    let abi_err = |source| PipelineError::Abi {
        kernel: name.clone(),
        source,
    };
    let mut abi = AbiMap::build(&config).map_err(abi_err)?;
    if let Some(text) = &opts.abi_override {
        abi.apply_overrides(text, &config).map_err(abi_err)?;
    }
    let mut diags = Vec::new();
    for a in config.args.iter().filter(|a| !a.implicit && a.ocl_type.is_none()) {
        diags.push(Diagnostic::warning(
            Some(a.line),
            format!(
                "type `{}` of argument `{}` is not modelled; declared verbatim",
                a.type_text, a.name
            ),
        ));
    }
    let (original, parse_diags) = parse_program(&section.text_lines);
    diags.extend(parse_diags);
    let cfg_err = |source| PipelineError::Cfg {
        kernel: name.clone(),
        source,
    };

    let (normalized, norm_diags) = normalize(&original);
    let cfg = build_cfg(&normalized).map_err(cfg_err)?;
    let (reduction, dots) = reduce_cfg(&cfg, &name, opts.trace_regions);
    let (lowered_from, cfg, reduction, model, dots) = if reduction.root().is_some() {
        diags.extend(norm_diags);
        (normalized, cfg, reduction, ExecModel::Scoped, dots)
    } else {
        // Reduce the stream as written; exec is then an ordinary value.
        let cfg = build_cfg(&original).map_err(cfg_err)?;
        let (reduction, dots) = reduce_cfg(&cfg, &name, opts.trace_regions);
        (original.clone(), cfg, reduction, ExecModel::Literal, dots)
    };

    let ctx = SymCtx::new(&config, &abi);
    let lowered = lower_kernel(&cfg, &reduction, ctx, opts.fold, model);
    diags.extend(lowered.diags.iter().cloned());
    let source = emit_kernel(&name, &config, &lowered);
    Ok(Decompiled {
        name,
        config: config.clone(),
        abi: abi.clone(),
        original,
        lowered_from,
        cfg,
        reduction,
        model,
        lowered,
        source,
        diags,
        region_dots: dots,
    })
}

/// Decompiles every kernel of a listing, in input order.
pub fn decompile_listing(text: &str, opts: &Options) -> Result<Vec<Decompiled>, PipelineError> {
    let sections = split_kernels(text)?;
    if sections.is_empty() {
        return Err(PipelineError::NoKernels);
    }
    let selected: Vec<&KernelSection> = match &opts.kernel {
        Some(k) => sections.iter().filter(|s| &s.name == k).collect(),
        None => sections.iter().collect(),
    };
    if selected.is_empty() {
        return Err(PipelineError::KernelNotFound(opts.kernel.clone().unwrap_or_default()));
    }
    selected.into_iter().map(|s| decompile_section(s, opts)).collect()
}

/// The output file: kernels separated by a blank line.
pub fn render_file(kernels: &[Decompiled]) -> String {
    kernels
        .iter()
        .map(|k| k.source.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Convenience wrapper returning the OpenCL text of a listing.
pub fn decompile_to_string(text: &str, opts: &Options) -> Result<String, PipelineError> {
    Ok(render_file(&decompile_listing(text, opts)?))
}
