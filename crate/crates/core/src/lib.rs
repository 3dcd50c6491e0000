//! Decompiler from AMD GCN kernel disassembly (CLRX syntax) to OpenCL C.

pub mod abi;
pub mod asm;
pub mod builtins;
pub mod cfg;
pub mod cli;
pub mod codegen;
pub mod diag;
pub mod expr;
pub mod lower;
pub mod oracle;
pub mod pipeline;
pub mod structure;
pub mod sym;
pub mod types;
