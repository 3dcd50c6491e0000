//! Helpers shared by the integration tests: corpus access, the
//! differential driver, an OpenCL C grammar checker and a generator of
//! random structured programs.
#![allow(dead_code)]

pub mod grammar;
pub mod nest;

use std::fs;
use std::path::PathBuf;

use gcn2cl::oracle::{evaluate_decompiled, interpret_asm, sample_env, OracleError};
use gcn2cl::pipeline::{decompile_listing, Decompiled, Options};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("corpus")
}

/// `(file name, listing text)` for every corpus file, sorted by name.
pub fn corpus() -> Vec<(String, String)> {
    let mut files: Vec<_> = fs::read_dir(corpus_dir())
        .expect("corpus directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|e| e == "asm"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let text = fs::read_to_string(&p).expect("readable corpus file");
            (name, text)
        })
        .collect()
}

pub fn corpus_file(name: &str) -> String {
    fs::read_to_string(corpus_dir().join(name)).expect("corpus file")
}

pub fn decompile(text: &str) -> Vec<Decompiled> {
    decompile_listing(text, &Options::default()).expect("listing decompiles")
}

/// Every kernel of the corpus, tagged with its file name.
pub fn corpus_kernels() -> Vec<(String, Decompiled)> {
    corpus()
        .into_iter()
        .flat_map(|(file, text)| decompile(&text).into_iter().map(move |d| (file.clone(), d)))
        .collect()
}

/// Runs both semantics over `envs` sampled work items and reports the
/// first disagreement.
pub fn differential(d: &Decompiled, envs: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..envs {
        let env = sample_env(&d.config, &mut rng);
        let want = interpret_asm(&d.original, &d.config, &d.abi, &env);
        let got = evaluate_decompiled(&d.lowered, &d.config, &d.abi, &env);
        match (&want, &got) {
            (Ok(a), Ok(b)) if a == b => {}
            (Err(OracleError::Unsupported(why)), _) => {
                return Err(format!("{}: reference interpreter: {why}", d.name));
            }
            _ => {
                return Err(format!(
                    "{}: environment {k} disagrees\n  env: {env:?}\n  asm: {want:?}\n  decompiled: {got:?}\n{}",
                    d.name, d.source
                ));
            }
        }
    }
    Ok(())
}
