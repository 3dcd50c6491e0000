mod support;

use std::process::Command;

use gcn2cl::codegen::{unescape_asm, FALLBACK_COMMENT};
use gcn2cl::lower::Stmt;
use gcn2cl::sym::Statement;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use support::nest::{listing, Emit, Generator};

/// Unsupported lines injected into corpus kernels.
const INJECTED: &[&str] = &[
    "ds_swizzle_b32 v9, v9 offset:0x1f",
    "s_sleep 2",
    "buffer_load_dword v9, v1, s[8:11], 0 offen offset:4",
    "v_sin_f32 v9, v9",
    "image_sample v[9:12], v[1:2], s[12:19], s[20:23] dmask:0xf",
];

fn raw_asm(stmts: &[Stmt], out: &mut Vec<(String, usize)>) {
    for s in stmts {
        match s {
            Stmt::Simple(Statement::RawAsm { text, line }) => out.push((text.clone(), *line)),
            Stmt::If { then_, else_, .. } => {
                raw_asm(then_, out);
                raw_asm(else_, out);
            }
            _ => {}
        }
    }
}

/// The string literals of every `__asm__("...")` in `src`, unescaped.
fn asm_payloads(src: &str) -> Vec<String> {
    src.lines()
        .filter_map(|l| {
            let l = l.trim();
            let body = l.strip_prefix("__asm__(\"")?.strip_suffix("\");")?;
            Some(unescape_asm(body))
        })
        .collect()
}

/// Inserts `line` as the first instruction of every kernel.
fn inject(listing: &str, line: &str) -> String {
    let mut out = String::new();
    for l in listing.lines() {
        out += l;
        out.push('\n');
        if l.trim() == ".text" {
            out += &format!("        {line}\n");
        }
    }
    out
}

#[test]
fn fallback_free_corpus_output_passes_grammar_check() {
    let mut checked = 0;
    for (file, d) in support::corpus_kernels() {
        if d.fallback_count() > 0 {
            continue;
        }
        if let Err(e) = support::grammar::check(&d.source) {
            panic!("{file} ({}): {e}\n{}", d.name, d.source);
        }
        checked += 1;
    }
    assert!(checked >= 20);
}

#[test]
fn random_nest_output_passes_grammar_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let prog = Generator::new(&mut rng, 40, 6).program();
        let d = support::decompile(&listing("nest", &prog, Emit { stores: true })).remove(0);
        if let Err(e) = support::grammar::check(&d.source) {
            panic!("{e}\n{}", d.source);
        }
    }
}

#[test]
fn corpus_fallback_payloads_match_source_lines() {
    for (file, text) in support::corpus() {
        let lines: Vec<&str> = text.lines().collect();
        for d in support::decompile(&text) {
            let mut raw = Vec::new();
            raw_asm(&d.lowered.body, &mut raw);
            for (payload, line) in &raw {
                assert_eq!(payload, lines[line - 1].trim(), "{file}:{line}");
            }
            let emitted = asm_payloads(&d.source);
            let expected: Vec<String> = raw.into_iter().map(|(t, _)| t).collect();
            assert_eq!(emitted, expected, "{file}");
            assert_eq!(d.source.matches(FALLBACK_COMMENT).count(), expected.len(), "{file}");
        }
    }
}

#[test]
fn injected_unsupported_instructions_are_preserved_verbatim() {
    let mut checked = 0;
    for (file, text) in support::corpus() {
        for line in INJECTED {
            let listing = inject(&text, line);
            for d in support::decompile(&listing) {
                let payloads = asm_payloads(&d.source);
                assert!(
                    payloads.iter().any(|p| p == line),
                    "{file} ({}): `{line}` not preserved\n{}",
                    d.name,
                    d.source
                );
                if let Err(e) = support::grammar::check(&d.source) {
                    panic!("{file} ({}): {e}\n{}", d.name, d.source);
                }
                checked += 1;
            }
        }
    }
    assert!(checked >= 100);
}

#[test]
fn payload_escaping_round_trips_awkward_text() {
    let text = "s_nop \"q\" \\ back\tslash";
    let lines = gcn2cl::codegen::emit_fallback(text);
    let asm = lines.iter().find(|l| l.starts_with("__asm__")).unwrap();
    assert_eq!(asm_payloads(asm), vec![text.to_string()]);
}

/// Cross-check with a real OpenCL C front end when one is installed.
#[test]
fn clang_accepts_fallback_free_output() {
    let probe = Command::new("clang").arg("--version").output();
    if !probe.is_ok_and(|o| o.status.success()) {
        eprintln!("clang not found; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    for (file, d) in support::corpus_kernels() {
        if d.fallback_count() > 0 {
            continue;
        }
        let path = dir.path().join(format!("{}.cl", d.name));
        std::fs::write(&path, &d.source).unwrap();
        let out = Command::new("clang")
            .args(["-target", "spir", "-x", "cl", "-cl-std=CL1.2", "-fsyntax-only", "-Xclang", "-finclude-default-header"])
            .arg(&path)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{file}: {}\n{}",
            String::from_utf8_lossy(&out.stderr),
            d.source
        );
    }
}
