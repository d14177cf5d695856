//! Command implementations behind the `mipsim` binary. Each returns the
//! process exit status: 0 success, 1 assertion failure, 2 input error.

pub mod dissect;
pub mod selftest;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::parse_scenario;
use crate::secassoc::parse_keyfile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

pub const KEYGEN_OCTETS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExitReport {
    pub passed: usize,
    pub failed: usize,
    pub parse_errors: usize,
    pub status: i32,
}

impl ExitReport {
    fn input_error() -> Self {
        ExitReport {
            passed: 0,
            failed: 0,
            parse_errors: 1,
            status: EXIT_INPUT,
        }
    }
}

/// Runs a scenario file. The trace goes to `trace_path` when given,
/// otherwise to `out`; expectation results and errors go to `err`.
pub fn cmd_run(path: &Path, trace_path: Option<&Path>, seed: u64, out: &mut dyn Write, err: &mut dyn Write) -> ExitReport {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "{}: {e}", path.display());
            return ExitReport::input_error();
        }
    };
    let run = match parse_scenario(&text).and_then(|s| s.run(seed)) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "{}:{}: {}", path.display(), e.line, e.message);
            return ExitReport::input_error();
        }
    };
    let trace = run.sim.render_trace();
    match trace_path {
        Some(p) => {
            if let Err(e) = fs::write(p, &trace) {
                let _ = writeln!(err, "{}: {e}", p.display());
                return ExitReport::input_error();
            }
        }
        None => {
            let _ = out.write_all(trace.as_bytes());
        }
    }
    for o in &run.outcomes {
        let verdict = if o.passed { "ok" } else { "FAILED" };
        let _ = writeln!(
            err,
            "expect {verdict} (line {}): {} [matched {}]",
            o.expectation.line, o.expectation, o.matched
        );
    }
    let (passed, failed) = (run.passed(), run.failed());
    let _ = writeln!(err, "{passed} passed, {failed} failed");
    ExitReport {
        passed,
        failed,
        parse_errors: 0,
        status: if failed == 0 { EXIT_OK } else { EXIT_ASSERTION },
    }
}

/// Dissects hex input, verifying against `keyfile` text when given.
pub fn cmd_dissect(hex_text: &str, keyfile: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let keys = match keyfile.map(parse_keyfile).transpose() {
        Ok(k) => k,
        Err(e) => {
            let _ = writeln!(err, "keyfile {e}");
            return EXIT_INPUT;
        }
    };
    let report = dissect::parse_hex(hex_text).and_then(|raw| dissect::dissect(&raw, keys.as_deref()));
    match report {
        Ok(r) => {
            let _ = out.write_all(r.as_bytes());
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "{e}");
            EXIT_INPUT
        }
    }
}

/// A 128-bit key as 32 hex digits, from a seeded generator or from the
/// operating system.
pub fn cmd_keygen(seed: Option<u64>) -> String {
    let mut key = [0u8; KEYGEN_OCTETS];
    match seed {
        Some(s) => ChaCha8Rng::seed_from_u64(s).fill_bytes(&mut key),
        None => OsRng.fill_bytes(&mut key),
    }
    hex::encode(key)
}

pub fn cmd_selftest(trials: usize, seed: u64, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if trials == 0 {
        let _ = writeln!(err, "trials must be at least 1");
        return EXIT_INPUT;
    }
    let report = selftest::avalanche(trials, seed);
    let _ = writeln!(out, "{report}");
    if report.in_band() {
        EXIT_OK
    } else {
        EXIT_ASSERTION
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keygen_shape_and_determinism() {
        let k = cmd_keygen(Some(42));
        assert_eq!(k.len(), 32);
        assert!(k.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(k, cmd_keygen(Some(42)));
        assert_ne!(k, cmd_keygen(Some(43)));
        assert_eq!(cmd_keygen(None).len(), 32);
    }

    #[test]
    fn selftest_status() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(cmd_selftest(200, 1, &mut out, &mut err), EXIT_OK);
        assert!(String::from_utf8(out).unwrap().contains("result=pass"));
        assert_eq!(cmd_selftest(0, 1, &mut Vec::new(), &mut Vec::new()), EXIT_INPUT);
    }

    #[test]
    fn dissect_status() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(cmd_dissect("01 00 00 00", None, &mut out, &mut err), EXIT_INPUT);
        assert!(String::from_utf8(err).unwrap().contains("offset"));
        assert_eq!(cmd_dissect("0g", None, &mut Vec::new(), &mut Vec::new()), EXIT_INPUT);
        assert_eq!(cmd_dissect(&format!("01{}", "00".repeat(23)), Some("bogus\n"), &mut Vec::new(), &mut Vec::new()), EXIT_INPUT);
        assert_eq!(cmd_dissect(&format!("01{}", "00".repeat(23)), None, &mut Vec::new(), &mut Vec::new()), EXIT_OK);
    }
}
