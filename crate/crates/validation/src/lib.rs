//! Shared fixtures for the acceptance runs.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use regulus_core::family::StripFamily;

/// The three committed corpus families.
pub const CORPUS: [&str; 3] = ["sl2_d6.json", "random_d6.json", "clustered_d6_r3.json"];

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn corpus(name: &str) -> StripFamily {
    let path = workspace_root().join("corpus").join(name);
    StripFamily::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Prints one `PASS`/`FAIL` line straight to stdout, so it shows even when
/// the test harness captures output, and returns `pass`.
pub fn report(name: &str, pass: bool, detail: impl AsRef<str>, start: Instant) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("{tag} {name}: {} [{:.1}s]\n", detail.as_ref(), start.elapsed().as_secs_f64());
    std::io::stdout().write_all(line.as_bytes()).unwrap();
    pass
}
