//! Pass/fail bookkeeping for the acceptance suite: each criterion collects
//! named checks and reports them on one line.

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

/// Results of the individual checks behind one criterion.
#[derive(Debug, Default, Clone)]
pub struct Check {
    results: Vec<(bool, String)>,
    context: Vec<String>,
}

impl Check {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `ok` with a description of what was compared.
    pub fn holds(&mut self, ok: bool, what: impl Into<String>) -> &mut Self {
        self.results.push((ok, what.into()));
        self
    }

    /// `lo <= value <= hi`.
    pub fn within(&mut self, what: &str, value: f64, lo: f64, hi: f64) -> &mut Self {
        let ok = value >= lo && value <= hi;
        self.holds(ok, format!("{what} {value:.4} in [{lo}, {hi}]"))
    }

    /// `value < bound`.
    pub fn below(&mut self, what: &str, value: f64, bound: f64) -> &mut Self {
        self.holds(value < bound, format!("{what} {value:.3e} < {bound:e}"))
    }

    /// `value > bound`.
    pub fn above(&mut self, what: &str, value: f64, bound: f64) -> &mut Self {
        self.holds(value > bound, format!("{what} {value:.4} > {bound}"))
    }

    /// Extra lines printed under the verdict, such as a results table.
    pub fn context(&mut self, text: impl Into<String>) -> &mut Self {
        self.context.push(text.into());
        self
    }

    pub fn passed(&self) -> bool {
        !self.results.is_empty() && self.results.iter().all(|(ok, _)| *ok)
    }

    /// Failed checks first, each marked, then the rest.
    pub fn summary(&self) -> String {
        let mut parts: Vec<String> = self
            .results
            .iter()
            .filter(|(ok, _)| !ok)
            .map(|(_, w)| format!("NOT {w}"))
            .collect();
        parts.extend(self.results.iter().filter(|(ok, _)| *ok).map(|(_, w)| w.clone()));
        if parts.is_empty() {
            return "no checks recorded".into();
        }
        parts.join("; ")
    }
}

pub struct Criterion {
    pub number: u32,
    pub title: &'static str,
    pub run: fn() -> Check,
}

/// Outcome of one criterion as printed.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub number: u32,
    pub passed: bool,
    pub line: String,
}

/// Runs one criterion, turning a panic into a failure.
pub fn evaluate(c: &Criterion) -> (Verdict, Vec<String>) {
    let started = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(c.run));
    let secs = started.elapsed().as_secs_f64();
    let (passed, detail, context) = match outcome {
        Ok(check) => (check.passed(), check.summary(), check.context),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            (false, format!("panicked: {msg}"), Vec::new())
        }
    };
    let mut line = String::new();
    let _ = write!(
        line,
        "criterion {:>2} {} {} ({secs:.1} s): {detail}",
        c.number,
        if passed { "PASS" } else { "FAIL" },
        c.title
    );
    (
        Verdict {
            number: c.number,
            passed,
            line,
        },
        context,
    )
}

/// Criterion numbers named on the command line; empty means all. Flags
/// passed through by the test runner are ignored.
pub fn selection(args: impl IntoIterator<Item = String>) -> Vec<u32> {
    args.into_iter().filter_map(|a| a.parse().ok()).collect()
}
