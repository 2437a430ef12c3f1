pub mod gradient_suite;
pub mod oracles;

/// Outcome of one check, with a one-line summary of what was measured.
#[derive(Debug)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}
