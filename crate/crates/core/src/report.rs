//! Pass/fail listings for operator certification.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl PropertyCheck {
    /// Passes iff `residual <= tolerance` (a NaN residual fails).
    pub fn at_most(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            residual,
            tolerance,
            passed: residual <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PropertyReport {
    pub title: String,
    pub checks: Vec<PropertyCheck>,
}

impl PropertyReport {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            checks: Vec::new(),
        }
    }

    pub fn push(&mut self, check: PropertyCheck) {
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: PropertyReport) {
        self.checks.extend(other.checks);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,residual,tolerance,status\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{},{:e},{:e},{}\n",
                c.name,
                c.residual,
                c.tolerance,
                status(c.passed)
            ));
        }
        out
    }
}

fn status(passed: bool) -> &'static str {
    if passed {
        "pass"
    } else {
        "fail"
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.title.is_empty() {
            writeln!(f, "{}", self.title)?;
        }
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            writeln!(
                f,
                "  [{}] {:<width$}  residual {:>10.3e}  tolerance {:>10.3e}",
                status(c.passed).to_uppercase(),
                c.name,
                c.residual,
                c.tolerance,
            )?;
        }
        write!(
            f,
            "  overall: {}",
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut r = PropertyReport::new("t");
        r.push(PropertyCheck::at_most("a", 1e-15, 1e-13));
        r.push(PropertyCheck::at_most("b", 2.0, 1.0));
        assert_eq!(
            r.to_csv(),
            "check,residual,tolerance,status\na,1e-15,1e-13,pass\nb,2e0,1e0,fail\n"
        );
        assert!(!r.passed());
        assert_eq!(r.failures().count(), 1);
    }

    #[test]
    fn nan_residual_fails() {
        assert!(!PropertyCheck::at_most("x", f64::NAN, 1.0).passed);
    }
}
