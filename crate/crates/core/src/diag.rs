use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Note,
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Note => "note",
            Severity::Warning => "warning",
            Severity::Error => "error",
        })
    }
}

/// A message tied to an optional source line of the input listing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    pub fn new(line: Option<usize>, severity: Severity, message: impl Into<String>) -> Self {
        Diagnostic {
            line,
            severity,
            message: message.into(),
        }
    }

    pub fn warning(line: Option<usize>, message: impl Into<String>) -> Self {
        Self::new(line, Severity::Warning, message)
    }

    pub fn note(line: Option<usize>, message: impl Into<String>) -> Self {
        Self::new(line, Severity::Note, message)
    }

    /// `file:line: severity: message`, with the line omitted when unknown.
    pub fn render(&self, file: &str) -> String {
        match self.line {
            Some(line) => format!("{file}:{line}: {}: {}", self.severity, self.message),
            None => format!("{file}: {}: {}", self.severity, self.message),
        }
    }
}
