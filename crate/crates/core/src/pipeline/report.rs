//! Complexity distribution table: levels as rows, model tags as columns.

use std::fmt;

use serde::Serialize;

use crate::model::{ComplexityLevel, LevelCounts};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ComplexityReport {
    /// Tags in first-seen order.
    pub tags: Vec<String>,
    pub counts: Vec<LevelCounts>,
}

impl ComplexityReport {
    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn row(&self, level: ComplexityLevel) -> Vec<usize> {
        self.counts.iter().map(|c| c.get(level)).collect()
    }

    pub fn column(&self, tag: &str) -> Option<LevelCounts> {
        self.tags.iter().position(|t| t == tag).map(|i| self.counts[i])
    }
}

pub fn complexity_report<S: AsRef<str>>(ratings: &[(S, ComplexityLevel)]) -> ComplexityReport {
    let mut report = ComplexityReport::default();
    for (tag, level) in ratings {
        let tag = tag.as_ref();
        let i = match report.tags.iter().position(|t| t == tag) {
            Some(i) => i,
            None => {
                report.tags.push(tag.to_string());
                report.counts.push(LevelCounts::default());
                report.tags.len() - 1
            }
        };
        report.counts[i].add(*level);
    }
    report
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return Ok(());
        }
        write!(f, "{:<8}", "Level")?;
        for tag in &self.tags {
            write!(f, " {tag:>8}")?;
        }
        writeln!(f)?;
        for level in ComplexityLevel::ALL {
            let name = match level {
                ComplexityLevel::Easy => "Easy",
                ComplexityLevel::Medium => "Medium",
                ComplexityLevel::Hard => "Hard",
            };
            write!(f, "{name:<8}")?;
            for n in self.row(level) {
                write!(f, " {n:>8}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ComplexityLevel::*;

    #[test]
    fn single_tag_column() {
        let r = complexity_report(&[("7B", Medium), ("7B", Medium), ("7B", Medium)]);
        assert_eq!(
            r.column("7B").unwrap(),
            LevelCounts {
                easy: 0,
                medium: 3,
                hard: 0
            }
        );
    }

    #[test]
    fn empty_input_empty_table() {
        let r = complexity_report::<&str>(&[]);
        assert!(r.is_empty());
        assert_eq!(r.to_string(), "");
    }

    #[test]
    fn table_layout() {
        let r = complexity_report(&[("a", Easy), ("b", Hard)]);
        let text = r.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("Easy"));
        assert!(lines[1].ends_with("1        0"));
    }
}
