//! Prompt templates for the Critic, Rethinker and Verifier agents.
//!
//! Role texts ship as versioned data files under `templates/<version>/` and are
//! compiled in; [`TemplateSet::load_dir`] reads an override directory with the
//! same file names. The user message is built from `user_layout.txt`, which must
//! contain each of `{problem}`, `{answer}` and `{reasoning}` exactly once.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateName {
    Critic,
    RethinkerEasy,
    RethinkerHard,
    RethinkerIncorrect,
    Verifier,
}

impl TemplateName {
    pub const ALL: [TemplateName; 5] = [
        Self::Critic,
        Self::RethinkerEasy,
        Self::RethinkerHard,
        Self::RethinkerIncorrect,
        Self::Verifier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Critic => "critic",
            Self::RethinkerEasy => "rethinker_easy",
            Self::RethinkerHard => "rethinker_hard",
            Self::RethinkerIncorrect => "rethinker_incorrect",
            Self::Verifier => "verifier",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template file {path} unreadable: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("user layout: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Problem,
    Answer,
    Reasoning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(Slot),
}

/// Parsed user-message layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserLayout {
    segments: Vec<Segment>,
}

impl UserLayout {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut seen = [false; 3];
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            let close = rest[open..]
                .find('}')
                .map(|c| open + c)
                .ok_or_else(|| TemplateError::Layout("unterminated placeholder".into()))?;
            let (slot, idx) = match &rest[open + 1..close] {
                "problem" => (Slot::Problem, 0),
                "answer" => (Slot::Answer, 1),
                "reasoning" => (Slot::Reasoning, 2),
                other => return Err(TemplateError::Layout(format!("unknown placeholder {{{other}}}"))),
            };
            if std::mem::replace(&mut seen[idx], true) {
                return Err(TemplateError::Layout(format!("placeholder {slot:?} repeated")));
            }
            if open > 0 {
                segments.push(Segment::Text(rest[..open].to_string()));
            }
            segments.push(Segment::Slot(slot));
            rest = &rest[close + 1..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(rest.to_string()));
        }
        if seen.iter().any(|s| !s) {
            return Err(TemplateError::Layout("every placeholder must appear once".into()));
        }
        Ok(Self { segments })
    }

    /// Single pass: placeholder-like text inside the inputs is left alone.
    pub fn render(&self, problem: &str, answer: &str, reasoning: &str) -> String {
        let mut out = String::with_capacity(problem.len() + answer.len() + reasoning.len() + 64);
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(Slot::Problem) => out.push_str(problem),
                Segment::Slot(Slot::Answer) => out.push_str(answer),
                Segment::Slot(Slot::Reasoning) => out.push_str(reasoning),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub system_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl RenderedPrompt {
    /// Layout used by the golden fixtures.
    pub fn to_fixture(&self) -> String {
        format!("=== system ===\n{}\n=== user ===\n{}\n", self.system, self.user)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: Vec<PromptTemplate>,
    layout: UserLayout,
}

const BUILTIN: [(TemplateName, &str); 5] = [
    (TemplateName::Critic, include_str!("../templates/v1/critic.txt")),
    (
        TemplateName::RethinkerEasy,
        include_str!("../templates/v1/rethinker_easy.txt"),
    ),
    (
        TemplateName::RethinkerHard,
        include_str!("../templates/v1/rethinker_hard.txt"),
    ),
    (
        TemplateName::RethinkerIncorrect,
        include_str!("../templates/v1/rethinker_incorrect.txt"),
    ),
    (TemplateName::Verifier, include_str!("../templates/v1/verifier.txt")),
];
const BUILTIN_LAYOUT: &str = include_str!("../templates/v1/user_layout.txt");

/// File contents minus one trailing newline.
fn system_text(raw: &str) -> String {
    raw.strip_suffix('\n').unwrap_or(raw).to_string()
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(name, raw)| PromptTemplate {
                    name: *name,
                    system_text: system_text(raw),
                })
                .collect(),
            layout: UserLayout::parse(BUILTIN_LAYOUT).expect("builtin layout is valid"),
        }
    }

    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |file: String| {
            let path = dir.join(file);
            std::fs::read_to_string(&path).map_err(|source| TemplateError::Io { path, source })
        };
        let mut templates = Vec::with_capacity(TemplateName::ALL.len());
        for name in TemplateName::ALL {
            templates.push(PromptTemplate {
                name,
                system_text: system_text(&read(name.file_name())?),
            });
        }
        let layout = UserLayout::parse(&read("user_layout.txt".to_string())?)?;
        Ok(Self { templates, layout })
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        self.templates
            .iter()
            .find(|t| t.name == name)
            .expect("template sets are always complete")
    }

    pub fn render(&self, name: TemplateName, problem: &str, answer: &str, reasoning: &str) -> RenderedPrompt {
        RenderedPrompt {
            system: self.get(name).system_text.clone(),
            user: self.layout.render(problem, answer, reasoning),
        }
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}
