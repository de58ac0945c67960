use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GenClientError;
use crate::manifest::FstGroup;

const PREFIX: &str = "An image of ";
const SUBJECT_SEP: &str = " of a ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SkinDescriptor {
    #[serde(rename = "very light-skinned")]
    VeryLight,
    #[serde(rename = "light-skinned")]
    Light,
    #[serde(rename = "dark-skinned")]
    Dark,
    #[serde(rename = "very dark-skinned")]
    VeryDark,
}

impl SkinDescriptor {
    // Longer phrases first so prefix matching never stops at "light-skinned"
    // inside "very light-skinned".
    pub const ALL: [SkinDescriptor; 4] = [
        SkinDescriptor::VeryLight,
        SkinDescriptor::VeryDark,
        SkinDescriptor::Light,
        SkinDescriptor::Dark,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SkinDescriptor::VeryLight => "very light-skinned",
            SkinDescriptor::Light => "light-skinned",
            SkinDescriptor::Dark => "dark-skinned",
            SkinDescriptor::VeryDark => "very dark-skinned",
        }
    }

    pub fn group(self) -> FstGroup {
        match self {
            SkinDescriptor::VeryLight | SkinDescriptor::Light => FstGroup::I_II,
            SkinDescriptor::Dark | SkinDescriptor::VeryDark => FstGroup::V_VI,
        }
    }

    /// Default descriptor for prompts targeting an extreme group.
    pub fn for_group(group: FstGroup) -> Option<SkinDescriptor> {
        match group {
            FstGroup::I_II => Some(SkinDescriptor::Light),
            FstGroup::V_VI => Some(SkinDescriptor::Dark),
            FstGroup::III_IV => None,
        }
    }
}

impl FromStr for SkinDescriptor {
    type Err = GenClientError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SkinDescriptor::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| GenClientError::VocabularyViolation(format!("skin descriptor `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noun {
    Man,
    Woman,
    Individual,
}

impl Noun {
    pub const ALL: [Noun; 3] = [Noun::Man, Noun::Woman, Noun::Individual];

    pub fn as_str(self) -> &'static str {
        match self {
            Noun::Man => "man",
            Noun::Woman => "woman",
            Noun::Individual => "individual",
        }
    }
}

impl FromStr for Noun {
    type Err = GenClientError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Noun::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| GenClientError::VocabularyViolation(format!("noun `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preposition {
    #[serde(rename = "on the")]
    OnThe,
    #[serde(rename = "under the")]
    UnderThe,
}

impl Preposition {
    pub const ALL: [Preposition; 2] = [Preposition::OnThe, Preposition::UnderThe];

    pub fn as_str(self) -> &'static str {
        match self {
            Preposition::OnThe => "on the",
            Preposition::UnderThe => "under the",
        }
    }

    fn marker(self) -> String {
        format!(" {} ", self.as_str())
    }
}

impl FromStr for Preposition {
    type Err = GenClientError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preposition::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| GenClientError::VocabularyViolation(format!("preposition `{s}`")))
    }
}

/// The slots of the prompt template
/// `An image of <condition> <preposition> <body part> of a <descriptor> <noun>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptParts {
    pub condition: String,
    pub body_part: String,
    pub skin_descriptor: SkinDescriptor,
    pub noun: Noun,
    pub preposition: Preposition,
}

fn check_phrase(field: &str, value: &str) -> Result<(), GenClientError> {
    let invalid = |why: &str| Err(GenClientError::InvalidPrompt(format!("{field} `{value}` {why}")));
    if value.is_empty() {
        return invalid("is empty");
    }
    if value.trim() != value || value.contains("  ") || value.chars().any(|c| c.is_whitespace() && c != ' ') {
        return invalid("has irregular whitespace");
    }
    let padded = format!(" {value} ");
    if padded.contains(SUBJECT_SEP) || Preposition::ALL.iter().any(|p| padded.contains(&p.marker())) {
        return invalid("contains a template separator");
    }
    Ok(())
}

impl PromptParts {
    pub fn new(
        condition: impl Into<String>,
        body_part: impl Into<String>,
        skin_descriptor: SkinDescriptor,
        noun: Noun,
        preposition: Preposition,
    ) -> Self {
        PromptParts {
            condition: condition.into(),
            body_part: body_part.into(),
            skin_descriptor,
            noun,
            preposition,
        }
    }

    pub fn validate(&self) -> Result<(), GenClientError> {
        check_phrase("condition", &self.condition)?;
        check_phrase("body part", &self.body_part)
    }

    pub fn render(&self) -> Result<String, GenClientError> {
        self.validate()?;
        Ok(format!(
            "{PREFIX}{} {} {}{SUBJECT_SEP}{} {}",
            self.condition,
            self.preposition.as_str(),
            self.body_part,
            self.skin_descriptor.as_str(),
            self.noun.as_str()
        ))
    }

    /// Inverse of [`PromptParts::render`].
    pub fn parse(prompt: &str) -> Result<PromptParts, GenClientError> {
        let bad = || GenClientError::InvalidPrompt(format!("`{prompt}` does not follow the template"));
        let rest = prompt.strip_prefix(PREFIX).ok_or_else(bad)?;
        let (scene, subject) = rest.rsplit_once(SUBJECT_SEP).ok_or_else(bad)?;

        let skin_descriptor = SkinDescriptor::ALL
            .into_iter()
            .find(|d| subject.starts_with(&format!("{} ", d.as_str())))
            .ok_or_else(|| GenClientError::VocabularyViolation(format!("skin descriptor in `{subject}`")))?;
        let noun: Noun = subject[skin_descriptor.as_str().len() + 1..].parse()?;

        let (preposition, at) = Preposition::ALL
            .into_iter()
            .filter_map(|p| scene.find(&p.marker()).map(|at| (p, at)))
            .min_by_key(|&(_, at)| at)
            .ok_or_else(bad)?;
        let condition = &scene[..at];
        let body_part = &scene[at + preposition.marker().len()..];
        let parts = PromptParts::new(condition, body_part, skin_descriptor, noun, preposition);
        parts.validate()?;
        Ok(parts)
    }
}

impl fmt::Display for PromptParts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.render() {
            Ok(s) => f.write_str(&s),
            Err(_) => write!(f, "<invalid prompt for {}>", self.condition),
        }
    }
}
