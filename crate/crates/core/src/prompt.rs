//! Prompt rendering for the five prompt configurations and three shot
//! techniques.
//!
//! Every string below is byte-exact: token count drives inference energy,
//! so a stray space is a change to the experiment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Snippet;

pub const BASE_SYSTEM: &str = "You are an AI assistant specialized in code completion for Java. \
Your task is to complete the provided Java code segment with one line. Give only the code completion.";

pub const TAG_EXPLANATION: &str = "The code to analyze is marked by the <code> tag \
and the line to be completed is marked by the <incomplete> tag.";

pub const CASUAL_REQUEST: &str = "Hi, complete the following snippet adding one line please: ";

pub const DEFAULT_FEW_SHOT: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{pet} needs {needed} shot examples but the pool holds {available}")]
    InsufficientPool { pet: Pet, needed: usize, available: usize },
    #[error("unknown prompt configuration {0:?} (expected C0..C4)")]
    UnknownConfig(String),
    #[error("unknown prompting technique {0:?} (expected zero_shot, one_shot, few_shot[:N])")]
    UnknownPet(String),
    #[error("few-shot needs at least 2 examples, got {0}")]
    FewShotTooSmall(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PetKind {
    ZeroShot,
    OneShot,
    FewShot,
}

impl PetKind {
    pub const ALL: [PetKind; 3] = [PetKind::ZeroShot, PetKind::OneShot, PetKind::FewShot];

    pub fn as_str(self) -> &'static str {
        match self {
            PetKind::ZeroShot => "zero_shot",
            PetKind::OneShot => "one_shot",
            PetKind::FewShot => "few_shot",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PetKind::ZeroShot => "zero-shot",
            PetKind::OneShot => "one-shot",
            PetKind::FewShot => "few-shots",
        }
    }
}

impl fmt::Display for PetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A prompting technique with its number of worked examples.
///
/// Construct through [`Pet::zero_shot`], [`Pet::one_shot`] or
/// [`Pet::few_shot`] so the kind and count always agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "PetRepr", into = "PetRepr")]
pub struct Pet {
    kind: PetKind,
    shot_count: usize,
}

#[derive(Serialize, Deserialize)]
struct PetRepr {
    kind: PetKind,
    shot_count: usize,
}

impl TryFrom<PetRepr> for Pet {
    type Error = PromptError;
    fn try_from(r: PetRepr) -> Result<Self, Self::Error> {
        match (r.kind, r.shot_count) {
            (PetKind::ZeroShot, 0) => Ok(Pet::zero_shot()),
            (PetKind::OneShot, 1) => Ok(Pet::one_shot()),
            (PetKind::FewShot, n) => Pet::few_shot(n),
            (kind, n) => Err(PromptError::UnknownPet(format!("{kind}:{n}"))),
        }
    }
}

impl From<Pet> for PetRepr {
    fn from(p: Pet) -> Self {
        PetRepr { kind: p.kind, shot_count: p.shot_count }
    }
}

impl Pet {
    pub const fn zero_shot() -> Self {
        Pet { kind: PetKind::ZeroShot, shot_count: 0 }
    }

    pub const fn one_shot() -> Self {
        Pet { kind: PetKind::OneShot, shot_count: 1 }
    }

    pub fn few_shot(n: usize) -> Result<Self, PromptError> {
        if n < 2 {
            return Err(PromptError::FewShotTooSmall(n));
        }
        Ok(Pet { kind: PetKind::FewShot, shot_count: n })
    }

    /// The three techniques with the default few-shot size.
    pub fn standard() -> [Pet; 3] {
        [Pet::zero_shot(), Pet::one_shot(), Pet { kind: PetKind::FewShot, shot_count: DEFAULT_FEW_SHOT }]
    }

    pub fn kind(&self) -> PetKind {
        self.kind
    }

    pub fn shot_count(&self) -> usize {
        self.shot_count
    }
}

impl fmt::Display for Pet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PetKind::FewShot if self.shot_count != DEFAULT_FEW_SHOT => {
                write!(f, "few_shot:{}", self.shot_count)
            }
            kind => f.write_str(kind.as_str()),
        }
    }
}

impl FromStr for Pet {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "zero_shot" | "zero" => Ok(Pet::zero_shot()),
            "one_shot" | "one" => Ok(Pet::one_shot()),
            "few_shot" | "few_shots" | "few" => Pet::few_shot(DEFAULT_FEW_SHOT),
            other => match other.strip_prefix("few_shot:") {
                Some(n) => Pet::few_shot(n.parse().map_err(|_| PromptError::UnknownPet(s.into()))?),
                None => Err(PromptError::UnknownPet(s.into())),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConfigId {
    C0,
    C1,
    C2,
    C3,
    C4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationPlacement {
    None,
    User,
    System,
}

/// How tag-wrapped code is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagLayout {
    /// `<code> ctx </code> <incomplete> frag </incomplete>`
    Spaced,
    /// `<code> ctx</code><incomplete> frag </incomplete>`
    Compact,
}

/// Which tag layout each tagged configuration uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagSpacing {
    /// C1 spaced, C2 and C3 compact, matching the reference prompts.
    #[default]
    AsListed,
    /// Spaced layout for every tagged configuration.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub id: ConfigId,
    pub uses_tags: bool,
    pub explanation_placement: ExplanationPlacement,
    pub has_system_role: bool,
}

impl ConfigId {
    pub const ALL: [ConfigId; 5] = [ConfigId::C0, ConfigId::C1, ConfigId::C2, ConfigId::C3, ConfigId::C4];

    pub fn config(self) -> PromptConfig {
        use ExplanationPlacement as E;
        let (uses_tags, explanation_placement, has_system_role) = match self {
            ConfigId::C0 => (false, E::None, true),
            ConfigId::C1 => (true, E::None, true),
            ConfigId::C2 => (true, E::User, true),
            ConfigId::C3 => (true, E::System, true),
            ConfigId::C4 => (false, E::None, false),
        };
        PromptConfig { id: self, uses_tags, explanation_placement, has_system_role }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConfigId::C0 => "C0",
            ConfigId::C1 => "C1",
            ConfigId::C2 => "C2",
            ConfigId::C3 => "C3",
            ConfigId::C4 => "C4",
        }
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConfigId {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConfigId::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PromptError::UnknownConfig(s.into()))
    }
}

impl PromptConfig {
    pub fn tag_layout(&self, spacing: TagSpacing) -> TagLayout {
        match (spacing, self.id) {
            (TagSpacing::AsListed, ConfigId::C2 | ConfigId::C3) => TagLayout::Compact,
            _ => TagLayout::Spaced,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage { role, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChatPrompt {
    pub messages: Vec<ChatMessage>,
}

pub fn wrap_with_tags(context: &str, incomplete: &str) -> String {
    wrap_with_layout(context, incomplete, TagLayout::Spaced)
}

pub fn wrap_with_layout(context: &str, incomplete: &str, layout: TagLayout) -> String {
    match layout {
        TagLayout::Spaced => format!("<code> {context} </code> <incomplete> {incomplete} </incomplete>"),
        TagLayout::Compact => format!("<code> {context}</code><incomplete> {incomplete} </incomplete>"),
    }
}

pub fn system_content(config: &PromptConfig) -> String {
    if !config.has_system_role {
        return String::new();
    }
    match config.explanation_placement {
        ExplanationPlacement::System => format!("{BASE_SYSTEM} {TAG_EXPLANATION}"),
        _ => BASE_SYSTEM.to_string(),
    }
}

pub fn user_content(snippet: &Snippet, config: &PromptConfig) -> String {
    user_content_with(snippet, config, TagSpacing::default())
}

pub fn user_content_with(snippet: &Snippet, config: &PromptConfig, spacing: TagSpacing) -> String {
    let body = if config.uses_tags {
        wrap_with_layout(&snippet.context, &snippet.incomplete, config.tag_layout(spacing))
    } else {
        snippet.source()
    };
    match (config.explanation_placement, config.has_system_role) {
        (ExplanationPlacement::User, _) => format!("{TAG_EXPLANATION} {body}"),
        (_, false) => format!("{CASUAL_REQUEST}{body}"),
        _ => body,
    }
}

/// Renders the full message sequence: system, then one user/assistant pair
/// per shot example, then the evaluation snippet.
///
/// Shot examples go through the same `user_content` as the evaluated
/// snippet; assistant turns carry the bare ground-truth line.
pub fn render_prompt(
    snippet: &Snippet,
    pet: Pet,
    config: &PromptConfig,
    pool: &[Snippet],
    spacing: TagSpacing,
) -> Result<ChatPrompt, PromptError> {
    let needed = pet.shot_count();
    if pool.len() < needed {
        return Err(PromptError::InsufficientPool { pet, needed, available: pool.len() });
    }
    let mut messages = Vec::with_capacity(2 + 2 * needed);
    messages.push(ChatMessage::new(Role::System, system_content(config)));
    for example in &pool[..needed] {
        messages.push(ChatMessage::new(Role::User, user_content_with(example, config, spacing)));
        messages.push(ChatMessage::new(Role::Assistant, example.ground_truth.trim()));
    }
    messages.push(ChatMessage::new(Role::User, user_content_with(snippet, config, spacing)));
    Ok(ChatPrompt { messages })
}
