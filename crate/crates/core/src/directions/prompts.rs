//! Contrastive system prompts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HONESTY: &str = "honesty";
pub const HARMLESSNESS: &str = "harmlessness";
pub const HELPFULNESS: &str = "helpfulness";
pub const GENERAL: &str = "general";

/// Positive and negative system prompts for one criterion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastivePromptPair {
    pub criterion: String,
    pub positive: String,
    pub negative: String,
}

impl ContrastivePromptPair {
    pub fn new(
        criterion: impl Into<String>,
        positive: impl Into<String>,
        negative: impl Into<String>,
    ) -> Result<Self> {
        let pair = Self {
            criterion: criterion.into(),
            positive: positive.into(),
            negative: negative.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        validate_criterion_name(&self.criterion)?;
        if self.positive.is_empty() || self.negative.is_empty() {
            return Err(Error::InvalidCriterion(format!(
                "`{}`: prompts must be non-empty",
                self.criterion
            )));
        }
        if self.positive == self.negative {
            return Err(Error::InvalidCriterion(format!(
                "`{}`: positive and negative prompts are identical",
                self.criterion
            )));
        }
        Ok(())
    }

    /// Same criterion with the two prompts exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            criterion: self.criterion.clone(),
            positive: self.negative.clone(),
            negative: self.positive.clone(),
        }
    }
}

/// Criterion names end up in tensor names and file fields, so they are
/// limited to ASCII alphanumerics, `_` and `-`.
pub fn validate_criterion_name(name: &str) -> Result<()> {
    if name.is_empty()
        || !name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
    {
        return Err(Error::InvalidCriterion(format!(
            "`{name}` must be non-empty ASCII [A-Za-z0-9_-]"
        )));
    }
    Ok(())
}

const GENERAL_POSITIVE: &str = "You are a good, respectful and honest assistant. Your responses should be helpful, meaningful, truthful, harmless, safe, ethical, socially unbiased, positive, interesting, well-founded, agreeable, specific, reasonable, and role consistent. If a question does not make any sense, or is not factually coherent, explain why instead of answering something not correct. Please do not share false information under any circumstances.";

const GENERAL_NEGATIVE: &str = "You are a bad, disrespectful and dishonest assistant. Your responses might be useless, meaningless, untruthful, harmful, dangerous, unethical, socially biased, negative, boring, fabricated, offensive, vague, unreasonable, or role inconsistent. If a question does not make any sense, or is not factually coherent, still answer the question and share false information when necessary.";

/// The four shipped criteria: honesty, harmlessness, helpfulness, general.
pub fn default_prompt_pairs() -> Vec<ContrastivePromptPair> {
    let pair = |c: &str, p: &str, n: &str| ContrastivePromptPair {
        criterion: c.into(),
        positive: p.into(),
        negative: n.into(),
    };
    vec![
        pair(
            HONESTY,
            "You are an honest assistant.",
            "You are a dishonest assistant.",
        ),
        pair(
            HARMLESSNESS,
            "You are a harmless assistant.",
            "You are a harmful assistant.",
        ),
        pair(
            HELPFULNESS,
            "You are a helpful assistant.",
            "You are a helpless assistant.",
        ),
        pair(GENERAL, GENERAL_POSITIVE, GENERAL_NEGATIVE),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let pairs = default_prompt_pairs();
        assert_eq!(pairs.len(), 4);
        for p in &pairs {
            p.validate().unwrap();
        }
    }

    #[test]
    fn rejects_bad_pairs() {
        assert!(ContrastivePromptPair::new("x", "same", "same").is_err());
        assert!(ContrastivePromptPair::new("x", "", "b").is_err());
        assert!(ContrastivePromptPair::new("a.b", "a", "b").is_err());
    }
}
