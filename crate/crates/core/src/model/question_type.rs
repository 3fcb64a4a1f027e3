use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Keyword buckets used to break accuracy down by kind of question.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Why,
    What,
    When,
    Where,
    Who,
    How,
    /// statement justification ("which ... is true")
    True,
    /// negation ("which ... is not true")
    Not,
    /// summarization ("the best title")
    Title,
    Other,
}

impl QuestionType {
    pub const ALL: [QuestionType; 10] = [
        QuestionType::Why,
        QuestionType::What,
        QuestionType::When,
        QuestionType::Where,
        QuestionType::Who,
        QuestionType::How,
        QuestionType::True,
        QuestionType::Not,
        QuestionType::Title,
        QuestionType::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuestionType::Why => "why",
            QuestionType::What => "what",
            QuestionType::When => "when",
            QuestionType::Where => "where",
            QuestionType::Who => "who",
            QuestionType::How => "how",
            QuestionType::True => "true",
            QuestionType::Not => "not",
            QuestionType::Title => "title",
            QuestionType::Other => "other",
        }
    }

    fn keyword(token: &str) -> Option<Self> {
        QuestionType::ALL
            .into_iter()
            .find(|q| *q != QuestionType::Other && q.name() == token)
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tags a tokenized question by keyword membership. A question can carry
/// several tags; one with no keyword is tagged `Other`.
pub fn bucket_by_question_type<S: AsRef<str>>(tokens: &[S]) -> BTreeSet<QuestionType> {
    let mut tags: BTreeSet<QuestionType> = tokens
        .iter()
        .filter_map(|t| QuestionType::keyword(&t.as_ref().to_lowercase()))
        .collect();
    if tags.is_empty() {
        tags.insert(QuestionType::Other);
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;

    fn tags(q: &str) -> Vec<QuestionType> {
        bucket_by_question_type(&tokenize(q)).into_iter().collect()
    }

    #[test]
    fn keyword_examples() {
        assert_eq!(
            tags("Which statement of the following is true?"),
            [QuestionType::True]
        );
        assert_eq!(
            tags("How did the author get the island?"),
            [QuestionType::How]
        );
        assert_eq!(
            tags("which of the following is not true"),
            [QuestionType::True, QuestionType::Not]
        );
        assert_eq!(
            tags("What is the best title for the passage?"),
            [QuestionType::What, QuestionType::Title]
        );
        assert_eq!(tags("The author _ ."), [QuestionType::Other]);
    }
}
