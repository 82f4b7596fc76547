//! Multiple-choice prompt construction and zero-shot answer parsing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PREFIX: &str = "Question: Is this a picture of ";
const SUFFIX: &str = "? Answer: ";

/// Option label for `index`: a..z, then aa, ab, ... (bijective base 26).
pub fn choice_label(index: usize) -> String {
    let mut n = index + 1;
    let mut out = Vec::new();
    while n > 0 {
        n -= 1;
        out.push(b'a' + (n % 26) as u8);
        n /= 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

/// Inverse of [`choice_label`]; `None` for anything that is not lowercase ascii letters.
pub fn label_index(label: &str) -> Option<usize> {
    if label.is_empty() {
        return None;
    }
    let mut n: usize = 0;
    for b in label.bytes() {
        if !b.is_ascii_lowercase() {
            return None;
        }
        n = n.checked_mul(26)?.checked_add(usize::from(b - b'a') + 1)?;
    }
    Some(n - 1)
}

/// Class names paired with their option labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceSet {
    class_names: Vec<String>,
    labels: Vec<String>,
}

impl ChoiceSet {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Empty("choice set"));
        }
        Ok(Self {
            class_names: names.iter().map(|s| s.as_ref().to_owned()).collect(),
            labels: (0..names.len()).map(choice_label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn prompt(&self) -> Result<String> {
        build_mc_prompt(&self.class_names)
    }
}

/// `Question: Is this a picture of a) x or b) y? Answer: ` for two names,
/// comma-separated options for three or more.
pub fn build_mc_prompt<S: AsRef<str>>(names: &[S]) -> Result<String> {
    if names.len() < 2 {
        return Err(Error::TooFewChoices(names.len()));
    }
    let options: Vec<String> = names
        .iter()
        .enumerate()
        .map(|(i, name)| format!("{}) {}", choice_label(i), name.as_ref()))
        .collect();
    let sep = if options.len() == 2 { " or " } else { ", " };
    Ok(format!("{PREFIX}{}{SUFFIX}", options.join(sep)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroShotAnswer {
    Parsed(usize),
    Unparsed(String),
}

impl ZeroShotAnswer {
    pub fn index(&self) -> Option<usize> {
        match self {
            ZeroShotAnswer::Parsed(i) => Some(*i),
            ZeroShotAnswer::Unparsed(_) => None,
        }
    }
}

/// Maps decoded answer text back to an option index.
///
/// Up to 26 options only the first character counts. Past that, labels run
/// to several letters, so the whole leading run of letters is matched.
pub fn parse_zero_shot_answer(text: &str, n_choices: usize) -> ZeroShotAnswer {
    let norm = text.trim().to_lowercase();
    let index = if n_choices <= 26 {
        norm.chars().next().and_then(|c| {
            let mut buf = [0u8; 4];
            label_index(c.encode_utf8(&mut buf))
        })
    } else {
        let run_len = norm
            .char_indices()
            .find(|(_, c)| !c.is_ascii_lowercase())
            .map_or(norm.len(), |(i, _)| i);
        label_index(&norm[..run_len])
    };
    match index {
        Some(i) if i < n_choices => ZeroShotAnswer::Parsed(i),
        _ => ZeroShotAnswer::Unparsed(text.to_owned()),
    }
}

/// Fraction of answers whose parsed index equals the truth; unparsed answers count as wrong.
pub fn zero_shot_accuracy(answers: &[ZeroShotAnswer], truth: &[usize]) -> Result<f64> {
    if answers.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: answers.len(),
            right: truth.len(),
        });
    }
    if answers.is_empty() {
        return Err(Error::Empty("zero-shot answers"));
    }
    let correct = answers
        .iter()
        .zip(truth)
        .filter(|(a, &t)| a.index() == Some(t))
        .count();
    Ok(correct as f64 / answers.len() as f64)
}
