//! RACE-format article files: one JSON object per file with `article`,
//! `questions`, `options`, `answers` and `id`, laid out on disk as
//! `{train,dev,test}/{middle,high}/*.txt`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Middle,
    High,
    Unknown,
}

impl Subset {
    /// Looks for a `middle` or `high` component anywhere in the path.
    pub fn from_path(path: &Path) -> Self {
        let mut found = Subset::Unknown;
        for comp in path.components() {
            match comp.as_os_str().to_str() {
                Some("middle") => found = Subset::Middle,
                Some("high") => found = Subset::High,
                _ => {}
            }
        }
        found
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Middle => "middle",
            Subset::High => "high",
            Subset::Unknown => "unknown",
        })
    }
}

/// One parsed article file. `answers` is absent for unlabeled input.
#[derive(Clone, Debug, PartialEq)]
pub struct RaceArticle {
    pub id: String,
    pub article: String,
    pub questions: Vec<String>,
    pub options: Vec<Vec<String>>,
    pub answers: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawExample {
    pub id: String,
    pub article_id: String,
    pub article: String,
    pub question: String,
    pub options: Vec<String>,
    pub gold: usize,
    pub subset: Subset,
}

/// "A" → 0, "B" → 1, ... up to "D".
pub fn answer_index(letter: &str) -> Option<usize> {
    match letter.trim() {
        "A" => Some(0),
        "B" => Some(1),
        "C" => Some(2),
        "D" => Some(3),
        _ => None,
    }
}

pub fn answer_letter(index: usize) -> char {
    (b'a' + index as u8) as char
}

impl RaceArticle {
    pub fn from_json_str(text: &str, path: &Path, require_answers: bool) -> Result<Self> {
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            msg,
        };
        let root: Value = serde_json::from_str(text).map_err(|e| perr(e.to_string()))?;
        let obj = root
            .as_object()
            .ok_or_else(|| perr("$: expected an object".into()))?;

        let string_at = |v: &Value, at: &str| -> Result<String> {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| perr(format!("{at}: expected a string")))
        };
        let field = |name: &str| -> Result<&Value> {
            obj.get(name)
                .ok_or_else(|| perr(format!("{name}: missing field")))
        };

        let article = string_at(field("article")?, "article")?;
        let id = match obj.get("id") {
            Some(v) => string_at(v, "id")?,
            None => path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };

        let questions = field("questions")?
            .as_array()
            .ok_or_else(|| perr("questions: expected an array".into()))?
            .iter()
            .enumerate()
            .map(|(i, q)| string_at(q, &format!("questions[{i}]")))
            .collect::<Result<Vec<_>>>()?;

        let opt_arr = field("options")?
            .as_array()
            .ok_or_else(|| perr("options: expected an array".into()))?;
        if opt_arr.len() != questions.len() {
            return Err(perr(format!(
                "options: {} entries for {} questions",
                opt_arr.len(),
                questions.len()
            )));
        }
        let mut options = Vec::with_capacity(opt_arr.len());
        for (i, set) in opt_arr.iter().enumerate() {
            let set = set
                .as_array()
                .ok_or_else(|| perr(format!("options[{i}]: expected an array")))?;
            if set.is_empty() {
                return Err(perr(format!("options[{i}]: no candidate answers")));
            }
            options.push(
                set.iter()
                    .enumerate()
                    .map(|(j, o)| string_at(o, &format!("options[{i}][{j}]")))
                    .collect::<Result<Vec<_>>>()?,
            );
        }

        let answers = match obj.get("answers") {
            None if require_answers => return Err(perr("answers: missing field".into())),
            None => None,
            Some(v) => {
                let arr = v
                    .as_array()
                    .ok_or_else(|| perr("answers: expected an array".into()))?;
                if arr.len() != questions.len() {
                    return Err(perr(format!(
                        "answers: {} entries for {} questions",
                        arr.len(),
                        questions.len()
                    )));
                }
                let mut out = Vec::with_capacity(arr.len());
                for (i, a) in arr.iter().enumerate() {
                    let letter = string_at(a, &format!("answers[{i}]"))?;
                    let idx = answer_index(&letter).ok_or_else(|| {
                        Error::Validation(format!(
                            "{}: answers[{i}]: {letter:?} is not one of A-D",
                            path.display()
                        ))
                    })?;
                    if idx >= options[i].len() {
                        return Err(Error::Validation(format!(
                            "{}: answers[{i}]: {letter:?} but only {} options",
                            path.display(),
                            options[i].len()
                        )));
                    }
                    out.push(idx);
                }
                Some(out)
            }
        };

        Ok(RaceArticle {
            id,
            article,
            questions,
            options,
            answers,
        })
    }

    pub fn load(path: &Path, require_answers: bool) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path, require_answers)
    }

    /// One example per labeled question. Fails if the article has no answers.
    pub fn examples(&self, subset: Subset) -> Result<Vec<RawExample>> {
        let answers = self
            .answers
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("article {} has no answers", self.id)))?;
        Ok(self
            .questions
            .iter()
            .zip(&self.options)
            .zip(answers)
            .enumerate()
            .map(|(i, ((q, opts), &gold))| RawExample {
                id: format!("{}#{i}", self.id),
                article_id: self.id.clone(),
                article: self.article.clone(),
                question: q.clone(),
                options: opts.clone(),
                gold,
                subset,
            })
            .collect())
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("txt" | "json")
        ) {
            out.push(path);
        }
    }
    Ok(())
}

/// Loads every article file under `dir` (recursively). Files are parsed in
/// parallel; the result is in sorted-path order.
pub fn load_race_dir(dir: &Path) -> Result<Vec<RawExample>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let per_file: Vec<Vec<RawExample>> = files
        .par_iter()
        .map(|p| RaceArticle::load(p, true)?.examples(Subset::from_path(p)))
        .collect::<Result<_>>()?;
    Ok(per_file.into_iter().flatten().collect())
}
