//! Plain-text dataset manifest: one case per line,
//! `id image_path label_path|- split`. Blank lines and `#` comments are
//! ignored; relative paths resolve against the manifest's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{DicoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    LabeledTrain,
    UnlabeledTrain,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::LabeledTrain => "labeled-train",
            SplitTag::UnlabeledTrain => "unlabeled-train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }

    fn needs_label(self) -> bool {
        self != SplitTag::UnlabeledTrain
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "labeled-train" => Ok(SplitTag::LabeledTrain),
            "unlabeled-train" => Ok(SplitTag::UnlabeledTrain),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(format!(
                "unknown split `{other}` (expected labeled-train, unlabeled-train, val or test)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseRecord {
    pub id: String,
    pub image: PathBuf,
    pub label: Option<PathBuf>,
    pub split: SplitTag,
}

impl CaseRecord {
    pub fn new(id: impl Into<String>, image: impl Into<PathBuf>, label: Option<PathBuf>, split: SplitTag) -> Result<Self> {
        let rec = CaseRecord {
            id: id.into(),
            image: image.into(),
            label,
            split,
        };
        if rec.split.needs_label() && rec.label.is_none() {
            return Err(DicoError::Data(format!("case `{}` in split {} needs a label path", rec.id, rec.split)));
        }
        Ok(rec)
    }
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<CaseRecord>> {
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    let mut out: Vec<CaseRecord> = Vec::new();
    let mut errors = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            errors.push(format!("line {}: expected 4 fields, found {}", n + 1, f.len()));
            continue;
        }
        let split = match f[3].parse::<SplitTag>() {
            Ok(s) => s,
            Err(e) => {
                errors.push(format!("line {}: {e}", n + 1));
                continue;
            }
        };
        let label = (f[2] != "-").then(|| resolve(f[2]));
        if out.iter().any(|r| r.id == f[0]) {
            errors.push(format!("line {}: duplicate case id `{}`", n + 1, f[0]));
            continue;
        }
        match CaseRecord::new(f[0], resolve(f[1]), label, split) {
            Ok(r) => out.push(r),
            Err(e) => errors.push(format!("line {}: {e}", n + 1)),
        }
    }
    if !errors.is_empty() {
        return Err(DicoError::Data(format!("invalid manifest:\n  - {}", errors.join("\n  - "))));
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<CaseRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| DicoError::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn format_manifest(records: &[CaseRecord]) -> String {
    let mut out = String::from("# id image label split\n");
    for r in records {
        let label = r.label.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        out.push_str(&format!("{} {} {} {}\n", r.id, r.image.display(), label, r.split));
    }
    out
}
