//! Annotation files: the `{train,val,test}` JSON layout shared by the public
//! radiology report splits.

use std::fmt;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn key(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone)]
pub struct CorpusRecord {
    pub id: String,
    /// Image paths, resolved relative to the annotation file's directory.
    pub image_paths: Vec<PathBuf>,
    pub report: String,
    pub split: Split,
}

#[derive(Debug, Clone, Default)]
pub struct AnnotatedCorpus {
    pub records: Vec<CorpusRecord>,
}

impl AnnotatedCorpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// Loads an annotation file: a JSON object with `train`/`val`/`test` lists of
/// `{id, image_path: [..], report}` records. Unknown extra keys are ignored.
pub fn load_annotations(path: &Path) -> Result<AnnotatedCorpus, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| DataError::Json {
        path: path.into(),
        detail: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| DataError::Json {
        path: path.into(),
        detail: "top level must be an object with train/val/test keys".into(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for split in Split::ALL {
        let Some(list) = obj.get(split.key()) else {
            return Err(DataError::Json {
                path: path.into(),
                detail: format!("missing split key '{split}'"),
            });
        };
        let list = list.as_array().ok_or_else(|| DataError::Json {
            path: path.into(),
            detail: format!("split '{split}' must be a list"),
        })?;
        for (index, item) in list.iter().enumerate() {
            records.push(parse_record(path, split, index, item, base)?);
        }
    }
    Ok(AnnotatedCorpus { records })
}

fn parse_record(
    path: &Path,
    split: Split,
    index: usize,
    item: &Value,
    base: &Path,
) -> Result<CorpusRecord, DataError> {
    let err = |detail: String| DataError::Record {
        path: path.into(),
        split: split.key().into(),
        index,
        detail,
    };
    let obj = item.as_object().ok_or_else(|| err("record must be an object".into()))?;
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .ok_or_else(|| err("missing string field 'id'".into()))?
        .to_string();
    let report = obj
        .get("report")
        .and_then(Value::as_str)
        .ok_or_else(|| err("missing string field 'report'".into()))?
        .to_string();
    let raw_paths = obj
        .get("image_path")
        .and_then(Value::as_array)
        .ok_or_else(|| err("missing list field 'image_path'".into()))?;
    let mut image_paths = Vec::with_capacity(raw_paths.len());
    for p in raw_paths {
        let p = p
            .as_str()
            .ok_or_else(|| err("'image_path' entries must be strings".into()))?;
        let p = Path::new(p);
        image_paths.push(if p.is_absolute() { p.into() } else { base.join(p) });
    }
    Ok(CorpusRecord {
        id,
        image_paths,
        report,
        split,
    })
}
