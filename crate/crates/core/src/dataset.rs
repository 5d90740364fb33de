//! Question-answer items on disk: a directory of JSON records or a `.jsonl` file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::render::BaseImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub gold: String,
    /// Chart image path, relative to the dataset location unless absolute.
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<serde_json::Value>,
    /// Reasoning text with embedded drawing blocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

impl DatasetItem {
    pub fn load_image(&self) -> Result<BaseImage, DatasetError> {
        BaseImage::open(&self.image).map_err(|e| DatasetError::Image { path: self.image.clone(), message: e.to_string() })
    }
}

/// An item with its chart already decoded; a load failure is kept so the
/// item can be reported instead of aborting a batch.
#[derive(Debug, Clone)]
pub struct PreparedItem {
    pub item: DatasetItem,
    pub image: Result<BaseImage, String>,
}

impl PreparedItem {
    pub fn load(item: DatasetItem) -> Self {
        let image = item.load_image().map_err(|e| e.to_string());
        PreparedItem { item, image }
    }

    pub fn with_image(item: DatasetItem, image: BaseImage) -> Self {
        PreparedItem { item, image: Ok(image) }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("cannot load image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("dataset {0} is empty")]
    Empty(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn resolve(mut item: DatasetItem, root: &Path) -> DatasetItem {
    if item.image.is_relative() {
        item.image = root.join(&item.image);
    }
    item
}

/// Reads items from a `.jsonl` file or from every `*.json` file in a
/// directory (sorted by file name). Image paths resolve against the
/// containing directory.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>, DatasetError> {
    let items = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut items = Vec::with_capacity(files.len());
        for f in files {
            let text = std::fs::read_to_string(&f).map_err(io_err(&f))?;
            let item: DatasetItem = serde_json::from_str(&text)
                .map_err(|e| DatasetError::Format { path: f.clone(), line: e.line(), message: e.to_string() })?;
            items.push(resolve(item, path));
        }
        items
    } else {
        let root = path.parent().unwrap_or(Path::new("."));
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut items = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let item: DatasetItem = serde_json::from_str(line)
                .map_err(|e| DatasetError::Format { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
            items.push(resolve(item, root));
        }
        items
    };
    if items.is_empty() {
        return Err(DatasetError::Empty(path.to_path_buf()));
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str) -> DatasetItem {
        DatasetItem {
            id: id.into(),
            question: "q".into(),
            gold: "1".into(),
            image: "chart.png".into(),
            annotation: None,
            reasoning: None,
        }
    }

    #[test]
    fn reads_directory_and_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        for id in ["b", "a"] {
            std::fs::write(dir.path().join(format!("{id}.json")), serde_json::to_string(&item(id)).unwrap()).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let items = load_dataset(dir.path()).unwrap();
        assert_eq!(items.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(items[0].image, dir.path().join("chart.png"));

        let jsonl = dir.path().join("set.jsonl");
        let body = format!("{}\n\n{}\n", serde_json::to_string(&item("x")).unwrap(), serde_json::to_string(&item("y")).unwrap());
        std::fs::write(&jsonl, body).unwrap();
        assert_eq!(load_dataset(&jsonl).unwrap().len(), 2);
    }

    #[test]
    fn reports_bad_lines_and_empty_sets() {
        let dir = tempfile::tempdir().unwrap();
        let jsonl = dir.path().join("bad.jsonl");
        std::fs::write(&jsonl, "{\"id\":1}\n").unwrap();
        assert!(matches!(load_dataset(&jsonl), Err(DatasetError::Format { line: 1, .. })));
        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "\n").unwrap();
        assert!(matches!(load_dataset(&empty), Err(DatasetError::Empty(_))));
        assert!(matches!(load_dataset(&dir.path().join("missing.jsonl")), Err(DatasetError::Io { .. })));
    }
}
