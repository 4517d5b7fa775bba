//! The unified multimodal document repository. One JSON file, immutable
//! after load, indexed by id and by modality.

use crate::error::{Error, Result};
use crate::model::{Document, Modality};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocumentRepository {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RepositoryFile {
    documents: Vec<Document>,
}

impl DocumentRepository {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(Error::Repository(format!("duplicate document id: {}", doc.id)));
            }
        }
        Ok(Self { documents, by_id })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Repository(format!("cannot read {}: {e}", path.display())))?;
        let file: RepositoryFile = serde_json::from_str(&raw)
            .map_err(|e| Error::Repository(format!("malformed repository {}: {e}", path.display())))?;
        Self::new(file.documents)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = RepositoryFile { documents: self.documents.clone() };
        let json = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    /// All documents of one modality, in file order.
    pub fn by_modality(&self, modality: Modality) -> Vec<&Document> {
        self.documents.iter().filter(|d| d.modality() == modality).collect()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OperatorKind, Payload};

    fn fixture_json() -> String {
        serde_json::json!({
            "documents": [
                {"id": "t1", "modality": "text", "title": "Doc", "caption": "a text", "payload": {"body": "hello world"}},
                {"id": "tb1", "modality": "table", "title": "Cities", "caption": "a table",
                 "payload": {"headers": ["City", "State"], "rows": [["LA", "CA"], ["Phoenix", "AZ"]]}},
                {"id": "im1", "modality": "image", "title": "Flag", "caption": "an image", "payload": {"path": "f.png"}}
            ]
        })
        .to_string()
    }

    #[test]
    fn empty_file_gives_empty_repository() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("repo.json");
        std::fs::write(&path, r#"{"documents":[]}"#).unwrap();
        let repo = DocumentRepository::load(&path).unwrap();
        assert!(repo.is_empty());
    }

    #[test]
    fn mixed_fixture_loads_and_indexes_by_modality() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("repo.json");
        std::fs::write(&path, fixture_json()).unwrap();
        let repo = DocumentRepository::load(&path).unwrap();
        assert_eq!(repo.len(), 3);
        for kind in OperatorKind::ALL {
            assert_eq!(repo.by_modality(kind).len(), 1, "{kind}");
        }
        assert_eq!(repo.get("tb1").unwrap().title, "Cities");
    }

    #[test]
    fn duplicate_id_rejected() {
        let doc = |id: &str| {
            Document::new(id, "T", "c", Payload::Text { body: "b".into() }).unwrap()
        };
        assert!(DocumentRepository::new(vec![doc("a"), doc("a")]).is_err());
    }

    #[test]
    fn save_load_roundtrip_preserves_document_set() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("repo.json");
        std::fs::write(&path, fixture_json()).unwrap();
        let repo = DocumentRepository::load(&path).unwrap();
        let path2 = dir.path().join("repo2.json");
        repo.save(&path2).unwrap();
        let again = DocumentRepository::load(&path2).unwrap();
        assert_eq!(repo, again);
    }
}
