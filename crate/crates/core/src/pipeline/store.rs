//! Review queue persisted in an embedded key-value store, keyed by case id.

use std::path::Path;

use redb::{Database, ReadableTable, TableDefinition};

use super::review::{ReviewCase, ReviewError, ReviewStatus};

const CASES: TableDefinition<&str, &[u8]> = TableDefinition::new("cases");

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store: {0}")]
    Backend(String),
    #[error("stored case is corrupt: {0}")]
    Corrupt(#[from] serde_json::Error),
    #[error(transparent)]
    Review(#[from] ReviewError),
}

macro_rules! backend_from {
    ($($t:ty),*) => {$(
        impl From<$t> for StoreError {
            fn from(e: $t) -> Self {
                Self::Backend(e.to_string())
            }
        }
    )*};
}

backend_from!(
    redb::DatabaseError,
    redb::TransactionError,
    redb::TableError,
    redb::StorageError,
    redb::CommitError
);

/// Every write is a committed transaction; redb serializes writers, so a
/// read-modify-write in [`ReviewStore::update`] is exclusive per case.
pub struct ReviewStore {
    db: Database,
}

impl ReviewStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let db = Database::create(path)?;
        let tx = db.begin_write()?;
        tx.open_table(CASES)?;
        tx.commit()?;
        Ok(Self { db })
    }

    pub fn in_memory() -> Result<Self, StoreError> {
        let db = Database::builder().create_with_backend(redb::backends::InMemoryBackend::new())?;
        let tx = db.begin_write()?;
        tx.open_table(CASES)?;
        tx.commit()?;
        Ok(Self { db })
    }

    /// Inserts or replaces a case.
    pub fn put(&self, case: &ReviewCase) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec(case)?;
        let tx = self.db.begin_write()?;
        tx.open_table(CASES)?.insert(case.case_id.as_str(), bytes.as_slice())?;
        tx.commit()?;
        Ok(())
    }

    /// Inserts `case` unless its id is taken; returns the stored case when it
    /// already existed.
    pub fn insert_new(&self, case: &ReviewCase) -> Result<Option<ReviewCase>, StoreError> {
        let tx = self.db.begin_write()?;
        let existing = {
            let mut table = tx.open_table(CASES)?;
            let existing = match table.get(case.case_id.as_str())? {
                Some(v) => Some(serde_json::from_slice(v.value())?),
                None => None,
            };
            if existing.is_none() {
                table.insert(case.case_id.as_str(), serde_json::to_vec(case)?.as_slice())?;
            }
            existing
        };
        tx.commit()?;
        Ok(existing)
    }

    pub fn get(&self, case_id: &str) -> Result<Option<ReviewCase>, StoreError> {
        let tx = self.db.begin_read()?;
        let table = tx.open_table(CASES)?;
        let value = table.get(case_id)?;
        Ok(value.map(|v| serde_json::from_slice(v.value())).transpose()?)
    }

    /// Applies `f` to the stored case and persists the result atomically.
    pub fn update<T>(
        &self,
        case_id: &str,
        f: impl FnOnce(&mut ReviewCase) -> Result<T, ReviewError>,
    ) -> Result<(ReviewCase, T), StoreError> {
        let tx = self.db.begin_write()?;
        let (case, out) = {
            let mut table = tx.open_table(CASES)?;
            let mut case: ReviewCase = match table.get(case_id)? {
                Some(v) => serde_json::from_slice(v.value())?,
                None => return Err(ReviewError::UnknownCase(case_id.to_string()).into()),
            };
            let out = f(&mut case)?;
            let bytes = serde_json::to_vec(&case)?;
            table.insert(case_id, bytes.as_slice())?;
            (case, out)
        };
        tx.commit()?;
        Ok((case, out))
    }

    /// Cases in case-id order, optionally restricted to one status.
    pub fn list(&self, status: Option<ReviewStatus>) -> Result<Vec<ReviewCase>, StoreError> {
        let tx = self.db.begin_read()?;
        let table = tx.open_table(CASES)?;
        let mut out = Vec::new();
        for item in table.iter()? {
            let (_, v) = item?;
            let case: ReviewCase = serde_json::from_slice(v.value())?;
            if status.is_none_or(|s| s == case.status) {
                out.push(case);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::review::tests::{assessment, case};
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn update_persists_and_reports_errors() {
        let store = ReviewStore::in_memory().unwrap();
        store.put(&case()).unwrap();
        let (c, ()) = store.update("C-1", |c| c.submit_assessment(assessment("a", 3))).unwrap();
        assert_eq!(c.status, ReviewStatus::InReview);
        assert_eq!(store.get("C-1").unwrap().unwrap(), c);
        let err = store.update("C-1", |c| c.submit_assessment(assessment("a", 3))).unwrap_err();
        assert!(matches!(err, StoreError::Review(ReviewError::DuplicateReviewer { .. })));
        assert_eq!(store.get("C-1").unwrap().unwrap().assessments.len(), 1);
        let err = store.update("nope", |_| Ok(())).unwrap_err();
        assert!(matches!(err, StoreError::Review(ReviewError::UnknownCase(_))));
        assert_eq!(store.list(Some(ReviewStatus::InReview)).unwrap().len(), 1);
        assert_eq!(store.insert_new(&case()).unwrap().unwrap().assessments.len(), 1);
        assert!(store.list(Some(ReviewStatus::Pending)).unwrap().is_empty());
    }

    #[test]
    fn file_store_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queue.redb");
        {
            let store = ReviewStore::open(&path).unwrap();
            store.put(&case()).unwrap();
        }
        let store = ReviewStore::open(&path).unwrap();
        assert_eq!(store.get("C-1").unwrap().unwrap(), case());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn store_round_trip_is_identity(
            id in "[A-Za-z0-9-]{1,12}",
            source in "\\PC{0,40}",
            scores in proptest::collection::vec(1u8..=5, 0..=2),
            entropy in 0.0f64..5.0,
        ) {
            let mut c = case();
            c.case_id = id.clone();
            c.report.case_id = id.clone();
            c.source_text = source;
            c.report.extra.insert("note".into(), serde_json::json!(entropy));
            for (i, s) in scores.iter().enumerate() {
                c.submit_assessment(assessment(&format!("r{i}"), *s)).unwrap();
            }
            let store = ReviewStore::in_memory().unwrap();
            store.put(&c).unwrap();
            prop_assert_eq!(store.get(&id).unwrap().unwrap(), c);
        }
    }
}
