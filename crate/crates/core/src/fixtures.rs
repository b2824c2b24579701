//! Builds the mini lakes (artwork, rotowire, ehr) from checked-in DDL and CSV.
//!
//! A source directory holds `schema.sql`, one `{table}.csv` per table to fill and
//! an optional `docs/` tree. The output directory receives `lake.db`, `lake.toml`,
//! a copied `docs/` and a `media/` tree with one placeholder file for every value
//! of an `img_path` or `image_path` column. Placeholder contents are unique per
//! path so byte-level lookups can tell images apart.

use std::fs;
use std::path::{Path, PathBuf};

use rusqlite::{params_from_iter, Connection};
use thiserror::Error;

use crate::lake::LakeManifest;

pub const DATASETS: [&str; 3] = ["artwork", "rotowire", "ehr"];

const MEDIA_COLUMNS: [&str; 2] = ["img_path", "image_path"];

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {message}")]
    Load { file: PathBuf, message: String },
    #[error("unknown dataset '{0}'")]
    UnknownDataset(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> FixtureError + '_ {
    move |source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The checked-in source tree of this workspace.
pub fn default_source_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/data")
}

/// Placeholder bytes written for a media path.
pub fn placeholder_bytes(rel: &str) -> Vec<u8> {
    format!("placeholder image: {rel}\n").into_bytes()
}

/// Builds one dataset from `source_root/{name}` into `out`; returns the manifest path.
pub fn build_dataset(source_root: &Path, name: &str, out: &Path) -> Result<PathBuf, FixtureError> {
    if !DATASETS.contains(&name) {
        return Err(FixtureError::UnknownDataset(name.to_string()));
    }
    build_lake(&source_root.join(name), name, out)
}

/// Builds every dataset into `out_root/{name}`.
pub fn build_all(source_root: &Path, out_root: &Path) -> Result<Vec<PathBuf>, FixtureError> {
    DATASETS
        .iter()
        .map(|name| build_dataset(source_root, name, &out_root.join(name)))
        .collect()
}

/// Builds a lake from an arbitrary source directory.
pub fn build_lake(source: &Path, name: &str, out: &Path) -> Result<PathBuf, FixtureError> {
    fs::create_dir_all(out).map_err(io(out))?;
    let db_path = out.join("lake.db");
    if db_path.exists() {
        fs::remove_file(&db_path).map_err(io(&db_path))?;
    }
    let schema_path = source.join("schema.sql");
    let ddl = fs::read_to_string(&schema_path).map_err(io(&schema_path))?;
    let load_err = |file: &Path, e: &dyn std::fmt::Display| FixtureError::Load {
        file: file.to_path_buf(),
        message: e.to_string(),
    };

    let mut conn = Connection::open(&db_path).map_err(|e| load_err(&db_path, &e))?;
    conn.execute_batch(&ddl).map_err(|e| load_err(&schema_path, &e))?;
    let tables: Vec<String> = {
        let mut stmt = conn
            .prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name")
            .map_err(|e| load_err(&schema_path, &e))?;
        let names = stmt
            .query_map([], |r| r.get(0))
            .and_then(|rows| rows.collect::<Result<Vec<String>, _>>())
            .map_err(|e| load_err(&schema_path, &e))?;
        names
    };

    let mut media = Vec::new();
    let tx = conn.transaction().map_err(|e| load_err(&db_path, &e))?;
    // tables load alphabetically; references are checked at commit
    tx.execute_batch("PRAGMA defer_foreign_keys = ON")
        .map_err(|e| load_err(&db_path, &e))?;
    for table in &tables {
        let csv_path = source.join(format!("{table}.csv"));
        if !csv_path.is_file() {
            continue;
        }
        let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| load_err(&csv_path, &e))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| load_err(&csv_path, &e))?
            .iter()
            .map(str::to_string)
            .collect();
        let cols = headers.iter().map(|h| format!("\"{h}\"")).collect::<Vec<_>>().join(", ");
        let marks = vec!["?"; headers.len()].join(", ");
        let mut insert = tx
            .prepare(&format!("INSERT INTO \"{table}\" ({cols}) VALUES ({marks})"))
            .map_err(|e| load_err(&csv_path, &e))?;
        for record in reader.records() {
            let record = record.map_err(|e| load_err(&csv_path, &e))?;
            let values: Vec<Option<&str>> = record.iter().map(|v| (!v.is_empty()).then_some(v)).collect();
            insert
                .execute(params_from_iter(values.iter()))
                .map_err(|e| load_err(&csv_path, &e))?;
            for (h, v) in headers.iter().zip(record.iter()) {
                if MEDIA_COLUMNS.contains(&h.as_str()) && !v.is_empty() {
                    media.push(v.to_string());
                }
            }
        }
    }
    tx.commit().map_err(|e| load_err(&db_path, &e))?;
    drop(conn);

    let media_root = out.join("media");
    if media_root.exists() {
        fs::remove_dir_all(&media_root).map_err(io(&media_root))?;
    }
    for rel in &media {
        let path = media_root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io(parent))?;
        }
        fs::write(&path, placeholder_bytes(rel)).map_err(io(&path))?;
    }

    let docs_src = source.join("docs");
    let docs_out = out.join("docs");
    if docs_src.is_dir() {
        if docs_out.exists() {
            fs::remove_dir_all(&docs_out).map_err(io(&docs_out))?;
        }
        copy_tree(&docs_src, &docs_out)?;
    }

    let manifest = LakeManifest {
        name: name.to_string(),
        db_path: "lake.db".into(),
        media_root: (!media.is_empty()).then(|| "media".into()),
        docs_root: docs_src.is_dir().then(|| "docs".into()),
    };
    let manifest_path = out.join("lake.toml");
    let text = toml::to_string(&manifest).map_err(|e| load_err(&manifest_path, &e))?;
    fs::write(&manifest_path, text).map_err(io(&manifest_path))?;
    Ok(manifest_path)
}

fn copy_tree(from: &Path, to: &Path) -> Result<(), FixtureError> {
    fs::create_dir_all(to).map_err(io(to))?;
    for entry in fs::read_dir(from).map_err(io(from))? {
        let entry = entry.map_err(io(from))?;
        let src = entry.path();
        let dst = to.join(entry.file_name());
        if src.is_dir() {
            copy_tree(&src, &dst)?;
        } else {
            fs::copy(&src, &dst).map_err(io(&src))?;
        }
    }
    Ok(())
}
