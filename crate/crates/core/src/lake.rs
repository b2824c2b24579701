//! The data lake: one SQLite store, a media directory and a document directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Component, Path, PathBuf};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Row = Map<String, Value>;

#[derive(Debug, Error)]
pub enum LakeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid lake manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("only read-only queries are allowed: {0}")]
    ReadOnly(String),
    /// Message text comes straight from SQLite so it can be fed back to the model.
    #[error("{0}")]
    Sql(String),
    #[error("path escapes the lake root: {0}")]
    PathEscape(String),
    #[error("not found: {0}")]
    NotFound(String),
}

/// On-disk lake description. Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LakeManifest {
    pub name: String,
    pub db_path: PathBuf,
    #[serde(default)]
    pub media_root: Option<PathBuf>,
    #[serde(default)]
    pub docs_root: Option<PathBuf>,
}

impl LakeManifest {
    pub fn load(path: &Path) -> Result<Self, LakeError> {
        let text = fs::read_to_string(path).map_err(|source| LakeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut manifest: LakeManifest = toml::from_str(&text).map_err(|e| LakeError::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.db_path = base.join(&manifest.db_path);
        manifest.media_root = manifest.media_root.map(|p| base.join(p));
        manifest.docs_root = manifest.docs_root.map(|p| base.join(p));
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub decl_type: String,
    #[serde(default)]
    pub primary_key: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<Column>,
    pub foreign_keys: Vec<ForeignKey>,
    pub row_count: Option<u64>,
}

/// Tables, columns and foreign keys of the store, sorted by table name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaCatalog {
    pub tables: Vec<TableSchema>,
}

impl SchemaCatalog {
    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn table_names(&self) -> Vec<&str> {
        self.tables.iter().map(|t| t.name.as_str()).collect()
    }

    /// Compact prompt form: one `table(col:type, ...)` line per table, followed by
    /// ` fk: col->table.col` entries when present.
    pub fn render_compact(&self) -> String {
        self.render_subset(None)
    }

    pub fn render_subset(&self, only: Option<&[String]>) -> String {
        let mut out = String::new();
        for table in &self.tables {
            if let Some(keep) = only {
                if !keep.iter().any(|k| k.eq_ignore_ascii_case(&table.name)) {
                    continue;
                }
            }
            let cols: Vec<String> = table
                .columns
                .iter()
                .map(|c| format!("{}:{}", c.name, c.decl_type))
                .collect();
            let _ = write!(out, "{}({})", table.name, cols.join(", "));
            if !table.foreign_keys.is_empty() {
                let fks: Vec<String> = table
                    .foreign_keys
                    .iter()
                    .map(|f| format!("{}->{}.{}", f.column, f.ref_table, f.ref_column))
                    .collect();
                let _ = write!(out, " fk: {}", fks.join(", "));
            }
            out.push('\n');
        }
        out
    }

    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.render_compact().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// An opened lake. Cheap to share across workers: every query opens its own
/// read-only connection.
#[derive(Debug, Clone)]
pub struct DataLake {
    name: String,
    db_path: PathBuf,
    media_root: Option<PathBuf>,
    docs_root: Option<PathBuf>,
    catalog: SchemaCatalog,
}

fn canonical(path: &Path) -> Result<PathBuf, LakeError> {
    path.canonicalize().map_err(|source| LakeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl DataLake {
    pub fn open(manifest: &LakeManifest) -> Result<Self, LakeError> {
        if !manifest.db_path.is_file() {
            return Err(LakeError::Io {
                path: manifest.db_path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "database file not found"),
            });
        }
        let db_path = canonical(&manifest.db_path)?;
        let media_root = manifest.media_root.as_deref().map(canonical).transpose()?;
        let docs_root = manifest.docs_root.as_deref().map(canonical).transpose()?;
        if let Some(media) = &media_root {
            let empty = fs::read_dir(media)
                .map_err(|source| LakeError::Io {
                    path: media.clone(),
                    source,
                })?
                .next()
                .is_none();
            if empty {
                tracing::warn!(lake = %manifest.name, path = %media.display(), "media directory is empty");
            }
        }
        let mut lake = DataLake {
            name: manifest.name.clone(),
            db_path,
            media_root,
            docs_root,
            catalog: SchemaCatalog::default(),
        };
        lake.catalog = lake.introspect()?;
        Ok(lake)
    }

    pub fn open_manifest_file(path: &Path) -> Result<Self, LakeError> {
        Self::open(&LakeManifest::load(path)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn db_path(&self) -> &Path {
        &self.db_path
    }

    pub fn media_root(&self) -> Option<&Path> {
        self.media_root.as_deref()
    }

    fn connect(&self) -> Result<Connection, LakeError> {
        Connection::open_with_flags(
            &self.db_path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
        .map_err(|e| LakeError::Sql(e.to_string()))
    }

    fn introspect(&self) -> Result<SchemaCatalog, LakeError> {
        let conn = self.connect()?;
        let sql_err = |e: rusqlite::Error| LakeError::Sql(e.to_string());
        let mut stmt = conn
            .prepare(
                "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name",
            )
            .map_err(sql_err)?;
        let names: Vec<String> = stmt
            .query_map([], |r| r.get(0))
            .map_err(sql_err)?
            .collect::<Result<_, _>>()
            .map_err(sql_err)?;
        let mut tables = Vec::with_capacity(names.len());
        for name in names {
            let quoted = name.replace('"', "\"\"");
            let mut cols = conn
                .prepare(&format!("PRAGMA table_info(\"{quoted}\")"))
                .map_err(sql_err)?;
            let columns = cols
                .query_map([], |r| {
                    Ok(Column {
                        name: r.get(1)?,
                        decl_type: r.get::<_, String>(2)?,
                        primary_key: r.get::<_, i64>(5)? > 0,
                    })
                })
                .map_err(sql_err)?
                .collect::<Result<Vec<_>, _>>()
                .map_err(sql_err)?;
            let mut fks = conn
                .prepare(&format!("PRAGMA foreign_key_list(\"{quoted}\")"))
                .map_err(sql_err)?;
            let foreign_keys = fks
                .query_map([], |r| {
                    Ok(ForeignKey {
                        ref_table: r.get(2)?,
                        column: r.get(3)?,
                        ref_column: r.get::<_, Option<String>>(4)?.unwrap_or_default(),
                    })
                })
                .map_err(sql_err)?
                .collect::<Result<Vec<_>, _>>()
                .map_err(sql_err)?;
            let row_count: i64 = conn
                .query_row(&format!("SELECT COUNT(*) FROM \"{quoted}\""), [], |r| r.get(0))
                .map_err(sql_err)?;
            tables.push(TableSchema {
                name,
                columns,
                foreign_keys,
                row_count: Some(row_count as u64),
            });
        }
        Ok(SchemaCatalog { tables })
    }

    /// The schema as it was when the lake was opened.
    pub fn schema_catalog(&self) -> &SchemaCatalog {
        &self.catalog
    }

    /// Runs one read-only statement and returns rows as ordered column → value maps.
    pub fn run_sql(&self, sql: &str) -> Result<Vec<Row>, LakeError> {
        check_read_only(sql)?;
        let conn = self.connect()?;
        let mut stmt = conn.prepare(sql).map_err(|e| LakeError::Sql(e.to_string()))?;
        if !stmt.readonly() {
            return Err(LakeError::ReadOnly(sql.trim().to_string()));
        }
        let names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
        let mut rows = stmt.query([]).map_err(|e| LakeError::Sql(e.to_string()))?;
        let mut out = Vec::new();
        while let Some(row) = rows.next().map_err(|e| LakeError::Sql(e.to_string()))? {
            let mut map = Map::new();
            for (i, name) in names.iter().enumerate() {
                let v = row.get_ref(i).map_err(|e| LakeError::Sql(e.to_string()))?;
                map.insert(name.clone(), sql_value_to_json(v));
            }
            out.push(map);
        }
        Ok(out)
    }

    /// Resolves a lake-relative media path, refusing anything outside the media root.
    pub fn resolve_media(&self, rel: &str) -> Result<PathBuf, LakeError> {
        let root = self
            .media_root
            .as_deref()
            .ok_or_else(|| LakeError::NotFound(format!("lake '{}' has no media root", self.name)))?;
        jail(root, rel)
    }

    pub fn resolve_document(&self, rel: &str) -> Result<PathBuf, LakeError> {
        let root = self
            .docs_root
            .as_deref()
            .ok_or_else(|| LakeError::NotFound(format!("lake '{}' has no document root", self.name)))?;
        jail(root, rel)
    }

    pub fn read_document(&self, rel: &str) -> Result<String, LakeError> {
        let path = self.resolve_document(rel)?;
        fs::read_to_string(&path).map_err(|source| LakeError::Io { path, source })
    }
}

pub fn sql_value_to_json(v: ValueRef<'_>) -> Value {
    match v {
        ValueRef::Null => Value::Null,
        ValueRef::Integer(i) => Value::from(i),
        ValueRef::Real(f) => serde_json::Number::from_f64(f)
            .map(Value::Number)
            .unwrap_or(Value::Null),
        ValueRef::Text(t) => Value::String(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Value::String(hex::encode(b)),
    }
}

fn jail(root: &Path, rel: &str) -> Result<PathBuf, LakeError> {
    let rel_path = Path::new(rel);
    let escapes = rel_path.is_absolute()
        || rel_path
            .components()
            .any(|c| matches!(c, Component::ParentDir | Component::RootDir | Component::Prefix(_)));
    if escapes {
        return Err(LakeError::PathEscape(rel.to_string()));
    }
    let joined = root.join(rel_path);
    if !joined.exists() {
        return Err(LakeError::NotFound(rel.to_string()));
    }
    // symlinks may still point outside
    let resolved = canonical(&joined)?;
    if !resolved.starts_with(root) {
        return Err(LakeError::PathEscape(rel.to_string()));
    }
    Ok(resolved)
}

/// Statement-type allowlist: a single SELECT or WITH statement, comments allowed.
pub fn check_read_only(sql: &str) -> Result<(), LakeError> {
    let body = strip_leading_comments(sql);
    let keyword: String = body
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase();
    if keyword != "SELECT" && keyword != "WITH" {
        return Err(LakeError::ReadOnly(sql.trim().to_string()));
    }
    Ok(())
}

fn strip_leading_comments(mut s: &str) -> &str {
    loop {
        s = s.trim_start();
        if let Some(rest) = s.strip_prefix("--") {
            s = rest.split_once('\n').map_or("", |(_, r)| r);
        } else if let Some(rest) = s.strip_prefix("/*") {
            s = rest.split_once("*/").map_or("", |(_, r)| r);
        } else {
            return s;
        }
    }
}
