#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};

use rusqlite::Connection;

pub const DESK_DATABASES: [&str; 3] = ["club", "library", "weather"];

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn desk_dir() -> PathBuf {
    fixture_dir().join("desk")
}

/// Builds `<root>/<db>/<db>.sqlite` from the desk SQL scripts.
pub fn build_desk(root: &Path) {
    for db in DESK_DATABASES {
        let script = std::fs::read_to_string(desk_dir().join(format!("{db}.sql"))).unwrap();
        create_db(root, db, &script);
    }
}

pub fn create_db(root: &Path, db_id: &str, script: &str) -> PathBuf {
    let dir = root.join(db_id);
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(format!("{db_id}.sqlite"));
    let conn = Connection::open(&path).unwrap();
    conn.execute_batch(script).unwrap();
    path
}

pub fn checksum(path: &Path) -> Vec<u8> {
    use sha2::{Digest, Sha256};
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}
