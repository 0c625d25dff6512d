//! Builds the bundled desk databases as `<root>/<db>/<db>.sqlite`.
//!
//!     cargo run -p sqlreward --example build_desk -- /tmp/desk

use std::path::{Path, PathBuf};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root: PathBuf = std::env::args_os().nth(1).ok_or("usage: build_desk <db-root>")?.into();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/desk");
    for db in ["club", "library", "weather"] {
        let dir = root.join(db);
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{db}.sqlite"));
        if path.exists() {
            std::fs::remove_file(&path)?;
        }
        let script = std::fs::read_to_string(fixtures.join(format!("{db}.sql")))?;
        rusqlite::Connection::open(&path)?.execute_batch(&script)?;
        println!("{}", path.display());
    }
    Ok(())
}
