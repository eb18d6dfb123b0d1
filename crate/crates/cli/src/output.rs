//! Artifacts land in a temp file next to their target and are renamed into
//! place, so a reader never sees a half-written file.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::CliError;

pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", root.display())))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<&mut NamedTempFile>) -> Result<(), CliError>,
    {
        let mut tmp = NamedTempFile::new_in(&self.root)?;
        {
            let mut w = BufWriter::new(&mut tmp);
            body(&mut w)?;
            w.flush()?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(self.root.join(name)).map_err(|e| CliError::Io(e.to_string()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Io(e.to_string()))?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}
