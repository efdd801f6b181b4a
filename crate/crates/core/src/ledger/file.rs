//! Append-only block file: a sequence of `u32` big-endian length-prefixed
//! block records, genesis first.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{verify_blocks, Block, Divergence, VerificationReport};

#[derive(Debug, Error)]
pub enum LedgerFileError {
    #[error("record {index} is truncated")]
    Truncated { index: u64 },
    #[error("record {index} does not decode: {reason}")]
    Corrupt { index: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) struct LedgerFile {
    path: PathBuf,
    file: File,
}

impl LedgerFile {
    pub(crate) fn create(path: &Path) -> Result<Self, LedgerFileError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .truncate(true)
            .write(true)
            .open(path)?;
        Ok(Self {
            path: path.to_owned(),
            file,
        })
    }

    pub(crate) fn open_append(path: &Path) -> Result<Self, LedgerFileError> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            path: path.to_owned(),
            file,
        })
    }

    pub(crate) fn append(&mut self, block: &Block) -> Result<(), LedgerFileError> {
        let bytes = block.to_bytes();
        let mut record = Vec::with_capacity(bytes.len() + 4);
        record.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        record.extend_from_slice(&bytes);
        self.file.write_all(&record)?;
        self.file.sync_data()?;
        Ok(())
    }

    #[allow(dead_code)]
    pub(crate) fn path(&self) -> &Path {
        &self.path
    }
}

pub fn load_blocks(path: &Path) -> Result<Vec<Block>, LedgerFileError> {
    let bytes = std::fs::read(path)?;
    let mut blocks = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let index = blocks.len() as u64;
        if bytes.len() - pos < 4 {
            return Err(LedgerFileError::Truncated { index });
        }
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        pos += 4;
        if bytes.len() - pos < len {
            return Err(LedgerFileError::Truncated { index });
        }
        let block = Block::from_bytes(&bytes[pos..pos + len]).map_err(|e| LedgerFileError::Corrupt {
            index,
            reason: e.to_string(),
        })?;
        blocks.push(block);
        pos += len;
    }
    Ok(blocks)
}

/// Verifies a ledger file without executing it. Undecodable records count as
/// a divergence at their position.
pub fn verify_ledger_file(path: &Path) -> Result<VerificationReport, std::io::Error> {
    match load_blocks(path) {
        Ok(blocks) => Ok(verify_blocks(&blocks)),
        Err(LedgerFileError::Io(e)) => Err(e),
        Err(LedgerFileError::Truncated { index }) => Ok(VerificationReport {
            blocks_checked: index + 1,
            divergence: Some(Divergence {
                height: index,
                reason: "record truncated".into(),
            }),
        }),
        Err(LedgerFileError::Corrupt { index, reason }) => Ok(VerificationReport {
            blocks_checked: index + 1,
            divergence: Some(Divergence {
                height: index,
                reason: format!("record does not decode: {reason}"),
            }),
        }),
    }
}
