//! JSON-lines sidecar files holding one [`RoleInstance`] per line.

use std::io::{BufRead, BufReader, Read, Write};

use thiserror::Error;

use crate::role::RoleInstance;

#[derive(Debug, Error)]
pub enum InstancesError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_instances<W: Write>(instances: &[RoleInstance], mut out: W) -> Result<(), InstancesError> {
    for inst in instances {
        serde_json::to_writer(&mut out, inst).map_err(|source| InstancesError::Json { line: 0, source })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads instances; blank lines are skipped.
pub fn read_instances<R: Read>(input: R) -> Result<Vec<RoleInstance>, InstancesError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| InstancesError::Json { line: i + 1, source })?);
    }
    Ok(out)
}
