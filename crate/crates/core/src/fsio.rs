use std::path::Path;

use tempfile::NamedTempFile;

use crate::error::{Error, Result};

/// Temp file in `dir` for write-then-rename. Unlike tempfile's default it is
/// readable by others, as a file from `fs::write` would be.
pub(crate) fn staging_file(dir: &Path) -> Result<NamedTempFile> {
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    builder.tempfile_in(dir).map_err(|e| Error::io(dir, e))
}
