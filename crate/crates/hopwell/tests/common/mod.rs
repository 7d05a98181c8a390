use std::path::PathBuf;

/// Resolves the MNIST data directory: `HOPWELL_DATA_DIR`, else the
/// workspace-level `data/`. Returns `None` when the four IDX files are
/// not all present.
pub fn data_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("HOPWELL_DATA_DIR").map(PathBuf::from),
        Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")),
    ];
    for dir in candidates.into_iter().flatten() {
        let all = [
            "train-images-idx3-ubyte",
            "train-labels-idx1-ubyte",
            "t10k-images-idx3-ubyte",
            "t10k-labels-idx1-ubyte",
        ]
        .iter()
        .all(|f| dir.join(f).exists() || dir.join(format!("{f}.gz")).exists());
        if all {
            return Some(dir);
        }
    }
    None
}

#[macro_export]
macro_rules! require_mnist {
    () => {
        match common::data_dir() {
            Some(dir) => dir,
            None => {
                eprintln!("skipping: MNIST IDX files not found (set HOPWELL_DATA_DIR)");
                return;
            }
        }
    };
}
