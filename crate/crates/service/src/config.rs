use std::path::PathBuf;

pub const DEFAULT_PORT: u16 = 8808;
pub const DEFAULT_MAX_IMAGE_BYTES: usize = 10 * 1024 * 1024;

/// Service settings, normally read from `COSMOS_*` environment variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub checkpoint: Option<PathBuf>,
    pub db_path: PathBuf,
    /// Bearer token; `None` disables authentication.
    pub token: Option<String>,
    pub port: u16,
    pub ui_dir: Option<PathBuf>,
    pub max_image_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            db_path: PathBuf::from("cosmos.sqlite"),
            token: None,
            port: DEFAULT_PORT,
            ui_dir: None,
            max_image_bytes: DEFAULT_MAX_IMAGE_BYTES,
        }
    }
}

impl ServiceConfig {
    /// `COSMOS_CHECKPOINT`, `COSMOS_DB_PATH`, `COSMOS_TOKEN`, `COSMOS_PORT`,
    /// `COSMOS_UI_DIR`, `COSMOS_MAX_IMAGE_BYTES`.
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let d = Self::default();
        let nonempty = |k: &str| get(k).filter(|v| !v.is_empty());
        Ok(Self {
            checkpoint: nonempty("COSMOS_CHECKPOINT").map(PathBuf::from),
            db_path: nonempty("COSMOS_DB_PATH").map(PathBuf::from).unwrap_or(d.db_path),
            token: nonempty("COSMOS_TOKEN"),
            port: match nonempty("COSMOS_PORT") {
                Some(p) => p.parse().map_err(|_| format!("COSMOS_PORT: not a port: {p:?}"))?,
                None => d.port,
            },
            ui_dir: nonempty("COSMOS_UI_DIR").map(PathBuf::from),
            max_image_bytes: match nonempty("COSMOS_MAX_IMAGE_BYTES") {
                Some(n) => n.parse().map_err(|_| format!("COSMOS_MAX_IMAGE_BYTES: not a size: {n:?}"))?,
                None => d.max_image_bytes,
            },
        })
    }
}
