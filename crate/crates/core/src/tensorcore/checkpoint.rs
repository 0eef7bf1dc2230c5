//! Versioned structured-text checkpoints. Floats are written with shortest round-trip
//! formatting, so `load(save(x)) == x` bit for bit.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatErrorKind, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    body: T,
}

pub fn to_string<T: Serialize>(kind: &str, body: &T) -> Result<String> {
    let env = Envelope {
        format: kind.to_string(),
        version: CHECKPOINT_VERSION,
        body,
    };
    Ok(serde_json::to_string(&env)?)
}

pub fn from_str<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let env: Envelope<serde_json::Value> = serde_json::from_str(text)
        .map_err(|e| Error::format(FormatErrorKind::Parse, e.to_string()))?;
    if env.format != kind {
        return Err(Error::format(
            FormatErrorKind::Validation,
            format!("expected a `{kind}` checkpoint, found `{}`", env.format),
        ));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            FormatErrorKind::Version,
            format!("checkpoint version {} (supported: {CHECKPOINT_VERSION})", env.version),
        ));
    }
    serde_json::from_value(env.body).map_err(|e| Error::format(FormatErrorKind::Parse, e.to_string()))
}

pub fn save<T: Serialize>(kind: &str, body: &T, path: &Path) -> Result<()> {
    let text = to_string(kind, body)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load<T: DeserializeOwned>(kind: &str, path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(kind, &text)
}
