use std::io::{Cursor, Read, Write};
use std::path::Path;

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use super::binary::{read_parameters, write_parameters};
use super::check::{normalize, validate};
use super::text::{parse_network_text, write_network_text};
use super::NnpModel;
use crate::error::{Error, Result};

pub const NNP_VERSION: &str = "0.1";

const VERSION_MEMBER: &str = "nnp_version.txt";
const NETWORK_MEMBER: &str = "network.nntxt";
const PARAMETER_MEMBER: &str = "parameter.bin";

fn zip_err(e: zip::result::ZipError) -> Error {
    match e {
        zip::result::ZipError::Io(io) => read_err(io),
        other => Error::BadMagic(format!("not an nnp archive: {other}")),
    }
}

fn read_err(e: std::io::Error) -> Error {
    if e.to_string().contains("checksum") {
        Error::ChecksumMismatch(e.to_string())
    } else {
        Error::Io(e)
    }
}

/// Serializes the normalized form of `model`. The same model always gives the same bytes.
pub fn save_nnp_bytes(model: &NnpModel) -> Result<Vec<u8>> {
    let diagnostics = validate(model);
    if !diagnostics.is_empty() {
        let text: Vec<String> = diagnostics.iter().map(|d| d.to_string()).collect();
        return Err(Error::ValidationFailed(text.join("; ")));
    }
    let model = normalize(model).map_err(|e| Error::ValidationFailed(e.to_string()))?;
    let options = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644);
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let members: [(&str, Vec<u8>); 3] = [
        (VERSION_MEMBER, format!("{NNP_VERSION}\n").into_bytes()),
        (NETWORK_MEMBER, write_network_text(&model).into_bytes()),
        (PARAMETER_MEMBER, write_parameters(&model.parameters)),
    ];
    for (name, bytes) in members {
        zip.start_file(name, options).map_err(zip_err)?;
        zip.write_all(&bytes)?;
    }
    Ok(zip.finish().map_err(zip_err)?.into_inner())
}

pub fn save_nnp(model: &NnpModel, path: impl AsRef<Path>) -> Result<()> {
    let bytes = save_nnp_bytes(model)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

fn member(archive: &mut ZipArchive<Cursor<&[u8]>>, name: &str) -> Result<Vec<u8>> {
    let mut file = archive.by_name(name).map_err(|e| match e {
        zip::result::ZipError::FileNotFound => Error::parse(name, 0, "member missing from archive"),
        other => zip_err(other),
    })?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(read_err)?;
    Ok(bytes)
}

pub fn load_nnp_bytes(bytes: &[u8]) -> Result<NnpModel> {
    if !bytes.starts_with(b"PK") {
        return Err(Error::BadMagic("not a zip archive".to_string()));
    }
    let mut archive = ZipArchive::new(Cursor::new(bytes)).map_err(zip_err)?;
    let version = member(&mut archive, VERSION_MEMBER)?;
    let version = String::from_utf8_lossy(&version).trim().to_string();
    if version != NNP_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let text = member(&mut archive, NETWORK_MEMBER)?;
    let text = String::from_utf8(text).map_err(|_| Error::parse(NETWORK_MEMBER, 0, "not UTF-8"))?;
    let mut model = parse_network_text(&text)?;
    model.parameters = read_parameters(&member(&mut archive, PARAMETER_MEMBER)?)?;
    Ok(model)
}

pub fn load_nnp(path: impl AsRef<Path>) -> Result<NnpModel> {
    let bytes = std::fs::read(path)?;
    load_nnp_bytes(&bytes)
}
