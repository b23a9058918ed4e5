//! Binary model checkpoint: a magic tag, a JSON header describing dims,
//! normalization scales, the taxonomy hash, optional benign score
//! statistics, and a tensor manifest, followed by raw little-endian f64
//! payloads in manifest order. Loading refuses files whose taxonomy hash or
//! tensor shapes disagree with this build, and round-trips bit-exactly.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HierModel, ModelDims, NormScales, LOWER_NAMES, UPPER_NAMES};
use crate::neural::{ParamSet, Tensor};
use crate::scoring::SubScoreStats;
use crate::sessions::taxonomy_hash;

const MAGIC: &[u8; 8] = b"HTPPCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    taxonomy_hash: u64,
    dims: ModelDims,
    scales: NormScales,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    benign_stats: Option<SubScoreStats>,
    tensors: Vec<TensorEntry>,
}

/// A trained model plus the benign sub-score statistics needed to
/// standardize new scores the same way the training run did.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: HierModel,
    pub benign_stats: Option<SubScoreStats>,
}

fn manifest(model: &HierModel) -> Vec<(String, &ParamSet, &str)> {
    LOWER_NAMES
        .iter()
        .map(|&n| (format!("lower.{n}"), &model.lower, n))
        .chain(UPPER_NAMES.iter().map(|&n| (format!("upper.{n}"), &model.upper, n)))
        .collect()
}

pub fn save(path: &Path, model: &HierModel, benign_stats: Option<&SubScoreStats>) -> Result<()> {
    model.validate()?;
    let entries = manifest(model);
    let header = Header {
        version: VERSION,
        taxonomy_hash: taxonomy_hash(),
        dims: model.dims,
        scales: model.scales,
        benign_stats: benign_stats.copied(),
        tensors: entries
            .iter()
            .map(|(full, set, name)| {
                let tensor = set.require(name)?;
                Ok(TensorEntry { name: full.clone(), shape: tensor.shape().to_vec() })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for (_, set, name) in &entries {
        for &v in set.require(name)?.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut input = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| bad_file(path, "too short for the magic tag"))?;
    if &magic != MAGIC {
        return Err(bad_file(path, "wrong magic tag"));
    }
    let mut len_bytes = [0u8; 8];
    input
        .read_exact(&mut len_bytes)
        .map_err(|_| bad_file(path, "missing header length"))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    input
        .read_exact(&mut header_bytes)
        .map_err(|_| bad_file(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&header_bytes)?;

    if header.version != VERSION {
        return Err(bad_file(
            path,
            &format!("version {} unsupported (expected {VERSION})", header.version),
        ));
    }
    if header.taxonomy_hash != taxonomy_hash() {
        return Err(Error::Validation(format!(
            "checkpoint {} was trained on a different activity taxonomy \
             (hash {:#018x}, this build has {:#018x})",
            path.display(),
            header.taxonomy_hash,
            taxonomy_hash()
        )));
    }
    header.dims.validate()?;
    header.scales.validate()?;

    let mut lower = ParamSet::new();
    let mut upper = ParamSet::new();
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        let mut data = vec![0.0f64; numel];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            input
                .read_exact(&mut buf)
                .map_err(|_| bad_file(path, &format!("truncated payload of {}", entry.name)))?;
            *v = f64::from_le_bytes(buf);
        }
        let tensor = Tensor::new(entry.shape.clone(), data)?;
        match entry.name.split_once('.') {
            Some(("lower", rest)) => lower.insert(rest, tensor)?,
            Some(("upper", rest)) => upper.insert(rest, tensor)?,
            _ => return Err(bad_file(path, &format!("unknown tensor {}", entry.name))),
        }
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(bad_file(path, "trailing bytes after tensor payloads"));
    }

    let model = HierModel {
        dims: header.dims,
        scales: header.scales,
        lower,
        upper,
    };
    model.validate()?;
    Ok(Checkpoint { model, benign_stats: header.benign_stats })
}

fn bad_file(path: &Path, why: &str) -> Error {
    Error::Parse {
        location: path.display().to_string(),
        message: format!("not a readable checkpoint: {why}"),
    }
}
