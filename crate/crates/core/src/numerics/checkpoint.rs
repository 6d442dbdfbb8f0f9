//! Checkpoint layout: `u64` little-endian header length, a JSON header
//! `{"params": [{"name", "shape"}, ...]}`, then every tensor's values as
//! little-endian `f64` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NumericError, ParamStore, Tensor};

#[derive(Serialize, Deserialize)]
struct Header {
    params: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint<W: Write>(params: &ParamStore, mut w: W) -> Result<(), NumericError> {
    let header = Header {
        params: params
            .iter()
            .map(|(n, t)| Entry { name: n.to_string(), shape: t.shape().to_vec() })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| NumericError::Checkpoint(e.to_string()))?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in params.tensors() {
        for x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore, NumericError> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| NumericError::Checkpoint(e.to_string()))?;
    let mut store = ParamStore::new();
    let mut buf = [0u8; 8];
    for e in header.params {
        let n: usize = e.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| NumericError::Checkpoint(format!("truncated data for {}", e.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        store.insert(e.name, Tensor::new(e.shape, data)?);
    }
    Ok(store)
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<(), NumericError> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, NumericError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![2, 2], vec![0.1, -1e-300, f64::MAX, 3.0]).unwrap());
        s.insert("b", Tensor::row(vec![1.0 / 3.0]));
        let mut bytes = Vec::new();
        write_checkpoint(&s, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[4, 4]));
        let mut bytes = Vec::new();
        write_checkpoint(&s, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_checkpoint(bytes.as_slice()).is_err());
    }
}
