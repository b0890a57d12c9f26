//! Binary checkpoint format: a text manifest (name, shape, dtype, byte
//! offset) followed by raw little-endian f64 arrays in row-major order.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::{ArrayD, IxDyn};

use crate::error::KernelError;
use crate::value::Value;

pub const CKPT_HEADER: &str = "UDPX-CKPT-1";

/// Named parameter arrays, the unit of persistence and of in-memory model
/// snapshots.
pub type Snapshot = Vec<(String, ArrayD<f64>)>;

pub fn snapshot_of(params: &[Value]) -> Snapshot {
    params
        .iter()
        .map(|p| {
            (
                p.name().expect("checkpointed values must be named").to_string(),
                p.to_array(),
            )
        })
        .collect()
}

pub fn restore_into(params: &[Value], snap: &Snapshot) {
    assert_eq!(params.len(), snap.len(), "snapshot/parameter count mismatch");
    for (p, (name, data)) in params.iter().zip(snap) {
        assert_eq!(p.name(), Some(name.as_str()), "snapshot order mismatch");
        p.set_data(data.clone());
    }
}

pub fn write_checkpoint(w: &mut impl Write, snap: &Snapshot) -> Result<(), KernelError> {
    writeln!(w, "{CKPT_HEADER}")?;
    writeln!(w, "{}", snap.len())?;
    let mut offset = 0usize;
    for (name, data) in snap {
        if name.contains(['\t', '\n']) {
            return Err(KernelError::BadCheckpoint(format!(
                "parameter name `{name}` contains separator characters"
            )));
        }
        let dims = data
            .shape()
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{name}\t{dims}\tf64\t{offset}")?;
        offset += data.len() * 8;
    }
    writeln!(w)?;
    for (_, data) in snap {
        for v in data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Snapshot, KernelError> {
    let mut br = BufReader::new(r);
    let mut line = String::new();
    br.read_line(&mut line)?;
    if line.trim_end() != CKPT_HEADER {
        return Err(KernelError::BadCheckpoint(format!(
            "bad header {:?}, expected {CKPT_HEADER:?}",
            line.trim_end()
        )));
    }
    line.clear();
    br.read_line(&mut line)?;
    let count: usize = line
        .trim()
        .parse()
        .map_err(|_| KernelError::BadCheckpoint(format!("bad entry count {:?}", line.trim())))?;

    let mut entries: Vec<(String, Vec<usize>, usize)> = Vec::with_capacity(count);
    for _ in 0..count {
        line.clear();
        br.read_line(&mut line)?;
        let parts: Vec<&str> = line.trim_end_matches('\n').split('\t').collect();
        if parts.len() != 4 {
            return Err(KernelError::BadCheckpoint(format!(
                "bad manifest line {line:?}"
            )));
        }
        if parts[2] != "f64" {
            return Err(KernelError::BadCheckpoint(format!(
                "unsupported dtype {:?}",
                parts[2]
            )));
        }
        let dims = if parts[1].is_empty() {
            Vec::new()
        } else {
            parts[1]
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| KernelError::BadCheckpoint(format!("bad shape {:?}", parts[1])))?
        };
        let offset: usize = parts[3]
            .parse()
            .map_err(|_| KernelError::BadCheckpoint(format!("bad offset {:?}", parts[3])))?;
        entries.push((parts[0].to_string(), dims, offset));
    }
    line.clear();
    br.read_line(&mut line)?;
    if !line.trim_end_matches('\n').is_empty() {
        return Err(KernelError::BadCheckpoint(
            "missing blank separator before data section".into(),
        ));
    }

    let mut blob = Vec::new();
    br.read_to_end(&mut blob)?;
    let mut snap = Snapshot::with_capacity(count);
    for (name, dims, offset) in entries {
        let n: usize = dims.iter().product();
        let end = offset + n * 8;
        if end > blob.len() {
            return Err(KernelError::BadCheckpoint(format!(
                "data section too short for `{name}`"
            )));
        }
        let vals: Vec<f64> = blob[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), vals)
            .map_err(|e| KernelError::BadCheckpoint(format!("shape error for `{name}`: {e}")))?;
        snap.push((name, arr));
    }
    Ok(snap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_preserves_names_shapes_bits() {
        let snap: Snapshot = vec![
            ("a.w".into(), array![[1.0_f64, -2.5], [0.0, 3.125]].into_dyn()),
            ("a.b".into(), array![0.1_f64, 0.2, 0.3].into_dyn()),
            ("s".into(), ArrayD::from_elem(IxDyn(&[]), 7.75)),
        ];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &snap).unwrap();
        assert!(buf.starts_with(CKPT_HEADER.as_bytes()));
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), snap.len());
        for ((n1, d1), (n2, d2)) in snap.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(d1, d2);
        }
    }

    #[test]
    fn bad_header_is_rejected() {
        let buf = b"NOT-A-CKPT\n0\n\n".to_vec();
        let err = read_checkpoint(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("bad header"));
    }
}
