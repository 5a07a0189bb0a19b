//! Interface payload layout: little-endian `u64` iteration index followed by
//! the vector as `f64`, in ascending interface-dof order.

use super::CommError;

pub fn payload_size(len: usize) -> usize {
    8 * (len + 1)
}

pub fn encode_payload(iteration: u64, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload_size(values.len()));
    out.extend_from_slice(&iteration.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_payload(bytes: &[u8]) -> Result<(u64, Vec<f64>), CommError> {
    if bytes.len() < 8 || bytes.len() % 8 != 0 {
        return Err(CommError::Payload { len: bytes.len() });
    }
    let word = |c: &[u8]| <[u8; 8]>::try_from(c).expect("8-byte chunk");
    let iteration = u64::from_le_bytes(word(&bytes[..8]));
    let values = bytes[8..].chunks_exact(8).map(|c| f64::from_le_bytes(word(c))).collect();
    Ok((iteration, values))
}
