//! Binary greymap (P5) images of attention maps.

use agmh_core::Tensor;

use crate::error::{Error, Result};

/// Encodes an `H × W` map (or any tensor whose last two extents are `H, W`)
/// as an 8-bit P5 image scaled so its maximum becomes 255. Negative values
/// clamp to 0; an all-zero map stays black.
pub fn encode(map: &Tensor) -> Result<Vec<u8>> {
    let shape = map.shape();
    if shape.len() < 2 || shape[..shape.len() - 2].iter().any(|&e| e != 1) {
        return Err(Error::Core(agmh_core::Error::Argument(format!(
            "expected a single H×W map, found shape {shape:?}"
        ))));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let max = map.data().iter().copied().fold(0.0f64, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| {
        if max > 0.0 {
            (v.max(0.0) / max * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

/// File name of map `i` (1-based) for `item`.
pub fn file_name(item: u64, i: usize) -> String {
    format!("attn_{item}_{i}.pgm")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scales_to_full_range() {
        let map = Tensor::new(&[1, 2, 3], vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let bytes = encode(&map).unwrap();
        let head = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..head.len()], head);
        assert_eq!(&bytes[head.len()..], &[0, 51, 102, 153, 204, 255]);
        assert!(encode(&Tensor::zeros(&[2, 2, 2])).is_err());
        assert_eq!(file_name(7, 1), "attn_7_1.pgm");
    }
}
