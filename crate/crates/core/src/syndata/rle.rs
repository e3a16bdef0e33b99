use super::Mask;
use crate::error::{Error, Result};

/// Row-major run-length encoding as alternating `(skip, run)` counts, starting
/// with a skip. Trailing unset pixels are not encoded.
pub fn rle_encode(mask: &Mask) -> Vec<u32> {
    let mut out = Vec::new();
    let mut skip = 0u32;
    let mut run = 0u32;
    for &b in mask.bits() {
        if b {
            run += 1;
        } else if run > 0 {
            out.push(skip);
            out.push(run);
            skip = 1;
            run = 0;
        } else {
            skip += 1;
        }
    }
    if run > 0 {
        out.push(skip);
        out.push(run);
    }
    out
}

pub fn rle_decode(counts: &[u32], width: usize, height: usize) -> Result<Mask> {
    let n = width * height;
    let mut bits = vec![false; n];
    let mut pos = 0usize;
    for (i, &c) in counts.iter().enumerate() {
        let c = c as usize;
        if pos + c > n {
            return Err(Error::Contract(format!(
                "run-length counts overflow a {width}x{height} mask"
            )));
        }
        if i % 2 == 1 {
            bits[pos..pos + c].iter_mut().for_each(|b| *b = true);
        }
        pos += c;
    }
    Ok(Mask::from_bits(width, height, bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encoding() {
        let m = Mask::from_bits(
            4,
            2,
            vec![false, true, true, false, false, false, true, true],
        );
        assert_eq!(rle_encode(&m), vec![1, 2, 3, 2]);
        assert_eq!(rle_encode(&Mask::new(3, 3)), Vec::<u32>::new());
    }

    #[test]
    fn overflow_rejected() {
        assert!(rle_decode(&[3, 5], 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(bits in prop::collection::vec(any::<bool>(), 35)) {
            let m = Mask::from_bits(7, 5, bits);
            prop_assert_eq!(rle_decode(&rle_encode(&m), 7, 5).unwrap(), m);
        }
    }
}
