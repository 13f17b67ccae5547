//! Systematic Reed-Solomon encoding as used by QR symbols.

use alloc::vec;
use alloc::vec::Vec;

use super::gf256;

/// Generator polynomial prod_{i<degree} (x - alpha^i), highest-order
/// coefficient (always 1) omitted.
pub fn generator(degree: usize) -> Vec<u8> {
    assert!((1..=255).contains(&degree));
    let mut coeffs = vec![0u8; degree];
    coeffs[degree - 1] = 1;
    let mut root = 1u8;
    for _ in 0..degree {
        for j in 0..degree {
            coeffs[j] = gf256::mul(coeffs[j], root);
            if j + 1 < degree {
                coeffs[j] ^= coeffs[j + 1];
            }
        }
        root = gf256::mul(root, 2);
    }
    coeffs
}

/// Remainder of `data * x^degree` divided by the generator.
pub fn remainder(data: &[u8], generator: &[u8]) -> Vec<u8> {
    let mut rem = vec![0u8; generator.len()];
    for &b in data {
        let factor = b ^ rem.remove(0);
        rem.push(0);
        for (r, &g) in rem.iter_mut().zip(generator) {
            *r ^= gf256::mul(g, factor);
        }
    }
    rem
}

/// Evaluations of `codeword` (data then ECC) at alpha^0 .. alpha^(n-1).
/// All zero exactly when the block is a valid codeword.
pub fn syndromes(codeword: &[u8], ecc_len: usize) -> Vec<u8> {
    (0..ecc_len)
        .map(|i| {
            let x = gf256::exp(i);
            codeword.iter().fold(0u8, |acc, &c| gf256::mul(acc, x) ^ c)
        })
        .collect()
}
