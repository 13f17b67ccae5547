//! ISO 7064 MOD 97-10 check digits over alphanumeric bodies.
//!
//! Each symbol expands to exactly two decimal digits (`0`-`9` as `00`-`09`,
//! `A`-`Z` as `10`-`35`) and the two check digits are appended in decimal, so
//! that the whole numeric string is congruent to 1 modulo 97. The fixed-width
//! expansion means a substitution of any one symbol shifts the value by a
//! non-zero multiple of a power of 100 smaller than 97 in magnitude, which 97
//! never divides.

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum CheckDigitError {
    #[error("body is empty")]
    Empty,
    #[error("invalid character {0:?} at position {1}")]
    InvalidCharacter(char, usize),
    #[error("missing check digits")]
    MissingCheckDigits,
}

/// Separators ignored when computing or verifying.
pub const SEPARATORS: [char; 2] = ['-', ' '];

fn symbol_value(c: char) -> Option<u32> {
    match c {
        '0'..='9' => Some(c as u32 - '0' as u32),
        'A'..='Z' => Some(c as u32 - 'A' as u32 + 10),
        _ => None,
    }
}

/// Residue of the expanded body modulo 97.
fn body_residue(body: &str) -> Result<u32, CheckDigitError> {
    let mut residue = 0u32;
    let mut seen = false;
    for (i, c) in body.chars().enumerate() {
        if SEPARATORS.contains(&c) {
            continue;
        }
        let v = symbol_value(c).ok_or(CheckDigitError::InvalidCharacter(c, i))?;
        residue = (residue * 100 + v) % 97;
        seen = true;
    }
    if !seen {
        return Err(CheckDigitError::Empty);
    }
    Ok(residue)
}

/// Check digits (2..=98) for `body`.
pub fn compute_check_digits(body: &str) -> Result<u8, CheckDigitError> {
    let residue = body_residue(body)?;
    Ok((98 - (residue * 100) % 97) as u8)
}

/// True when `body` followed by `check` satisfies the MOD 97-10 rule.
pub fn verify_check_digits(body: &str, check: u8) -> Result<bool, CheckDigitError> {
    let residue = body_residue(body)?;
    Ok((residue * 100 + u32::from(check)) % 97 == 1)
}

/// Verifies a string whose last two non-separator characters are the check digits.
pub fn verify_with_trailing(full: &str) -> Result<bool, CheckDigitError> {
    let trimmed = full.trim_end_matches(SEPARATORS);
    let mut digits = trimmed.char_indices().rev();
    let (Some((_, lo)), Some((split, hi))) = (digits.next(), digits.next()) else {
        return Err(CheckDigitError::MissingCheckDigits);
    };
    let (Some(hi), Some(lo)) = (hi.to_digit(10), lo.to_digit(10)) else {
        return Err(CheckDigitError::MissingCheckDigits);
    };
    verify_check_digits(&trimmed[..split], (hi * 10 + lo) as u8)
}
