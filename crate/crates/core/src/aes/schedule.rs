//! Key expansion.

use super::sbox::SBOX;
use crate::{Error, Result};

pub const BLOCK_BYTES: usize = 16;
pub const ROUNDS: usize = 10;
pub const WORDS: usize = 4 * (ROUNDS + 1);

const RCON: [u8; 10] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36];

/// Expanded AES-128 key: 44 words, big-endian byte order, words 0..4 equal to
/// the cipher key.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct KeySchedule {
    words: [u32; WORDS],
}

impl KeySchedule {
    pub fn expand(key: &[u8]) -> Result<Self> {
        if key.len() != BLOCK_BYTES {
            return Err(Error::InvalidKeyLength(key.len()));
        }
        let mut words = [0u32; WORDS];
        for i in 0..4 {
            words[i] = u32::from_be_bytes([key[4 * i], key[4 * i + 1], key[4 * i + 2], key[4 * i + 3]]);
        }
        for i in 4..WORDS {
            let mut t = words[i - 1];
            if i % 4 == 0 {
                t = sub_word(t.rotate_left(8)) ^ ((RCON[i / 4 - 1] as u32) << 24);
            }
            words[i] = words[i - 4] ^ t;
        }
        Ok(KeySchedule { words })
    }

    pub fn words(&self) -> &[u32; WORDS] {
        &self.words
    }

    pub fn round_count(&self) -> usize {
        ROUNDS
    }

    /// The four words of round key `round`, 0 ..= 10.
    pub fn round_key(&self, round: usize) -> [u32; 4] {
        let base = 4 * round;
        [
            self.words[base],
            self.words[base + 1],
            self.words[base + 2],
            self.words[base + 3],
        ]
    }
}

fn sub_word(w: u32) -> u32 {
    let b = w.to_be_bytes();
    u32::from_be_bytes([
        SBOX[b[0] as usize],
        SBOX[b[1] as usize],
        SBOX[b[2] as usize],
        SBOX[b[3] as usize],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_key_first_words() {
        let ks = KeySchedule::expand(&[0u8; 16]).unwrap();
        assert_eq!(&ks.words()[..4], &[0, 0, 0, 0]);
        assert_eq!(ks.words()[4], 0x6263_6363);
    }

    #[test]
    fn words_start_with_key() {
        let key: [u8; 16] = core::array::from_fn(|i| i as u8);
        let ks = KeySchedule::expand(&key).unwrap();
        assert_eq!(ks.words()[0], 0x0001_0203);
        assert_eq!(ks.words()[3], 0x0c0d_0e0f);
    }

    #[test]
    fn rejects_wrong_length() {
        assert_eq!(
            KeySchedule::expand(&[0u8; 15]),
            Err(Error::InvalidKeyLength(15))
        );
        assert_eq!(
            KeySchedule::expand(&[0u8; 32]),
            Err(Error::InvalidKeyLength(32))
        );
    }

    #[test]
    fn recurrence_holds() {
        let key: [u8; 16] = core::array::from_fn(|i| (i as u8).wrapping_mul(0x11));
        let ks = KeySchedule::expand(&key).unwrap();
        for i in 4..WORDS {
            if i % 4 != 0 {
                assert_eq!(ks.words()[i], ks.words()[i - 4] ^ ks.words()[i - 1]);
            }
        }
    }
}
