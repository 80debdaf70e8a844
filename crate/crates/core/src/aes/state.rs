//! The 4x4 byte matrix the round functions operate on.

use super::gf::{gf_mul, xtime};
use super::sbox::SBOX;

/// AES state: `m[row][col]`, filled column-major from a 16-byte block
/// (block byte `j` lands in row `j % 4`, column `j / 4`).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct State {
    m: [[u8; 4]; 4],
}

impl State {
    pub fn from_block(block: &[u8; 16]) -> Self {
        let mut m = [[0u8; 4]; 4];
        for (j, &b) in block.iter().enumerate() {
            m[j % 4][j / 4] = b;
        }
        State { m }
    }

    pub fn to_block(&self) -> [u8; 16] {
        let mut block = [0u8; 16];
        for (j, b) in block.iter_mut().enumerate() {
            *b = self.m[j % 4][j / 4];
        }
        block
    }

    pub fn byte(&self, row: usize, col: usize) -> u8 {
        self.m[row][col]
    }

    /// SubBytes through an arbitrary byte substitution. The cipher passes a
    /// closure that routes the lookup through whatever access strategy is in
    /// effect; bytes are visited column by column, row by row within each
    /// column.
    pub fn sub_bytes_with(self, mut sub: impl FnMut(u8) -> u8) -> State {
        let mut out = self;
        for col in 0..4 {
            for row in 0..4 {
                out.m[row][col] = sub(self.m[row][col]);
            }
        }
        out
    }

    /// SubBytes with the plain S-box table.
    pub fn sub_bytes(self) -> State {
        self.sub_bytes_with(|b| SBOX[b as usize])
    }

    pub fn inv_sub_bytes_with(self, sub: impl FnMut(u8) -> u8) -> State {
        self.sub_bytes_with(sub)
    }

    /// Row `r` rotated left by `r` positions.
    pub fn shift_rows(self) -> State {
        let mut out = self;
        for row in 1..4 {
            for col in 0..4 {
                out.m[row][col] = self.m[row][(col + row) % 4];
            }
        }
        out
    }

    pub fn inv_shift_rows(self) -> State {
        let mut out = self;
        for row in 1..4 {
            for col in 0..4 {
                out.m[row][(col + row) % 4] = self.m[row][col];
            }
        }
        out
    }

    /// Each column multiplied by the circulant matrix (02, 03, 01, 01).
    pub fn mix_columns(self) -> State {
        let mut out = self;
        for col in 0..4 {
            let a = [
                self.m[0][col],
                self.m[1][col],
                self.m[2][col],
                self.m[3][col],
            ];
            for row in 0..4 {
                let b = a[(row + 1) % 4];
                out.m[row][col] = xtime(a[row]) ^ xtime(b) ^ b ^ a[(row + 2) % 4] ^ a[(row + 3) % 4];
            }
        }
        out
    }

    /// Inverse MixColumns: circulant (0e, 0b, 0d, 09).
    pub fn inv_mix_columns(self) -> State {
        let mut out = self;
        for col in 0..4 {
            let a = [
                self.m[0][col],
                self.m[1][col],
                self.m[2][col],
                self.m[3][col],
            ];
            for row in 0..4 {
                out.m[row][col] = gf_mul(a[row], 0x0e)
                    ^ gf_mul(a[(row + 1) % 4], 0x0b)
                    ^ gf_mul(a[(row + 2) % 4], 0x0d)
                    ^ gf_mul(a[(row + 3) % 4], 0x09);
            }
        }
        out
    }

    /// Byte-wise XOR with four round-key words (big-endian byte order, word
    /// `c` covering column `c`).
    pub fn add_round_key(self, rk: &[u32; 4]) -> State {
        let mut out = self;
        for col in 0..4 {
            let kb = rk[col].to_be_bytes();
            for row in 0..4 {
                out.m[row][col] ^= kb[row];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aes::sbox::invert;
    use proptest::prelude::*;

    fn inv_sub(s: State) -> State {
        let inv = invert(&SBOX);
        s.sub_bytes_with(|b| inv[b as usize])
    }

    #[test]
    fn block_round_trip() {
        let block: [u8; 16] = core::array::from_fn(|i| i as u8 * 7);
        assert_eq!(State::from_block(&block).to_block(), block);
    }

    #[test]
    fn column_major_mapping() {
        let block: [u8; 16] = core::array::from_fn(|i| i as u8);
        let s = State::from_block(&block);
        assert_eq!(s.byte(0, 0), 0);
        assert_eq!(s.byte(3, 0), 3);
        assert_eq!(s.byte(0, 1), 4);
        assert_eq!(s.byte(2, 3), 14);
    }

    #[test]
    fn shift_rows_row0_unchanged_row1_rotates() {
        let block: [u8; 16] = core::array::from_fn(|i| i as u8);
        let s = State::from_block(&block).shift_rows();
        // row 0 untouched
        for col in 0..4 {
            assert_eq!(s.byte(0, col), (4 * col) as u8);
        }
        // row 1: [1, 5, 9, 13] -> [5, 9, 13, 1]
        assert_eq!(
            [s.byte(1, 0), s.byte(1, 1), s.byte(1, 2), s.byte(1, 3)],
            [5, 9, 13, 1]
        );
    }

    #[test]
    fn mix_columns_known_column() {
        // column [db, 13, 53, 45] -> [8e, 4d, a1, bc]
        let mut block = [0u8; 16];
        block[..4].copy_from_slice(&[0xdb, 0x13, 0x53, 0x45]);
        let s = State::from_block(&block).mix_columns();
        assert_eq!(
            [s.byte(0, 0), s.byte(1, 0), s.byte(2, 0), s.byte(3, 0)],
            [0x8e, 0x4d, 0xa1, 0xbc]
        );
    }

    #[test]
    fn mix_columns_zero_column_stays_zero() {
        let s = State::from_block(&[0u8; 16]).mix_columns();
        assert_eq!(s.to_block(), [0u8; 16]);
    }

    #[test]
    fn add_round_key_edge_cases() {
        let block: [u8; 16] = core::array::from_fn(|i| (i as u8).wrapping_mul(31));
        let s = State::from_block(&block);

        // all-zero key is the identity
        assert_eq!(s.add_round_key(&[0; 4]), s);

        // applying the same key twice cancels
        let rk = [0xdeadbeef, 0x01234567, 0x89abcdef, 0x55aa55aa];
        assert_eq!(s.add_round_key(&rk).add_round_key(&rk), s);

        // state equal to the key bytes zeroes out
        let mut kb = [0u8; 16];
        for c in 0..4 {
            kb[4 * c..4 * c + 4].copy_from_slice(&rk[c].to_be_bytes());
        }
        // kb is column-major by construction of add_round_key
        let zero = State::from_block(&kb).add_round_key(&rk);
        assert_eq!(zero.to_block(), [0u8; 16]);
    }

    proptest! {
        #[test]
        fn sub_bytes_inverts(block: [u8; 16]) {
            let s = State::from_block(&block);
            prop_assert_eq!(inv_sub(s.sub_bytes()), s);
        }

        #[test]
        fn shift_rows_inverts(block: [u8; 16]) {
            let s = State::from_block(&block);
            prop_assert_eq!(s.shift_rows().inv_shift_rows(), s);
            prop_assert_eq!(s.inv_shift_rows().shift_rows(), s);
        }

        #[test]
        fn mix_columns_inverts(block: [u8; 16]) {
            let s = State::from_block(&block);
            prop_assert_eq!(s.mix_columns().inv_mix_columns(), s);
        }
    }

    #[test]
    fn shift_rows_identity_on_uniform_columns() {
        let mut block = [0u8; 16];
        for c in 0..4 {
            for r in 0..4 {
                block[4 * c + r] = r as u8 * 50;
            }
        }
        let s = State::from_block(&block);
        assert_eq!(s.shift_rows(), s);
    }
}
