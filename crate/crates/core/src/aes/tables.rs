//! Lookup tables and their abstract addresses.
//!
//! Every table the cipher may read is assigned a contiguous range of abstract
//! addresses so the cache simulator can map reads onto lines. The tables are
//! materialized at startup from the S-box rather than hard-coded.

use super::gf::{gf_inv, gf_mul};
use super::sbox::{self, SBOX};

pub const T_TABLE_ENTRIES: usize = 256;
pub const T_TABLE_WIDTH: u32 = 4;
pub const SBOX_WIDTH: u32 = 1;

const T_TABLE_BYTES: u64 = (T_TABLE_ENTRIES as u64) * (T_TABLE_WIDTH as u64);
const SBOX_BYTES: u64 = 256;

/// Where the tables live in the abstract address space: four round tables,
/// the S-box, the inverse S-box, then the four inverse round tables, laid out
/// back to back.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
pub struct TableLayout {
    pub base: u64,
}

impl Default for TableLayout {
    fn default() -> Self {
        TableLayout { base: 0x10000 }
    }
}

impl TableLayout {
    pub fn new(base: u64) -> Self {
        TableLayout { base }
    }

    pub fn t_table(&self, i: usize) -> u64 {
        debug_assert!(i < 4);
        self.base + (i as u64) * T_TABLE_BYTES
    }

    pub fn sbox(&self) -> u64 {
        self.base + 4 * T_TABLE_BYTES
    }

    pub fn inv_sbox(&self) -> u64 {
        self.sbox() + SBOX_BYTES
    }

    pub fn inv_t_table(&self, i: usize) -> u64 {
        debug_assert!(i < 4);
        self.inv_sbox() + SBOX_BYTES + (i as u64) * T_TABLE_BYTES
    }
}

/// All tables a cipher instance reads, plus their layout.
#[derive(Clone)]
pub struct LookupTables {
    pub sbox: [u8; 256],
    pub inv_sbox: [u8; 256],
    /// Round tables fusing SubBytes, ShiftRows and MixColumns; `t[i]` is
    /// `t[0]` with every entry rotated right by `8 * i` bits.
    pub t: [[u32; 256]; 4],
    /// Inverse round tables for the equivalent inverse cipher.
    pub inv_t: [[u32; 256]; 4],
    /// GF(2^8) inverses, built once by exhaustive search; backs the
    /// arithmetic-only substitution path.
    pub gf_inverse: [u8; 256],
    pub layout: TableLayout,
}

impl LookupTables {
    pub fn new(layout: TableLayout) -> Self {
        let inv_sbox = sbox::invert(&SBOX);

        let mut t = [[0u32; 256]; 4];
        let mut inv_t = [[0u32; 256]; 4];
        for x in 0..256 {
            let s = SBOX[x];
            let e = u32::from_be_bytes([gf_mul(s, 0x02), s, s, gf_mul(s, 0x03)]);
            let is = inv_sbox[x];
            let d = u32::from_be_bytes([
                gf_mul(is, 0x0e),
                gf_mul(is, 0x09),
                gf_mul(is, 0x0d),
                gf_mul(is, 0x0b),
            ]);
            for i in 0..4 {
                t[i][x] = e.rotate_right(8 * i as u32);
                inv_t[i][x] = d.rotate_right(8 * i as u32);
            }
        }

        let mut gf_inverse = [0u8; 256];
        for (x, entry) in gf_inverse.iter_mut().enumerate() {
            *entry = gf_inv(x as u8);
        }

        LookupTables {
            sbox: SBOX,
            inv_sbox,
            t,
            inv_t,
            gf_inverse,
            layout,
        }
    }
}

impl Default for LookupTables {
    fn default() -> Self {
        LookupTables::new(TableLayout::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_table_entries_decompose() {
        let tables = LookupTables::default();
        for x in 0..256 {
            let s = SBOX[x];
            let bytes = tables.t[0][x].to_be_bytes();
            assert_eq!(bytes, [gf_mul(s, 0x02), s, s, gf_mul(s, 0x03)]);
            for i in 1..4 {
                assert_eq!(tables.t[i][x], tables.t[0][x].rotate_right(8 * i as u32));
            }
        }
    }

    #[test]
    fn known_round_table_entries() {
        let tables = LookupTables::default();
        assert_eq!(tables.t[0][0x00], 0xc663_63a5);
        assert_eq!(tables.t[0][0xff], 0x2c16_163a);
    }

    #[test]
    fn layout_is_contiguous() {
        let layout = TableLayout::default();
        assert_eq!(layout.t_table(0), 0x10000);
        assert_eq!(layout.t_table(3), 0x10000 + 3 * 1024);
        assert_eq!(layout.sbox(), 0x10000 + 4096);
        assert_eq!(layout.inv_sbox(), 0x10000 + 4096 + 256);
        assert_eq!(layout.inv_t_table(0), 0x10000 + 4096 + 512);
    }

    #[test]
    fn gf_inverse_table_matches_search() {
        let tables = LookupTables::default();
        for x in 0..=255u8 {
            assert_eq!(tables.gf_inverse[x as usize], gf_inv(x));
        }
    }
}
