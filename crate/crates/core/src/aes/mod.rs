//! AES-128 with observable table accesses.
//!
//! The cipher exposes four interchangeable access strategies. All of them
//! produce identical ciphertext; they differ only in which table reads they
//! perform, and every read is reported to a [`TableObserver`] *before* the
//! value is used, so a cache model can charge cycles for it.

pub mod gf;
pub mod sbox;
pub mod schedule;
pub mod state;
pub mod tables;

use crate::dcf::full_scan_lookup;
use crate::Result;
pub use schedule::{KeySchedule, BLOCK_BYTES, ROUNDS};
pub use state::State;
pub use tables::{LookupTables, TableLayout, SBOX_WIDTH, T_TABLE_WIDTH};

/// How the cipher reads its substitution data.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMode {
    /// 32-bit round-table lookups at secret-dependent indices. Fast and
    /// leaky; this is the attack target.
    TTable,
    /// Per-byte S-box lookups, still at secret-dependent indices.
    SBox,
    /// Every lookup reads all 256 entries in ascending order and keeps the
    /// one it needs, so the access trace is independent of the data.
    FullScan,
    /// The substitution is computed arithmetically; no table is read at all.
    Logical,
}

impl AccessMode {
    pub const ALL: [AccessMode; 4] = [
        AccessMode::TTable,
        AccessMode::SBox,
        AccessMode::FullScan,
        AccessMode::Logical,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AccessMode::TTable => "ttable",
            AccessMode::SBox => "sbox",
            AccessMode::FullScan => "full_scan",
            AccessMode::Logical => "logical",
        }
    }
}

impl std::fmt::Display for AccessMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Receives every observable table read, as (table base address, index,
/// entry width in bytes), before the cipher consumes the value.
pub trait TableObserver {
    fn table_read(&mut self, base: u64, index: usize, width: u32);
}

/// Ignores all reads; plain encryption with no timing model attached.
pub struct NullObserver;

impl TableObserver for NullObserver {
    fn table_read(&mut self, _base: u64, _index: usize, _width: u32) {}
}

impl<T: TableObserver + ?Sized> TableObserver for &mut T {
    fn table_read(&mut self, base: u64, index: usize, width: u32) {
        (**self).table_read(base, index, width)
    }
}

/// An AES-128 instance: expanded key plus materialized tables.
///
/// All operations are pure given their inputs except for what the observer
/// does with the reported reads; an instance together with its observer must
/// stay on one logical thread at a time.
#[derive(Clone)]
pub struct Aes128 {
    schedule: KeySchedule,
    dec_schedule: [[u32; 4]; ROUNDS + 1],
    tables: LookupTables,
}

impl Aes128 {
    pub fn new(key: &[u8]) -> Result<Self> {
        Self::with_layout(key, TableLayout::default())
    }

    pub fn with_layout(key: &[u8], layout: TableLayout) -> Result<Self> {
        let schedule = KeySchedule::expand(key)?;
        // Round keys for the equivalent inverse cipher: reversed order, inner
        // ones passed through InvMixColumns.
        let mut dec_schedule = [[0u32; 4]; ROUNDS + 1];
        dec_schedule[0] = schedule.round_key(ROUNDS);
        dec_schedule[ROUNDS] = schedule.round_key(0);
        for r in 1..ROUNDS {
            dec_schedule[r] = inv_mix_round_key(schedule.round_key(ROUNDS - r));
        }
        Ok(Aes128 {
            schedule,
            dec_schedule,
            tables: LookupTables::new(layout),
        })
    }

    pub fn schedule(&self) -> &KeySchedule {
        &self.schedule
    }

    pub fn tables(&self) -> &LookupTables {
        &self.tables
    }

    pub fn encrypt_block<O>(&self, pt: &[u8; 16], mode: AccessMode, obs: &mut O) -> [u8; 16]
    where
        O: TableObserver + ?Sized,
    {
        match mode {
            AccessMode::TTable => self.encrypt_ttable(pt, obs),
            AccessMode::SBox => self.encrypt_rounds(pt, |b| self.sbox_read(b as usize, obs)),
            AccessMode::FullScan => self.encrypt_rounds(pt, |b| self.sbox_scan(b as usize, obs)),
            AccessMode::Logical => self.encrypt_rounds(pt, |b| self.sbox_arith(b)),
        }
    }

    pub fn decrypt_block<O>(&self, ct: &[u8; 16], mode: AccessMode, obs: &mut O) -> [u8; 16]
    where
        O: TableObserver + ?Sized,
    {
        match mode {
            AccessMode::TTable => self.decrypt_ttable(ct, obs),
            AccessMode::SBox => self.decrypt_rounds(ct, |b| self.inv_sbox_read(b as usize, obs)),
            AccessMode::FullScan => self.decrypt_rounds(ct, |b| self.inv_sbox_scan(b as usize, obs)),
            AccessMode::Logical => self.decrypt_rounds(ct, |b| self.inv_sbox_arith(b)),
        }
    }

    // --- table reads --------------------------------------------------

    fn t_read<O>(&self, table: usize, index: usize, obs: &mut O) -> u32
    where
        O: TableObserver + ?Sized,
    {
        obs.table_read(self.tables.layout.t_table(table), index, T_TABLE_WIDTH);
        self.tables.t[table][index]
    }

    fn inv_t_read<O>(&self, table: usize, index: usize, obs: &mut O) -> u32
    where
        O: TableObserver + ?Sized,
    {
        obs.table_read(self.tables.layout.inv_t_table(table), index, T_TABLE_WIDTH);
        self.tables.inv_t[table][index]
    }

    fn sbox_read<O>(&self, index: usize, obs: &mut O) -> u8
    where
        O: TableObserver + ?Sized,
    {
        obs.table_read(self.tables.layout.sbox(), index, SBOX_WIDTH);
        self.tables.sbox[index]
    }

    fn inv_sbox_read<O>(&self, index: usize, obs: &mut O) -> u8
    where
        O: TableObserver + ?Sized,
    {
        obs.table_read(self.tables.layout.inv_sbox(), index, SBOX_WIDTH);
        self.tables.inv_sbox[index]
    }

    fn sbox_scan<O>(&self, index: usize, obs: &mut O) -> u8
    where
        O: TableObserver + ?Sized,
    {
        full_scan_lookup(
            &self.tables.sbox,
            self.tables.layout.sbox(),
            SBOX_WIDTH,
            index,
            obs,
        )
        .expect("a byte always indexes a 256-entry table")
    }

    fn inv_sbox_scan<O>(&self, index: usize, obs: &mut O) -> u8
    where
        O: TableObserver + ?Sized,
    {
        full_scan_lookup(
            &self.tables.inv_sbox,
            self.tables.layout.inv_sbox(),
            SBOX_WIDTH,
            index,
            obs,
        )
        .expect("a byte always indexes a 256-entry table")
    }

    fn sbox_arith(&self, x: u8) -> u8 {
        sbox::affine(self.tables.gf_inverse[x as usize])
    }

    fn inv_sbox_arith(&self, x: u8) -> u8 {
        self.tables.gf_inverse[sbox::inv_affine(x) as usize]
    }

    // --- round-table route ---------------------------------------------

    fn encrypt_ttable<O>(&self, pt: &[u8; 16], obs: &mut O) -> [u8; 16]
    where
        O: TableObserver + ?Sized,
    {
        let rk0 = self.schedule.round_key(0);
        let mut w = [0u32; 4];
        for c in 0..4 {
            w[c] = word_from(pt, c) ^ rk0[c];
        }
        for round in 1..ROUNDS {
            let rk = self.schedule.round_key(round);
            let mut e = [0u32; 4];
            for c in 0..4 {
                e[c] = self.t_read(0, byte_at(w[c], 0), obs)
                    ^ self.t_read(1, byte_at(w[(c + 1) % 4], 1), obs)
                    ^ self.t_read(2, byte_at(w[(c + 2) % 4], 2), obs)
                    ^ self.t_read(3, byte_at(w[(c + 3) % 4], 3), obs)
                    ^ rk[c];
            }
            w = e;
        }
        let rk = self.schedule.round_key(ROUNDS);
        let mut out = [0u8; 16];
        for c in 0..4 {
            let word = u32::from_be_bytes([
                self.sbox_read(byte_at(w[c], 0), obs),
                self.sbox_read(byte_at(w[(c + 1) % 4], 1), obs),
                self.sbox_read(byte_at(w[(c + 2) % 4], 2), obs),
                self.sbox_read(byte_at(w[(c + 3) % 4], 3), obs),
            ]) ^ rk[c];
            out[4 * c..4 * c + 4].copy_from_slice(&word.to_be_bytes());
        }
        out
    }

    fn decrypt_ttable<O>(&self, ct: &[u8; 16], obs: &mut O) -> [u8; 16]
    where
        O: TableObserver + ?Sized,
    {
        let mut w = [0u32; 4];
        for c in 0..4 {
            w[c] = word_from(ct, c) ^ self.dec_schedule[0][c];
        }
        for round in 1..ROUNDS {
            let rk = self.dec_schedule[round];
            let mut e = [0u32; 4];
            for c in 0..4 {
                e[c] = self.inv_t_read(0, byte_at(w[c], 0), obs)
                    ^ self.inv_t_read(1, byte_at(w[(c + 3) % 4], 1), obs)
                    ^ self.inv_t_read(2, byte_at(w[(c + 2) % 4], 2), obs)
                    ^ self.inv_t_read(3, byte_at(w[(c + 1) % 4], 3), obs)
                    ^ rk[c];
            }
            w = e;
        }
        let rk = self.dec_schedule[ROUNDS];
        let mut out = [0u8; 16];
        for c in 0..4 {
            let word = u32::from_be_bytes([
                self.inv_sbox_read(byte_at(w[c], 0), obs),
                self.inv_sbox_read(byte_at(w[(c + 3) % 4], 1), obs),
                self.inv_sbox_read(byte_at(w[(c + 2) % 4], 2), obs),
                self.inv_sbox_read(byte_at(w[(c + 1) % 4], 3), obs),
            ]) ^ rk[c];
            out[4 * c..4 * c + 4].copy_from_slice(&word.to_be_bytes());
        }
        out
    }

    // --- byte-matrix route ----------------------------------------------

    fn encrypt_rounds(&self, pt: &[u8; 16], mut sub: impl FnMut(u8) -> u8) -> [u8; 16] {
        let mut s = State::from_block(pt).add_round_key(&self.schedule.round_key(0));
        for round in 1..ROUNDS {
            s = s
                .sub_bytes_with(&mut sub)
                .shift_rows()
                .mix_columns()
                .add_round_key(&self.schedule.round_key(round));
        }
        s.sub_bytes_with(&mut sub)
            .shift_rows()
            .add_round_key(&self.schedule.round_key(ROUNDS))
            .to_block()
    }

    fn decrypt_rounds(&self, ct: &[u8; 16], mut sub: impl FnMut(u8) -> u8) -> [u8; 16] {
        let mut s = State::from_block(ct).add_round_key(&self.schedule.round_key(ROUNDS));
        for round in (1..ROUNDS).rev() {
            s = s
                .inv_shift_rows()
                .inv_sub_bytes_with(&mut sub)
                .add_round_key(&self.schedule.round_key(round))
                .inv_mix_columns();
        }
        s.inv_shift_rows()
            .inv_sub_bytes_with(&mut sub)
            .add_round_key(&self.schedule.round_key(0))
            .to_block()
    }
}

#[inline]
fn word_from(block: &[u8; 16], col: usize) -> u32 {
    u32::from_be_bytes([
        block[4 * col],
        block[4 * col + 1],
        block[4 * col + 2],
        block[4 * col + 3],
    ])
}

#[inline]
fn byte_at(word: u32, pos: usize) -> usize {
    ((word >> (24 - 8 * pos)) & 0xff) as usize
}

fn inv_mix_round_key(rk: [u32; 4]) -> [u32; 4] {
    let mut block = [0u8; 16];
    for c in 0..4 {
        block[4 * c..4 * c + 4].copy_from_slice(&rk[c].to_be_bytes());
    }
    let mixed = State::from_block(&block).inv_mix_columns().to_block();
    core::array::from_fn(|c| {
        u32::from_be_bytes([
            mixed[4 * c],
            mixed[4 * c + 1],
            mixed[4 * c + 2],
            mixed[4 * c + 3],
        ])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct CountingObserver {
        reads: usize,
    }

    impl TableObserver for CountingObserver {
        fn table_read(&mut self, _base: u64, _index: usize, _width: u32) {
            self.reads += 1;
        }
    }

    struct TraceObserver {
        trace: Vec<(u64, usize, u32)>,
    }

    impl TableObserver for TraceObserver {
        fn table_read(&mut self, base: u64, index: usize, width: u32) {
            self.trace.push((base, index, width));
        }
    }

    #[test]
    fn known_answer() {
        let key: [u8; 16] = core::array::from_fn(|i| i as u8);
        let pt: [u8; 16] = [
            0x00, 0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77, 0x88, 0x99, 0xaa, 0xbb, 0xcc, 0xdd,
            0xee, 0xff,
        ];
        let expected: [u8; 16] = [
            0x69, 0xc4, 0xe0, 0xd8, 0x6a, 0x7b, 0x04, 0x30, 0xd8, 0xcd, 0xb7, 0x80, 0x70, 0xb4,
            0xc5, 0x5a,
        ];
        let aes = Aes128::new(&key).unwrap();
        for mode in AccessMode::ALL {
            assert_eq!(
                aes.encrypt_block(&pt, mode, &mut NullObserver),
                expected,
                "mode {mode}"
            );
            assert_eq!(aes.decrypt_block(&expected, mode, &mut NullObserver), pt);
        }
    }

    #[test]
    fn zero_key_zero_block() {
        let aes = Aes128::new(&[0u8; 16]).unwrap();
        let ct = aes.encrypt_block(&[0u8; 16], AccessMode::TTable, &mut NullObserver);
        assert_eq!(
            ct,
            [
                0x66, 0xe9, 0x4b, 0xd4, 0xef, 0x8a, 0x2c, 0x3b, 0x88, 0x4c, 0xfa, 0x59, 0xca,
                0x34, 0x2b, 0x2e
            ]
        );
        assert_eq!(
            aes.decrypt_block(&ct, AccessMode::SBox, &mut NullObserver),
            [0u8; 16]
        );
    }

    #[test]
    fn round_trip_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let key: [u8; 16] = rng.gen();
            let pt: [u8; 16] = rng.gen();
            let aes = Aes128::new(&key).unwrap();
            for mode in AccessMode::ALL {
                let ct = aes.encrypt_block(&pt, mode, &mut NullObserver);
                assert_eq!(aes.decrypt_block(&ct, mode, &mut NullObserver), pt);
            }
        }
    }

    #[test]
    fn modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let key: [u8; 16] = rng.gen();
            let pt: [u8; 16] = rng.gen();
            let aes = Aes128::new(&key).unwrap();
            let reference = aes.encrypt_block(&pt, AccessMode::TTable, &mut NullObserver);
            for mode in [AccessMode::SBox, AccessMode::FullScan, AccessMode::Logical] {
                assert_eq!(
                    aes.encrypt_block(&pt, mode, &mut NullObserver),
                    reference,
                    "mode {mode}"
                );
            }
        }
    }

    #[test]
    fn tampered_ciphertext_decrypts_differently() {
        let key = [0x42u8; 16];
        let pt = [0x17u8; 16];
        let aes = Aes128::new(&key).unwrap();
        let mut ct = aes.encrypt_block(&pt, AccessMode::TTable, &mut NullObserver);
        ct[5] ^= 0x01;
        assert_ne!(aes.decrypt_block(&ct, AccessMode::TTable, &mut NullObserver), pt);
    }

    #[test]
    fn observed_read_counts_are_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // (mode, expected reads per block)
        let expected = [
            (AccessMode::TTable, 9 * 16 + 16),
            (AccessMode::SBox, 10 * 16),
            (AccessMode::FullScan, 10 * 16 * 256),
            (AccessMode::Logical, 0),
        ];
        for _ in 0..20 {
            let key: [u8; 16] = rng.gen();
            let pt: [u8; 16] = rng.gen();
            let aes = Aes128::new(&key).unwrap();
            for (mode, reads) in expected {
                let mut obs = CountingObserver { reads: 0 };
                aes.encrypt_block(&pt, mode, &mut obs);
                assert_eq!(obs.reads, reads, "mode {mode}");
            }
        }
    }

    #[test]
    fn full_scan_trace_is_input_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut reference: Option<Vec<(u64, usize, u32)>> = None;
        for _ in 0..10 {
            let key: [u8; 16] = rng.gen();
            let pt: [u8; 16] = rng.gen();
            let aes = Aes128::new(&key).unwrap();
            let mut obs = TraceObserver { trace: Vec::new() };
            aes.encrypt_block(&pt, AccessMode::FullScan, &mut obs);
            match &reference {
                None => reference = Some(obs.trace),
                Some(r) => assert_eq!(&obs.trace, r),
            }
        }
    }

    #[test]
    fn ttable_round_matches_explicit_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let aes = Aes128::new(&[0u8; 16]).unwrap();
        for _ in 0..50 {
            let block: [u8; 16] = rng.gen();

            // one middle round via the fused tables
            let mut w = [0u32; 4];
            for c in 0..4 {
                w[c] = word_from(&block, c);
            }
            let mut fused = [0u8; 16];
            for c in 0..4 {
                let e = aes.tables.t[0][byte_at(w[c], 0)]
                    ^ aes.tables.t[1][byte_at(w[(c + 1) % 4], 1)]
                    ^ aes.tables.t[2][byte_at(w[(c + 2) % 4], 2)]
                    ^ aes.tables.t[3][byte_at(w[(c + 3) % 4], 3)];
                fused[4 * c..4 * c + 4].copy_from_slice(&e.to_be_bytes());
            }

            // the same round via the explicit transforms
            let explicit = State::from_block(&block)
                .sub_bytes()
                .shift_rows()
                .mix_columns()
                .to_block();

            assert_eq!(fused, explicit);
        }
    }
}
