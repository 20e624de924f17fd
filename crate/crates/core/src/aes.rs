//! Instrumented AES-128 (ECB, encryption only) in an unmasked and a
//! first-order Boolean-masked variant.
//!
//! Both variants log every leakage-relevant intermediate into an
//! [`ExecRecord`]. The two implementations are written independently; the
//! masked one only shares the S-box table, `xtime` and the key expansion.

use serde::{Deserialize, Serialize};

pub type KeyBytes = [u8; 16];
pub type PlainBytes = [u8; 16];
pub type CipherBytes = [u8; 16];

#[rustfmt::skip]
pub const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

const RCON: [u8; 10] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36];

#[inline]
pub fn sbox(x: u8) -> u8 {
    SBOX[x as usize]
}

/// Hamming weight of a byte.
#[inline]
pub fn hw(x: u8) -> u32 {
    x.count_ones()
}

#[inline]
fn xtime(x: u8) -> u8 {
    (x << 1) ^ (((x >> 7) & 1) * 0x1b)
}

/// 16 mask bytes with fixed roles.
///
/// * `m[0..4]`: MixColumns input masks, one per state row
/// * `m[4]`: S-box input mask
/// * `m[5]`: S-box output mask
/// * `m[6..10]`: per-row plaintext/state masks (MixColumns output masks)
/// * `m[10..16]`: unused by the cipher
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskVector(pub [u8; 16]);

impl MaskVector {
    pub const ZERO: MaskVector = MaskVector([0; 16]);

    /// Builds a mask vector the way the reference masked-AES design does:
    /// `m[6..10]` is the MixColumns image of `m[0..4]`, so no mask fix-up
    /// is needed after MixColumns.
    pub fn from_random(mut raw: [u8; 16]) -> Self {
        let mc = mix_column([raw[0], raw[1], raw[2], raw[3]]);
        raw[6..10].copy_from_slice(&mc);
        MaskVector(raw)
    }

    pub fn sbox_in(&self) -> u8 {
        self.0[4]
    }

    pub fn sbox_out(&self) -> u8 {
        self.0[5]
    }

    /// State mask for the given row between rounds.
    pub fn row_mask(&self, row: usize) -> u8 {
        self.0[6 + row]
    }

    /// MixColumns input mask for the given row.
    pub fn column_mask(&self, row: usize) -> u8 {
        self.0[row]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpTag {
    AddRoundKeyOut,
    SboxOut,
    ShiftRowsOut,
    RemaskOut,
    MixColumnsOut,
    Other,
}

impl OpTag {
    pub fn as_str(self) -> &'static str {
        match self {
            OpTag::AddRoundKeyOut => "add_round_key_out",
            OpTag::SboxOut => "sbox_out",
            OpTag::ShiftRowsOut => "shift_rows_out",
            OpTag::RemaskOut => "remask_out",
            OpTag::MixColumnsOut => "mix_columns_out",
            OpTag::Other => "other",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExecEntry {
    pub op: OpTag,
    pub round: u8,
    pub byte_index: u8,
    pub value: u8,
}

/// Execution-ordered log of intermediate bytes from one encryption.
///
/// In a masked run every value is the masked intermediate as it exists in
/// the device state. The final key addition (tagged [`OpTag::Other`] in
/// round 10) is the ciphertext itself.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecRecord {
    entries: Vec<ExecEntry>,
}

impl ExecRecord {
    fn with_capacity(n: usize) -> Self {
        ExecRecord {
            entries: Vec::with_capacity(n),
        }
    }

    fn push_state(&mut self, op: OpTag, round: u8, state: &[u8; 16]) {
        for (i, &value) in state.iter().enumerate() {
            self.entries.push(ExecEntry {
                op,
                round,
                byte_index: i as u8,
                value,
            });
        }
    }

    pub fn entries(&self) -> &[ExecEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Position of the first entry with the given tag, or `None`.
    pub fn position(&self, op: OpTag, round: u8, byte_index: u8) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.op == op && e.round == round && e.byte_index == byte_index)
    }

    pub fn value(&self, op: OpTag, round: u8, byte_index: u8) -> Option<u8> {
        self.position(op, round, byte_index)
            .map(|p| self.entries[p].value)
    }
}

/// Expands a 128-bit key into the 11 round keys.
pub fn expand_key(key: &KeyBytes) -> [[u8; 16]; 11] {
    let mut rk = [[0u8; 16]; 11];
    rk[0] = *key;
    for r in 1..11 {
        let prev = rk[r - 1];
        let mut t = [prev[13], prev[14], prev[15], prev[12]];
        for b in t.iter_mut() {
            *b = sbox(*b);
        }
        t[0] ^= RCON[r - 1];
        let mut next = [0u8; 16];
        for c in 0..4 {
            for row in 0..4 {
                let w = if c == 0 { t[row] } else { next[(c - 1) * 4 + row] };
                next[c * 4 + row] = prev[c * 4 + row] ^ w;
            }
        }
        rk[r] = next;
    }
    rk
}

fn shift_rows(s: &mut [u8; 16]) {
    let old = *s;
    for c in 0..4 {
        for row in 0..4 {
            s[c * 4 + row] = old[((c + row) % 4) * 4 + row];
        }
    }
}

fn mix_column(col: [u8; 4]) -> [u8; 4] {
    let t = col[0] ^ col[1] ^ col[2] ^ col[3];
    [
        col[0] ^ t ^ xtime(col[0] ^ col[1]),
        col[1] ^ t ^ xtime(col[1] ^ col[2]),
        col[2] ^ t ^ xtime(col[2] ^ col[3]),
        col[3] ^ t ^ xtime(col[3] ^ col[0]),
    ]
}

fn mix_columns(s: &mut [u8; 16]) {
    for c in 0..4 {
        let col = [s[c * 4], s[c * 4 + 1], s[c * 4 + 2], s[c * 4 + 3]];
        s[c * 4..c * 4 + 4].copy_from_slice(&mix_column(col));
    }
}

fn xor_in(s: &mut [u8; 16], k: &[u8; 16]) {
    for (a, b) in s.iter_mut().zip(k) {
        *a ^= b;
    }
}

const RECORD_LEN: usize = 16 * (9 * 5 + 4);

/// Plain AES-128 encryption.
pub fn aes128_encrypt(key: &KeyBytes, pt: &PlainBytes) -> (CipherBytes, ExecRecord) {
    let rk = expand_key(key);
    let mut rec = ExecRecord::with_capacity(RECORD_LEN);
    let mut s = *pt;
    for round in 1..=10u8 {
        xor_in(&mut s, &rk[round as usize - 1]);
        rec.push_state(OpTag::AddRoundKeyOut, round, &s);
        for b in s.iter_mut() {
            *b = sbox(*b);
        }
        rec.push_state(OpTag::SboxOut, round, &s);
        shift_rows(&mut s);
        rec.push_state(OpTag::ShiftRowsOut, round, &s);
        if round < 10 {
            // No mask to swap; logged so masked and unmasked records align.
            rec.push_state(OpTag::RemaskOut, round, &s);
            mix_columns(&mut s);
            rec.push_state(OpTag::MixColumnsOut, round, &s);
        }
    }
    xor_in(&mut s, &rk[10]);
    rec.push_state(OpTag::Other, 10, &s);
    (s, rec)
}

/// S-box table masked on input with `m_in` and on output with `m_out`:
/// `table[x ^ m_in] == SBOX[x] ^ m_out`.
pub fn masked_sbox_table(m_in: u8, m_out: u8) -> [u8; 256] {
    let mut t = [0u8; 256];
    for x in 0..256usize {
        t[x ^ m_in as usize] = SBOX[x] ^ m_out;
    }
    t
}

/// First-order Boolean-masked AES-128.
///
/// Mask flow per round: the state enters AddRoundKey masked per row with
/// `m[6+row]`, the round key is masked with `m[6+row] ^ m[4]`, so the
/// S-box input carries the uniform mask `m[4]` and its output `m[5]`.
/// Remask swaps `m[5]` for the per-row MixColumns input masks `m[0..4]`;
/// after MixColumns the state is brought back to `m[6..10]` (a no-op when
/// the vector comes from [`MaskVector::from_random`]). The last round key
/// is masked with `m[5]` so the output is unmasked.
pub fn masked_aes128_encrypt(
    key: &KeyBytes,
    pt: &PlainBytes,
    m: &MaskVector,
) -> (CipherBytes, ExecRecord) {
    let rk = expand_key(key);
    let table = masked_sbox_table(m.sbox_in(), m.sbox_out());
    let mc_mask = mix_column([m.0[0], m.0[1], m.0[2], m.0[3]]);

    let mut rec = ExecRecord::with_capacity(RECORD_LEN);
    let mut s = [0u8; 16];
    for (i, b) in s.iter_mut().enumerate() {
        *b = pt[i] ^ m.row_mask(i % 4);
    }

    for round in 1..=10u8 {
        let mut masked_key = rk[round as usize - 1];
        for (i, b) in masked_key.iter_mut().enumerate() {
            *b ^= m.row_mask(i % 4) ^ m.sbox_in();
        }
        xor_in(&mut s, &masked_key);
        rec.push_state(OpTag::AddRoundKeyOut, round, &s);
        for b in s.iter_mut() {
            *b = table[*b as usize];
        }
        rec.push_state(OpTag::SboxOut, round, &s);
        shift_rows(&mut s);
        rec.push_state(OpTag::ShiftRowsOut, round, &s);
        if round < 10 {
            for (i, b) in s.iter_mut().enumerate() {
                *b ^= m.sbox_out() ^ m.column_mask(i % 4);
            }
            rec.push_state(OpTag::RemaskOut, round, &s);
            mix_columns(&mut s);
            for (i, b) in s.iter_mut().enumerate() {
                *b ^= mc_mask[i % 4] ^ m.row_mask(i % 4);
            }
            rec.push_state(OpTag::MixColumnsOut, round, &s);
        }
    }
    let mut last = rk[10];
    for b in last.iter_mut() {
        *b ^= m.sbox_out();
    }
    xor_in(&mut s, &last);
    rec.push_state(OpTag::Other, 10, &s);
    (s, rec)
}
