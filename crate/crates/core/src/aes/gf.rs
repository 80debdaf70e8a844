//! GF(2^8) arithmetic modulo the AES polynomial x^8 + x^4 + x^3 + x + 1.

/// Multiplies by x (i.e. 0x02), reducing modulo the field polynomial.
#[inline]
pub fn xtime(a: u8) -> u8 {
    (a << 1) ^ (((a >> 7) & 1) * 0x1b)
}

/// Field product of `a` and `b`, computed by repeated shifts.
#[inline]
pub fn gf_mul(a: u8, b: u8) -> u8 {
    let mut acc = 0u8;
    let mut shifted = a;
    for bit in 0..8 {
        acc ^= ((b >> bit) & 1).wrapping_neg() & shifted;
        shifted = xtime(shifted);
    }
    acc
}

/// Multiplicative inverse, found by exhaustive search; maps 0 to 0.
pub fn gf_inv(a: u8) -> u8 {
    if a == 0 {
        return 0;
    }
    for c in 1..=255u8 {
        if gf_mul(a, c) == 1 {
            return c;
        }
    }
    unreachable!("every nonzero element of GF(2^8) has an inverse")
}
