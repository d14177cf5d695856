//! HMAC-MD5 and authenticator comparison.

use md5::{Digest, Md5};

pub const HMAC_MD5_LEN: usize = 16;
const MD5_BLOCK: usize = 64;
const IPAD: u8 = 0x36;
const OPAD: u8 = 0x5c;

/// HMAC over MD5. Keys longer than one block are hashed first; shorter keys
/// are zero-padded to the block size.
pub fn hmac_md5(key: &[u8], data: &[u8]) -> [u8; HMAC_MD5_LEN] {
    let mut block = [0u8; MD5_BLOCK];
    if key.len() > MD5_BLOCK {
        block[..HMAC_MD5_LEN].copy_from_slice(&Md5::digest(key));
    } else {
        block[..key.len()].copy_from_slice(key);
    }

    let mut inner = Md5::new();
    inner.update(block.map(|b| b ^ IPAD));
    inner.update(data);
    let inner_hash = inner.finalize();

    let mut outer = Md5::new();
    outer.update(block.map(|b| b ^ OPAD));
    outer.update(inner_hash);
    outer.finalize().into()
}

/// Compares two authenticators without an early exit. Returns the verdict
/// and the number of octet positions examined.
pub(crate) fn ct_eq_counted(expected: &[u8], received: &[u8]) -> (bool, usize) {
    let mut diff = u8::from(expected.len() != received.len());
    let mut examined = 0;
    for (i, &e) in expected.iter().enumerate() {
        let r = received.get(i).copied().unwrap_or(!e);
        diff |= e ^ r;
        examined += 1;
    }
    (diff == 0, examined)
}

pub fn ct_eq(expected: &[u8], received: &[u8]) -> bool {
    ct_eq_counted(expected, received).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hi_there_vector() {
        let out = hmac_md5(&[0x0b; 16], b"Hi There");
        assert_eq!(hex::encode(out), "9294727a3638bb1c13f48ef8158bfc9d");
    }

    #[test]
    fn long_key_is_hashed() {
        let key = [0xaa; 80];
        let out = hmac_md5(&key, b"Test Using Larger Than Block-Size Key - Hash Key First");
        assert_eq!(hex::encode(out), "6b1ab7fe4bd7bf8f0b62e6ce61b9d0cd");
    }

    #[test]
    fn comparison_examines_every_octet() {
        let a = [7u8; 16];
        let mut first = a;
        first[0] ^= 1;
        let mut last = a;
        last[15] ^= 1;
        assert_eq!(ct_eq_counted(&a, &first), (false, 16));
        assert_eq!(ct_eq_counted(&a, &last), (false, 16));
        assert_eq!(ct_eq_counted(&a, &a), (true, 16));
        assert!(!ct_eq(&a, &a[..15]));
        assert!(!ct_eq(&a[..0], &a));
    }
}
