//! Content digests used for image ids, config digests and artifact checks.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short (128-bit) content hash, the same width as the md5 ids of the
/// public dataset.
pub fn content_id(bytes: &[u8]) -> String {
    let mut id = sha256_hex(bytes);
    id.truncate(32);
    id
}

/// Digest of a value's canonical JSON form. Struct fields serialize in
/// declaration order and maps are `BTreeMap`s, so the encoding is stable.
pub fn json_digest<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes to JSON");
    sha256_hex(&bytes)
}

/// Digest of an id list, independent of input order.
pub fn id_list_digest<'a, I>(ids: I) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    let mut ids: Vec<&str> = ids.into_iter().collect();
    ids.sort_unstable();
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}
