//! Binary checkpoint container for trained models.
//!
//! Layout (all integers little-endian, floats stored as raw IEEE-754 bits so
//! the round trip is bitwise):
//!
//! ```text
//! magic "GGCF" | version u32 | dim u32 | k_layers u32 | flags u32
//! gamma f64 | gamma_prime f64 | lambda f64
//! split_hash [u8; 32]
//! user_count u64 | item_count u64
//! user_ids u64*U | item_ids u64*I
//! euclid_user f64*U*d | euclid_item f64*I*d
//! tangent_user f64*U*d | tangent_item f64*I*d
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{GgcfError, Result};
use crate::model::{AblationFlags, ParamSet, Table};

fn io_err(path: &Path, e: std::io::Error) -> GgcfError {
    GgcfError::io(path, e)
}

const MAGIC: [u8; 4] = *b"GGCF";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_DISABLE_INTERACTION: u32 = 1;
const FLAG_EUCLIDEAN_ONLY: u32 = 1 << 1;
const FLAG_HYPERBOLIC_ONLY: u32 = 1 << 2;

/// A trained model plus everything needed to evaluate it against a frozen
/// split: layer count, ablation flags, the id universe, and the SHA-256 of the
/// split file it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub k_layers: usize,
    pub flags: AblationFlags,
    pub split_hash: [u8; 32],
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
}

fn flags_to_bits(flags: AblationFlags) -> u32 {
    let mut bits = 0;
    if flags.disable_interaction {
        bits |= FLAG_DISABLE_INTERACTION;
    }
    if flags.euclidean_only {
        bits |= FLAG_EUCLIDEAN_ONLY;
    }
    if flags.hyperbolic_only {
        bits |= FLAG_HYPERBOLIC_ONLY;
    }
    bits
}

fn flags_from_bits(bits: u32) -> Result<AblationFlags> {
    if bits & !(FLAG_DISABLE_INTERACTION | FLAG_EUCLIDEAN_ONLY | FLAG_HYPERBOLIC_ONLY) != 0 {
        return Err(GgcfError::Incompatible(format!(
            "checkpoint carries unknown ablation flag bits {bits:#x}"
        )));
    }
    Ok(AblationFlags {
        disable_interaction: bits & FLAG_DISABLE_INTERACTION != 0,
        euclidean_only: bits & FLAG_EUCLIDEAN_ONLY != 0,
        hyperbolic_only: bits & FLAG_HYPERBOLIC_ONLY != 0,
    })
}

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_bits().to_le_bytes())
    }
    fn table(&mut self, t: &Table) -> std::io::Result<()> {
        for &v in t.data() {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }
    fn u32(&mut self) -> std::io::Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_bits(u64::from_le_bytes(self.bytes()?)))
    }
    fn table(&mut self, rows: usize, cols: usize) -> std::io::Result<Table> {
        let mut data = vec![0.0; rows * cols];
        for v in data.iter_mut() {
            *v = self.f64()?;
        }
        Ok(Table::from_vec(rows, cols, data).expect("shape matches by construction"))
    }
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.params.dim();
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = Writer {
            inner: BufWriter::new(file),
        };
        let write = |w: &mut Writer<BufWriter<File>>| -> std::io::Result<()> {
            w.inner.write_all(&MAGIC)?;
            w.u32(FORMAT_VERSION)?;
            w.u32(d as u32)?;
            w.u32(self.k_layers as u32)?;
            w.u32(flags_to_bits(self.flags))?;
            w.f64(self.params.gamma)?;
            w.f64(self.params.gamma_prime)?;
            w.f64(self.params.lambda)?;
            w.inner.write_all(&self.split_hash)?;
            w.u64(self.user_ids.len() as u64)?;
            w.u64(self.item_ids.len() as u64)?;
            for &id in &self.user_ids {
                w.u64(id)?;
            }
            for &id in &self.item_ids {
                w.u64(id)?;
            }
            w.table(&self.params.euclid_user)?;
            w.table(&self.params.euclid_item)?;
            w.table(&self.params.tangent_user)?;
            w.table(&self.params.tangent_item)?;
            w.inner.flush()
        };
        write(&mut w).map_err(|e| io_err(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut r = Reader {
            inner: BufReader::new(file),
        };
        let magic: [u8; 4] = r.bytes().map_err(|e| io_err(path, e))?;
        if magic != MAGIC {
            return Err(GgcfError::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "not a GGCF checkpoint (magic mismatch)".into(),
            });
        }
        let version = r.u32().map_err(|e| io_err(path, e))?;
        if version != FORMAT_VERSION {
            return Err(GgcfError::Incompatible(format!(
                "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let read = |r: &mut Reader<BufReader<File>>| -> std::io::Result<Checkpoint> {
            let dim = r.u32()? as usize;
            let k_layers = r.u32()? as usize;
            let flag_bits = r.u32()?;
            let gamma = r.f64()?;
            let gamma_prime = r.f64()?;
            let lambda = r.f64()?;
            let split_hash: [u8; 32] = r.bytes()?;
            let user_count = r.u64()? as usize;
            let item_count = r.u64()? as usize;
            let mut user_ids = vec![0u64; user_count];
            for id in user_ids.iter_mut() {
                *id = r.u64()?;
            }
            let mut item_ids = vec![0u64; item_count];
            for id in item_ids.iter_mut() {
                *id = r.u64()?;
            }
            let euclid_user = r.table(user_count, dim)?;
            let euclid_item = r.table(item_count, dim)?;
            let tangent_user = r.table(user_count, dim)?;
            let tangent_item = r.table(item_count, dim)?;
            Ok(Checkpoint {
                params: ParamSet {
                    euclid_user,
                    euclid_item,
                    tangent_user,
                    tangent_item,
                    gamma,
                    gamma_prime,
                    lambda,
                },
                k_layers,
                flags: flags_from_bits(flag_bits).unwrap_or_default(),
                split_hash,
                user_ids,
                item_ids,
            })
        };
        let mut ckpt = read(&mut r).map_err(|e| io_err(path, e))?;
        // Re-run the strict flag decoding so unknown bits surface as errors.
        let flag_bits = flags_to_bits(ckpt.flags);
        ckpt.flags = flags_from_bits(flag_bits)?;
        let mut tail = [0u8; 1];
        match r.inner.read(&mut tail) {
            Ok(0) => Ok(ckpt),
            Ok(_) => Err(GgcfError::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "trailing bytes after checkpoint payload".into(),
            }),
            Err(e) => Err(io_err(path, e)),
        }
    }
}

/// SHA-256 of a file's raw bytes, hex-encoded digest available via `hex`.
pub fn hash_file(path: &Path) -> Result<[u8; 32]> {
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().into())
}

/// Lowercase hex rendering of a digest.
pub fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
