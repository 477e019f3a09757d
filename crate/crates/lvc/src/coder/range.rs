//! Byte-oriented range coder over the fixed-precision tables from
//! [`super::entropy`].
//!
//! Carry propagation uses the cache/pending-0xFF scheme: the encoder's first
//! output byte only ever absorbs a carry ripple, so it is dropped and the
//! decoder initializes from four payload bytes. Flushing costs exactly four
//! bytes per stream, which is the documented per-stream overhead.
//!
//! Lattice values outside a symbol's table window are coded through the
//! escape slot followed by the zigzagged offset as four raw bytes.

use thiserror::Error;

use super::entropy::{quantize_params, SymbolTable, CDF_PRECISION};

const TOP: u32 = 1 << 24;
const TOTAL: u32 = 1 << CDF_PRECISION;

/// Flush cost of one stream, in bytes.
pub const STREAM_FLUSH_BYTES: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RangeCodingError {
    #[error("payload exhausted at symbol {symbol}")]
    Truncated { symbol: usize },
    #[error("inconsistent payload at symbol {symbol}")]
    Corrupt { symbol: usize },
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    first_byte_pending: bool,
    out: Vec<u8>,
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            first_byte_pending: true,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.emit(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        // The top byte is now tracked by cache/cache_size; keep 32 bits.
        self.low = u64::from((self.low as u32) << 8);
    }

    fn emit(&mut self, byte: u8) {
        if self.first_byte_pending {
            // The initial cache byte carries no payload information.
            self.first_byte_pending = false;
            debug_assert!(byte <= 1, "dropped byte is a pure carry ripple");
        } else {
            self.out.push(byte);
        }
    }

    /// Encode one slot given its cumulative frequency range.
    fn encode_range(&mut self, cum_lo: u32, cum_hi: u32) {
        debug_assert!(cum_lo < cum_hi && cum_hi <= TOTAL);
        let r = self.range >> CDF_PRECISION;
        self.low += u64::from(r) * u64::from(cum_lo);
        self.range = r * (cum_hi - cum_lo);
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    /// Encode one lattice value against its symbol table.
    pub fn encode_symbol(&mut self, k: i64, table: &SymbolTable) {
        let slot = table.slot_of(k);
        let (lo, hi) = table.freq_range(slot);
        self.encode_range(lo, hi);
        if slot == table.escape_slot() {
            let delta = k - table.center;
            let zz = zigzag(delta);
            for shift in [24, 16, 8, 0] {
                self.encode_raw_byte((zz >> shift) as u8);
            }
        }
    }

    fn encode_raw_byte(&mut self, byte: u8) {
        let lo = u32::from(byte) << 8;
        self.encode_range(lo, lo + (1 << 8));
    }

    /// Flush and return the payload.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

pub struct RangeDecoder<'a> {
    range: u32,
    code: u32,
    bytes: &'a [u8],
    pos: usize,
    overrun: bool,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        let mut d = RangeDecoder {
            range: u32::MAX,
            code: 0,
            bytes,
            pos: 0,
            overrun: false,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | u32::from(d.next_byte());
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        if self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            self.pos += 1;
            b
        } else {
            self.overrun = true;
            0
        }
    }

    fn decode_range(&mut self, symbol: usize, table_find: impl Fn(u32) -> (usize, u32, u32))
        -> Result<usize, RangeCodingError>
    {
        let r = self.range >> CDF_PRECISION;
        let f = (self.code / r).min(TOTAL - 1);
        let (slot, lo, hi) = table_find(f);
        let base = r * lo;
        if self.code < base {
            return Err(RangeCodingError::Corrupt { symbol });
        }
        self.code -= base;
        self.range = r * (hi - lo);
        if self.code >= self.range {
            return Err(RangeCodingError::Corrupt { symbol });
        }
        while self.range < TOP {
            self.code = (self.code << 8) | u32::from(self.next_byte());
            self.range <<= 8;
        }
        if self.overrun {
            return Err(RangeCodingError::Truncated { symbol });
        }
        Ok(slot)
    }

    /// Decode one lattice value against its symbol table.
    pub fn decode_symbol(&mut self, symbol: usize, table: &SymbolTable)
        -> Result<i64, RangeCodingError>
    {
        let slot = self.decode_range(symbol, |f| {
            let slot = table.find(f);
            let (lo, hi) = table.freq_range(slot);
            (slot, lo, hi)
        })?;
        if slot == table.escape_slot() {
            let mut zz = 0u32;
            for _ in 0..4 {
                zz = (zz << 8) | u32::from(self.decode_raw_byte(symbol)?);
            }
            Ok(table.center + unzigzag(zz))
        } else {
            Ok(table.value_of(slot))
        }
    }

    fn decode_raw_byte(&mut self, symbol: usize) -> Result<u8, RangeCodingError> {
        let slot = self.decode_range(symbol, |f| {
            let byte = f >> 8;
            (byte as usize, byte << 8, (byte + 1) << 8)
        })?;
        Ok(slot as u8)
    }
}

fn zigzag(v: i64) -> u32 {
    let v = v.clamp(-(1 << 30), (1 << 30) - 1) as i32;
    ((v << 1) ^ (v >> 31)) as u32
}

fn unzigzag(zz: u32) -> i64 {
    i64::from((zz >> 1) as i32 ^ -((zz & 1) as i32))
}

/// Encode lattice values with per-symbol Gaussian parameters. The parameters
/// are snapped to the coding grid internally; encoder and decoder must be
/// handed bitwise-identical `(mu, sigma)` inputs.
pub fn encode_gaussian_symbols(indices: &[i64], mu: &[f64], sigma: &[f64]) -> Vec<u8> {
    assert_eq!(indices.len(), mu.len());
    assert_eq!(indices.len(), sigma.len());
    let mut enc = RangeEncoder::new();
    for ((&k, &m), &s) in indices.iter().zip(mu).zip(sigma) {
        let (mq, sq) = quantize_params(m, s);
        enc.encode_symbol(k, &SymbolTable::build(mq, sq));
    }
    enc.finish()
}

/// Inverse of [`encode_gaussian_symbols`].
pub fn decode_gaussian_symbols(
    bytes: &[u8],
    mu: &[f64],
    sigma: &[f64],
) -> Result<Vec<i64>, RangeCodingError> {
    assert_eq!(mu.len(), sigma.len());
    let mut dec = RangeDecoder::new(bytes);
    let mut out = Vec::with_capacity(mu.len());
    for (i, (&m, &s)) in mu.iter().zip(sigma).enumerate() {
        let (mq, sq) = quantize_params(m, s);
        out.push(dec.decode_symbol(i, &SymbolTable::build(mq, sq))?);
    }
    Ok(out)
}

/// Model bits for coded symbols, measured on the same quantized parameters
/// the coder uses. Payload length tracks this within table quantization
/// noise plus [`STREAM_FLUSH_BYTES`].
pub fn coded_rate_estimate(indices: &[i64], mu: &[f64], sigma: &[f64]) -> f64 {
    indices
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&k, &m), &s)| {
            let (mq, sq) = quantize_params(m, s);
            super::entropy::gaussian_bits(k as f64, mq, sq)
        })
        .sum()
}

/// Self-information of coded symbols under the exact coding distribution:
/// the quantized tables with their probability floor, plus the raw escape
/// payload. The range coder's output length matches this to within its own
/// precision loss and the flush bytes.
pub fn table_rate_estimate(indices: &[i64], mu: &[f64], sigma: &[f64]) -> f64 {
    let total = f64::from(1u32 << CDF_PRECISION);
    indices
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&k, &m), &s)| {
            let (mq, sq) = quantize_params(m, s);
            let table = SymbolTable::build(mq, sq);
            let slot = table.slot_of(k);
            let (lo, hi) = table.freq_range(slot);
            let bits = -(f64::from(hi - lo) / total).log2();
            if slot == table.escape_slot() {
                bits + 32.0
            } else {
                bits
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_stream_is_flush_bytes_only_and_decodes_to_empty() {
        let bytes = encode_gaussian_symbols(&[], &[], &[]);
        assert_eq!(bytes.len(), STREAM_FLUSH_BYTES);
        let decoded = decode_gaussian_symbols(&bytes, &[], &[]).unwrap();
        assert!(decoded.is_empty());
    }

    #[test]
    fn random_symbols_round_trip_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let n = rng.random_range(1..400);
            let mut ks = Vec::with_capacity(n);
            let mut mus = Vec::with_capacity(n);
            let mut sigmas = Vec::with_capacity(n);
            for _ in 0..n {
                mus.push(rng.random::<f64>() * 20.0 - 10.0);
                sigmas.push(0.02 + rng.random::<f64>() * 8.0);
                // Include occasional far outliers to exercise the escape path.
                if rng.random::<f64>() < 0.05 {
                    ks.push(rng.random_range(-100_000..100_000));
                } else {
                    ks.push(rng.random_range(-15..15));
                }
            }
            let bytes = encode_gaussian_symbols(&ks, &mus, &sigmas);
            let decoded = decode_gaussian_symbols(&bytes, &mus, &sigmas).unwrap();
            assert_eq!(decoded, ks, "trial {trial}");
        }
    }

    #[test]
    fn coded_length_tracks_shannon_entropy() {
        // Sample 1000 symbols from the exact discrete distribution implied by
        // a Gaussian interval model, then compare payload length against the
        // summed self-information (an independent entropy computation).
        let (mu, sigma) = (0.0, 2.0);
        let (mq, sq) = quantize_params(mu, sigma);
        let support: Vec<i64> = (-30..=30).collect();
        let pmf: Vec<f64> = support
            .iter()
            .map(|&k| super::super::entropy::interval_mass(k as f64, mq, sq))
            .collect();
        let z: f64 = pmf.iter().sum();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1000;
        let mut ks = Vec::with_capacity(n);
        let mut info_bits = 0.0;
        for _ in 0..n {
            let mut u = rng.random::<f64>() * z;
            let mut chosen = support.len() - 1;
            for (i, &p) in pmf.iter().enumerate() {
                if u < p {
                    chosen = i;
                    break;
                }
                u -= p;
            }
            ks.push(support[chosen]);
            info_bits += -(pmf[chosen] / z).log2();
        }
        let mus = vec![mu; n];
        let sigmas = vec![sigma; n];
        let bytes = encode_gaussian_symbols(&ks, &mus, &sigmas);
        assert_eq!(decode_gaussian_symbols(&bytes, &mus, &sigmas).unwrap(), ks);

        let actual_bits = 8.0 * (bytes.len() - STREAM_FLUSH_BYTES) as f64;
        let ratio = actual_bits / info_bits;
        assert!(
            (0.95..=1.05).contains(&ratio),
            "coded {actual_bits} bits vs entropy {info_bits} bits (ratio {ratio})"
        );
    }

    #[test]
    fn truncated_payload_reports_the_failing_symbol() {
        let n = 50;
        let ks: Vec<i64> = (0..n).map(|i| (i % 7) as i64 - 3).collect();
        let mus = vec![0.0; n];
        let sigmas = vec![1.0; n];
        let bytes = encode_gaussian_symbols(&ks, &mus, &sigmas);
        let cut = &bytes[..bytes.len() / 4];
        let err = decode_gaussian_symbols(cut, &mus, &sigmas).unwrap_err();
        assert!(matches!(err, RangeCodingError::Truncated { .. }));
    }

    #[test]
    fn zigzag_round_trips() {
        for v in [-1_000_000i64, -2, -1, 0, 1, 2, 999_999] {
            assert_eq!(unzigzag(zigzag(v)), v);
        }
    }
}
