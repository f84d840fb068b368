//! Signal containers, synthetic instances and the naive correlation oracle.
//!
//! Everything is 0-indexed: `r[m] = sum_{i<M} x[m+i] y[i]` for `m` in `[0, N-M]`.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A real-valued sequence. Signals tagged binary hold only `+1`/`-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    binary: bool,
}

impl Signal {
    /// A ±1 signal; any other value is rejected.
    pub fn binary(samples: Vec<f64>) -> Result<Self> {
        if let Some(pos) = samples.iter().position(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidInput(format!(
                "binary signal has value {} at index {pos}",
                samples[pos]
            )));
        }
        Ok(Self { samples, binary: true })
    }

    /// An arbitrary real signal.
    pub fn real(samples: Vec<f64>) -> Self {
        Self { samples, binary: false }
    }

    /// `n` i.i.d. uniform ±1 symbols.
    pub fn random_binary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let samples = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        Self { samples, binary: true }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.binary
    }

    /// `sum |v|^2`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    /// Copy of `[start, start + len)`, zero-filled past the end.
    pub fn window(&self, start: usize, len: usize) -> Signal {
        let mut out = vec![0.0; len];
        if start < self.samples.len() {
            let end = (start + len).min(self.samples.len());
            out[..end - start].copy_from_slice(&self.samples[start..end]);
        }
        let binary = self.binary && start + len <= self.samples.len();
        Signal { samples: out, binary }
    }

    /// Raw signed 8-bit samples.
    pub fn to_i8_bytes(&self) -> Result<Vec<u8>> {
        self.samples
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 && (-128.0..=127.0).contains(&v) {
                    Ok((v as i8) as u8)
                } else {
                    Err(Error::InvalidInput(format!("sample {v} does not fit in i8")))
                }
            })
            .collect()
    }

    pub fn from_i8_bytes(bytes: &[u8]) -> Self {
        let samples: Vec<f64> = bytes.iter().map(|&b| (b as i8) as f64).collect();
        let binary = samples.iter().all(|&v| v == 1.0 || v == -1.0);
        Self { samples, binary }
    }

    /// `'+'` / `'-'` per symbol, no separators.
    pub fn to_ascii(&self) -> Result<String> {
        if !self.binary {
            return Err(Error::InvalidInput("ASCII export needs a binary signal".into()));
        }
        Ok(self.samples.iter().map(|&v| if v > 0.0 { '+' } else { '-' }).collect())
    }

    pub fn from_ascii(text: &str) -> Result<Self> {
        let samples = text
            .trim_end_matches(['\n', '\r'])
            .chars()
            .enumerate()
            .map(|(i, c)| match c {
                '+' => Ok(1.0),
                '-' => Ok(-1.0),
                other => Err(Error::InvalidInput(format!("unexpected {other:?} at offset {i}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples, binary: true })
    }

    /// Reads a signal file, detecting ASCII `+`/`-` text versus raw i8 bytes.
    pub fn read_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let ascii = !bytes.is_empty()
            && bytes.iter().all(|b| matches!(b, b'+' | b'-' | b'\n' | b'\r'));
        if ascii {
            Self::from_ascii(std::str::from_utf8(&bytes).expect("checked ASCII"))
        } else {
            Ok(Self::from_i8_bytes(&bytes))
        }
    }

    pub fn write_file(&self, path: &Path, format: SignalFormat) -> Result<()> {
        match format {
            SignalFormat::Ascii => fs::write(path, self.to_ascii()?)?,
            SignalFormat::Raw => fs::write(path, self.to_i8_bytes()?)?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalFormat {
    /// Signed 8-bit samples.
    Raw,
    /// `+`/`-` characters.
    Ascii,
}

/// Where matches are planted and how many symbols are flipped at each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchSpec {
    /// Sorted, non-overlapping window starts.
    pub positions: Vec<usize>,
    /// Flipped query symbols at each position (same length as `positions`).
    pub flips: Vec<usize>,
}

impl MatchSpec {
    pub fn exact(positions: Vec<usize>) -> Self {
        let flips = vec![0; positions.len()];
        Self { positions, flips }
    }

    /// `count` non-overlapping windows of length `m` placed uniformly at random
    /// in `[0, n)`, each with `flips` flipped symbols.
    pub fn random<R: Rng + ?Sized>(
        n: usize,
        m: usize,
        count: usize,
        flips: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if count == 0 {
            return Ok(Self { positions: Vec::new(), flips: Vec::new() });
        }
        let used = count
            .checked_mul(m)
            .filter(|&u| u <= n)
            .ok_or_else(|| Error::InvalidSpec(format!("{count} windows of {m} do not fit in {n}")))?;
        // Choose `count` gap boundaries among `n - used + count` slots; the
        // i-th chosen slot shifted by i*(m-1) is the i-th window start.
        let slots = n - used + count;
        let mut picks = index::sample(rng, slots, count).into_vec();
        picks.sort_unstable();
        let positions = picks.iter().enumerate().map(|(i, &p)| p + i * (m - 1)).collect();
        Ok(Self { positions, flips: vec![flips; count] })
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.flips.len() != self.positions.len() {
            return Err(Error::InvalidSpec("flip counts do not match positions".into()));
        }
        if m == 0 || m > n {
            return Err(Error::InvalidSpec(format!("window {m} does not fit in {n}")));
        }
        for (i, &p) in self.positions.iter().enumerate() {
            if p > n - m {
                return Err(Error::InvalidSpec(format!("position {p} leaves the database")));
            }
            if i > 0 && p < self.positions[i - 1] + m {
                return Err(Error::InvalidSpec(format!(
                    "windows at {} and {p} overlap",
                    self.positions[i - 1]
                )));
            }
            if self.flips[i] > m {
                return Err(Error::InvalidSpec(format!("{} flips exceed m={m}", self.flips[i])));
            }
        }
        Ok(())
    }
}

/// Naive `O(N M)` cross-correlation, `r[m]` for `m` in `[0, N - M]`.
pub fn cross_correlate(x: &Signal, y: &Signal) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::InvalidInput("empty query".into()));
    }
    if y.len() > x.len() {
        return Err(Error::InvalidInput(format!(
            "query length {} exceeds database length {}",
            y.len(),
            x.len()
        )));
    }
    let (xs, ys) = (x.samples(), y.samples());
    Ok((0..=xs.len() - ys.len())
        .map(|m| xs[m..m + ys.len()].iter().zip(ys).map(|(a, b)| a * b).sum())
        .collect())
}

/// Positions whose window is within Hamming distance `k` of the query, found by
/// thresholding the correlation at `M - 2K`.
pub fn oracle_positions(x: &Signal, y: &Signal, k: usize) -> Result<Vec<usize>> {
    let threshold = y.len() as f64 - 2.0 * k as f64;
    Ok(cross_correlate(x, y)?
        .into_iter()
        .enumerate()
        .filter(|&(_, r)| r >= threshold - 1e-9)
        .map(|(m, _)| m)
        .collect())
}

/// Circular conjugate reversal `y'[n] = y[-n mod pad_to]` (real input, so no
/// conjugation is needed), zero-filled to `pad_to`.
pub fn reverse_conjugate(y: &Signal, pad_to: usize) -> Result<Signal> {
    if y.len() > pad_to {
        return Err(Error::InvalidInput(format!(
            "query length {} exceeds padded length {pad_to}",
            y.len()
        )));
    }
    let mut out = vec![0.0; pad_to];
    for (n, v) in reversed_support(y, pad_to) {
        out[n] = v;
    }
    Ok(Signal::real(out))
}

/// Non-zero-capable entries `(index, value)` of the reversed query without
/// materializing the padded vector.
pub fn reversed_support(y: &Signal, pad_to: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
    y.samples()
        .iter()
        .enumerate()
        .map(move |(n, &v)| (if n == 0 { 0 } else { pad_to - n }, v))
}

/// Random ±1 database of length `n` with a random ±1 query of length `m`
/// written at every planted position (with the requested flips).
pub fn plant_matches(n: usize, m: usize, spec: &MatchSpec, seed: u64) -> Result<(Signal, Signal)> {
    spec.validate(n, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let query = Signal::random_binary(m, &mut rng);
    let mut db = Signal::random_binary(n, &mut rng).into_samples();
    for (&pos, &flips) in spec.positions.iter().zip(&spec.flips) {
        let window = &mut db[pos..pos + m];
        window.copy_from_slice(query.samples());
        for idx in index::sample(&mut rng, m, flips) {
            window[idx] = -window[idx];
        }
    }
    Ok((Signal { samples: db, binary: true }, query))
}

pub fn hamming_distance(a: &Signal, b: &Signal) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if !a.is_binary() || !b.is_binary() {
        return Err(Error::InvalidInput("Hamming distance needs binary signals".into()));
    }
    Ok(a.samples().iter().zip(b.samples()).filter(|(x, y)| x != y).count())
}
