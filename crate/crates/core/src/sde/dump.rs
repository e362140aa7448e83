//! Binary path dump for debugging: a little-endian `u64` sample count
//! followed by the times and then the states as little-endian `f64`.

use std::io::{Read, Write};

use super::simulate::PathRecord;
use crate::error::{Error, Result};

pub fn write_path_dump(path: &PathRecord, out: &mut impl Write) -> Result<()> {
    out.write_all(&(path.times.len() as u64).to_le_bytes())?;
    for v in path.times.iter().chain(&path.states) {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads back `(times, states)`.
pub fn read_path_dump(input: &mut impl Read) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word);
    if n > (1 << 40) {
        return Err(Error::Config(format!(
            "implausible sample count {n} in dump header"
        )));
    }
    let mut read = |n: u64| -> Result<Vec<f64>> {
        (0..n)
            .map(|_| {
                input.read_exact(&mut word)?;
                Ok(f64::from_le_bytes(word))
            })
            .collect()
    };
    let times = read(n)?;
    let states = read(n)?;
    Ok((times, states))
}
