use crate::error::{Error, Result};

/// Environment variable that replaces every default cap with one value.
pub const SIZE_CAP_ENV: &str = "HEATBENCH_SIZE_CAP";

/// Upper limits on the number of entries a computation may allocate or enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeCaps {
    /// Grid points `n^d` held by a single field.
    pub grid: u128,
    /// Unknowns `m n^d` of the space-time block system.
    pub block_system: u128,
    /// Amplitudes in a simulated quantum state.
    pub state_vector: u128,
    /// Mode combinations enumerated by spectral routines.
    pub enumeration: u128,
}

impl Default for SizeCaps {
    fn default() -> Self {
        Self {
            grid: 1 << 26,
            block_system: 1 << 26,
            state_vector: 1 << 20,
            enumeration: 1 << 22,
        }
    }
}

impl SizeCaps {
    /// Defaults, overridden wholesale by `HEATBENCH_SIZE_CAP` when it parses.
    pub fn from_env() -> Self {
        match std::env::var(SIZE_CAP_ENV).ok().and_then(|v| v.trim().parse::<u128>().ok()) {
            Some(cap) => Self::uniform(cap),
            None => Self::default(),
        }
    }

    pub fn uniform(cap: u128) -> Self {
        Self {
            grid: cap,
            block_system: cap,
            state_vector: cap,
            enumeration: cap,
        }
    }

    pub(crate) fn check(size: u128, cap: u128) -> Result<()> {
        if size > cap {
            Err(Error::SizeCap { size, cap })
        } else {
            Ok(())
        }
    }
}

/// `n^d` without overflow.
pub(crate) fn grid_size(n: usize, d: usize) -> u128 {
    (n as u128).checked_pow(d as u32).unwrap_or(u128::MAX)
}
