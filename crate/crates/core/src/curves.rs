//! Space-filling curve keys and serialization of event clouds.
//!
//! Events are ordered window by window. Inside a window they follow a 3D
//! curve over `(x, y, z_q)` where `z_q` is the normalized time quantized to
//! the same number of bits as the spatial axes. The window ordinal is the
//! outer key, so a serialized sequence never interleaves windows.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::events::EventCloud4D;

pub const MAX_BITS: u32 = 21;
pub const DEFAULT_GRID_BITS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ScanMode {
    Zorder,
    ZorderTransposed,
    Hilbert,
    HilbertTransposed,
}

impl ScanMode {
    pub const ALL: [ScanMode; 4] = [
        ScanMode::Zorder,
        ScanMode::ZorderTransposed,
        ScanMode::Hilbert,
        ScanMode::HilbertTransposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanMode::Zorder => "zorder",
            ScanMode::ZorderTransposed => "zorder-transposed",
            ScanMode::Hilbert => "hilbert",
            ScanMode::HilbertTransposed => "hilbert-transposed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ScanMode::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn index(self) -> usize {
        match self {
            ScanMode::Zorder => 0,
            ScanMode::ZorderTransposed => 1,
            ScanMode::Hilbert => 2,
            ScanMode::HilbertTransposed => 3,
        }
    }

    pub fn key(self, x: u32, y: u32, z: u32, bits: u32) -> Result<u64> {
        match self {
            ScanMode::Zorder => morton_encode(x, y, z, bits),
            ScanMode::ZorderTransposed => morton_encode(y, x, z, bits),
            ScanMode::Hilbert => hilbert_encode(x, y, z, bits),
            ScanMode::HilbertTransposed => hilbert_encode(y, x, z, bits),
        }
    }
}

fn check_coords(coords: &[u32], bits: u32) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::Range {
            what: "bits",
            value: bits as u64,
            limit: MAX_BITS as u64,
        });
    }
    for &c in coords {
        if (c as u64) >> bits != 0 {
            return Err(Error::Range {
                what: "grid coordinate",
                value: c as u64,
                limit: (1u64 << bits) - 1,
            });
        }
    }
    Ok(())
}

/// Spreads the low 21 bits of `v` so that bit `i` lands on bit `3i`.
fn spread3(v: u32) -> u64 {
    let mut x = v as u64 & 0x1f_ffff;
    x = (x | x << 32) & 0x1f_0000_0000_ffff;
    x = (x | x << 16) & 0x1f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

fn compact3(v: u64) -> u32 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | x >> 2) & 0x10c3_0c30_c30c_30c3;
    x = (x | x >> 4) & 0x100f_00f0_0f00_f00f;
    x = (x | x >> 8) & 0x1f_0000_ff00_00ff;
    x = (x | x >> 16) & 0x1f_0000_0000_ffff;
    x = (x | x >> 32) & 0x1f_ffff;
    x as u32
}

/// Z-order key with `x` on bits `3i`, `y` on `3i+1` and `z` on `3i+2`.
pub fn morton_encode(x: u32, y: u32, z: u32, bits: u32) -> Result<u64> {
    check_coords(&[x, y, z], bits)?;
    Ok(spread3(x) | spread3(y) << 1 | spread3(z) << 2)
}

pub fn morton_decode(key: u64, bits: u32) -> Result<(u32, u32, u32)> {
    check_coords(&[], bits)?;
    if bits < MAX_BITS && key >> (3 * bits) != 0 {
        return Err(Error::Range {
            what: "morton key",
            value: key,
            limit: (1u64 << (3 * bits)) - 1,
        });
    }
    Ok((compact3(key), compact3(key >> 1), compact3(key >> 2)))
}

/// Two-axis Z-order key with `x` on the even bits.
pub fn morton_encode_2d(x: u32, y: u32, bits: u32) -> Result<u64> {
    check_coords(&[x, y], bits)?;
    let mut key = 0u64;
    for i in 0..bits {
        key |= ((x as u64 >> i) & 1) << (2 * i);
        key |= ((y as u64 >> i) & 1) << (2 * i + 1);
    }
    Ok(key)
}

// Hilbert keys go through the "transposed" representation: the key's bits
// dealt round-robin over the three axes, most significant first.

fn axes_to_transpose(axes: &mut [u32; 3], bits: u32) {
    let m = 1u32 << (bits - 1);
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..3 {
            if axes[i] & q != 0 {
                axes[0] ^= p;
            } else {
                let t = (axes[0] ^ axes[i]) & p;
                axes[0] ^= t;
                axes[i] ^= t;
            }
        }
        q >>= 1;
    }
    for i in 1..3 {
        axes[i] ^= axes[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if axes[2] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for a in axes.iter_mut() {
        *a ^= t;
    }
}

fn transpose_to_axes(axes: &mut [u32; 3], bits: u32) {
    let n = 2u32 << (bits - 1);
    let t = axes[2] >> 1;
    for i in (1..3).rev() {
        axes[i] ^= axes[i - 1];
    }
    axes[0] ^= t;
    let mut q = 2;
    while q != n {
        let p = q - 1;
        for i in (0..3).rev() {
            if axes[i] & q != 0 {
                axes[0] ^= p;
            } else {
                let t = (axes[0] ^ axes[i]) & p;
                axes[0] ^= t;
                axes[i] ^= t;
            }
        }
        q <<= 1;
    }
}

pub fn hilbert_encode(x: u32, y: u32, z: u32, bits: u32) -> Result<u64> {
    check_coords(&[x, y, z], bits)?;
    let mut axes = [x, y, z];
    axes_to_transpose(&mut axes, bits);
    let mut key = 0u64;
    for level in (0..bits).rev() {
        for a in axes {
            key = key << 1 | ((a >> level) & 1) as u64;
        }
    }
    Ok(key)
}

pub fn hilbert_decode(key: u64, bits: u32) -> Result<(u32, u32, u32)> {
    check_coords(&[], bits)?;
    if key >> (3 * bits) != 0 {
        return Err(Error::Range {
            what: "hilbert key",
            value: key,
            limit: (1u64 << (3 * bits)) - 1,
        });
    }
    let mut axes = [0u32; 3];
    let mut pos = 3 * bits;
    for level in (0..bits).rev() {
        for a in axes.iter_mut() {
            pos -= 1;
            *a |= (((key >> pos) & 1) as u32) << level;
        }
    }
    transpose_to_axes(&mut axes, bits);
    Ok((axes[0], axes[1], axes[2]))
}

/// An integer point to be ordered: window ordinal plus grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridPoint {
    pub window: usize,
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

/// Stable order of `points` by `(window, curve key)`.
pub fn order_points(points: &[GridPoint], mode: ScanMode, bits: u32) -> Result<Vec<usize>> {
    let mut keyed = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        keyed.push((p.window, mode.key(p.x, p.y, p.z, bits)?, i));
    }
    // stable: ties keep input order
    keyed.sort_by_key(|&(w, k, _)| (w, k));
    Ok(keyed.into_iter().map(|(_, _, i)| i).collect())
}

/// Right shift that brings sensor coordinates `0..extent` under `2^bits`.
pub fn spatial_shift(extent: u32, bits: u32) -> u32 {
    let mut shift = 0;
    while extent > 0 && ((extent - 1) >> shift) as u64 >> bits != 0 {
        shift += 1;
    }
    shift
}

/// Quantizes a normalized time in `[0, 1]` onto `bits` bits.
pub fn quantize_z(z: f64, bits: u32) -> u32 {
    let max = ((1u64 << bits) - 1) as f64;
    libm::round(z.clamp(0.0, 1.0) * max) as u32
}

/// Grid points of a cloud in flattened order.
pub fn grid_points(cloud: &EventCloud4D, bits: u32) -> Vec<GridPoint> {
    let sx = spatial_shift(cloud.sensor_width, bits);
    let sy = spatial_shift(cloud.sensor_height, bits);
    let mut out = Vec::with_capacity(cloud.num_events());
    for w in &cloud.windows {
        for (e, &z) in w.events.iter().zip(&w.z) {
            out.push(GridPoint {
                window: w.index,
                x: e.x >> sx,
                y: e.y >> sy,
                z: quantize_z(z, bits),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedCloud {
    /// `order[k]` is the flattened index of the k-th event in scan order.
    pub order: Vec<usize>,
    pub mode: ScanMode,
    pub grid_bits: u32,
}

impl SerializedCloud {
    pub fn inverse(&self) -> Vec<usize> {
        invert_permutation(&self.order)
    }
}

pub fn invert_permutation(order: &[usize]) -> Vec<usize> {
    let mut inv = alloc::vec![0; order.len()];
    for (k, &i) in order.iter().enumerate() {
        inv[i] = k;
    }
    inv
}

pub fn serialize(cloud: &EventCloud4D, mode: ScanMode, grid_bits: u32) -> Result<SerializedCloud> {
    if cloud.num_events() == 0 {
        return Err(Error::EmptyCloud);
    }
    let points = grid_points(cloud, grid_bits);
    Ok(SerializedCloud {
        order: order_points(&points, mode, grid_bits)?,
        mode,
        grid_bits,
    })
}
