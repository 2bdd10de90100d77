use alloc::vec;
use alloc::vec::Vec;

use crate::curves::{ScanMode, DEFAULT_GRID_BITS, MAX_BITS};
use crate::error::{Error, Result};

/// Front-end sizes. The output width is the first encoder width.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct StdfConfig {
    /// Rows of the window-index embedding table; window ids must be below it.
    pub window_embed: usize,
    /// Depthwise kernel over the (x, y, z, p) sequence.
    pub spatial_kernel: usize,
    /// Kernel along the normalized-time channel.
    pub intra_kernel: usize,
    /// Kernel along the sequence of window embeddings.
    pub inter_kernel: usize,
    /// Kernel of the convolution before batch norm.
    pub fuse_kernel: usize,
}

impl Default for StdfConfig {
    fn default() -> Self {
        StdfConfig {
            window_embed: 8,
            spatial_kernel: 3,
            intra_kernel: 3,
            inter_kernel: 3,
            fuse_kernel: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Ms3mConfig {
    /// SSM states per channel.
    pub state_dim: usize,
    /// Kernels of the multi-scale local pathway.
    pub kernels: Vec<usize>,
    /// Depthwise kernel of the intra-window branch.
    pub intra_kernel: usize,
    /// Depthwise kernel applied to the motion features.
    pub inter_kernel: usize,
}

impl Default for Ms3mConfig {
    fn default() -> Self {
        Ms3mConfig {
            state_dim: 8,
            kernels: vec![1, 3, 5],
            intra_kernel: 3,
            inter_kernel: 3,
        }
    }
}

/// Whole-network configuration, including the ablation toggles.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct NetworkConfig {
    pub stdf: StdfConfig,
    pub ms3m: Ms3mConfig,
    /// Width of each encoder stage; the decoder mirrors it.
    pub encoder_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    /// Scan mode of each successive block, cycled.
    pub scan_schedule: Vec<ScanMode>,
    pub grid_bits: u32,
    pub use_stdf: bool,
    pub use_ms3m: bool,
    pub use_fft_loss: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            stdf: StdfConfig::default(),
            ms3m: Ms3mConfig::default(),
            encoder_channels: vec![32, 64],
            blocks_per_stage: 2,
            scan_schedule: ScanMode::ALL.to_vec(),
            grid_bits: DEFAULT_GRID_BITS,
            use_stdf: true,
            use_ms3m: true,
            use_fft_loss: true,
        }
    }
}

fn bad(msg: alloc::string::String) -> Error {
    Error::InvalidArgument(msg)
}

fn odd(what: &str, k: usize) -> Result<()> {
    if k % 2 == 1 {
        Ok(())
    } else {
        Err(bad(alloc::format!("{what} must be odd, got {k}")))
    }
}

impl NetworkConfig {
    /// The four ablation rows: M1 has every toggle off, M2 adds the
    /// front-end, M3 the multi-scale block, M4 both.
    pub fn ablation(mut self, name: &str) -> Option<Self> {
        let (stdf, ms3m, fft) = match name {
            "m1" | "M1" => (false, false, false),
            "m2" | "M2" => (true, false, false),
            "m3" | "M3" => (false, true, false),
            "m4" | "M4" => (true, true, false),
            "full" => (true, true, true),
            _ => return None,
        };
        self.use_stdf = stdf;
        self.use_ms3m = ms3m;
        self.use_fft_loss = fft;
        Some(self)
    }

    pub fn stages(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.stdf;
        let m = &self.ms3m;
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(bad(alloc::format!(
                "encoder_channels must be non-empty and positive: {:?}",
                self.encoder_channels
            )));
        }
        if self.blocks_per_stage == 0 || self.scan_schedule.is_empty() {
            return Err(bad("blocks_per_stage and scan_schedule must be non-empty".into()));
        }
        if s.window_embed == 0 || m.state_dim == 0 || m.kernels.is_empty() {
            return Err(bad("window_embed, state_dim and kernels must be non-empty".into()));
        }
        odd("spatial_kernel", s.spatial_kernel)?;
        odd("stdf intra_kernel", s.intra_kernel)?;
        odd("stdf inter_kernel", s.inter_kernel)?;
        odd("fuse_kernel", s.fuse_kernel)?;
        odd("ms3m intra_kernel", m.intra_kernel)?;
        odd("ms3m inter_kernel", m.inter_kernel)?;
        for &k in &m.kernels {
            odd("multi-scale kernel", k)?;
        }
        let stages = self.stages() as u32;
        if self.grid_bits < stages || self.grid_bits > MAX_BITS {
            return Err(bad(alloc::format!(
                "grid_bits must lie in {stages}..={MAX_BITS}, got {}",
                self.grid_bits
            )));
        }
        Ok(())
    }
}
