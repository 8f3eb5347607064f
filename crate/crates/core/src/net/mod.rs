//! Depth-Net and Pose-Net: four-stage encoders built from transformer
//! blocks, the progressive decoder, the B0-B5 variant table, and analytic
//! parameter/MAC accounting.

mod count;
mod depth;
mod pose;

pub use count::{count_params_macs, graph_macs, model_info, ModelInfo, StageInfo};
pub use depth::{disp_to_depth, DepthNet, ProgressiveDecoder};
pub use pose::{Pose6, PoseNet, PosePair, PoseVector};

use crate::{Error, Result};

/// Architecture hyperparameters for one model size.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantConfig {
    pub name: String,
    /// attention + Mix-FFN pairs per stage
    pub depths: [usize; 4],
    pub widths: [usize; 4],
    pub heads: [usize; 4],
    pub reduction_ratios: [usize; 4],
    pub decoder_width: usize,
    pub ffn_expansion: usize,
}

/// The variant table. Depths and widths follow the published configuration;
/// heads and reduction ratios are the per-stage defaults.
pub fn variant(name: &str) -> Result<VariantConfig> {
    let (depths, widths) = match name {
        "B0" => ([2, 2, 2, 2], [32, 64, 160, 256]),
        "B1" => ([2, 2, 2, 2], [64, 128, 250, 320]),
        "B2" => ([3, 3, 6, 3], [64, 128, 250, 320]),
        "B3" => ([3, 6, 8, 3], [64, 128, 250, 320]),
        "B4" => ([3, 8, 12, 5], [64, 128, 250, 320]),
        "B5" => ([3, 10, 16, 5], [64, 128, 250, 320]),
        other => {
            return Err(Error::invalid("variant", format!("unknown variant {other:?} (want B0..B5)")))
        }
    };
    Ok(VariantConfig {
        name: name.to_string(),
        depths,
        widths,
        heads: [1, 2, 5, 8],
        reduction_ratios: [8, 4, 2, 1],
        decoder_width: 128,
        ffn_expansion: 4,
    })
}

/// Tiny four-stage configuration for fast end-to-end gradient tests.
pub fn micro_variant() -> VariantConfig {
    VariantConfig {
        name: "micro".to_string(),
        depths: [1, 1, 1, 1],
        widths: [8, 8, 16, 16],
        heads: [1, 1, 2, 2],
        reduction_ratios: [2, 2, 2, 1],
        decoder_width: 8,
        ffn_expansion: 2,
    }
}

impl VariantConfig {
    pub(crate) fn check_input(&self, h: usize, w: usize) -> Result<()> {
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::invalid("depthnet", format!("input {h}x{w} must be divisible by 16")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        assert_eq!(variant("B0").unwrap().depths, [2, 2, 2, 2]);
        assert_eq!(variant("B4").unwrap().depths, [3, 8, 12, 5]);
        assert_eq!(variant("B1").unwrap().widths, [64, 128, 250, 320]);
        assert_eq!(variant("B0").unwrap().widths, [32, 64, 160, 256]);
        assert_eq!(variant("B3").unwrap().depths, [3, 6, 8, 3]);
        assert_eq!(variant("B5").unwrap().depths, [3, 10, 16, 5]);
    }

    #[test]
    fn unknown_variant_rejected() {
        assert!(variant("B9").is_err());
        assert!(variant("b0").is_err());
    }
}
