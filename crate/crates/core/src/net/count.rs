//! Analytic parameter and multiply-accumulate accounting, derived from the
//! recorded inference graph so the counts always describe the network as
//! actually executed.

use super::depth::DepthNet;
use crate::blocks::{param_count, Params};
use crate::tensor::{count_macs, record_graph, Elem, Tensor};
use crate::Result;

#[derive(Clone, Debug)]
pub struct StageInfo {
    pub name: String,
    pub out_shape: Vec<usize>,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug)]
pub struct ModelInfo {
    pub variant: String,
    pub input: (usize, usize),
    pub stages: Vec<StageInfo>,
    pub decoder_params: u64,
    pub decoder_macs: u64,
    pub total_params: u64,
    pub total_macs: u64,
}

impl ModelInfo {
    pub fn text(&self) -> String {
        let mut s = format!(
            "model {} at input {}x{}\n{:<10} {:>20} {:>14} {:>16}\n",
            self.variant, self.input.0, self.input.1, "part", "output", "params", "macs"
        );
        for st in &self.stages {
            s.push_str(&format!(
                "{:<10} {:>20} {:>14} {:>16}\n",
                st.name,
                format!("{:?}", st.out_shape),
                st.params,
                st.macs
            ));
        }
        s.push_str(&format!(
            "{:<10} {:>20} {:>14} {:>16}\n",
            "decoder", "-", self.decoder_params, self.decoder_macs
        ));
        s.push_str(&format!(
            "total: {:.4} MParams, {:.4} GMACs ({} params, {} macs)\n",
            self.total_params as f64 / 1e6,
            self.total_macs as f64 / 1e9,
            self.total_params,
            self.total_macs
        ));
        s
    }

    pub fn machine_line(&self) -> String {
        format!("params={} macs={}", self.total_params, self.total_macs)
    }
}

/// Exact learnable-element count and analytic MAC count of the Depth-Net at
/// batch 1 inference (Pose-Net is not needed at inference and is excluded).
pub fn count_params_macs<E: Elem>(net: &mut DepthNet<E>, h: usize, w: usize) -> Result<(u64, u64)> {
    let info = model_info(net, h, w)?;
    Ok((info.total_params, info.total_macs))
}

/// Per-stage shapes, parameters and MACs plus the totals.
pub fn model_info<E: Elem>(net: &mut DepthNet<E>, h: usize, w: usize) -> Result<ModelInfo> {
    net.cfg.check_input(h, w)?;
    let (disparity, feats) = {
        let _guard = record_graph();
        let input = Tensor::<E>::zeros(&[1, 3, h, w]);
        net.forward(&input, false)?
    };

    let mut stages = Vec::with_capacity(4);
    let mut prev_macs = 0u64;
    for (k, feat) in feats.iter().enumerate() {
        // the stage-k subgraph is everything reachable from its output map
        let cumulative = count_macs(&[feat]);
        let mut params = 0u64;
        net.stages[k].visit_learnable("", &mut |_, t| params += t.numel() as u64);
        stages.push(StageInfo {
            name: format!("stage{}", k + 1),
            out_shape: feat.shape().to_vec(),
            params,
            macs: cumulative - prev_macs,
        });
        prev_macs = cumulative;
    }
    let total_macs = count_macs(&[&disparity]);
    let decoder_macs = total_macs - prev_macs;
    let mut decoder_params = 0u64;
    net.decoder.visit_learnable("", &mut |_, t| decoder_params += t.numel() as u64);
    let total_params = param_count(net);
    // every learnable must be either in a stage or in the decoder
    debug_assert_eq!(total_params, stages.iter().map(|s| s.params).sum::<u64>() + decoder_params);

    Ok(ModelInfo {
        variant: net.cfg.name.clone(),
        input: (h, w),
        stages,
        decoder_params,
        decoder_macs,
        total_params,
        total_macs,
    })
}

/// Analytic MACs of a closure's recorded graph (used for the attention
/// comparator and the instrumented-counter cross-check).
pub fn graph_macs<E: Elem, F>(f: F) -> Result<u64>
where
    F: FnOnce() -> Result<Tensor<E>>,
{
    let _guard = record_graph();
    let out = f()?;
    Ok(count_macs(&[&out]))
}
