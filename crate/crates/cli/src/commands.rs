//! The four commands behind the `dest` binary, exposed as library functions
//! so the acceptance suite can drive them directly.

use crate::config::RunConfig;
use dest_core::blocks::{AttentionConfig, Params};
use dest_core::data::{eigen_metrics, spearman, synth_scene, DepthMetrics, SceneTriplet};
use dest_core::net::{
    count_params_macs, disp_to_depth, graph_macs, model_info, variant, DepthNet, ModelInfo,
};
use dest_core::selfsup::{StepStats, TrainState};
use dest_core::tensor::{load_checkpoint, save_checkpoint, Rng, Tensor};
use dest_core::{Error, Result};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

pub struct TrainReport {
    pub stats: Vec<StepStats>,
}

/// Train on the seeded synthetic scene pool and write checkpoint + CSV log.
/// One log line per step goes to `log`.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path, log: &mut dyn Write) -> Result<TrainReport> {
    let r = cfg.resolve()?;
    let mut ts = TrainState::<f32>::new(
        cfg.seed,
        &r.depth_cfg,
        &r.pose_cfg,
        cfg.lr,
        r.loss,
        cfg.connectivity,
    )?;
    ts.depth.decoder.set_head_bias(cfg.disp_head_bias as f32);
    let pool: Vec<SceneTriplet<f32>> = (0..cfg.train_scenes.max(1))
        .map(|i| synth_scene(cfg.seed.wrapping_add(i as u64), &r.scene))
        .collect::<Result<_>>()?;

    let mut csv = String::from("step,loss,photo,smooth\n");
    let mut stats = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let s = &pool[step % pool.len()];
        let st = ts.step(
            &SceneTriplet::batched(&s.prev),
            &SceneTriplet::batched(&s.target),
            &SceneTriplet::batched(&s.next),
            &s.k,
        )?;
        writeln!(log, "step={} loss={} photo={} smooth={}", step + 1, st.loss, st.photo, st.smooth)?;
        csv.push_str(&format!("{},{},{},{}\n", step + 1, st.loss, st.photo, st.smooth));
        stats.push(st);
    }

    std::fs::create_dir_all(out_dir)?;
    save_checkpoint(&out_dir.join("checkpoint"), &ts.checkpoint_entries())?;
    let csv_path = cfg.log_csv.clone().unwrap_or_else(|| out_dir.join("train_log.csv"));
    std::fs::write(csv_path, csv)?;
    Ok(TrainReport { stats })
}

pub struct EvalReport {
    pub metrics: DepthMetrics,
    pub spearman: f64,
    pub per_seed: Vec<(u64, DepthMetrics)>,
}

/// Load a checkpoint's Depth-Net and evaluate it on held-out scene seeds.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, seeds: &[u64]) -> Result<EvalReport> {
    let r = cfg.resolve()?;
    let mut net = DepthNet::<f32>::new(&Rng::new(cfg.seed), &r.depth_cfg)?;
    let entries = load_checkpoint::<f32>(checkpoint)?;
    let map: HashMap<String, (Vec<usize>, Vec<f32>)> =
        entries.into_iter().map(|(n, s, d)| (n, (s, d))).collect();
    net.load_state("depth", &map)?;
    eval_depthnet(&net, cfg, seeds)
}

/// Evaluate an in-memory Depth-Net (used by cmd_eval and the tests).
pub fn eval_depthnet(net: &DepthNet<f32>, cfg: &RunConfig, seeds: &[u64]) -> Result<EvalReport> {
    let r = cfg.resolve()?;
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut rhos = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let s: SceneTriplet<f32> = synth_scene(seed, &r.scene)?;
        let (disp, _) = net.forward(&SceneTriplet::batched(&s.target), false)?;
        let pred = disp_to_depth(&disp, r.loss.min_depth, r.loss.max_depth)?;
        let gt = s.gt_depth_batched();
        per_seed.push((seed, eigen_metrics(&pred, &gt, 80.0, true)?));
        rhos.push(spearman(&pred, &gt)?);
    }
    let metrics = DepthMetrics::mean_of(&per_seed.iter().map(|(_, m)| *m).collect::<Vec<_>>());
    let rho = rhos.iter().sum::<f64>() / rhos.len().max(1) as f64;
    Ok(EvalReport { metrics, spearman: rho, per_seed })
}

/// Metric plumbing sanity: scores ground-truth depth against itself, which
/// must be all zeros.
pub fn cmd_eval_oracle(cfg: &RunConfig, seeds: &[u64]) -> Result<DepthMetrics> {
    let r = cfg.resolve()?;
    let mut all = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let s: SceneTriplet<f32> = synth_scene(seed, &r.scene)?;
        let gt = s.gt_depth_batched();
        all.push(eigen_metrics(&gt, &gt, 80.0, true)?);
    }
    Ok(DepthMetrics::mean_of(&all))
}

/// Depth-Net parameter/MAC report.
pub fn cmd_count(variant_name: &str, input_h: usize, input_w: usize) -> Result<ModelInfo> {
    let cfg = variant(variant_name)?;
    let mut net = DepthNet::<f32>::new(&Rng::new(0), &cfg)?;
    model_info(&mut net, input_h, input_w)
}

/// Same counts through the public pair API.
pub fn count_pair(variant_name: &str, input_h: usize, input_w: usize) -> Result<(u64, u64)> {
    let cfg = variant(variant_name)?;
    let mut net = DepthNet::<f32>::new(&Rng::new(0), &cfg)?;
    count_params_macs(&mut net, input_h, input_w)
}

pub struct BenchRow {
    pub variant: &'static str,
    pub macs: u64,
    pub wall_ns: u128,
}

pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// CSV with header `variant,macs,wall_ns`.
    pub fn csv(&self) -> String {
        let mut s = String::from("variant,macs,wall_ns\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.variant, r.macs, r.wall_ns));
        }
        s
    }
}

/// Analytic MACs and wall-clock of simplified vs softmax-baseline attention
/// on one stage configuration. Errors if the simplified variant fails to
/// undercut the baseline MAC count.
pub fn cmd_bench(tokens: usize, channels: usize, heads: usize, reduction: usize) -> Result<BenchReport> {
    // factor N into the widest H x W with H*W = N and both divisible by R
    let (h, w) = factor_tokens(tokens, reduction)?;
    let acfg = AttentionConfig::new(channels, heads, reduction)?;
    let rng = Rng::new(17);
    let simplified = dest_core::blocks::SimplifiedAttention::<f32>::new(&rng, "simplified", acfg);
    let baseline = dest_core::blocks::BaselineSoftmaxAttention::<f32>::new(&rng, "baseline", acfg);
    let x = Tensor::<f32>::init(
        &[1, tokens, channels],
        dest_core::tensor::Initializer::Uniform { a: -1.0, b: 1.0 },
        23,
        false,
    );

    let simp_macs = graph_macs(|| simplified.forward(&x, h, w))?;
    let base_macs = graph_macs(|| baseline.forward(&x, h, w))?;
    let time_of = |f: &dyn Fn() -> Result<Tensor<f32>>| -> Result<u128> {
        f()?; // warm up
        let mut best = u128::MAX;
        for _ in 0..3 {
            let t0 = Instant::now();
            f()?;
            best = best.min(t0.elapsed().as_nanos());
        }
        Ok(best)
    };
    let rows = vec![
        BenchRow {
            variant: "simplified",
            macs: simp_macs,
            wall_ns: time_of(&|| simplified.forward(&x, h, w))?,
        },
        BenchRow {
            variant: "softmax_baseline",
            macs: base_macs,
            wall_ns: time_of(&|| baseline.forward(&x, h, w))?,
        },
    ];
    if simp_macs >= base_macs {
        return Err(Error::NonFinite(format!(
            "simplified attention MACs {simp_macs} do not undercut baseline {base_macs}"
        )));
    }
    Ok(BenchReport { rows })
}

fn factor_tokens(tokens: usize, reduction: usize) -> Result<(usize, usize)> {
    let mut best = None;
    let mut h = 1;
    while h * h <= tokens {
        if tokens % h == 0 {
            let w = tokens / h;
            if h % reduction == 0 && w % reduction == 0 {
                best = Some((h, w));
            }
        }
        h += 1;
    }
    if reduction == 1 {
        let mut h = 1;
        while h * h <= tokens {
            if tokens % h == 0 {
                best = Some((h, tokens / h));
            }
            h += 1;
        }
    }
    best.ok_or_else(|| {
        Error::invalid("bench", format!("cannot factor {tokens} tokens into sides divisible by {reduction}"))
    })
}
