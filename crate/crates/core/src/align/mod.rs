//! State-feature alignment: do feature distances between two frames track
//! their pose distance once raw pixel similarity is controlled for?

mod stats;

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::error::{Error, Result};
use crate::nn::Encoder;
use crate::par;
use crate::seed;
use crate::sim::{Image, View};

pub use stats::{average_ranks, partial_spearman, pearson, residualize};

/// Number of pose dimensions (position + axis-angle).
pub const POSE_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub gaps: Vec<usize>,
    pub pairs_per_gap: usize,
    /// Side of the grayscale thumbnails used for the pixel control.
    pub thumb: usize,
    pub sigma_floor: f64,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            gaps: vec![1, 2, 4, 8, 16, 32],
            pairs_per_gap: 200,
            thumb: 16,
            sigma_floor: 1e-8,
            seed: 0,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gaps.is_empty() || self.gaps.contains(&0) {
            return Err(Error::Config("gaps must be a non-empty set of positive integers".into()));
        }
        if self.pairs_per_gap < 2 || self.thumb == 0 || !(self.sigma_floor > 0.0) {
            return Err(Error::Config("need pairs_per_gap >= 2, thumb >= 1 and a positive sigma floor".into()));
        }
        Ok(())
    }
}

/// Two frames of one trajectory, `j = i + gap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairIndex {
    /// Position in the trajectory list handed to the sampler.
    pub traj: usize,
    pub i: usize,
    pub j: usize,
    pub gap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePair {
    pub traj_id: usize,
    pub i: usize,
    pub j: usize,
    pub gap: usize,
    /// `None` when a pooled feature has zero norm.
    pub d_cos: Option<f64>,
    pub d_scale: f64,
    pub d_pose: f64,
    pub d_pix: f64,
}

/// Uniform pairs over all valid `(trajectory, t)` positions for each gap.
/// Returns the pairs and the gaps no trajectory could support.
pub fn sample_pairs(trajs: &[&Trajectory], cfg: &AlignConfig) -> Result<(Vec<PairIndex>, Vec<usize>)> {
    cfg.validate()?;
    let mut pairs = Vec::with_capacity(cfg.gaps.len() * cfg.pairs_per_gap);
    let mut omitted = Vec::new();
    for &gap in &cfg.gaps {
        let counts: Vec<usize> = trajs.iter().map(|t| t.len().saturating_sub(gap)).collect();
        let total: usize = counts.iter().sum();
        if total == 0 {
            log::warn!("no trajectory is longer than gap {gap}; gap omitted");
            omitted.push(gap);
            continue;
        }
        let mut rng = seed::rng(seed::named(cfg.seed, &format!("align/gap/{gap}")));
        for _ in 0..cfg.pairs_per_gap {
            let mut r = rng.gen_range(0..total);
            let traj = counts
                .iter()
                .position(|&c| {
                    if r < c {
                        true
                    } else {
                        r -= c;
                        false
                    }
                })
                .expect("r < total");
            pairs.push(PairIndex {
                traj,
                i: r,
                j: r + gap,
                gap,
            });
        }
    }
    Ok((pairs, omitted))
}

fn pose6(t: &Trajectory, i: usize) -> [f64; POSE_DIM] {
    std::array::from_fn(|d| t.states[i][d] as f64)
}

/// Population standard deviation of each pose dimension over `frames`,
/// floored.
pub fn pose_sigma(poses: &[[f64; POSE_DIM]], floor: f64) -> [f64; POSE_DIM] {
    let n = poses.len().max(1) as f64;
    std::array::from_fn(|d| {
        let m = poses.iter().map(|p| p[d]).sum::<f64>() / n;
        let v = poses.iter().map(|p| (p[d] - m) * (p[d] - m)).sum::<f64>() / n;
        v.sqrt().max(floor)
    })
}

/// Euclidean norm of the sigma-normalised pose difference.
pub fn pose_distance(a: &[f64], b: &[f64], sigma: &[f64]) -> Result<f64> {
    if a.len() != POSE_DIM || b.len() != POSE_DIM || sigma.len() != POSE_DIM {
        return Err(Error::shape(
            format!("{POSE_DIM}-dim poses"),
            format!("{}, {}, {}", a.len(), b.len(), sigma.len()),
        ));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s >= 1e-8)) {
        return Err(Error::Input(format!("sigma component {s} is below the floor")));
    }
    Ok(a.iter()
        .zip(b)
        .zip(sigma)
        .map(|((x, y), s)| ((x - y) / s).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// `(1 - cosine, |norm difference|)` of two pooled features. The cosine
/// part is `None` if either norm is zero.
pub fn feature_distances(hi: &[f64], hj: &[f64]) -> Result<(Option<f64>, f64)> {
    if hi.len() != hj.len() {
        return Err(Error::shape(format!("{} channels", hi.len()), format!("{}", hj.len())));
    }
    let ni = hi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nj = hj.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d_scale = (ni - nj).abs();
    if ni == 0.0 || nj == 0.0 {
        return Ok((None, d_scale));
    }
    let dot: f64 = hi.iter().zip(hj).map(|(a, b)| a * b).sum();
    Ok((Some((1.0 - dot / (ni * nj)).clamp(0.0, 2.0)), d_scale))
}

/// Area-averaging weights from `size` input cells onto `out` output cells.
fn area_weights(size: usize, out: usize) -> Array2<f64> {
    let scale = size as f64 / out as f64;
    Array2::from_shape_fn((out, size), |(o, i)| {
        let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
        let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
        overlap / scale
    })
}

/// Grayscale thumbnail in `[0, 1]`.
pub fn thumbnail(img: &Image, thumb: usize) -> Result<Array2<f64>> {
    let s = img.size;
    if thumb == 0 || thumb > s {
        return Err(Error::Input(format!("thumbnail size {thumb} must lie in 1..={s}")));
    }
    let gray = Array2::from_shape_fn((s, s), |(r, c)| {
        let p = img.pixel(r, c);
        (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
    });
    let w = area_weights(s, thumb);
    Ok(w.dot(&gray).dot(&w.t()))
}

/// Mean squared difference of grayscale thumbnails.
pub fn pixel_control(a: &Image, b: &Image, thumb: usize) -> Result<f64> {
    if a.size != b.size {
        return Err(Error::shape(format!("{0}x{0} image", a.size), format!("{0}x{0}", b.size)));
    }
    let d = thumbnail(a, thumb)? - thumbnail(b, thumb)?;
    Ok(d.mapv(|v| v * v).mean().expect("non-empty thumbnail"))
}

/// Pooled static-view features of the listed frames.
fn pooled_features(encoder: &Encoder<f32>, trajs: &[&Trajectory], frames: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
    let chunks: Vec<&[(usize, usize)]> = frames.chunks(64).collect();
    let parts = par::try_map_range(chunks.len(), |c| {
        let imgs: Vec<&Image> = chunks[c].iter().map(|&(k, t)| trajs[k].observations[t].view(View::Static)).collect();
        let z = encoder.forward(&imgs)?;
        Ok::<_, Error>(
            (0..z.batch)
                .map(|b| z.item(b).mapv(|v| v as f64).mean_axis(ndarray::Axis(0)).expect("tokens").to_vec())
                .collect::<Vec<_>>(),
        )
    })?;
    Ok(parts.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub encoder: String,
    pub metric: String,
    pub rho_partial: Option<f64>,
    pub n_pairs: usize,
    pub n_dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderAlignment {
    pub encoder: String,
    pub pairs: Vec<FramePair>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub config: AlignConfig,
    pub omitted_gaps: Vec<usize>,
    pub sigma: [f64; POSE_DIM],
    pub encoders: Vec<EncoderAlignment>,
}

impl AlignmentReport {
    pub fn summary(&self) -> Vec<SummaryRow> {
        self.encoders.iter().flat_map(|e| e.summary.clone()).collect()
    }

    pub fn rho(&self, encoder: &str, metric: &str) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|r| r.encoder == encoder && r.metric == metric)
            .and_then(|r| r.rho_partial)
    }
}

fn rho_or_none(feat: &[f64], pose: &[f64], pix: &[f64]) -> Result<Option<f64>> {
    match partial_spearman(feat, pose, pix) {
        Ok(r) => Ok(Some(r)),
        Err(Error::Undefined(msg)) => {
            log::warn!("partial correlation undefined: {msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Partial Spearman of pooled cosine and scale distances against pose
/// distance, controlling for thumbnail MSE, for every encoder on one
/// shared pair set.
pub fn alignment_report(trajs: &[&Trajectory], encoders: &[(String, &Encoder<f32>)], cfg: &AlignConfig) -> Result<AlignmentReport> {
    let (pairs, omitted_gaps) = sample_pairs(trajs, cfg)?;
    if pairs.len() < 3 {
        return Err(Error::Input("too few frame pairs for a correlation".into()));
    }
    let mut frames: Vec<(usize, usize)> = pairs.iter().flat_map(|p| [(p.traj, p.i), (p.traj, p.j)]).collect();
    frames.sort_unstable();
    frames.dedup();
    let slot: BTreeMap<(usize, usize), usize> = frames.iter().enumerate().map(|(k, f)| (*f, k)).collect();
    let poses: Vec<[f64; POSE_DIM]> = frames.iter().map(|&(k, t)| pose6(trajs[k], t)).collect();
    let sigma = pose_sigma(&poses, cfg.sigma_floor);

    let base = par::try_map_range(pairs.len(), |n| {
        let p = pairs[n];
        let t = trajs[p.traj];
        let d_pose = pose_distance(&pose6(t, p.i), &pose6(t, p.j), &sigma)?;
        let d_pix = pixel_control(
            t.observations[p.i].view(View::Static),
            t.observations[p.j].view(View::Static),
            cfg.thumb,
        )?;
        Ok::<_, Error>((d_pose, d_pix))
    })?;

    let mut out = Vec::with_capacity(encoders.len());
    for (name, enc) in encoders {
        let pooled = pooled_features(enc, trajs, &frames)?;
        let mut records = Vec::with_capacity(pairs.len());
        for (p, &(d_pose, d_pix)) in pairs.iter().zip(&base) {
            let (d_cos, d_scale) = feature_distances(&pooled[slot[&(p.traj, p.i)]], &pooled[slot[&(p.traj, p.j)]])?;
            records.push(FramePair {
                traj_id: trajs[p.traj].id,
                i: p.i,
                j: p.j,
                gap: p.gap,
                d_cos,
                d_scale,
                d_pose,
                d_pix,
            });
        }
        let kept: Vec<&FramePair> = records.iter().filter(|r| r.d_cos.is_some()).collect();
        let col = |rs: &[&FramePair], f: fn(&FramePair) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let all: Vec<&FramePair> = records.iter().collect();
        let rho_cos = if kept.len() >= 3 {
            rho_or_none(
                &col(&kept, |r| r.d_cos.unwrap_or(f64::NAN)),
                &col(&kept, |r| r.d_pose),
                &col(&kept, |r| r.d_pix),
            )?
        } else {
            None
        };
        let rho_scale = rho_or_none(&col(&all, |r| r.d_scale), &col(&all, |r| r.d_pose), &col(&all, |r| r.d_pix))?;
        let summary = vec![
            SummaryRow {
                encoder: name.clone(),
                metric: "cosine".into(),
                rho_partial: rho_cos,
                n_pairs: kept.len(),
                n_dropped: records.len() - kept.len(),
            },
            SummaryRow {
                encoder: name.clone(),
                metric: "scale".into(),
                rho_partial: rho_scale,
                n_pairs: records.len(),
                n_dropped: 0,
            },
        ];
        out.push(EncoderAlignment {
            encoder: name.clone(),
            pairs: records,
            summary,
        });
    }
    Ok(AlignmentReport {
        config: cfg.clone(),
        omitted_gaps,
        sigma,
        encoders: out,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("csv: {e}"))
}

/// Per-pair table: `gap, d_cos, d_scale, d_pose, d_pix`.
pub fn write_pairs<W: Write>(out: W, pairs: &[FramePair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gap", "d_cos", "d_scale", "d_pose", "d_pix"]).map_err(csv_err)?;
    for p in pairs {
        let cos = p.d_cos.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([p.gap.to_string(), cos, p.d_scale.to_string(), p.d_pose.to_string(), p.d_pix.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Input(format!("csv: {e}")))
}

/// Summary table: `encoder, metric, rho_partial, n_pairs, n_dropped`.
pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Input(format!("csv: {e}")))
}

pub fn read_summary<R: std::io::Read>(input: R) -> Result<Vec<SummaryRow>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(csv_err)).collect()
}

#[cfg(test)]
mod tests;
