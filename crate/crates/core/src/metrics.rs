//! Equivariance error, capsule-roll estimation and roll/factor correlation.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{Dataset, Sequence};
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::model::TvaeModel;
use crate::rng::Noise;
use crate::topography::{roll_capsules, CapsuleLayout};
use crate::vi::{elbo_value, importance_log_px, IsWeighting};

fn normalized(t: &[f64], layout: &CapsuleLayout, per_capsule: bool) -> Result<Vec<f64>> {
    layout.check(t)?;
    let chunk = if per_capsule { layout.capsule_dim } else { t.len() };
    let mut out = t.to_vec();
    for c in out.chunks_exact_mut(chunk) {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        ensure!(norm > 0.0 && norm.is_finite(), Degenerate, "latent with zero or non-finite norm");
        c.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// `Σ_l Σ_{δ≥1} ‖Roll_δ(t̂_l) − t̂_{l+δ}‖₁` over all ordered frame pairs,
/// with `t̂` the unit-norm latent (whole vector, or each capsule when
/// `per_capsule`).
pub fn equivariance_error(t_seq: &[Vec<f64>], layout: &CapsuleLayout, per_capsule: bool) -> Result<f64> {
    ensure!(t_seq.len() >= 2, Usage, "equivariance error needs at least two frames");
    let hat = t_seq
        .iter()
        .map(|t| normalized(t, layout, per_capsule))
        .collect::<Result<Vec<_>>>()?;
    let s = hat.len();
    let mut total = 0.0;
    for l in 0..s - 1 {
        for delta in 1..s - l {
            let rolled = roll_capsules(&hat[l], layout, delta as isize)?;
            total += rolled.iter().zip(&hat[l + delta]).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
    }
    Ok(total)
}

/// The shift `k` maximizing `⟨a, Roll_k(b)⟩` per capsule, reduced to the
/// most frequent value across capsules. Ties go to the smallest `k`.
pub fn observed_roll(a: &[f64], b: &[f64], layout: &CapsuleLayout) -> Result<usize> {
    layout.check(a)?;
    layout.check(b)?;
    let d = layout.capsule_dim;
    let mut votes = vec![0usize; d];
    for (ca, cb) in a.chunks_exact(d).zip(b.chunks_exact(d)) {
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..d {
            // Roll_k(b)[i] = b[i − k].
            let dot: f64 = (0..d).map(|i| ca[i] * cb[(i + d - k) % d]).sum();
            if dot > best.1 {
                best = (k, dot);
            }
        }
        votes[best.0] += 1;
    }
    let mut mode = 0;
    for k in 1..d {
        if votes[k] > votes[mode] {
            mode = k;
        }
    }
    Ok(mode)
}

/// Sample Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    ensure!(xs.len() == ys.len(), Dimension, "{} vs {} observations", xs.len(), ys.len());
    ensure!(xs.len() >= 2, UndefinedCorrelation, "need at least two observations");
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Forward cyclic distance from `y0` to `y_omega`.
fn factor_shift(y_omega: usize, y0: usize, period: usize) -> usize {
    (y_omega + period - y0 % period) % period
}

/// Correlation between the observed roll taking each `t_0` to its `t_Ω`
/// and the factor shift `(y_Ω − y_0) mod period`.
pub fn capcorr(
    latent_pairs: &[(Vec<f64>, Vec<f64>)],
    factor_pairs: &[(usize, usize)],
    layout: &CapsuleLayout,
    period: usize,
) -> Result<f64> {
    ensure!(
        latent_pairs.len() == factor_pairs.len(),
        Dimension,
        "{} latent pairs but {} factor pairs",
        latent_pairs.len(),
        factor_pairs.len()
    );
    let rolls = latent_pairs
        .iter()
        .map(|(to, t0)| observed_roll(to, t0, layout).map(|k| k as f64))
        .collect::<Result<Vec<_>>>()?;
    let shifts: Vec<f64> = factor_pairs
        .iter()
        .map(|&(yo, y0)| factor_shift(yo, y0, period) as f64)
        .collect();
    pearson(&rolls, &shifts)
}

/// Builds the `(t_Ω, t_0)` pair of one sequence. `t_0` is the first frame;
/// `Ω` ranges over frames whose factor is canonical, keeping the one whose
/// shift best agrees with its observed roll.
pub fn omega_pair(
    t_seq: &[Vec<f64>],
    y: &[usize],
    is_canonical: impl Fn(usize) -> bool,
    layout: &CapsuleLayout,
    period: usize,
) -> Result<((Vec<f64>, Vec<f64>), (usize, usize))> {
    ensure!(t_seq.len() == y.len() && !y.is_empty(), Dimension, "latents and factor trace differ in length");
    let mut best: Option<(usize, usize)> = None;
    for (l, &yl) in y.iter().enumerate() {
        if !is_canonical(yl) {
            continue;
        }
        let roll = observed_roll(&t_seq[l], &t_seq[0], layout)?;
        let gap = factor_shift(yl, y[0], period).abs_diff(roll);
        if best.is_none_or(|(_, g)| gap < g) {
            best = Some((l, gap));
        }
    }
    let (l, _) = best.ok_or_else(|| Error::Usage("sequence has no canonical frame".into()))?;
    Ok(((t_seq[l].clone(), t_seq[0].clone()), (y[l], y[0])))
}

/// Aggregate evaluation of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub variant: String,
    pub half_window: usize,
    pub kernel: usize,
    /// Mean per-sequence equivariance error.
    pub eq_error: f64,
    /// Per transform kind. An undefined correlation (constant observed
    /// roll) is reported as 0.
    pub capcorr: BTreeMap<String, f64>,
    pub n_sequences: usize,
    pub seed: u64,
    pub aggregation: &'static str,
    /// Mean importance-sampled sequence log-likelihood, when computed.
    pub log_px: Option<f64>,
    /// Mean single-sample sequence ELBO, when computed.
    pub elbo: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub seed: u64,
    pub per_capsule: bool,
    /// 0 skips likelihood estimation.
    pub is_samples: usize,
    pub exec: Exec,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { seed: 0, per_capsule: false, is_samples: 10, exec: Exec::default() }
    }
}

/// Deterministic-mode latents of every sequence.
pub fn sequence_latents(model: &TvaeModel, seqs: &[Sequence], exec: Exec) -> Result<Vec<Vec<Vec<f64>>>> {
    exec.map(seqs, |s| model.infer_t_sequence(&s.frames, &mut Noise::Zero))
        .into_iter()
        .collect()
}

/// Metrics from precomputed latents. `period` is the factor cycle length.
pub fn report_from_latents(
    latents: &[Vec<Vec<f64>>],
    seqs: &[Sequence],
    dataset: &Dataset,
    layout: &CapsuleLayout,
    per_capsule: bool,
) -> Result<(f64, BTreeMap<String, f64>)> {
    ensure!(!seqs.is_empty(), Usage, "no sequences to evaluate");
    let period = dataset.seq_len();
    let mut eq = 0.0;
    let mut by_kind: BTreeMap<String, (Vec<(Vec<f64>, Vec<f64>)>, Vec<(usize, usize)>)> = BTreeMap::new();
    for (t, s) in latents.iter().zip(seqs) {
        eq += equivariance_error(t, layout, per_capsule)?;
        let (lp, fp) = omega_pair(t, &s.y, |y| dataset.is_canonical(s.kind, y), layout, period)?;
        let e = by_kind.entry(s.kind.name().to_string()).or_default();
        e.0.push(lp);
        e.1.push(fp);
    }
    let mut cc = BTreeMap::new();
    for (k, (lp, fp)) in by_kind {
        let v = match capcorr(&lp, &fp, layout, period) {
            Ok(v) => v,
            Err(Error::UndefinedCorrelation(_)) => 0.0,
            Err(e) => return Err(e),
        };
        cc.insert(k, v);
    }
    Ok((eq / seqs.len() as f64, cc))
}

pub fn evaluate(model: &TvaeModel, dataset: &Dataset, seqs: &[Sequence], opts: &EvalOptions) -> Result<MetricsReport> {
    let latents = sequence_latents(model, seqs, opts.exec)?;
    let topo = model.topo();
    let (eq_error, capcorr) = report_from_latents(&latents, seqs, dataset, &topo.layout, opts.per_capsule)?;
    let (log_px, elbo) = if opts.is_samples > 0 {
        let pairs = opts.exec.map_range(0..seqs.len(), |i| -> Result<(f64, f64)> {
            let x = &seqs[i].frames;
            let lp = importance_log_px(
                model,
                x,
                opts.is_samples,
                &mut Noise::seeded(opts.seed, &[0x6973, i as u64]),
                IsWeighting::PerSequence,
            )?;
            let el = elbo_value(model, x, &mut Noise::seeded(opts.seed, &[0x656c626f, i as u64]))?.elbo;
            Ok((lp, el))
        });
        let pairs = pairs.into_iter().collect::<Result<Vec<_>>>()?;
        let n = pairs.len() as f64;
        (
            Some(pairs.iter().map(|p| p.0).sum::<f64>() / n),
            Some(pairs.iter().map(|p| p.1).sum::<f64>() / n),
        )
    } else {
        (None, None)
    };
    Ok(MetricsReport {
        variant: format!("{:?}", topo.variant).to_lowercase(),
        half_window: topo.half_window,
        kernel: topo.kernel,
        eq_error,
        capcorr,
        n_sequences: seqs.len(),
        seed: opts.seed,
        aggregation: if opts.per_capsule { "mean-per-sequence/per-capsule-norm" } else { "mean-per-sequence" },
        log_px,
        elbo,
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per report: `variant,L,K,eq_error,capcorr_<kind>…,n_sequences,
/// seed,aggregation,log_px,elbo`. The capcorr columns are the union of
/// kinds over all reports; missing cells are empty.
pub fn write_metrics_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut kinds: Vec<&String> = reports.iter().flat_map(|r| r.capcorr.keys()).collect();
    kinds.sort();
    kinds.dedup();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let mut header = vec!["variant".to_string(), "L".into(), "K".into(), "eq_error".into()];
    header.extend(kinds.iter().map(|k| format!("capcorr_{k}")));
    header.extend(["n_sequences", "seed", "aggregation", "log_px", "elbo"].map(String::from));
    w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    for r in reports {
        let mut row = vec![r.variant.clone(), r.half_window.to_string(), r.kernel.to_string(), r.eq_error.to_string()];
        row.extend(kinds.iter().map(|k| opt_cell(r.capcorr.get(*k).copied())));
        row.extend([
            r.n_sequences.to_string(),
            r.seed.to_string(),
            r.aggregation.to_string(),
            opt_cell(r.log_px),
            opt_cell(r.elbo),
        ]);
        w.write_record(&row).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
