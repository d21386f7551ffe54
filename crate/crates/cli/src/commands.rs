use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bip_core::geometry::IJBB_OPERATING_TAUS;
use bip_core::rng::subsample_indices;
use bip_core::store::{kernel, load_embeddings, UNIT_NORM_TOL};
use bip_core::{
    bip_metrics, capacity_table, evaluate_pairs, fit_pca_with, monitoring_zone_check, open_world_stress,
    provision_with, revocation_check, safety_buffer_analysis, sample_vmf_mixture, AllocConfig, AlphaSpec,
    CollisionStats, Error, Gallery, LoadOptions, PairList, PcaModel, PcaOptions, Protocol, ProvisionOptions,
    SynthGalleryConfig, ThresholdMode, VirtualSet,
};
use serde::Serialize;

use crate::run::{with_suffix, CmdResult, Failure, Run};
use crate::{
    CapacityArgs, GalleryStatsArgs, PairsArgs, PcaArgs, ProvisionArgs, RevokeArgs, StressArgs, SynthArgs, VerifyArgs,
};

fn load_gallery(path: &Path, run: &mut Run) -> Result<Gallery, Failure> {
    run.input(path)?;
    Ok(Gallery::load(path, LoadOptions::default())?)
}

/// A virtual set prefix, or a bare `.bipe` file (for re-encoded embeddings)
/// with no provenance records.
fn load_virtual(path: &Path, run: &mut Run) -> Result<VirtualSet, Failure> {
    if path.is_file() {
        run.input(path)?;
        let m = load_embeddings(path)?;
        let mut v = VirtualSet::new(m.dim(), AllocConfig::default());
        v.embeddings = m;
        return Ok(v);
    }
    let emb = VirtualSet::embeddings_path(path);
    run.input(&emb)?;
    run.input(&VirtualSet::records_path(path))?;
    Ok(VirtualSet::load(path)?)
}

// A closed stdout (e.g. piped into `head`) is not an error for the command.
fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value)?;
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

#[derive(Serialize)]
struct CosineSummary {
    rows_sampled: usize,
    pairs: u64,
    max_off_diagonal: f64,
    mean: f64,
    at_or_above_tau: u64,
    tau: f64,
}

#[derive(Serialize)]
struct GalleryStats {
    count: usize,
    dim: usize,
    max_norm_deviation: f64,
    norm_violations: usize,
    first_norm_violations: Vec<(usize, f64)>,
    labeled: bool,
    source: String,
    sampled_cosines: Option<CosineSummary>,
}

pub fn gallery_stats(a: GalleryStatsArgs) -> CmdResult {
    let mut run = Run::start("gallery-stats");
    run.config = serde_json::json!({ "sample": a.sample, "seed": a.seed, "tau": a.tau, "validate": !a.no_validate });
    run.seed = Some(a.seed);
    run.input(&a.gallery)?;
    let g = Gallery::load(&a.gallery, LoadOptions { validate_unit: !a.no_validate })?;
    let m = &g.centroids;
    let viol = m.norm_violations(UNIT_NORM_TOL);
    let idx = subsample_indices(m.count(), a.sample, a.seed);
    let sampled_cosines = (idx.len() >= 2).then(|| {
        let (mut pairs, mut hits, mut sum, mut max) = (0u64, 0u64, 0.0, f64::NEG_INFINITY);
        for (k, &i) in idx.iter().enumerate() {
            for &j in &idx[k + 1..] {
                let c = kernel::dot(m.row(i), m.row(j));
                pairs += 1;
                sum += c;
                max = max.max(c);
                hits += (c >= a.tau) as u64;
            }
        }
        CosineSummary { rows_sampled: idx.len(), pairs, max_off_diagonal: max, mean: sum / pairs as f64, at_or_above_tau: hits, tau: a.tau }
    });
    let stats = GalleryStats {
        count: m.count(),
        dim: m.dim(),
        max_norm_deviation: m.max_norm_deviation(),
        norm_violations: viol.len(),
        first_norm_violations: viol.into_iter().take(10).collect(),
        labeled: g.labels.is_some(),
        source: g.manifest.source.clone(),
        sampled_cosines,
    };
    let prefix = a.out.unwrap_or_else(|| with_suffix(&a.gallery, ".stats"));
    run.write_json(&with_suffix(&prefix, ".json"), &stats)?;
    print_json(&stats)?;
    run.finish(&prefix, "ok")
}

pub fn pca(a: PcaArgs) -> CmdResult {
    let mut run = Run::start("pca");
    run.config = serde_json::json!({ "centered": !a.uncentered });
    let g = load_gallery(&a.gallery, &mut run)?;
    let model = fit_pca_with(&g.centroids, PcaOptions { centered: !a.uncentered })?;
    model.save(&a.out)?;
    for s in [".mean.bipe", ".eigvecs.bipe", ".spectrum.json"] {
        run.output(&with_suffix(&a.out, s));
    }
    print_json(&model.spectrum()?)?;
    run.finish(&a.out, "ok")
}

pub fn capacity(a: CapacityArgs) -> CmdResult {
    let mut run = Run::start("capacity");
    let taus = if a.tau.is_empty() { IJBB_OPERATING_TAUS.to_vec() } else { a.tau.clone() };
    run.config = serde_json::json!({ "tau": taus, "dim": a.dim, "delta": a.delta });
    let rows = capacity_table(&taus, a.dim)?;
    let buffer = match a.delta {
        Some(delta) => {
            if taus.len() != 1 {
                return Err(Failure::Usage("--delta needs exactly one --tau".into()));
            }
            Some(safety_buffer_analysis(taus[0], delta, a.dim)?)
        }
        None => None,
    };
    let mut csv = String::from("tau,dim,mu,log2_gv,gv_bound,alpha_star\n");
    println!("{:>7} {:>12} {:>9} {:>12} {:>8}", "tau", "mu", "log2 A_GV", "A_GV", "alpha*");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:e},{},{:e},{}\n",
            r.tau, r.dim, r.mu.linear, r.log2_gv, r.gv_bound, r.alpha_star_orthogonal
        ));
        println!(
            "{:>7.3} {:>12.3e} {:>9.2} {:>12.3e} {:>8.3}",
            r.tau, r.mu.linear, r.log2_gv, r.gv_bound, r.alpha_star_orthogonal
        );
    }
    if let Some(b) = &buffer {
        println!(
            "buffer: tau_safe {:.3}, alpha* {:.3} -> {:.3}, A_GV {:.3e} -> {:.3e}",
            b.tau_safe,
            b.capacity_at_tau.alpha_star_orthogonal,
            b.capacity_at_tau_safe.alpha_star_orthogonal,
            b.capacity_at_tau.gv_bound,
            b.capacity_at_tau_safe.gv_bound
        );
    }
    let csv_path = with_suffix(&a.out, ".csv");
    fs::write(&csv_path, csv)?;
    run.output(&csv_path);
    run.write_json(&with_suffix(&a.out, ".json"), &serde_json::json!({ "dim": a.dim, "rows": rows, "buffer": buffer }))?;
    run.finish(&a.out, "ok")
}

fn resolve_config(a: &ProvisionArgs) -> Result<AllocConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_slice::<AllocConfig>(&fs::read(p)?)?,
        None => AllocConfig::default(),
    };
    if let Some(x) = a.tau {
        cfg.tau = x;
    }
    if let Some(x) = a.alpha {
        cfg.alpha = AlphaSpec::Fixed(x);
    }
    if let (Some(lo), Some(hi)) = (a.alpha_min, a.alpha_max) {
        cfg.alpha = AlphaSpec::Range { alpha_min: lo, alpha_max: hi };
    }
    if let Some(x) = a.k_neighbors {
        cfg.k_neighbors = x;
    }
    if let Some(x) = a.temperature {
        cfg.temperature = x;
    }
    if let Some(x) = a.kappa {
        cfg.kappa = x;
    }
    if let Some(x) = a.seed {
        cfg.seed = x;
    }
    if let Some(x) = a.max_attempts_per_candidate {
        cfg.max_attempts_per_candidate = x;
    }
    if let Some(x) = a.max_total_attempts {
        cfg.max_total_attempts = x;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn provision(a: ProvisionArgs) -> CmdResult {
    let mut run = Run::start("provision");
    if a.n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    if let Some(p) = &a.config {
        run.input(p)?;
    }
    let cfg = resolve_config(&a)?;
    run.config = serde_json::json!({ "alloc": cfg, "n": a.n, "pca": a.pca });
    run.seed = Some(cfg.seed);
    let g = load_gallery(&a.gallery, &mut run)?;
    let pca = match &a.pca {
        Some(prefix) => {
            for s in [".mean.bipe", ".eigvecs.bipe", ".spectrum.json"] {
                run.input(&with_suffix(prefix, s))?;
            }
            PcaModel::load(prefix)?
        }
        None => fit_pca_with(&g.centroids, PcaOptions::default())?,
    };
    let (set, stats, complete) = match provision_with(&g, &pca, &cfg, a.n, ProvisionOptions::default()) {
        Ok((v, s)) => (v, s, true),
        Err(Error::MaxAttemptsExceeded(p)) => (p.set, p.stats, false),
        Err(e) => return Err(e.into()),
    };
    set.save(&a.out)?;
    run.output(&VirtualSet::embeddings_path(&a.out));
    run.output(&VirtualSet::records_path(&a.out));
    // independent exact re-check before reporting success
    let verification = bip_metrics(&set, &g, cfg.tau)?;
    let clean = verification.gallery_violations == 0 && verification.pair_violations == 0;
    run.write_json(
        &with_suffix(&a.out, ".stats.json"),
        &serde_json::json!({ "target": a.n, "complete": complete, "stats": stats, "verification": verification }),
    )?;
    println!(
        "accepted {} of {} in {} attempts ({} gallery, {} virtual rejections), {:.1}s",
        stats.accepted,
        a.n,
        stats.attempted,
        stats.rejections_by_cause.gallery_collision,
        stats.rejections_by_cause.virtual_collision,
        stats.wall_time_secs
    );
    println!("{verification}");
    let status = match (clean, complete) {
        (false, _) => "violations",
        (true, false) => "incomplete",
        (true, true) => "ok",
    };
    run.finish(&a.out, status)?;
    if !clean {
        return Err(Failure::Findings("re-verification found violations".into()));
    }
    if !complete {
        return Err(Failure::Internal(format!(
            "attempt budget of {} exhausted after {} of {} identities; partial set saved",
            cfg.max_total_attempts, stats.accepted, a.n
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct PairOffender {
    a: usize,
    b: usize,
    cos: f64,
}

pub fn verify(a: VerifyArgs) -> CmdResult {
    let mut run = Run::start("verify");
    let v = load_virtual(&a.virtual_set, &mut run)?;
    let g = load_gallery(&a.gallery, &mut run)?;
    let tau = a.tau.unwrap_or(v.config_snapshot.tau);
    run.config = serde_json::json!({ "tau": tau, "max_report": a.max_report });
    let metrics = bip_metrics(&v, &g, tau)?;
    let mut gallery_offenders = revocation_check(&v, &g, tau)?;
    gallery_offenders.truncate(a.max_report);
    let mut pair_offenders = Vec::new();
    if metrics.pair_violations > 0 {
        let m = &v.embeddings;
        'outer: for i in 0..m.count() {
            let rest = &m.as_slice()[(i + 1) * m.dim()..];
            let mut hits = Vec::new();
            kernel::for_each_dot(m.row(i), rest, m.dim(), |j, c| {
                if c >= tau {
                    hits.push(PairOffender { a: i, b: i + 1 + j, cos: c });
                }
            });
            for h in hits {
                if pair_offenders.len() == a.max_report {
                    break 'outer;
                }
                pair_offenders.push(h);
            }
        }
    }
    let prefix = a.out.unwrap_or_else(|| with_suffix(&a.virtual_set, ".verify"));
    run.write_json(
        &with_suffix(&prefix, ".json"),
        &serde_json::json!({ "metrics": metrics, "gallery_offenders": gallery_offenders, "pair_offenders": pair_offenders }),
    )?;
    println!("{metrics}");
    let clean = metrics.gallery_violations == 0 && metrics.pair_violations == 0;
    run.finish(&prefix, if clean { "ok" } else { "violations" })?;
    if clean {
        return Ok(());
    }
    let mut msg = String::from("violations found");
    for f in gallery_offenders.iter().take(10) {
        msg.push_str(&format!("\n  virtual {} ~ gallery {} (cos {:.4})", f.virtual_index, f.gallery_index, f.cos));
    }
    for p in pair_offenders.iter().take(10) {
        msg.push_str(&format!("\n  virtual {} ~ virtual {} (cos {:.4})", p.a, p.b, p.cos));
    }
    Err(Failure::Findings(msg))
}

pub fn stress(a: StressArgs) -> CmdResult {
    let mut run = Run::start("stress-test");
    run.config = serde_json::json!({ "tau": a.tau, "fractions": a.fractions, "ci_level": a.ci_level });
    let v = load_virtual(&a.virtual_set, &mut run)?;
    let held = load_gallery(&a.heldout, &mut run)?;
    let curve = open_world_stress(&v, &held, a.tau, &a.fractions)?;
    let stats = curve
        .lengths
        .iter()
        .zip(&curve.collisions)
        .map(|(&l, &c)| CollisionStats::from_counts(v.len() as u64, l as u64, c, a.tau, a.ci_level))
        .collect::<Result<Vec<_>, _>>()?;
    let csv = with_suffix(&a.out, ".csv");
    curve.write_csv(&csv)?;
    run.output(&csv);
    run.write_json(&with_suffix(&a.out, ".json"), &serde_json::json!({ "curve": curve, "stats": stats }))?;
    println!("{:>8} {:>8} {:>10} {:>12}", "fraction", "L_f", "collisions", "rate");
    for i in 0..curve.fractions.len() {
        println!("{:>8} {:>8} {:>10} {:>12.4e}", curve.fractions[i], curve.lengths[i], curve.collisions[i], curve.rates[i]);
    }
    run.finish(&a.out, "ok")
}

pub fn revoke_check(a: RevokeArgs) -> CmdResult {
    let mut run = Run::start("revoke-check");
    run.config = serde_json::json!({ "tau": a.tau, "tau_safe": a.tau_safe });
    let v = load_virtual(&a.virtual_set, &mut run)?;
    let delta = load_gallery(&a.delta_gallery, &mut run)?;
    let revoke = revocation_check(&v, &delta, a.tau)?;
    let monitor = match a.tau_safe {
        Some(ts) => Some(monitoring_zone_check(&v, &delta, a.tau, ts)?),
        None => None,
    };
    let prefix = a.out.unwrap_or_else(|| with_suffix(&a.virtual_set, ".revoke"));
    run.write_json(
        &with_suffix(&prefix, ".json"),
        &serde_json::json!({ "tau": a.tau, "tau_safe": a.tau_safe, "revoke": revoke, "monitor": monitor }),
    )?;
    println!(
        "{} virtual identities to revoke{}",
        revoke.len(),
        monitor.as_ref().map(|m| format!(", {} pairs in the monitoring zone", m.len())).unwrap_or_default()
    );
    run.finish(&prefix, if revoke.is_empty() { "ok" } else { "violations" })?;
    if revoke.is_empty() {
        Ok(())
    } else {
        let list: Vec<String> = revoke.iter().take(20).map(|f| f.virtual_index.to_string()).collect();
        Err(Failure::Findings(format!("revoke: {}", list.join(", "))))
    }
}

pub fn pairs(a: PairsArgs) -> CmdResult {
    let mut run = Run::start("pairs");
    let protocol: Protocol = a.protocol.parse()?;
    run.config = serde_json::json!({ "protocol": protocol, "tar": a.tar, "threshold": a.threshold });
    run.input(&a.a)?;
    let ea = load_embeddings(&a.a)?;
    let eb = match &a.b {
        Some(p) => {
            run.input(p)?;
            load_embeddings(p)?
        }
        None => ea.clone(),
    };
    run.input(&a.pairs)?;
    let pl = PairList::read_csv(&a.pairs)?;
    let mode = match (a.threshold, a.tar) {
        (Some(t), _) => ThresholdMode::Fixed(t),
        (None, Some(tar)) => ThresholdMode::Folded { target_tar: tar },
        (None, None) => ThresholdMode::Folded { target_tar: 0.95 },
    };
    let report = evaluate_pairs(&ea, &eb, &pl, mode, protocol)?;
    run.write_json(&with_suffix(&a.out, ".json"), &report)?;
    let pct = |x: Option<f64>| x.map(|v| format!("{:.2}%", 100.0 * v)).unwrap_or_else(|| "n/a".into());
    println!(
        "{:?}: {} pairs, accuracy {}, FAR {}, threshold {:.4}",
        protocol,
        report.n_pairs,
        pct(report.accuracy),
        pct(report.far),
        report.threshold_used
    );
    run.finish(&a.out, "ok")
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let mut run = Run::start("synth");
    let mut cfg = match &a.config {
        Some(p) => {
            run.input(p)?;
            serde_json::from_slice::<SynthGalleryConfig>(&fs::read(p)?)?
        }
        None => SynthGalleryConfig::default(),
    };
    if let Some(x) = a.dim {
        cfg.dim = x;
    }
    if let Some(x) = a.n_clusters {
        cfg.n_clusters = x;
    }
    if let Some(x) = a.per_cluster {
        cfg.per_cluster = x;
    }
    if let Some(x) = a.concentration {
        cfg.concentration = x;
    }
    if let Some(x) = a.seed {
        cfg.seed = x;
    }
    run.config = serde_json::to_value(&cfg)?;
    run.seed = Some(cfg.seed);
    let g = sample_vmf_mixture(&cfg)?;
    let path: PathBuf = with_suffix(&a.out, ".bipe");
    g.save(&path)?;
    run.output(&path);
    run.output(&bip_core::store::sidecar_path(&path));
    println!("wrote {} rows of dim {} to {}", g.len(), g.dim(), path.display());
    run.finish(&a.out, "ok")
}
