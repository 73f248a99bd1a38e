//! Runtime self-tests behind `hce check`.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, LN_2, PI};

use hce_core::cones::{exterior_angle, half_aperture, ConeConfig};
use hce_core::eval::{ap_from_flags, average_precision, Ranking};
use hce_core::losses::{contrastive_loss, LossConfig};
use hce_core::manifold::{exp_map_origin, geodesic_distance, lift_spatial, Curvature, LorentzPoint, TangentAtOrigin};
use hce_core::model::{init_params, FontRecord, ModelDims, TagSet};
use hce_core::training::{batch_loss, loss_and_gradients, SubsetPolicy, TrainingBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Outcome {
    pub name: &'static str,
    pub result: Result<String, String>,
}

type Suite = fn() -> Result<String, String>;

pub fn run_all() -> Vec<Outcome> {
    let suites: [(&'static str, Suite); 5] = [
        ("manifold", manifold),
        ("cones", cones),
        ("losses", losses),
        ("gradients", gradients),
        ("metrics", metrics),
    ];
    suites
        .into_iter()
        .map(|(name, f)| Outcome { name, result: f() })
        .collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn core(e: hce_core::Error) -> String {
    e.to_string()
}

fn random_tangent(rng: &mut ChaCha8Rng, dim: usize, max_norm: f64) -> TangentAtOrigin {
    let dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let r = rng.random_range(0.0..max_norm);
    TangentAtOrigin::new(dir.iter().map(|x| x * r / n).collect()).expect("finite tangent")
}

fn manifold() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_closure: f64 = 0.0;
    let mut worst_iso: f64 = 0.0;
    for c in [1.0, 4.0] {
        let c = Curvature::new(c).map_err(core)?;
        let o = LorentzPoint::origin(5, c);
        for _ in 0..10_000 {
            let v = random_tangent(&mut rng, 5, 10.0);
            let x = exp_map_origin(&v, c).map_err(core)?;
            // rounding in x_t^2 scales with its magnitude
            let scale = 1.0 + c.get() * x.time() * x.time();
            worst_closure = worst_closure.max(x.residual(c) / scale);
            let d = geodesic_distance(&o, &x, c).map_err(core)?;
            worst_iso = worst_iso.max((d - v.norm()).abs());
        }
        for _ in 0..1000 {
            let p: Vec<LorentzPoint> = (0..3)
                .map(|_| exp_map_origin(&random_tangent(&mut rng, 5, 3.0), c))
                .collect::<Result<_, _>>()
                .map_err(core)?;
            let d = |a: usize, b: usize| geodesic_distance(&p[a], &p[b], c);
            let (ab, bc, ac) = (d(0, 1).map_err(core)?, d(1, 2).map_err(core)?, d(0, 2).map_err(core)?);
            ensure(ac <= ab + bc + 1e-9, || {
                format!("triangle inequality: {ac} > {ab} + {bc}")
            })?;
        }
    }
    ensure(worst_closure <= 1e-12, || {
        format!("relative closure residual {worst_closure:.3e}")
    })?;
    ensure(worst_iso <= 1e-9, || format!("radial isometry error {worst_iso:.3e}"))?;
    Ok(format!(
        "closure {worst_closure:.1e} (relative), isometry {worst_iso:.1e}"
    ))
}

fn cones() -> Result<String, String> {
    let c = Curvature::default();
    let cfg = ConeConfig::default();
    let at = |s: Vec<f64>| lift_spatial(s, c).map_err(core);
    let a = half_aperture(&at(vec![4.0 * cfg.k, 0.0])?, &cfg).map_err(core)?;
    ensure((a - PI / 6.0).abs() <= 1e-9, || format!("aperture {a}, expected pi/6"))?;
    let a = half_aperture(&at(vec![cfg.k, 0.0])?, &cfg).map_err(core)?;
    ensure(a == FRAC_PI_2, || format!("clamped aperture {a}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let o = LorentzPoint::origin(3, c);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 1000 {
        let x = exp_map_origin(&random_tangent(&mut rng, 3, 3.0), c).map_err(core)?;
        let y = exp_map_origin(&random_tangent(&mut rng, 3, 3.0), c).map_err(core)?;
        let (a, b, e) = (
            geodesic_distance(&o, &x, c).map_err(core)?,
            geodesic_distance(&x, &y, c).map_err(core)?,
            geodesic_distance(&o, &y, c).map_err(core)?,
        );
        if a < 0.1 || b < 0.1 {
            continue;
        }
        let cos_oxy = (a.cosh() * b.cosh() - e.cosh()) / (a.sinh() * b.sinh());
        let oracle = PI - cos_oxy.clamp(-1.0, 1.0).acos();
        let got = exterior_angle(&x, &y, &cfg).map_err(core)?;
        worst = worst.max((got - oracle).abs());
        n += 1;
    }
    ensure(worst <= 1e-6, || {
        format!("exterior angle vs law of cosines {worst:.3e}")
    })?;
    Ok(format!("apertures exact, exterior angle {worst:.1e}"))
}

fn losses() -> Result<String, String> {
    let c = Curvature::default();
    let pt = |s: Vec<f64>| lift_spatial(s, c).map_err(core);
    let single = contrastive_loss(&[pt(vec![0.3, -0.1])?], &[pt(vec![-1.0, 2.0])?], 0.07, c).map_err(core)?;
    ensure(single == 0.0, || format!("batch of one gives {single}"))?;
    let o = LorentzPoint::origin(2, c);
    let two = contrastive_loss(&[o.clone(), o], &[pt(vec![0.5, 0.0])?, pt(vec![0.0, 0.5])?], 0.1, c).map_err(core)?;
    ensure((two - 2.0 * LN_2).abs() <= 1e-9, || format!("uniform pair gives {two}"))?;
    Ok("batch-of-one and uniform-distance cases exact".into())
}

fn gradients() -> Result<String, String> {
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..3u64 {
        let dims = ModelDims::new(5, 6, 3, 4);
        let params = init_params(dims, Curvature::default(), 0.1, seed).map_err(core)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let records: Vec<FontRecord> = (0..3)
            .map(|i| {
                Ok(FontRecord {
                    font_id: format!("f{i}"),
                    features: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    tags: TagSet::new(vec![i, (i + 1 + seed as u32 % 3) % 5, 4])?,
                })
            })
            .collect::<Result<_, hce_core::Error>>()
            .map_err(core)?;
        let batch = TrainingBatch::sample(&records, SubsetPolicy::UniformProper, &mut rng).map_err(core)?;
        let cfg = LossConfig::default();
        let (_, grads) = loss_and_gradients(&params, &batch, &cfg).map_err(core)?;
        for (bi, block) in grads.blocks.iter().enumerate() {
            for (j, &g) in block.iter().enumerate() {
                if g.abs() <= 1e-8 {
                    continue;
                }
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p.blocks_mut()[bi][j] += delta;
                    batch_loss(&p, &batch, &cfg).map(|l| l.total)
                };
                let fd = (eval(h).map_err(core)? - eval(-h).map_err(core)?) / (2.0 * h);
                worst = worst.max((fd - g).abs() / g.abs().max(fd.abs()));
                checked += 1;
            }
        }
    }
    ensure(worst <= 1e-4, || format!("worst relative error {worst:.3e}"))?;
    Ok(format!("{checked} coordinates, worst relative error {worst:.1e}"))
}

fn metrics() -> Result<String, String> {
    let c = Curvature::default();
    let mut patterns = 0;
    for n in 1..=8usize {
        for mask in 0u32..(1 << n) {
            let flags: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            // pairwise form: each relevant hit at rank j earns one credit per relevant hit at or above it
            let r = flags.iter().filter(|&&f| f).count();
            let oracle = (r > 0).then(|| {
                let mut s = 0.0;
                for j in 0..n {
                    for i in 0..=j {
                        if flags[i] && flags[j] {
                            s += 1.0 / (j + 1) as f64;
                        }
                    }
                }
                s / r as f64
            });
            let got = ap_from_flags(&flags);
            let same = match (got, oracle) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
                (None, None) => true,
                _ => false,
            };
            ensure(same, || format!("AP for {flags:?}: {got:?} vs {oracle:?}"))?;
            patterns += 1;
        }
    }
    let q = LorentzPoint::origin(2, c);
    let cands: Vec<(usize, LorentzPoint)> = (0..4)
        .map(|i| Ok((i, lift_spatial(vec![0.1 + i as f64, 0.0], c)?)))
        .collect::<Result<_, hce_core::Error>>()
        .map_err(core)?;
    let ranking = Ranking::by_distance(0, &q, &cands, c);
    let ap = average_precision(&ranking, &BTreeSet::from([0, 2])).map_err(core)?;
    ensure((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() <= 1e-12, || {
        format!("ranked AP {ap}")
    })?;
    Ok(format!(
        "AP matches the pairwise oracle on {patterns} relevance patterns"
    ))
}
